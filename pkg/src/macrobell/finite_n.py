"""Exact finite-size statistics of collective coarse-grained measurements.

A product measurement ``{E_a}^(x)N`` applied to a superposition of
symmetric (Dicke) states produces an intensity ``I = sum_i a_i`` whose
rescaled version ``X = (I - N mu) / (tau N^alpha)`` is the object of
interest.  Everything here is exact at finite N:

* matrix elements ``<N,k| M^(x)N |N,l>`` of arbitrary one-body tensor
  powers between Dicke states, evaluated stably in log space so that
  N up to 10^4 works,
* the characteristic function of X,
* the full probability mass function of X on its outcome lattice,
  recovered by a discrete Fourier inversion of the characteristic
  function evaluated at the conjugate lattice frequencies,
* moments, and
* an independent brute-force path (explicit 2^N state vectors) used as
  an oracle for small N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .errors import (
    CapExceededError,
    NegativeDensityError,
    NumericError,
    OffLatticeError,
    ValidationError,
)
from .povm import DerivedParams, SingleParticlePovm

__all__ = [
    "DickeSuperposition",
    "LatticePmf",
    "Moments",
    "dicke_matrix_element",
    "char_fn_finite",
    "pmf_finite",
    "moments_finite",
    "brute_force_pmf",
    "brute_force_char_fn",
    "total_variation",
    "DEFAULT_LATTICE_CAP",
    "BRUTE_FORCE_MAX_N",
]

#: default bound on N * (lattice steps per particle), i.e. on the FFT size
DEFAULT_LATTICE_CAP = 1 << 22

#: hard bound for the exponential-cost oracle
BRUTE_FORCE_MAX_N = 14

_NORM_ATOL = 1e-12


@dataclass(frozen=True)
class DickeSuperposition:
    """Superposition ``sum_j coeffs[j] |N, base_level + j>`` of Dicke levels.

    ``base_level = 0`` is the natural choice for square-root coarse
    graining; linear coarse graining uses states centered on the
    half-filled ladder (even N with ``base_level = N // 2``).
    """

    n_particles: int
    coeffs: np.ndarray
    base_level: int = 0

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValidationError("need at least one particle")
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim != 1 or c.size < 1:
            raise ValidationError("coeffs must be a nonempty 1-d array")
        if self.base_level < 0:
            raise ValidationError("base_level must be nonnegative")
        if self.base_level + c.size - 1 > self.n_particles:
            raise ValidationError(
                f"highest level {self.base_level + c.size - 1} exceeds "
                f"N = {self.n_particles}"
            )
        norm = float(np.linalg.norm(c))
        if abs(norm - 1.0) > _NORM_ATOL:
            raise ValidationError(f"coefficients have norm {norm!r}, expected 1")
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @property
    def levels(self) -> np.ndarray:
        return self.base_level + np.arange(self.coeffs.size)

    @classmethod
    def from_coeffs(cls, n_particles, coeffs, base_level=0) -> "DickeSuperposition":
        c = np.asarray(coeffs, dtype=complex)
        norm = np.linalg.norm(c)
        if norm == 0:
            raise ValidationError("coefficients are all zero")
        return cls(n_particles, c / norm, base_level)

    @classmethod
    def dicke(cls, n_particles, k) -> "DickeSuperposition":
        """The single Dicke state |N, k>."""
        return cls(n_particles, np.array([1.0 + 0.0j]), base_level=int(k))

    @classmethod
    def w_state(cls, n_particles) -> "DickeSuperposition":
        """Single shared excitation, |N, 1>."""
        return cls.dicke(n_particles, 1)


@dataclass(frozen=True)
class LatticePmf:
    """PMF of X on the strictly increasing lattice ``values``."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if v.shape != p.shape or v.ndim != 1:
            raise ValidationError("values and probs must be matching 1-d arrays")
        if v.size > 1 and not np.all(np.diff(v) > 0):
            raise ValidationError("values must be strictly increasing")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)

    def mean(self) -> float:
        return float(np.dot(self.probs, self.values))

    def variance(self) -> float:
        m = self.mean()
        return float(np.dot(self.probs, (self.values - m) ** 2))

    def cdf(self, x) -> np.ndarray:
        """Right-continuous step CDF evaluated at x."""
        cumulative = np.cumsum(self.probs)
        idx = np.searchsorted(self.values, np.asarray(x, dtype=float), side="right")
        padded = np.concatenate([[0.0], cumulative])
        return padded[idx]


@dataclass(frozen=True)
class Moments:
    """Raw and central moments, index = order (element 0 is the total mass)."""

    raw: np.ndarray
    central: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.raw[1])

    @property
    def variance(self) -> float:
        return float(self.central[2])


def _log_binom(n, k):
    return gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)


def _pow_log(base: np.ndarray, power: int) -> np.ndarray:
    """power * log(base) elementwise, with 0^0 = 1 handled (-> 0 contribution)."""
    if power == 0:
        return np.zeros(base.shape, dtype=complex)
    zero = base == 0
    if not np.any(zero):
        return power * np.log(base)
    safe = np.where(zero, 1.0, base)
    out = power * np.log(safe)
    out = np.where(zero, -np.inf + 0.0j, out)
    return out


def _dicke_elements_vec(m00, m01, m10, m11, n_particles, k, l):
    """<N,k| M^(x)N |N,l> for matrix entries given as equal-shape arrays.

    Implements the combinatorial sum over how many of the l (k) raised
    sites of the ket (bra) coincide, with binomials in log space.
    """
    n = int(n_particles)
    k = int(k)
    l = int(l)
    if not (0 <= k <= n and 0 <= l <= n):
        raise ValidationError(f"need 0 <= k,l <= N, got k={k}, l={l}, N={n}")
    m00 = np.asarray(m00, dtype=complex)
    hi, lo = (k, l) if k >= l else (l, k)
    # bra has `hi` raised sites when k >= l; otherwise swap roles, which
    # exchanges the two off-diagonal entries
    up, down = (m10, m01) if k >= l else (m01, m10)
    up = np.asarray(up, dtype=complex)
    down = np.asarray(down, dtype=complex)
    m11 = np.asarray(m11, dtype=complex)

    prefactor = 0.5 * (_log_binom(n, hi) - _log_binom(n, lo))
    q_min = max(0, hi + lo - n)
    total = np.zeros(m00.shape, dtype=complex)
    for q in range(q_min, lo + 1):
        log_weight = (
            prefactor
            + _log_binom(hi, q)
            + _log_binom(n - hi, lo - q)
        )
        exponent = (
            log_weight
            + _pow_log(m11, q)
            + _pow_log(up, hi - q)
            + _pow_log(down, lo - q)
            + _pow_log(m00, n - hi - lo + q)
        )
        total = total + np.exp(exponent)
    return total


def dicke_matrix_element(matrix, n_particles, k, l) -> complex:
    """Exact ``<N,k| M^(x)N |N,l>`` for a single 2x2 matrix M."""
    m = np.asarray(matrix, dtype=complex)
    if m.shape != (2, 2):
        raise ValidationError(f"matrix must be 2x2, got {m.shape}")
    result = _dicke_elements_vec(
        np.array([m[0, 0]]),
        np.array([m[0, 1]]),
        np.array([m[1, 0]]),
        np.array([m[1, 1]]),
        n_particles,
        k,
        l,
    )
    return complex(result[0])


def _superposition_expectation(state, m00, m01, m10, m11):
    """sum_{k,l} conj(c_k) c_l <N,k|M^(x)N|N,l> with entries as node arrays."""
    c = state.coeffs
    levels = state.levels
    total = np.zeros(np.asarray(m00).shape, dtype=complex)
    for i, k in enumerate(levels):
        if c[i] == 0:
            continue
        for j, l in enumerate(levels):
            if c[j] == 0:
                continue
            weight = np.conj(c[i]) * c[j]
            total = total + weight * _dicke_elements_vec(
                m00, m01, m10, m11, state.n_particles, k, l
            )
    return total


def _check_alpha(alpha) -> float:
    a = float(alpha)
    if a not in (0.5, 1.0):
        raise ValidationError(f"alpha must be 0.5 or 1.0, got {alpha!r}")
    return a


def _povm_entry_arrays(povm: SingleParticlePovm, phases: np.ndarray):
    """Entries of sum_a E_a * phases[..., a] as four arrays."""
    e = np.stack(povm.effects)  # (n_out, 2, 2)
    m = np.tensordot(phases, e, axes=([-1], [0]))
    return m[..., 0, 0], m[..., 0, 1], m[..., 1, 0], m[..., 1, 1]


def char_fn_finite(state, povm, params, alpha, t):
    """Characteristic function E[exp(i t X)] of the rescaled intensity.

    Parameters
    ----------
    state : DickeSuperposition
    povm : SingleParticlePovm
    params : DerivedParams
        Supplies the centering ``mu`` and scale ``tau``.
    alpha : float
        Coarse-graining exponent, 0.5 or 1.0.
    t : float or array

    Returns
    -------
    complex or complex ndarray, matching the shape of ``t``.
    """
    a = _check_alpha(alpha)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    scale = params.tau * state.n_particles ** a
    shifted = np.asarray(povm.outcomes, dtype=float) - params.mu
    phases = np.exp(1j * np.outer(t_arr, shifted) / scale)
    entries = _povm_entry_arrays(povm, phases)
    values = _superposition_expectation(state, *entries)
    values = np.where(t_arr == 0.0, 1.0 + 0.0j, values)
    if np.isscalar(t) or np.asarray(t).ndim == 0:
        return complex(values[0])
    return values


def _lattice_structure(outcomes, atol_rel=1e-9):
    """Base point, step, and integer index of each outcome on its lattice."""
    a = np.asarray(outcomes, dtype=float)
    a_min = float(a.min())
    diffs = np.sort(a - a_min)
    scale = float(np.max(np.abs(a))) or 1.0
    tol = atol_rel * max(scale, 1.0)

    step = 0.0
    for d in diffs:
        if d <= tol:
            continue
        g, b = (step, float(d)) if step else (float(d), 0.0)
        while b > tol:
            g, b = b, math.fmod(g, b)
        step = g
    if step <= tol:
        raise OffLatticeError("could not find a positive lattice step")
    idx = np.round((a - a_min) / step)
    if np.max(np.abs((a - a_min) - idx * step)) > tol:
        raise OffLatticeError(
            f"outcomes deviate from the lattice with step {step!r}"
        )
    return a_min, step, idx.astype(np.int64)


def pmf_finite(state, povm, params, alpha, lattice_cap=DEFAULT_LATTICE_CAP):
    """Exact PMF of X by discrete Fourier inversion on the outcome lattice.

    The intensity of N particles with outcomes on ``a_min + j*step``
    lives on ``N*a_min + m*step`` with ``m`` in 0..N*J; evaluating the
    lattice characteristic function at the L = N*J+1 conjugate
    frequencies and applying an inverse DFT recovers every lattice
    probability exactly (up to roundoff).

    Raises
    ------
    OffLatticeError
        If the outcomes are not commensurate.
    CapExceededError
        If ``N * J`` exceeds ``lattice_cap``.
    NegativeDensityError
        If inversion produces negativity beyond roundoff (1e-12).
    """
    a = _check_alpha(alpha)
    n = state.n_particles
    a_min, step, idx = _lattice_structure(povm.outcomes)
    j_max = int(idx.max())
    size = n * j_max + 1
    if size - 1 > lattice_cap:
        raise CapExceededError(
            f"lattice size N*J = {size - 1} exceeds cap {lattice_cap}"
        )

    theta = 2.0 * np.pi * np.arange(size) / size
    phases = np.exp(1j * np.outer(theta, idx))
    entries = _povm_entry_arrays(povm, phases)
    char_values = _superposition_expectation(state, *entries)

    probs = np.fft.fft(char_values) / size
    imag_residue = float(np.max(np.abs(probs.imag)))
    if imag_residue > 1e-10:
        raise NumericError(
            f"inversion left imaginary residue {imag_residue:.3e}"
        )
    p = probs.real
    worst = float(p.min())
    if worst < -1e-12:
        raise NegativeDensityError(
            f"inversion produced probability {worst:.3e} < -1e-12"
        )
    p = np.clip(p, 0.0, None)
    p = p / p.sum()

    scale = params.tau * float(n) ** a
    m = np.arange(size, dtype=float)
    values = (n * a_min + m * step - n * params.mu) / scale
    return LatticePmf(values=values, probs=p)


def moments_finite(state, povm, params, alpha, order=4) -> Moments:
    """Raw and central moments of X up to ``order`` from the exact PMF."""
    if not 1 <= order <= 8:
        raise ValidationError("order must be between 1 and 8")
    pmf = pmf_finite(state, povm, params, alpha)
    raw = np.array([np.dot(pmf.probs, pmf.values**j) for j in range(order + 1)])
    mean = raw[1]
    central = np.array(
        [np.dot(pmf.probs, (pmf.values - mean) ** j) for j in range(order + 1)]
    )
    return Moments(raw=raw, central=central)


# --------------------------------------------------------------------------
# Brute-force oracle: explicit 2^N vectors, no shared code with the
# closed-form path above.
# --------------------------------------------------------------------------

def _full_state_vector(state: DickeSuperposition) -> np.ndarray:
    n = state.n_particles
    dim = 1 << n
    popcount = np.zeros(dim, dtype=np.int64)
    for bit in range(n):
        popcount += (np.arange(dim) >> bit) & 1
    psi = np.zeros(dim, dtype=complex)
    for coeff, level in zip(state.coeffs, state.levels):
        mask = popcount == level
        count = int(mask.sum())
        psi[mask] += coeff / math.sqrt(count)
    return psi


def _effect_sqrt(effect: np.ndarray) -> np.ndarray:
    eigvals, eigvecs = np.linalg.eigh(effect)
    eigvals = np.clip(eigvals, 0.0, None)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.conj().T


def _apply_single_qubit(op, qubit, n, vec):
    v = vec.reshape(1 << qubit, 2, -1)
    return np.einsum("ab,ibj->iaj", op, v).reshape(-1)


def brute_force_pmf(state, povm, params, alpha) -> LatticePmf:
    """PMF of X by explicit enumeration of all outcome strings (N <= 14)."""
    a = _check_alpha(alpha)
    n = state.n_particles
    if n > BRUTE_FORCE_MAX_N:
        raise CapExceededError(
            f"brute force supports N <= {BRUTE_FORCE_MAX_N}, got {n}"
        )
    psi = _full_state_vector(state)
    sqrts = [_effect_sqrt(e) for e in povm.effects]
    outcomes = povm.outcomes
    buckets: dict[float, float] = {}

    def recurse(qubit, vec, intensity):
        if qubit == n:
            weight = float(np.vdot(vec, vec).real)
            key = round(intensity, 10)
            buckets[key] = buckets.get(key, 0.0) + weight
            return
        for outcome, root in zip(outcomes, sqrts):
            branch = _apply_single_qubit(root, qubit, n, vec)
            recurse(qubit + 1, branch, intensity + outcome)

    recurse(0, psi, 0.0)
    intensities = np.array(sorted(buckets))
    probs = np.array([buckets[key] for key in intensities])
    probs = probs / probs.sum()
    scale = params.tau * float(n) ** a
    values = (intensities - n * params.mu) / scale
    return LatticePmf(values=values, probs=probs)


def brute_force_char_fn(state, povm, params, alpha, t):
    """E[exp(i t X)] from the brute-force PMF (N <= 14)."""
    pmf = brute_force_pmf(state, povm, params, alpha)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    values = np.exp(1j * np.outer(t_arr, pmf.values)) @ pmf.probs
    if np.isscalar(t) or np.asarray(t).ndim == 0:
        return complex(values[0])
    return values


def total_variation(pmf_a: LatticePmf, pmf_b: LatticePmf, match_atol=1e-9) -> float:
    """TV distance between two lattice PMFs, matching support points.

    Points of one support within ``match_atol`` of a point of the other
    are identified; unmatched points contribute their full mass.
    """
    merged: dict[float, float] = {}
    keys: list[float] = []

    def slot(x):
        for key in keys:
            if abs(key - x) <= match_atol:
                return key
        keys.append(x)
        return x

    for v, p in zip(pmf_a.values, pmf_a.probs):
        merged[slot(v)] = merged.get(slot(v), 0.0) + p
    for v, p in zip(pmf_b.values, pmf_b.probs):
        merged[slot(v)] = merged.get(slot(v), 0.0) - p
    return 0.5 * sum(abs(delta) for delta in merged.values())
