"""Bipartite sign-binned correlations and the CHSH combination.

A Schmidt-diagonal pair state sum_k c_k |k>|k>, read out party-wise through
the coarse-grained collective variable and binned by sign, has correlators
that reduce to a bilinear form in a fixed table of sign-weighted level
overlaps.  This module builds that table, evaluates and maximizes the CHSH
combination over the four analyzer angles, constructs the joint (x, y)
density at square-root coarse graining, and cross-checks the full
coarse-graining branch against its explicit hidden-variable construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy.integrate import simpson
from scipy.optimize import minimize_scalar

from .errors import CapExceededError, GridTooNarrowError, NegativeDensityError, ValidationError
from .limits import (
    BOUNDARY_MASS_TOL,
    GridDensity,
    default_real_grid,
    oscillator_wavefunction,
    smeared_level_kernel,
)

_NORM_ATOL = 1e-12

#: Largest Schmidt rank accepted by the bipartite routines.
MAX_SCHMIDT_RANK = 16

#: Gauss-Legendre node count for the half-line overlap quadrature.
SIGN_TABLE_NODES = 600

#: Number of coarse-search points per angle (step pi/36).
COARSE_GRID_POINTS = 72

#: Convergence tolerance (in CHSH value) of the local refinement.
REFINE_VALUE_TOL = 1e-10

#: Correlator pairs, in the order they enter the CHSH combination.
PAIR_NAMES = ("AB", "AB'", "A'B", "A'B'")

_PAIR_FLAGS = {
    "AB": (False, False),
    "AB'": (False, True),
    "A'B": (True, False),
    "A'B'": (True, True),
}


def _check_unit_vector(coeffs) -> np.ndarray:
    c = np.asarray(coeffs, dtype=complex)
    if c.ndim != 1 or c.size < 1:
        raise ValidationError("coefficients must form a nonempty 1-d array")
    if not np.all(np.isfinite(c.view(float))):
        raise ValidationError("coefficients must be finite")
    norm = float(np.linalg.norm(c))
    if abs(norm - 1.0) > _NORM_ATOL:
        raise ValidationError(f"coefficients have norm {norm!r}, expected 1")
    if c.size > MAX_SCHMIDT_RANK:
        raise CapExceededError(
            f"Schmidt rank {c.size} exceeds the supported maximum {MAX_SCHMIDT_RANK}"
        )
    return c


@dataclass(frozen=True)
class SignOverlapTable:
    """Level overlaps against the sign function.

    ``values[k, l]`` holds the integral of sign(x) times the product of the
    k-th and l-th level profiles.  Entries with k + l even vanish by parity
    and are set to exactly zero; the odd entries come from half-line
    Gauss-Legendre quadrature.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)

    @property
    def k_max(self) -> int:
        return self.values.shape[0] - 1


@lru_cache(maxsize=32)
def _sign_overlap_values(k_max: int, nodes: int) -> np.ndarray:
    # sign(x) * psi_k(x) * psi_l(x) is even iff k + l is odd, so the table is
    # 2 * integral over the positive half line there and exactly 0 elsewhere.
    half_width = 12.0 + 2.0 * k_max
    t, w = np.polynomial.legendre.leggauss(nodes)
    x = 0.5 * half_width * (t + 1.0)
    w = 0.5 * half_width * w
    rows = np.stack([oscillator_wavefunction(k, x) for k in range(k_max + 1)])
    table = 2.0 * (rows * w) @ rows.T
    k = np.arange(k_max + 1)
    table[(k[:, None] + k[None, :]) % 2 == 0] = 0.0
    table.flags.writeable = False
    return table


def sign_overlap_table(k_max: int, nodes: int = SIGN_TABLE_NODES) -> SignOverlapTable:
    """Build the sign-weighted overlap table up to level ``k_max``.

    The result is cached per (k_max, nodes); ``nodes`` controls the
    Gauss-Legendre resolution and exists mainly so convergence can be
    checked by doubling it.
    """
    if k_max < 0:
        raise ValidationError("k_max must be nonnegative")
    return SignOverlapTable(_sign_overlap_values(int(k_max), int(nodes)))


@dataclass(frozen=True)
class BellConfig:
    """Schmidt coefficients plus the four analyzer angles and two widths.

    ``phi_a``/``phi_a_prime`` are the two settings on the first party,
    ``phi_b``/``phi_b_prime`` on the second; ``width_a``/``width_b`` are the
    per-party Gaussian smearing widths (0 for projective binning).
    """

    schmidt_coeffs: np.ndarray
    phi_a: float = 0.0
    phi_a_prime: float = 0.0
    phi_b: float = 0.0
    phi_b_prime: float = 0.0
    width_a: float = 0.0
    width_b: float = 0.0

    def __post_init__(self):
        c = _check_unit_vector(self.schmidt_coeffs)
        for name in ("phi_a", "phi_a_prime", "phi_b", "phi_b_prime"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")
        if self.width_a < 0 or self.width_b < 0:
            raise ValidationError("widths must be nonnegative")
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "schmidt_coeffs", c)

    @property
    def k_max(self) -> int:
        return self.schmidt_coeffs.size - 1

    def angles_for(self, which_pair: str) -> tuple[float, float]:
        try:
            use_ap, use_bp = _PAIR_FLAGS[which_pair]
        except KeyError:
            raise ValidationError(
                f"unknown correlator pair {which_pair!r}; expected one of {PAIR_NAMES}"
            ) from None
        phi_1 = self.phi_a_prime if use_ap else self.phi_a
        phi_2 = self.phi_b_prime if use_bp else self.phi_b
        return phi_1, phi_2


def _pair_correlation(coeffs: np.ndarray, squared_table: np.ndarray, phase_sum) -> np.ndarray:
    """Correlator as a function of the angle sum (vectorized over the sum)."""
    d = coeffs.size
    cross = np.outer(np.conj(coeffs), coeffs) * squared_table[:d, :d]
    offsets = (np.arange(d)[None, :] - np.arange(d)[:, None]).ravel()
    phase_sum = np.asarray(phase_sum, dtype=float)
    phases = np.exp(1j * phase_sum[..., None] * offsets)
    return np.real(phases @ cross.ravel())


def correlator(config: BellConfig, which_pair: str = "AB",
               table: SignOverlapTable | None = None) -> float:
    """Sign-binned correlator for one pair of analyzer settings.

    Only depends on the angles through their sum.  Requires projective
    binning (both widths zero); smeared readout is handled by the noise
    routines.  ``table`` overrides the level-overlap table, which is meant
    for sanity harnesses (e.g. a deterministic diagonal table).
    """
    if config.width_a != 0.0 or config.width_b != 0.0:
        raise ValidationError("correlator requires projective binning (widths 0)")
    if table is None:
        table = sign_overlap_table(config.k_max)
    phi_1, phi_2 = config.angles_for(which_pair)
    value = _pair_correlation(config.schmidt_coeffs, table.values**2, phi_1 + phi_2)
    return float(value)


def chsh_value(config: BellConfig, table: SignOverlapTable | None = None) -> float:
    """CHSH combination <AB> + <AB'> + <A'B> - <A'B'>."""
    signs = {"AB": 1.0, "AB'": 1.0, "A'B": 1.0, "A'B'": -1.0}
    return sum(signs[p] * correlator(config, p, table=table) for p in PAIR_NAMES)


class OptimizeResult(NamedTuple):
    angles: tuple[float, float, float, float]
    value: float


def _chsh_from_pair_function(g, angles) -> float:
    a, ap, b, bp = angles
    return g(a + b) + g(a + bp) + g(ap + b) - g(ap + bp)


def optimize_chsh(schmidt_coeffs) -> OptimizeResult:
    """Maximize the CHSH value over the four analyzer angles.

    Deterministic: a coarse scan on the pi/36 grid (exploiting that each
    correlator depends only on an angle sum, so the 4-d scan reduces to
    separable 1-d maximizations) picks the lexicographically smallest grid
    maximizer, which coordinate descent then refines until the value moves
    by less than ``REFINE_VALUE_TOL``.
    """
    coeffs = _check_unit_vector(schmidt_coeffs)
    table = sign_overlap_table(coeffs.size - 1)
    squared = table.values**2

    n = COARSE_GRID_POINTS
    step = 2.0 * np.pi / n
    grid_values = _pair_correlation(coeffs, squared, step * np.arange(n))

    # shifted[j, i] = g(theta_j + theta_i) on the periodic grid
    shifted = grid_values[(np.arange(n)[:, None] + np.arange(n)[None, :]) % n]

    best = (-np.inf, 0, 0, 0, 0)
    for ia in range(n):
        plus = shifted[ia][None, :] + shifted     # [iap, ib]
        minus = shifted[ia][None, :] - shifted    # [iap, ibp]
        ib_best = plus.argmax(axis=1)
        ibp_best = minus.argmax(axis=1)
        totals = plus[np.arange(n), ib_best] + minus[np.arange(n), ibp_best]
        iap = int(totals.argmax())
        if totals[iap] > best[0]:
            best = (float(totals[iap]), ia, iap, int(ib_best[iap]), int(ibp_best[iap]))

    angles = np.array(best[1:], dtype=float) * step
    value = best[0]

    def g(phase_sum):
        return float(_pair_correlation(coeffs, squared, phase_sum))

    for _ in range(200):
        previous = value
        for axis in range(4):
            lo, hi = angles[axis] - step, angles[axis] + step

            def negated(t, axis=axis):
                trial = angles.copy()
                trial[axis] = t
                return -_chsh_from_pair_function(g, trial)

            res = minimize_scalar(negated, bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-12})
            if -res.fun > value:
                angles[axis] = float(res.x)
                value = -res.fun
        if value - previous < REFINE_VALUE_TOL:
            break

    return OptimizeResult(angles=tuple(float(a) for a in angles), value=float(value))


@dataclass(frozen=True)
class JointGridDensity:
    """Joint probability density sampled on a rectangular grid.

    ``domain`` is "plane" for the (x, y) readout densities and "rotor" for
    joints over a pair of angles in [0, pi].
    """

    x_grid: np.ndarray
    y_grid: np.ndarray
    density: np.ndarray
    domain: str = "plane"

    def __post_init__(self):
        gx = np.asarray(self.x_grid, dtype=float)
        gy = np.asarray(self.y_grid, dtype=float)
        d = np.asarray(self.density, dtype=float)
        if gx.ndim != 1 or gy.ndim != 1 or gx.size < 2 or gy.size < 2:
            raise ValidationError("grids must be 1-d arrays with at least 2 points")
        if d.shape != (gx.size, gy.size):
            raise ValidationError("density shape must be (len(x_grid), len(y_grid))")
        if not (np.all(np.diff(gx) > 0) and np.all(np.diff(gy) > 0)):
            raise ValidationError("grids must be strictly increasing")
        if not np.all(np.isfinite(d)):
            raise ValidationError("density must be finite")
        object.__setattr__(self, "x_grid", gx)
        object.__setattr__(self, "y_grid", gy)
        object.__setattr__(self, "density", d)

    def _integrate_axis(self, values: np.ndarray, grid: np.ndarray, axis: int) -> np.ndarray:
        if self.domain == "rotor":
            return simpson(values, x=grid, axis=axis)
        return np.trapezoid(values, grid, axis=axis)

    def integral(self) -> float:
        inner = self._integrate_axis(self.density, self.y_grid, 1)
        return float(self._integrate_axis(inner, self.x_grid, 0))

    def marginal_x(self) -> GridDensity:
        domain = "rotor_half_circle" if self.domain == "rotor" else "real_line"
        return GridDensity(self.x_grid, self._integrate_axis(self.density, self.y_grid, 1),
                           domain=domain)

    def marginal_y(self) -> GridDensity:
        domain = "rotor_half_circle" if self.domain == "rotor" else "real_line"
        return GridDensity(self.y_grid, self._integrate_axis(self.density, self.x_grid, 0),
                           domain=domain)

    def sign_correlator(self) -> float:
        """Expectation of sign(x) * sign(y) under the joint density.

        Splits each axis at the zero node and applies composite Simpson on
        the quadrants, which keeps the quadrature error well below the
        trapezoid kink error at the sign discontinuity.  Requires the
        "plane" domain and a grid node at (numerically) zero on each axis.
        """
        if self.domain != "plane":
            raise ValidationError("sign_correlator is defined on the plane domain only")
        inner = signed_line_integral(self.y_grid, self.density, axis=1)
        return float(signed_line_integral(self.x_grid, inner, axis=0))


def signed_line_integral(grid: np.ndarray, values: np.ndarray, axis: int = -1):
    """Integral of sign(x) * values along ``axis``, split at the zero node.

    Composite Simpson on each half line; the split keeps the quadrature
    error at the sign discontinuity of order h^4 instead of h^2.
    """
    grid = np.asarray(grid, dtype=float)
    j = int(np.argmin(np.abs(grid)))
    scale = max(abs(grid[0]), abs(grid[-1]))
    if abs(grid[j]) > 1e-9 * scale:
        raise ValidationError("signed integration needs a grid node at zero")
    values = np.moveaxis(np.asarray(values, dtype=float), axis, -1)
    result = (simpson(values[..., j:], x=grid[j:], axis=-1)
              - simpson(values[..., :j + 1], x=grid[:j + 1], axis=-1))
    return result


def bipartite_density_alpha_half(config: BellConfig, x_grid=None, y_grid=None) -> JointGridDensity:
    """Joint readout density of the Schmidt pair at square-root coarse graining.

    Uses the unprimed angle pair: the density is the squared amplitude
    sum_k c_k exp(ik(phi_a + phi_b)) <x|k><y|k>, smeared per party when the
    widths are nonzero.  The per-party phase conventions cancel in the angle
    sum, so the phases enter exactly as written.
    """
    coeffs = config.schmidt_coeffs
    k_max = config.k_max
    if x_grid is None:
        x_grid = default_real_grid(k_max)
    if y_grid is None:
        y_grid = default_real_grid(k_max)
    x_grid = np.asarray(x_grid, dtype=float)
    y_grid = np.asarray(y_grid, dtype=float)

    k = np.arange(k_max + 1)
    b = coeffs * np.exp(1j * k * (config.phi_a + config.phi_b))

    # Stack only the d(d+1)/2 distinct kernel pairs; the off-diagonal ones
    # enter twice through the real part of the coefficient product.
    pairs = [(i, j) for i in range(k_max + 1) for j in range(i, k_max + 1)]
    weights = np.array(
        [(1.0 if i == j else 2.0) * np.real(np.conj(b[i]) * b[j]) for i, j in pairs]
    )
    kernels_x = np.stack([smeared_level_kernel(i, j, x_grid, config.width_a) for i, j in pairs])
    kernels_y = np.stack([smeared_level_kernel(i, j, y_grid, config.width_b) for i, j in pairs])
    density = kernels_x.T @ (weights[:, None] * kernels_y)

    lowest = float(density.min())
    if lowest < -1e-10:
        raise NegativeDensityError(f"joint density reached {lowest:.3e}")
    density = np.clip(density, 0.0, None)

    edge = max(density[0].max(), density[-1].max(), density[:, 0].max(), density[:, -1].max())
    if edge > BOUNDARY_MASS_TOL:
        raise GridTooNarrowError(
            f"joint density {edge:.3e} at the grid boundary; widen the grids"
        )
    return JointGridDensity(x_grid, y_grid, density, domain="plane")


class LocalModelResult(NamedTuple):
    quantum_joint: JointGridDensity
    lhv_joint: JointGridDensity
    max_discrepancy: float


def local_model_alpha_one(c_kl, phi_a: float, phi_b: float,
                          theta_grids=None) -> LocalModelResult:
    """Angle-pair joint at full coarse graining, by two constructions.

    The quantum route squares the transition amplitudes of the state with
    the setting phases folded into its coefficients.  The hidden-variable
    route distributes a pair of latent angles with density
    |sum_kl c_kl exp(-i(k l1 + l l2))|^2 / (2 pi)^2 and maps them through
    the deterministic response cos(latent + setting), i.e. it folds the
    settings into the evaluation points and pushes the four sign images of
    each grid point forward.  Both are the same double integral; evaluating
    them as two different discretizations and returning the maximum
    pointwise discrepancy is the consistency check.
    """
    c = np.asarray(c_kl, dtype=complex)
    if c.ndim != 2 or c.size < 1:
        raise ValidationError("c_kl must be a 2-d coefficient array")
    if not np.all(np.isfinite(c.view(float))):
        raise ValidationError("coefficients must be finite")
    norm = float(np.linalg.norm(c))
    if abs(norm - 1.0) > _NORM_ATOL:
        raise ValidationError(f"coefficients have norm {norm!r}, expected 1")
    if max(c.shape) > MAX_SCHMIDT_RANK:
        raise CapExceededError(
            f"level count {max(c.shape)} exceeds the supported maximum {MAX_SCHMIDT_RANK}"
        )
    if theta_grids is None:
        theta_grids = (np.linspace(0.0, np.pi, 201), np.linspace(0.0, np.pi, 201))
    theta_a, theta_b = (np.asarray(g, dtype=float) for g in theta_grids)
    for g in (theta_a, theta_b):
        if g.ndim != 1 or g.size < 2 or not np.all(np.diff(g) > 0):
            raise ValidationError("theta grids must be strictly increasing 1-d arrays")
        if g[0] < 0.0 or g[-1] > np.pi + 1e-12:
            raise ValidationError("theta grids must lie within [0, pi]")

    d_a, d_b = c.shape
    ka = np.arange(d_a)
    kb = np.arange(d_b)

    # Quantum route: complex amplitude matrices, setting phases on the state.
    b = c * np.exp(1j * (ka[:, None] * phi_a + kb[None, :] * phi_b))
    quantum = np.zeros((theta_a.size, theta_b.size))
    for sa in (1.0, -1.0):
        ea = np.exp(1j * sa * np.outer(theta_a, ka))
        for sb in (1.0, -1.0):
            eb = np.exp(1j * sb * np.outer(kb, theta_b))
            amplitude = ea @ b @ eb
            quantum += np.abs(amplitude) ** 2
    quantum /= (2.0 * np.pi) ** 2

    # Hidden-variable route: real trigonometric accumulation of the latent
    # density at the four pushforward images of each (theta_a, theta_b).
    lhv = np.zeros_like(quantum)
    for sa in (1.0, -1.0):
        lam1 = sa * theta_a - phi_a
        for sb in (1.0, -1.0):
            lam2 = sb * theta_b - phi_b
            re = np.zeros((theta_a.size, theta_b.size))
            im = np.zeros_like(re)
            for i in range(d_a):
                for j in range(d_b):
                    arg = i * lam1[:, None] + j * lam2[None, :]
                    cos_arg, sin_arg = np.cos(arg), np.sin(arg)
                    re += c[i, j].real * cos_arg + c[i, j].imag * sin_arg
                    im += c[i, j].imag * cos_arg - c[i, j].real * sin_arg
            lhv += re**2 + im**2
    lhv /= (2.0 * np.pi) ** 2

    discrepancy = float(np.max(np.abs(quantum - lhv)))
    return LocalModelResult(
        quantum_joint=JointGridDensity(theta_a, theta_b, quantum, domain="rotor"),
        lhv_joint=JointGridDensity(theta_a, theta_b, lhv, domain="rotor"),
        max_discrepancy=discrepancy,
    )
