"""Limit distributions of the rescaled collective variable.

For square-root coarse graining the limit law of a level superposition
is an oscillator-mode density smeared by a Gaussian of width
``s = sqrt(sigma^2/tau^2 - 1)``; its characteristic function has a
closed form.  For linear coarse graining the limit is a planar-rotor
angle distribution on [0, pi].  This module provides those laws, the
underlying Hermite/oscillator machinery, and a numerical verification
of the Gaussian-smearing identity that connects the closed form to the
convolution form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import (
    GridTooNarrowError,
    NegativeDensityError,
    ValidationError,
)

__all__ = [
    "GridDensity",
    "LimitState",
    "hermite",
    "oscillator_wavefunction",
    "smeared_level_kernel",
    "default_real_grid",
    "default_rotor_grid",
    "limit_density_alpha_half",
    "limit_charfn_alpha_half",
    "limit_density_alpha_one",
    "rotor_pushforward",
    "verify_hermite_lemma",
]

_NORM_ATOL = 1e-12
BOUNDARY_MASS_TOL = 1e-10


@dataclass(frozen=True)
class GridDensity:
    """Probability density sampled on a strictly increasing grid."""

    grid: np.ndarray
    density: np.ndarray
    domain: str = "real_line"  # or "rotor_half_circle"

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        d = np.asarray(self.density, dtype=float)
        if g.shape != d.shape or g.ndim != 1 or g.size < 2:
            raise ValidationError("grid and density must be matching 1-d arrays")
        if not np.all(np.diff(g) > 0):
            raise ValidationError("grid must be strictly increasing")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "density", d)

    def integral(self) -> float:
        return float(np.trapezoid(self.density, self.grid))

    def moment(self, order: int, central: bool = False) -> float:
        x = self.grid
        if central:
            x = x - self.moment(1)
        return float(np.trapezoid(self.density * x**order, self.grid))

    def mean(self) -> float:
        return self.moment(1)

    def cdf(self, x) -> np.ndarray:
        dx = np.diff(self.grid)
        masses = 0.5 * (self.density[1:] + self.density[:-1]) * dx
        cumulative = np.concatenate([[0.0], np.cumsum(masses)])
        return np.interp(np.asarray(x, dtype=float), self.grid, cumulative)


@dataclass(frozen=True)
class LimitState:
    """Level coefficients plus the (phi, width) pair of the measurement."""

    coeffs: np.ndarray
    phi: float = 0.0
    width: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim != 1 or c.size < 1:
            raise ValidationError("coeffs must be a nonempty 1-d array")
        norm = float(np.linalg.norm(c))
        if abs(norm - 1.0) > _NORM_ATOL:
            raise ValidationError(f"coefficients have norm {norm!r}, expected 1")
        if self.width < 0:
            raise ValidationError("width must be nonnegative")
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @property
    def k_max(self) -> int:
        return self.coeffs.size - 1

    def phased_coeffs(self, offset: float = 0.0) -> np.ndarray:
        k = np.arange(self.coeffs.size)
        return self.coeffs * np.exp(1j * k * (self.phi + offset))


def hermite(k: int, x):
    """Probabilists' Hermite polynomial He_k via the three-term recurrence."""
    if k < 0:
        raise ValidationError("k must be nonnegative")
    x = np.asarray(x, dtype=float)
    h_prev = np.ones_like(x)
    if k == 0:
        return h_prev
    h = x.copy()
    for j in range(1, k):
        h, h_prev = x * h - j * h_prev, h
    return h


def _hermite_rows(k_max: int, x: np.ndarray) -> np.ndarray:
    """He_0..He_k_max stacked along axis 0."""
    rows = np.empty((k_max + 1,) + x.shape, dtype=float)
    rows[0] = 1.0
    if k_max >= 1:
        rows[1] = x
    for j in range(1, k_max):
        rows[j + 1] = x * rows[j] - j * rows[j - 1]
    return rows


def oscillator_wavefunction(k: int, x):
    """<x|k> = (2 pi)^(-1/4) He_k(x) exp(-x^2/4) / sqrt(k!).

    Normalized so |<x|0>|^2 is the standard normal density and
    <x^2> = 2k + 1 in level k.
    """
    x = np.asarray(x, dtype=float)
    return (
        (2.0 * np.pi) ** -0.25
        / math.sqrt(math.factorial(k))
        * hermite(k, x)
        * np.exp(-0.25 * x * x)
    )


def smeared_level_kernel(k: int, l: int, x, s: float):
    """<k| e_s(x) |l>: the level-(k,l) kernel smeared by a width-s Gaussian.

    At s = 0 this is the bare product <k|x><x|l>.  For s > 0 the
    Gaussian convolution collapses to a finite Hermite sum with
    argument x/alpha, alpha = sqrt(1 + s^2); both routes agree by the
    smearing identity (see ``verify_hermite_lemma``).
    """
    if s < 0:
        raise ValidationError("s must be nonnegative")
    x = np.asarray(x, dtype=float)
    if s == 0.0:
        return oscillator_wavefunction(k, x) * oscillator_wavefunction(l, x)
    alpha = math.sqrt(1.0 + s * s)
    u = x / alpha
    rows = _hermite_rows(k + l, u)
    total = np.zeros_like(u)
    for q in range(min(k, l) + 1):
        deg = k + l - 2 * q
        coeff = (
            math.comb(deg, l - q)
            / math.factorial(q)
            / math.factorial(deg)
            * alpha ** (-deg)
        )
        total += coeff * rows[deg]
    prefactor = (
        math.sqrt(math.factorial(k) * math.factorial(l))
        * np.exp(-0.5 * u * u)
        / (math.sqrt(2.0 * np.pi) * alpha)
    )
    return prefactor * total


def default_real_grid(k_max: int, points: int = 4001) -> np.ndarray:
    half_width = 12.0 + 2.0 * k_max
    return np.linspace(-half_width, half_width, points)


def default_rotor_grid(points: int = 2001) -> np.ndarray:
    return np.linspace(0.0, np.pi, points)


def limit_density_alpha_half(state: LimitState, grid=None) -> GridDensity:
    """Limit density of X under square-root coarse graining.

    ``P(x) = sum_{k,l} conj(b_k) b_l K_kl(x)`` with
    ``b_k = c_k e^{i k (phi + pi)}`` and K the width-``state.width``
    smeared kernel.  At width 0 this is a pure oscillator-mode density
    |sum_k b_k <x|k>|^2.

    The extra pi in the phase factors: ``phi`` is stored as the argument
    of minus the off-diagonal scale element, while the level kernels are
    oriented by the argument of the element itself.  Dropping the offset
    would mirror every odd cross term, contradicting both the exact
    finite-size law (the mean of (|N,0>+|N,1>)/sqrt(2) under a x-basis
    projective measurement is +1, not -1) and the Fourier transform of
    ``limit_charfn_alpha_half``.
    """
    if grid is None:
        grid = default_real_grid(state.k_max)
    grid = np.asarray(grid, dtype=float)
    b = state.phased_coeffs(offset=np.pi)
    n = b.size
    density = np.zeros_like(grid)
    for k in range(n):
        if b[k] == 0:
            continue
        density += abs(b[k]) ** 2 * smeared_level_kernel(k, k, grid, state.width)
        for l in range(k + 1, n):
            if b[l] == 0:
                continue
            # kernel is real-symmetric in (k, l)
            cross = 2.0 * (np.conj(b[k]) * b[l]).real
            if cross != 0.0:
                density += cross * smeared_level_kernel(k, l, grid, state.width)
    worst = float(density.min())
    if worst < -1e-10:
        raise NegativeDensityError(f"density dipped to {worst:.3e}")
    density = np.clip(density, 0.0, None)
    edge = max(float(density[0]), float(density[-1]))
    if edge > BOUNDARY_MASS_TOL:
        raise GridTooNarrowError(
            f"density {edge:.3e} at the grid boundary exceeds {BOUNDARY_MASS_TOL:.0e}"
        )
    return GridDensity(grid=grid, density=density, domain="real_line")


def limit_charfn_alpha_half(state: LimitState, sigma_over_tau: float, t):
    """Closed-form characteristic function of the square-root limit law.

    ``sigma_over_tau`` >= 1 plays the role of sqrt(1 + s^2); the result
    is Gaussian times a polynomial generated by the level overlap sum.
    """
    if sigma_over_tau < 1.0 - 1e-12:
        raise ValidationError("sigma_over_tau must be >= 1")
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    b = state.phased_coeffs()
    n = b.size
    gauss = np.exp(-0.5 * (sigma_over_tau * t_arr) ** 2)
    total = np.zeros_like(t_arr, dtype=complex)
    for k in range(n):
        for l in range(n):
            w = np.conj(b[k]) * b[l]
            if w == 0:
                continue
            inner = np.zeros_like(t_arr, dtype=complex)
            for q in range(min(k, l) + 1):
                coeff = math.sqrt(
                    math.factorial(k) * math.factorial(l)
                ) / (
                    math.factorial(q)
                    * math.factorial(k - q)
                    * math.factorial(l - q)
                )
                inner += coeff * (-1j * t_arr) ** (k + l - 2 * q)
            total += w * inner
    values = gauss * total
    if np.isscalar(t) or np.asarray(t).ndim == 0:
        return complex(values[0])
    return values


def limit_density_alpha_one(coeffs, phi: float, theta_grid=None) -> GridDensity:
    """Planar-rotor angle density on [0, pi] under linear coarse graining.

    ``P(theta) = (|f(theta)|^2 + |f(-theta)|^2) / (2 pi)`` with
    ``f(theta) = sum_k c_k e^{i k phi} e^{i k theta}``; only level
    differences matter, so any common index offset drops out.
    """
    c = np.asarray(coeffs, dtype=complex)
    if c.ndim != 1 or c.size < 1:
        raise ValidationError("coeffs must be a nonempty 1-d array")
    norm = float(np.linalg.norm(c))
    if abs(norm - 1.0) > _NORM_ATOL:
        raise ValidationError(f"coefficients have norm {norm!r}, expected 1")
    if theta_grid is None:
        theta_grid = default_rotor_grid()
    theta = np.asarray(theta_grid, dtype=float)
    if theta.min() < 0.0 or theta.max() > np.pi + 1e-12:
        raise ValidationError("theta grid must lie inside [0, pi]")
    k = np.arange(c.size)
    b = c * np.exp(1j * k * phi)
    f_plus = np.exp(1j * np.outer(theta, k)) @ b
    f_minus = np.exp(-1j * np.outer(theta, k)) @ b
    density = (np.abs(f_plus) ** 2 + np.abs(f_minus) ** 2) / (2.0 * np.pi)
    worst = float(density.min())
    if worst < -1e-10 or not np.all(np.isfinite(density)):
        raise NegativeDensityError(f"rotor density dipped to {worst:.3e}")
    density = np.clip(density, 0.0, None)
    return GridDensity(grid=theta, density=density, domain="rotor_half_circle")


def rotor_pushforward(rotor: GridDensity, x_grid=None) -> GridDensity:
    """Push the rotor law through x = cos(theta) with the 1/|sin| Jacobian.

    The density diverges at x = +-1, so the target grid must stay
    strictly inside (-1, 1).
    """
    if rotor.domain != "rotor_half_circle":
        raise ValidationError("pushforward needs a rotor_half_circle density")
    if x_grid is None:
        x_grid = np.linspace(-0.999, 0.999, 1999)
    x = np.asarray(x_grid, dtype=float)
    if x.min() <= -1.0 or x.max() >= 1.0:
        raise ValidationError(
            "x grid touches the endpoint singularities at +-1"
        )
    theta = np.arccos(x)
    p_theta = np.interp(theta, rotor.grid, rotor.density)
    density = p_theta / np.abs(np.sin(theta))
    return GridDensity(grid=x, density=density, domain="real_line")


@lru_cache(maxsize=8)
def _hermgauss_cached(n_nodes: int):
    return np.polynomial.hermite.hermgauss(n_nodes)


def verify_hermite_lemma(m: int, n: int, beta: float, gamma: float,
                         x_grid=None, n_nodes: int = 200) -> float:
    """Max |closed Hermite sum - Gaussian convolution| over ``x_grid``.

    The identity: with alpha^2 = beta^2 + gamma^2,

      e^{-x^2/(2 a^2)}/(sqrt(2 pi) a) * sum_q  C(m+n-2q, n-q)/q!
          * (g/a)^{m+n-2q} He_{m+n-2q}(x/a)/(m+n-2q)!
      = integral dx' G_beta(x - x') e^{-x'^2/(2 g^2)}/(sqrt(2 pi) g)
          * He_m(x'/g) He_n(x'/g) / (m! n!)

    The right side is evaluated by Gauss-Hermite quadrature after
    completing the square, which is exact for the polynomial factor.
    """
    if beta <= 0 or gamma <= 0:
        raise ValidationError("beta and gamma must be positive")
    if m < n:
        m, n = n, m
    alpha = math.hypot(beta, gamma)
    if x_grid is None:
        x_grid = np.linspace(-6.0 * alpha - m, 6.0 * alpha + m, 401)
    x = np.asarray(x_grid, dtype=float)

    u = x / alpha
    rows = _hermite_rows(m + n, u)
    closed = np.zeros_like(u)
    for q in range(n + 1):
        deg = m + n - 2 * q
        closed += (
            math.comb(deg, n - q)
            / math.factorial(q)
            * (gamma / alpha) ** deg
            / math.factorial(deg)
            * rows[deg]
        )
    closed *= np.exp(-0.5 * u * u) / (math.sqrt(2.0 * np.pi) * alpha)

    nodes, weights = _hermgauss_cached(n_nodes)
    var = (beta * gamma / alpha) ** 2
    center = (gamma / alpha) ** 2 * x
    xp = center[:, None] + math.sqrt(2.0 * var) * nodes[None, :]
    integrand = hermite(m, xp / gamma) * hermite(n, xp / gamma)
    convolved = (
        np.exp(-0.5 * u * u)
        * math.sqrt(2.0 * var)
        / (2.0 * np.pi * beta * gamma)
        * (integrand @ weights)
        / (math.factorial(m) * math.factorial(n))
    )
    return float(np.max(np.abs(closed - convolved)))
