"""Collision kernels: velocity part, singular angular measure, sampling.

A kernel factorizes into a velocity part Phi(|v - v*|) and an angular measure
beta(dtheta) on (0, pi], with the sphere index xi integrated uniformly over
S^{d-2}.  The canonical velocity part is Phi(z) = C z^gamma; for gamma < 0 it
is capped at phi_cap so the thinning majorant stays finite (the cap binds
only below relative speed (C/phi_cap)^(1/|gamma|), where a collision deflects
by at most (theta/2) z anyway).

Angular measures carry a mandatory grazing truncation eps_theta: the
untruncated singular measure has infinite mass, so simulation always runs on
[eps_theta, pi].  Truncation constants, for sphere area |S^{d-2}|:

    S_eps      = |S^{d-2}| * integral_eps^pi beta(dtheta)   (total jump rate)
    alpha_eps  = |S^{d-2}| * integral_0^eps theta beta(dtheta)  (grazing drift)
    kappa1_eps =             integral_eps^pi theta beta(dtheta)

Modes: "power_law" is beta(theta) = strength * theta^(-1-nu) with
nu in (0, 1); "maxwell_uniform" is the flat density beta(theta) = strength
(a cutoff measure, useful for tests); "user_table" integrates and samples a
tabulated density numerically.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import DomainError

ANGULAR_MODES = ("power_law", "maxwell_uniform", "user_table")

# Integer tags for the samplers, shared with the jitted event loops.
THETA_POWER_LAW = 0
THETA_UNIFORM = 1
THETA_TABLE = 2

DEFAULT_PHI_CAP_FACTOR = 1e6


def unit_sphere_area(m):
    """Surface area of the unit sphere S^m in R^(m+1); |S^0| = 2."""
    if m < 0:
        raise DomainError("sphere dimension must be >= 0")
    return 2.0 * math.pi ** ((m + 1) / 2.0) / math.gamma((m + 1) / 2.0)


@dataclass(frozen=True)
class AngularMeasure:
    """Angular part beta(dtheta) of a collision kernel, truncated at
    eps_theta.

    satisfies_a5 records (without a runtime check) whether the underlying
    angular cross-section is nondecreasing, convex and C^1; the power-law
    mode is.
    """

    nu: float
    strength: float = 1.0
    eps_theta: float = 1e-3
    mode: str = "power_law"
    table_theta: Optional[Tuple[float, ...]] = None
    table_beta: Optional[Tuple[float, ...]] = None
    satisfies_a5: bool = True

    def __post_init__(self):
        if not (0.0 < self.nu < 1.0):
            raise DomainError(
                "nu must lie in (0, 1); nu >= 1 makes the first angular "
                "moment infinite")
        if not (self.strength > 0.0 and math.isfinite(self.strength)):
            raise DomainError("strength must be a positive finite real")
        if not (0.0 < self.eps_theta < math.pi):
            raise DomainError("eps_theta must lie in (0, pi)")
        if self.mode not in ANGULAR_MODES:
            raise DomainError("mode must be one of %s" % (ANGULAR_MODES,))
        if self.mode == "user_table":
            if self.table_theta is None or self.table_beta is None:
                raise DomainError("user_table mode needs table_theta and "
                                  "table_beta")
            th = np.asarray(self.table_theta, dtype=float)
            be = np.asarray(self.table_beta, dtype=float)
            if th.ndim != 1 or th.shape != be.shape or th.shape[0] < 2:
                raise DomainError("angular table must be two equal-length "
                                  "1-d sequences with >= 2 nodes")
            if np.any(np.diff(th) <= 0.0) or th[0] < 0.0 or th[-1] > math.pi:
                raise DomainError("table_theta must increase within [0, pi]")
            if np.any(be < 0.0) or not np.all(np.isfinite(be)):
                raise DomainError("table_beta must be finite and >= 0")

    def _table_arrays(self):
        return (np.asarray(self.table_theta, dtype=float),
                np.asarray(self.table_beta, dtype=float))


def _table_dense(a, lo, hi, pts=4097):
    """Tabulated density restricted to [lo, hi] on a dense grid."""
    th, be = a._table_arrays()
    lo = max(lo, th[0])
    hi = min(hi, th[-1])
    if hi <= lo:
        return np.array([lo, lo]), np.array([0.0, 0.0])
    grid = np.linspace(lo, hi, pts)
    return grid, np.interp(grid, th, be)


def angular_constants(a, dimension):
    """Truncation constants (S_eps, alpha_eps, kappa1_eps) for dimension d.

    Closed forms for power_law and maxwell_uniform, trapezoid quadrature for
    user_table.  kappa1_eps carries no sphere factor.
    """
    if dimension < 2:
        raise DomainError("dimension must be >= 2")
    if not (0.0 < a.nu < 1.0):
        raise DomainError("nu must lie in (0, 1)")
    area = unit_sphere_area(dimension - 2)
    eps = a.eps_theta
    pi = math.pi
    if a.mode == "power_law":
        mass = a.strength * (eps ** -a.nu - pi ** -a.nu) / a.nu
        alpha = a.strength * eps ** (1.0 - a.nu) / (1.0 - a.nu)
        kappa1 = a.strength * (pi ** (1.0 - a.nu) - eps ** (1.0 - a.nu)) \
            / (1.0 - a.nu)
    elif a.mode == "maxwell_uniform":
        mass = a.strength * (pi - eps)
        alpha = a.strength * eps * eps / 2.0
        kappa1 = a.strength * (pi * pi - eps * eps) / 2.0
    else:
        grid, dens = _table_dense(a, eps, pi)
        mass = float(np.trapezoid(dens, grid))
        kappa1 = float(np.trapezoid(grid * dens, grid))
        grid0, dens0 = _table_dense(a, 0.0, eps)
        alpha = area * float(np.trapezoid(grid0 * dens0, grid0))
        return AngularConstants(area * mass, alpha, kappa1)
    return AngularConstants(area * mass, area * alpha, kappa1)


@dataclass(frozen=True)
class AngularConstants:
    s_eps: float
    alpha_eps: float
    kappa1_eps: float

    def __iter__(self):
        return iter((self.s_eps, self.alpha_eps, self.kappa1_eps))


@dataclass(frozen=True)
class PowerLawSpec:
    """Inverse-power interaction 1/r^s in dimension 3, s > 3."""

    s: float
    d: int = 3

    def __post_init__(self):
        if not (self.s > 3.0):
            raise DomainError("inverse-power exponent requires s > 3")
        if self.d != 3:
            raise DomainError("the inverse-power reduction is for d = 3")

    @property
    def gamma(self):
        return (self.s - 5.0) / (self.s - 1.0)

    @property
    def nu(self):
        return 2.0 / (self.s - 1.0)


@dataclass(frozen=True)
class CollisionKernel:
    """Velocity part Phi(z) = phi_upper * z^gamma plus an angular measure.

    phi_lower, when present, is the constant of the matching lower bound
    (c z^gamma <= Phi); the canonical representative has c = C.  phi_cap
    defaults to 1e6 * phi_upper and only matters for gamma < 0.
    """

    gamma: float
    phi_upper: float
    angular: AngularMeasure
    dimension: int = 3
    phi_lower: Optional[float] = None
    phi_cap: Optional[float] = None

    def __post_init__(self):
        if self.dimension < 2 or int(self.dimension) != self.dimension:
            raise DomainError("dimension must be an integer >= 2")
        if not (-self.dimension < self.gamma <= 1.0):
            raise DomainError("gamma must lie in (-d, 1]")
        if not (self.phi_upper > 0.0 and math.isfinite(self.phi_upper)):
            raise DomainError("phi_upper must be a positive finite real")
        if self.phi_lower is not None:
            if not (0.0 < self.phi_lower <= self.phi_upper):
                raise DomainError("phi_lower must satisfy 0 < c <= C")
        if self.phi_cap is not None and not (self.phi_cap > 0.0):
            raise DomainError("phi_cap must be positive")

    @property
    def cap(self):
        if self.phi_cap is not None:
            return self.phi_cap
        return DEFAULT_PHI_CAP_FACTOR * self.phi_upper

    def constants(self):
        """Truncation constants of the angular part at this dimension."""
        return angular_constants(self.angular, self.dimension)


def phi(kernel, z):
    """Velocity part Phi(z) = C z^gamma, capped at kernel.cap for gamma < 0.

    Accepts a scalar or an array of nonnegative speeds.
    """
    arr = np.asarray(z, dtype=float)
    if np.any(arr < 0.0) or not np.all(np.isfinite(arr)):
        raise DomainError("relative speed must be finite and >= 0")
    g = kernel.gamma
    c = kernel.phi_upper
    if g == 0.0:
        out = np.full_like(arr, c)
    elif g > 0.0:
        out = c * arr ** g
    else:
        cap = kernel.cap
        out = np.empty_like(arr)
        pos = arr > 0.0
        with np.errstate(divide="ignore", over="ignore"):
            out[pos] = np.minimum(c * arr[pos] ** g, cap)
        out[~pos] = cap
    if arr.ndim == 0:
        return float(out)
    return out


def from_inverse_power(s, phi_upper=1.0, strength=1.0, eps_theta=1e-3,
                       phi_cap=None):
    """Kernel with the inverse-power exponents gamma = (s-5)/(s-1),
    nu = 2/(s-1) in dimension 3.

    Args:
        s: exponent > 3, or a PowerLawSpec.

    Raises:
        DomainError: if s <= 3 (outside the moderate-singularity regime).
    """
    spec = s if isinstance(s, PowerLawSpec) else PowerLawSpec(float(s))
    angular = AngularMeasure(nu=spec.nu, strength=strength,
                             eps_theta=eps_theta)
    return CollisionKernel(gamma=spec.gamma, phi_upper=phi_upper,
                           angular=angular, dimension=spec.d,
                           phi_lower=phi_upper, phi_cap=phi_cap)


def theta_sampler_params(a):
    """Inverse-CDF parameters shared by sample_theta and the event loops.

    Returns (mode_tag, c0, c1, c2, tab_u, tab_theta); the closed-form modes
    leave the tables empty.
    """
    empty = np.zeros(0)
    if a.mode == "power_law":
        c0 = a.eps_theta ** -a.nu
        c1 = c0 - math.pi ** -a.nu
        return THETA_POWER_LAW, c0, c1, -1.0 / a.nu, empty, empty
    if a.mode == "maxwell_uniform":
        return (THETA_UNIFORM, a.eps_theta, math.pi - a.eps_theta, 0.0,
                empty, empty)
    grid, dens = _table_dense(a, a.eps_theta, math.pi)
    cdf = np.concatenate(([0.0], np.cumsum(
        0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))))
    total = cdf[-1]
    if total <= 0.0:
        raise DomainError("tabulated angular density has zero mass above "
                          "eps_theta")
    return THETA_TABLE, 0.0, 0.0, 0.0, cdf / total, grid


def sample_theta(a, u):
    """Map uniform u in [0, 1] to a deviation angle in [eps_theta, pi] by
    the inverse CDF of the truncated normalized angular measure."""
    arr = np.asarray(u, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError("u must lie in [0, 1]")
    mode, c0, c1, c2, tab_u, tab_th = theta_sampler_params(a)
    if mode == THETA_POWER_LAW:
        out = (c0 - arr * c1) ** c2
    elif mode == THETA_UNIFORM:
        out = c0 + arr * c1
    else:
        out = np.interp(arr, tab_u, tab_th)
    if arr.ndim == 0:
        return float(out)
    return out


def theta_cdf(a, theta):
    """CDF of the truncated normalized angular measure on [eps_theta, pi]."""
    arr = np.asarray(theta, dtype=float)
    eps = a.eps_theta
    if a.mode == "power_law":
        out = (eps ** -a.nu - np.clip(arr, eps, math.pi) ** -a.nu) \
            / (eps ** -a.nu - math.pi ** -a.nu)
    elif a.mode == "maxwell_uniform":
        out = (np.clip(arr, eps, math.pi) - eps) / (math.pi - eps)
    else:
        _, _, _, _, tab_u, tab_th = theta_sampler_params(a)
        out = np.interp(arr, tab_th, tab_u)
    if arr.ndim == 0:
        return float(out)
    return out


def sample_xi(d, rng, size=None):
    """Uniform sample(s) on S^{d-2}: signs for d = 2, normalized gaussians
    for d >= 3.  Returns shape (d-1,) or (size, d-1)."""
    if d < 2:
        raise DomainError("dimension must be >= 2")
    n = 1 if size is None else int(size)
    if d == 2:
        out = rng.integers(0, 2, size=(n, 1)) * 2.0 - 1.0
    else:
        g = rng.standard_normal((n, d - 1))
        nrm = np.sqrt(np.sum(g * g, axis=1))
        nrm[nrm < 1e-300] = 1.0
        out = g / nrm[:, None]
    if size is None:
        return out[0]
    return out
