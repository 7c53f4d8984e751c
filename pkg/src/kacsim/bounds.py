"""Theoretical envelopes and moment diagnostics.

Two stability envelopes for the pairing distance d1:

* hard potentials: d1 obeys a log-Lipschitz integral inequality
  d1(t) <= d1(0) + K int_0^t d1(s)(1 + |log d1(s)|) ds, solved by the
  Yudovitch comparison curve rho with rho' = K rho (1 + |log rho|).  In log
  coordinates y = log rho this is y' = K (1 + |y|), giving the piecewise
  closed form implemented here; the generic comparison lemma (arbitrary
  rate function mu) is solved numerically by quadrature of
  m(x) = int_x^1 dy/mu(y) plus bisection of m(a) - m(rho) = t.

* soft potentials: plain Gronwall, d1(t) <= d1(0) exp(K_p (C1 + C2 + t))
  with C1, C2 the time-integrated L^p norms of the two solutions.

Moment diagnostics: raw moments, stretched-exponential moments (with a +inf
sentinel on float64 overflow), the first-moment growth envelope, the tangent
blow-up horizon T* of the L^p norm, and the moment-order threshold
q0 = gamma^2/(nu + gamma) for inverse-power kernels.

Fitting: the multiplicative constants of the envelopes are not numeric in
the underlying estimates; fit_hard_constant / fit_soft_constant return the
smallest constant whose envelope dominates a measured d1 series, so that a
calibration run pins the constant and held-out runs test the functional
form.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .errors import DomainError, MissingLpNorm
from .kernel import angular_constants, unit_sphere_area

LOG_OVERFLOW = 709.0  # exp() overflow threshold for float64


@dataclass(frozen=True)
class HardStabilityParams:
    """Constants of the log-Lipschitz envelope: effective rate
    K = K_eps * C_exp; eps is the exponential-moment exponent the C_exp
    estimate refers to."""

    K_eps: float
    C_exp: float
    eps: float

    def __post_init__(self):
        for name in ("K_eps", "C_exp", "eps"):
            val = getattr(self, name)
            if not (val > 0.0 and math.isfinite(val)):
                raise DomainError("%s must be positive and finite" % name)

    @property
    def rate(self):
        return self.K_eps * self.C_exp


@dataclass(frozen=True)
class SoftStabilityParams:
    """Constants of the exponential envelope: K_p, the two integrated L^p
    norms, and the integrability exponent p (p > d/(d+gamma) when gamma and
    dimension are supplied for validation)."""

    K_p: float
    lp_integrals: Tuple[float, float]
    p: float
    gamma: Optional[float] = None
    dimension: int = 3

    def __post_init__(self):
        if not (self.K_p >= 0.0 and math.isfinite(self.K_p)):
            raise DomainError("K_p must be nonnegative and finite")
        if len(self.lp_integrals) != 2 or any(
                not (c >= 0.0 and math.isfinite(c))
                for c in self.lp_integrals):
            raise DomainError("lp_integrals must be two nonnegative reals")
        if not (self.p > 0.0):
            raise DomainError("p must be positive")
        if self.gamma is not None:
            d = float(self.dimension)
            if not (d + self.gamma > 0.0):
                raise DomainError("gamma must exceed -d")
            if not (self.p > d / (d + self.gamma)):
                raise DomainError("p must exceed d/(d+gamma) = %g"
                                  % (d / (d + self.gamma)))


@dataclass(frozen=True)
class BoundCurve:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape or t.ndim != 1:
            raise DomainError("times and values must be parallel 1-d lists")
        if np.any(np.diff(t) < 0.0):
            raise DomainError("times must be sorted")
        if np.any(v < 0.0) or np.any(np.isnan(v)):
            raise DomainError("bound values must be nonnegative")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def rows(self):
        return list(zip(self.times.tolist(), self.values.tolist()))


def _validate_grid(t_grid):
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise DomainError("t_grid must be a nonempty 1-d list")
    if np.any(np.diff(t) < 0.0) or t[0] < 0.0:
        raise DomainError("t_grid must be sorted and nonnegative")
    return t


def yudovitch_bound(a, mu, t_grid):
    """Comparison curve rho(t) solving m(a) - m(rho(t)) = t for
    m(x) = int_x^1 dy/mu(y), by quadrature (log substitution) and
    bisection; identically 0 when a = 0.

    The +inf sentinel marks t beyond which rho exceeds e^700 ~ 1e304
    (possible when int^inf dy/mu converges).

    Raises:
        DomainError: invalid grid, a < 0, or mu nonpositive at a sampled
            point.
    """
    t = _validate_grid(t_grid)
    a = float(a)
    if a < 0.0 or not math.isfinite(a):
        raise DomainError("a must be a finite nonnegative real")
    if a == 0.0:
        return BoundCurve(t, np.zeros_like(t))

    def mu_checked(x):
        val = float(mu(x))
        if not (val > 0.0):
            raise DomainError("mu must be strictly positive (mu(%g) = %g)"
                              % (x, val))
        return val

    def m(x):
        # int_x^1 dy/mu(y) with y = e^w
        if x == 1.0:
            return 0.0
        val, _ = quad(lambda w: math.exp(w) / mu_checked(math.exp(w)),
                      math.log(x), 0.0, epsabs=1e-13, epsrel=1e-10,
                      limit=200)
        return val

    m_a = m(a)
    values = np.empty_like(t)
    lo = a
    hi_cap = math.exp(700.0)
    for idx, tc in enumerate(t):
        if tc == 0.0:
            values[idx] = a
            continue
        target = m_a - tc  # m(rho) sought; m is strictly decreasing
        hi = max(2.0 * lo, 1.0)
        while m(hi) > target:
            hi *= 8.0
            if hi >= hi_cap:
                break
        if hi >= hi_cap and m(hi_cap) > target:
            values[idx:] = math.inf
            return BoundCurve(t, values)
        root = brentq(lambda x: m(x) - target, lo, min(hi, hi_cap),
                      xtol=1e-12, rtol=1e-12)
        values[idx] = root
        lo = root
    return BoundCurve(t, values)


def _hard_log_value(log_a, kt):
    """log rho(t) for mu(x) = K x (1 + |log x|), arguments in (log a, K t).

    In log coordinates y' = K(1 + |y|): below 0 the solution is
    1 - (1 - y0) e^{-Kt} until it crosses 0 at K t0 = log(1 - y0), then
    (and for y0 >= 0 from the start) it grows as (1 + max(y0,0)) e^{K dt} - 1.
    """
    if log_a <= 0.0:
        kt0 = math.log(1.0 - log_a)
        if kt <= kt0:
            return 1.0 - (1.0 - log_a) * math.exp(-kt)
        return math.exp(kt) / (1.0 - log_a) - 1.0
    return (1.0 + log_a) * math.exp(kt) - 1.0


def _hard_values(rate, d1_0, t):
    out = np.empty_like(t)
    log_a = math.log(d1_0)
    for idx, tc in enumerate(t):
        if tc == 0.0:
            out[idx] = d1_0  # exact, not exp(log(d1_0))
            continue
        ly = _hard_log_value(log_a, rate * tc)
        out[idx] = math.inf if ly > LOG_OVERFLOW else math.exp(ly)
    return out


def hard_bound(params, d1_0, t_grid):
    """Log-Gronwall envelope for hard potentials: the Yudovitch curve for
    mu(x) = K x (1 + |log x|) seeded at d1_0, K = K_eps * C_exp, in closed
    form; identically 0 when d1_0 = 0."""
    t = _validate_grid(t_grid)
    d1_0 = float(d1_0)
    if d1_0 < 0.0 or not math.isfinite(d1_0):
        raise DomainError("d1_0 must be a finite nonnegative real")
    if d1_0 == 0.0:
        return BoundCurve(t, np.zeros_like(t))
    return BoundCurve(t, _hard_values(params.rate, d1_0, t))


def soft_bound(params, d1_0, t):
    """Exponential envelope for soft potentials:
    d1_0 * exp(K_p (C1 + C2 + t))."""
    d1_0 = float(d1_0)
    t = float(t)
    if d1_0 < 0.0 or t < 0.0:
        raise DomainError("inputs must be nonnegative")
    c1, c2 = params.lp_integrals
    arg = params.K_p * (c1 + c2 + t)
    if arg > LOG_OVERFLOW:
        return math.inf if d1_0 > 0.0 else 0.0
    return d1_0 * math.exp(arg)


def exp_moment(e, eps, s_exp):
    """(1/N) sum exp(eps |v_i|^s_exp); +inf sentinel on float64 overflow."""
    eps = float(eps)
    s_exp = float(s_exp)
    if not (eps > 0.0):
        raise DomainError("eps must be positive")
    if not (0.0 < s_exp < 2.0):
        raise DomainError("s_exp must lie in (0, 2)")
    speed = np.sqrt(np.sum(e.velocities ** 2, axis=1))
    exponents = eps * speed ** s_exp
    if float(exponents.max()) > LOG_OVERFLOW:
        return math.inf
    with np.errstate(over="ignore"):
        val = float(np.mean(np.exp(exponents)))
    return val if math.isfinite(val) else math.inf


def moment(e, p):
    """(1/N) sum |v_i|^p (p = 0 gives exactly 1)."""
    p = float(p)
    if p < 0.0:
        raise DomainError("p must be nonnegative")
    if p == 0.0:
        return 1.0
    speed = np.sqrt(np.sum(e.velocities ** 2, axis=1))
    return float(np.mean(speed ** p))


def first_moment_bound(m1_0, kernel, t, lp_norm=None, lp_constant=1.0,
                       lp_rate=1.0):
    """Growth envelope for the first moment m1(t), with the truncated
    angular constants of the simulated dynamics.

    1 + gamma >= 0: exp(kappa1_eps |S^{d-2}| t) (m1_0 + 1).
    1 + gamma < 0: m1_0 + A int_0^t tan(arctan lp_norm + lp_rate s) ds
    + A' t with A = (kappa1_eps |S^{d-2}|/2) lp_constant and
    A' = kappa1_eps |S^{d-2}|/2; +inf at or beyond the tangent blow-up.

    Raises:
        MissingLpNorm: 1 + gamma < 0 and no lp_norm supplied.
    """
    m1_0 = float(m1_0)
    t = float(t)
    if m1_0 < 0.0 or t < 0.0:
        raise DomainError("inputs must be nonnegative")
    consts = angular_constants(kernel.angular, kernel.dimension)
    area = unit_sphere_area(kernel.dimension - 2)
    if 1.0 + kernel.gamma >= 0.0:
        arg = consts.kappa1_eps * area * t
        if arg > LOG_OVERFLOW:
            return math.inf
        return math.exp(arg) * (m1_0 + 1.0)
    if lp_norm is None:
        raise MissingLpNorm(
            "first-moment envelope for gamma < -1 needs the L^p norm of "
            "the initial state")
    half = 0.5 * consts.kappa1_eps * area
    theta0 = math.atan(float(lp_norm))
    if theta0 + lp_rate * t >= 0.5 * math.pi:
        return math.inf
    integral = (math.log(math.cos(theta0))
                - math.log(math.cos(theta0 + lp_rate * t))) / lp_rate
    return m1_0 + half * lp_constant * integral + half * t


def tstar(lp_norm_f0, C_const):
    """Blow-up horizon (1/C)(pi/2 - arctan ||f_0||_{L^p}) of the tangent
    envelope of the L^p norm."""
    norm = float(lp_norm_f0)
    C = float(C_const)
    if norm < 0.0 or not math.isfinite(norm):
        raise DomainError("lp_norm_f0 must be a finite nonnegative real")
    if not (C > 0.0):
        raise DomainError("C_const must be positive")
    return (0.5 * math.pi - math.atan(norm)) / C


def moment_threshold(spec):
    """q0 = gamma^2/(nu + gamma) for an inverse-power kernel: moments of
    order above q0 are needed for well-posedness in the soft regime."""
    return spec.gamma ** 2 / (spec.nu + spec.gamma)


def lp_envelope(lp_norm_f0, C_const, t):
    """tan(arctan ||f_0|| + C t), valid for t < tstar; +inf at or beyond."""
    norm = float(lp_norm_f0)
    t = float(t)
    if t < 0.0:
        raise DomainError("t must be nonnegative")
    theta = math.atan(norm) + float(C_const) * t
    if theta >= 0.5 * math.pi:
        return math.inf
    return math.tan(theta)


def fit_hard_constant(times, values, d1_0, k_min=1e-9, k_max=1e6):
    """Smallest K such that the hard envelope seeded at d1_0 dominates the
    measured series at every time; bisection over K (the envelope is
    nondecreasing in K)."""
    t = _validate_grid(times)
    v = np.asarray(values, dtype=float)
    if v.shape != t.shape:
        raise DomainError("times and values must be parallel")
    d1_0 = float(d1_0)
    if not (d1_0 > 0.0):
        raise DomainError("fitting requires d1_0 > 0")

    def dominates(k):
        env = _hard_values(k, d1_0, t)
        return bool(np.all(env >= v - 1e-15 * (1.0 + np.abs(v))))

    if dominates(k_min):
        return k_min
    hi = max(k_min * 2.0, 1e-3)
    while not dominates(hi):
        hi *= 2.0
        if hi > k_max:
            raise DomainError("no dominating K below %g; series cannot be "
                              "enveloped (check d1_0)" % k_max)
    lo = k_min
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if dominates(mid):
            hi = mid
        else:
            lo = mid
    return hi


def fit_soft_constant(times, values, d1_0, lp_sum=0.0):
    """Smallest K_p with values(t) <= d1_0 exp(K_p (lp_sum + t)): closed
    form max of log(value/d1_0)/(lp_sum + t)."""
    t = _validate_grid(times)
    v = np.asarray(values, dtype=float)
    if v.shape != t.shape:
        raise DomainError("times and values must be parallel")
    d1_0 = float(d1_0)
    if not (d1_0 > 0.0):
        raise DomainError("fitting requires d1_0 > 0")
    best = 0.0
    for tc, val in zip(t, v):
        if val <= d1_0 or lp_sum + tc <= 0.0:
            continue
        best = max(best, math.log(val / d1_0) / (lp_sum + tc))
    return best
