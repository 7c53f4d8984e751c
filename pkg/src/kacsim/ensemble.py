"""Event-driven simulation of the N-particle collision jump process.

Dynamics: each unordered pair (i, j) collides at rate Phi(|v_i - v_j|)
S_eps / N (mean-field 1/N scaling), realized exactly by thinning: candidate
events arrive at the constant majorant rate (N-1)/2 * Lambda * S_eps with
Lambda >= Phi for every pair, a uniformly drawn pair is accepted with
probability Phi/Lambda, and an accepted collision applies the symmetric
two-particle update, conserving momentum exactly and energy to roundoff.
For gamma > 0 the majorant Lambda = C (2 sqrt(E_tot))^gamma is collision
invariant, so it is computed once per run.

RNG: numpy Philox keyed by (stream, purpose); purpose 0 samples initial
conditions, purpose 1 drives dynamics.  Per event the draw order is fixed:
exponential waiting time, pair indices i and j, acceptance uniform; the
deviation-angle uniform and the d-1 sphere variates are drawn only on
acceptance.  This protocol is part of the determinism contract and is shared
by the coupled loop.

Snapshot dump format: one header line "t=<time> N=<N> d=<d> seed=<seed>"
followed by one whitespace-separated row of d components per particle.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from ._jit import jit
from .errors import DomainError, FileError
from .geometry import ALIGN_TOL, _collide
from .kernel import (THETA_POWER_LAW, THETA_TABLE, THETA_UNIFORM,
                     angular_constants, theta_sampler_params)

PURPOSE_INIT = 0
PURPOSE_DYNAMICS = 1
_MASK64 = (1 << 64) - 1
_MAX_EVENTS = 1 << 62

INITIAL_KINDS = ("gaussian", "two_gaussians", "uniform_ball", "file")


def stream_rng(stream, purpose):
    """Philox generator for the given (stream, purpose) key."""
    key = (int(stream) & _MASK64, int(purpose) & _MASK64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class Ensemble:
    """N particles with their clock, collision counter and dynamics RNG.

    Mutable single-owner state: one evolution runs on one thread.  Snapshots
    produced by run() carry rng=None (frozen copies).
    """

    velocities: np.ndarray
    time: float = 0.0
    collision_count: int = 0
    rng: Optional[np.random.Generator] = None
    seed: int = 0

    @property
    def n(self):
        return int(self.velocities.shape[0])

    @property
    def d(self):
        return int(self.velocities.shape[1])

    def copy(self, frozen=True):
        return Ensemble(self.velocities.copy(), self.time,
                        self.collision_count,
                        None if frozen else self.rng, self.seed)


@dataclass(frozen=True)
class InitialSpec:
    """Initial condition description; deterministic given seed.

    kinds: gaussian(mean, covariance_scale), two_gaussians(means, scale,
    mixture_weight), uniform_ball(radius), file(path).  covariance_scale is
    the per-component variance.
    """

    kind: str
    seed: int = 0
    mean: Tuple[float, ...] = (0.0,)
    covariance_scale: float = 1.0
    means: Optional[Tuple[Tuple[float, ...], Tuple[float, ...]]] = None
    mixture_weight: float = 0.5
    radius: float = 1.0
    path: Optional[str] = None

    @classmethod
    def gaussian(cls, mean=0.0, covariance_scale=1.0, seed=0):
        mean = tuple(np.atleast_1d(np.asarray(mean, dtype=float)))
        return cls(kind="gaussian", seed=seed, mean=mean,
                   covariance_scale=covariance_scale)

    @classmethod
    def two_gaussians(cls, means, scale=1.0, mixture_weight=0.5, seed=0):
        m1, m2 = means
        means = (tuple(np.atleast_1d(np.asarray(m1, dtype=float))),
                 tuple(np.atleast_1d(np.asarray(m2, dtype=float))))
        return cls(kind="two_gaussians", seed=seed, means=means,
                   covariance_scale=scale, mixture_weight=mixture_weight)

    @classmethod
    def uniform_ball(cls, radius, seed=0):
        return cls(kind="uniform_ball", seed=seed, radius=float(radius))

    @classmethod
    def from_file(cls, path, seed=0):
        return cls(kind="file", seed=seed, path=str(path))

    def with_seed(self, seed):
        return replace(self, seed=int(seed))


def _broadcast_mean(mean, d):
    arr = np.asarray(mean, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("initial mean has non-finite components")
    if arr.ndim == 0 or arr.shape == (1,):
        return np.full(d, float(arr.ravel()[0]) if arr.ndim else float(arr))
    if arr.shape != (d,):
        raise DomainError("initial mean must be scalar or length d")
    return arr


def init(spec, N, d):
    """Draw N i.i.d. velocities in R^d from an InitialSpec; deterministic
    given spec.seed.

    Raises:
        DomainError: for invalid sizes or non-finite parameters.
        FileError: when a file-mode path cannot be read.
    """
    N = int(N)
    d = int(d)
    if N < 2:
        raise DomainError("ensembles need N >= 2")
    if d < 2:
        raise DomainError("dimension must be >= 2")
    if spec.kind not in INITIAL_KINDS:
        raise DomainError("unknown initial kind %r" % (spec.kind,))
    rng = stream_rng(spec.seed, PURPOSE_INIT)
    if spec.kind == "gaussian":
        if not (spec.covariance_scale >= 0.0
                and math.isfinite(spec.covariance_scale)):
            raise DomainError("covariance_scale must be finite and >= 0")
        mu = _broadcast_mean(spec.mean, d)
        vel = mu + math.sqrt(spec.covariance_scale) \
            * rng.standard_normal((N, d))
    elif spec.kind == "two_gaussians":
        if spec.means is None:
            raise DomainError("two_gaussians needs two means")
        if not (0.0 <= spec.mixture_weight <= 1.0):
            raise DomainError("mixture_weight must lie in [0, 1]")
        if not (spec.covariance_scale >= 0.0
                and math.isfinite(spec.covariance_scale)):
            raise DomainError("covariance_scale must be finite and >= 0")
        mu1 = _broadcast_mean(spec.means[0], d)
        mu2 = _broadcast_mean(spec.means[1], d)
        pick = rng.random(N) < spec.mixture_weight
        normals = rng.standard_normal((N, d))
        vel = np.where(pick[:, None], mu1, mu2) \
            + math.sqrt(spec.covariance_scale) * normals
    elif spec.kind == "uniform_ball":
        if not (spec.radius >= 0.0 and math.isfinite(spec.radius)):
            raise DomainError("radius must be finite and >= 0")
        g = rng.standard_normal((N, d))
        nrm = np.sqrt(np.sum(g * g, axis=1))
        nrm[nrm < 1e-300] = 1.0
        u = rng.random(N)
        vel = spec.radius * (u ** (1.0 / d))[:, None] * (g / nrm[:, None])
    else:
        if spec.path is None:
            raise DomainError("file mode needs a path")
        try:
            with open(spec.path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise FileError("cannot read %s: %s" % (spec.path, exc))
        loaded = load_snapshot(text)
        vel = loaded.velocities
        if vel.shape != (N, d):
            raise DomainError(
                "file %s holds %s velocities, expected (%d, %d)"
                % (spec.path, vel.shape, N, d))
    vel = np.ascontiguousarray(vel, dtype=np.float64)
    if not np.all(np.isfinite(vel)):
        raise DomainError("initial velocities contain non-finite values")
    return Ensemble(velocities=vel, time=0.0, collision_count=0,
                    rng=stream_rng(spec.seed, PURPOSE_DYNAMICS),
                    seed=spec.seed)


def pair_majorant(e, k):
    """Lambda with Lambda >= Phi(|v_i - v_j|) for every pair.

    gamma = 0: C.  gamma > 0: C (2 sqrt(E_tot))^gamma, collision invariant.
    gamma < 0: phi_cap.
    """
    if k.gamma == 0.0:
        return k.phi_upper
    if k.gamma > 0.0:
        etot = float(np.sum(e.velocities * e.velocities))
        return k.phi_upper * (2.0 * math.sqrt(etot)) ** k.gamma
    return k.cap


# Backwards-compatible spec name: the per-pair thinning majorant.
majorant_rate = pair_majorant


def total_event_rate(e, k, lam=None):
    """Candidate-event rate (N-1)/2 * Lambda * S_eps of the thinned clock."""
    if lam is None:
        lam = pair_majorant(e, k)
    s_eps = angular_constants(k.angular, k.dimension).s_eps
    return 0.5 * (e.n - 1) * lam * s_eps


@jit
def _phi_scalar(z, gamma, c, cap):
    if gamma == 0.0:
        return c
    if gamma > 0.0:
        return c * z ** gamma
    if z <= 0.0:
        return cap
    val = c * z ** gamma
    if val > cap:
        return cap
    return val


@jit
def _theta_inv(u, mode, c0, c1, c2, tab_u, tab_th):
    if mode == 0:
        return (c0 - u * c1) ** c2
    if mode == 1:
        return c0 + u * c1
    return np.interp(u, tab_u, tab_th)


@jit
def _draw_xi(gen, d):
    out = np.empty(d - 1)
    if d == 2:
        out[0] = 2.0 * gen.integers(0, 2) - 1.0
        return out
    nrm = 0.0
    for k in range(d - 1):
        g = gen.standard_normal()
        out[k] = g
        nrm += g * g
    nrm = math.sqrt(nrm)
    if nrm < 1e-300:
        out[0] = 1.0
        for k in range(1, d - 1):
            out[k] = 0.0
        return out
    for k in range(d - 1):
        out[k] /= nrm
    return out


@jit
def _evolve(vel, t, t_stop, max_events, total_rate, lam, gamma, cphi, cap,
            th_mode, th_c0, th_c1, th_c2, tab_u, tab_th, gen, align_tol):
    """Advance the ensemble to t_stop (or max_events).  Returns
    (time, candidate_events, accepted_collisions); mutates vel in place."""
    N = vel.shape[0]
    d = vel.shape[1]
    events = 0
    coll = 0
    while events < max_events:
        dt = gen.standard_exponential() / total_rate
        if t + dt > t_stop:
            t = t_stop
            break
        t = t + dt
        events += 1
        i = int(gen.integers(0, N))
        j = int(gen.integers(0, N - 1))
        if j >= i:
            j += 1
        u = gen.random()
        z2 = 0.0
        for k in range(d):
            z2 += (vel[i, k] - vel[j, k]) ** 2
        ph = _phi_scalar(math.sqrt(z2), gamma, cphi, cap)
        if u * lam >= ph:
            continue
        uth = gen.random()
        theta = _theta_inv(uth, th_mode, th_c0, th_c1, th_c2, tab_u, tab_th)
        xi = _draw_xi(gen, d)
        vp, vsp = _collide(vel[i], vel[j], theta, xi, align_tol)
        for k in range(d):
            vel[i, k] = vp[k]
            vel[j, k] = vsp[k]
        coll += 1
    return t, events, coll


def _advance(e, k, t_stop, max_events):
    if e.rng is None:
        raise DomainError("ensemble has no dynamics RNG (frozen snapshot)")
    lam = pair_majorant(e, k)
    total = total_event_rate(e, k, lam)
    if total <= 0.0:
        e.time = t_stop if math.isfinite(t_stop) else math.inf
        return 0
    mode, c0, c1, c2, tab_u, tab_th = theta_sampler_params(k.angular)
    t, _, coll = _evolve(
        e.velocities, e.time, t_stop, max_events, total, lam, k.gamma,
        k.phi_upper, k.cap, mode, c0, c1, c2, tab_u, tab_th, e.rng,
        ALIGN_TOL)
    e.time = float(t)
    e.collision_count += int(coll)
    return int(coll)


def step(e, k):
    """One candidate event: advance the clock, apply at most one collision.

    Mutates and returns e.
    """
    if k.dimension != e.d:
        raise DomainError("kernel dimension does not match ensemble")
    _advance(e, k, math.inf, 1)
    return e


def run(e, k, T, checkpoints):
    """Evolve e through [e.time, T], returning frozen snapshots at the
    requested checkpoint times.

    Checkpoints must be sorted, within [e.time, T].  The thinned clock is
    restarted at each checkpoint (memoryless, unbiased).
    """
    if k.dimension != e.d:
        raise DomainError("kernel dimension does not match ensemble")
    T = float(T)
    cps = [float(c) for c in checkpoints]
    if any(cps[i] > cps[i + 1] for i in range(len(cps) - 1)):
        raise DomainError("checkpoints must be sorted")
    if cps and (cps[0] < e.time or cps[-1] > T):
        raise DomainError("checkpoints must lie within [%g, %g]"
                          % (e.time, T))
    out = []
    for tc in cps:
        if tc > e.time:
            _advance(e, k, tc, _MAX_EVENTS)
        e.time = tc
        out.append(e.copy())
    if T > e.time:
        _advance(e, k, T, _MAX_EVENTS)
    return out


def total_momentum(e):
    return e.velocities.sum(axis=0)


def total_energy(e):
    return float(np.sum(e.velocities * e.velocities))


def _fmt(x):
    return "%.17g" % x


def snapshot_text(e):
    """Serialize an ensemble in the snapshot dump format."""
    lines = ["t=%s N=%d d=%d seed=%d" % (_fmt(e.time), e.n, e.d, e.seed)]
    for row in e.velocities:
        lines.append(" ".join(_fmt(x) for x in row))
    return "\n".join(lines) + "\n"


def load_snapshot(text):
    """Parse snapshot text (with or without the header line) into a frozen
    Ensemble."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DomainError("empty snapshot")
    t = 0.0
    seed = 0
    if lines[0].startswith("t="):
        head = dict(item.split("=", 1) for item in lines[0].split())
        try:
            t = float(head["t"])
            n = int(head["N"])
            d = int(head["d"])
            seed = int(head.get("seed", "0"))
        except (KeyError, ValueError):
            raise DomainError("malformed snapshot header: %r" % lines[0])
        body = lines[1:]
        if len(body) != n:
            raise DomainError("snapshot header says N=%d but %d rows follow"
                              % (n, len(body)))
    else:
        body = lines
    try:
        vel = np.array([[float(x) for x in ln.split()] for ln in body],
                       dtype=np.float64)
    except ValueError:
        raise DomainError("snapshot rows must be whitespace-separated reals")
    if vel.ndim != 2:
        raise DomainError("snapshot rows have inconsistent lengths")
    if lines[0].startswith("t=") and vel.shape[1] != d:
        raise DomainError("snapshot header says d=%d but rows have %d "
                          "components" % (d, vel.shape[1]))
    return Ensemble(velocities=np.ascontiguousarray(vel), time=t,
                    collision_count=0, rng=None, seed=seed)
