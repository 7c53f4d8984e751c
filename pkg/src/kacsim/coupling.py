"""Coupled evolution of two particle systems under common collision noise.

Both systems share one candidate-event clock at the joint majorant
Lambda = max of the two single-system majorants.  Each candidate picks a
pair (i, j) and a uniform u; with m = min(Phi_ij, Phitilde_ij) and
M = max(Phi_ij, Phitilde_ij) the event routes to one of three channels:

  u Lambda <  m : both systems collide with the same (theta, xi), the
                  second system using the re-indexed direction
                  xi_zero(v_i - v_j, vt_i - vt_j, xi);
  m <= u Lambda < M : only the system with the larger Phi collides;
  u Lambda >= M : fictitious event.

Each marginal therefore sees exactly its own thinned dynamics.  If one
system's pair is at zero separation its collision is the identity and the
other system uses xi directly.

The ledger records, at each checkpoint: the exact matching distance d1, the
mean distance of the index pairing in force (h_pair, always >= d1), the
contraction integrand H evaluated on the optimal matching, its trapezoid
cumulative int_H, and rhs_bound = d1(0) + int_H (optionally plus the
grazing-truncation drift alpha_eps * t, kept in a separate column contract).
The verification predicate is d1(t) <= rhs_bound + tolerance, row by row.

Re-pairing: with repair=True (default) the second system's rows are permuted
to the optimal matching at every checkpoint, keeping the index pairing
near-optimal; the marginal law is exchangeable so relabeling is harmless.
H is always evaluated on the optimal matching, so the recorded series do not
depend on the repair flag at the checkpoint itself.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from ._jit import jit
from .errors import DomainError, PlanMismatch
from .ensemble import (PURPOSE_DYNAMICS, Ensemble, _draw_xi, _phi_scalar,
                       _theta_inv, pair_majorant, stream_rng,
                       total_event_rate)
from .geometry import ALIGN_TOL, ANTIPODAL_TOL, _collide, _xi_zero
from .kernel import (angular_constants, phi, theta_sampler_params,
                     unit_sphere_area)

LEDGER_COLUMNS = ("t", "d1", "h_pair", "H", "int_H", "rhs_bound",
                  "n_both", "n_f", "n_ftilde", "n_fict")

_MAX_EVENTS = 1 << 62


@dataclass
class CoupledEnsemble:
    """A pair of equal-size ensembles with shared clock, RNG and channel
    counters.  The marginal Ensembles carry no RNG of their own."""

    first: Ensemble
    second: Ensemble
    rng: np.random.Generator
    time: float = 0.0
    n_both: int = 0
    n_f: int = 0
    n_ftilde: int = 0
    n_fict: int = 0

    @property
    def n(self):
        return self.first.n

    @property
    def d(self):
        return self.first.d


def couple(first, second, stream=0):
    """Join two ensembles into a coupled pair driven by one Philox stream."""
    if first.velocities.shape != second.velocities.shape:
        raise DomainError("coupled ensembles must have identical (N, d)")
    if first.time != second.time:
        raise DomainError("coupled ensembles must start at the same time")
    a = first.copy()
    b = second.copy()
    return CoupledEnsemble(first=a, second=b,
                           rng=stream_rng(stream, PURPOSE_DYNAMICS),
                           time=first.time)


def mean_pairing_distance(ce):
    """(1/N) sum |v_i - vt_i| under the index pairing currently in force."""
    diff = ce.first.velocities - ce.second.velocities
    return float(np.mean(np.sqrt(np.sum(diff * diff, axis=1))))


@jit
def _both_collide(v, vt, i, j, theta, xi, align_tol, antip_tol):
    """Apply the shared-(theta, xi) both-channel collision to pair (i, j)
    of two systems; the second uses the re-indexed sphere direction."""
    d = v.shape[1]
    z2 = 0.0
    zt2 = 0.0
    for k in range(d):
        z2 += (v[i, k] - v[j, k]) ** 2
        zt2 += (vt[i, k] - vt[j, k]) ** 2
    if z2 == 0.0:
        vp, vsp = _collide(vt[i], vt[j], theta, xi, align_tol)
        for k in range(d):
            vt[i, k] = vp[k]
            vt[j, k] = vsp[k]
        return
    if zt2 == 0.0:
        vp, vsp = _collide(v[i], v[j], theta, xi, align_tol)
        for k in range(d):
            v[i, k] = vp[k]
            v[j, k] = vsp[k]
        return
    X = np.empty(d)
    Xt = np.empty(d)
    for k in range(d):
        X[k] = v[i, k] - v[j, k]
        Xt[k] = vt[i, k] - vt[j, k]
    xi0 = _xi_zero(X, Xt, xi, align_tol, antip_tol)
    vp, vsp = _collide(v[i], v[j], theta, xi, align_tol)
    wp, wsp = _collide(vt[i], vt[j], theta, xi0, align_tol)
    for k in range(d):
        v[i, k] = vp[k]
        v[j, k] = vsp[k]
        vt[i, k] = wp[k]
        vt[j, k] = wsp[k]


@jit
def _evolve_coupled(v, vt, t, t_stop, max_events, total_rate, lam, gamma,
                    cphi, cap, th_mode, th_c0, th_c1, th_c2, tab_u, tab_th,
                    gen, align_tol, antip_tol, counts, colls):
    """Advance the coupled pair to t_stop (or max_events).  counts holds
    (both, f_only, ftilde_only, fictitious); colls the per-system accepted
    collision totals.  Returns (time, candidate_events)."""
    N = v.shape[0]
    d = v.shape[1]
    events = 0
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
        zt2 = 0.0
        for k in range(d):
            z2 += (v[i, k] - v[j, k]) ** 2
            zt2 += (vt[i, k] - vt[j, k]) ** 2
        ph = _phi_scalar(math.sqrt(z2), gamma, cphi, cap)
        pht = _phi_scalar(math.sqrt(zt2), gamma, cphi, cap)
        m = ph if ph < pht else pht
        M = ph if ph > pht else pht
        ulam = u * lam
        if ulam >= M:
            counts[3] += 1
            continue
        uth = gen.random()
        theta = _theta_inv(uth, th_mode, th_c0, th_c1, th_c2, tab_u, tab_th)
        xi = _draw_xi(gen, d)
        if ulam < m:
            counts[0] += 1
            colls[0] += 1
            colls[1] += 1
            _both_collide(v, vt, i, j, theta, xi, align_tol, antip_tol)
        elif ph >= pht:
            counts[1] += 1
            colls[0] += 1
            vp, vsp = _collide(v[i], v[j], theta, xi, align_tol)
            for k in range(d):
                v[i, k] = vp[k]
                v[j, k] = vsp[k]
        else:
            counts[2] += 1
            colls[1] += 1
            vp, vsp = _collide(vt[i], vt[j], theta, xi, align_tol)
            for k in range(d):
                vt[i, k] = vp[k]
                vt[j, k] = vsp[k]
    return t, events



def _advance_coupled(ce, k, t_stop, max_events):
    lam = max(pair_majorant(ce.first, k), pair_majorant(ce.second, k))
    total = 0.5 * (ce.n - 1) * lam * angular_constants(k.angular,
                                                       k.dimension).s_eps
    if total <= 0.0:
        ce.time = t_stop if math.isfinite(t_stop) else math.inf
        ce.first.time = ce.time
        ce.second.time = ce.time
        return
    mode, c0, c1, c2, tab_u, tab_th = theta_sampler_params(k.angular)
    counts = np.zeros(4, dtype=np.int64)
    colls = np.zeros(2, dtype=np.int64)
    t, _ = _evolve_coupled(
        ce.first.velocities, ce.second.velocities, ce.time, t_stop,
        max_events, total, lam, k.gamma, k.phi_upper, k.cap, mode, c0, c1,
        c2, tab_u, tab_th, ce.rng, ALIGN_TOL, ANTIPODAL_TOL, counts, colls)
    ce.time = float(t)
    ce.first.time = ce.time
    ce.second.time = ce.time
    ce.n_both += int(counts[0])
    ce.n_f += int(counts[1])
    ce.n_ftilde += int(counts[2])
    ce.n_fict += int(counts[3])
    ce.first.collision_count += int(colls[0])
    ce.second.collision_count += int(colls[1])


def coupled_step(ce, k):
    """One shared candidate event; mutates and returns ce."""
    if k.dimension != ce.d:
        raise DomainError("kernel dimension does not match coupled ensemble")
    _advance_coupled(ce, k, math.inf, 1)
    return ce


def _h_integrand(v, vt, k):
    """Contraction integrand for matched pairs (v_i, vt_i):

    (kappa1_eps |S^{d-2}| / 2) (1/N^2) sum_ij [ 8 min(Phi_ij, Phit_ij)
    |v_i - vt_i| + (Phi_ij - Phit_ij)_+ |v_i - v_j| + (Phit_ij - Phi_ij)_+
    |vt_i - vt_j| ], diagonal included.
    """
    n = v.shape[0]
    consts = angular_constants(k.angular, k.dimension)
    pref = 0.5 * consts.kappa1_eps * unit_sphere_area(k.dimension - 2)
    dz = v[:, None, :] - v[None, :, :]
    z = np.sqrt(np.sum(dz * dz, axis=2))
    dzt = vt[:, None, :] - vt[None, :, :]
    zt = np.sqrt(np.sum(dzt * dzt, axis=2))
    p = phi(k, z)
    pt = phi(k, zt)
    pair = np.sqrt(np.sum((v - vt) ** 2, axis=1))
    both = 8.0 * float(np.minimum(p, pt).sum(axis=1) @ pair)
    fonly = float(np.sum(np.maximum(p - pt, 0.0) * z))
    gonly = float(np.sum(np.maximum(pt - p, 0.0) * zt))
    return pref * (both + fonly + gonly) / (n * n)


def evaluate_H(plan, A, B, k):
    """Contraction integrand H for the matching in plan between ensembles
    A and B.

    Raises:
        PlanMismatch: if the plan size differs from N.
    """
    n = A.n
    if B.n != n or len(plan.matching) != n:
        raise PlanMismatch("plan matches %d pairs, ensembles have %d and %d"
                           % (len(plan.matching), n, B.n))
    return _h_integrand(A.velocities, B.velocities[plan.matching], k)


@dataclass
class CouplingLedger:
    """Checkpoint time series of a coupled run.

    Column semantics (also the CSV column order): t; d1 exact matching
    distance; h_pair mean distance of the index pairing in force just
    before any re-pairing; H integrand on the optimal matching; int_H
    trapezoid cumulative of H from the run start; rhs_bound = d1(0) + int_H
    (+ alpha_eps * (t - t0) when drift_in_rhs); cumulative channel counts.
    alpha_drift is reported alongside regardless of the flag.
    """

    t: np.ndarray
    d1: np.ndarray
    h_pair: np.ndarray
    H: np.ndarray
    int_H: np.ndarray
    rhs_bound: np.ndarray
    n_both: np.ndarray
    n_f: np.ndarray
    n_ftilde: np.ndarray
    n_fict: np.ndarray
    alpha_drift: np.ndarray
    d1_initial: float
    drift_in_rhs: bool = False

    def rows(self):
        cols = [getattr(self, name) for name in LEDGER_COLUMNS]
        return [tuple(col[i] for col in cols) for i in range(len(self.t))]

    def predicate_slack(self):
        """rhs_bound - d1 per checkpoint; nonnegative rows satisfy the
        contraction inequality."""
        return self.rhs_bound - self.d1

    def predicate_holds(self, tol=0.0):
        return bool(np.all(self.d1 <= self.rhs_bound + tol))


class _LedgerBuilder:
    def __init__(self, t0, d1_0, H0, alpha_eps, drift_in_rhs):
        self.t0 = float(t0)
        self.d1_0 = float(d1_0)
        self.alpha_eps = float(alpha_eps)
        self.drift_in_rhs = bool(drift_in_rhs)
        self.prev_t = float(t0)
        self.prev_H = float(H0)
        self.acc = 0.0
        self.rows = {name: [] for name in LEDGER_COLUMNS}
        self.rows["alpha_drift"] = []

    def add(self, t, d1, h_pair, H, counters):
        t = float(t)
        if t < self.prev_t:
            raise DomainError("ledger rows must advance in time")
        self.acc += 0.5 * (self.prev_H + float(H)) * (t - self.prev_t)
        self.prev_t = t
        self.prev_H = float(H)
        drift = self.alpha_eps * (t - self.t0)
        rhs = self.d1_0 + self.acc + (drift if self.drift_in_rhs else 0.0)
        r = self.rows
        r["t"].append(t)
        r["d1"].append(float(d1))
        r["h_pair"].append(float(h_pair))
        r["H"].append(float(H))
        r["int_H"].append(self.acc)
        r["rhs_bound"].append(rhs)
        r["n_both"].append(int(counters[0]))
        r["n_f"].append(int(counters[1]))
        r["n_ftilde"].append(int(counters[2]))
        r["n_fict"].append(int(counters[3]))
        r["alpha_drift"].append(drift)

    def build(self):
        r = self.rows
        return CouplingLedger(
            t=np.array(r["t"]), d1=np.array(r["d1"]),
            h_pair=np.array(r["h_pair"]), H=np.array(r["H"]),
            int_H=np.array(r["int_H"]), rhs_bound=np.array(r["rhs_bound"]),
            n_both=np.array(r["n_both"], dtype=np.int64),
            n_f=np.array(r["n_f"], dtype=np.int64),
            n_ftilde=np.array(r["n_ftilde"], dtype=np.int64),
            n_fict=np.array(r["n_fict"], dtype=np.int64),
            alpha_drift=np.array(r["alpha_drift"]),
            d1_initial=self.d1_0, drift_in_rhs=self.drift_in_rhs)


def run_coupled(ce, k, T, checkpoints, repair=True, drift_in_rhs=False,
                observer=None):
    """Evolve the coupled pair through [ce.time, T], recording a ledger row
    at each requested checkpoint.

    The optimal matching is recomputed at every checkpoint (O(N^3) solve);
    between checkpoints the index pairing is fixed.  With repair=True the
    second system's rows are permuted to that matching after each
    checkpoint row is recorded.  observer, when given, is called as
    observer(t, ce) once per recorded row (read-only diagnostics hook).
    """
    from .transport import w1_exact

    if k.dimension != ce.d:
        raise DomainError("kernel dimension does not match coupled ensemble")
    T = float(T)
    cps = [float(c) for c in checkpoints]
    if any(cps[i] > cps[i + 1] for i in range(len(cps) - 1)):
        raise DomainError("checkpoints must be sorted")
    if cps and (cps[0] < ce.time or cps[-1] > T):
        raise DomainError("checkpoints must lie within [%g, %g]"
                          % (ce.time, T))
    consts = angular_constants(k.angular, k.dimension)

    def observe():
        h = mean_pairing_distance(ce)
        plan = w1_exact(ce.first.velocities, ce.second.velocities)
        H = evaluate_H(plan, ce.first, ce.second, k)
        return h, plan, H

    h0, plan0, H0 = observe()
    builder = _LedgerBuilder(ce.time, plan0.cost, H0, consts.alpha_eps,
                             drift_in_rhs)
    if repair:
        ce.second.velocities = np.ascontiguousarray(
            ce.second.velocities[plan0.matching])
    pending = (h0, plan0, H0)
    for tc in cps:
        if tc > ce.time:
            _advance_coupled(ce, k, tc, _MAX_EVENTS)
            pending = None
        ce.time = tc
        ce.first.time = tc
        ce.second.time = tc
        if pending is None:
            h, plan, H = observe()
        else:
            h, plan, H = pending
            if repair:
                h = mean_pairing_distance(ce)
        counters = (ce.n_both, ce.n_f, ce.n_ftilde, ce.n_fict)
        builder.add(tc, plan.cost, h, H, counters)
        if observer is not None:
            observer(tc, ce)
        if repair and pending is None:
            ce.second.velocities = np.ascontiguousarray(
                ce.second.velocities[plan.matching])
        pending = None
    if T > ce.time:
        _advance_coupled(ce, k, T, _MAX_EVENTS)
    return builder.build()


# ---------------------------------------------------------------------------
# nested common-noise truncation levels (Maxwell kernels)


@jit
def _evolve_levels(V, Vt, eps_arr, t, t_stop, max_events, total_rate,
                   th_mode, th_c0, th_c1, th_c2, tab_u, tab_th, gen,
                   align_tol, antip_tol, applied):
    """One master candidate stream at the finest truncation drives L coupled
    Maxwell systems; a level applies an event iff theta clears its own
    cutoff.  Each level then sees exactly its own truncated dynamics, and
    levels share every surviving collision (common noise)."""
    L = V.shape[0]
    N = V.shape[1]
    events = 0
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
        gen.random()  # acceptance slot: Maxwell majorant equals Phi
        uth = gen.random()
        theta = _theta_inv(uth, th_mode, th_c0, th_c1, th_c2, tab_u, tab_th)
        xi = _draw_xi(gen, V.shape[2])
        for l in range(L):
            if theta >= eps_arr[l]:
                _both_collide(V[l], Vt[l], i, j, theta, xi, align_tol,
                              antip_tol)
                applied[l] += 1
    return t, events


def run_truncation_levels(first, second, k, eps_levels, T, checkpoints,
                          stream=0, drift_in_rhs=False):
    """Coupled runs at several grazing cutoffs under one master noise
    stream; returns {eps: CouplingLedger}.

    Only constant-Phi (gamma = 0) kernels qualify: acceptance is then
    independent of the state, so conditioning the finest-cutoff stream on
    theta >= eps reproduces each coarser dynamics exactly.  Index re-pairing
    is disabled to keep the common-noise alignment across levels.
    """
    from .transport import w1_exact

    if k.gamma != 0.0:
        raise DomainError("nested truncation levels require gamma = 0")
    eps_levels = sorted(float(e) for e in eps_levels)
    if len(set(eps_levels)) != len(eps_levels):
        raise DomainError("truncation levels must be distinct")
    finest = eps_levels[0]
    if not (0.0 < finest and eps_levels[-1] < math.pi):
        raise DomainError("truncation levels must lie in (0, pi)")
    if first.velocities.shape != second.velocities.shape:
        raise DomainError("coupled ensembles must have identical (N, d)")
    kf = replace(k, angular=replace(k.angular, eps_theta=finest))
    L = len(eps_levels)
    N, d = first.velocities.shape
    V = np.ascontiguousarray(
        np.repeat(first.velocities[None, :, :], L, axis=0))
    Vt = np.ascontiguousarray(
        np.repeat(second.velocities[None, :, :], L, axis=0))
    eps_arr = np.array(eps_levels)
    gen = stream_rng(stream, PURPOSE_DYNAMICS)
    dummy = Ensemble(first.velocities, 0.0, 0, None, 0)
    total = total_event_rate(dummy, kf)
    mode, c0, c1, c2, tab_u, tab_th = theta_sampler_params(kf.angular)

    level_kernels = [replace(k, angular=replace(k.angular, eps_theta=e))
                     for e in eps_levels]
    builders = []
    applied = np.zeros(L, dtype=np.int64)
    master_events = 0

    def level_obs(l):
        plan = w1_exact(V[l], Vt[l])
        H = _h_integrand(V[l], Vt[l][plan.matching], level_kernels[l])
        diff = V[l] - Vt[l]
        h = float(np.mean(np.sqrt(np.sum(diff * diff, axis=1))))
        return h, plan.cost, H

    for l in range(L):
        h, d1, H = level_obs(l)
        consts = angular_constants(level_kernels[l].angular, d)
        builders.append(_LedgerBuilder(0.0, d1, H, consts.alpha_eps,
                                       drift_in_rhs))
    T = float(T)
    cps = [float(c) for c in checkpoints]
    if any(cps[i] > cps[i + 1] for i in range(len(cps) - 1)):
        raise DomainError("checkpoints must be sorted")
    if cps and (cps[0] < 0.0 or cps[-1] > T):
        raise DomainError("checkpoints must lie within [0, %g]" % T)
    t = 0.0
    for tc in cps:
        if tc > t:
            t, ev = _evolve_levels(V, Vt, eps_arr, t, tc, _MAX_EVENTS,
                                   total, mode, c0, c1, c2, tab_u, tab_th,
                                   gen, ALIGN_TOL, ANTIPODAL_TOL, applied)
            master_events += int(ev)
        for l in range(L):
            h, d1, H = level_obs(l)
            counters = (int(applied[l]), 0, 0, master_events - int(applied[l]))
            builders[l].add(tc, d1, h, H, counters)
    return {eps_levels[l]: builders[l].build() for l in range(L)}
