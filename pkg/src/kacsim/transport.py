"""Exact Kantorovich-Rubinstein (W1) distance between equal-size empirical
measures, via min-cost perfect matching.

Costs are raw Euclidean distances; the 1/N probability normalization is
applied once at the plan level.  The solver is a shortest-augmenting-path
assignment algorithm maintaining dual potentials (u, w) with
u_i + w_j <= |a_i - b_j| everywhere and equality on matched pairs, so every
plan carries a verifiable optimality certificate.  O(N^3) worst case; the
supported envelope is N <= 5000.

Ties are broken deterministically: among all optimal matchings (equivalently,
all perfect matchings of the tight graph u_i + w_j = c_ij) the
lexicographically smallest assignment vector is returned.  Tightness is
tested at 1e-12 * (1 + max cost), which captures exact and
floating-point-identical ties only.
"""

from dataclasses import dataclass
from functools import lru_cache
from itertools import permutations
from typing import Optional, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from ._jit import jit
from .errors import MissingCertificate, SizeMismatch, TooLarge

BRUTE_FORCE_LIMIT = 9
SUPPORTED_N = 5000
DUALITY_TOL = 1e-9
TIE_TOL = 1e-12


@dataclass
class TransportPlan:
    """A perfect matching between two N-point clouds with its W1 cost.

    matching[i] = index in B assigned to A[i]; cost = (1/N) sum of matched
    distances; dual_potentials = (u, w) optimality certificate, or None when
    the producing algorithm is certificate-free.
    """

    matching: np.ndarray
    cost: float
    dual_potentials: Optional[Tuple[np.ndarray, np.ndarray]] = None

    @property
    def n(self):
        return int(self.matching.shape[0])


def _as_cloud(points, name):
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise SizeMismatch("%s must be an (N, d) array of points" % name)
    if not np.all(np.isfinite(arr)):
        raise SizeMismatch("%s contains non-finite coordinates" % name)
    return np.ascontiguousarray(arr)


def _clouds(A, B):
    A = _as_cloud(A, "A")
    B = _as_cloud(B, "B")
    if A.shape != B.shape:
        raise SizeMismatch("point clouds differ in shape: %s vs %s"
                           % (A.shape, B.shape))
    return A, B


@jit
def _sap(cost):
    """Shortest augmenting path assignment (row potentials u, column
    potentials v; u_i + v_j <= cost_ij with equality on matched pairs).
    1-based arrays with column 0 as sentinel."""
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, np.int64)
    way = np.zeros(n + 1, np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, np.bool_)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    match = np.empty(n, np.int64)
    ru = np.empty(n)
    rv = np.empty(n)
    for j in range(1, n + 1):
        match[p[j] - 1] = j - 1
    for i in range(n):
        ru[i] = u[i + 1]
        rv[i] = v[i + 1]
    return match, ru, rv


def _augment(r0, adj, row_of, col_of, locked, visited):
    """Iterative Kuhn augmentation for row r0 over the tight graph,
    avoiding locked and visited columns.  Mutates row_of/col_of only on
    success."""
    stack_row = [r0]
    stack_ci = [0]
    path_cols = []
    while stack_row:
        r = stack_row[-1]
        cand = adj[r]
        ci = stack_ci[-1]
        descended = False
        while ci < cand.shape[0]:
            c = int(cand[ci])
            ci += 1
            if locked[c] or visited[c]:
                continue
            visited[c] = True
            if row_of[c] < 0:
                path_cols.append(c)
                for q in range(len(stack_row)):
                    row_of[path_cols[q]] = stack_row[q]
                    col_of[stack_row[q]] = path_cols[q]
                return True
            stack_ci[-1] = ci
            path_cols.append(c)
            stack_row.append(int(row_of[c]))
            stack_ci.append(0)
            descended = True
            break
        if not descended:
            stack_row.pop()
            stack_ci.pop()
            if path_cols:
                path_cols.pop()
    return False


def _lex_minimize(cost, match, u, v):
    """Replace an optimal matching by the lexicographically smallest one.

    Every optimal matching is contained in the tight graph of the optimal
    duals (complementary slackness), and every perfect matching of the tight
    graph is optimal, so a row-by-row greedy choice with augmenting-path
    feasibility repair yields the lex-min optimum.
    """
    n = match.shape[0]
    if n == 0:
        return match
    tol = TIE_TOL * (1.0 + float(np.max(cost)))
    slack = cost - u[:, None] - v[None, :]
    adj = [np.flatnonzero(slack[i] <= tol) for i in range(n)]
    col_of = match.astype(np.int64).copy()
    row_of = np.empty(n, np.int64)
    row_of[col_of] = np.arange(n)
    locked = np.zeros(n, np.bool_)
    for i in range(n):
        for c in adj[i]:
            j = int(c)
            if locked[j]:
                continue
            old = int(col_of[i])
            if old == j:
                break
            r = int(row_of[j])
            row_of[old] = -1
            row_of[j] = i
            col_of[i] = j
            visited = np.zeros(n, np.bool_)
            visited[j] = True
            if _augment(r, adj, row_of, col_of, locked, visited):
                break
            row_of[j] = r
            col_of[i] = old
            row_of[old] = i
        locked[col_of[i]] = True
    return col_of


def w1_exact(A, B):
    """Optimal W1 matching with a dual certificate.

    Args:
        A, B: arrays of N points in R^d (1-d inputs are treated as scalar
            points).

    Returns:
        TransportPlan with the lexicographically smallest optimal matching.

    Raises:
        SizeMismatch: if shapes differ.
    """
    A, B = _clouds(A, B)
    n = A.shape[0]
    if n == 0:
        return TransportPlan(np.empty(0, np.int64), 0.0,
                             (np.empty(0), np.empty(0)))
    cost = cdist(A, B)
    match, u, v = _sap(cost)
    match = _lex_minimize(cost, match, u, v)
    total = float(cost[np.arange(n), match].sum())
    return TransportPlan(match, total / n, (u, v))


@lru_cache(maxsize=None)
def _perm_array(n):
    return np.array(list(permutations(range(n))), dtype=np.int64)


def w1_bruteforce(A, B):
    """Exhaustive minimum over all N! matchings; the test oracle.

    Raises:
        TooLarge: if N > 9.
        SizeMismatch: if shapes differ.
    """
    A, B = _clouds(A, B)
    n = A.shape[0]
    if n > BRUTE_FORCE_LIMIT:
        raise TooLarge("brute force supports N <= %d" % BRUTE_FORCE_LIMIT)
    if n == 0:
        return TransportPlan(np.empty(0, np.int64), 0.0)
    cost = cdist(A, B)
    perms = _perm_array(n)
    totals = cost[np.arange(n)[None, :], perms].sum(axis=1)
    best = int(np.argmin(totals))
    return TransportPlan(perms[best].copy(), float(totals[best]) / n)


def w1_sorted_1d(A, B):
    """W1 between scalar samples by monotone rearrangement."""
    a = np.asarray(A, dtype=float).ravel()
    b = np.asarray(B, dtype=float).ravel()
    if a.shape != b.shape:
        raise SizeMismatch("scalar samples differ in length")
    if a.shape[0] == 0:
        return 0.0
    return float(np.mean(np.abs(np.sort(a) - np.sort(b))))


def verify_duality(plan, A, B, tol=DUALITY_TOL):
    """Check the optimality certificate of a plan against its clouds.

    True iff the potentials are feasible (u_i + w_j <= c_ij + tol for all
    pairs), the matching is a permutation whose cost matches plan.cost, and
    primal equals dual within tol.

    Raises:
        MissingCertificate: if the plan has no potentials.
        SizeMismatch: if the plan does not fit the clouds.
    """
    if plan.dual_potentials is None:
        raise MissingCertificate("plan carries no dual potentials")
    A, B = _clouds(A, B)
    n = A.shape[0]
    if plan.n != n:
        raise SizeMismatch("plan size %d does not match clouds of size %d"
                           % (plan.n, n))
    u, w = plan.dual_potentials
    if u.shape[0] != n or w.shape[0] != n:
        raise MissingCertificate("potentials have wrong length")
    match = plan.matching
    if np.any(np.sort(match) != np.arange(n)):
        return False
    cost = cdist(A, B)
    if np.any(u[:, None] + w[None, :] > cost + tol):
        return False
    primal = float(cost[np.arange(n), match].sum()) / n
    if abs(primal - plan.cost) > tol:
        return False
    dual = (float(u.sum()) + float(w.sum())) / n
    return abs(primal - dual) <= tol


def plan_to_rows(plan, A, B):
    """Matched pairs as (i, j, cost_ij) rows for serialization."""
    A, B = _clouds(A, B)
    if plan.n != A.shape[0]:
        raise SizeMismatch("plan size does not match clouds")
    out = []
    for i, j in enumerate(plan.matching):
        out.append((int(i), int(j),
                    float(np.linalg.norm(A[i] - B[int(j)]))))
    return out
