"""Exact collision kinematics on R^d and the coupling re-indexing map.

Conventions
-----------
A velocity is a 1-d float64 array of length d >= 2.  A sphere direction is a
float64 array of length d-1 with unit Euclidean norm; for d = 2 the sphere
S^0 is identified with {-1.0, +1.0}.  A deviation angle is a float in
[0, pi] (0 is admitted so the grazing limit is expressible).

The post-collisional velocity is

    v' = v + (cos(theta) - 1)/2 * (v - v*) + sin(theta)/2 * Gamma(v - v*, xi)

with the companion v'* = v + v* - v', so momentum is conserved exactly in
floating point and kinetic energy up to roundoff.  Gamma(X, xi) =
|X| * S_X(Pi(xi)) parameterizes the set C_X of vectors orthogonal to X with
norm |X|:  Pi embeds S^{d-2} into the hyperplane {x_d = 0} and S_X is the
reflection exchanging e_d with X/|X| (the identity when they already agree).

xi_zero(X, Y, xi) re-indexes the collision sphere so the deflections of two
coupled collisions align:

    Gamma(Y, xi_zero(X, Y, xi)) = (|Y|/|X|) * R(Gamma(X, xi))

where R is the in-plane rotation taking X/|X| to Y/|Y|.  It is an isometric
bijection of S^{d-2} and satisfies the Lipschitz estimate
|Gamma(X, xi) - Gamma(Y, xi_zero(X, Y, xi))| <= 3 |X - Y|.

All operations are pure functions.  ALIGN_TOL and ANTIPODAL_TOL are
module-level configuration: below ALIGN_TOL the reflection (resp. the
rotation) degenerates to the identity branch; below ANTIPODAL_TOL the
rotation plane is replaced by the deterministic plane spanned by X/|X| and
the first canonical basis vector e_m with |(X/|X|)_m| < 0.99.
"""

import math

import numpy as np

from ._jit import jit
from .errors import DomainError, ZeroVector

# Threshold on |e_d - X/|X|| (and on |X/|X| - Y/|Y||) below which the
# aligned branch applies.
ALIGN_TOL = 1e-14
# Threshold on |X/|X| + Y/|Y|| below which the rotation plane is
# ill-conditioned and the deterministic antipodal plane is used.
ANTIPODAL_TOL = 1e-12


@jit
def _sx(X, w, align_tol):
    """Reflection across the hyperplane orthogonal to e_d - X/|X|.

    Maps e_d to X/|X|; the identity when |e_d - X/|X|| < align_tol.
    X must be nonzero.
    """
    d = X.shape[0]
    nx = 0.0
    for k in range(d):
        nx += X[k] * X[k]
    nx = math.sqrt(nx)
    nn = 0.0
    wn = 0.0
    for k in range(d):
        e = 1.0 if k == d - 1 else 0.0
        nk = e - X[k] / nx
        nn += nk * nk
        wn += w[k] * nk
    out = np.empty(d)
    if nn < align_tol * align_tol:
        for k in range(d):
            out[k] = w[k]
        return out
    s = 2.0 * wn / nn
    for k in range(d):
        e = 1.0 if k == d - 1 else 0.0
        out[k] = w[k] - s * (e - X[k] / nx)
    return out


@jit
def _gamma(X, xi, align_tol):
    """Gamma(X, xi) = |X| * S_X(Pi(xi)).  X must be nonzero."""
    d = X.shape[0]
    u = np.zeros(d)
    for k in range(d - 1):
        u[k] = xi[k]
    out = _sx(X, u, align_tol)
    nx = 0.0
    for k in range(d):
        nx += X[k] * X[k]
    nx = math.sqrt(nx)
    for k in range(d):
        out[k] *= nx
    return out


@jit
def _rotate(xhat, yhat, w, antip_tol):
    """In-plane rotation taking unit xhat to unit yhat, identity on the
    orthogonal complement.  Caller handles the aligned case."""
    d = xhat.shape[0]
    s2 = 0.0
    for k in range(d):
        s2 += (xhat[k] + yhat[k]) ** 2
    out = np.empty(d)
    if s2 < antip_tol * antip_tol:
        # Antipodal: rotate by pi in the plane of xhat and the first
        # canonical e_m with |xhat_m| < 0.99 (at most one index can fail).
        m = 0
        while abs(xhat[m]) >= 0.99:
            m += 1
        xm = xhat[m]
        bn2 = 0.0
        for k in range(d):
            bk = (1.0 if k == m else 0.0) - xm * xhat[k]
            bn2 += bk * bk
        bn = math.sqrt(bn2)
        wx = 0.0
        wb = 0.0
        for k in range(d):
            bk = ((1.0 if k == m else 0.0) - xm * xhat[k]) / bn
            wx += w[k] * xhat[k]
            wb += w[k] * bk
        for k in range(d):
            bk = ((1.0 if k == m else 0.0) - xm * xhat[k]) / bn
            out[k] = w[k] - 2.0 * wx * xhat[k] - 2.0 * wb * bk
        return out
    c = 0.0
    for k in range(d):
        c += xhat[k] * yhat[k]
    s = 0.0
    for k in range(d):
        bk = yhat[k] - c * xhat[k]
        s += bk * bk
    s = math.sqrt(s)
    wx = 0.0
    wb = 0.0
    for k in range(d):
        wx += w[k] * xhat[k]
        wb += w[k] * (yhat[k] - c * xhat[k]) / s
    for k in range(d):
        bhk = (yhat[k] - c * xhat[k]) / s
        out[k] = w[k] + (c - 1.0) * (wx * xhat[k] + wb * bhk) \
            + s * (wx * bhk - wb * xhat[k])
    return out


@jit
def _xi_zero(X, Y, xi, align_tol, antip_tol):
    """Core of xi_zero.  X and Y must be nonzero."""
    d = X.shape[0]
    nx = 0.0
    ny = 0.0
    for k in range(d):
        nx += X[k] * X[k]
        ny += Y[k] * Y[k]
    nx = math.sqrt(nx)
    ny = math.sqrt(ny)
    a2 = 0.0
    for k in range(d):
        a2 += (X[k] / nx - Y[k] / ny) ** 2
    out = np.empty(d - 1)
    if a2 < align_tol * align_tol:
        for k in range(d - 1):
            out[k] = xi[k]
        return out
    xhat = np.empty(d)
    yhat = np.empty(d)
    for k in range(d):
        xhat[k] = X[k] / nx
        yhat[k] = Y[k] / ny
    u = np.zeros(d)
    for k in range(d - 1):
        u[k] = xi[k]
    su = _sx(X, u, align_tol)
    r = _rotate(xhat, yhat, su, antip_tol)
    wv = _sx(Y, r, align_tol)
    # wv is orthogonal to e_d up to roundoff; drop the last component and
    # renormalize so the output sits on S^{d-2} exactly.
    nrm = 0.0
    for k in range(d - 1):
        out[k] = wv[k]
        nrm += wv[k] * wv[k]
    nrm = math.sqrt(nrm)
    for k in range(d - 1):
        out[k] /= nrm
    return out


@jit
def _collide(v, vs, theta, xi, align_tol):
    """Post-collision pair (v', v'*); identity when v == vs exactly."""
    d = v.shape[0]
    X = np.empty(d)
    z2 = 0.0
    for k in range(d):
        X[k] = v[k] - vs[k]
        z2 += X[k] * X[k]
    vp = np.empty(d)
    vsp = np.empty(d)
    if z2 == 0.0:
        for k in range(d):
            vp[k] = v[k]
            vsp[k] = vs[k]
        return vp, vsp
    g = _gamma(X, xi, align_tol)
    a = 0.5 * (math.cos(theta) - 1.0)
    b = 0.5 * math.sin(theta)
    for k in range(d):
        vp[k] = v[k] + a * X[k] + b * g[k]
        vsp[k] = v[k] + vs[k] - vp[k]
    return vp, vsp


def _all_finite(arr):
    # Fast path: a nan/inf component forces a non-finite sum, so a finite
    # sum certifies the array.  A non-finite sum can also come from mere
    # overflow of finite entries, hence the elementwise fallback.
    if math.isfinite(float(arr.sum())):
        return True
    return bool(np.all(np.isfinite(arr)))


def _as_vector(v, name):
    arr = np.ascontiguousarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] < 2:
        raise DomainError("%s must be a 1-d vector of dimension >= 2" % name)
    if not _all_finite(arr):
        raise DomainError("%s has non-finite components" % name)
    return arr


def _as_direction(xi, name="xi"):
    arr = np.atleast_1d(np.ascontiguousarray(xi, dtype=np.float64))
    if arr.ndim != 1:
        raise DomainError("%s must be a 1-d direction" % name)
    if not _all_finite(arr):
        raise DomainError("%s has non-finite components" % name)
    nrm = math.sqrt(float(arr @ arr))
    if abs(nrm - 1.0) > 1e-12:
        raise DomainError("%s must have unit norm (got %.3e)" % (name, nrm))
    return arr


def _as_angle(theta):
    t = float(theta)
    if not (0.0 <= t <= math.pi) or math.isnan(t):
        raise DomainError("theta must lie in [0, pi]")
    return t


def embed_pi(xi):
    """Embed xi in S^{d-2} into R^d as (xi_1, ..., xi_{d-1}, 0)."""
    xi = _as_direction(xi)
    out = np.zeros(xi.shape[0] + 1)
    out[:-1] = xi
    return out


def symmetry_sx(X, w):
    """Apply the reflection S_X (hyperplane symmetry sending e_d to X/|X|).

    Args:
        X: nonzero vector defining the axis; raises ZeroVector if X == 0.
        w: vector to reflect.

    Returns:
        S_X(w), an isometric image of w; S_X is an involution.
    """
    X = _as_vector(X, "X")
    w = _as_vector(w, "w")
    if X.shape != w.shape:
        raise DomainError("X and w must share a dimension")
    if not X.any():
        raise ZeroVector("S_X is undefined for X = 0")
    return _sx(X, w, ALIGN_TOL)


def gamma_param(X, xi):
    """Gamma(X, xi) = |X| * S_X(Pi(xi)): the element of C_X indexed by xi.

    The result is orthogonal to X with norm |X|; for fixed X the map is an
    injection of S^{d-2}.  Raises ZeroVector if X == 0.
    """
    X = _as_vector(X, "X")
    xi = _as_direction(xi)
    if xi.shape[0] != X.shape[0] - 1:
        raise DomainError("xi must have dimension d-1")
    if not X.any():
        raise ZeroVector("C_X is undefined for X = 0")
    return _gamma(X, xi, ALIGN_TOL)


def xi_zero(X, Y, xi):
    """Re-index the collision sphere from axis X to axis Y.

    Returns xi0 with Gamma(Y, xi0) = (|Y|/|X|) * R(Gamma(X, xi)), R the
    in-plane rotation taking X/|X| to Y/|Y|.  When the directions agree
    (within ALIGN_TOL) returns xi unchanged.  Raises ZeroVector if either
    input vanishes.
    """
    X = _as_vector(X, "X")
    Y = _as_vector(Y, "Y")
    xi = _as_direction(xi)
    if X.shape != Y.shape:
        raise DomainError("X and Y must share a dimension")
    if xi.shape[0] != X.shape[0] - 1:
        raise DomainError("xi must have dimension d-1")
    if not X.any():
        raise ZeroVector("xi_zero is undefined for X = 0")
    if not Y.any():
        raise ZeroVector("xi_zero is undefined for Y = 0")
    return _xi_zero(X, Y, xi, ALIGN_TOL, ANTIPODAL_TOL)


def post_collision(v, vstar, theta, xi):
    """Apply one collision with deviation angle theta and sphere index xi.

    Args:
        v, vstar: pre-collisional velocities (equal length d >= 2).
        theta: deviation angle in [0, pi].
        xi: direction on S^{d-2} selecting the deflection plane.

    Returns:
        (v', v'*) with v'* = v + v* - v'.  Momentum is conserved exactly;
        energy up to roundoff; |v' - v| = |v - v*| sqrt((1 - cos theta)/2).
        The degenerate case v == vstar returns the inputs unchanged.
    """
    v = _as_vector(v, "v")
    vstar = _as_vector(vstar, "vstar")
    if v.shape != vstar.shape:
        raise DomainError("v and vstar must share a dimension")
    theta = _as_angle(theta)
    xi = _as_direction(xi)
    if xi.shape[0] != v.shape[0] - 1:
        raise DomainError("xi must have dimension d-1")
    return _collide(v, vstar, theta, xi, ALIGN_TOL)
