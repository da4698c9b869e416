"""Multivariate-normal rectangle probabilities and polyhedral-cone projection.

These are the two numerical kernels the rest of the library consumes.

``rect_prob`` evaluates P(lower <= X <= upper) for X ~ N(0, sigma) via the
separation-of-variables reduction with greedy variable reordering.  The
resulting integral over the unit cube is computed with deterministic
Gauss-Legendre quadrature up to dimension 4 and with a randomized rank-1
lattice rule (shifted sqrt-prime generators) above; both produce an error
estimate, and the quadrature path escalates to the lattice rule when its
two-grid estimate misses the requested accuracy.

``project_cone`` computes the metric projection of a point onto
{eta : D eta >= 0} in the V^-1 metric by whitening with the Cholesky factor
of D V D' and solving the dual problem as a nonnegative least-squares system.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.optimize import nnls
from scipy.special import ndtr, ndtri

from .errors import NotPositiveDefiniteError, SpecError

__all__ = ["rect_prob", "project_cone", "ConeProjection"]

_SQRT2PI = np.sqrt(2.0 * np.pi)
_PRIMES = np.array([2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47,
                    53, 59, 61, 67, 71], dtype=float)
# Gauss-Legendre node counts (coarse, fine) per inner-integral dimension
_GL_PAIRS = {1: (48, 96), 2: (24, 40), 3: (14, 20)}
_QMC_MAX_N = 1 << 17
_QMC_BATCH = 5


def _check_sigma(sigma, m):
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (m, m):
        raise SpecError(f"sigma must be {m}x{m}, got {sigma.shape}")
    if np.abs(sigma - sigma.T).max() > 1e-10 * (1.0 + np.abs(sigma).max()):
        raise NotPositiveDefiniteError("sigma must be symmetric")
    return 0.5 * (sigma + sigma.T)


def _phi(x):
    """Standard normal density, 0 at infinite arguments."""
    out = np.zeros_like(np.asarray(x, dtype=float))
    finite = np.isfinite(x)
    out[finite] = np.exp(-0.5 * np.square(np.asarray(x)[finite])) / _SQRT2PI
    return out


def _reorder_cholesky(a, b, sigma):
    """Greedy Genz ordering: at each pivot pick the variable whose conditional
    slab probability is smallest, then extend the Cholesky factor."""
    a = np.array(a, dtype=float)
    b = np.array(b, dtype=float)
    S = np.array(sigma, dtype=float)
    m = a.size
    L = np.zeros((m, m))
    y = np.zeros(m)
    for i in range(m):
        best_j, best_p = i, np.inf
        for j in range(i, m):
            djj = S[j, j] - L[j, :i] @ L[j, :i]
            if djj <= 0:
                continue
            sd = np.sqrt(djj)
            s = L[j, :i] @ y[:i]
            pj = ndtr((b[j] - s) / sd) - ndtr((a[j] - s) / sd)
            if pj < best_p:
                best_j, best_p = j, pj
        j = best_j
        if j != i:
            a[[i, j]] = a[[j, i]]
            b[[i, j]] = b[[j, i]]
            S[[i, j]] = S[[j, i]]
            S[:, [i, j]] = S[:, [j, i]]
            L[[i, j], :i] = L[[j, i], :i]
        djj = S[i, i] - L[i, :i] @ L[i, :i]
        if djj <= 0:
            raise NotPositiveDefiniteError("sigma is not positive definite")
        L[i, i] = np.sqrt(djj)
        if i + 1 < m:
            L[i + 1:, i] = (S[i + 1:, i] - L[i + 1:, :i] @ L[i, :i]) / L[i, i]
        s = L[i, :i] @ y[:i]
        ai, bi = (a[i] - s) / L[i, i], (b[i] - s) / L[i, i]
        pa, pb = ndtr(ai), ndtr(bi)
        den = pb - pa
        if den > 1e-300:
            y[i] = (_phi(np.array([ai]))[0] - _phi(np.array([bi]))[0]) / den
        else:
            y[i] = 0.5 * (max(ai, -9.0) + min(bi, 9.0))
    return a, b, L


def _sov_values(L, a, b, U):
    """Separation-of-variables integrand on a batch of unit-cube points.

    U has shape (npts, m-1); returns the per-point integrand values."""
    npts = U.shape[0]
    m = a.size
    d = np.full(npts, ndtr(a[0] / L[0, 0]))
    e = np.full(npts, ndtr(b[0] / L[0, 0]))
    f = e - d
    Y = np.empty((npts, m - 1))
    for i in range(1, m):
        z = np.clip(d + U[:, i - 1] * (e - d), 1e-16, 1.0 - 1e-16)
        Y[:, i - 1] = ndtri(z)
        s = Y[:, :i] @ L[i, :i]
        d = ndtr((a[i] - s) / L[i, i])
        e = ndtr((b[i] - s) / L[i, i])
        f = f * np.maximum(e - d, 0.0)
    return f


@lru_cache(maxsize=32)
def _gl_grid(dim, n):
    """Tensor Gauss-Legendre points and weights on [0,1]^dim."""
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    pts = np.stack([g.reshape(-1) for g in grids], axis=1)
    wts = np.ones(pts.shape[0])
    for axis in range(dim):
        wts *= np.meshgrid(*([w] * dim), indexing="ij")[axis].reshape(-1)
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


def _rect_gl(L, a, b, accuracy):
    """Deterministic two-grid quadrature; returns (value, err) or None if the
    grid-difference estimate cannot certify the requested accuracy."""
    dim = a.size - 1
    n_lo, n_hi = _GL_PAIRS[dim]
    vals = []
    for n in (n_lo, n_hi):
        pts, wts = _gl_grid(dim, n)
        vals.append(float(_sov_values(L, a, b, pts) @ wts))
    err = max(5.0 * abs(vals[1] - vals[0]), 1e-11)
    if err > accuracy:
        return None
    return min(max(vals[1], 0.0), 1.0), err


def _rect_qmc(L, a, b, accuracy, seed):
    """Randomized rank-1 lattice rule with shift batches; the error estimate
    is three standard errors over the random shifts."""
    m = a.size
    rng = np.random.default_rng(seed)
    q = np.sqrt(_PRIMES[: m - 1])
    N = 1 << (11 if m <= 6 else 12)
    best = (np.nan, np.inf)
    while True:
        i_arr = np.arange(1.0, N + 1.0)[:, None] * q[None, :]
        means = []
        while len(means) < 50:
            for _ in range(_QMC_BATCH):
                shift = rng.random(m - 1)
                pts = np.mod(i_arr + shift[None, :], 1.0)
                means.append(float(_sov_values(L, a, b, pts).mean()))
            arr = np.asarray(means)
            est = arr.mean()
            err = 3.0 * arr.std(ddof=1) / np.sqrt(arr.size)
            if err <= accuracy:
                return min(max(est, 0.0), 1.0), err
        if err < best[1]:
            best = (est, err)
        if N >= _QMC_MAX_N:
            return min(max(best[0], 0.0), 1.0), best[1]
        N *= 4


def rect_prob(lower, upper, sigma, accuracy: float = 1e-6, seed=0):
    """P(lower <= X <= upper) for X ~ N(0, sigma), with an error estimate.

    Parameters
    ----------
    lower, upper : array_like
        Rectangle bounds; entries may be ``-inf`` / ``+inf``.
    sigma : array_like
        Symmetric positive-definite covariance.
    accuracy : float
        Requested absolute accuracy (>= 1e-6); the returned ``err_est``
        bounds the error at roughly three-sigma confidence.
    seed : int
        Seed for the randomized lattice shifts; fixed seed gives a
        deterministic result.

    Returns
    -------
    (prob, err_est) : tuple of float
    """
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    if lower.shape != upper.shape or lower.ndim != 1:
        raise SpecError("lower and upper must be vectors of equal length")
    if not (lower < upper).all():
        raise SpecError("lower bounds must be strictly below upper bounds")
    if accuracy < 1e-6:
        raise SpecError("accuracy below 1e-6 is not supported")
    m = lower.size
    if m == 0:
        return 1.0, 0.0
    sigma = _check_sigma(sigma, m)
    if m == 1:
        sd = np.sqrt(sigma[0, 0])
        if sigma[0, 0] <= 0:
            raise NotPositiveDefiniteError("sigma is not positive definite")
        p = float(ndtr(upper[0] / sd) - ndtr(lower[0] / sd))
        return min(max(p, 0.0), 1.0), 1e-15
    a, b, L = _reorder_cholesky(lower, upper, sigma)
    if m - 1 in _GL_PAIRS:
        out = _rect_gl(L, a, b, accuracy)
        if out is not None:
            return out
    return _rect_qmc(L, a, b, accuracy, seed)


@dataclass(frozen=True)
class ConeProjection:
    """Metric projection of a point onto {eta : D eta >= 0}.

    ``face`` holds the indices of inequality rows strictly positive at the
    optimum; its size is the face dimension of the whitened cone.
    ``multipliers`` are the nonnegative dual variables: projected =
    point + V D' multipliers.
    """

    point: np.ndarray = field(repr=False)
    projected: np.ndarray = field(repr=False)
    face: tuple[int, ...]
    sqdist: float
    multipliers: np.ndarray = field(repr=False)


def cone_factors(D, V):
    """Cholesky whitening of the cone: returns (H, U) with D V D' = H H' and
    U = H^{-1} (columns of U generate the whitened cone)."""
    D = np.atleast_2d(np.asarray(D, dtype=float))
    V = _check_sigma(V, D.shape[1])
    psi = D @ V @ D.T
    psi = 0.5 * (psi + psi.T)
    try:
        H = cholesky(psi, lower=True)
    except np.linalg.LinAlgError:
        raise SpecError(
            "D V D' is singular: D must have full row rank and V must be "
            "positive definite") from None
    U = solve_triangular(H, np.eye(D.shape[0]), lower=True)
    return H, U


def project_whitened(w, U):
    """Project a whitened point onto the cone generated by the columns of U.

    Returns ``(u, sqdist)`` where ``u >= 0`` are the generator coefficients,
    equal to the constraint values at the projection."""
    u, rnorm = nnls(U, w)
    return u, rnorm * rnorm


def project_cone(z, D, V) -> ConeProjection:
    """Project z onto {eta : D eta >= 0} in the V^-1 metric.

    Solves min (z - eta)' V^-1 (z - eta) subject to D eta >= 0 and returns
    the unique minimizer together with the active-face information needed by
    the chi-bar-squared weight estimator.
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    D = np.atleast_2d(np.asarray(D, dtype=float))
    if D.shape[1] != z.size:
        raise SpecError("D columns must match the dimension of z")
    H, U = cone_factors(D, V)
    w = solve_triangular(H, D @ z, lower=True)
    u, sqdist = project_whitened(w, U)
    lam = solve_triangular(H, U @ u - w, trans="T", lower=True)
    lam = np.maximum(lam, 0.0)
    projected = z + np.asarray(V, dtype=float) @ D.T @ lam
    tol = 1e-9 * (1.0 + np.linalg.norm(w))
    face = tuple(int(i) for i in np.flatnonzero(u > tol))
    return ConeProjection(point=z, projected=projected, face=face,
                          sqdist=float(sqdist), multipliers=lam)
