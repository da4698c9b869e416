"""Chi-bar-squared weights, tail/CDF evaluation and the joint distribution of
the two likelihood-ratio components.

The weight vector ``w_q .. w_r`` gives the probabilities that the projection
of a Gaussian vector onto the constraint cone lands on a face of each
dimension.  Exact weights enumerate the 2^k complementary-cone pairs of the
whitened problem, evaluating each as a product of two orthant probabilities
with Schur-complement block covariances; the two levels with the most subsets
are recovered from the half-sum identity (even-index and odd-index weights
each sum to one half) instead of being enumerated.  Monte-Carlo weights tally
projection face dimensions over simulated Gaussian draws.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.special import ndtri
from scipy.stats import chi2

from .errors import SpecError
from .marginal_params import ConeSpec
from .mvnprob import cone_factors, project_whitened, rect_prob

__all__ = [
    "ChiBarWeights",
    "exact_weights",
    "mc_weights",
    "required_samples",
    "chibar_tail",
    "joint_cdf",
]


def _chi2_cdf(x, df: int) -> float:
    """Chi-square CDF with the zero-dof convention of a point mass at 0."""
    if df < 0:
        return 0.0
    if df == 0:
        return 1.0 if x >= 0 else 0.0
    if np.isposinf(x):
        return 1.0
    return float(chi2.cdf(x, df))


def _chi2_sf(x, df: int) -> float:
    if df == 0:
        return 0.0 if x >= 0 else 1.0
    if np.isposinf(x):
        return 0.0
    return float(chi2.sf(x, df))


@dataclass(frozen=True)
class ChiBarWeights:
    """Face-probability weights w_j for j = q..r of a chi-bar-squared mixture.

    ``t`` is the number of table cells; the saturated model has ``t - 1`` free
    parameters.  ``se`` carries per-weight standard errors for Monte-Carlo
    estimates and is ``None`` for exact weights.
    """

    w: np.ndarray = field(repr=False)
    q: int
    r: int
    t: int
    method: str = "exact"
    se: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).reshape(-1)
        if self.q < 0 or self.r < self.q or self.t - 1 < self.r:
            raise SpecError(f"inconsistent dimensions q={self.q}, r={self.r}, "
                            f"t={self.t}")
        if w.size != self.r - self.q + 1:
            raise SpecError("need one weight per face dimension q..r")
        if self.method not in ("exact", "montecarlo"):
            raise SpecError(f"unknown weight method {self.method!r}")
        if (w < -1e-8).any():
            raise SpecError("weights must be non-negative")
        w = np.maximum(w, 0.0)
        se = self.se
        if se is not None:
            se = np.asarray(se, dtype=float).reshape(-1)
            if se.size != w.size:
                raise SpecError("one standard error per weight required")
        tol = 1e-6 if self.method == "exact" else 3.0 * float(
            np.max(se) if se is not None and se.size else 0.0) + 1e-9
        if abs(w.sum() - 1.0) > tol:
            raise SpecError(f"weights must sum to 1 within {tol:g}, "
                            f"got {w.sum()!r}")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        if se is not None:
            se.setflags(write=False)
        object.__setattr__(self, "se", se)

    @property
    def k(self) -> int:
        return self.r - self.q

    def reversed(self) -> "ChiBarWeights":
        """Weights in reverse order (the mixing law of the second component)."""
        se = None if self.se is None else self.se[::-1].copy()
        return ChiBarWeights(w=self.w[::-1].copy(), q=self.q, r=self.r,
                             t=self.t, method=self.method, se=se)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "q": self.q,
            "r": self.r,
            "t": self.t,
            "w": [float(x) for x in self.w],
            "se": None if self.se is None else [float(x) for x in self.se],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _check_v0(V0, dim):
    V0 = np.asarray(V0, dtype=float)
    if V0.shape != (dim, dim):
        raise SpecError(f"V0 must be {dim}x{dim} to match the cone")
    return 0.5 * (V0 + V0.T)


def _reduce_cone(V0, cone: ConeSpec):
    """Restrict to the linear span when equality rows are present.

    Returns the inequality matrix and covariance of the span-restricted
    problem; with no equality rows this is the identity reduction."""
    if cone.eq is None:
        return cone.ineq, V0
    B = cone.span_basis()
    Dred = cone.ineq @ B
    F = np.linalg.inv(V0)
    Vred = np.linalg.inv(B.T @ F @ B)
    return Dred, 0.5 * (Vred + Vred.T)


def _orthant(cov, accuracy, seed) -> float:
    m = cov.shape[0]
    if m == 0:
        return 1.0
    return rect_prob(np.zeros(m), np.full(m, np.inf), cov,
                     accuracy=accuracy, seed=seed)[0]


def _subset_covariances(psi, phi, ii, jj):
    """Covariance blocks ((Phi_ii)^-1, (Psi_jj)^-1) of one complementary-cone
    pair, inverting the smaller block directly and recovering the other from
    the partitioned-inverse identity."""
    ii = list(ii)
    jj = list(jj)
    if not ii:
        return np.zeros((0, 0)), phi
    if not jj:
        return psi, np.zeros((0, 0))
    if len(ii) <= len(jj):
        phi_ii_inv = np.linalg.inv(phi[np.ix_(ii, ii)])
        psi_jj_inv = phi[np.ix_(jj, jj)] - phi[np.ix_(jj, ii)] @ phi_ii_inv \
            @ phi[np.ix_(ii, jj)]
    else:
        psi_jj_inv = np.linalg.inv(psi[np.ix_(jj, jj)])
        phi_ii_inv = psi[np.ix_(ii, ii)] - psi[np.ix_(ii, jj)] @ psi_jj_inv \
            @ psi[np.ix_(jj, ii)]
    return phi_ii_inv, psi_jj_inv


def exact_weights(V0, cone: ConeSpec, accuracy: float = 1e-5,
                  seed=0) -> ChiBarWeights:
    """Exact chi-bar-squared weights by complementary-cone enumeration.

    Each subset of inequality rows contributes the product of two orthant
    probabilities; subsets are summed by cardinality and the two middle
    levels come from the half-sum identity.  Limited to k <= 15 inequality
    rows, beyond which enumeration is infeasible and :func:`mc_weights`
    should be used.
    """
    V0 = _check_v0(V0, cone.dim)
    k = cone.k
    if k > 15:
        raise SpecError(
            f"exact weights are infeasible for k={k} > 15 inequality rows; "
            "use mc_weights")
    q, r, t = cone.q, cone.r, cone.dim + 1
    if k == 0:
        return ChiBarWeights(w=np.array([1.0]), q=q, r=r, t=t, method="exact")
    Dred, Vred = _reduce_cone(V0, cone)
    psi = Dred @ Vred @ Dred.T
    psi = 0.5 * (psi + psi.T)
    phi = np.linalg.inv(psi)
    phi = 0.5 * (phi + phi.T)

    mid = (k - 1) // 2
    skipped = {mid, mid + 1}
    levels = np.zeros(k + 1)
    for size in range(k + 1):
        if size in skipped:
            continue
        total = 0.0
        for ii in combinations(range(k), size):
            jj = tuple(sorted(set(range(k)) - set(ii)))
            cov_i, cov_j = _subset_covariances(psi, phi, ii, jj)
            total += _orthant(cov_i, accuracy, seed) * \
                _orthant(cov_j, accuracy, seed)
        levels[size] = total
    for size in sorted(skipped):
        others = [s for s in range(k + 1) if s % 2 == size % 2 and s != size]
        levels[size] = max(0.5 - sum(levels[s] for s in others), 0.0)
    return ChiBarWeights(w=levels, q=q, r=r, t=t, method="exact")


def _classify_faces(Z, H, U, counts):
    """Tally projection face dimensions by complementary-cone membership.

    Each standard-normal row of Z lies in exactly one of the 2^k cones
    C*(subset); membership is A^{-1} z >= 0 with A assembling cone and polar
    generators.  Rows on a boundary (measure zero) fall through and are
    resolved by explicit projection."""
    k = H.shape[0]
    remaining = np.ones(Z.shape[0], dtype=bool)
    W = -H.T
    for size in range(k + 1):
        for ii in combinations(range(k), size):
            A = W.copy()
            for c in ii:
                A[:, c] = U[:, c]
            B = np.linalg.inv(A)
            member = remaining & (Z @ B.T >= 0.0).all(axis=1)
            counts[size] += int(member.sum())
            remaining &= ~member
            if not remaining.any():
                return
    for z in Z[remaining]:
        u, _ = project_whitened(z, U)
        tol = 1e-9 * (1.0 + np.linalg.norm(z))
        counts[int((u > tol).sum())] += 1


def mc_weights(V0, cone: ConeSpec, nsamples: int, seed,
               method: str = "auto") -> ChiBarWeights:
    """Monte-Carlo chi-bar-squared weights from simulated projections.

    Draws standard-normal vectors in the whitened cone coordinates, projects
    each onto the cone and tallies the face dimension the projection lands
    on.  ``method`` selects the projection route: ``"project"`` runs the
    nonnegative-least-squares projection per draw, ``"classify"`` assigns
    draws to complementary cones in vectorized batches (identical faces,
    much faster), ``"auto"`` picks ``classify`` for k <= 8.
    """
    if nsamples < 1000:
        raise SpecError("at least 1000 samples are required")
    V0 = _check_v0(V0, cone.dim)
    k = cone.k
    q, r, t = cone.q, cone.r, cone.dim + 1
    if k == 0:
        return ChiBarWeights(w=np.array([1.0]), q=q, r=r, t=t,
                             method="montecarlo", se=np.array([0.0]))
    if method == "auto":
        method = "classify" if k <= 8 else "project"
    if method not in ("classify", "project"):
        raise SpecError(f"unknown mc_weights method {method!r}")
    Dred, Vred = _reduce_cone(V0, cone)
    H, U = cone_factors(Dred, Vred)
    rng = np.random.default_rng(seed)
    counts = np.zeros(k + 1, dtype=np.int64)
    chunk = 200_000 if method == "classify" else 20_000
    remaining = int(nsamples)
    while remaining > 0:
        nz = min(chunk, remaining)
        Z = rng.standard_normal((nz, k))
        if method == "classify":
            _classify_faces(Z, H, U, counts)
        else:
            for z in Z:
                u, _ = project_whitened(z, U)
                tol = 1e-9 * (1.0 + np.linalg.norm(z))
                counts[int((u > tol).sum())] += 1
        remaining -= nz
    w = counts / float(nsamples)
    se = np.sqrt(w * (1.0 - w) / float(nsamples))
    return ChiBarWeights(w=w, q=q, r=r, t=t, method="montecarlo", se=se)


def required_samples(w_pilot: ChiBarWeights, c1: float, c2: float,
                     eps: float, delta: float) -> int:
    """Minimum projection count for Monte-Carlo weights to pin the acceptance
    probability within ``eps`` at confidence ``1 - 2 delta``.

    Uses the multinomial covariance of the estimated weights propagated
    through the acceptance-probability coefficients ``P(chi2_j <= c1)
    P(chi2_{q-j} <= c2)``; degrees of freedom below zero contribute a
    zero factor.
    """
    if eps <= 0:
        raise SpecError("eps must be positive")
    if not 0 < delta < 0.5:
        raise SpecError("delta must lie in (0, 0.5)")
    w = w_pilot.w
    q = w_pilot.q
    cvec = np.array([
        _chi2_cdf(c1, j) * _chi2_cdf(c2, q - j) for j in range(w.size)
    ])
    v = float(cvec @ (np.diag(w) - np.outer(w, w)) @ cvec)
    if v <= 0:
        return 0
    z = float(ndtri(1.0 - delta))
    return int(math.ceil(v * (z / eps) ** 2))


def chibar_tail(c: float, w: ChiBarWeights) -> float:
    """P(chi-bar-squared > c): mixture of chi-square tails with dof 0..k."""
    if c < 0:
        return 1.0
    total = sum(wi * _chi2_sf(c, i) for i, wi in enumerate(w.w))
    return min(max(float(total), 0.0), 1.0)


def joint_cdf(c1: float, c2: float, w: ChiBarWeights) -> float:
    """Joint CDF of the two likelihood-ratio components at (c1, c2).

    Evaluates sum_j w_j P(chi2_{j-q} <= c1) P(chi2_{t-j-1} <= c2); passing
    ``c2 = inf`` gives the first marginal and vice versa.
    """
    if c1 < 0 or c2 < 0:
        raise SpecError("joint_cdf arguments must be non-negative (or +inf)")
    t, q = w.t, w.q
    total = 0.0
    for i, wi in enumerate(w.w):
        j = q + i
        total += wi * _chi2_cdf(c1, i) * _chi2_cdf(c2, t - j - 1)
    return min(max(float(total), 0.0), 1.0)
