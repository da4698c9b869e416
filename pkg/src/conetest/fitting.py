"""Constrained maximum-likelihood fitting of contingency tables.

Three nested models are fitted for a given parameterization and cone:

* ``equality``    -- all cone rows forced to zero (the smallest model),
* ``inequality``  -- inequality rows kept as ``D eta >= 0``,
* ``saturated``   -- unconstrained; the observed proportions.

The constrained fits run Fisher scoring in eta space, where the constraints
are linear: every iteration maximizes the local quadratic model of the
log-likelihood (gradient plus expected-information curvature) subject to the
full constraint set.  The inequality-constrained quadratic subproblem is
solved exactly through its dual, a nonnegative least-squares system in the
Cholesky-whitened constraint coordinates, so active sets are discovered
rather than guessed.  Backtracking on the log-likelihood keeps the ascent
monotone; iterates remain feasible because the constraint set is convex and
the subproblem returns feasible points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.optimize import nnls
from scipy.special import xlogy

from .errors import FitError, SpecError
from .marginal_params import ConeSpec, MarginalParamSpec, eta, fisher_info
from .mvnprob import project_cone
from .tables import ContingencyTable

__all__ = ["FitResult", "LrStatistics", "fit", "lr_statistics",
           "gaussian_approx_stats"]

_P_FLOOR = 1e-12
_MODES = ("saturated", "equality", "inequality")


@dataclass(frozen=True)
class FitResult:
    """Outcome of one constrained maximum-likelihood fit.

    ``multipliers`` are aligned with the rows of the constraint matrix
    (inequality rows first, then equality rows) and satisfy the stationarity
    condition grad(loglik) + D' multipliers = 0 at the optimum, with
    non-negative entries on inequality rows.
    """

    mode: str
    p_hat: np.ndarray = field(repr=False)
    eta_hat: np.ndarray = field(repr=False)
    loglik: float
    active: tuple[int, ...]
    multipliers: np.ndarray = field(repr=False)
    converged: bool
    iterations: int
    kkt_residual: float


@dataclass(frozen=True)
class LrStatistics:
    """Log-likelihood-ratio statistics of the three nested comparisons."""

    l01: float
    l12: float
    l02: float

    def __post_init__(self):
        if abs(self.l02 - self.l01 - self.l12) > 1e-6 * (1.0 + abs(self.l02)):
            raise FitError("statistics must satisfy l02 = l01 + l12")

    def to_dict(self) -> dict:
        return {"L01": self.l01, "L12": self.l12, "L02": self.l02}


def _loglik(counts, p) -> float:
    """Multinomial log-likelihood kernel sum y_i log p_i with 0 log 0 = 0."""
    return float(xlogy(counts, p).sum())


def _independence_probs(table: ContingencyTable) -> np.ndarray:
    """Product of the one-way margins; the classical independence MLE."""
    arr = table.to_array().astype(float)
    n = arr.sum()
    if n <= 0:
        raise FitError("cannot fit an empty table")
    p = np.ones(())
    for axis in range(arr.ndim):
        other = tuple(a for a in range(arr.ndim) if a != axis)
        margin = arr.sum(axis=other) / n
        p = np.multiply.outer(p, margin)
    p = np.maximum(p.reshape(-1), _P_FLOOR)
    return p / p.sum()


def _floored(p) -> np.ndarray:
    p = np.maximum(np.asarray(p, dtype=float), _P_FLOOR)
    return p / p.sum()


def _invert_eta(target, spec, p_start):
    """Newton solve of eta(p) = target on the simplex; None on failure."""
    p = p_start.copy()
    scale = 1.0 + np.abs(target).max()
    for _ in range(80):
        mp = spec.M @ p
        res = spec.C @ np.log(mp) - target
        res1 = p.sum() - 1.0
        if max(np.abs(res).max(), abs(res1)) <= 1e-11 * scale:
            return p
        Jfull = np.vstack([(spec.C / mp) @ spec.M, np.ones(p.size)])
        try:
            step = np.linalg.solve(Jfull, -np.append(res, res1))
        except np.linalg.LinAlgError:
            return None
        t = 1.0
        while t > 1e-10:
            p_new = p + t * step
            if (p_new > _P_FLOOR / 10).all() and (spec.M @ p_new > _P_FLOOR).all():
                break
            t *= 0.5
        else:
            return None
        p = p + t * step
    return None


def _qp_step(g, Vn, eta_c, Dm, E):
    """Exact solution of the quadratic subproblem.

    Maximizes g'd - d'F d / 2 subject to Dm (eta + d) >= 0 and
    E (eta + d) = 0, with F^{-1} = Vn.  Returns the step and the
    (inequality, equality) multipliers."""
    d_u = Vn @ g
    mu = np.zeros(0)
    nu = np.zeros(0)
    if E is not None and E.shape[0]:
        EV = E @ Vn
        S = EV @ E.T
        S_chol = cholesky(0.5 * (S + S.T), lower=True)
        e0 = E @ eta_c + E @ d_u

        def solve_S(x):
            y = solve_triangular(S_chol, x, lower=True)
            return solve_triangular(S_chol, y, trans="T", lower=True)
    if Dm is not None and Dm.shape[0]:
        DV = Dm @ Vn
        omega = DV @ Dm.T
        v0 = Dm @ eta_c + Dm @ d_u
        if E is not None and E.shape[0]:
            X = DV @ E.T
            omega = omega - X @ solve_S(X.T)
            v0 = v0 - X @ solve_S(e0)
        omega = 0.5 * (omega + omega.T)
        G = cholesky(omega + 1e-14 * np.eye(omega.shape[0]), lower=True)
        rhs = -solve_triangular(G, v0, lower=True)
        mu, _ = nnls(G.T, rhs)
    if E is not None and E.shape[0]:
        target = e0 if mu.size == 0 else e0 + (E @ Vn @ Dm.T) @ mu
        nu = -solve_S(target)
    d = d_u.copy()
    if mu.size:
        d += Vn @ (Dm.T @ mu)
    if nu.size:
        d += Vn @ (E.T @ nu)
    return d, mu, nu


def _scoring_loop(table, spec, cone, Dm, E, max_iter, ll_tol, kkt_tol):
    counts = table.counts.astype(float)
    n = float(table.n)
    p = _independence_probs(table)
    eta_c = eta(p, spec)
    ll = _loglik(counts, p)
    d_ll = np.inf
    mu = np.zeros(0 if Dm is None else Dm.shape[0])
    nu = np.zeros(0 if E is None else E.shape[0])
    res = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        mp = spec.M @ p
        J = (spec.C / mp) @ spec.M
        G = np.linalg.inv(np.vstack([J, np.ones(p.size)]))[:, :-1]
        g = G.T @ (counts / p)
        JP = J * p
        V1 = JP @ J.T - np.outer(JP.sum(axis=1), JP.sum(axis=1))
        Vn = 0.5 * (V1 + V1.T) / n
        try:
            d, mu, nu = _qp_step(g, Vn, eta_c, Dm, E)
        except np.linalg.LinAlgError:
            raise FitError("information matrix became singular during "
                           "fitting") from None
        stat = g.copy()
        if mu.size:
            stat += Dm.T @ mu
        if nu.size:
            stat += E.T @ nu
        res = float(np.abs(stat).max())
        eq_viol = float(np.abs(E @ eta_c).max()) \
            if E is not None and E.shape[0] else 0.0
        ineq_viol = float(max(0.0, -np.min(Dm @ eta_c))) \
            if Dm is not None and Dm.shape[0] else 0.0
        feasible = max(eq_viol, ineq_viol) <= 1e-9
        if feasible and res <= kkt_tol * (1.0 + abs(ll)) \
                and d_ll <= ll_tol * (1.0 + abs(ll)):
            return p, eta_c, ll, mu, nu, True, it, res
        # restoration step: from an infeasible start the full step restores
        # the (linear) equalities exactly, so it is taken without line search
        force_full = eq_viol > 1e-9
        ascent = float(g @ d)
        accepted = None
        t = 1.0
        while t >= 2.0 ** -40:
            p_try = _invert_eta(eta_c + t * d, spec, p)
            if p_try is not None:
                ll_try = _loglik(counts, p_try)
                if force_full or ll_try >= ll + 1e-4 * t * ascent \
                        - 1e-13 * (1.0 + abs(ll)):
                    accepted = (t, p_try, ll_try)
                    break
            if force_full:
                force_full = False  # keep damping if the full step is invalid
            t *= 0.5
        if accepted is None:
            # no improving step exists: converged if stationarity is tight
            if feasible and res <= kkt_tol * (1.0 + abs(ll)):
                return p, eta_c, ll, mu, nu, True, it, res
            raise FitError("line search failed before reaching the "
                           "convergence tolerances")
        t, p, ll_try = accepted
        eta_c = eta_c + t * d
        d_ll = abs(ll_try - ll)
        ll = ll_try
    raise FitError(f"no convergence within {max_iter} iterations "
                   f"(kkt residual {res:.2e})")


def fit(table: ContingencyTable, spec: MarginalParamSpec,
        cone: ConeSpec | None = None, mode: str = "saturated", *,
        max_iter: int = 500, ll_tol: float = 1e-10,
        kkt_tol: float = 1e-6) -> FitResult:
    """Maximum-likelihood fit of one of the three nested models.

    Parameters
    ----------
    table : ContingencyTable
    spec : MarginalParamSpec
        Parameterization; must match the table dimensions.
    cone : ConeSpec, optional
        Required for the constrained modes.
    mode : {"saturated", "equality", "inequality"}
        ``equality`` turns every cone row into an equality; ``inequality``
        keeps ``ineq @ eta >= 0`` (plus any equality rows of the cone).

    Raises
    ------
    FitError
        On non-convergence within ``max_iter`` iterations.
    """
    if mode not in _MODES:
        raise SpecError(f"mode must be one of {_MODES}, got {mode!r}")
    if spec.n_cells != table.n_cells:
        raise SpecError("spec and table dimensions do not match")
    if table.n == 0:
        raise FitError("cannot fit an empty table")
    counts = table.counts.astype(float)
    if mode == "saturated":
        p_hat = _floored(counts / table.n)
        ll = _loglik(counts, p_hat)
        return FitResult(mode=mode, p_hat=p_hat, eta_hat=eta(p_hat, spec),
                         loglik=ll, active=(), multipliers=np.zeros(0),
                         converged=True, iterations=0, kkt_residual=0.0)
    if cone is None:
        raise SpecError(f"mode {mode!r} requires a cone")
    if cone.dim != spec.n_params:
        raise SpecError("cone and spec dimensions do not match")
    if mode == "equality":
        E = cone.ineq if cone.eq is None else np.vstack([cone.ineq, cone.eq])
        Dm = None
    else:
        Dm = cone.ineq
        E = cone.eq
    p, eta_c, ll, mu, nu, converged, it, res = _scoring_loop(
        table, spec, cone, Dm, E, max_iter, ll_tol, kkt_tol)
    if Dm is not None and Dm.shape[0]:
        vals = Dm @ eta_c
        act_tol = 1e-8 * (1.0 + np.abs(vals).max())
        active = tuple(int(i) for i in np.flatnonzero(vals <= act_tol))
        multipliers = np.concatenate([mu, nu]) if nu.size else mu
    else:
        active = tuple(range(cone.k))
        multipliers = nu
    return FitResult(mode=mode, p_hat=p, eta_hat=eta_c, loglik=ll,
                     active=active, multipliers=multipliers,
                     converged=converged, iterations=it, kkt_residual=res)


def lr_statistics(table: ContingencyTable, spec: MarginalParamSpec,
                  cone: ConeSpec) -> LrStatistics:
    """Likelihood-ratio statistics 2(l1 - l0), 2(l2 - l1) and their sum.

    Tiny negative values from floating-point cancellation (above -1e-8) are
    clamped to zero.
    """
    f0 = fit(table, spec, cone, "equality")
    f1 = fit(table, spec, cone, "inequality")
    f2 = fit(table, spec, cone, "saturated")
    return _assemble_lr(f0.loglik, f1.loglik, f2.loglik)


def _assemble_lr(ll0, ll1, ll2) -> LrStatistics:
    raw = [2.0 * (ll1 - ll0), 2.0 * (ll2 - ll1), 2.0 * (ll2 - ll0)]
    vals = []
    for v in raw:
        if v < -1e-8:
            raise FitError(f"negative likelihood-ratio statistic {v!r}: "
                           "nested fits are inconsistent")
        vals.append(max(v, 0.0))
    return LrStatistics(l01=vals[0], l12=vals[1], l02=vals[0] + vals[1])


def gaussian_approx_stats(table: ContingencyTable, spec: MarginalParamSpec,
                          cone: ConeSpec) -> LrStatistics:
    """Quadratic (Gaussian) approximation of the likelihood-ratio statistics.

    Projects the unrestricted estimate onto the cone in the metric of the
    expected information at the equality fit: the first statistic is the
    squared norm of the projection, the second the squared distance to the
    cone (equivalently the squared norm of the projection onto the polar
    cone).  Used as a fast screen and a cross-check of the likelihood fits.
    """
    if cone.eq is not None:
        raise SpecError("quadratic approximation supports inequality-only "
                        "cones")
    f0 = fit(table, spec, cone, "equality")
    _, V0 = fisher_info(f0.p_hat, spec, table.n)
    p2 = _floored(table.counts / table.n)
    eta_hat = eta(p2, spec)
    D = cone.ineq
    tau = D @ eta_hat
    psi = D @ V0 @ D.T
    l02 = float(tau @ np.linalg.solve(0.5 * (psi + psi.T), tau))
    proj = project_cone(eta_hat, D, V0)
    l12 = min(proj.sqdist, l02)
    return LrStatistics(l01=l02 - l12, l12=l12, l02=l02)
