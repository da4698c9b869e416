"""Marginal log-linear parameterizations of contingency tables.

A parameterization is a pair of matrices ``(C, M)`` defining the map

    eta(p) = C @ log(M @ p)

where ``M`` aggregates cell probabilities into margins or quadrant sums and
``C`` takes row contrasts of their logs.  The built-in constructions produce a
full ``(t - 1)``-dimensional smooth parameterization of an ``R x C`` table
whose trailing block consists of the association parameters (local or global
log-odds ratios); a :class:`ConeSpec` then restricts that block with linear
inequalities ``D eta >= 0``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, null_space

from .errors import NotPositiveDefiniteError, SpecError
from .tables import validate_probabilities

__all__ = [
    "MarginalParamSpec",
    "ConeSpec",
    "build_local_logodds",
    "build_global_logodds",
    "oddsratio_cone",
    "eta",
    "jacobian",
    "fisher_info",
    "spec_to_json",
]


@dataclass(frozen=True)
class MarginalParamSpec:
    """Contrast matrix C, aggregation matrix M and row labels defining eta."""

    C: np.ndarray = field(repr=False)
    M: np.ndarray = field(repr=False)
    labels: tuple[str, ...]
    kind: str
    dims: tuple[int, ...]

    def __post_init__(self):
        C = np.asarray(self.C, dtype=float)
        M = np.asarray(self.M, dtype=float)
        if M.ndim != 2 or C.ndim != 2:
            raise SpecError("C and M must be matrices")
        if not np.all((M == 0) | (M == 1)):
            raise SpecError("M must be a 0/1 aggregation matrix")
        if M.sum(axis=1).min() < 1:
            raise SpecError("every row of M must select at least one cell")
        if C.shape[1] != M.shape[0]:
            raise SpecError("C columns must match M rows")
        rs = np.abs(C.sum(axis=1)).max() if C.size else 0.0
        if rs > 1e-10:
            raise SpecError(f"rows of C must sum to zero (max |sum| = {rs:g})")
        t = M.shape[1]
        if C.shape[0] != t - 1:
            raise SpecError(
                f"expected {t - 1} parameter rows for {t} cells, got {C.shape[0]}")
        if len(self.labels) != C.shape[0]:
            raise SpecError("one label per parameter row required")
        C.setflags(write=False)
        M.setflags(write=False)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    @property
    def n_cells(self) -> int:
        return self.M.shape[1]

    @property
    def n_params(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class ConeSpec:
    """Polyhedral cone {eta : ineq @ eta >= 0 (and eq @ eta = 0)}.

    ``q`` is the dimension of the lineality space obtained by forcing all
    inequalities to equalities, ``r`` the dimension of the linear span.
    """

    ineq: np.ndarray = field(repr=False)
    eq: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        ineq = np.atleast_2d(np.asarray(self.ineq, dtype=float))
        eq = self.eq
        if eq is not None:
            eq = np.atleast_2d(np.asarray(eq, dtype=float))
            if eq.shape[1] != ineq.shape[1]:
                raise SpecError("eq and ineq must act on the same eta space")
            if eq.shape[0] == 0:
                eq = None
        stacked = ineq if eq is None else np.vstack([ineq, eq])
        if stacked.shape[0] > stacked.shape[1]:
            raise SpecError("more constraint rows than parameters")
        if np.linalg.matrix_rank(stacked) < stacked.shape[0]:
            raise SpecError("constraint matrix must have full row rank")
        ineq.setflags(write=False)
        object.__setattr__(self, "ineq", ineq)
        if eq is not None:
            eq.setflags(write=False)
        object.__setattr__(self, "eq", eq)

    @property
    def k(self) -> int:
        """Number of inequality constraints."""
        return self.ineq.shape[0]

    @property
    def dim(self) -> int:
        """Dimension of the ambient eta space (t - 1)."""
        return self.ineq.shape[1]

    @property
    def n_eq(self) -> int:
        return 0 if self.eq is None else self.eq.shape[0]

    @property
    def r(self) -> int:
        """Dimension of the linear span of the cone."""
        return self.dim - self.n_eq

    @property
    def q(self) -> int:
        """Dimension of the space with all inequalities active."""
        return self.r - self.k

    def span_basis(self) -> np.ndarray:
        """Orthonormal basis of the linear span (null space of eq rows)."""
        if self.eq is None:
            return np.eye(self.dim)
        return null_space(self.eq)


def _cell_index(dims):
    """Flat index helper for a 2-way table, last index fastest."""
    R, C = dims

    def idx(i, j):
        return i * C + j

    return idx


def build_local_logodds(nrows: int, ncols: int) -> MarginalParamSpec:
    """Parameterization with adjacent-category (local) log-odds ratios.

    eta stacks ``nrows - 1`` adjacent row-margin logits, ``ncols - 1``
    adjacent column-margin logits, and the ``(nrows-1)(ncols-1)`` local
    log-odds ratios log(p[i,j] p[i+1,j+1] / (p[i,j+1] p[i+1,j])) as the
    trailing block.
    """
    R, C = int(nrows), int(ncols)
    if R < 2 or C < 2:
        raise SpecError("both dimensions must be at least 2")
    t = R * C
    idx = _cell_index((R, C))
    # M rows: R row margins, C column margins, then the t cells themselves
    M = np.zeros((R + C + t, t))
    for i in range(R):
        for j in range(C):
            M[i, idx(i, j)] = 1.0
            M[R + j, idx(i, j)] = 1.0
    M[R + C:, :] = np.eye(t)

    rows, labels = [], []
    for i in range(R - 1):
        row = np.zeros(R + C + t)
        row[i + 1], row[i] = 1.0, -1.0
        rows.append(row)
        labels.append(f"row_logit[{i + 2}:{i + 1}]")
    for j in range(C - 1):
        row = np.zeros(R + C + t)
        row[R + j + 1], row[R + j] = 1.0, -1.0
        rows.append(row)
        labels.append(f"col_logit[{j + 2}:{j + 1}]")
    base = R + C
    for i in range(R - 1):
        for j in range(C - 1):
            row = np.zeros(R + C + t)
            row[base + idx(i, j)] += 1.0
            row[base + idx(i, j + 1)] -= 1.0
            row[base + idx(i + 1, j)] -= 1.0
            row[base + idx(i + 1, j + 1)] += 1.0
            rows.append(row)
            labels.append(f"local_logor[{i + 1},{j + 1}]")
    return MarginalParamSpec(C=np.array(rows), M=M, labels=tuple(labels),
                             kind="local-logodds", dims=(R, C))


def build_global_logodds(nrows: int, ncols: int) -> MarginalParamSpec:
    """Parameterization with cumulative (global) log-odds ratios.

    The association block holds, for every cut point ``(a, b)``, the log-odds
    ratio of the 2x2 table obtained by dichotomizing rows at ``a`` and columns
    at ``b``; margins are completed with global logits log P(X > a) - log
    P(X <= a).
    """
    R, C = int(nrows), int(ncols)
    if R < 2 or C < 2:
        raise SpecError("both dimensions must be at least 2")
    t = R * C
    idx = _cell_index((R, C))

    mrows = []

    def aggregate(rowsel, colsel):
        row = np.zeros(t)
        for i in rowsel:
            for j in colsel:
                row[idx(i, j)] = 1.0
        mrows.append(row)
        return len(mrows) - 1

    # cumulative margins: P(row <= a), P(row > a), same for columns
    row_lo = [aggregate(range(a + 1), range(C)) for a in range(R - 1)]
    row_hi = [aggregate(range(a + 1, R), range(C)) for a in range(R - 1)]
    col_lo = [aggregate(range(R), range(b + 1)) for b in range(C - 1)]
    col_hi = [aggregate(range(R), range(b + 1, C)) for b in range(C - 1)]
    # quadrant sums for every cut point
    quad = {}
    for a in range(R - 1):
        for b in range(C - 1):
            quad[a, b] = (
                aggregate(range(a + 1), range(b + 1)),
                aggregate(range(a + 1), range(b + 1, C)),
                aggregate(range(a + 1, R), range(b + 1)),
                aggregate(range(a + 1, R), range(b + 1, C)),
            )
    M = np.array(mrows)

    nm = M.shape[0]
    rows, labels = [], []
    for a in range(R - 1):
        row = np.zeros(nm)
        row[row_hi[a]], row[row_lo[a]] = 1.0, -1.0
        rows.append(row)
        labels.append(f"row_global_logit[>{a + 1}]")
    for b in range(C - 1):
        row = np.zeros(nm)
        row[col_hi[b]], row[col_lo[b]] = 1.0, -1.0
        rows.append(row)
        labels.append(f"col_global_logit[>{b + 1}]")
    for a in range(R - 1):
        for b in range(C - 1):
            ll, lh, hl, hh = quad[a, b]
            row = np.zeros(nm)
            row[ll] += 1.0
            row[hh] += 1.0
            row[lh] -= 1.0
            row[hl] -= 1.0
            rows.append(row)
            labels.append(f"global_logor[{a + 1},{b + 1}]")
    return MarginalParamSpec(C=np.array(rows), M=M, labels=tuple(labels),
                             kind="global-logodds", dims=(R, C))


def oddsratio_cone(spec: MarginalParamSpec) -> ConeSpec:
    """Cone of non-negative association: selects the trailing odds-ratio block.

    Only defined for the built-in two-way parameterizations, whose odds-ratio
    rows always form the trailing contiguous block of eta.
    """
    if spec.kind not in ("local-logodds", "global-logodds"):
        raise SpecError(
            f"no default cone for kind {spec.kind!r}; build a ConeSpec directly")
    R, C = spec.dims
    k = (R - 1) * (C - 1)
    d = spec.n_params
    D = np.hstack([np.zeros((k, d - k)), np.eye(k)])
    return ConeSpec(ineq=D)


def eta(p, spec: MarginalParamSpec) -> np.ndarray:
    """Evaluate eta = C log(M p).  Requires M p > 0 elementwise."""
    p = np.asarray(p, dtype=float).reshape(-1)
    mp = spec.M @ p
    if (mp <= 0).any():
        raise SpecError("aggregated probabilities must be strictly positive")
    return spec.C @ np.log(mp)


def jacobian(p, spec: MarginalParamSpec) -> np.ndarray:
    """d eta / d p = C diag(1 / (M p)) M, shape (t - 1, t)."""
    p = np.asarray(p, dtype=float).reshape(-1)
    mp = spec.M @ p
    if (mp <= 0).any():
        raise SpecError("aggregated probabilities must be strictly positive")
    return (spec.C / mp) @ spec.M


def fisher_info(p0, spec: MarginalParamSpec, n: int):
    """Expected information of eta and its inverse under multinomial sampling.

    Returns ``(F0, V0)`` where ``V0 = J Sigma J' / n`` is the delta-method
    covariance of the unrestricted eta estimate at ``p0`` (``Sigma = diag(p0)
    - p0 p0'``) and ``F0 = V0^{-1}``.

    Raises :class:`NotPositiveDefiniteError` when the parameterization is not
    a diffeomorphism at ``p0``.
    """
    p0 = validate_probabilities(p0)
    if n < 1:
        raise SpecError("sample size must be positive")
    J = jacobian(p0, spec)
    JP = J * p0
    V0 = (JP @ J.T - np.outer(JP.sum(axis=1), JP.sum(axis=1))) / float(n)
    V0 = 0.5 * (V0 + V0.T)
    try:
        cf = cho_factor(V0)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError(
            "information matrix is singular: spec is not a diffeomorphism "
            "at this point") from None
    F0 = cho_solve(cf, np.eye(V0.shape[0]))
    F0 = 0.5 * (F0 + F0.T)
    return F0, V0


def spec_to_json(spec: MarginalParamSpec, cone: ConeSpec | None = None) -> str:
    """Export C, M (and D) as row-major arrays with labels, for audits."""
    payload = {
        "kind": spec.kind,
        "dims": list(spec.dims),
        "labels": list(spec.labels),
        "C": [list(map(float, row)) for row in spec.C],
        "M": [list(map(float, row)) for row in spec.M],
    }
    if cone is not None:
        payload["D"] = [list(map(float, row)) for row in cone.ineq]
        if cone.eq is not None:
            payload["D_eq"] = [list(map(float, row)) for row in cone.eq]
        payload["q"] = cone.q
        payload["r"] = cone.r
    return json.dumps(payload, indent=2, sort_keys=True)
