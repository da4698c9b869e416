"""Contingency-table representation, text ingestion and multinomial sampling.

Cells are stored flat in lexicographic order with the *last* index varying
fastest, i.e. ``numpy`` C order: a two-way table with ``dims = (R, C)`` maps
cell ``(i, j)`` to flat position ``i * C + j``.  Every matrix builder in
:mod:`conetest.marginal_params` relies on this single convention.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import TableError

__all__ = [
    "ContingencyTable",
    "parse_table",
    "format_table",
    "sample_multinomial",
    "validate_probabilities",
]

_TOKEN_SPLIT = re.compile(r"[,\s]+")


@dataclass(frozen=True)
class ContingencyTable:
    """Observed counts on a d-way grid of cells.

    Parameters
    ----------
    dims : tuple of int
        Number of categories of each classifying variable.
    counts : ndarray of int
        Non-negative cell counts, flat, last index fastest.
    """

    dims: tuple[int, ...]
    counts: np.ndarray = field(repr=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        counts = np.asarray(self.counts)
        if counts.ndim != 1:
            counts = counts.reshape(-1)
        if not np.issubdtype(counts.dtype, np.integer):
            rounded = np.rint(np.asarray(counts, float))
            if not np.array_equal(rounded, np.asarray(counts, float)):
                raise TableError("cell counts must be integers")
            counts = rounded.astype(np.int64)
        counts = counts.astype(np.int64)
        if any(d < 1 for d in dims):
            raise TableError(f"dims must be positive, got {dims}")
        t = int(np.prod(dims))
        if counts.size != t:
            raise TableError(
                f"expected {t} cells for dims {dims}, got {counts.size}")
        if (counts < 0).any():
            raise TableError("cell counts must be non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "counts", counts)

    @property
    def n(self) -> int:
        """Total number of observations."""
        return int(self.counts.sum())

    @property
    def n_cells(self) -> int:
        return self.counts.size

    def to_array(self) -> np.ndarray:
        """Counts reshaped to the d-way grid."""
        return self.counts.reshape(self.dims)

    @classmethod
    def from_array(cls, arr) -> "ContingencyTable":
        arr = np.asarray(arr)
        return cls(dims=arr.shape, counts=arr.reshape(-1))

    def proportions(self) -> np.ndarray:
        """Observed cell proportions counts / n (may contain zeros)."""
        n = self.n
        if n == 0:
            raise TableError("table has no observations")
        return self.counts / n


def parse_table(text: str, dims) -> ContingencyTable:
    """Parse comma- or whitespace-separated counts in row-major cell order.

    Raises :class:`TableError` on count mismatch, negative or non-integer
    entries, or any dimension below 2.
    """
    dims = tuple(int(d) for d in dims)
    if any(d < 2 for d in dims):
        raise TableError(f"every dimension must be at least 2, got {dims}")
    tokens = [tok for tok in _TOKEN_SPLIT.split(text.strip()) if tok]
    values = []
    for tok in tokens:
        try:
            values.append(int(tok))
        except ValueError:
            raise TableError(f"non-integer cell count {tok!r}") from None
    t = int(np.prod(dims))
    if len(values) != t:
        raise TableError(
            f"count mismatch: dims {dims} require {t} cells, got {len(values)}")
    if any(v < 0 for v in values):
        raise TableError("cell counts must be non-negative")
    return ContingencyTable(dims=dims, counts=np.array(values, dtype=np.int64))


def format_table(table: ContingencyTable) -> str:
    """Serialize counts as a comma-separated line (inverse of parse_table)."""
    return ",".join(str(int(c)) for c in table.counts)


def validate_probabilities(p, *, tol: float = 1e-12) -> np.ndarray:
    """Validate a cell-probability vector: strictly positive, sums to one.

    Returns the validated vector as a float ndarray.
    """
    p = np.asarray(p, dtype=float).reshape(-1)
    if p.size == 0:
        raise TableError("empty probability vector")
    if not np.all(np.isfinite(p)):
        raise TableError("probabilities must be finite")
    if (p <= 0).any():
        raise TableError("probabilities must be strictly positive")
    s = p.sum()
    if abs(s - 1.0) > tol:
        raise TableError(f"probabilities must sum to 1 within {tol}, got {s!r}")
    return p


def sample_multinomial(p, dims, n: int, seed) -> ContingencyTable:
    """Draw a Multinomial(n, p) table; deterministic for a fixed seed.

    ``seed`` may be anything accepted by :func:`numpy.random.default_rng`,
    including a :class:`numpy.random.SeedSequence`.
    """
    p = validate_probabilities(p)
    dims = tuple(int(d) for d in dims)
    if int(np.prod(dims)) != p.size:
        raise TableError(f"dims {dims} do not match {p.size} cells")
    if n < 1:
        raise TableError("sample size must be positive")
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(int(n), p)
    return ContingencyTable(dims=dims, counts=counts)
