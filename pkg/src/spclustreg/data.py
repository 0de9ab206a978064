"""Spatial datasets, CSV loading and the weight graphs used by the Potts penalty."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

__all__ = [
    "DataError",
    "SchemaError",
    "DataParseError",
    "ValidationError",
    "SpatialDataset",
    "SpatialWeights",
    "CrossWeights",
    "load_dataset",
    "knn_weights",
    "exp_weights",
    "covariate_knn_weights",
    "blend_weights",
    "cross_knn_weights",
    "cross_exp_weights",
    "cross_covariate_knn_weights",
    "blend_cross_weights",
    "DEFAULT_EXP_CUTOFF",
]

DEFAULT_EXP_CUTOFF = 1e-8


class DataError(ValueError):
    """Base class for problems with input data."""


class SchemaError(DataError):
    pass


class DataParseError(DataError):
    pass


class ValidationError(DataError):
    pass


@dataclass(frozen=True, eq=False)
class SpatialDataset:
    """Locations, design matrix, response and optional exposure for n sites.

    ``covariates`` always carries the intercept in column 0.
    """

    locations: np.ndarray
    covariates: np.ndarray
    response: np.ndarray
    exposure: np.ndarray | None = None
    ids: tuple = ()
    covariate_names: tuple = ()

    def __post_init__(self):
        locs = np.array(self.locations, dtype=float)
        X = np.array(self.covariates, dtype=float)
        y = np.array(self.response, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if locs.ndim != 2 or locs.shape[1] != 2:
            raise ValidationError("locations must be an n x 2 array")
        n = locs.shape[0]
        if n < 1:
            raise ValidationError("dataset needs at least one row")
        if X.shape[0] != n or y.shape != (n,):
            raise ValidationError(
                f"row counts disagree: locations {n}, covariates {X.shape[0]}, response {y.shape[0]}"
            )
        if X.shape[1] < 1:
            raise ValidationError("at least one covariate column (the intercept) is required")
        if not np.all(np.isfinite(locs)):
            raise ValidationError("coordinates must be finite")
        if not np.all(np.isfinite(X)):
            raise ValidationError("covariates must be finite")
        a = None
        if self.exposure is not None:
            a = np.array(self.exposure, dtype=float)
            if a.shape != (n,):
                raise ValidationError("exposure must have one entry per row")
            bad = np.flatnonzero(~(a > 0) | ~np.isfinite(a))
            if bad.size:
                raise ValidationError(f"exposure must be strictly positive (row {bad[0]})")
            a.setflags(write=False)
        ids = tuple(str(i) for i in self.ids) if len(self.ids) else tuple(str(i) for i in range(n))
        if len(ids) != n:
            raise ValidationError("ids must have one entry per row")
        names = tuple(self.covariate_names) or ("intercept",) + tuple(
            f"x{k}" for k in range(1, X.shape[1])
        )
        if len(names) != X.shape[1]:
            raise ValidationError("covariate_names must match the number of covariate columns")
        for arr in (locs, X, y):
            arr.setflags(write=False)
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "exposure", a)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "covariate_names", names)

    @classmethod
    def from_arrays(cls, locations, covariates, response, exposure=None, ids=(), names=None):
        """Build a dataset from raw covariates, prepending the intercept column."""
        X = np.asarray(covariates, dtype=float)
        n = np.shape(response)[0]
        if X.size == 0:
            X = np.empty((n, 0))
        elif X.ndim == 1:
            X = X[:, None]
        design = np.column_stack([np.ones(n), X])
        if names is None:
            names = [f"x{k}" for k in range(1, design.shape[1])]
        return cls(locations, design, response, exposure, tuple(ids), ("intercept", *names))

    @property
    def n(self) -> int:
        return self.locations.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def offset_exposure(self) -> np.ndarray:
        """Exposure vector with the all-ones default when none was supplied."""
        return self.exposure if self.exposure is not None else np.ones(self.n)

    def with_response(self, y) -> "SpatialDataset":
        return SpatialDataset(
            self.locations, self.covariates, y, self.exposure, self.ids, self.covariate_names
        )

    def subset(self, rows) -> "SpatialDataset":
        rows = np.asarray(rows)
        return SpatialDataset(
            self.locations[rows],
            self.covariates[rows],
            self.response[rows],
            None if self.exposure is None else self.exposure[rows],
            tuple(np.asarray(self.ids, dtype=object)[rows]),
            self.covariate_names,
        )


def _check_weight_matrix(W: sp.csr_array, square: bool) -> None:
    if W.nnz and (W.data.min() < 0 or W.data.max() > 1):
        raise ValidationError("weights must lie in [0, 1]")
    if square:
        if W.shape[0] != W.shape[1]:
            raise ValidationError("spatial weights must be square")
        if W.diagonal().any():
            raise ValidationError("spatial weights must have a zero diagonal")
        if (W != W.T).nnz:
            raise ValidationError("spatial weights must be symmetric")


@dataclass(frozen=True, eq=False)
class SpatialWeights:
    """Sparse symmetric n x n weights with zero diagonal and entries in [0, 1]."""

    matrix: sp.csr_array = field(repr=False)

    def __post_init__(self):
        W = sp.csr_array(self.matrix, dtype=float)
        W.eliminate_zeros()
        W.sort_indices()
        _check_weight_matrix(W, square=True)
        object.__setattr__(self, "matrix", W)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def triplets(self) -> np.ndarray:
        """Stored entries as rows of (i, j, w), row-major order."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return np.column_stack([coo.row[order], coo.col[order], coo.data[order]])

    def write_triplets(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["i", "j", "w"])
            for i, j, w in self.triplets():
                writer.writerow([int(i), int(j), repr(float(w))])


@dataclass(frozen=True, eq=False)
class CrossWeights:
    """m x n weights linking new locations to fitted ones."""

    matrix: sp.csr_array = field(repr=False)

    def __post_init__(self):
        W = sp.csr_array(self.matrix, dtype=float)
        W.eliminate_zeros()
        W.sort_indices()
        _check_weight_matrix(W, square=False)
        object.__setattr__(self, "matrix", W)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape


# ---------------------------------------------------------------------------
# loading

def _default_schema(header: Sequence[str], has_exposure: bool) -> dict:
    schema = {"id": "id", "s1": "s1", "s2": "s2", "y": "y"}
    schema["x"] = [c for c in header if c.startswith("x")]
    if has_exposure:
        schema["a"] = "a"
    return schema


def load_dataset(path, schema: Mapping | None = None, has_exposure: bool = False) -> SpatialDataset:
    """Read a delimiter-separated file with a header row into a dataset.

    Parameters
    ----------
    path : str or Path
    schema : mapping, optional
        Keys ``id``, ``s1``, ``s2``, ``y``, ``x`` (list of column names) and
        optionally ``a``.  Missing keys fall back to the column of the same
        name; ``x`` defaults to every column whose name starts with ``x``.
    has_exposure : bool
        Read the exposure column (``a`` unless remapped).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with open(path, newline="") as fh:
        sample = fh.read(4096)
        fh.seek(0)
        try:
            dialect = csv.Sniffer().sniff(sample, delimiters=",\t;| ")
        except csv.Error:
            dialect = csv.excel
        reader = csv.reader(fh, dialect)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataParseError(f"{path} is empty") from None
        rows = [r for r in reader if r]

    resolved = _default_schema(header, has_exposure)
    if schema:
        resolved.update(schema)
    if isinstance(resolved["x"], str):
        resolved["x"] = [resolved["x"]]
    if has_exposure and "a" not in resolved:
        resolved["a"] = "a"
    if not has_exposure:
        resolved.pop("a", None)

    def col(name):
        try:
            return header.index(name)
        except ValueError:
            raise SchemaError(f"missing column '{name}' in {path}") from None

    id_col = col(resolved["id"]) if resolved.get("id") in header else None
    numeric = {key: col(resolved[key]) for key in ("s1", "s2", "y")}
    x_cols = [col(c) for c in resolved["x"]]
    a_col = col(resolved["a"]) if has_exposure else None

    n = len(rows)
    if n == 0:
        raise DataParseError(f"{path} has a header but no data rows")

    def parse(r, idx, j):
        try:
            return float(rows[r][idx])
        except (ValueError, IndexError):
            cell = rows[r][idx] if idx < len(rows[r]) else "<missing>"
            raise DataParseError(
                f"non-numeric value {cell!r} in column '{header[idx]}' at row {r + 1}"
            ) from None

    locs = np.array([[parse(r, numeric["s1"], 0), parse(r, numeric["s2"], 1)] for r in range(n)])
    y = np.array([parse(r, numeric["y"], 0) for r in range(n)])
    X = np.array([[parse(r, c, 0) for c in x_cols] for r in range(n)]).reshape(n, len(x_cols))
    a = None
    if a_col is not None:
        a = np.array([parse(r, a_col, 0) for r in range(n)])
        bad = np.flatnonzero(~(a > 0))
        if bad.size:
            raise ValidationError(f"exposure must be strictly positive; row {bad[0] + 1} has {a[bad[0]]}")
    ids = [rows[r][id_col] for r in range(n)] if id_col is not None else [str(r + 1) for r in range(n)]
    return SpatialDataset.from_arrays(locs, X, y, a, ids, names=list(resolved["x"]))


# ---------------------------------------------------------------------------
# weight constructors

def _knn_indices(query: np.ndarray, points: np.ndarray, k: int, exclude_self: bool) -> np.ndarray:
    """Indices of the k nearest ``points`` for each query row.

    Ties in distance go to the smaller point index.  With ``exclude_self``
    the query rows are the points themselves and row i never returns i.
    """
    m, n = query.shape[0], points.shape[0]
    if m * n <= 4_000_000:
        d2 = ((query[:, None, :] - points[None, :, :]) ** 2).sum(-1)
        if exclude_self:
            np.fill_diagonal(d2, np.inf)
        # stable sort keeps the lower index first among equal distances
        return np.argsort(d2, axis=1, kind="stable")[:, :k]
    tree = cKDTree(points)
    fetch = k + 1 + int(exclude_self)
    while True:
        f = min(fetch, n)
        _, idx = tree.query(query, k=f)
        idx = idx.reshape(m, f)
        # recompute exactly as the dense path so ties resolve identically
        dist = ((query[:, None, :] - points[idx]) ** 2).sum(-1)
        if exclude_self:
            dist = np.where(idx == np.arange(m)[:, None], np.inf, dist)
        order = np.lexsort((idx, dist), axis=-1)
        dist = np.take_along_axis(dist, order, axis=1)
        idx = np.take_along_axis(idx, order, axis=1)
        last = dist[:, f - 1 - int(exclude_self)]
        # a tie reaching the last fetched candidate may hide a lower index
        if f == n or not np.any(last <= dist[:, k - 1] * (1 + 1e-9)):
            return idx[:, :k]
        fetch *= 2


def _symmetric_indicator(nbrs: np.ndarray, n: int) -> SpatialWeights:
    rows = np.repeat(np.arange(n), nbrs.shape[1])
    A = sp.csr_array((np.ones(rows.size), (rows, nbrs.ravel())), shape=(n, n))
    A.data[:] = 1.0
    return SpatialWeights(A.maximum(A.T))


def knn_weights(dataset: SpatialDataset, k: int) -> SpatialWeights:
    """0/1 k-nearest-neighbour graph on the coordinates, symmetrized by OR."""
    return _knn_graph(dataset.locations, k)


def covariate_knn_weights(dataset: SpatialDataset, k: int) -> SpatialWeights:
    """k-NN graph in covariate space (intercept column excluded)."""
    Z = dataset.covariates[:, 1:]
    if Z.shape[1] == 0:
        raise ValueError("covariate distances need at least one non-intercept column")
    return _knn_graph(Z, k)


def _knn_graph(points: np.ndarray, k: int) -> SpatialWeights:
    n = points.shape[0]
    if int(k) != k or k < 1:
        raise ValueError("k must be a positive integer")
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the number of locations n={n}")
    return _symmetric_indicator(_knn_indices(points, points, int(k), exclude_self=True), n)


def exp_weights(dataset: SpatialDataset, bandwidth: float = 0.1,
                cutoff: float = DEFAULT_EXP_CUTOFF) -> SpatialWeights:
    """Gaussian-type kernel ``exp(-d^2 / bandwidth^2)``; entries below ``cutoff`` are dropped."""
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    if cutoff < 0:
        raise ValueError("cutoff must be nonnegative")
    locs = dataset.locations
    n = locs.shape[0]
    W = _exp_kernel(locs, locs, bandwidth, cutoff)
    W.setdiag(0.0)
    return SpatialWeights(W)


def _exp_kernel(query, points, bandwidth, cutoff) -> sp.csr_array:
    # exp(-r^2/h^2) >= cutoff  <=>  r <= h * sqrt(-log cutoff)
    radius = np.inf if cutoff <= 0 else bandwidth * np.sqrt(max(-np.log(cutoff), 0.0))
    rows, cols = [], []
    if np.isfinite(radius):
        tree = cKDTree(points)
        hits = tree.query_ball_point(query, r=radius)
        for i, js in enumerate(hits):
            rows.extend([i] * len(js))
            cols.extend(js)
        rows = np.asarray(rows, dtype=np.intp)
        cols = np.asarray(cols, dtype=np.intp)
    else:
        rows, cols = np.indices((query.shape[0], points.shape[0])).reshape(2, -1)
    d2 = ((query[rows] - points[cols]) ** 2).sum(axis=1)
    w = np.exp(-d2 / bandwidth**2)
    keep = w >= cutoff if cutoff > 0 else w > 0
    W = sp.csr_array((w[keep], (rows[keep], cols[keep])), shape=(query.shape[0], points.shape[0]))
    return W


def blend_weights(w1: SpatialWeights, w2: SpatialWeights) -> SpatialWeights:
    """Entrywise mean of two weight graphs."""
    if w1.matrix.shape != w2.matrix.shape:
        raise ValueError(f"weight shapes differ: {w1.matrix.shape} vs {w2.matrix.shape}")
    return SpatialWeights((w1.matrix + w2.matrix) * 0.5)


# ---------------------------------------------------------------------------
# cross weights for unsampled locations

def cross_knn_weights(new_locations, locations, k: int) -> CrossWeights:
    """Each new location gets weight 1 on its k nearest fitted locations."""
    new_locations = np.atleast_2d(np.asarray(new_locations, dtype=float))
    locations = np.asarray(locations, dtype=float)
    return _cross_knn(new_locations, locations, k)


def cross_covariate_knn_weights(new_covariates, covariates, k: int) -> CrossWeights:
    """As :func:`cross_knn_weights` in covariate space; pass covariates without the intercept."""
    return _cross_knn(np.atleast_2d(np.asarray(new_covariates, dtype=float)),
                      np.asarray(covariates, dtype=float), k)


def _cross_knn(query, points, k):
    m, n = query.shape[0], points.shape[0]
    if int(k) != k or k < 1 or k > n:
        raise ValueError(f"k must be an integer in [1, {n}]")
    nbrs = _knn_indices(query, points, int(k), exclude_self=False)
    rows = np.repeat(np.arange(m), nbrs.shape[1])
    return CrossWeights(sp.csr_array((np.ones(rows.size), (rows, nbrs.ravel())), shape=(m, n)))


def cross_exp_weights(new_locations, locations, bandwidth: float = 0.1,
                      cutoff: float = DEFAULT_EXP_CUTOFF) -> CrossWeights:
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    q = np.atleast_2d(np.asarray(new_locations, dtype=float))
    return CrossWeights(_exp_kernel(q, np.asarray(locations, dtype=float), bandwidth, cutoff))


def blend_cross_weights(c1: CrossWeights, c2: CrossWeights) -> CrossWeights:
    if c1.shape != c2.shape:
        raise ValueError(f"weight shapes differ: {c1.shape} vs {c2.shape}")
    return CrossWeights((c1.matrix + c2.matrix) * 0.5)
