"""Exact k-nearest-neighbor graphs.

Every estimator in the package reads its distances from a :class:`NeighborGraph`:
for each point, the ``maxk`` closest other points sorted by distance, ties broken
by ascending point index.
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from datamanifold.dataset import Dataset
from datamanifold.exceptions import DataFormatError, PreconditionError

DEFAULT_MAXK = 100
BRUTE_FORCE_DIM = 30
_BLOCK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class Metric:
    """Distance used to build a graph: euclidean, or minkowski with exponent ``p``."""

    name: str = "euclidean"
    p: float = 2.0

    def __post_init__(self):
        if self.name not in ("euclidean", "minkowski"):
            raise PreconditionError(f"unknown metric {self.name!r}")
        if self.name == "euclidean":
            object.__setattr__(self, "p", 2.0)
        elif not self.p > 0:
            raise PreconditionError("minkowski exponent must be > 0")

    @classmethod
    def parse(cls, text: str) -> Metric:
        """Parse ``euclidean``, ``minkowski(3)`` or ``minkowski:3``."""
        text = text.strip()
        if text == "euclidean":
            return cls()
        m = re.fullmatch(r"minkowski[(:]\s*([0-9.eE+-]+)\s*\)?", text)
        if m is None:
            raise DataFormatError(f"cannot parse metric {text!r}")
        return cls("minkowski", float(m.group(1)))

    def __str__(self):
        if self.name == "euclidean":
            return "euclidean"
        return f"minkowski({self.p:g})"


@dataclass(frozen=True, eq=False)
class NeighborGraph:
    """Sorted neighbor lists, ``neighbor_idx`` and ``neighbor_dist`` both of shape (N, maxk)."""

    neighbor_idx: np.ndarray
    neighbor_dist: np.ndarray
    metric: Metric = Metric()
    source: str = "computed-from-points"

    def __post_init__(self):
        idx = np.ascontiguousarray(self.neighbor_idx, dtype=np.int64)
        dist = np.ascontiguousarray(self.neighbor_dist, dtype=np.float64)
        if idx.shape != dist.shape or idx.ndim != 2:
            raise PreconditionError("neighbor_idx and neighbor_dist must be matching (N, maxk) arrays")
        idx.setflags(write=False)
        dist.setflags(write=False)
        object.__setattr__(self, "neighbor_idx", idx)
        object.__setattr__(self, "neighbor_dist", dist)

    @property
    def n_points(self) -> int:
        return self.neighbor_idx.shape[0]

    @property
    def maxk(self) -> int:
        return self.neighbor_idx.shape[1]

    def restrict(self, maxk: int) -> NeighborGraph:
        """Column prefix of the graph, i.e. the graph that ``maxk`` neighbors would give."""
        if not 1 <= maxk <= self.maxk:
            raise PreconditionError(f"maxk must be in [1, {self.maxk}]")
        return NeighborGraph(
            self.neighbor_idx[:, :maxk], self.neighbor_dist[:, :maxk], self.metric, self.source
        )

    def equals(self, other: NeighborGraph) -> bool:
        return (
            self.metric == other.metric
            and np.array_equal(self.neighbor_idx, other.neighbor_idx)
            and np.array_equal(self.neighbor_dist, other.neighbor_dist)
        )


def default_maxk(n_points: int) -> int:
    return min(DEFAULT_MAXK, n_points - 1)


def _sort_rows(dist, idx):
    order = np.lexsort((idx, dist), axis=-1)
    return np.take_along_axis(dist, order, axis=1), np.take_along_axis(idx, order, axis=1)


def _pairwise(a, b, metric: Metric):
    if metric.name == "euclidean":
        return cdist(a, b, "euclidean")
    return cdist(a, b, "minkowski", p=metric.p)


def _exact_rows(points, rows, maxk, metric):
    """Full sort of the distance rows ``rows``; used when a tie straddles position maxk."""
    d = _pairwise(points[rows], points, metric)
    d[np.arange(len(rows)), rows] = np.inf
    idx = np.broadcast_to(np.arange(points.shape[0]), d.shape)
    d, idx = _sort_rows(d, idx)
    return d[:, :maxk], idx[:, :maxk]


def _truncate(dist, idx, maxk):
    """Keep the first maxk sorted candidates; report rows whose cut falls inside a tie."""
    dist, idx = _sort_rows(dist, idx)
    if dist.shape[1] > maxk:
        tied = np.flatnonzero(dist[:, maxk - 1] == dist[:, maxk])
    else:
        tied = np.empty(0, dtype=np.int64)
    return dist[:, :maxk], idx[:, :maxk], tied


def _brute_block(points, start, stop, maxk, metric):
    n = points.shape[0]
    rows = np.arange(start, stop)
    d = _pairwise(points[start:stop], points, metric)
    d[np.arange(stop - start), rows] = np.inf
    m = min(maxk + 1, n - 1)
    if m < n - 1:
        part = np.argpartition(d, m - 1, axis=1)[:, :m]
    else:
        part = np.argsort(d, axis=1, kind="stable")[:, :m]
    pd = np.take_along_axis(d, part, axis=1)
    return _truncate(pd, part.astype(np.int64), maxk)


def _brute_force(points, maxk, metric, workers):
    n = points.shape[0]
    block = max(1, _BLOCK_ELEMENTS // n)
    starts = list(range(0, n, block))
    dist = np.empty((n, maxk))
    idx = np.empty((n, maxk), dtype=np.int64)
    tied_rows = []

    def run(start):
        stop = min(start + block, n)
        d, i, tied = _brute_block(points, start, stop, maxk, metric)
        dist[start:stop] = d
        idx[start:stop] = i
        return tied + start

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(workers) as pool:
            tied_rows = list(pool.map(run, starts))
    else:
        tied_rows = [run(s) for s in starts]
    return dist, idx, np.concatenate(tied_rows) if tied_rows else np.empty(0, dtype=np.int64)


def _kdtree(points, maxk, metric, workers):
    n = points.shape[0]
    kq = min(maxk + 2, n)
    tree = cKDTree(points)
    d, i = tree.query(points, k=kq, p=metric.p, workers=workers)
    i = i.astype(np.int64)
    is_self = i == np.arange(n)[:, None]
    missing_self = np.flatnonzero(~is_self.any(axis=1))
    if missing_self.size:
        # more than kq points at distance zero from this one
        raise PreconditionError(
            f"zero-distance pair detected at point {missing_self[0]}; clean() the dataset first"
        )
    keep = ~is_self
    d = d[keep].reshape(n, kq - 1)
    i = i[keep].reshape(n, kq - 1)
    return _truncate(d, i, maxk)


def compute_neighbors(
    ds: Dataset,
    maxk: int | None = None,
    metric: Metric | str = "euclidean",
    workers: int = 1,
    brute_force_dim: int = BRUTE_FORCE_DIM,
) -> NeighborGraph:
    """Compute the exact ``maxk`` nearest neighbors of every point.

    A kd-tree is used when the number of features is at most ``brute_force_dim``
    (and the metric is a norm, p >= 1); otherwise distances are computed in
    row blocks. Both paths give identical graphs up to floating point rounding.

    Args:
        ds (Dataset): dataset with coordinates
        maxk (int): neighbors per point, default ``min(100, N-1)``
        metric (Metric | str): distance
        workers (int): threads used for the queries
        brute_force_dim (int): dimension above which the kd-tree is skipped

    Returns:
        NeighborGraph
    """
    if ds.points is None:
        raise PreconditionError("compute_neighbors needs coordinates; this dataset holds distances")
    if isinstance(metric, str):
        metric = Metric.parse(metric)
    points = ds.points
    n = points.shape[0]
    if n < 2:
        raise PreconditionError("at least two points are needed")
    if maxk is None:
        maxk = default_maxk(n)
    if not 1 <= maxk <= n - 1:
        raise PreconditionError(f"maxk must be in [1, N-1] = [1, {n - 1}], got {maxk}")
    workers = max(1, int(workers))

    if points.shape[1] <= brute_force_dim and metric.p >= 1:
        dist, idx, tied = _kdtree(points, maxk, metric, workers)
    else:
        dist, idx, tied = _brute_force(points, maxk, metric, workers)
    if tied.size:
        dist[tied], idx[tied] = _exact_rows(points, tied, maxk, metric)

    zero = np.flatnonzero(dist[:, 0] <= 0)
    if zero.size:
        i = zero[0]
        raise PreconditionError(
            f"zero-distance pair ({i}, {idx[i, 0]}) detected; clean() the dataset first"
        )
    return NeighborGraph(idx, dist, metric)


def brute_force_neighbors(points, maxk, metric: Metric | str = "euclidean"):
    """Reference implementation: full distance matrix plus a stable row sort."""
    if isinstance(metric, str):
        metric = Metric.parse(metric)
    points = np.asarray(points, dtype=np.float64)
    return _exact_rows(points, np.arange(points.shape[0]), maxk, metric)


# --------------------------------------------------------------------------------------
# text format

_HEADER = re.compile(r"NNGRAPH v1 N=(\d+) maxk=(\d+) metric=(\S+)\s*$")


def save_neighbor_graph(graph: NeighborGraph, path) -> None:
    """Write ``graph`` as one ``i j rank distance`` line per stored neighbor."""
    n, k = graph.neighbor_idx.shape
    rows = np.repeat(np.arange(n), k)
    ranks = np.tile(np.arange(1, k + 1), n)
    with open(path, "w") as fh:
        fh.write(f"NNGRAPH v1 N={n} maxk={k} metric={graph.metric}\n")
        lines = [
            f"{i} {j} {r} {d:.17g}\n"
            for i, j, r, d in zip(
                rows.tolist(),
                graph.neighbor_idx.ravel().tolist(),
                ranks.tolist(),
                graph.neighbor_dist.ravel().tolist(),
            )
        ]
        fh.writelines(lines)


def _parse_body(lines, first_lineno):
    out = np.empty((len(lines), 4))
    for off, line in enumerate(lines):
        parts = line.split()
        lineno = first_lineno + off
        if len(parts) != 4:
            raise DataFormatError(f"line {lineno}: expected 4 fields, got {len(parts)}")
        try:
            i, j, r = int(parts[0]), int(parts[1]), int(parts[2])
            d = float(parts[3])
        except ValueError:
            raise DataFormatError(f"line {lineno}: malformed entry {line.strip()!r}") from None
        out[off] = (i, j, r, d)
    return out


def load_neighbor_graph(path) -> NeighborGraph:
    """Read a graph written by :func:`save_neighbor_graph` (or by an external tool).

    Rows are re-sorted by distance (ties by index) if the file lists them out of order.
    Line numbers in error messages are 1-based and include the header.
    """
    try:
        with open(path) as fh:
            header = fh.readline()
            body = [ln for ln in fh]
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    m = _HEADER.match(header)
    if m is None:
        raise DataFormatError(f"line 1: bad header {header.strip()!r}")
    n, k = int(m.group(1)), int(m.group(2))
    metric = Metric.parse(m.group(3))
    if k < 1 or n < 2 or k > n - 1:
        raise DataFormatError(f"line 1: inconsistent N={n}, maxk={k}")

    lineno = np.arange(len(body)) + 2
    keep = [t for t, ln in enumerate(body) if ln.strip()]
    body = [body[t] for t in keep]
    lineno = lineno[keep]
    try:
        table = np.loadtxt(body, ndmin=2) if body else np.empty((0, 4))
        if table.shape[1] != 4 or (table[:, :3] != np.floor(table[:, :3])).any():
            raise ValueError
    except ValueError:
        # slow path, only to locate the offending line
        table = _parse_body(body, 2)
    if len(table) != n * k:
        raise DataFormatError(f"expected {n * k} entries, found {len(table)}")
    i = table[:, 0].astype(np.int64)
    j = table[:, 1].astype(np.int64)
    r = table[:, 2].astype(np.int64)
    d = table[:, 3]

    bad = np.flatnonzero(d < 0)
    if bad.size:
        raise DataFormatError(f"line {lineno[bad[0]]}: negative distance {d[bad[0]]}")
    bad = np.flatnonzero(~np.isfinite(d))
    if bad.size:
        raise DataFormatError(f"line {lineno[bad[0]]}: non-finite distance")
    bad = np.flatnonzero((i < 0) | (i >= n) | (j < 0) | (j >= n))
    if bad.size:
        raise DataFormatError(f"line {lineno[bad[0]]}: point index out of range")
    bad = np.flatnonzero(i == j)
    if bad.size:
        raise DataFormatError(f"line {lineno[bad[0]]}: point {i[bad[0]]} listed as its own neighbor")
    bad = np.flatnonzero((r < 1) | (r > k))
    if bad.size:
        raise DataFormatError(f"line {lineno[bad[0]]}: rank {r[bad[0]]} outside 1..{k}")

    slot = i * k + (r - 1)
    counts = np.bincount(slot, minlength=n * k)
    if (counts != 1).any():
        s = int(np.flatnonzero(counts != 1)[0])
        raise DataFormatError(f"point {s // k}: rank {s % k + 1} missing or repeated (rank gap)")
    idx = np.empty(n * k, dtype=np.int64)
    dist = np.empty(n * k)
    idx[slot] = j
    dist[slot] = d
    dist, idx = _sort_rows(dist.reshape(n, k), idx.reshape(n, k))
    return NeighborGraph(idx, dist, metric, source="externally-supplied")
