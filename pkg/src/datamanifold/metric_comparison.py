"""Comparing distance measures defined on the same points.

Both quantities here only look at neighbor ranks, so any strictly increasing
transformation of a distance leaves them unchanged.

* neighborhood overlap: average fraction of shared k nearest neighbors;
* information imbalance ``Delta(a -> b)``: ``2/N`` times the mean rank under ``b`` of
  each point's nearest neighbor under ``a``. It is ``2/N`` for identical metrics
  and close to 1 for independent ones.

``greedy_feature_selection`` grows a subset of columns one at a time, each time
adding the column that makes the subset most informative about a target metric.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from datamanifold.exceptions import NumericalError, PreconditionError
from datamanifold.neighbors import Metric, NeighborGraph, _pairwise

DENSE_LIMIT = 5000


@dataclass(frozen=True, eq=False)
class RankTable:
    """Neighbor ranks of every point (1 = nearest).

    Dense tables hold the full (N, N) rank matrix with zeros on the diagonal.
    Truncated tables only know the first ``maxk`` neighbors of each point; any
    other pair is given rank ``maxk + 1``.
    """

    n_points: int
    ranks: np.ndarray | None = field(default=None, repr=False)
    neighbor_idx: np.ndarray | None = field(default=None, repr=False)

    @property
    def dense(self) -> bool:
        return self.ranks is not None

    @property
    def maxk(self) -> int:
        return self.n_points - 1 if self.dense else self.neighbor_idx.shape[1]

    def nearest(self) -> np.ndarray:
        """Index of the rank-1 neighbor of each point."""
        if self.dense:
            return np.argmax(self.ranks == 1, axis=1)
        return self.neighbor_idx[:, 0].copy()

    def rank_of(self, rows, cols):
        """Ranks of ``cols[t]`` as seen from ``rows[t]``.

        Returns ``(ranks, n_truncated)`` where ``n_truncated`` counts pairs beyond
        the stored ranks (reported as ``maxk + 1``).
        """
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        if self.dense:
            return self.ranks[rows, cols].astype(np.int64), 0
        hit = self.neighbor_idx[rows] == cols[:, None]
        found = hit.any(axis=1)
        r = np.where(found, np.argmax(hit, axis=1) + 1, self.maxk + 1)
        return r.astype(np.int64), int((~found).sum())


def ranks_from_distance_matrix(dist) -> RankTable:
    """Dense rank table from a full symmetric distance matrix (ties by ascending index)."""
    d = np.array(dist, dtype=np.float64)
    n = d.shape[0]
    if d.shape != (n, n):
        raise PreconditionError("distance matrix must be square")
    np.fill_diagonal(d, -np.inf)
    order = np.argsort(d, axis=1, kind="stable")
    ranks = np.empty((n, n), dtype=np.int32)
    np.put_along_axis(ranks, order, np.arange(n, dtype=np.int32)[None, :], axis=1)
    return RankTable(n, ranks=ranks)


def ranks_from_graph(graph: NeighborGraph) -> RankTable:
    """Truncated rank table from a neighbor graph."""
    return RankTable(graph.n_points, neighbor_idx=graph.neighbor_idx)


def ranks_from_points(
    points, metric: Metric | str = "euclidean", dense_limit: int = DENSE_LIMIT, maxk: int = 100
) -> RankTable:
    """Rank table of a point cloud: dense up to ``dense_limit`` points, truncated above."""
    from datamanifold.dataset import Dataset
    from datamanifold.neighbors import compute_neighbors

    if isinstance(metric, str):
        metric = Metric.parse(metric)
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    n = points.shape[0]
    if n <= dense_limit:
        return ranks_from_distance_matrix(_pairwise(points, points, metric))
    graph = compute_neighbors(Dataset(points=points), maxk=min(maxk, n - 1), metric=metric)
    return ranks_from_graph(graph)


@dataclass(frozen=True)
class ImbalanceResult:
    delta_ab: float
    delta_ba: float
    n: int
    truncated_ab: int = 0
    truncated_ba: int = 0

    def as_dict(self) -> dict:
        return {
            "delta_ab": self.delta_ab,
            "delta_ba": self.delta_ba,
            "n": self.n,
            "truncated_ab": self.truncated_ab,
            "truncated_ba": self.truncated_ba,
        }


def neighborhood_overlap(graph_a: NeighborGraph, graph_b: NeighborGraph, k: int) -> float:
    """Mean fraction of each point's k nearest neighbors shared by the two graphs."""
    if graph_a.n_points != graph_b.n_points:
        raise PreconditionError(
            f"graphs have different sizes ({graph_a.n_points} and {graph_b.n_points})"
        )
    if not 1 <= k <= min(graph_a.maxk, graph_b.maxk):
        raise PreconditionError(f"k must be in [1, {min(graph_a.maxk, graph_b.maxk)}]")
    both = np.sort(
        np.concatenate([graph_a.neighbor_idx[:, :k], graph_b.neighbor_idx[:, :k]], axis=1), axis=1
    )
    common = (both[:, 1:] == both[:, :-1]).sum(axis=1)
    return float(common.mean() / k)


def _directed_imbalance(ra: RankTable, rb: RankTable):
    n = ra.n_points
    nn = ra.nearest()
    r, truncated = rb.rank_of(np.arange(n), nn)
    return 2.0 * float(r.sum()) / n**2, truncated


def information_imbalance(ranks_a: RankTable, ranks_b: RankTable) -> ImbalanceResult:
    """Information imbalance in both directions, ``Delta(a -> b)`` and ``Delta(b -> a)``.

    When a nearest neighbor in one space falls outside the stored ranks of a truncated
    table its rank counts as ``maxk + 1``; the number of such pairs is reported.
    """
    if ranks_a.n_points != ranks_b.n_points:
        raise PreconditionError("rank tables describe different numbers of points")
    n = ranks_a.n_points
    if n < 3:
        raise PreconditionError("at least three points are needed")
    d_ab, t_ab = _directed_imbalance(ranks_a, ranks_b)
    d_ba, t_ba = _directed_imbalance(ranks_b, ranks_a)
    return ImbalanceResult(d_ab, d_ba, n, t_ab, t_ba)


# --------------------------------------------------------------------------------------
# feature selection


@dataclass
class FeatureSelection:
    """Greedy selection path.

    ``order`` is the sequence in which columns were added. ``path`` holds the
    imbalances of each prefix of ``order``; ``curve`` holds, for each size, the best
    prefix of at most that size, so that its forward imbalance never increases.
    """

    order: list
    path: list
    curve: list

    def as_dict(self) -> dict:
        return {"order": self.order, "curve": self.curve, "path": self.path}


def _sqdist(x):
    x = x[:, None] if x.ndim == 1 else x
    return cdist(x, x, "sqeuclidean")


def _rank_of_target(d2, targets):
    """Rank (ties by index) of ``targets[i]`` within row i of ``d2``, self excluded."""
    n = d2.shape[0]
    rows = np.arange(n)
    dt = d2[rows, targets][:, None]
    cols = np.arange(n)[None, :]
    closer = (d2 < dt) | ((d2 == dt) & (cols < targets[:, None]))
    closer[rows, rows] = False
    return closer.sum(axis=1) + 1


def greedy_feature_selection(
    X,
    target=None,
    max_size: int | None = None,
    sample: int = 2000,
    seed: int = 0,
) -> FeatureSelection:
    """Forward greedy search for the columns most informative about a target metric.

    Args:
        X (np.ndarray): data matrix (N, D)
        target: column indices defining the target space, or an (N, D') matrix;
            default all columns of ``X``
        max_size (int): number of greedy steps, default D
        sample (int): number of rows used in the evaluation (random, seeded)
        seed (int): seed of the row subsample

    Returns:
        FeatureSelection: ties between candidates go to the lowest column index.
            Candidates whose distances are all zero carry no rank information and
            are skipped.
    """
    X = np.asarray(X, dtype=np.float64)
    n_all, d = X.shape
    if d < 2:
        raise PreconditionError("feature selection needs at least two columns")
    max_size = d if max_size is None else int(max_size)
    if not 1 <= max_size <= d:
        raise PreconditionError(f"max_size must be in [1, {d}]")
    if target is None:
        T = X
    else:
        target = np.asarray(target)
        T = X[:, target] if target.ndim == 1 and target.dtype.kind in "iu" else np.asarray(target, float)
    if T.shape[0] != n_all:
        raise PreconditionError("target has a different number of rows")

    rows = np.arange(n_all)
    if n_all > sample:
        rows = np.sort(np.random.default_rng(seed).choice(n_all, size=sample, replace=False))
    Xs, Ts = X[rows], T[rows]
    n = rows.size
    if n < 3:
        raise PreconditionError("at least three points are needed")

    target_ranks = ranks_from_distance_matrix(_sqdist(Ts))
    nn_target = target_ranks.nearest()
    idx = np.arange(n)

    def evaluate(d2):
        off = d2.copy()
        off[idx, idx] = np.inf
        if not (off[np.isfinite(off)] > 0).any():
            return None
        nn = np.argmin(off, axis=1)
        fwd = 2.0 * target_ranks.ranks[idx, nn].sum() / n**2
        bwd = 2.0 * _rank_of_target(d2, nn_target).sum() / n**2
        return float(fwd), float(bwd)

    current = np.zeros((n, n))
    chosen: list = []
    path, curve = [], []
    best = None
    for size in range(1, max_size + 1):
        step = None
        for f in range(d):
            if f in chosen:
                continue
            d2 = current + _sqdist(Xs[:, f])
            res = evaluate(d2)
            if res is None:
                continue
            if step is None or res[0] < step[1][0]:
                step = (f, res, d2)
        if step is None:
            if size == 1:
                raise NumericalError("every candidate feature gives degenerate (all-tied) distances")
            break
        f, (fwd, bwd), current = step
        chosen.append(f)
        path.append({"size": size, "d_fwd": fwd, "d_bwd": bwd})
        if best is None or fwd <= best["d_fwd"]:
            best = {"d_fwd": fwd, "d_bwd": bwd, "subset": list(chosen)}
        curve.append({"size": size, "d_fwd": best["d_fwd"], "d_bwd": best["d_bwd"], "subset": best["subset"]})
    return FeatureSelection([int(c) for c in chosen], path, curve)
