"""Density-peak clustering.

``decision_graph`` computes, for every point, the distance to the nearest point of
higher density. ``dp_cluster`` assigns points to user-chosen centers by following
that link, and ``adp_cluster`` finds the centers automatically: every local density
maximum starts as a peak and peaks that are not statistically distinguishable from
the saddle separating them from a neighbor are merged.

Density ties are broken by point index everywhere: among equal densities the lower
index counts as denser.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from datamanifold.density import DensityField
from datamanifold.exceptions import NumericalError, PreconditionError
from datamanifold.neighbors import NeighborGraph, _pairwise

DEFAULT_Z = 1.5


@dataclass(frozen=True, eq=False)
class DecisionGraph:
    """Per-point ``delta`` (distance to the nearest denser point) and that point's index.

    ``nearest_higher`` is -1 only for the global density maximum.
    """

    delta: np.ndarray
    log_rho: np.ndarray
    nearest_higher: np.ndarray
    log_rho_err: np.ndarray | None = None
    graph: NeighborGraph | None = field(default=None, repr=False)


@dataclass(frozen=True, eq=False)
class ClusterResult:
    labels: np.ndarray
    centers: np.ndarray
    peak_log_rho: np.ndarray
    peak_err: np.ndarray
    saddle_log_rho: np.ndarray
    saddle_err: np.ndarray
    z_used: float | None = None

    @property
    def n_clusters(self) -> int:
        return len(self.centers)

    @property
    def populations(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_clusters)

    def check(self) -> None:
        """Raise ``AssertionError`` if a structural invariant does not hold."""
        c = np.arange(self.n_clusters)
        assert np.array_equal(self.labels[self.centers], c), "center labels"
        assert self.labels.min() >= 0 and self.labels.max() < self.n_clusters, "label range"
        s = self.saddle_log_rho
        assert np.array_equal(s, s.T), "saddle matrix not symmetric"
        assert np.array_equal(self.saddle_err, self.saddle_err.T), "saddle errors not symmetric"
        border = np.isfinite(s)
        assert (self.peak_log_rho[:, None] >= s)[border].all(), "saddle above peak"


def density_order(log_rho: np.ndarray) -> np.ndarray:
    """Position of each point in the ordering by decreasing density (0 = densest)."""
    order = np.lexsort((np.arange(log_rho.shape[0]), -log_rho))
    pos = np.empty_like(order)
    pos[order] = np.arange(order.shape[0])
    return pos


def _check_inputs(density: DensityField, graph: NeighborGraph):
    if density.n_points != graph.n_points:
        raise PreconditionError(
            f"density has {density.n_points} points but the graph has {graph.n_points}"
        )
    if not np.isfinite(density.log_rho).all():
        raise NumericalError("log density contains non-finite values")


def _first_denser_neighbor(graph: NeighborGraph, pos: np.ndarray, limit=None):
    """Index into each row of the first neighbor denser than the point, -1 if none."""
    nbr = graph.neighbor_idx if limit is None else graph.neighbor_idx[:, :limit]
    denser = pos[nbr] < pos[:, None]
    first = np.argmax(denser, axis=1)
    first[~denser[np.arange(nbr.shape[0]), first]] = -1
    return first


def decision_graph(density: DensityField, graph: NeighborGraph, points=None) -> DecisionGraph:
    """Distance from every point to its nearest point of higher density.

    Points with no denser point among their ``maxk`` neighbors are resolved by a
    scan over all denser points, which needs ``points``. Without coordinates the
    link goes to the global maximum with ``delta`` set to the largest known
    distance, and a warning is issued. The global maximum itself gets the largest
    known distance: to any point when ``points`` is given, else to its ``maxk``-th
    neighbor.

    Args:
        density (DensityField): log densities (and errors) of the points
        graph (NeighborGraph): neighbor graph of the same points
        points (np.ndarray | None): coordinates for the exhaustive fallback

    Returns:
        DecisionGraph
    """
    _check_inputs(density, graph)
    n = graph.n_points
    pos = density_order(density.log_rho)
    first = _first_denser_neighbor(graph, pos)
    rows = np.arange(n)
    nearest = np.where(first >= 0, graph.neighbor_idx[rows, np.maximum(first, 0)], -1)
    delta = np.where(first >= 0, graph.neighbor_dist[rows, np.maximum(first, 0)], 0.0)

    top = int(np.argmin(pos))
    if points is None:
        delta[top] = graph.neighbor_dist[top, -1]
    else:
        points = np.asarray(points, dtype=np.float64)
        delta[top] = _pairwise(points[top : top + 1], points, graph.metric).max()
    missing = np.flatnonzero(first < 0)
    missing = missing[missing != top]
    if missing.size:
        if points is None:
            warnings.warn(
                f"{missing.size} points have no denser point among their {graph.maxk} neighbors "
                "and no coordinates are available; linking them to the global maximum",
                stacklevel=2,
            )
            nearest[missing] = top
            delta[missing] = graph.neighbor_dist[missing, -1]
        else:
            order = np.argsort(pos)
            for i in missing:
                cand = order[: pos[i]]
                d = _pairwise(points[i : i + 1], points[cand], graph.metric)[0]
                dmin = d.min()
                j = cand[d == dmin].min()
                nearest[i] = j
                delta[i] = dmin
    return DecisionGraph(delta, density.log_rho, nearest, density.log_rho_err, graph)


# --------------------------------------------------------------------------------------
# borders and saddles


def _border_points(graph: NeighborGraph, labels: np.ndarray, k_used: np.ndarray):
    """Mutual half-neighborhood pairs (i, j) with different labels.

    j must be among the first ``k_used[i] // 2`` neighbors of i and i among the first
    ``k_used[j] // 2`` neighbors of j.
    """
    n, maxk = graph.neighbor_idx.shape
    half = np.minimum(k_used, maxk) // 2
    cols = np.arange(maxk)
    inside = cols[None, :] < half[:, None]
    ii = np.broadcast_to(np.arange(n)[:, None], (n, maxk))[inside]
    jj = graph.neighbor_idx[inside]
    keys = ii * n + jj
    cross = labels[ii] != labels[jj]
    ci, cj = ii[cross], jj[cross]
    keys.sort()
    rev = cj * n + ci
    loc = np.searchsorted(keys, rev)
    loc[loc == keys.size] = 0
    mutual = keys[loc] == rev
    return ci[mutual], cj[mutual]


def _saddles(labels, n_clusters, ci, cj, log_rho, pos):
    """Densest border point for every pair of bordering clusters.

    Returns an (n_clusters, n_clusters) matrix of point indices, -1 where the two
    clusters share no border.
    """
    saddle = np.full((n_clusters, n_clusters), -1, dtype=np.int64)
    if ci.size == 0:
        return saddle
    a, b = labels[ci], labels[cj]
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    # both ends of a border pair are border points
    pts = np.concatenate([ci, cj])
    lo2, hi2 = np.concatenate([lo, lo]), np.concatenate([hi, hi])
    order = np.lexsort((pos[pts], hi2, lo2))
    pts, lo2, hi2 = pts[order], lo2[order], hi2[order]
    start = np.ones(pts.size, dtype=bool)
    start[1:] = (lo2[1:] != lo2[:-1]) | (hi2[1:] != hi2[:-1])
    saddle[lo2[start], hi2[start]] = pts[start]
    saddle[hi2[start], lo2[start]] = pts[start]
    return saddle


def _saddle_matrices(saddle_idx, log_rho, log_rho_err):
    border = saddle_idx >= 0
    s = np.where(border, log_rho[np.maximum(saddle_idx, 0)], -np.inf)
    e = np.where(border, log_rho_err[np.maximum(saddle_idx, 0)], 0.0)
    np.fill_diagonal(s, -np.inf)
    np.fill_diagonal(e, 0.0)
    return s, e


# --------------------------------------------------------------------------------------
# DP


def dp_cluster(dg: DecisionGraph, centers) -> ClusterResult:
    """Assign every point to the cluster of its nearest denser point.

    ``centers`` seed the clusters in the given order (cluster c has center
    ``centers[c]``). Saddles between clusters are filled in when the decision graph
    carries its neighbor graph and density errors; otherwise they are -inf.
    """
    centers = np.asarray(centers, dtype=np.int64).ravel()
    n = dg.log_rho.shape[0]
    if centers.size == 0:
        raise PreconditionError("at least one center is required")
    if np.unique(centers).size != centers.size:
        raise PreconditionError("centers must be distinct")
    if centers.min() < 0 or centers.max() >= n:
        raise PreconditionError("center index out of range")

    pos = density_order(dg.log_rho)
    labels = np.full(n, -1, dtype=np.int64)
    labels[centers] = np.arange(centers.size)
    nh = dg.nearest_higher
    for i in np.argsort(pos):
        if labels[i] >= 0:
            continue
        j = nh[i]
        if j < 0 or labels[j] < 0:
            raise PreconditionError(
                f"point {i} does not reach any center through denser points; "
                "the global density maximum must be a center"
            )
        labels[i] = labels[j]

    err = dg.log_rho_err if dg.log_rho_err is not None else np.zeros(n)
    k = centers.size
    if dg.graph is not None and dg.log_rho_err is not None:
        k_used = np.full(n, dg.graph.maxk)
        ci, cj = _border_points(dg.graph, labels, k_used)
        s_idx = _saddles(labels, k, ci, cj, dg.log_rho, pos)
    else:
        s_idx = np.full((k, k), -1, dtype=np.int64)
    s, e = _saddle_matrices(s_idx, dg.log_rho, err)
    return ClusterResult(labels, centers, dg.log_rho[centers].copy(), err[centers].copy(), s, e)


# --------------------------------------------------------------------------------------
# ADP


def _merge(peak_pos, peak_rho, peak_err, s_idx, log_rho, log_rho_err, pos, z):
    """Greedy merging of non-significant peaks.

    Returns ``parent`` (final surviving cluster of each putative cluster) and the
    updated saddle index matrix.
    """
    p = peak_rho.size
    s_idx = s_idx.copy()
    active = np.ones(p, dtype=bool)
    parent = np.arange(p)

    def ratios(r):
        """Significance of every pair (r, c); +inf where no border."""
        other = np.arange(p)
        sid = s_idx[r]
        border = (sid >= 0) & active & (other != r)
        lower = np.where(peak_pos[r] > peak_pos, r, other)
        sr = log_rho[np.maximum(sid, 0)]
        se = log_rho_err[np.maximum(sid, 0)]
        with np.errstate(divide="ignore", invalid="ignore"):
            val = (peak_rho[lower] - sr) / (peak_err[lower] + se)
        return np.where(border, val, np.inf)

    rmat = np.vstack([ratios(r) for r in range(p)]) if p > 1 else np.full((p, p), np.inf)
    row_min = rmat.min(axis=1) if p else np.empty(0)
    row_arg = rmat.argmin(axis=1) if p else np.empty(0, dtype=np.int64)

    while p > 1:
        r = int(np.argmin(row_min))
        if not row_min[r] <= z:
            break
        c = int(row_arg[r])
        # the surviving peak is the denser one
        keep, gone = (r, c) if peak_pos[r] < peak_pos[c] else (c, r)
        sk, sg = s_idx[keep], s_idx[gone]
        cand = np.where(
            (sk < 0) | ((sg >= 0) & (pos[np.maximum(sg, 0)] < pos[np.maximum(sk, 0)])), sg, sk
        )
        s_idx[keep] = cand
        s_idx[:, keep] = cand
        s_idx[keep, keep] = -1
        s_idx[gone] = -1
        s_idx[:, gone] = -1
        active[gone] = False
        parent[parent == gone] = keep

        rmat[gone] = np.inf
        rmat[:, gone] = np.inf
        row_min[gone] = np.inf
        new = ratios(keep)
        rmat[keep] = new
        rmat[:, keep] = new
        stale = (row_arg == gone) | (row_arg == keep)
        stale[keep] = True
        stale &= active
        for q in np.flatnonzero(stale):
            row_arg[q] = int(np.argmin(rmat[q]))
            row_min[q] = rmat[q, row_arg[q]]
        better = active & ~stale & (new < row_min)
        row_min[better] = new[better]
        row_arg[better] = keep
    return parent, s_idx


def adp_cluster(density: DensityField, graph: NeighborGraph, z: float = DEFAULT_Z) -> ClusterResult:
    """Automatic density-peak clustering with statistical merging.

    1. Every point denser than all of its first ``k_used[i]`` neighbors is a peak;
       other points follow their nearest denser neighbor.
    2. Two clusters border each other through mutual half-neighborhood pairs; the
       saddle is the densest border point.
    3. While some bordering pair has ``log_rho(lower peak) - log_rho(saddle)`` not
       larger than ``z * (err(peak) + err(saddle))``, the pair with the smallest
       ratio is merged into the denser peak.

    Args:
        density (DensityField): log densities with errors and neighborhood sizes
        graph (NeighborGraph): the graph the density was computed on
        z (float): significance threshold, typically between 1 and 5

    Returns:
        ClusterResult: clusters numbered by decreasing peak density
    """
    _check_inputs(density, graph)
    if not z > 0:
        raise PreconditionError("z must be positive")
    n = graph.n_points
    log_rho, err = density.log_rho, density.log_rho_err
    k_used = np.minimum(np.asarray(density.k_used), graph.maxk)
    pos = density_order(log_rho)

    # putative peaks: denser than every point of their own neighborhood
    cols = np.arange(graph.maxk)
    within = cols[None, :] < k_used[:, None]
    denser_nbr = (pos[graph.neighbor_idx] < pos[:, None]) & within
    is_peak = ~denser_nbr.any(axis=1)
    first = np.argmax(denser_nbr, axis=1)
    nearest = graph.neighbor_idx[np.arange(n), first]

    peaks = np.flatnonzero(is_peak)
    peaks = peaks[np.argsort(pos[peaks])]
    labels = np.full(n, -1, dtype=np.int64)
    labels[peaks] = np.arange(peaks.size)
    for i in np.argsort(pos):
        if labels[i] < 0:
            labels[i] = labels[nearest[i]]

    p = peaks.size
    ci, cj = _border_points(graph, labels, k_used)
    if p > 1 and ci.size == 0:
        warnings.warn(
            f"{p} density peaks but no borders between them; maxk={graph.maxk} is probably "
            "too small and many peaks may be fictitious",
            stacklevel=2,
        )
    s_idx = _saddles(labels, p, ci, cj, log_rho, pos)

    parent, s_idx = _merge(
        pos[peaks], log_rho[peaks], err[peaks], s_idx, log_rho, err, pos, z
    )
    survivors = np.unique(parent)
    survivors = survivors[np.argsort(pos[peaks[survivors]])]
    remap = np.full(p, -1, dtype=np.int64)
    remap[survivors] = np.arange(survivors.size)
    labels = remap[parent[labels]]
    centers = peaks[survivors]
    s, e = _saddle_matrices(s_idx[np.ix_(survivors, survivors)], log_rho, err)
    return ClusterResult(
        labels, centers, log_rho[centers].copy(), err[centers].copy(), s, e, float(z)
    )


# --------------------------------------------------------------------------------------
# dendrogram


@dataclass(frozen=True)
class Dendrogram:
    """Bar layout of clusters on [0, 1] with saddle links.

    ``order`` lists clusters left to right; ``x``, ``width`` and ``peak_h`` are
    indexed by cluster; each link is ``(a, b, height)``.
    """

    order: list
    x: np.ndarray
    width: np.ndarray
    peak_h: np.ndarray
    links: list

    def as_dict(self) -> dict:
        return {
            "order": [int(c) for c in self.order],
            "x": [float(v) for v in self.x],
            "width": [float(v) for v in self.width],
            "peak_h": [float(v) for v in self.peak_h],
            "links": [{"a": int(a), "b": int(b), "h": float(h)} for a, b, h in self.links],
        }


def dendrogram(result: ClusterResult) -> Dendrogram:
    """Lay out clusters for a peak/saddle dendrogram.

    Links are added by decreasing saddle height (a maximum spanning forest of the
    saddle matrix). Each link joins two groups of adjacent bars; the group holding
    the lower cluster index (the denser peak) goes on the left. Remaining groups are
    placed by their lowest cluster index. Each bar is as wide as its population
    share and the cluster sits at its middle.
    """
    k = result.n_clusters
    if k < 1:
        raise PreconditionError("no clusters")
    s = result.saddle_log_rho
    iu, ju = np.triu_indices(k, 1)
    h = s[iu, ju]
    keep = np.isfinite(h)
    iu, ju, h = iu[keep], ju[keep], h[keep]
    edge_order = np.lexsort((ju, iu, -h))

    groups = {c: [c] for c in range(k)}
    owner = list(range(k))
    links = []
    for e in edge_order:
        a, b = int(iu[e]), int(ju[e])
        ga, gb = owner[a], owner[b]
        if ga == gb:
            continue
        left, right = (ga, gb) if min(groups[ga]) < min(groups[gb]) else (gb, ga)
        merged = groups.pop(left) + groups.pop(right)
        new = min(merged)
        groups[new] = merged
        for c in merged:
            owner[c] = new
        links.append((a, b, float(h[e])))

    order = [c for g in sorted(groups, key=lambda g: min(groups[g])) for c in groups[g]]
    width = result.populations / result.populations.sum()
    x = np.empty(k)
    edge = 0.0
    for c in order:
        x[c] = edge + width[c] / 2
        edge += width[c]
    return Dendrogram(order, x, width, result.peak_log_rho.copy(), links)


# --------------------------------------------------------------------------------------
# evaluation


def pairwise_f1(labels_true, labels_pred) -> float:
    """F1 score over pairs of points: a pair is positive when both are in the same cluster."""
    labels_true = np.asarray(labels_true)
    labels_pred = np.asarray(labels_pred)
    _, t = np.unique(labels_true, return_inverse=True)
    _, p = np.unique(labels_pred, return_inverse=True)
    table = np.zeros((t.max() + 1, p.max() + 1))
    np.add.at(table, (t, p), 1)

    def pairs(x):
        return float((x * (x - 1) / 2).sum())

    tp = pairs(table)
    pred, true = pairs(table.sum(axis=0)), pairs(table.sum(axis=1))
    if tp == 0:
        return 0.0
    precision, recall = tp / pred, tp / true
    return 2 * precision * recall / (precision + recall)
