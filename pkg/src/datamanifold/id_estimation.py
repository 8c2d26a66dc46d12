"""Intrinsic dimension from nearest-neighbor distance ratios.

Under local uniformity the ratio of second to first neighbor distance is Pareto
distributed with shape equal to the intrinsic dimension. This module provides the
maximum-likelihood and regression versions of that estimator (2NN), a multiscale
scan by random decimation, and the generalised-ratio estimator (Gride), which reaches
larger scales by using the n1-th and 2*n1-th neighbors instead of subsampling.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from datamanifold.dataset import Dataset
from datamanifold.exceptions import NumericalError, PreconditionError
from datamanifold.neighbors import Metric, NeighborGraph, compute_neighbors

GRIDE_ID_MAX = 1000.0
GRIDE_XTOL = 1e-8


@dataclass(frozen=True)
class MuSample:
    """Per-point distance ratios and the length scale they probe."""

    mu: np.ndarray
    scale: float

    @property
    def n(self) -> int:
        return self.mu.shape[0]


@dataclass(frozen=True)
class IdEstimate:
    id: float
    id_err: float
    scale: float
    method: str
    n_used: int

    def as_dict(self) -> dict:
        return {"id": self.id, "id_err": self.id_err, "scale": self.scale, "n_used": self.n_used}


@dataclass(frozen=True)
class IdScan:
    """ID estimates ordered by increasing scale."""

    estimates: list = field(default_factory=list)
    method: str = ""

    def __post_init__(self):
        scales = [e.scale for e in self.estimates]
        if any(b <= a for a, b in zip(scales, scales[1:])):
            raise NumericalError(f"scan scales are not strictly increasing: {scales}")

    @property
    def ids(self) -> np.ndarray:
        return np.array([e.id for e in self.estimates])

    @property
    def errors(self) -> np.ndarray:
        return np.array([e.id_err for e in self.estimates])

    @property
    def scales(self) -> np.ndarray:
        return np.array([e.scale for e in self.estimates])

    def as_dict(self) -> dict:
        return {"method": self.method, "estimates": [e.as_dict() for e in self.estimates]}


def _ratios(graph: NeighborGraph, n1: int, n2: int) -> np.ndarray:
    if graph.maxk < n2:
        raise PreconditionError(f"graph has maxk={graph.maxk}, need at least {n2} neighbors")
    r1 = graph.neighbor_dist[:, n1 - 1]
    r2 = graph.neighbor_dist[:, n2 - 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = r2 / r1
    if not np.isfinite(mu).all():
        raise NumericalError("non-finite distance ratio; the data contain duplicate points")
    if (mu <= 1).any():
        bad = int(np.flatnonzero(mu <= 1)[0])
        raise NumericalError(
            f"degenerate sample: point {bad} has equidistant neighbors {n1} and {n2} (ratio 1)"
        )
    return mu


def compute_mu(graph: NeighborGraph) -> MuSample:
    """Ratios ``r2/r1`` of second to first neighbor distance, one per point."""
    mu = _ratios(graph, 1, 2)
    return MuSample(mu, float(graph.neighbor_dist[:, 0].mean()))


def id_2nn_mle(sample: MuSample) -> IdEstimate:
    """Closed-form maximum-likelihood 2NN estimate, ``n / sum(log mu)``.

    The error is the asymptotic standard deviation from the Fisher information,
    ``id / sqrt(n)``.
    """
    n = sample.n
    if n < 2:
        raise PreconditionError("the 2NN estimator needs at least two ratios")
    s = float(np.sum(np.log(sample.mu)))
    if s <= 0:
        raise NumericalError("all ratios equal 1; the intrinsic dimension is undefined")
    d = n / s
    return IdEstimate(d, d / np.sqrt(n), sample.scale, "twonn-mle", n)


def id_2nn_fit(sample: MuSample, discard_fraction: float = 0.1) -> IdEstimate:
    """2NN estimate by least squares on the linearised Pareto CDF.

    ``-log(1 - F(mu))`` is regressed on ``log(mu)`` through the origin after
    dropping the largest ``discard_fraction`` of the ratios.
    """
    n = sample.n
    if n < 10:
        raise PreconditionError("the regression estimator needs at least 10 ratios")
    if not 0 <= discard_fraction < 1:
        raise PreconditionError("discard_fraction must lie in [0, 1)")
    n_keep = int(np.floor(n * (1 - discard_fraction)))
    # F = 1 at the largest ratio makes y infinite; that point can never be used
    n_keep = min(n_keep, n - 1)
    if n_keep < 2:
        raise NumericalError("fewer than two ratios left after discarding the tail")
    x = np.log(np.sort(sample.mu)[:n_keep])
    y = -np.log1p(-np.arange(1, n_keep + 1) / n)
    sxx = float(x @ x)
    if sxx <= 0:
        raise NumericalError("all ratios equal 1")
    d = float(x @ y) / sxx
    resid = y - d * x
    err = float(np.sqrt(resid @ resid / (n_keep - 1) / sxx))
    return IdEstimate(d, err, sample.scale, "twonn-fit", n_keep)


def id_decimation(
    ds: Dataset,
    fractions=(1.0, 0.5, 0.25, 0.125),
    repeats: int = 10,
    seed: int = 0,
    metric: Metric | str = "euclidean",
    workers: int = 1,
) -> IdScan:
    """Multiscale 2NN by random decimation.

    For each fraction, ``repeats`` subsamples without replacement are drawn, their
    neighbor relations rebuilt and the 2NN MLE computed. The reported ID is the mean
    over repeats, its error the standard deviation over repeats (0 for a single
    repeat) and the scale the mean first-neighbor distance.
    """
    if ds.points is None:
        raise PreconditionError("decimation needs coordinates to rebuild neighbors")
    if repeats < 1:
        raise PreconditionError("repeats must be >= 1")
    n = ds.n_points
    fractions = list(fractions)
    for f in fractions:
        if not 0 < f <= 1:
            raise PreconditionError(f"fraction {f} outside (0, 1]")
        if round(f * n) < 20:
            raise PreconditionError(f"fraction {f} leaves fewer than 20 of {n} points")

    seeds = np.random.SeedSequence(seed).spawn(len(fractions) * repeats)

    def one(job):
        fi, r = divmod(job, repeats)
        m = int(round(fractions[fi] * n))
        if m == n:
            sub = ds
        else:
            rng = np.random.default_rng(seeds[job])
            sub = ds.subset(np.sort(rng.choice(n, size=m, replace=False)))
        try:
            graph = compute_neighbors(sub, maxk=2, metric=metric)
        except PreconditionError as exc:
            raise NumericalError(f"duplicate-dominated subsample at fraction {fractions[fi]}") from exc
        return id_2nn_mle(compute_mu(graph))

    jobs = range(len(fractions) * repeats)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(j) for j in jobs]

    estimates = []
    for fi, f in enumerate(fractions):
        chunk = results[fi * repeats : (fi + 1) * repeats]
        ids = np.array([e.id for e in chunk])
        estimates.append(
            IdEstimate(
                float(ids.mean()),
                float(ids.std()),
                float(np.mean([e.scale for e in chunk])),
                "decimation",
                chunk[0].n_used,
            )
        )
    estimates.sort(key=lambda e: e.scale)
    return IdScan(estimates, "decimation")


# --------------------------------------------------------------------------------------
# Gride


def gride_log_likelihood(d, log_mu, n1: int, n2: int) -> float:
    """Log-likelihood of ratios ``mu = r_n2 / r_n1`` at intrinsic dimension ``d``.

    Each ratio has density ``d (mu^d - 1)^(n2-n1-1) / (B(n2-n1, n1) mu^((n2-1)d + 1))``;
    the Beta normalisation does not depend on ``d`` and is omitted.
    """
    x = d * log_mu
    # log(mu^d - 1) = x + log(1 - exp(-x)), stable for large x
    log_term = x + np.log(-np.expm1(-x))
    return float(
        log_mu.size * np.log(d)
        + (n2 - n1 - 1) * log_term.sum()
        - ((n2 - 1) * d + 1) * log_mu.sum()
    )


def _gride_score(d, log_mu, n1, n2):
    x = d * log_mu
    return (
        log_mu.size / d
        + (n2 - n1 - 1) * np.sum(log_mu / -np.expm1(-x))
        - (n2 - 1) * log_mu.sum()
    )


def _gride_information(d, log_mu, n1, n2):
    x = d * log_mu
    em = -np.expm1(-x)
    # d/dd [log_mu / (1 - e^-x)] = -log_mu^2 e^-x / (1 - e^-x)^2
    return log_mu.size / d**2 + (n2 - n1 - 1) * np.sum(log_mu**2 * np.exp(-x) / em**2)


def _gride_fit(log_mu, n1, n2, id_max=GRIDE_ID_MAX, xtol=GRIDE_XTOL):
    # the score is strictly decreasing in d and +inf at 0+
    lo, hi = 0.0, 1.0
    while _gride_score(hi, log_mu, n1, n2) > 0:
        lo, hi = hi, min(hi * 2, id_max)
        if lo >= id_max:
            raise NumericalError(f"Gride likelihood has no maximum below id_max={id_max}")
    if lo == 0.0:
        lo = hi / 2
        while _gride_score(lo, log_mu, n1, n2) < 0:
            lo /= 2
            if lo < 1e-12:
                raise NumericalError("Gride likelihood maximum is at id -> 0")
    try:
        d = brentq(_gride_score, lo, hi, args=(log_mu, n1, n2), xtol=xtol, rtol=4 * np.finfo(float).eps)
    except (ValueError, RuntimeError) as exc:
        raise NumericalError(f"Gride maximisation failed: {exc}") from exc
    err = 1.0 / np.sqrt(_gride_information(d, log_mu, n1, n2))
    return float(d), float(err)


def id_gride(
    graph: NeighborGraph, n1_values=None, id_max: float = GRIDE_ID_MAX, workers: int = 1
) -> IdScan:
    """Generalised-ratio ID estimates using neighbors ``n1`` and ``n2 = 2*n1``.

    Args:
        graph (NeighborGraph): neighbor graph with ``maxk >= 2*max(n1_values)``
        n1_values: orders to probe, default powers of two up to ``maxk/2``
        id_max (float): upper end of the search interval
        workers (int): threads, one fit per order

    Returns:
        IdScan: one estimate per order with scale the mean ``n1``-th neighbor distance
            and error from the observed information at the maximum.
    """
    if n1_values is None:
        n1_values = [2**j for j in range(int(np.log2(graph.maxk // 2)) + 1)] if graph.maxk >= 2 else []
    n1_values = sorted(set(int(v) for v in n1_values))
    if not n1_values or n1_values[0] < 1:
        raise PreconditionError("n1 values must be positive integers")
    if 2 * n1_values[-1] > graph.maxk:
        raise PreconditionError(f"n1={n1_values[-1]} needs maxk >= {2 * n1_values[-1]}, graph has {graph.maxk}")

    def one(n1):
        n2 = 2 * n1
        log_mu = np.log(_ratios(graph, n1, n2))
        d, err = _gride_fit(log_mu, n1, n2, id_max)
        scale = float(graph.neighbor_dist[:, n1 - 1].mean())
        return IdEstimate(d, err, scale, "gride", log_mu.size)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            estimates = list(pool.map(one, n1_values))
    else:
        estimates = [one(v) for v in n1_values]
    return IdScan(estimates, "gride")
