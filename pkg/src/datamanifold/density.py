"""Density estimation on the intrinsic manifold.

Volumes are measured in the intrinsic dimension rather than the embedding one, so
only neighbor distances and an ID estimate are needed. Two estimators:

* ``knn_density``: fixed-k estimate ``k / (N * omega_id * d_k^id)``.
* ``pak_density``: point-adaptive k. For each point, k grows while a likelihood-ratio
  test cannot distinguish a constant density from one with a linear trend across the
  neighbor shells; the density at the point is the intercept of the trend model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.special import gammaln

from datamanifold.exceptions import NumericalError, PreconditionError
from datamanifold.neighbors import NeighborGraph

PAK_DTHR = 23.92812698
PAK_KMIN = 4


@dataclass(frozen=True, eq=False)
class DensityField:
    """Per-point natural-log density with errors and the neighborhood size used."""

    log_rho: np.ndarray
    log_rho_err: np.ndarray
    k_used: np.ndarray
    id_used: float
    method: str

    @property
    def n_points(self) -> int:
        return self.log_rho.shape[0]


def log_unit_ball_volume(d: float) -> float:
    return 0.5 * d * math.log(math.pi) - float(gammaln(0.5 * d + 1.0))


def unit_ball_volume(d: float) -> float:
    """Volume of the unit ball in ``d`` dimensions, ``pi^(d/2) / Gamma(d/2 + 1)``.

    Valid for non-integer ``d``.
    """
    if not (np.isfinite(d) and d > 0):
        raise PreconditionError(f"dimension must be a positive finite number, got {d}")
    return math.exp(log_unit_ball_volume(d))


def _check_id(id: float):
    if not (np.isfinite(id) and id > 0):
        raise PreconditionError(f"intrinsic dimension must be > 0, got {id}")


def knn_density(graph: NeighborGraph, k: int, id: float) -> DensityField:
    """Fixed-k nearest-neighbor density with error ``1/sqrt(k)`` on the log."""
    _check_id(id)
    if not 1 <= k <= graph.maxk:
        raise PreconditionError(f"k must be in [1, maxk={graph.maxk}], got {k}")
    n = graph.n_points
    dk = graph.neighbor_dist[:, k - 1]
    if (dk <= 0).any():
        raise NumericalError("zero distance to the k-th neighbor")
    log_rho = math.log(k) - math.log(n) - log_unit_ball_volume(id) - id * np.log(dk)
    return DensityField(
        log_rho,
        np.full(n, 1.0 / math.sqrt(k)),
        np.full(n, k, dtype=np.int64),
        float(id),
        "knn",
    )


# --------------------------------------------------------------------------------------
# PAk


@numba.njit(cache=True)
def _moments_log(log_u, k, a):
    m = -np.inf
    for l in range(1, k + 1):
        t = log_u[l - 1] + a * l
        if t > m:
            m = t
    s0 = 0.0
    s1 = 0.0
    s2 = 0.0
    for l in range(1, k + 1):
        t = math.exp(log_u[l - 1] + a * l - m)
        s0 += t
        s1 += l * t
        s2 += l * l * t
    mean = s1 / s0
    return math.log(s0) + m, mean, s2 / s0 - mean * mean


@numba.njit(cache=True)
def _moments(u, log_u, k, a):
    """Weighted moments of the shell index with weights ``u_l exp(a l)``, l = 1..k.

    Returns ``(log S0, mean, variance)``.
    """
    # u_l <= 1, so exp(a l - m) with m = max(a, a k) keeps every term <= 1
    m = a * k if a > 0 else a
    r = math.exp(a)
    w = math.exp(a - m)
    s0 = 0.0
    s1 = 0.0
    s2 = 0.0
    for l in range(1, k + 1):
        t = u[l - 1] * w
        s0 += t
        s1 += l * t
        s2 += l * l * t
        w *= r
    if not (s0 > 1e-280 and s0 < np.inf):
        return _moments_log(log_u, k, a)
    mean = s1 / s0
    return math.log(s0) + m, mean, s2 / s0 - mean * mean


@numba.njit(cache=True)
def _fit_slope(u, log_u, k, a0):
    """Maximise the profile likelihood of the trend model over the slope ``a``.

    The score ``sum(l) - k * mean_a(l)`` is strictly decreasing in ``a``, so Newton
    steps are safeguarded by the bracket it implies.
    Returns ``(a, log S0(a), converged)``.
    """
    sum_l = 0.5 * k * (k + 1)
    a = a0
    lo = -np.inf
    hi = np.inf
    for _ in range(200):
        logs0, mean, var = _moments(u, log_u, k, a)
        score = sum_l - k * mean
        if score > 0:
            lo = a
        else:
            hi = a
        step = score / (k * var) if var > 0 else 0.0
        a_new = a + step
        if not (a_new > lo and a_new < hi):
            if np.isfinite(lo) and np.isfinite(hi):
                a_new = 0.5 * (lo + hi)
            elif np.isfinite(lo):
                a_new = lo + 1.0
            else:
                a_new = hi - 1.0
        if abs(a_new - a) < 1e-10 * (1.0 + abs(a)):
            logs0, mean, var = _moments(u, log_u, k, a_new)
            return a_new, logs0, True
        a = a_new
    return a, 0.0, False


@numba.njit(cache=True)
def _pak_point(dist, id, log_omega, log_n, dthr, kmin):
    maxk = dist.shape[0]
    log_big = log_omega + id * math.log(dist[maxk - 1])
    u = np.empty(maxk)
    log_u = np.empty(maxk)
    prev = 0.0
    for l in range(maxk):
        # shell volume relative to the ball of radius d_maxk
        cur = math.exp(id * math.log(dist[l] / dist[maxk - 1]))
        u[l] = cur - prev
        log_u[l] = math.log(u[l]) if u[l] > 0 else -np.inf
        prev = cur

    kstar = kmin
    a = 0.0
    a_best = 0.0
    logs0_best = 0.0
    cum = 0.0
    for l in range(kmin - 1):
        cum += u[l]
    ok = True
    for k in range(kmin, maxk + 1):
        cum += u[k - 1]
        a_k, logs0, conv = _fit_slope(u, log_u, k, a)
        if not conv:
            ok = False
            break
        d_k = 2.0 * (k * math.log(cum) - k * logs0 + a_k * 0.5 * k * (k + 1))
        if d_k > dthr and k > kmin:
            break
        kstar = k
        a = a_k
        a_best = a_k
        logs0_best = logs0
        if d_k > dthr:
            break

    k = kstar
    # intercept: k = exp(G) * S0(a)  ->  G = log k - log S0
    g = math.log(k) - logs0_best
    log_rho = g - log_n - log_big
    # observed information of (G, a); w_l = u_l exp(G + a l) sums to k
    i00 = 0.0
    i01 = 0.0
    i11 = 0.0
    for l in range(1, k + 1):
        w = math.exp(log_u[l - 1] + g + a_best * l)
        i00 += w
        i01 += l * w
        i11 += l * l * w
    det = i00 * i11 - i01 * i01
    if det > 0:
        var = i11 / det
    else:
        var = 1.0 / k
    return log_rho, math.sqrt(var), kstar, ok


@numba.njit(parallel=True, cache=True)
def _pak_all(dist, id, log_omega, log_n, dthr, kmin):
    n = dist.shape[0]
    log_rho = np.empty(n)
    err = np.empty(n)
    kstar = np.empty(n, dtype=np.int64)
    ok = np.empty(n, dtype=np.bool_)
    for i in numba.prange(n):
        log_rho[i], err[i], kstar[i], ok[i] = _pak_point(dist[i], id, log_omega, log_n, dthr, kmin)
    return log_rho, err, kstar, ok


def pak_density(
    graph: NeighborGraph,
    id: float,
    dthr: float = PAK_DTHR,
    k_min: int = PAK_KMIN,
    workers: int | None = None,
    error_model: str = "fisher",
) -> DensityField:
    """Point-adaptive k-NN density.

    For every point, neighborhoods k = k_min, k_min+1, ... are tested. Within the
    first k shells, model A has constant log density and model B a log density
    linear in the shell index; their likelihood-ratio statistic is compared with
    ``dthr`` (default 23.928, a chi-square(1) tail probability of about 1e-6). The
    adaptive k is the largest k before the first rejection. The log density is the
    intercept of model B. With ``error_model="fisher"`` its error is the square root of
    the intercept entry of the inverse observed information of model B, about
    ``2/sqrt(k)`` since the slope is fitted too; ``"poisson"`` gives ``1/sqrt(k)``,
    the error of a single-parameter count.

    Args:
        graph (NeighborGraph): neighbor graph, ``maxk >= k_min``
        id (float): intrinsic dimension used for the shell volumes
        dthr (float): rejection threshold on the statistic
        k_min (int): smallest neighborhood tested
        workers (int | None): numba threads; results do not depend on it
        error_model (str): ``"fisher"`` or ``"poisson"``

    Returns:
        DensityField
    """
    _check_id(id)
    if error_model not in ("fisher", "poisson"):
        raise PreconditionError(f"unknown error model {error_model!r}")
    if k_min < 3:
        raise PreconditionError("k_min must be at least 3")
    if graph.maxk < k_min:
        raise PreconditionError(f"PAk needs maxk >= k_min = {k_min}, graph has maxk={graph.maxk}")
    if (graph.neighbor_dist[:, 0] <= 0).any():
        raise NumericalError("zero first-neighbor distance")
    args = (
        graph.neighbor_dist,
        float(id),
        log_unit_ball_volume(id),
        math.log(graph.n_points),
        float(dthr),
        int(k_min),
    )
    if workers is not None:
        prev = numba.get_num_threads()
        numba.set_num_threads(max(1, min(int(workers), numba.config.NUMBA_NUM_THREADS)))
        try:
            log_rho, err, kstar, ok = _pak_all(*args)
        finally:
            numba.set_num_threads(prev)
    else:
        log_rho, err, kstar, ok = _pak_all(*args)
    if not ok.all() or not np.isfinite(log_rho).all():
        bad = int(np.flatnonzero(~ok | ~np.isfinite(log_rho))[0])
        raise NumericalError(f"PAk fit failed at point {bad}")
    if error_model == "poisson":
        err = 1.0 / np.sqrt(kstar)
    return DensityField(log_rho, err, kstar, float(id), "pak")
