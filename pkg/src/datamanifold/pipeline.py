"""Result files, the end-to-end pipeline and the timing harness.

File formats:

* ``graph.nn``: see :func:`datamanifold.neighbors.save_neighbor_graph`
* ``id.json``: ``{"method", "estimates": [{"id", "id_err", "scale", "n_used"}], "id_used"}``
* ``density.csv``: ``point_id,log_rho,log_rho_err,k_used``
* ``clusters.json``: labels, centers, peak and saddle log densities (``null`` where two
  clusters share no border) and the dendrogram layout
* ``manifest.json``: versioned record of flags, input hashes, output hashes and timings
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import shutil
import tempfile
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from datamanifold import __version__
from datamanifold.clustering import (
    DEFAULT_Z,
    ClusterResult,
    DecisionGraph,
    adp_cluster,
    dendrogram,
)
from datamanifold.dataset import Dataset, clean, load_points, save_points
from datamanifold.density import PAK_DTHR, PAK_KMIN, DensityField, knn_density, pak_density
from datamanifold.exceptions import DataFormatError, ManifoldError, PreconditionError
from datamanifold.id_estimation import (
    IdScan,
    compute_mu,
    id_2nn_fit,
    id_2nn_mle,
    id_decimation,
    id_gride,
)
from datamanifold.neighbors import (
    NeighborGraph,
    compute_neighbors,
    default_maxk,
    save_neighbor_graph,
)

MANIFEST_VERSION = 1
ID_METHODS = ("twonn-mle", "twonn-fit", "gride", "decimation")
DENSITY_METHODS = ("knn", "pak")
CLUSTER_METHODS = ("adp",)


# --------------------------------------------------------------------------------------
# serialisation


def _num(x):
    """JSON-safe float: non-finite values become ``null``."""
    x = float(x)
    return x if math.isfinite(x) else None


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, allow_nan=False)
        fh.write("\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def id_result_dict(scan: IdScan, id_used: float | None = None) -> dict:
    out = scan.as_dict()
    if id_used is not None:
        out["id_used"] = id_used
    return out


def save_density(density: DensityField, path, point_ids=None) -> None:
    ids = np.arange(density.n_points) if point_ids is None else np.asarray(point_ids)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point_id", "log_rho", "log_rho_err", "k_used"])
        for pid, r, e, k in zip(ids, density.log_rho, density.log_rho_err, density.k_used):
            w.writerow([int(pid), repr(float(r)), repr(float(e)), int(k)])


def load_density(path, id_used: float = float("nan")) -> tuple[DensityField, np.ndarray]:
    """Read a density file written by :func:`save_density`; returns the field and point ids."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    with fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["point_id", "log_rho", "log_rho_err", "k_used"]:
        raise DataFormatError(f"{path}: expected header point_id,log_rho,log_rho_err,k_used")
    data = rows[1:]
    if not data:
        raise DataFormatError(f"{path}: no data rows")
    try:
        pid = np.array([int(r[0]) for r in data])
        log_rho = np.array([float(r[1]) for r in data])
        err = np.array([float(r[2]) for r in data])
        k = np.array([int(r[3]) for r in data])
    except (ValueError, IndexError) as exc:
        raise DataFormatError(f"{path}: malformed row ({exc})") from exc
    if not (np.isfinite(log_rho).all() and np.isfinite(err).all()) or (err < 0).any():
        raise DataFormatError(f"{path}: non-finite log density or negative error")
    return DensityField(log_rho, err, k, id_used, "file"), pid


def clusters_dict(result: ClusterResult, point_ids=None) -> dict:
    d = dendrogram(result)
    out = {
        "n_clusters": result.n_clusters,
        "z": result.z_used,
        "labels": [int(v) for v in result.labels],
        "centers": [int(v) for v in result.centers],
        "center_ids": None if point_ids is None else [int(point_ids[c]) for c in result.centers],
        "populations": [int(v) for v in result.populations],
        "peak_log_rho": [_num(v) for v in result.peak_log_rho],
        "peak_err": [_num(v) for v in result.peak_err],
        "saddles": [[_num(v) for v in row] for row in result.saddle_log_rho],
        "saddle_err": [[_num(v) for v in row] for row in result.saddle_err],
        "dendrogram": d.as_dict(),
    }
    return out


def save_decision_graph(dg: DecisionGraph, path, point_ids=None) -> None:
    ids = np.arange(dg.delta.shape[0]) if point_ids is None else np.asarray(point_ids)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point_id", "log_rho", "delta"])
        for pid, r, dl in zip(ids, dg.log_rho, dg.delta):
            w.writerow([int(pid), repr(float(r)), repr(float(dl))])


# --------------------------------------------------------------------------------------
# pipeline


class StageError(ManifoldError):
    """Wraps the error of a pipeline stage; keeps the exit code of the cause."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)


@dataclass
class PipelineConfig:
    maxk: int | None = None
    metric: str = "euclidean"
    id_method: str = "twonn-mle"
    density_method: str = "pak"
    k: int = 30
    dthr: float = PAK_DTHR
    cluster_method: str = "adp"
    z: float = DEFAULT_Z
    seed: int = 0
    drop_duplicates: bool = True
    delimiter: str = ","
    has_header: bool = False

    def validate(self):
        if self.id_method not in ID_METHODS:
            raise PreconditionError(f"id method must be one of {ID_METHODS}")
        if self.density_method not in DENSITY_METHODS:
            raise PreconditionError(f"density method must be one of {DENSITY_METHODS}")
        if self.cluster_method not in CLUSTER_METHODS:
            raise PreconditionError("the pipeline clusters with adp (dp needs explicit centers)")
        if not self.z > 0:
            raise PreconditionError("z must be > 0")


@dataclass
class Bundle:
    path: Path
    manifest: dict
    graph: NeighborGraph = field(repr=False)
    id_used: float = 0.0
    density: DensityField | None = field(default=None, repr=False)
    clusters: ClusterResult | None = field(default=None, repr=False)


def _estimate_id(cfg: PipelineConfig, ds: Dataset, graph: NeighborGraph, workers: int) -> IdScan:
    if cfg.id_method == "twonn-mle":
        return IdScan([id_2nn_mle(compute_mu(graph))], "twonn-mle")
    if cfg.id_method == "twonn-fit":
        return IdScan([id_2nn_fit(compute_mu(graph))], "twonn-fit")
    if cfg.id_method == "gride":
        return id_gride(graph, workers=workers)
    return id_decimation(ds, seed=cfg.seed, metric=cfg.metric, workers=workers)


@contextmanager
def _stage(name, timings):
    t0 = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except (ManifoldError, ValueError, ArithmeticError, OSError) as exc:
        raise StageError(name, exc) from exc
    finally:
        timings[name] = time.perf_counter() - t0


def run_pipeline(
    points_path,
    out_dir,
    config: PipelineConfig | None = None,
    workers: int = 1,
    dataset: Dataset | None = None,
) -> Bundle:
    """Run neighbors, intrinsic dimension, density and clustering; write a result bundle.

    Args:
        points_path: delimited point file; ignored (may be ``None``) when ``dataset`` is given
        out_dir: bundle directory, created if needed; existing bundle files are replaced
        config (PipelineConfig): stage settings
        workers (int): threads; outputs do not depend on it
        dataset (Dataset): in-memory points, written into the bundle as ``points.csv``

    Returns:
        Bundle

    Raises:
        StageError: naming the failing stage; nothing is left in ``out_dir`` from this run
    """
    cfg = config or PipelineConfig()
    cfg.validate()
    out_dir = Path(out_dir)
    created = not out_dir.exists()
    out_dir.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".partial-", dir=out_dir))
    timings: dict = {}
    inputs: dict = {}
    try:
        with _stage("load", timings):
            if dataset is None:
                raw = load_points(points_path, delimiter=cfg.delimiter, has_header=cfg.has_header)
                inputs["points"] = {"name": Path(points_path).name, "sha256": sha256_file(points_path)}
            else:
                raw = dataset
                save_points(raw, tmp / "points.csv")
            ds, report = clean(raw, drop_duplicates=cfg.drop_duplicates)
        maxk = cfg.maxk if cfg.maxk is not None else default_maxk(ds.n_points)
        with _stage("neighbors", timings):
            graph = compute_neighbors(ds, maxk=maxk, metric=cfg.metric, workers=workers)
            save_neighbor_graph(graph, tmp / "graph.nn")
        with _stage("id", timings):
            scan = _estimate_id(cfg, ds, graph, workers)
            id_used = float(scan.estimates[0].id)
            write_json(id_result_dict(scan, id_used), tmp / "id.json")
        with _stage("density", timings):
            density_method = cfg.density_method
            if density_method == "pak" and graph.maxk < PAK_KMIN:
                # too few neighbors for the adaptive test; recorded in the manifest
                density_method = "knn"
            if density_method == "knn":
                density = knn_density(graph, min(cfg.k, graph.maxk), id_used)
            else:
                density = pak_density(graph, id_used, dthr=cfg.dthr, workers=workers)
            save_density(density, tmp / "density.csv", ds.point_ids)
        with _stage("cluster", timings):
            result = adp_cluster(density, graph, z=cfg.z)
            result.check()
            cd = clusters_dict(result, ds.point_ids)
            write_json(cd, tmp / "clusters.json")
            write_json(cd["dendrogram"], tmp / "dendrogram.json")

        outputs = {p.name: sha256_file(p) for p in sorted(tmp.iterdir())}
        manifest = {
            "manifest_version": MANIFEST_VERSION,
            "tool": "manifold",
            "version": __version__,
            "subcommand": "pipeline",
            "flags": {**cfg.__dict__, "maxk": maxk},
            "seed": cfg.seed,
            "inputs": inputs,
            "clean_report": report.as_dict(),
            "id_used": id_used,
            "density_method_used": density_method,
            "outputs": outputs,
            # run-specific fields; everything above is reproducible
            "runtime": {"workers": workers, "timings": timings},
        }
        write_json(manifest, tmp / "manifest.json")
        for p in sorted(tmp.iterdir()):
            os.replace(p, out_dir / p.name)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        if created:
            shutil.rmtree(out_dir, ignore_errors=True)
        raise
    shutil.rmtree(tmp, ignore_errors=True)
    return Bundle(out_dir, manifest, graph, id_used, density, result)


def reproducible_part(manifest: dict) -> dict:
    """Manifest without the run-specific ``runtime`` section."""
    return {k: v for k, v in manifest.items() if k != "runtime"}


# --------------------------------------------------------------------------------------
# timing harness

BENCH_STAGES = ("neighbors", "id", "density-knn", "density-pak", "adp")


def bench(n_values, maxk: int = 100, seed: int = 0, workers: int = 1, stages=BENCH_STAGES) -> dict:
    """Wall time of each stage on uniform 2D data of increasing size.

    Returns:
        dict: ``{"rows": [{"stage", "n", "seconds"}], "slopes": {stage: slope}}``, the
            slope being the least-squares fit of log(time) against log(n).
    """
    n_values = [int(v) for v in n_values]
    if not n_values or any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise PreconditionError("n values must be strictly ascending")
    unknown = set(stages) - set(BENCH_STAGES)
    if unknown:
        raise PreconditionError(f"unknown stages {sorted(unknown)}")
    # compile the numba kernels outside the timed region
    warm = compute_neighbors(Dataset(points=np.random.default_rng(seed).random((50, 2))), maxk=10)
    pak_density(warm, 2.0)
    rows = []
    for i, n in enumerate(n_values):
        pts = np.random.default_rng([seed, i]).random((n, 2))
        ds = Dataset(points=pts)
        k = min(maxk, n - 1)
        t = {}
        t0 = time.perf_counter()
        graph = compute_neighbors(ds, maxk=k, workers=workers)
        t["neighbors"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        d = id_2nn_mle(compute_mu(graph)).id
        t["id"] = time.perf_counter() - t0
        if "density-knn" in stages:
            t0 = time.perf_counter()
            knn_density(graph, min(30, k), d)
            t["density-knn"] = time.perf_counter() - t0
        if "density-pak" in stages or "adp" in stages:
            t0 = time.perf_counter()
            dens = pak_density(graph, d, workers=workers)
            t["density-pak"] = time.perf_counter() - t0
        if "adp" in stages:
            t0 = time.perf_counter()
            adp_cluster(dens, graph)
            t["adp"] = time.perf_counter() - t0
        rows += [{"stage": s, "n": n, "seconds": t[s]} for s in stages]
    slopes = {}
    if len(n_values) > 1:
        for s in stages:
            secs = [r["seconds"] for r in rows if r["stage"] == s]
            slopes[s] = float(np.polyfit(np.log(n_values), np.log(np.maximum(secs, 1e-9)), 1)[0])
    return {"maxk": maxk, "seed": seed, "rows": rows, "slopes": slopes}
