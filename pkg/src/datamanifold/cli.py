"""Command-line interface: ``manifold <subcommand> ...``.

Results go to the file named by ``-o``; each run also writes ``<output>.manifest.json``
(the pipeline writes ``manifest.json`` inside its bundle). Errors are reported on
stderr as one JSON object, with exit code 2 for input/format errors, 3 for numerical
failures and 4 for violated preconditions.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from datamanifold import __version__
from datamanifold.clustering import DEFAULT_Z, adp_cluster, decision_graph, dp_cluster
from datamanifold.dataset import Dataset, clean, load_points
from datamanifold.density import PAK_DTHR, PAK_KMIN, knn_density, pak_density
from datamanifold.exceptions import DataFormatError, ManifoldError, PreconditionError
from datamanifold.id_estimation import (
    IdScan,
    compute_mu,
    id_2nn_fit,
    id_2nn_mle,
    id_decimation,
    id_gride,
)
from datamanifold.metric_comparison import (
    greedy_feature_selection,
    information_imbalance,
    neighborhood_overlap,
    ranks_from_graph,
)
from datamanifold.neighbors import (
    compute_neighbors,
    default_maxk,
    load_neighbor_graph,
    save_neighbor_graph,
)
from datamanifold.pipeline import (
    BENCH_STAGES,
    ID_METHODS,
    MANIFEST_VERSION,
    PipelineConfig,
    StageError,
    bench,
    clusters_dict,
    id_result_dict,
    load_density,
    run_pipeline,
    save_decision_graph,
    save_density,
    sha256_file,
    write_json,
)
from datamanifold.synthetic import GENERATORS, generate

log = logging.getLogger("manifold")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _id_value(text):
    if text == "auto":
        return text
    try:
        return float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError("--id takes a number or 'auto'") from exc


def _is_graph_file(path) -> bool:
    try:
        with open(path) as fh:
            return fh.readline().startswith("NNGRAPH")
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc


def _load_clean(args):
    ds = load_points(args.input, delimiter=args.delimiter, has_header=args.header)
    ds, report = clean(ds, drop_duplicates=not args.keep_duplicates)
    if report.n_before != report.n_after:
        log.info("cleaning: %s", report.as_dict())
    return ds, report


def _write_manifest(args, inputs, timings, extra=None):
    flags = {
        k: v
        for k, v in vars(args).items()
        if k not in ("func", "workers", "verbose", "output") and not callable(v)
    }
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "tool": "manifold",
        "version": __version__,
        "subcommand": args.command,
        "flags": flags,
        "seed": args.seed,
        "inputs": {k: {"name": Path(p).name, "sha256": sha256_file(p)} for k, p in inputs.items()},
        "outputs": {Path(args.output).name: sha256_file(args.output)},
        **(extra or {}),
        "runtime": {"workers": args.workers, "timings": timings},
    }
    write_json(manifest, str(args.output) + ".manifest.json")


# --------------------------------------------------------------------------------------
# subcommands


def cmd_neighbors(args):
    t0 = time.perf_counter()
    ds, report = _load_clean(args)
    maxk = args.maxk if args.maxk is not None else default_maxk(ds.n_points)
    graph = compute_neighbors(ds, maxk=maxk, metric=args.metric, workers=args.workers)
    save_neighbor_graph(graph, args.output)
    _write_manifest(
        args,
        {"points": args.input},
        {"neighbors": time.perf_counter() - t0},
        {"clean_report": report.as_dict(), "point_ids": [int(v) for v in ds.point_ids]},
    )


def cmd_id(args):
    t0 = time.perf_counter()
    ds = None
    if _is_graph_file(args.input):
        if args.method == "decimation":
            raise PreconditionError("decimation rebuilds neighbors and needs a points file")
        graph = load_neighbor_graph(args.input)
        if args.maxk is not None:
            graph = graph.restrict(args.maxk)
    else:
        ds, _ = _load_clean(args)
        graph = None
        if args.method != "decimation":
            if args.maxk is not None:
                maxk = args.maxk
            elif args.method == "gride":
                maxk = default_maxk(ds.n_points)
            else:
                maxk = min(2, ds.n_points - 1)
            graph = compute_neighbors(ds, maxk=maxk, metric=args.metric, workers=args.workers)

    if args.method == "twonn-mle":
        scan = IdScan([id_2nn_mle(compute_mu(graph))], "twonn-mle")
    elif args.method == "twonn-fit":
        scan = IdScan([id_2nn_fit(compute_mu(graph), args.discard)], "twonn-fit")
    elif args.method == "gride":
        scan = id_gride(graph, n1_values=args.n1, workers=args.workers)
    else:
        scan = id_decimation(
            ds, args.fractions, repeats=args.repeats, seed=args.seed, metric=args.metric,
            workers=args.workers,
        )
    write_json(id_result_dict(scan), args.output)
    _write_manifest(args, {"input": args.input}, {"id": time.perf_counter() - t0})


def cmd_density(args):
    t0 = time.perf_counter()
    graph = load_neighbor_graph(args.input)
    id_value = args.id
    if id_value == "auto":
        id_value = id_2nn_mle(compute_mu(graph)).id
        log.warning("--id auto: using 2NN intrinsic dimension %.6g", id_value)
    if args.method == "knn":
        density = knn_density(graph, args.k, id_value)
    else:
        density = pak_density(
            graph, id_value, dthr=args.dthr, k_min=args.k_min, workers=args.workers,
            error_model=args.pak_error,
        )
    save_density(density, args.output)
    _write_manifest(
        args, {"graph": args.input}, {"density": time.perf_counter() - t0}, {"id_used": id_value}
    )


def cmd_cluster(args):
    t0 = time.perf_counter()
    graph = load_neighbor_graph(args.input)
    density, pid = load_density(args.density)
    if density.n_points != graph.n_points:
        raise PreconditionError(
            f"density has {density.n_points} rows but the graph has {graph.n_points} points"
        )
    inputs = {"graph": args.input, "density": args.density}
    points = None
    if args.points:
        points = load_points(args.points, delimiter=args.delimiter, has_header=args.header).points
        inputs["points"] = args.points
    need_dg = args.method == "dp" or args.decision_graph
    dg = decision_graph(density, graph, points=points) if need_dg else None
    if args.method == "dp":
        if not args.centers:
            raise PreconditionError("dp clustering needs --centers (read them off the decision graph)")
        result = dp_cluster(dg, args.centers)
    else:
        result = adp_cluster(density, graph, z=args.z)
    result.check()
    write_json(clusters_dict(result), args.output)
    if args.decision_graph:
        save_decision_graph(dg, args.decision_graph, pid)
    _write_manifest(args, inputs, {"cluster": time.perf_counter() - t0})


def cmd_compare(args):
    t0 = time.perf_counter()
    ga = load_neighbor_graph(args.a)
    gb = load_neighbor_graph(args.b)
    if args.kind == "overlap":
        k = args.k if args.k is not None else min(30, ga.maxk, gb.maxk)
        out = {"overlap": neighborhood_overlap(ga, gb, k), "k": k, "n": ga.n_points}
    else:
        out = information_imbalance(ranks_from_graph(ga), ranks_from_graph(gb)).as_dict()
        if out["truncated_ab"] or out["truncated_ba"]:
            log.warning(
                "ranks beyond maxk counted as maxk+1 (%d and %d pairs)",
                out["truncated_ab"], out["truncated_ba"],
            )
    write_json(out, args.output)
    _write_manifest(args, {"a": args.a, "b": args.b}, {"compare": time.perf_counter() - t0})


def cmd_select_features(args):
    t0 = time.perf_counter()
    ds = load_points(args.input, delimiter=args.delimiter, has_header=args.header)
    X = ds.points
    if not np.isfinite(X).all():
        raise DataFormatError("feature selection needs finite values in every cell")
    target = None
    if args.target_cols:
        bad = [c for c in args.target_cols if not 0 <= c < X.shape[1]]
        if bad:
            raise PreconditionError(f"target columns {bad} out of range for {X.shape[1]} columns")
        target = np.array(args.target_cols)
    sel = greedy_feature_selection(
        X, target, max_size=args.max_size or X.shape[1], sample=args.sample, seed=args.seed
    )
    write_json(sel.as_dict(), args.output)
    _write_manifest(args, {"points": args.input}, {"select": time.perf_counter() - t0})


def cmd_pipeline(args):
    cfg = PipelineConfig(
        maxk=args.maxk,
        metric=args.metric,
        id_method=args.id_method,
        density_method=args.density_method,
        k=args.k,
        dthr=args.dthr,
        z=args.z,
        seed=args.seed,
        drop_duplicates=not args.keep_duplicates,
        delimiter=args.delimiter,
        has_header=args.header,
    )
    if (args.input is None) == (args.demo is None):
        raise PreconditionError("give exactly one of -i/--input and --demo")
    dataset = None
    if args.demo:
        demo = generate(args.demo, n=args.n, seed=args.seed)
        dataset = Dataset(points=demo.points)
    bundle = run_pipeline(args.input, args.output, cfg, workers=args.workers, dataset=dataset)
    if args.demo:
        bundle.manifest["demo"] = {"name": args.demo, "n": dataset.n_points}
        write_json(bundle.manifest, Path(args.output) / "manifest.json")
        if demo.labels is not None:
            np.savetxt(Path(args.output) / "true_labels.csv", demo.labels, fmt="%d")
    log.info("bundle written to %s: %d clusters", args.output, bundle.clusters.n_clusters)


def cmd_bench(args):
    report = bench(args.n, maxk=args.maxk, seed=args.seed, workers=args.workers, stages=args.stages)
    write_json(report, args.output)
    for stage, slope in report["slopes"].items():
        log.info("%s: log-log slope %.3f", stage, slope)


# --------------------------------------------------------------------------------------
# parser


def _add_points_options(p):
    p.add_argument("--delimiter", default=",", help="column separator (default ',')")
    p.add_argument("--header", action="store_true", help="skip one header line")


def _add_clean_options(p):
    p.add_argument(
        "--keep-duplicates", action="store_true", help="do not remove repeated points"
    )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS, help="threads")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(
        prog="manifold",
        description="Intrinsic dimension, density, clustering and metric comparison from distances.",
    )
    parser.add_argument("--version", action="version", version=f"manifold {__version__}")
    parser.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="threads (default: all cores)")
    parser.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("neighbors", parents=[common], help="build the nearest-neighbor graph")
    p.add_argument("-i", "--input", required=True, help="points file")
    p.add_argument("--maxk", type=int, help="neighbors per point (default min(100, N-1))")
    p.add_argument("--metric", default="euclidean", help="euclidean or minkowski(p)")
    p.add_argument("-o", "--output", required=True, help="graph file")
    _add_points_options(p)
    _add_clean_options(p)
    p.set_defaults(func=cmd_neighbors)

    p = sub.add_parser("id", parents=[common], help="estimate the intrinsic dimension")
    p.add_argument("--method", choices=ID_METHODS, default="twonn-mle")
    p.add_argument("-i", "--input", required=True, help="points file or graph file")
    p.add_argument("--maxk", type=int)
    p.add_argument("--metric", default="euclidean")
    p.add_argument("--fractions", type=_float_list, default=[1.0, 0.5, 0.25, 0.125])
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--n1", type=_int_list, default=None, help="Gride orders, e.g. 1,2,4,8")
    p.add_argument("--discard", type=float, default=0.1, help="tail fraction dropped by twonn-fit")
    p.add_argument("-o", "--output", required=True)
    _add_points_options(p)
    _add_clean_options(p)
    p.set_defaults(func=cmd_id)

    p = sub.add_parser("density", parents=[common], help="per-point log density")
    p.add_argument("--method", choices=("knn", "pak"), default="pak")
    p.add_argument("-i", "--input", required=True, help="graph file")
    p.add_argument("--id", type=_id_value, required=True, help="intrinsic dimension or 'auto'")
    p.add_argument("--k", type=int, default=30, help="neighbors for knn")
    p.add_argument("--dthr", type=float, default=PAK_DTHR, help="PAk rejection threshold")
    p.add_argument("--k-min", type=int, default=PAK_KMIN, help="smallest PAk neighborhood")
    p.add_argument(
        "--pak-error", choices=("fisher", "poisson"), default="fisher",
        help="PAk error bar: fitted-model information (default) or 1/sqrt(k)",
    )
    p.add_argument("-o", "--output", required=True, help="density CSV")
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("cluster", parents=[common], help="density-peak clustering")
    p.add_argument("--method", choices=("dp", "adp"), default="adp")
    p.add_argument("-i", "--input", required=True, help="graph file")
    p.add_argument("--density", required=True, help="density CSV")
    p.add_argument("--z", type=float, default=DEFAULT_Z, help="significance threshold for adp")
    p.add_argument("--centers", type=_int_list, help="center point indices for dp")
    p.add_argument("--points", help="points file, enables the exact decision-graph fallback")
    p.add_argument("--decision-graph", help="also write point_id,log_rho,delta to this CSV")
    p.add_argument("-o", "--output", required=True)
    _add_points_options(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("compare", parents=[common], help="compare two neighbor graphs")
    p.add_argument("kind", choices=("overlap", "imbalance"))
    p.add_argument("-a", required=True, help="graph file of metric a")
    p.add_argument("-b", required=True, help="graph file of metric b")
    p.add_argument("--k", type=int, help="neighborhood size for overlap (default min(30, maxk))")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("select-features", parents=[common], help="greedy imbalance-driven feature selection")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--target-cols", type=_int_list, help="columns of the target space (default all)")
    p.add_argument("--max-size", type=int)
    p.add_argument("--sample", type=int, default=2000, help="rows used in the evaluation")
    p.add_argument("-o", "--output", required=True)
    _add_points_options(p)
    p.set_defaults(func=cmd_select_features)

    p = sub.add_parser("pipeline", parents=[common], help="neighbors -> id -> density -> clusters")
    p.add_argument("-i", "--input", help="points file")
    p.add_argument("--demo", choices=sorted(GENERATORS), help="use a built-in synthetic dataset")
    p.add_argument("--n", type=int, help="size of the demo dataset")
    p.add_argument("--maxk", type=int)
    p.add_argument("--metric", default="euclidean")
    p.add_argument("--id-method", choices=ID_METHODS, default="twonn-mle")
    p.add_argument("--density-method", choices=("knn", "pak"), default="pak")
    p.add_argument("--k", type=int, default=30)
    p.add_argument("--dthr", type=float, default=PAK_DTHR)
    p.add_argument("--z", type=float, default=DEFAULT_Z)
    p.add_argument("-o", "--output", required=True, help="bundle directory")
    _add_points_options(p)
    _add_clean_options(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("bench", parents=[common], help="stage timings on uniform 2D data")
    p.add_argument("--n", type=_int_list, default=[1000, 10000], help="ascending sizes")
    p.add_argument("--maxk", type=int, default=100)
    p.add_argument("--stages", type=lambda s: s.split(","), default=list(BENCH_STAGES))
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(message)s", force=True)
    logging.captureWarnings(True)
    # numba probes optional threading backends; not actionable for users
    warnings.filterwarnings("ignore", message=".*TBB threading layer")
    try:
        args.func(args)
    except ManifoldError as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        if isinstance(exc, StageError):
            err["stage"] = exc.stage
            err["cause"] = type(exc.cause).__name__
        print(json.dumps(err), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(json.dumps({"error": "DataFormatError", "message": str(exc), "exit_code": 2}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
