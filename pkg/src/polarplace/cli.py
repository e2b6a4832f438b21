"""Command-line entry points.

Every command reads an optional flat config (``--config``), writes CSV with
a fixed header and echoes the full parsed config next to its outputs as
``<output>.config``. Exit status is 0 on success, 1 on any handled error and
2 on bad usage.
"""

import argparse
import csv
import io
import logging
import math
import os
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import build_encoder, load_config, override, render_config, scan_kwargs
from .correlate import estimate_yaw
from .errors import DegenerateDistribution, MissingFile, PolarPlaceError
from .gradcheck import check_features, check_joint, run_all
from .pointcloud import load_point_cloud
from .retrieve import PlaceDatabase, PlaceRecord, evaluate_retrieval, rejection_curve
from .synth import generate_benchmark, generate_world, read_manifest, write_manifest

log = logging.getLogger("polarplace")

QUERY_HEADER = ["rank", "place_id", "distance", "yaw_argmax_deg", "yaw_expectation_deg"]
TIMING_HEADER = ["scan_index", "place_id", "preprocess_ms", "signature_ms", "total_ms"]
EVAL_HEADER = ["n_db", "n_queries", "n_revisit", "radius_m", "k", "recall_at_1",
               "recall_at_1pct", "auc", "rejection_auc"]
CURVE_HEADER = ["n", "recall"]
PR_HEADER = ["threshold", "precision", "recall"]
GRADCHECK_HEADER = ["check", "worst_rel_error", "tolerance", "checked", "skipped", "passed"]
BENCH_HEADER = ["stage", "mean_ms", "median_ms"]


def _num(v):
    return repr(float(v))


def _write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    if path is None:
        sys.stdout.write(buf.getvalue())
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(buf.getvalue())


def _echo_config(cfg, target):
    Path(str(target) + ".config").write_text(render_config(cfg))


def _config(args, fallback=None):
    """Config from ``--config``, else the one echoed next to ``fallback``."""
    path = args.config
    if path is None and fallback is not None and Path(str(fallback) + ".config").is_file():
        path = str(fallback) + ".config"
    cfg = load_config(path)
    kw = {}
    if getattr(args, "seed", None) is not None:
        kw["seed"] = args.seed
    if getattr(args, "radius", None) is not None:
        kw["radius"] = args.radius
    if getattr(args, "k", None) is not None:
        kw["k"] = args.k
    return override(cfg, **kw) if kw else cfg


def _load_scan(path):
    fmt = "xyz-csv" if str(path).lower().endswith((".csv", ".txt")) else "xyz-binary"
    return load_point_cloud(path, fmt)


def _threads(args):
    return max(1, args.threads or os.cpu_count() or 1)


def _encode_many(encoder, paths, threads):
    """Encode scans in order; returns (encodings, timings)."""
    def work(path):
        local = replace(encoder, timings={})
        enc = local.encode(_load_scan(path))
        return enc, local.timings

    if threads == 1 or len(paths) < 2:
        out = [work(p) for p in paths]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            out = list(ex.map(work, paths))
    return [o[0] for o in out], [o[1] for o in out]


def cmd_synth(args):
    """Generate a synthetic world, simulate scans and write a manifest."""
    cfg = _config(args)
    out = Path(args.out)
    world = generate_world(cfg.seed, n_landmarks=cfg.world_landmarks, extent_m=cfg.world_extent_m)
    bench = generate_benchmark(
        world, n_places=cfg.n_places, n_queries=cfg.n_queries,
        revisit_fraction=cfg.revisit_fraction, yaw_distribution=cfg.yaw_distribution,
        range_noise_sigma_m=cfg.range_noise_sigma_m, dropout_prob=cfg.dropout_prob,
        position_perturbation_m=cfg.position_perturbation_m,
        place_spacing_m=cfg.place_spacing_m, novel_min_distance_m=cfg.novel_min_distance_m,
        seed=cfg.seed + 1, simulate=False,
        scan_kwargs=scan_kwargs(cfg))
    path = write_manifest(bench, out, world)
    _echo_config(cfg, path)
    print(path)
    return 0


def cmd_build_db(args):
    """Encode the ``db`` rows of a manifest into a signature database."""
    if not args.manifest or not args.db:
        raise PolarPlaceError("build-db needs --manifest and --db")
    cfg = _config(args)
    encoder = build_encoder(cfg)
    rows = [r for r in read_manifest(args.manifest) if r["role"] == "db"]
    encs, timings = _encode_many(encoder, [r["scan_path"] for r in rows], _threads(args))
    db = PlaceDatabase(encoder.signature_length, leafsize=cfg.leafsize)
    # tags are scan paths relative to the database, so a moved or rebuilt
    # tree gives the same bytes
    db_dir = Path(args.db).resolve().parent
    trows = []
    for i, (r, e, t) in enumerate(zip(rows, encs, timings)):
        pid = r["associated_db_id"]
        db.insert(PlaceRecord(pid, e.signature, (r["x"], r["y"], r["yaw_deg"]),
                              os.path.relpath(r["scan_path"], db_dir)))
        trows.append([i, pid, f"{t['preprocess_ms']:.3f}", f"{t['signature_ms']:.3f}",
                      f"{t['preprocess_ms'] + t['signature_ms']:.3f}"])
    Path(args.db).parent.mkdir(parents=True, exist_ok=True)
    db.save(args.db)
    _echo_config(cfg, args.db)
    _write_csv(args.out or str(args.db) + ".timing.csv", TIMING_HEADER, trows)
    log.info("wrote %d records to %s", len(db), args.db)
    return 0


def cmd_query(args):
    """Rank database places for one scan; optionally estimate yaw to rank 1."""
    if not args.db:
        raise PolarPlaceError("query needs --db")
    cfg = _config(args, fallback=args.db)
    encoder = build_encoder(cfg)
    db = PlaceDatabase.load(args.db)
    q = encoder.encode(_load_scan(args.scan))
    res = db.query_top_k(q.signature, cfg.k, cfg.backend)
    yaw = ["", ""]
    failed = None
    if args.with_yaw:
        tag = db.record(int(res.place_ids[0])).tag
        if not tag:
            raise PolarPlaceError(f"place {res.place_ids[0]} has no scan path to estimate yaw")
        match = encoder.encode(_load_scan(Path(args.db).resolve().parent / tag))
        yaw[0] = _num(encoder.yaw(q, match, "argmax").yaw_deg)
        try:
            yaw[1] = _num(encoder.yaw(q, match, "expectation").yaw_deg)
        except DegenerateDistribution as exc:
            failed = exc
    rows = []
    for r, (pid, d) in enumerate(zip(res.place_ids, res.distances), 1):
        extra = yaw if r == 1 else ["", ""]
        rows.append([r, int(pid), _num(d), *extra])
    _write_csv(args.out, QUERY_HEADER, rows)
    if args.out:
        _echo_config(cfg, args.out)
    if failed is not None:
        raise failed
    return 0


def cmd_eval(args):
    """Recall metrics for the manifest's queries plus the unseen-place PR curve."""
    if not args.db or not args.manifest or not args.out:
        raise PolarPlaceError("eval needs --db, --manifest and --out")
    cfg = _config(args, fallback=args.db)
    encoder = build_encoder(cfg)
    db = PlaceDatabase.load(args.db)
    rows = [r for r in read_manifest(args.manifest) if r["role"] == "query"]
    encs, _ = _encode_many(encoder, [r["scan_path"] for r in rows], _threads(args))
    known = np.array([r["associated_db_id"] >= 0 for r in rows], dtype=bool)
    queries = [(e.signature, (r["x"], r["y"])) for r, e in zip(rows, encs)]
    revisits = [q for q, k in zip(queries, known) if k]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if revisits:
        rep = evaluate_retrieval(db, revisits, cfg.radius, cfg.k, cfg.backend)
        metrics = [rep.recall_at_1, rep.recall_at_1pct, rep.auc]
        curve = [[i + 1, _num(v)] for i, v in enumerate(rep.recall_curve)]
    else:
        metrics, curve = [math.nan] * 3, []
    pr_rows, rej_auc = [], math.nan
    if queries and known.any():
        nearest = np.array([db.query_top_k(s, 1, cfg.backend).distances[0] for s, _ in queries])
        th, prec, rec, rej_auc = rejection_curve(nearest, known)
        pr_rows = [[_num(t), _num(p), _num(r)] for t, p, r in zip(th, prec, rec)]
    _write_csv(out / "eval.csv", EVAL_HEADER,
               [[len(db), len(rows), int(known.sum()), _num(cfg.radius), cfg.k,
                 *[_num(m) for m in metrics], _num(rej_auc)]])
    _write_csv(out / "recall_curve.csv", CURVE_HEADER, curve)
    _write_csv(out / "pr_curve.csv", PR_HEADER, pr_rows)
    _echo_config(cfg, out / "eval.csv")
    sys.stdout.write((out / "eval.csv").read_text())
    return 0


def cmd_gradcheck(args):
    """Finite-difference checks on small problems and at the configured grid size."""
    cfg = _config(args)
    enc = build_encoder(cfg)
    results = run_all(seed=cfg.seed)
    if enc.params is not None:
        shape = (cfg.rings, cfg.sectors, enc.params.in_channels)
        grid = check_features(cfg.seed, shape=shape, channels=cfg.channels,
                              limit=cfg.gradcheck_limit, kernel=cfg.kernel)
        grid += check_joint(cfg.seed, limit=cfg.gradcheck_limit, shape=shape,
                            channels=cfg.channels, crop=enc.crop, kernel=cfg.kernel)
        results += [replace(r, name="grid/" + r.name) for r in grid]
    rows = [[r.name, f"{r.worst_rel_error:.3e}", f"{r.tolerance:.0e}", r.checked, r.skipped,
             "true" if r.passed else "false"] for r in results]
    _write_csv(args.out, GRADCHECK_HEADER, rows)
    if args.out:
        _echo_config(cfg, args.out)
    worst = max(results, key=lambda r: r.worst_rel_error / r.tolerance)
    log.info("worst relative error %.3e (%s, tolerance %.0e)", worst.worst_rel_error,
             worst.name, worst.tolerance)
    bad = [r.name for r in results if not r.passed]
    if bad:
        raise PolarPlaceError("gradient check failed: " + ", ".join(bad))
    return 0


def cmd_bench(args):
    """Per-stage timing: preprocess, signature and orientation per scan.

    ``--k`` limits the number of manifest rows timed.
    """
    if not args.manifest:
        raise PolarPlaceError("bench needs --manifest")
    cfg = _config(args)
    encoder = build_encoder(cfg)
    rows = read_manifest(args.manifest)
    if args.k is not None:
        rows = rows[:args.k]
    pre, sig, ori = [], [], []
    prev = None
    for r in rows:
        enc = encoder.encode(_load_scan(r["scan_path"]))
        pre.append(encoder.timings["preprocess_ms"])
        sig.append(encoder.timings["signature_ms"])
        ref = prev if prev is not None else enc
        t0 = time.perf_counter()
        try:
            estimate_yaw(None, None, "expectation", encoder.normalized, encoder.reduction,
                         encoder.softmax_w, encoder.softmax_b, encoder.threshold,
                         spectra=(enc.spectrum, ref.spectrum))
        except DegenerateDistribution:
            pass
        ori.append(1e3 * (time.perf_counter() - t0))
        prev = enc
    total = [a + b + c for a, b, c in zip(pre, sig, ori)]
    stats = []
    for name, v in (("preprocess", pre), ("signature", sig), ("orientation", ori),
                    ("total", total)):
        stats.append([name, f"{statistics.fmean(v):.3f}" if v else "nan",
                      f"{statistics.median(v):.3f}" if v else "nan"])
    _write_csv(args.out, BENCH_HEADER, stats)
    if args.out:
        _echo_config(cfg, args.out)
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "build-db": cmd_build_db,
    "query": cmd_query,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
}


def build_parser():
    p = argparse.ArgumentParser(prog="polarplace", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        s = sub.add_parser(name, help=fn.__doc__.splitlines()[0])
        s.add_argument("--config", help="flat key = value config file")
        s.add_argument("--db", help="signature database path")
        s.add_argument("--manifest", help="benchmark manifest CSV")
        s.add_argument("--out", help="output file or directory")
        s.add_argument("--k", type=int, help="number of ranks")
        s.add_argument("--radius", type=float, help="success radius in metres")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--threads", type=int, help="worker threads (default: all cores)")
        s.add_argument("--with-yaw", action="store_true", help="estimate yaw against rank 1")
        if name == "query":
            s.add_argument("scan", help="query scan (.bin xyz float32 or .csv)")
    return p


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (PolarPlaceError, MissingFile, OSError) as exc:
        log.error("error: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
