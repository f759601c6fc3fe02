"""Command line: ``musense run | validate | sweep``."""
import argparse
import csv
import hashlib
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .candidates import candidate_count, enumerate_candidates, write_manifest
from .config import format_config, load_config
from .deviation import write_heatmap_csv, write_marginals_csv
from .errors import MusenseError
from .geometry import anchor_nodes, write_nodes_txt
from .mesh import write_tetmesh
from .report import summary_plot, sweep_plot
from .search import BaselineCache, exhaustive_search

log = logging.getLogger("musense")

# files whose content depends on wall-clock time; listed but not checksummed
_VOLATILE = ("timings.csv",)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out, fingerprint):
    import matplotlib
    import scipy

    files = []
    for root, _, names in os.walk(out):
        for name in names:
            rel = os.path.relpath(os.path.join(root, name), out).replace(os.sep, "/")
            if rel != "manifest.txt":
                files.append(rel)
    lines = [
        f"config_fingerprint {fingerprint}",
        f"musense {__version__}",
        f"numpy {np.__version__}",
        f"scipy {scipy.__version__}",
        f"matplotlib {matplotlib.__version__}",
    ]
    for rel in sorted(files):
        digest = "-" if os.path.basename(rel) in _VOLATILE else _sha256(os.path.join(out, rel))
        lines.append(f"file {digest} {rel}")
    with open(os.path.join(out, "manifest.txt"), "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def write_table(path, labels, columns, matrix):
    """Candidates as rows, one column per scale preset, mm to 3 decimals."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["label"] + list(columns))
        for label, row in zip(labels, matrix):
            w.writerow([label] + ["FAILED" if not np.isfinite(v) else f"{v:.3f}" for v in row])


def _column_name(scale):
    return f"{scale:.2f}x"


def run_pipeline(cfg, out, cache=None):
    """Full search for one config; writes every artifact under ``out``."""
    cfg.validate()
    design = cfg.design()
    os.makedirs(out, exist_ok=True)
    for sub in ("trajectories", "heatmaps", "marginals"):
        os.makedirs(os.path.join(out, sub), exist_ok=True)

    anchors = anchor_nodes(design)
    paths = enumerate_candidates(anchors, radius=design.sensor_radius, fingers=design.fingers,
                                 scale=design.scale)
    write_nodes_txt(anchors, os.path.join(out, "nodes.txt"))
    write_manifest(paths, os.path.join(out, "candidates.csv"))
    with open(os.path.join(out, "config.txt"), "w", encoding="utf-8", newline="\n") as f:
        # worker count and location do not change the results
        f.write(format_config(cfg, exclude=("workers", "output_dir")))
    cfg.program().to_csv(os.path.join(out, "pressure.csv"))

    t0 = time.perf_counter()
    ranking = exhaustive_search(design, cfg, workers=cfg.worker_count(), cache=cache)
    log.info("search finished in %.1f s", time.perf_counter() - t0)

    write_tetmesh(ranking.mesh, os.path.join(out, "mesh.tetmesh"))
    ranking.baseline.to_csv(os.path.join(out, "trajectories", "baseline.csv"))
    by_label = ranking.by_label()
    for p in paths:
        r = by_label[p.label]
        if not r.ok:
            continue
        r.trajectory.to_csv(os.path.join(out, "trajectories", f"{p.slug}.csv"))
        write_heatmap_csv(r.report, os.path.join(out, "heatmaps", f"{p.slug}.csv"))
        write_marginals_csv(r.report, os.path.join(out, "marginals", f"{p.slug}_time.csv"),
                            os.path.join(out, "marginals", f"{p.slug}_length.csv"))
    ranking.to_csv(os.path.join(out, "ranking.csv"))
    ranking.timings_csv(os.path.join(out, "timings.csv"))
    column = "gripper" if design.fingers == 2 else _column_name(design.scale)
    labels = [p.label for p in paths]
    write_table(os.path.join(out, "table.csv"), labels, [column],
                [[by_label[lab].j_hat] for lab in labels])
    summary_plot(ranking, os.path.join(out, "summary.svg"))
    _write_manifest(out, ranking.config_fingerprint)
    return ranking


def _load(args):
    cfg = load_config(args.config)
    over = {"workers": getattr(args, "workers", None), "k": getattr(args, "k", None),
            "j": getattr(args, "j", None)}
    if getattr(args, "out", None):
        over["output_dir"] = args.out
    scale = getattr(args, "scale", None)
    if scale is not None and args.command != "sweep":
        if len(scale) != 1:
            raise SystemExit("error: --scale takes a single value for this command")
        over["scale"] = scale[0]
    return cfg.with_overrides(**over)


def cmd_validate(args):
    cfg = _load(args)
    cfg.validate()
    design = cfg.design()
    n = anchor_nodes(design).n
    m = candidate_count(n)
    if m == 0:
        print(f"invalid: {n} anchors admit no candidate (need at least 3)")
        return 2
    print(f"{m} candidates, {m + 1} solves")
    print(f"config_fingerprint {cfg.fingerprint()}")
    return 0


def cmd_run(args):
    cfg = _load(args)
    ranking = run_pipeline(cfg, cfg.output_dir)
    opt = ranking.optimum
    print(f"optimum {opt.label} (i={opt.start_index}, h={opt.length}) j_hat={opt.j_hat:.6f} mm")
    if ranking.failed:
        print(f"warning: {len(ranking.failed)} candidate(s) FAILED", file=sys.stderr)
    print(f"artifacts in {cfg.output_dir}")
    return 0


def sweep_configs(cfg, scales, gripper):
    """(column name, config) pairs; explicit resolutions scale with the design."""
    def at(scale, fingers):
        res = cfg.resolution_mm
        if res is not None:
            res = tuple(np.broadcast_to(np.asarray(res, dtype=float), (3,)) * (scale / cfg.scale))
        return cfg.with_overrides(scale=scale, fingers=fingers, resolution_mm=res)

    cols = [(_column_name(s), at(s, 1)) for s in scales]
    if gripper:
        cols.append(("gripper", at(1.0, 2)))
    return cols


def cmd_sweep(args):
    cfg = _load(args)
    scales = tuple(args.scale) if args.scale else cfg.sweep_scales
    gripper = cfg.sweep_gripper if args.gripper is None else args.gripper
    cfg.with_overrides(sweep_scales=scales).validate()
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    names, values, labels, failures = [], [], None, 0
    for name, sub in sweep_configs(cfg, scales, gripper):
        names.append(name)
        try:
            ranking = run_pipeline(sub, os.path.join(out, name))
            by_label = ranking.by_label()
            if labels is None:
                labels = sorted(by_label, key=lambda lab: int(lab[1:]))
            values.append([by_label[lab].j_hat if lab in by_label else np.nan for lab in labels])
        except MusenseError as exc:
            failures += 1
            print(f"column {name} failed: {exc}", file=sys.stderr)
            values.append(None)
    if labels is None:
        print("error: every column failed", file=sys.stderr)
        return 1
    matrix = np.array([v if v is not None else [np.nan] * len(labels) for v in values]).T
    write_table(os.path.join(out, "table.csv"), labels, names, matrix)
    sweep_plot(labels, names, matrix, os.path.join(out, "sweep.svg"))
    print(f"{len(labels)}x{len(names)} table written to {os.path.join(out, 'table.csv')}")
    return 0 if failures == 0 else 3


def _scales(text):
    try:
        vals = [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty scale list")
    return vals


def build_parser():
    parser = argparse.ArgumentParser(prog="musense", description="Sensor path placement search.")
    parser.add_argument("--version", action="version", version=f"musense {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="key = value config file")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--workers", type=int, help="parallel candidate solves")
        p.add_argument("--k", type=int, help="time samples")
        p.add_argument("--j", type=int, help="length samples")
        p.add_argument("--scale", type=_scales, help="design scale (sweep: comma separated list)")

    common(sub.add_parser("run", help="search one design and write all artifacts"))
    common(sub.add_parser("validate", help="check a config without computing"))
    p = sub.add_parser("sweep", help="search several scales plus the gripper preset")
    common(p)
    p.add_argument("--gripper", dest="gripper", action="store_true", default=None)
    p.add_argument("--no-gripper", dest="gripper", action="store_false")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": cmd_run, "validate": cmd_validate, "sweep": cmd_sweep}[args.command]
    try:
        return handler(args)
    except MusenseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ValueError) else 1


if __name__ == "__main__":
    sys.exit(main())
