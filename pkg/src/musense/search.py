"""Exhaustive evaluation of every candidate window against the baseline."""
import csv
import logging
import multiprocessing as mp
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .candidates import enumerate_candidates
from .deviation import deviation_matrix
from .errors import MusenseError, SearchError
from .fem import assemble_material, solve_quasistatic
from .geometry import anchor_nodes, solid_outline
from .mesh import mesh_outline, roi_elements

log = logging.getLogger(__name__)

OK, FAILED = "OK", "FAILED"


@dataclass(frozen=True, eq=False)
class CandidateResult:
    label: str
    start_index: int
    length: int
    status: str
    j_hat: float = float("nan")
    j_cont: float = float("nan")
    roi_count: int = 0
    wall_s: float = 0.0
    message: str = ""
    report: object = None
    trajectory: object = None

    @property
    def ok(self):
        return self.status == OK

    def sort_key(self):
        # failed rows go last; ties: shorter window, then earlier start
        return (not self.ok, self.j_hat if self.ok else 0.0, self.length, self.start_index)


@dataclass(frozen=True, eq=False)
class RankingTable:
    rows: tuple
    optimum: CandidateResult
    config_fingerprint: str
    baseline: object = None
    mesh: object = None

    @property
    def failed(self):
        return [r for r in self.rows if not r.ok]

    def by_label(self):
        return {r.label: r for r in self.rows}

    def to_csv(self, path):
        """Ranking without timing columns, so reruns are byte-identical."""
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(f"# config_fingerprint={self.config_fingerprint}\n")
            f.write("# labels follow ascending window length h, then ascending start index i\n")
            f.write(f"# optimum={self.optimum.label if self.optimum else 'none'}\n")
            if self.failed:
                f.write(f"# WARNING: {len(self.failed)} candidate(s) FAILED and are excluded from the optimum\n")
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["rank", "label", "start_index", "length", "j_hat_mm", "j_cont_mm",
                        "roi_elements", "status"])
            for rank, r in enumerate(self.rows, start=1):
                w.writerow([rank, r.label, r.start_index, r.length,
                            f"{r.j_hat:.9f}" if r.ok else "", f"{r.j_cont:.9f}" if r.ok else "",
                            r.roi_count, r.status])

    def timings_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["label", "wall_s", "status", "message"])
            for r in sorted(self.rows, key=lambda r: (r.length, r.start_index)):
                w.writerow([r.label, f"{r.wall_s:.3f}", r.status, r.message])


def rank(results, fingerprint, baseline=None, mesh=None):
    rows = tuple(sorted(results, key=CandidateResult.sort_key))
    good = [r for r in rows if r.ok]
    if not good:
        raise SearchError(f"all {len(rows)} candidates FAILED; first: {rows[0].message if rows else 'none'}")
    return RankingTable(rows, good[0], fingerprint, baseline, mesh)


class BaselineCache:
    """Model A trajectories keyed by config fingerprint."""

    def __init__(self):
        self._store = {}
        self.solves = 0

    def get(self, fingerprint):
        return self._store.get(fingerprint)

    def put(self, fingerprint, traj):
        self._store[fingerprint] = traj

    def __contains__(self, fingerprint):
        return fingerprint in self._store


def run_baseline(mesh, material, program, k, cache=None, fingerprint=None, **solver_options):
    """Model A (no inclusion); reused from ``cache`` when the fingerprint matches."""
    if cache is not None and fingerprint is not None and fingerprint in cache:
        return cache.get(fingerprint)
    traj = solve_quasistatic(mesh, material, program, k, **solver_options)
    if cache is not None:
        cache.solves += 1
        if fingerprint is not None:
            cache.put(fingerprint, traj)
    return traj


def evaluate_candidate(mesh, baseline, path, config, **solver_options):
    """Model alpha for one window and its deviation from the baseline.

    Solver failures are returned as a FAILED row instead of raised.
    """
    t0 = time.perf_counter()
    roi = roi_elements(mesh, path)
    material = assemble_material(mesh, roi, config.material())
    program = config.program()
    try:
        traj = solve_quasistatic(mesh, material, program, config.k, **solver_options)
        if not np.all(np.isfinite(traj.positions)):
            raise SearchError("non-finite positions in candidate trajectory")
        length = config.design().length
        report = deviation_matrix(baseline, traj, config.k, config.j, T=program.duration, L=length)
    except (MusenseError, np.linalg.LinAlgError, FloatingPointError, RuntimeError) as exc:
        log.warning("candidate %s failed: %s", path.label, exc)
        return CandidateResult(path.label, path.start_index, path.length, FAILED,
                               roi_count=len(roi.element_ids), wall_s=time.perf_counter() - t0,
                               message=str(exc))
    wall = time.perf_counter() - t0
    log.info("candidate %s: j_hat %.6f mm, %d ROI tets, %.1f s", path.label, report.j_hat,
             len(roi.element_ids), wall)
    return CandidateResult(
        path.label, path.start_index, path.length, OK,
        j_hat=report.j_hat, j_cont=report.j_cont_estimate,
        roi_count=len(roi.element_ids), wall_s=wall,
        message=roi.warning or "", report=report, trajectory=traj)


def build_mesh(design, config):
    outline = solid_outline(design, membrane_band=config.membrane_band_mm)
    return mesh_outline(outline, config.resolution())


# shared read-only state for worker processes, set before forking
_SHARED = {}


def _init_worker(mesh, baseline, paths, config, solver_options):
    _SHARED.update(mesh=mesh, baseline=baseline, paths=paths, config=config, opts=solver_options)


def _job(index):
    s = _SHARED
    return evaluate_candidate(s["mesh"], s["baseline"], s["paths"][index], s["config"], **s["opts"])


def _pool_context():
    methods = mp.get_all_start_methods()
    return mp.get_context("fork" if "fork" in methods else "spawn")


def exhaustive_search(design, config, workers=None, cache=None, mesh=None, **solver_options):
    """Evaluate every window of ``design`` and rank them by j_hat.

    ``design`` overrides the design fields of ``config``. The result does
    not depend on ``workers`` or on completion order.
    """
    config = config.with_overrides(scale=design.scale, chamber_count=design.chamber_count,
                                   fingers=design.fingers)
    fingerprint = config.fingerprint()
    anchors = anchor_nodes(design)
    paths = enumerate_candidates(anchors, radius=design.sensor_radius, fingers=design.fingers,
                                 scale=design.scale)
    if mesh is None:
        mesh = build_mesh(design, config)
    baseline = run_baseline(mesh, assemble_material(mesh, None, config.material()), config.program(),
                            config.k, cache=cache, fingerprint=fingerprint, **solver_options)
    workers = max(1, min(workers or config.worker_count(), len(paths)))
    log.info("evaluating %d candidates with %d worker(s)", len(paths), workers)
    if workers == 1:
        results = [evaluate_candidate(mesh, baseline, p, config, **solver_options) for p in paths]
    else:
        with ProcessPoolExecutor(max_workers=workers, mp_context=_pool_context(),
                                 initializer=_init_worker,
                                 initargs=(mesh, baseline, paths, config, solver_options)) as pool:
            results = list(pool.map(_job, range(len(paths))))
    return rank(results, fingerprint, baseline=baseline, mesh=mesh)
