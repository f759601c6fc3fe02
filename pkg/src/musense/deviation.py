"""Spatiotemporal deviation between two backbone trajectories."""
import csv
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ComparisonError, ValidationError


@dataclass(frozen=True, eq=False)
class Centerline:
    """Natural cubic spline through ordered points, on normalized chord length."""

    spline: CubicSpline
    points: np.ndarray

    def __call__(self, ell):
        return self.spline(np.asarray(ell, dtype=float))


def reparameterize(points):
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or len(pts) < 3:
        raise ComparisonError(f"a centerline needs at least 3 points, got {len(pts)}")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    if np.any(seg <= 1e-12 * max(1.0, float(np.abs(pts).max()))):
        raise ComparisonError("degenerate parameterization: duplicate consecutive points")
    s = np.concatenate([[0.0], np.cumsum(seg)])
    s /= s[-1]
    s[-1] = 1.0
    return Centerline(CubicSpline(s, pts, axis=0, bc_type="natural"), pts)


@dataclass(frozen=True, eq=False)
class DeviationReport:
    delta_matrix: np.ndarray
    avg_over_length: np.ndarray
    avg_over_time: np.ndarray
    j_hat: float
    j_cont_estimate: float
    k: int
    j: int
    T: float = 1.0
    L: float = 1.0

    @property
    def time_grid(self):
        return np.linspace(0.0, 1.0, self.k)

    @property
    def length_grid(self):
        return np.linspace(0.0, 1.0, self.j)


def report_from_matrix(delta, T=1.0, L=1.0):
    """Marginals and scalar summaries of a k x j deviation matrix."""
    delta = np.array(delta, dtype=float)
    if delta.ndim != 2 or min(delta.shape) < 1:
        raise ComparisonError(f"deviation matrix must be 2-D and nonempty, got shape {delta.shape}")
    if np.any(delta < 0):
        raise ComparisonError("deviation matrix has negative entries")
    delta.setflags(write=False)
    k, j = delta.shape
    mean = float(delta.mean())
    var = float(np.mean((delta - mean) ** 2))
    # RMS with the weights of j_hat, written as mean * sqrt(1 + var / mean^2) so that
    # rounding can never put it below the mean (e.g. for a constant matrix)
    rms = mean * np.sqrt(1.0 + var / mean**2) if mean > 0 else 0.0
    return DeviationReport(
        delta_matrix=delta,
        avg_over_length=delta.mean(axis=1),
        avg_over_time=delta.mean(axis=0),
        j_hat=mean,
        j_cont_estimate=float(rms),
        k=k, j=j, T=float(T), L=float(L))


def deviation_matrix(base, cand, k, j, T=1.0, L=1.0):
    """Delta[m, s] = |r_cand(t_m, l_s) - r_base(t_m, l_s)| on uniform grids.

    ``T`` (s) and ``L`` (mm) are carried as metadata only.
    """
    if not np.array_equal(np.asarray(base.times), np.asarray(cand.times)):
        raise ComparisonError("trajectories are sampled on different time grids")
    if base.positions.shape != cand.positions.shape:
        raise ComparisonError(
            f"trajectory shapes differ: {base.positions.shape} vs {cand.positions.shape}")
    if k != len(base.times):
        raise ComparisonError(f"k = {k} does not match the {len(base.times)} trajectory steps")
    if j < 2:
        raise ValidationError("j", f"needs at least 2 length samples, got {j}", module="deviation")
    ell = np.linspace(0.0, 1.0, j)
    delta = np.empty((k, j))
    for m in range(k):
        ra = reparameterize(base.positions[m])(ell)
        rb = reparameterize(cand.positions[m])(ell)
        delta[m] = np.linalg.norm(rb - ra, axis=1)
    return report_from_matrix(delta, T=T, L=L)


def objective(report):
    return report.j_hat


def write_heatmap_csv(report, path):
    """Rows are time %, columns length %, cells deviation in mm."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["time_pct"] + [f"{100 * v:.4f}" for v in report.length_grid])
        for t, row in zip(report.time_grid, report.delta_matrix):
            w.writerow([f"{100 * t:.4f}"] + [f"{v:.9f}" for v in row])


def read_heatmap_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1:]


def write_marginals_csv(report, path_time, path_length):
    """Length-averaged deviation over time and time-averaged deviation over length."""
    for path, grid, vals, name in (
            (path_time, report.time_grid, report.avg_over_length, "time_pct"),
            (path_length, report.length_grid, report.avg_over_time, "length_pct")):
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow([name, "deviation_mm"])
            for g, v in zip(grid, vals):
                w.writerow([f"{100 * g:.4f}", f"{v:.9f}"])
