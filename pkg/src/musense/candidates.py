"""Contiguous anchor windows (sliding-window sensor paths)."""
import csv
from dataclasses import dataclass

import numpy as np

from .errors import EnumerationError
from .geometry import _unit_finger_axis_y


@dataclass(frozen=True, eq=False)
class CandidatePath:
    """Window G_{i,h}: anchors P_i ... P_{i+h-1} of one finger (i is 1-based).

    ``polylines`` holds the inclusion centre lines actually embedded in the
    mesh: the window itself, plus its mirror image on the second finger of
    a gripper.
    """

    start_index: int
    length: int
    anchors: np.ndarray
    label: str
    radius: float
    polylines: tuple

    @property
    def slug(self):
        """File-name friendly form of the label."""
        return f"alpha{int(self.label[1:]):02d}"

    @property
    def end_index(self):
        return self.start_index + self.length - 1


def candidate_count(n):
    return (n - 1) * (n - 2) // 2 if n >= 3 else 0


def window_indices(n):
    """(i, h) pairs, ascending h then ascending i."""
    return [(i, h) for h in range(3, n + 1) for i in range(1, n - h + 2)]


def _mirror_to_second_finger(points, scale):
    y0 = scale * _unit_finger_axis_y(0)
    y1 = scale * _unit_finger_axis_y(1)
    out = np.array(points, dtype=float)
    out[:, 1] = y1 - (out[:, 1] - y0)
    return out


def enumerate_candidates(anchors, radius=1.0, fingers=1, scale=1.0):
    """All admissible windows of ``anchors`` with labels α1, α2, ...

    For ``fingers == 2`` each path also carries the mirrored window on the
    second finger, so both fingers receive the same inclusion.
    """
    pts = np.asarray(anchors.points, dtype=float)
    n = len(pts)
    if n < 3:
        raise EnumerationError(f"no admissible candidate: need at least 3 anchors, got {n}")
    out = []
    for m, (i, h) in enumerate(window_indices(n), start=1):
        window = pts[i - 1:i - 1 + h].copy()
        window.setflags(write=False)
        lines = [window]
        if fingers == 2:
            lines.append(_mirror_to_second_finger(window, scale))
        out.append(CandidatePath(
            start_index=i, length=h, anchors=window, label=f"α{m}",
            radius=float(radius), polylines=tuple(lines)))
    return out


def write_manifest(paths, path):
    """Candidate manifest: label, window indices and anchor coordinates."""
    width = max(p.length for p in paths)
    header = ["label", "start_index", "length"]
    for a in range(1, width + 1):
        header += [f"x{a}", f"y{a}", f"z{a}"]
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for p in paths:
            coords = [f"{v:.6f}" for v in p.anchors.ravel()]
            coords += [""] * (3 * width - len(coords))
            w.writerow([p.label, p.start_index, p.length] + coords)


def read_manifest(path):
    """Rows of (label, start_index, length, anchors array)."""
    rows = []
    with open(path, encoding="utf-8", newline="") as f:
        for rec in csv.DictReader(f):
            h = int(rec["length"])
            pts = np.array([[float(rec[f"{c}{a}"]) for c in "xyz"] for a in range(1, h + 1)])
            rows.append((rec["label"], int(rec["start_index"]), h, pts))
    return rows
