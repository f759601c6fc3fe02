"""Parametric layout of the actuator-lattice unit.

Coordinates are in mm. The actuator axis is +x (proximal base at x = 0),
the bending (sagittal) plane is z = 0 and flexion bends toward -y, where a
thin strain-limiting layer runs along the ventral face.

Every length is computed once at scale 1 and then multiplied by ``scale``,
so a scaled design is exactly ``scale`` times the unit design.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ValidationError

UNIT_CELL_MM = 12.5
STRUT_MIN_MM = 1.5
SENSOR_RADIUS_MM = 1.0

# layout ratios, in units of the unit cell U
END_MARGIN = 1.0
WALL_MARGIN = 0.4
CAVITY_RADIAL = 0.8
CAVITY_AXIAL = 0.35
CHANNEL_RADIUS = 0.15
MEMBRANE_BAND = 0.12
LIMITING_LAYER = 0.2
ANCHOR_DEPTH = 1.0
FINGER_GAP = 1.4


@dataclass(frozen=True)
class MuDesign:
    scale: float
    unit_cell: float
    chamber_count: int
    bladder_diameter: float
    chamber_pitch: float
    strut_min_thickness: float
    sensor_radius: float
    fingers: int

    @property
    def half_width(self):
        return self.scale * (UNIT_CELL_MM * (1.0 + WALL_MARGIN))

    @property
    def length(self):
        """Actuator length along the axis, end margins included."""
        return self.scale * (UNIT_CELL_MM * (self.chamber_count + 2 * END_MARGIN))


@dataclass(frozen=True)
class AnchorSet:
    points: np.ndarray

    @property
    def n(self):
        return len(self.points)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def contains(self, pts):
        pts = np.atleast_2d(pts)
        return np.all((pts >= np.asarray(self.lo)) & (pts <= np.asarray(self.hi)), axis=1)

    @property
    def volume(self):
        return float(np.prod(np.subtract(self.hi, self.lo)))


@dataclass(frozen=True)
class Cavity:
    """Disk-shaped chamber, axisymmetric about a line parallel to x."""

    cavity_id: int
    center: tuple
    radial: float
    axial: float
    finger: int = 0

    def distance(self, pts):
        """Distance from points to the cavity (0 inside)."""
        pts = np.atleast_2d(pts)
        c = np.asarray(self.center)
        dx = np.abs(pts[:, 0] - c[0]) - self.axial
        dr = np.hypot(pts[:, 1] - c[1], pts[:, 2] - c[2]) - self.radial
        return np.hypot(np.maximum(dx, 0.0), np.maximum(dr, 0.0))

    @property
    def volume(self):
        return np.pi * self.radial**2 * 2.0 * self.axial


@dataclass(frozen=True)
class Channel:
    """Central feed channel joining the chambers of one finger."""

    x0: float
    x1: float
    axis_yz: tuple
    radius: float
    finger: int = 0

    def distance(self, pts):
        pts = np.atleast_2d(pts)
        mid = 0.5 * (self.x0 + self.x1)
        half = 0.5 * (self.x1 - self.x0)
        dx = np.abs(pts[:, 0] - mid) - half
        dr = np.hypot(pts[:, 1] - self.axis_yz[0], pts[:, 2] - self.axis_yz[1]) - self.radius
        return np.hypot(np.maximum(dx, 0.0), np.maximum(dr, 0.0))


@dataclass(frozen=True)
class SolidOutline:
    envelopes: list
    cavities: list
    channels: list
    membrane_band: float
    wall_margin: float
    limiting_layers: list = field(default_factory=list)
    base_block: Box = None
    monitor_points: tuple = ()
    grid_marks: tuple = ()

    @property
    def envelope(self):
        return self.envelopes[0]

    @property
    def solids(self):
        return list(self.envelopes) + ([self.base_block] if self.base_block else [])

    def bounds(self):
        lo = np.min([b.lo for b in self.solids], axis=0)
        hi = np.max([b.hi for b in self.solids], axis=0)
        return lo, hi

    def inside_solid(self, pts):
        return np.any([b.contains(pts) for b in self.solids], axis=0)

    def cavity_distance(self, pts):
        """Distance to the nearest void (chambers and channels), per point."""
        pts = np.atleast_2d(pts)
        d = [c.distance(pts) for c in self.cavities] + [ch.distance(pts) for ch in self.channels]
        return np.min(d, axis=0)

    def cavity_id(self, pts):
        """Id of the void containing each point, -1 outside any void.

        Channel points are attributed to the axially nearest chamber of the
        same finger.
        """
        pts = np.atleast_2d(pts)
        ids = np.full(len(pts), -1, dtype=int)
        for ch in self.channels:
            inside = ch.distance(pts) <= 0.0
            if not inside.any():
                continue
            own = [c for c in self.cavities if c.finger == ch.finger]
            cx = np.array([c.center[0] for c in own])
            nearest = np.argmin(np.abs(pts[inside, 0][:, None] - cx[None, :]), axis=1)
            ids[inside] = np.array([c.cavity_id for c in own])[nearest]
        for c in self.cavities:
            ids[c.distance(pts) <= 0.0] = c.cavity_id
        return ids


def _check_positive(name, value):
    if not value > 0:
        raise ValidationError(name, f"must be positive, got {value!r}")


def build_design(scale=1.0, chamber_count=6, fingers=1):
    _check_positive("scale", scale)
    if int(chamber_count) != chamber_count or chamber_count < 1:
        raise ValidationError("chamber_count", f"must be an integer >= 1, got {chamber_count!r}")
    if fingers not in (1, 2):
        raise ValidationError("fingers", f"must be 1 or 2, got {fingers!r}")
    scale = float(scale)
    unit_cell = scale * UNIT_CELL_MM
    return MuDesign(
        scale=scale,
        unit_cell=unit_cell,
        chamber_count=int(chamber_count),
        bladder_diameter=2.0 * unit_cell,
        chamber_pitch=unit_cell,
        strut_min_thickness=scale * STRUT_MIN_MM,
        sensor_radius=SENSOR_RADIUS_MM,
        fingers=int(fingers),
    )


def _unit_anchor_points(chamber_count, finger=0):
    # one anchor per chamber, at the cell core level with the bladder apex
    u = UNIT_CELL_MM
    x = u * (END_MARGIN + 0.5 + np.arange(chamber_count))
    y0 = _unit_finger_axis_y(finger)
    sign = 1.0 if finger == 0 else -1.0
    y = np.full(chamber_count, y0 - sign * u * ANCHOR_DEPTH)
    return np.column_stack([x, y, np.zeros(chamber_count)])


def _unit_finger_axis_y(finger):
    # second finger sits below the first, mirrored so the two bend toward each other
    h = UNIT_CELL_MM * (1.0 + WALL_MARGIN)
    return 0.0 if finger == 0 else -(2.0 * h + UNIT_CELL_MM * FINGER_GAP)


def anchor_nodes(design, finger=0):
    """Anchor points of one finger, ordered proximal to distal."""
    return AnchorSet(design.scale * _unit_anchor_points(design.chamber_count, finger))


def solid_outline(design, membrane_band=None):
    """Simplified solid: boxes with disk chambers joined by a feed channel.

    ``membrane_band`` (mm) overrides the default shell thickness around the
    voids; it must stay below the outer wall margin of 0.4 U.
    """
    s = design.scale
    u = UNIT_CELL_MM
    n = design.chamber_count
    band = s * (u * MEMBRANE_BAND) if membrane_band is None else float(membrane_band)
    margin = s * (u * WALL_MARGIN)
    _check_positive("membrane_band", band)
    if band >= margin:
        raise ConfigurationError(
            f"membrane_band ({band:g} mm) must be thinner than wall_margin ({margin:g} mm)"
        )

    h = u * (1.0 + WALL_MARGIN)
    length = u * (n + 2 * END_MARGIN)
    envelopes, cavities, channels, layers = [], [], [], []
    # grid lines through chamber faces, anchors and the sensor strips; the
    # strip is the square of equal area to the inclusion disk, narrow enough
    # that every tet inside it has its centroid within the sensor radius
    r_sens = 0.5 * np.sqrt(np.pi) * design.sensor_radius / s
    xs, ys, zs = set(), set(), {0.0, -r_sens, r_sens}
    for finger in range(design.fingers):
        yc = _unit_finger_axis_y(finger)
        envelopes.append(Box((0.0, s * (yc - h), s * -h), (s * length, s * (yc + h), s * h)))
        if finger == 0:
            layers.append(Box((0.0, s * -h, s * -h), (s * length, s * (u * LIMITING_LAYER - h), s * h)))
        else:
            layers.append(Box((0.0, s * (yc + h - u * LIMITING_LAYER), s * -h),
                              (s * length, s * (yc + h), s * h)))
        ay = _unit_anchor_points(n, finger)[0, 1]
        ys |= {ay - r_sens, ay, ay + r_sens}
        for c in range(n):
            cx = u * (END_MARGIN + 0.5 + c)
            xs |= {cx - u * CAVITY_AXIAL, cx, cx + u * CAVITY_AXIAL}
            cavities.append(Cavity(
                cavity_id=finger * n + c,
                center=(s * cx, s * yc, 0.0),
                radial=s * (u * CAVITY_RADIAL),
                axial=s * (u * CAVITY_AXIAL),
                finger=finger,
            ))
        if n > 1:
            channels.append(Channel(
                x0=s * (u * (END_MARGIN + 0.5)),
                x1=s * (u * (END_MARGIN + n - 0.5)),
                axis_yz=(s * yc, 0.0),
                radius=s * (u * CHANNEL_RADIUS),
                finger=finger,
            ))

    base = None
    if design.fingers == 2:
        y_lo = s * (_unit_finger_axis_y(1) - h)
        base = Box((s * -u, y_lo, s * -h), (0.0, s * h, s * h))
    return SolidOutline(
        envelopes=envelopes,
        cavities=cavities,
        channels=channels,
        membrane_band=band,
        wall_margin=margin,
        limiting_layers=layers,
        base_block=base,
        monitor_points=tuple(map(tuple, anchor_nodes(design).points.tolist())),
        grid_marks=tuple(tuple(sorted(s * v for v in m)) for m in (xs, ys, zs)),
    )


def write_nodes_txt(anchors, path):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for p in anchors.points:
            f.write(f"{p[0]:.3f} {p[1]:.3f} {p[2]:.3f}\n")


def read_nodes_txt(path):
    return AnchorSet(np.loadtxt(path, ndmin=2))
