"""Structured tetrahedral meshing of a SolidOutline and inclusion ROIs."""
import logging
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .errors import MeshingError, ValidationError

log = logging.getLogger(__name__)

LATTICE = 0
MEMBRANE = 1
REGION_NAMES = {LATTICE: "LATTICE", MEMBRANE: "MEMBRANE"}

# Kuhn split of the unit cube along the 000-111 diagonal; corner id = dx + 2 dy + 4 dz
_CORNERS = np.array([[i & 1, (i >> 1) & 1, (i >> 2) & 1] for i in range(8)])


def _kuhn_tets():
    tets = []
    for p in permutations(range(3)):
        e0 = np.eye(3, dtype=int)[p[0]]
        e1 = np.eye(3, dtype=int)[p[1]]
        path = [np.zeros(3, int), e0, e0 + e1, np.ones(3, int)]
        ids = [int(v[0] + 2 * v[1] + 4 * v[2]) for v in path]
        a, b, c, d = (_CORNERS[i] for i in ids)
        if np.linalg.det(np.array([b - a, c - a, d - a])) < 0:
            ids[1], ids[2] = ids[2], ids[1]
        tets.append(ids)
    return np.array(tets)


_KUHN = _kuhn_tets()
# local faces of a tet, each omitting one vertex
_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])


@dataclass(eq=False)
class TetMesh:
    vertices: np.ndarray
    tets: np.ndarray
    region: np.ndarray
    cavity_tet: np.ndarray
    cavity_tris: np.ndarray
    cavity_ids: np.ndarray
    fixed_vertices: np.ndarray
    monitored_vertices: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.tets = np.asarray(self.tets, dtype=np.int64).reshape(-1, 4)
        self.region = np.asarray(self.region, dtype=np.int8)
        self.cavity_tet = np.asarray(self.cavity_tet, dtype=np.int64)
        self.cavity_tris = np.asarray(self.cavity_tris, dtype=np.int64).reshape(-1, 3)
        self.cavity_ids = np.asarray(self.cavity_ids, dtype=np.int64)
        self.fixed_vertices = np.asarray(self.fixed_vertices, dtype=np.int64)
        self.monitored_vertices = np.asarray(self.monitored_vertices, dtype=np.int64)
        for name in ("vertices", "tets", "region", "cavity_tet", "cavity_tris",
                     "cavity_ids", "fixed_vertices", "monitored_vertices"):
            getattr(self, name).setflags(write=False)

    @property
    def n_tets(self):
        return len(self.tets)

    def signed_volumes(self, x=None):
        x = self.vertices if x is None else x
        p = x[self.tets]
        return np.einsum("ij,ij->i", np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), p[:, 3] - p[:, 0]) / 6.0

    def centroids(self):
        return self.vertices[self.tets].mean(axis=1)

    def face_normals(self, x=None):
        """Area vectors of the cavity faces, pointing into the void."""
        x = self.vertices if x is None else x
        t = x[self.cavity_tris]
        return 0.5 * np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])


def _axis_lines(lo, hi, res, marks):
    """Grid coordinates on [lo, hi] through every mark, spacing <= res.

    Each interval between consecutive marks is split uniformly, so the grid
    is a tensor product of piecewise-uniform axes.
    """
    tol = 1e-9 * max(hi - lo, 1.0)
    pts = sorted({float(lo), float(hi)} | {float(m) for m in marks if lo + tol < m < hi - tol})
    merged = [pts[0]]
    for v in pts[1:]:
        if v - merged[-1] > tol:
            merged.append(v)
    merged[-1] = float(hi)
    lines = [np.array([merged[0]])]
    for a, b in zip(merged[:-1], merged[1:]):
        n = max(1, int(np.ceil((b - a) / res - 1e-9)))
        seg = a + (b - a) * np.arange(1, n + 1) / n
        seg[-1] = b
        lines.append(seg)
    return np.concatenate(lines)


def mesh_outline(outline, resolution, monitor_points=None):
    """Mesh the outline on a structured grid split into six tets per hex.

    ``resolution`` is a maximum edge length in mm, scalar or per axis. Grid
    lines pass through the solid boundaries, the outline's ``grid_marks``
    and a strip of half-width ``sensor_radius`` around each monitored line,
    so inclusions along the anchors are resolved by whole cells.
    ``monitor_points`` (n x 3, mm) are snapped to their nearest mesh vertex
    to form ``monitored_vertices``.
    """
    lo, hi = outline.bounds()
    extent = hi - lo
    res = np.broadcast_to(np.asarray(resolution, dtype=float), (3,))
    if not np.all(res > 0):
        raise ValidationError("resolution", f"must be positive, got {resolution!r}", module="mesh")
    min_dim = min(float(np.min(np.subtract(b.hi, b.lo))) for b in outline.envelopes)
    if res.max() > min_dim / 2.0 * (1 + 1e-12):
        raise ValidationError(
            "resolution", f"{res.max():g} mm exceeds half the smallest envelope side ({min_dim:g} mm)",
            module="mesh")

    if monitor_points is None:
        monitor_points = outline.monitor_points
    monitor_points = np.asarray(monitor_points, dtype=float).reshape(-1, 3)
    grid = []
    for ax in range(3):
        marks = {b.lo[ax] for b in outline.solids} | {b.hi[ax] for b in outline.solids}
        if outline.grid_marks:
            marks |= set(outline.grid_marks[ax])
        grid.append(_axis_lines(lo[ax], hi[ax], res[ax], marks))
    gx, gy, gz = grid
    counts = np.array([len(g) - 1 for g in grid])
    nx, ny, nz = (int(c) for c in counts)
    h = np.array([np.diff(g).max() for g in grid])

    ii, jj, kk = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    ii, jj, kk = ii.ravel(), jj.ravel(), kk.ravel()
    centers = np.column_stack([
        0.5 * (gx[ii] + gx[ii + 1]), 0.5 * (gy[jj] + gy[jj + 1]), 0.5 * (gz[kk] + gz[kk + 1])])

    in_solid = outline.inside_solid(centers)
    hex_cavity = np.where(in_solid, outline.cavity_id(centers), -1)
    kept = in_solid & (hex_cavity < 0)
    removed = hex_cavity >= 0
    for c in outline.cavities:
        if not np.any(hex_cavity == c.cavity_id):
            raise MeshingError(
                f"cavity {c.cavity_id} at x={c.center[0]:g} mm is not resolved at resolution {resolution} mm")
    _check_separated(outline, centers, in_solid, (nx, ny, nz), resolution)

    # membrane: within the band of a void, or face-adjacent to a removed hex
    cav3 = removed.reshape(nx, ny, nz)
    touch = np.zeros_like(cav3)
    touch[1:] |= cav3[:-1]
    touch[:-1] |= cav3[1:]
    touch[:, 1:] |= cav3[:, :-1]
    touch[:, :-1] |= cav3[:, 1:]
    touch[:, :, 1:] |= cav3[:, :, :-1]
    touch[:, :, :-1] |= cav3[:, :, 1:]
    membrane = touch.ravel()
    if outline.cavities or outline.channels:
        membrane |= outline.cavity_distance(centers) < outline.membrane_band
    cell_lo = np.column_stack([gx[ii], gy[jj], gz[kk]])
    cell_hi = np.column_stack([gx[ii + 1], gy[jj + 1], gz[kk + 1]])
    for layer in outline.limiting_layers:
        overlap = np.all((np.minimum(cell_hi, layer.hi) - np.maximum(cell_lo, layer.lo)) > 1e-12, axis=1)
        membrane |= overlap

    hex_ids = np.flatnonzero(kept)
    vid = lambda i, j, k: (i * (ny + 1) + j) * (nz + 1) + k  # noqa: E731
    corners = np.stack([vid(ii[hex_ids] + c[0], jj[hex_ids] + c[1], kk[hex_ids] + c[2]) for c in _CORNERS], axis=1)
    tets_global = corners[:, _KUHN].reshape(-1, 4)
    region = np.repeat(np.where(membrane[hex_ids], MEMBRANE, LATTICE), 6).astype(np.int8)

    used, tets = np.unique(tets_global, return_inverse=True)
    tets = tets.reshape(-1, 4)
    ui, rem = np.divmod(used, (ny + 1) * (nz + 1))
    uj, uk = np.divmod(rem, nz + 1)
    vertices = np.column_stack([gx[ui], gy[uj], gz[uk]])

    tris, owner = boundary_faces(vertices, tets)
    tri_pts = vertices[tris]
    normal = np.cross(tri_pts[:, 1] - tri_pts[:, 0], tri_pts[:, 2] - tri_pts[:, 0])
    normal /= np.linalg.norm(normal, axis=1)[:, None]
    probe = tri_pts.mean(axis=1) + 0.5 * normal * min(np.diff(g).min() for g in grid)
    cell = np.column_stack([np.searchsorted(grid[ax], probe[:, ax], side="right") - 1 for ax in range(3)])
    inside_grid = np.all((cell >= 0) & (cell < counts), axis=1)
    flat = np.where(inside_grid, (cell[:, 0] * ny + cell[:, 1]) * nz + cell[:, 2], 0)
    face_cav = np.where(inside_grid, hex_cavity[flat], -1)
    on_cav = face_cav >= 0

    x_min = vertices[:, 0].min()
    fixed = np.flatnonzero(np.abs(vertices[:, 0] - x_min) <= 1e-9 * max(extent[0], 1.0))

    monitored = np.zeros(0, dtype=np.int64)
    if len(monitor_points):
        monitored = snap_to_vertices(vertices, np.asarray(monitor_points, dtype=float))
        if len(set(monitored.tolist())) != len(monitored):
            raise MeshingError("monitored anchors collapse onto the same vertex; refine the mesh")
        if np.any(np.diff(vertices[monitored, 0]) <= 0):
            raise MeshingError("monitored vertices are not strictly ordered along the axis")

    return TetMesh(
        vertices=vertices,
        tets=tets,
        region=region,
        cavity_tet=owner[on_cav],
        cavity_tris=tris[on_cav],
        cavity_ids=face_cav[on_cav],
        fixed_vertices=fixed,
        monitored_vertices=monitored,
        spacing=tuple(float(v) for v in h),
    )


def _check_separated(outline, centers, in_solid, shape, resolution):
    """Distinct chambers must not share a hex face (they would merge into one void)."""
    disk = np.full(len(centers), -1)
    for c in outline.cavities:
        disk[in_solid & (c.distance(centers) <= 0.0)] = c.cavity_id
    disk = disk.reshape(shape)
    for ax in range(3):
        a = np.moveaxis(disk, ax, 0)
        lo, hi = a[:-1], a[1:]
        bad = (lo >= 0) & (hi >= 0) & (lo != hi)
        if bad.any():
            i, j = lo[bad][0], hi[bad][0]
            raise MeshingError(
                f"cavities {i} and {j} merge at resolution {resolution} mm; refine along the axis")


def snap_to_vertices(vertices, points):
    d2 = ((points[:, None, :] - vertices[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1).astype(np.int64)


def boundary_faces(vertices, tets):
    """Faces used by exactly one tet, oriented with normals leaving that tet."""
    faces = tets[:, _FACES].reshape(-1, 3)
    owner = np.repeat(np.arange(len(tets)), 4)
    key = np.sort(faces, axis=1)
    _, first, counts = np.unique(key, axis=0, return_index=True, return_counts=True)
    sel = np.sort(first[counts == 1])
    tris, owner = faces[sel].copy(), owner[sel]
    # _FACES ordering already points outward for positively oriented tets; verify anyway
    p = vertices[tris]
    opp = vertices[tets[owner]].sum(axis=1) - p.sum(axis=1)
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    flip = np.einsum("ij,ij->i", n, opp - p[:, 0]) > 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return tris, owner


@dataclass
class RoiSet:
    candidate_id: str
    element_ids: np.ndarray
    warning: str = None

    @property
    def empty(self):
        return len(self.element_ids) == 0


def capsule_mask(points, polyline, radius):
    """True where a point is within ``radius`` of any segment of ``polyline``."""
    points = np.atleast_2d(points)
    polyline = np.asarray(polyline, dtype=float)
    inside = np.zeros(len(points), dtype=bool)
    if len(polyline) == 1:
        polyline = np.repeat(polyline, 2, axis=0)
    for a, b in zip(polyline[:-1], polyline[1:]):
        ab = b - a
        L2 = ab @ ab
        t = np.clip((points - a) @ ab / L2, 0.0, 1.0) if L2 > 0 else np.zeros(len(points))
        d2 = ((points - (a + t[:, None] * ab)) ** 2).sum(axis=1)
        inside |= d2 <= radius * radius
    return inside


def roi_elements(mesh, path):
    """Tets whose centroid lies in the union of the path's inclusion capsules."""
    c = mesh.centroids()
    mask = np.zeros(len(c), dtype=bool)
    for poly in path.polylines:
        mask |= capsule_mask(c, poly, path.radius)
    ids = np.flatnonzero(mask)
    warning = None
    if len(ids) == 0:
        warning = f"candidate {path.label}: inclusion of radius {path.radius:g} mm selects no elements"
        log.warning(warning)
    return RoiSet(candidate_id=path.label, element_ids=ids, warning=warning)


def write_tetmesh(mesh, path):
    lines = ["tetmesh v1", f"vertices {len(mesh.vertices)}"]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines.append(f"tets {len(mesh.tets)}")
    lines += [f"{a} {b} {c} {d} {REGION_NAMES[r]}"
              for (a, b, c, d), r in zip(mesh.tets.tolist(), mesh.region.tolist())]
    lines.append(f"cavity_faces {len(mesh.cavity_tris)}")
    lines += [f"{t} {a} {b} {c} {cid}" for t, (a, b, c), cid
              in zip(mesh.cavity_tet.tolist(), mesh.cavity_tris.tolist(), mesh.cavity_ids.tolist())]
    lines.append(f"fixed {len(mesh.fixed_vertices)}")
    lines += [str(i) for i in mesh.fixed_vertices.tolist()]
    lines.append(f"monitored {len(mesh.monitored_vertices)}")
    lines += [str(i) for i in mesh.monitored_vertices.tolist()]
    lines.append("spacing " + " ".join(repr(v) for v in mesh.spacing))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def read_tetmesh(path):
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != "tetmesh v1":
        raise MeshingError(f"{path}: not a 'tetmesh v1' file")
    pos = 1

    def section(name):
        nonlocal pos
        head, count = lines[pos].split()
        if head != name:
            raise MeshingError(f"{path}: expected section '{name}', found '{head}'")
        rows = lines[pos + 1:pos + 1 + int(count)]
        pos += 1 + int(count)
        return [r.split() for r in rows]

    regions = {v: k for k, v in REGION_NAMES.items()}
    verts = section("vertices")
    tets = section("tets")
    faces = section("cavity_faces")
    fixed = section("fixed")
    monitored = section("monitored")
    spacing = tuple(float(v) for v in lines[pos].split()[1:])
    return TetMesh(
        vertices=np.array([[float(v) for v in r] for r in verts]).reshape(-1, 3),
        tets=np.array([[int(v) for v in r[:4]] for r in tets]).reshape(-1, 4),
        region=np.array([regions[r[4]] for r in tets]),
        cavity_tet=np.array([int(r[0]) for r in faces]),
        cavity_tris=np.array([[int(v) for v in r[1:4]] for r in faces]).reshape(-1, 3),
        cavity_ids=np.array([int(r[4]) for r in faces]),
        fixed_vertices=np.array([int(r[0]) for r in fixed]),
        monitored_vertices=np.array([int(r[0]) for r in monitored]),
        spacing=spacing,
    )
