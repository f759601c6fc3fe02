import logging
from types import SimpleNamespace

import numpy as np
import pytest

from musense.errors import MeshingError, ValidationError
from musense.geometry import Box, Cavity, SolidOutline, anchor_nodes, build_design, solid_outline
from musense.mesh import (LATTICE, MEMBRANE, capsule_mask, mesh_outline, read_tetmesh, roi_elements,
                          write_tetmesh)


def _box_outline(hi, cavities=()):
    return SolidOutline(envelopes=[Box((0.0, 0.0, 0.0), tuple(hi))], cavities=list(cavities), channels=[],
                        membrane_band=0.05, wall_margin=0.4)


def _path(points, radius, label="p"):
    pts = np.asarray(points, dtype=float)
    return SimpleNamespace(polylines=(pts,), radius=radius, label=label)


def _capsule_brute(points, a, b, r):
    out = []
    for p in points:
        ab = b - a
        t = min(1.0, max(0.0, float(np.dot(p - a, ab) / np.dot(ab, ab))))
        out.append(float(np.linalg.norm(p - (a + t * ab))) <= r)
    return np.array(out)


@pytest.fixture(scope="module")
def default_mesh():
    return mesh_outline(solid_outline(build_design(1.0, 6, 1)), 12.5 / 3)


def test_unit_cube_counts():
    m = mesh_outline(_box_outline((1.0, 1.0, 1.0)), 0.5)
    assert 40 <= m.n_tets <= 48
    assert m.n_tets == 48
    assert np.all(m.region == LATTICE)
    assert np.sum(m.signed_volumes()) == pytest.approx(1.0, abs=1e-12)


def test_tets_positive(default_mesh):
    assert np.all(default_mesh.signed_volumes() > 0)


def test_spacing_respects_resolution(default_mesh):
    assert max(default_mesh.spacing) <= 12.5 / 3 + 1e-9


def test_cavity_faces_point_into_void():
    cav = Cavity(0, (1.5, 1.0, 1.0), 0.6, 0.6)
    m = mesh_outline(_box_outline((3.0, 2.0, 2.0), [cav]), 0.25)
    assert len(m.cavity_tris) > 0
    tri = m.vertices[m.cavity_tris]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    to_center = np.asarray(cav.center) - tri.mean(axis=1)
    assert np.all(np.einsum("ij,ij->i", n, to_center) > 0)
    # each face belongs to its owner tet
    for t, f in zip(m.cavity_tet, m.cavity_tris):
        assert set(f) <= set(m.tets[t])


def test_volume_bookkeeping_against_analytic_voids():
    d = build_design(1.0, 6, 1)
    o = solid_outline(d)
    m = mesh_outline(o, 12.5 / 6)
    env = o.envelope.volume
    ch = o.channels[0]
    inside = sum(2 * c.axial for c in o.cavities) - o.cavities[0].axial - o.cavities[-1].axial
    void = sum(c.volume for c in o.cavities) + np.pi * ch.radius**2 * (ch.x1 - ch.x0 - inside)
    assert abs(m.signed_volumes().sum() + void - env) <= 0.05 * env


def test_volume_conservation_exact(default_mesh):
    o = solid_outline(build_design(1.0, 6, 1))
    g = [np.unique(default_mesh.vertices[:, ax]) for ax in range(3)]
    c = [0.5 * (v[1:] + v[:-1]) for v in g]
    w = [np.diff(v) for v in g]
    cx, cy, cz = np.meshgrid(*c, indexing="ij")
    vol = np.einsum("i,j,k->ijk", *w).ravel()
    pts = np.column_stack([cx.ravel(), cy.ravel(), cz.ravel()])
    removed = vol[o.cavity_id(pts) >= 0].sum()
    total = default_mesh.signed_volumes().sum()
    assert total + removed == pytest.approx(o.envelope.volume, rel=1e-12)


def test_membrane_labels(default_mesh):
    labels = set(np.unique(default_mesh.region).tolist())
    assert labels == {LATTICE, MEMBRANE}
    # every tet on a cavity face is membrane
    assert np.all(default_mesh.region[default_mesh.cavity_tet] == MEMBRANE)


def test_fixed_and_monitored(default_mesh):
    v = default_mesh.vertices
    assert len(default_mesh.fixed_vertices) > 0
    assert np.all(v[default_mesh.fixed_vertices, 0] == 0.0)
    mon = default_mesh.monitored_vertices
    assert len(mon) == 6 and len(set(mon.tolist())) == 6
    assert np.all(np.diff(v[mon, 0]) > 0)
    assert np.allclose(v[mon], anchor_nodes(build_design()).points)


@pytest.mark.parametrize("res", [0.0, -1.0, 20.0])
def test_bad_resolution(res):
    with pytest.raises(ValidationError, match="resolution"):
        mesh_outline(solid_outline(build_design()), res)


def test_unresolved_cavity_is_named():
    cav = Cavity(7, (0.5, 0.5, 0.5), 0.1, 0.1)
    with pytest.raises(MeshingError, match="cavity 7"):
        mesh_outline(_box_outline((1.0, 1.0, 1.0), [cav]), 0.5)


def test_merging_cavities_rejected():
    a = Cavity(0, (1.0, 1.0, 1.0), 0.8, 0.3)
    b = Cavity(1, (1.7, 1.0, 1.0), 0.8, 0.3)
    with pytest.raises(MeshingError, match="merge"):
        mesh_outline(_box_outline((3.0, 2.0, 2.0), [a, b]), 0.5)


def test_tetmesh_round_trip(tmp_path, default_mesh):
    p1, p2 = tmp_path / "a.tetmesh", tmp_path / "b.tetmesh"
    write_tetmesh(default_mesh, p1)
    m2 = read_tetmesh(p1)
    write_tetmesh(m2, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert p1.read_text().startswith("tetmesh v1\n")
    assert np.array_equal(m2.tets, default_mesh.tets)
    assert np.array_equal(m2.vertices, default_mesh.vertices)


def test_roi_matches_brute_force_capsule():
    m = mesh_outline(_box_outline((1.0, 1.0, 1.0)), 0.1)
    assert m.n_tets == 6 * 1000
    a, b = np.array([0.05, 0.5, 0.5]), np.array([0.95, 0.5, 0.5])
    roi = roi_elements(m, _path([a, b], 0.17))
    brute = np.flatnonzero(_capsule_brute(m.centroids(), a, b, 0.17))
    assert np.array_equal(roi.element_ids, brute)
    assert roi.warning is None


def test_roi_multi_segment_brute_force():
    m = mesh_outline(_box_outline((1.0, 1.0, 1.0)), 0.1)
    pts = np.array([[0.1, 0.2, 0.3], [0.5, 0.6, 0.4], [0.9, 0.4, 0.7]])
    c = m.centroids()
    brute = _capsule_brute(c, pts[0], pts[1], 0.12) | _capsule_brute(c, pts[1], pts[2], 0.12)
    assert np.array_equal(roi_elements(m, _path(pts, 0.12)).element_ids, np.flatnonzero(brute))


def test_roi_monotone_in_radius_and_length():
    m = mesh_outline(_box_outline((1.0, 1.0, 1.0)), 0.1)
    pts = [[0.1, 0.5, 0.5], [0.5, 0.5, 0.5], [0.9, 0.45, 0.55]]
    small = set(roi_elements(m, _path(pts, 0.1)).element_ids.tolist())
    big = set(roi_elements(m, _path(pts, 0.2)).element_ids.tolist())
    longer = set(roi_elements(m, _path(pts + [[0.95, 0.2, 0.5]], 0.1)).element_ids.tolist())
    assert small <= big and small <= longer


def test_empty_roi_warns(caplog):
    m = mesh_outline(_box_outline((1.0, 1.0, 1.0)), 0.25)
    with caplog.at_level(logging.WARNING):
        roi = roi_elements(m, _path([[5.0, 5.0, 5.0], [6.0, 5.0, 5.0]], 0.5, "far"))
    assert len(roi.element_ids) == 0
    assert roi.warning and "far" in roi.warning
    assert "far" in caplog.text


def test_capsule_mask_degenerate_segment():
    pts = np.array([[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [2.0, 0.0, 0.0]])
    mask = capsule_mask(pts, np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]), 1.0)
    assert mask.tolist() == [True, True, False]


def test_sensor_strip_gives_continuous_rod():
    d = build_design(1.0, 6, 1)
    m = mesh_outline(solid_outline(d), 12.5 / 3)
    a = anchor_nodes(d).points
    roi = roi_elements(m, _path(a[:3], d.sensor_radius))
    c = m.centroids()[roi.element_ids]
    # the selected tets tile the strip between the first and third anchor
    assert c[:, 0].min() < a[0, 0] + 1.0 and c[:, 0].max() > a[2, 0] - 1.0
    vol = m.signed_volumes()[roi.element_ids].sum()
    rod = np.pi * d.sensor_radius**2 * (a[2, 0] - a[0, 0])
    assert rod * (1 - 1e-9) <= vol <= rod + 2 * np.pi * d.sensor_radius**2 * m.spacing[0]
