import numpy as np
import pytest

from musense.errors import ConfigurationError, ValidationError
from musense.geometry import (anchor_nodes, build_design, read_nodes_txt, solid_outline,
                              write_nodes_txt)


def test_unit_scale_design():
    d = build_design(1.0, 6, 1)
    assert d.unit_cell == 12.5
    assert d.bladder_diameter == 25.0
    assert d.chamber_pitch == 12.5
    assert d.strut_min_thickness == 1.5
    assert d.sensor_radius == 1.0


@pytest.mark.parametrize("scale, u, dia, strut", [(0.75, 9.375, 18.75, 1.125), (1.5, 18.75, 37.5, 2.25)])
def test_scaled_designs(scale, u, dia, strut):
    d = build_design(scale, 6, 1)
    assert d.unit_cell == pytest.approx(u)
    assert d.bladder_diameter == pytest.approx(dia)
    assert d.strut_min_thickness == pytest.approx(strut)
    assert d.sensor_radius == 1.0


@pytest.mark.parametrize("kw, field", [
    ({"scale": -1.0}, "scale"), ({"scale": 0.0}, "scale"),
    ({"chamber_count": 0}, "chamber_count"), ({"fingers": 3}, "fingers")])
def test_invalid_design_names_field(kw, field):
    with pytest.raises(ValidationError) as exc:
        build_design(**kw)
    assert exc.value.field == field
    assert field in str(exc.value)


def test_anchors_spacing_and_plane():
    a = anchor_nodes(build_design(1.0, 6))
    assert a.n == 6
    assert np.allclose(np.diff(a.points[:, 0]), 12.5)
    assert np.all(np.diff(a.points[:, 0]) > 0)
    assert np.all(np.abs(a.points[:, 2]) <= 1e-9)
    assert np.allclose(np.diff(anchor_nodes(build_design(0.75, 6)).points[:, 0]), 9.375)


def test_anchor_points_are_read_only():
    a = anchor_nodes(build_design())
    with pytest.raises(ValueError):
        a.points[0, 0] = 1.0


def test_outline_envelope_length():
    o = solid_outline(build_design(1.0, 6, 1))
    assert o.envelope.hi[0] - o.envelope.lo[0] == pytest.approx(100.0)
    one = solid_outline(build_design(1.0, 1, 1))
    assert one.envelope.hi[0] == pytest.approx(37.5)
    assert len(one.cavities) == 1
    assert one.cavities[0].center[0] == pytest.approx(37.5 / 2)


def test_outline_invariants():
    d = build_design(1.0, 6, 1)
    o = solid_outline(d)
    half = o.envelope.hi[1]
    for c in o.cavities:
        assert c.radial < half
    xs = sorted((c.center[0] - c.axial, c.center[0] + c.axial) for c in o.cavities)
    for (_, hi), (lo, _) in zip(xs[:-1], xs[1:]):
        assert hi < lo
    # cavities stay clear of the outer wall by at least the membrane band
    assert half - o.cavities[0].radial > o.membrane_band


def test_gripper_outline_duplicates_layout():
    o = solid_outline(build_design(1.0, 6, 2))
    assert len(o.envelopes) == 2
    assert o.base_block is not None
    a = [c for c in o.cavities if c.finger == 0]
    b = [c for c in o.cavities if c.finger == 1]
    assert [c.center[0] for c in a] == [c.center[0] for c in b]
    assert [(c.radial, c.axial) for c in a] == [(c.radial, c.axial) for c in b]
    e0, e1 = o.envelopes
    assert np.allclose(np.subtract(e0.hi, e0.lo), np.subtract(e1.hi, e1.lo))


def test_membrane_band_must_stay_inside_wall():
    d = build_design(1.0, 6, 1)
    with pytest.raises(ConfigurationError):
        solid_outline(d, membrane_band=5.0)


def test_scaling_is_exact():
    for s in (0.75, 1.5, 2.0, 0.3):
        d1, ds = build_design(1.0), build_design(s)
        for name in ("unit_cell", "bladder_diameter", "chamber_pitch", "strut_min_thickness"):
            assert getattr(ds, name) == s * getattr(d1, name)
        assert ds.sensor_radius == d1.sensor_radius
        assert np.array_equal(anchor_nodes(ds).points, s * anchor_nodes(d1).points)
        o1, os_ = solid_outline(d1), solid_outline(ds)
        assert np.array_equal(np.array(os_.envelope.hi), s * np.array(o1.envelope.hi))
        for c1, cs in zip(o1.cavities, os_.cavities):
            assert np.array_equal(np.array(cs.center), s * np.array(c1.center))
            assert cs.radial == s * c1.radial and cs.axial == s * c1.axial


def test_nodes_txt_format(tmp_path):
    a = anchor_nodes(build_design(1.0, 6))
    p = tmp_path / "nodes.txt"
    write_nodes_txt(a, p)
    lines = p.read_text().splitlines()
    assert len(lines) == 6
    assert lines[0] == "18.750 -12.500 0.000"
    assert np.allclose(read_nodes_txt(p).points, a.points)
