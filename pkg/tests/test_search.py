import logging

import numpy as np
import pytest

from musense import EnumerationError, RunConfig, SearchError, build_design
from musense.candidates import CandidatePath, enumerate_candidates
from musense.fem import assemble_material
from musense.geometry import anchor_nodes
from musense.search import (FAILED, OK, BaselineCache, CandidateResult, build_mesh, evaluate_candidate,
                            exhaustive_search, rank, run_baseline)

from conftest import SMALL_RES


@pytest.fixture(scope="module")
def small_config():
    return RunConfig(chamber_count=3, resolution_mm=SMALL_RES, k=4, j=20)


@pytest.fixture(scope="module")
def small_baseline(small_mesh, small_config):
    mat = assemble_material(small_mesh, None, small_config.material())
    return run_baseline(small_mesh, mat, small_config.program(), small_config.k)


def _row(label, j, h, i, status=OK):
    return CandidateResult(label, i, h, status, j_hat=j, j_cont=j)


def test_rank_sorts_and_breaks_ties():
    rows = [_row("α3", 0.2, 3, 3), _row("α5", 0.1, 4, 1), _row("α1", 0.1, 3, 1),
            _row("α2", 0.1, 3, 2), _row("α4", np.nan, 3, 4, FAILED)]
    table = rank(rows, "fp")
    assert [r.label for r in table.rows] == ["α1", "α2", "α5", "α3", "α4"]
    assert table.optimum.label == "α1"
    assert [r.label for r in table.failed] == ["α4"]


def test_rank_all_failed_raises():
    with pytest.raises(SearchError, match="FAILED"):
        rank([_row("α1", np.nan, 3, 1, FAILED)], "fp")


def test_ranking_csv_flags_failures(tmp_path):
    table = rank([_row("α1", 0.5, 3, 1), _row("α2", np.nan, 3, 2, FAILED)], "abc")
    table.to_csv(tmp_path / "r.csv")
    text = (tmp_path / "r.csv").read_text()
    assert "# config_fingerprint=abc" in text
    assert "WARNING: 1 candidate(s) FAILED" in text
    assert "1,α1,1,3,0.500000000,0.500000000,0,OK" in text
    assert "2,α2,2,3,,,0,FAILED" in text


def test_baseline_cache_hit_and_miss(small_mesh, small_config):
    cache = BaselineCache()
    mat = assemble_material(small_mesh, None, small_config.material())
    fp = small_config.fingerprint()
    a = run_baseline(small_mesh, mat, small_config.program(), 2, cache=cache, fingerprint=fp)
    b = run_baseline(small_mesh, mat, small_config.program(), 2, cache=cache, fingerprint=fp)
    assert a is b and cache.solves == 1
    other = small_config.with_overrides(e_lat_kpa=30.0)
    assert other.fingerprint() != fp
    run_baseline(small_mesh, assemble_material(small_mesh, None, other.material()), other.program(), 2,
                 cache=cache, fingerprint=other.fingerprint())
    assert cache.solves == 2


def test_baseline_k2_has_two_steps(small_mesh, small_config):
    mat = assemble_material(small_mesh, None, small_config.material())
    traj = run_baseline(small_mesh, mat, small_config.program(), 2)
    assert traj.positions.shape[0] == 2
    np.testing.assert_array_equal(traj.times, [0.0, 1.0])


def test_candidate_deviation_is_positive_and_bounded(small_mesh, small_baseline, small_config):
    path = enumerate_candidates(anchor_nodes(build_design(1.0, 3, 1)))[0]
    res = evaluate_candidate(small_mesh, small_baseline, path, small_config)
    assert res.ok and res.roi_count > 0
    assert 0 < res.j_hat < build_design(1.0, 3, 1).length
    assert res.j_cont >= res.j_hat


def test_degenerate_material_gives_zero_deviation(small_mesh, small_config):
    cfg = small_config.with_overrides(e_lat_kpa=500.0, e_mem_kpa=500.0, e_sens_kpa=500.0)
    mat = assemble_material(small_mesh, None, cfg.material())
    base = run_baseline(small_mesh, mat, cfg.program(), cfg.k)
    path = enumerate_candidates(anchor_nodes(build_design(1.0, 3, 1)))[0]
    res = evaluate_candidate(small_mesh, base, path, cfg)
    assert res.ok and res.roi_count > 0
    assert res.j_hat <= 1e-9


def test_empty_roi_gives_zero_deviation_and_warns(small_mesh, small_baseline, small_config, caplog):
    far = np.array([[500.0, 500.0, 500.0], [510.0, 500.0, 500.0], [520.0, 500.0, 500.0]])
    path = CandidatePath(1, 3, far, "α1", 1.0, (far,))
    with caplog.at_level(logging.WARNING):
        res = evaluate_candidate(small_mesh, small_baseline, path, small_config)
    assert res.ok and res.roi_count == 0
    assert res.j_hat <= 1e-9
    assert "selects no elements" in res.message
    assert any("selects no elements" in r.message for r in caplog.records)


def test_solver_failure_becomes_failed_row(small_mesh, small_baseline, small_config):
    path = enumerate_candidates(anchor_nodes(build_design(1.0, 3, 1)))[0]
    res = evaluate_candidate(small_mesh, small_baseline, path, small_config, max_iter=1,
                             max_bisections=0)
    assert res.status == FAILED
    assert np.isnan(res.j_hat)
    assert res.message


def test_search_with_three_anchors_has_one_row(small_design, small_mesh, small_config):
    cache = BaselineCache()
    table = exhaustive_search(small_design, small_config, workers=1, cache=cache, mesh=small_mesh)
    assert len(table.rows) == 1 and table.optimum.label == "α1"
    exhaustive_search(small_design, small_config, workers=1, cache=cache, mesh=small_mesh)
    assert cache.solves == 1


def test_search_rejects_too_few_anchors(small_config):
    design = build_design(1.0, 2, 1)
    cfg = small_config.with_overrides(chamber_count=2)
    with pytest.raises(EnumerationError, match="at least 3 anchors"):
        exhaustive_search(design, cfg, workers=1)


@pytest.mark.slow
def test_worker_count_does_not_change_ranking(tmp_path):
    cfg = RunConfig(resolution_mm=SMALL_RES, k=3, j=20)
    design = cfg.design()
    mesh = build_mesh(design, cfg)
    cache = BaselineCache()
    serial = exhaustive_search(design, cfg, workers=1, cache=cache, mesh=mesh)
    parallel = exhaustive_search(design, cfg, workers=3, cache=cache, mesh=mesh)
    serial.to_csv(tmp_path / "a.csv")
    parallel.to_csv(tmp_path / "b.csv")
    assert len(serial.rows) == 10 and not serial.failed
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert cache.solves == 1
