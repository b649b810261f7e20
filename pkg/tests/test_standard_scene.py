"""Sweep behaviour on the committed 128x128x50 standard scene (fixed seed)."""
import math

import numpy as np
import pytest

from app.config import SweepSettings
from app.pca import compute_stats, eigendecompose, full_whitening, truncate, whitening_matrix
from app.scene_synth import generate_scene, standard_scene_spec
from app.sweep import ground_truth_accuracy, planted_matches, run_sweep

TARGETS = ["T1", "T2", "T3", "T4"]


@pytest.fixture(scope="module")
def standard():
    cube, library, truth = generate_scene(standard_scene_spec())
    result = run_sweep(cube, library, TARGETS, settings=SweepSettings(record_timing=False))
    accuracy = ground_truth_accuracy(result.runs, truth, TARGETS, 3)
    return cube, truth, result, accuracy


def test_default_grid_covers_all_bands(standard):
    _, _, result, _ = standard
    assert result.grid.ks == (5, 10, 15, 20, 25, 30, 35, 40, 45, 50)
    assert result.report.reference_k == 50
    assert all(e.failure is None for e in result.report.per_k)


def test_truncation_is_a_column_prefix_of_the_scene_decomposition(standard):
    cube = standard[0]
    stats = compute_stats(cube)
    eig = eigendecompose(stats)
    full = full_whitening(eig, stats.mean)
    assert full.rank == 50
    for k in range(1, 51):
        assert np.array_equal(whitening_matrix(eig, stats.mean, k).transform, full.transform[:, :k])
        assert np.array_equal(truncate(full, k).transform, full.transform[:, :k])


def test_low_rank_produces_at_least_as_many_false_detections(standard):
    _, _, result, accuracy = standard
    low, full = accuracy[0], accuracy[-1]
    assert (low.k, full.k) == (5, 50)
    assert low.unmatched_rois >= full.unmatched_rois
    assert result.report.per_k[0].false >= result.report.per_k[-1].false


def test_full_rank_confirms_every_target_low_rank_confirms(standard):
    _, truth, result, _ = standard
    low = planted_matches(result.runs[0], truth, 3, confirmed_only=True)
    full = planted_matches(result.runs[-1], truth, 3, confirmed_only=True)
    assert {i for i, hit in low.items() if hit} <= {i for i, hit in full.items() if hit}


def test_full_rank_rois_all_lie_on_the_reference_mask(standard):
    _, _, result, _ = standard
    assert result.report.entry(50).off_reference == 0
    assert all(row.on_reference for row in result.overlay if row.k == 50)


def test_planted_targets_are_found_at_full_rank(standard):
    _, _, _, accuracy = standard
    full = accuracy[-1]
    assert full.planted == 30
    assert full.detection_rate >= 0.95


def test_target_mean_settles_at_high_rank(standard):
    _, _, result, _ = standard
    means = np.array([e.target_mean for e in result.report.per_k], dtype=float)
    quarter = max(2, math.ceil(len(means) / 4))
    bottom = np.nanmax(np.abs(np.diff(means[:quarter])))
    top = np.nanmax(np.abs(np.diff(means[-quarter:])))
    assert top <= bottom


def test_a_small_target_appears_only_at_higher_rank(standard):
    _, truth, result, _ = standard
    small = [i for i, e in enumerate(truth.entries) if e.kind == "target" and e.size == (1, 1) and e.abundance < 1.0]
    assert len(small) == 8
    low = planted_matches(result.runs[0], truth, 3)
    full = planted_matches(result.runs[-1], truth, 3)
    assert any(not low[i] and full[i] for i in small)
