import numpy as np
import pytest

from app.cube_io import HyperCube
from app.detect import (
    AceScoreMap,
    ace_direct,
    ace_map,
    ace_score,
    extract_rois,
    write_rois_csv,
    write_score_map,
)
from app.errors import InputError, LengthMismatch, NumericalError, ZeroTarget
from app.pca import compute_stats, eigendecompose, full_whitening, truncate, whiten, whiten_cube, whitening_matrix
from conftest import make_cube


def _full_model(cube):
    stats = compute_stats(cube)
    return stats, full_whitening(eigendecompose(stats), stats.mean)


@pytest.mark.parametrize("seed", range(20))
def test_full_rank_matches_linear_solve_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    lines, samples = int(rng.integers(6, 33)), int(rng.integers(6, 33))
    bands = int(rng.integers(3, 17))
    cube = make_cube(lines, samples, bands, seed=seed)
    target = cube.pixels().mean(axis=0) + rng.normal(size=bands)
    stats, model = _full_model(cube)
    pca = ace_map(whiten_cube(model, cube), whiten(model, target))
    direct = ace_direct(cube, stats, target)
    assert np.abs(pca.scores - direct.scores).max() <= 1e-8


def test_scores_are_bounded_and_fixed_points_hold(random_cube):
    stats, model = _full_model(random_cube)
    target = random_cube.spectrum(3, 4)
    wcube = whiten_cube(model, random_cube)
    t_hat = whiten(model, target)
    m = ace_map(wcube, t_hat, "pix")
    assert m.scores.min() >= -1.0 and m.scores.max() <= 1.0
    assert abs(m.scores[3, 4] - 1.0) <= 1e-10
    scaled = ace_map(wcube, 3.7 * t_hat, "pix")
    assert np.abs(scaled.scores - m.scores).max() <= 1e-12


def test_squared_scores(random_cube):
    stats, model = _full_model(random_cube)
    wcube = whiten_cube(model, random_cube)
    t_hat = whiten(model, random_cube.spectrum(0, 0))
    plain = ace_map(wcube, t_hat)
    sq = ace_map(wcube, t_hat, squared=True)
    assert sq.squared
    assert np.allclose(sq.scores, plain.scores ** 2, rtol=0, atol=1e-15)
    assert sq.scores.min() >= 0.0


def test_chunking_and_threads_do_not_change_scores():
    cube = make_cube(37, 11, 9, seed=4)
    _, model = _full_model(cube)
    wcube = whiten_cube(model, cube)
    t_hat = whiten(model, cube.spectrum(5, 5) + 0.5)
    ref = ace_map(wcube, t_hat, chunk_rows=64, workers=1).scores
    for rows, workers in ((1, 1), (7, 1), (5, 3), (37, 4)):
        assert np.array_equal(ace_map(wcube, t_hat, chunk_rows=rows, workers=workers).scores, ref)


def test_single_pixel_score_matches_map(random_cube):
    _, model = _full_model(random_cube)
    wcube = whiten_cube(model, random_cube)
    t_hat = whiten(model, random_cube.spectrum(1, 1) * 1.1)
    m = ace_map(wcube, t_hat)
    assert ace_score(wcube.data[2, 7], t_hat) == pytest.approx(m.scores[2, 7], abs=1e-12)
    assert ace_score(wcube.data[2, 7], t_hat, squared=True) == pytest.approx(m.scores[2, 7] ** 2, abs=1e-12)


def test_zero_pixel_and_zero_target():
    assert ace_score(np.zeros(3), np.array([1.0, 0.0, 0.0])) == 0.0
    with pytest.raises(ZeroTarget):
        ace_score(np.ones(3), np.zeros(3))
    with pytest.raises(LengthMismatch):
        ace_score(np.ones(3), np.ones(4))


def test_target_equal_to_mean_is_zero_target(random_cube):
    stats, model = _full_model(random_cube)
    with pytest.raises(ZeroTarget):
        ace_map(whiten_cube(model, random_cube), whiten(model, stats.mean))


def test_target_outside_the_retained_subspace_is_zero_target():
    cube = make_cube(20, 20, 8, seed=12)
    stats = compute_stats(cube)
    eig = eigendecompose(stats)
    m3 = whitening_matrix(eig, stats.mean, 3)
    # differs from the mean only along the weakest component, which k=3 drops
    target = stats.mean + 5.0 * eig.eigenvectors[:, 7]
    assert np.array_equal(whiten(m3, target), np.zeros(3))
    with pytest.raises(ZeroTarget):
        ace_map(whiten_cube(m3, cube), whiten(m3, target))
    assert np.linalg.norm(whiten(whitening_matrix(eig, stats.mean, 8), target)) > 1.0


def test_pixel_outside_the_retained_subspace_scores_zero():
    cube = make_cube(20, 20, 8, seed=12)
    stats = compute_stats(cube)
    eig = eigendecompose(stats)
    m3 = whitening_matrix(eig, stats.mean, 3)
    data = cube.data.copy()
    data[4, 6] = stats.mean + 5.0 * eig.eigenvectors[:, 7]
    shifted = HyperCube(data=data, wavelengths=cube.wavelengths)
    wcube = whiten_cube(m3, shifted)
    assert np.array_equal(wcube.data[4, 6], np.zeros(3))
    score_map = ace_map(wcube, whiten(m3, cube.spectrum(0, 0)))
    assert score_map.scores[4, 6] == 0.0


def test_truncated_model_scores_in_k_dimensions(random_cube):
    _, model = _full_model(random_cube)
    m3 = truncate(model, 3)
    score_map = ace_map(whiten_cube(m3, random_cube), whiten(m3, random_cube.spectrum(0, 1)), "A")
    assert score_map.rank_k == 3
    assert score_map.target_name == "A"
    with pytest.raises(LengthMismatch):
        ace_map(whiten_cube(m3, random_cube), whiten(model, random_cube.spectrum(0, 1)))


def test_score_map_rejects_non_finite():
    with pytest.raises(NumericalError):
        AceScoreMap(np.array([[0.0, np.nan]]), "t", 2)
    with pytest.raises(InputError):
        AceScoreMap(np.zeros(3), "t", 2)


def _scene(lines, samples, bands=3):
    data = np.arange(lines * samples * bands, dtype=np.float64).reshape(lines, samples, bands)
    return HyperCube(data=data, wavelengths=np.linspace(0.4, 1.0, bands))


def test_extract_rois_groups_ranks_and_summarizes():
    cube = _scene(6, 6)
    s = np.zeros((6, 6))
    s[0, 0], s[1, 1] = 0.6, 0.7  # diagonal neighbours: one ROI
    s[4, 4], s[4, 5] = 0.9, 0.9  # tie: first in raster order
    s[0, 5] = 0.55
    rois = extract_rois(AceScoreMap(s, "t", 3), cube, threshold=0.5, cap=10)
    assert [r.id for r in rois] == [1, 2, 3]
    assert [r.center for r in rois] == [(4, 4), (1, 1), (0, 5)]
    assert [r.peak_score for r in rois] == [0.9, 0.7, 0.55]
    assert rois[1].pixel_count == 2
    assert rois[1].member_pixels == ((0, 0), (1, 1))
    expected = (cube.data[0, 0] + cube.data[1, 1]) / 2
    assert np.allclose(rois[1].mean_spectrum, expected)


def test_extract_rois_cap_and_raster_order():
    cube = _scene(5, 5)
    s = np.zeros((5, 5))
    s[0, 4], s[2, 0], s[4, 2] = 0.6, 0.95, 0.8
    score_map = AceScoreMap(s, "t", 3)
    top = extract_rois(score_map, cube, 0.5, cap=2)
    assert [r.center for r in top] == [(2, 0), (4, 2)]
    raster = extract_rois(score_map, cube, 0.5, cap=2, order="raster")
    assert [r.center for r in raster] == [(0, 4), (2, 0)]
    assert extract_rois(AceScoreMap(np.zeros((5, 5)), "t", 3), cube, 0.5) == []


def test_threshold_is_inclusive():
    cube = _scene(2, 2)
    s = np.array([[0.5, 0.0], [0.0, 0.0]])
    assert len(extract_rois(AceScoreMap(s, "t", 3), cube, threshold=0.5)) == 1


@pytest.mark.parametrize("kwargs", [{"threshold": -1.0}, {"threshold": 1.5}, {"cap": 0}, {"order": "size"}])
def test_extract_rois_validates_arguments(kwargs):
    cube = _scene(3, 3)
    with pytest.raises(InputError):
        extract_rois(AceScoreMap(np.zeros((3, 3)), "t", 3), cube, **kwargs)


def test_extract_rois_shape_mismatch():
    with pytest.raises(LengthMismatch):
        extract_rois(AceScoreMap(np.zeros((3, 4)), "t", 3), _scene(3, 3))


def test_write_score_map_and_rois(tmp_path):
    cube = _scene(3, 4)
    s = np.zeros((3, 4))
    s[1, 2] = 0.75
    score_map = AceScoreMap(s, "T1", 3)
    img = write_score_map(score_map, str(tmp_path / "score_map.hdr"))
    header = (tmp_path / "score_map.hdr").read_text()
    assert "bands = 1" in header and "interleave = bsq" in header
    assert np.array_equal(np.fromfile(img, dtype="<f8").reshape(3, 4), s)

    write_rois_csv(extract_rois(score_map, cube, 0.5), str(tmp_path / "rois.csv"))
    lines = (tmp_path / "rois.csv").read_text().splitlines()
    assert lines == ["id,line,sample,peak_score,pixel_count", "1,1,2,0.75,1"]
