import numpy as np
import pytest

from app.cube_io import HyperCube, LibraryEntry, SpectralLibrary
from app.detect import AceScoreMap, RoiRecord, ace_map, extract_rois
from app.errors import ConstantSpectrum, InputError, InsufficientBackground, LengthMismatch
from app.identify import (
    FLAG_INSUFFICIENT_BACKGROUND,
    BackgroundSample,
    IDENTIFICATION_COLUMNS,
    NON_TARGET,
    TARGET,
    class_probability,
    estimate_background,
    identify,
    material_stem,
    spectral_fit,
    write_identifications_csv,
)
from app.pca import WhiteningModel, compute_stats, eigendecompose, full_whitening, whiten, whiten_cube


def _flat_cube(lines=40, samples=40, bands=4):
    rng = np.random.default_rng(2)
    return HyperCube(data=rng.normal(size=(lines, samples, bands)), wavelengths=np.linspace(0.4, 1.0, bands))


def _roi(center, members=None, cube=None):
    members = tuple(members or [center])
    spectrum = np.zeros(cube.bands) if cube is None else cube.data[center]
    return RoiRecord(1, center, 0.9, len(members), members, spectrum)


@pytest.mark.parametrize(
    "name,stem",
    [("F8_a", "F8"), ("F8-b", "F8"), ("V1.2", "V1"), ("M#3", "M"), ("grass patch", "grass"), ("T1", "T1"), ("_x", "_x")],
)
def test_material_stem(name, stem):
    assert material_stem(name) == stem


def test_spectral_fit_range_and_errors():
    a = np.array([1.0, 2.0, 4.0, 3.0])
    assert spectral_fit(a, a) == pytest.approx(1.0)
    assert spectral_fit(a, 2 * a + 5) == pytest.approx(1.0)
    assert spectral_fit(a, -a) == pytest.approx(0.0)
    with pytest.raises(ConstantSpectrum):
        spectral_fit(a, np.full(4, 3.0))
    with pytest.raises(LengthMismatch):
        spectral_fit(a, a[:3])


def test_spectral_fit_tolerates_one_percent_noise():
    rng = np.random.default_rng(145)
    reference = 0.2 + 0.6 * np.sin(np.linspace(0.0, np.pi, 145)) ** 2
    sigma = 0.01 * float(reference.max() - reference.min())
    fits = [spectral_fit(reference + rng.normal(scale=sigma, size=145), reference) for _ in range(1000)]
    assert min(fits) >= 0.99


def _identity_model(bands):
    return WhiteningModel(mean=np.zeros(bands), transform=np.eye(bands), retained_eigenvalues=np.ones(bands))


def _spread_library(bands, spectra):
    return SpectralLibrary(
        wavelengths=np.linspace(0.4, 2.5, bands),
        entries=tuple(LibraryEntry(name, "target", s) for name, s in spectra.items()),
    )


def _background_at(spectrum):
    return BackgroundSample(((0, 0), (0, 1)), np.stack([spectrum, spectrum]), (5, 15), 0.2)


def test_identical_entries_get_identical_probabilities():
    rng = np.random.default_rng(31)
    shared = rng.normal(size=6)
    library = _spread_library(6, {"A": shared, "B": shared.copy(), "C": rng.normal(size=6)})
    probs = class_probability(rng.normal(size=6), library, _background_at(rng.normal(size=6)), _identity_model(6))
    assert probs["A"] == probs["B"]


def test_exact_match_dominates_and_background_mean_picks_background():
    eye = 5.0 * np.eye(6)
    library = _spread_library(6, {"A": eye[0], "B": eye[1], "C": eye[2]})
    background = _background_at(eye[3])
    model = _identity_model(6)
    assert class_probability(eye[1], library, background, model)["B"] > 0.99
    probs = class_probability(eye[3], library, background, model)
    assert max(probs, key=probs.get) == "background"


def test_background_annulus_geometry():
    cube = _flat_cube()
    score_map = AceScoreMap(np.zeros((40, 40)), "t", 4)
    bg = estimate_background(score_map, cube, _roi((20, 20), cube=cube), inner=5, outer=15, max_ace=0.2)
    assert bg.count == 31 * 31 - 11 * 11
    for line, sample in bg.pixels:
        assert 5 < max(abs(line - 20), abs(sample - 20)) <= 15
    assert np.allclose(bg.mean_spectrum, cube.data[[p[0] for p in bg.pixels], [p[1] for p in bg.pixels]].mean(axis=0))


def test_background_excludes_high_scores_and_roi_members():
    cube = _flat_cube()
    s = np.zeros((40, 40))
    s[20, 30] = 0.3  # above max_ace
    roi = _roi((20, 20), members=[(20, 20), (26, 20)], cube=cube)
    bg = estimate_background(AceScoreMap(s, "t", 4), cube, roi, inner=5, outer=15, max_ace=0.2)
    assert bg.count == 31 * 31 - 11 * 11 - 2
    assert (20, 30) not in bg.pixels
    assert (26, 20) not in bg.pixels


def test_background_is_clipped_at_borders_and_can_be_insufficient():
    cube = _flat_cube(12, 12)
    score_map = AceScoreMap(np.zeros((12, 12)), "t", 4)
    bg = estimate_background(score_map, cube, _roi((0, 0), cube=cube), inner=5, outer=15, max_ace=0.2, min_samples=1)
    assert bg.count == 12 * 12 - 6 * 6
    with pytest.raises(InsufficientBackground):
        estimate_background(score_map, cube, _roi((0, 0), cube=cube), inner=5, outer=15, min_samples=200)
    with pytest.raises(InputError):
        estimate_background(score_map, cube, _roi((0, 0), cube=cube), inner=5, outer=5)


def _random_instance(rng):
    bands = int(rng.integers(3, 12))
    k = int(rng.integers(1, bands + 1))
    n = int(rng.integers(1, 6))
    wl = np.linspace(0.4, 2.5, bands)
    library = SpectralLibrary(
        wavelengths=wl,
        entries=tuple(
            LibraryEntry(f"M{i}", "target" if i % 2 == 0 else "confuser", rng.normal(size=bands)) for i in range(n)
        ),
    )
    model = WhiteningModel(
        mean=rng.normal(size=bands),
        transform=rng.normal(size=(bands, k)) * rng.uniform(0.1, 3.0),
        retained_eigenvalues=np.ones(k),
    )
    spectra = rng.normal(size=(30, bands))
    background = BackgroundSample(tuple((0, i) for i in range(30)), spectra, (5, 15), 0.2)
    return library, model, background, rng.normal(size=bands)


def test_class_probabilities_sum_to_one_and_ignore_library_order():
    rng = np.random.default_rng(1234)
    for _ in range(1000):
        library, model, background, x = _random_instance(rng)
        probs = class_probability(x, library, background, model)
        assert abs(sum(probs.values()) - 1.0) <= 1e-9
        assert list(probs) == sorted(probs)
        assert "background" in probs
        shuffled = SpectralLibrary(
            wavelengths=library.wavelengths, entries=tuple(library.entries[i] for i in rng.permutation(len(library.entries)))
        )
        assert class_probability(x, shuffled, background, model) == probs


def test_probabilities_without_background_cover_library_only():
    rng = np.random.default_rng(9)
    library, model, _, x = _random_instance(rng)
    probs = class_probability(x, library, None, model)
    assert set(probs) == set(library.names)


def _detect(scene, target):
    cube, library, _ = scene
    stats = compute_stats(cube)
    model = full_whitening(eigendecompose(stats), stats.mean)
    score_map = ace_map(whiten_cube(model, cube), whiten(model, library.get(target).spectrum), target)
    return cube, library, model, score_map, extract_rois(score_map, cube, 0.5, 100)


def test_planted_target_is_identified(small_scene):
    cube, library, model, score_map, rois = _detect(small_scene, "T1")
    planted = [r for r in rois if max(abs(r.center[0] - 12), abs(r.center[1] - 12)) <= 1]
    assert planted, "3x3 T1 patch should produce a ROI"
    result = identify(planted[0], score_map, cube, library, model, 0.5, 0.5)
    assert result.decision == TARGET
    assert result.is_target
    assert result.best_label == "T1"
    assert result.stem == "T1"
    assert result.probability >= 0.5
    assert result.spectral_fit >= 0.9
    assert sum(result.per_class_probabilities.values()) == pytest.approx(1.0, abs=1e-9)


def test_confuser_patch_is_never_confirmed(small_scene):
    cube, library, model, score_map, rois = _detect(small_scene, "T1")
    for roi in rois:
        if max(abs(roi.center[0] - 36), abs(roi.center[1] - 12)) <= 1:
            result = identify(roi, score_map, cube, library, model, 0.5, 0.5)
            assert result.decision == NON_TARGET
            assert result.best_label == "C1"


def test_missing_background_forces_non_target(small_scene):
    cube, library, model, score_map, rois = _detect(small_scene, "T1")
    planted = [r for r in rois if max(abs(r.center[0] - 12), abs(r.center[1] - 12)) <= 1]
    result = identify(planted[0], score_map, cube, library, model, 0.5, 0.5, min_samples=10_000)
    assert result.decision == NON_TARGET
    assert FLAG_INSUFFICIENT_BACKGROUND in result.flag
    assert "background" not in result.per_class_probabilities


def test_thresholds_gate_the_decision(small_scene):
    cube, library, model, score_map, rois = _detect(small_scene, "T1")
    planted = [r for r in rois if max(abs(r.center[0] - 12), abs(r.center[1] - 12)) <= 1][0]
    assert identify(planted, score_map, cube, library, model, p_min=1.01, f_min=0.0).decision == NON_TARGET
    assert identify(planted, score_map, cube, library, model, p_min=0.0, f_min=1.01).decision == NON_TARGET


def test_identifications_csv(tmp_path, small_scene):
    cube, library, model, score_map, rois = _detect(small_scene, "T1")
    results = [identify(r, score_map, cube, library, model) for r in rois]
    path = tmp_path / "ids.csv"
    write_identifications_csv(results, str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(IDENTIFICATION_COLUMNS)
    assert len(lines) == len(results) + 1
