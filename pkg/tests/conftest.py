import os
import sys

import numpy as np
import pytest

# Ensure project root is on sys.path for `import app.*`
PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

from app.cube_io import HyperCube, LibraryEntry, SpectralLibrary  # noqa: E402
from app.scene_synth import Placement, SceneSpec, generate_scene, write_scene  # noqa: E402


def make_cube(lines=12, samples=10, bands=8, seed=7, wavelengths=None):
    """Correlated Gaussian cube: full-rank covariance with unequal eigenvalues."""
    rng = np.random.default_rng(seed)
    mix = np.eye(bands) + 0.3 * rng.normal(size=(bands, bands))
    data = rng.normal(size=(lines, samples, bands)) @ mix + 1.0
    if wavelengths is None:
        wavelengths = np.linspace(0.4, 2.5, bands)
    return HyperCube(data=data, wavelengths=wavelengths)


def make_library(wavelengths, names=("A", "B"), kinds=None, seed=3):
    rng = np.random.default_rng(seed)
    kinds = kinds or ["target"] * len(names)
    return SpectralLibrary(
        wavelengths=np.asarray(wavelengths),
        entries=tuple(
            LibraryEntry(n, k, 1.0 + rng.normal(size=len(wavelengths))) for n, k in zip(names, kinds)
        ),
    )


@pytest.fixture
def random_cube():
    return make_cube()


@pytest.fixture(scope="session")
def small_spec():
    """48x48x20 scene: two target materials, one confuser patch."""
    return SceneSpec(
        lines=48,
        samples=48,
        bands=20,
        background_endmembers=3,
        noise_sigma=0.01,
        variability_sigma=0.0,
        target_materials=["T1", "T2"],
        confuser_materials={"C1": "T1"},
        targets=[
            Placement(material="T1", center=(12, 12), width=3, height=3),
            Placement(material="T2", center=(12, 36), width=2, height=2),
            Placement(material="T1", center=(36, 36)),
        ],
        confusers=[Placement(material="C1", center=(36, 12), width=3, height=3)],
        seed=11,
    )


@pytest.fixture(scope="session")
def small_scene(small_spec):
    return generate_scene(small_spec)


@pytest.fixture
def scene_dir(tmp_path, small_scene):
    cube, library, truth = small_scene
    return write_scene(str(tmp_path / "scene"), cube, library, truth)
