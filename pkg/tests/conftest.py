"""Shared fixtures: small camera, procedural models, ready-made scenes."""

import numpy as np
import pytest

from votepose import (
    CameraIntrinsics,
    NoiseConfig,
    VotingConfig,
    fps_select,
    make_blob_model,
    make_cube_model,
    synth_scene,
)


@pytest.fixture(scope="session")
def small_camera():
    # 320x240 keeps voting fast; fov matches a typical desktop camera
    return CameraIntrinsics(280.0, 280.0, 160.0, 120.0, 320, 240)


@pytest.fixture(scope="session")
def cube():
    return make_cube_model()


@pytest.fixture(scope="session")
def blob():
    return make_blob_model(seed=1, n_points=2000, radius=0.5)


@pytest.fixture(scope="session")
def cube_kps(cube):
    return fps_select(cube, 8)


@pytest.fixture(scope="session")
def clean_scene(cube, cube_kps, small_camera):
    """One noiseless cube scene reused by read-only tests."""
    return synth_scene(cube, cube_kps, small_camera, seed=42)


@pytest.fixture(scope="session")
def noisy_scene(cube, cube_kps, small_camera):
    return synth_scene(
        cube, cube_kps, small_camera, noise=NoiseConfig(0.05, 0.1), occlusion_frac=0.3, seed=43
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


@pytest.fixture()
def make_spd2():
    """Factory for random 2x2 SPD matrices, bounded away from singular."""

    def _make(rng, scale=1.0):
        A = rng.normal(size=(2, 2))
        return scale * (A @ A.T + 0.2 * np.eye(2))

    return _make


@pytest.fixture(scope="session")
def default_vote_cfg():
    return VotingConfig(seed=7)
