"""
Shared pytest fixtures for the costmap pipeline tests.

Provides reusable test components following NumPy-style documentation.
"""

import pytest
import numpy as np
from typing import Any, Dict

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

from drm import DrmSchedule
from gridfusion import FusionParams, GridSpec, OccupancyGrid
from scenegen import (
    CameraIntrinsics,
    CorruptionParams,
    DepthFrame,
    Pose,
    World,
    build_world,
)


def pytest_configure(config: pytest.Config) -> None:
    config.addinivalue_line("markers", "slow: end-to-end runs over generated sequences")


@pytest.fixture
def corridor_config() -> Dict[str, Any]:
    """
    Short corridor with a floor glare patch.

    Returns
    -------
    Dict[str, Any]
        Scenario mapping accepted by ``build_world``.
    """
    return {
        "name": "test_corridor",
        "corridor": {"min": [-3.0, -1.0], "max": [3.0, 1.0]},
        "glare_patches": [
            {"min": [-1.0, -1.0], "max": [1.0, 1.0], "severity": "L2", "surface": "floor"}
        ],
        "camera_height": 0.5,
        "trajectory": {"start": [-2.5, 0.0], "end": [-1.5, 0.0], "frames": 6, "dwell": 3},
        "trials": [{"start": [-2.4, 0.0], "goal": [-1.0, 0.2]}],
    }


@pytest.fixture
def corridor_world(corridor_config: Dict[str, Any]) -> World:
    """World built from ``corridor_config``."""
    return build_world(corridor_config)


@pytest.fixture
def wall_world() -> World:
    """
    Single wall 2 m ahead of the origin camera, inside a 10 m room.

    Returns
    -------
    World
        Room (-5, -5)..(5, 5) with a wall along x = 2 for |y| <= 2.
    """
    return build_world({
        "name": "wall",
        "room": {"min": [-5.0, -5.0], "max": [5.0, 5.0]},
        "walls": [[2.0, -2.0, 2.0, 2.0]],
    })


@pytest.fixture
def small_camera() -> CameraIntrinsics:
    """D435 intrinsics resampled to 64x36 for fast rendering."""
    return CameraIntrinsics.d435().scaled(64, 36)


@pytest.fixture
def origin_pose() -> Pose:
    """Camera at the world origin facing +x, 0.5 m above the floor."""
    return Pose(0.0, 0.0, 0.0, 0.5)


@pytest.fixture
def coarse_spec() -> GridSpec:
    """
    Coarse 10 m grid with unit-friendly cell edges.

    Returns
    -------
    GridSpec
        0.5 m cells, origin (0, 0), 20 x 20 cells.
    """
    return GridSpec(resolution=0.5, extent=10.0, origin_x=0.0, origin_y=0.0)


@pytest.fixture
def default_spec() -> GridSpec:
    """Default 12 m grid with 0.05 m cells centered on the origin."""
    return GridSpec()


@pytest.fixture
def empty_grid(default_spec: GridSpec) -> OccupancyGrid:
    return OccupancyGrid.empty(default_spec)


@pytest.fixture
def fusion_params() -> FusionParams:
    return FusionParams()


@pytest.fixture
def tiny_schedule() -> DrmSchedule:
    """Two-block schedule small enough for finite-difference checks."""
    return DrmSchedule(stem_channels=1, encoder_channels=(2, 3))


@pytest.fixture
def noiseless_params() -> CorruptionParams:
    """Corruption model that never corrupts and adds no noise."""
    return CorruptionParams(
        hole_prob=(0.0, 0.0, 0.0),
        spike_prob=(0.0, 0.0, 0.0),
        noise_coeff=0.0,
    )


@pytest.fixture
def flat_depth() -> DepthFrame:
    """8x10 frame at a constant 2 m."""
    return DepthFrame.from_values(np.full((8, 10), 2.0))


@pytest.fixture
def scenario_dir() -> Path:
    """Directory holding the bundled scenarios."""
    return Path(__file__).parent.parent / "scenarios"
