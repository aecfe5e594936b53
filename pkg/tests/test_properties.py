"""
Property-based tests using Hypothesis.

Tests invariants that should hold for all valid inputs.
"""

import math
import tempfile

import pytest
import numpy as np
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

from baselines import spatial_median
from config import DEFAULT_PRESETS, load_preset
from drm import DrmModel, DrmSchedule, network_forward
from gridfusion import (
    FREE,
    OCCUPIED,
    UNKNOWN,
    Costmap,
    CostmapParams,
    FusionParams,
    GridSpec,
    OccupancyGrid,
    backproject,
    backproject_frame,
    binarize,
    fuse_frame,
    inflate,
    point_to_cell,
    update_cell,
)
from harness import PipelineRunner
from reliability import ReliabilityMap, ReliabilityTarget
from evalsuite import pr_metrics
from scenegen import (
    Bounds,
    CameraIntrinsics,
    CorruptionParams,
    DepthFrame,
    Pose,
    Wall,
    World,
    apply_corruption,
    build_world,
    cast_rays,
    generate_sequence,
    load_dataset,
    straight_trajectory,
)


SMALL_SPEC = GridSpec(resolution=0.5, extent=5.0, origin_x=0.0, origin_y=0.0)
SMALL_CAMERA = CameraIntrinsics.d435().scaled(32, 24)

unit = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)
seeds = st.integers(min_value=0, max_value=2**16)


class TestOccupancyProperties:
    """Invariants of the per-cell update and binarization."""

    @given(
        p=unit,
        contributions=st.lists(st.tuples(unit, st.sampled_from([0.0, 1.0])), max_size=8),
        forgetting=st.floats(min_value=0.0, max_value=0.99),
    )
    def test_update_stays_in_unit_interval(self, p, contributions, forgetting) -> None:
        assert 0.0 <= update_cell(p, contributions, forgetting) <= 1.0

    @given(
        p=arrays(np.float64, SMALL_SPEC.shape, elements=unit),
        observed=arrays(np.bool_, SMALL_SPEC.shape),
    )
    def test_binarize_respects_thresholds(self, p, observed) -> None:
        grid = OccupancyGrid(SMALL_SPEC, p, observed, np.zeros(SMALL_SPEC.shape, dtype=np.int64))
        params = CostmapParams()
        state = binarize(grid, None, params).state
        assert np.all(state[observed & (p >= params.t_on)] == OCCUPIED)
        assert np.all(state[observed & (p <= params.t_off)] == FREE)
        assert np.all(state[~observed & (p < params.t_on)] == UNKNOWN)

    @given(
        lethal=arrays(np.bool_, SMALL_SPEC.shape),
        radius=st.floats(min_value=0.0, max_value=1.5),
    )
    def test_inflation_is_idempotent(self, lethal, radius) -> None:
        costmap = Costmap(SMALL_SPEC, np.where(lethal, OCCUPIED, FREE).astype(np.int8))
        once = inflate(costmap, radius)
        twice = inflate(once, radius)
        np.testing.assert_array_equal(once.state, twice.state)
        assert np.all(once.occupied[lethal])


class TestGridProperties:
    """Invariants of world-to-cell projection."""

    @given(
        i=st.integers(min_value=0, max_value=9),
        j=st.integers(min_value=0, max_value=9),
        fx=st.floats(min_value=0.0, max_value=0.99),
        fy=st.floats(min_value=0.0, max_value=0.99),
    )
    def test_point_lands_in_containing_cell(self, i, j, fx, fy) -> None:
        x = (i + fx) * SMALL_SPEC.resolution
        y = (j + fy) * SMALL_SPEC.resolution
        assert point_to_cell((x, y, 0.5), SMALL_SPEC) == (i, j)

    @given(z=st.floats(min_value=2.01, max_value=10.0))
    def test_points_above_band_rejected(self, z) -> None:
        assert point_to_cell((1.0, 1.0, z), SMALL_SPEC) is None


class TestDepthProperties:
    """Invariants of the corruption model and the median filter."""

    @given(
        depth=arrays(np.float64, (6, 7), elements=st.floats(min_value=0.5, max_value=8.0)),
        holes=arrays(np.bool_, (6, 7)),
    )
    def test_median_outputs_existing_samples(self, depth, holes) -> None:
        frame = DepthFrame.from_values(np.where(holes, 0.0, depth))
        out = spatial_median(frame)
        assert np.isin(out.values[out.validity], frame.values[frame.validity]).all()

    @settings(max_examples=30)
    @given(
        seed=st.integers(min_value=0, max_value=2**16),
        depth=st.floats(min_value=1.0, max_value=5.0),
    )
    def test_holes_grow_with_severity(self, seed, depth) -> None:
        clean = DepthFrame.from_values(np.full((12, 16), depth))
        params = CorruptionParams(seed=seed)
        invalid = [
            ~apply_corruption(clean, np.full(clean.shape, level), params).validity
            for level in (0, 1, 2)
        ]
        assert np.all(invalid[1][invalid[0]])
        assert np.all(invalid[2][invalid[1]])


class TestPrProperties:
    """Invariants of the precision-recall summary."""

    @given(
        scores=arrays(np.float64, (1, 12), elements=unit),
        labels=arrays(np.bool_, (1, 12)),
    )
    def test_auprc_bounds(self, scores, labels) -> None:
        result = pr_metrics(ReliabilityMap(scores), ReliabilityTarget(labels.astype(np.float64), "binary"))
        assert 0.0 <= result.f1 <= 1.0
        if 0 < labels.sum() < labels.size:
            assert result.auprc is not None
            assert 0.0 <= result.auprc <= 1.0 + 1e-12
        else:
            assert result.auprc is None


def _random_frames(seed: int, count: int):
    """Depth frames with holes, weights and poses near the grid center."""
    rng = np.random.default_rng(seed)
    frames = []
    for _ in range(count):
        values = rng.uniform(0.3, 6.0, SMALL_CAMERA.height * SMALL_CAMERA.width)
        values[rng.random(values.size) < 0.2] = 0.0
        depth = DepthFrame.from_values(values.reshape(SMALL_CAMERA.height, SMALL_CAMERA.width))
        weights = ReliabilityMap(rng.random(depth.shape) * depth.validity)
        pose = Pose(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-math.pi, math.pi))
        frames.append((depth, weights, pose))
    return frames


def _fuse_all(frames, params: FusionParams) -> OccupancyGrid:
    grid = OccupancyGrid.empty(GridSpec())
    for depth, weights, pose in frames:
        grid = fuse_frame(grid, depth, weights, pose, SMALL_CAMERA, params)
    return grid


class TestFusionProperties:
    """Invariants of the grid update over frame sequences."""

    @settings(max_examples=25, deadline=None)
    @given(seed=seeds, count=st.integers(min_value=1, max_value=4))
    def test_gating_with_one_confirmation_equals_weighted(self, seed, count) -> None:
        frames = _random_frames(seed, count)
        weighted = _fuse_all(frames, FusionParams(tau_r=0.0, mode="weighted"))
        gated = _fuse_all(frames, FusionParams(tau_r=0.0, mode="gated", confirmations=1))
        np.testing.assert_array_equal(gated.p, weighted.p)
        np.testing.assert_array_equal(gated.observed, weighted.observed)
        np.testing.assert_array_equal(gated.streak, weighted.streak)

    @settings(max_examples=25, deadline=None)
    @given(seed=seeds, count=st.integers(min_value=1, max_value=4))
    def test_same_frame_list_gives_identical_grid(self, seed, count) -> None:
        frames = _random_frames(seed, count)
        first = _fuse_all(frames, FusionParams())
        second = _fuse_all(frames, FusionParams())
        assert first.p.tobytes() == second.p.tobytes()
        np.testing.assert_array_equal(first.observed, second.observed)
        a = inflate(binarize(first))
        b = inflate(binarize(second))
        np.testing.assert_array_equal(a.state, b.state)

    @given(
        p0=arrays(np.float64, SMALL_SPEC.shape, elements=unit),
        dead_band=st.lists(
            arrays(
                np.float64,
                SMALL_SPEC.shape,
                elements=st.floats(min_value=0.5, max_value=0.7, exclude_min=True, exclude_max=True),
            ),
            min_size=1,
            max_size=6,
        ),
    )
    def test_dead_band_oscillation_never_flips_state(self, p0, dead_band) -> None:
        observed = np.ones(SMALL_SPEC.shape, dtype=bool)
        streak = np.zeros(SMALL_SPEC.shape, dtype=np.int64)
        costmap = binarize(OccupancyGrid(SMALL_SPEC, p0, observed, streak))
        settled = costmap.state.copy()
        for p in dead_band:
            costmap = binarize(OccupancyGrid(SMALL_SPEC, p, observed, streak), costmap)
            np.testing.assert_array_equal(costmap.state, settled)


PIPELINE_SCENE = {
    "name": "rerun_room",
    "corridor": {"min": [-3.0, -1.0], "max": [3.0, 1.0]},
    "glare_patches": [{"min": [-1.0, -1.0], "max": [1.0, 1.0], "severity": "L2", "surface": "floor"}],
    "camera_height": 0.5,
    "trials": [{"start": [-2.4, 0.0], "goal": [-1.0, 0.2]}],
}


class TestPipelineDeterminism:
    """Seeded reruns reproduce the whole costmap."""

    @settings(max_examples=3, deadline=None)
    @given(seed=seeds)
    def test_seeded_rerun_reproduces_costmap(self, seed) -> None:
        world = build_world(PIPELINE_SCENE)
        poses = straight_trajectory((-2.5, 0.0), (-1.5, 0.0), 4)
        preset = load_preset(DEFAULT_PRESETS, "DEFAULT")
        results = []
        with tempfile.TemporaryDirectory() as tmp:
            for run in ("a", "b"):
                out = Path(tmp) / run
                generate_sequence(world, poses, SMALL_CAMERA, CorruptionParams(seed=seed), out)
                runner = PipelineRunner("heuristic_rgf", preset)
                results.append(runner.run(load_dataset(out)))
        first, second = results
        assert first.grid.p.tobytes() == second.grid.p.tobytes()
        np.testing.assert_array_equal(first.costmap.state, second.costmap.state)
        np.testing.assert_array_equal(first.inflated.state, second.inflated.state)


class TestProjectionProperties:
    """Renderer and back-projection against independent geometry."""

    @settings(max_examples=40, deadline=None)
    @given(
        yaw=st.floats(min_value=-math.pi, max_value=math.pi),
        height=st.floats(min_value=0.3, max_value=1.5),
        distance=st.floats(min_value=1.5, max_value=5.0),
        bearing=st.floats(min_value=-0.6, max_value=0.6),
        angle=st.floats(min_value=0.0, max_value=math.pi),
        half_length=st.floats(min_value=0.5, max_value=2.0),
    )
    def test_oblique_wall_depth_matches_intersection(
        self, yaw, height, distance, bearing, angle, half_length
    ) -> None:
        assume(abs(math.sin(angle - yaw - bearing)) > 0.3)
        cx = distance * math.cos(yaw + bearing)
        cy = distance * math.sin(yaw + bearing)
        ex = half_length * math.cos(angle)
        ey = half_length * math.sin(angle)
        wall = Wall(cx - ex, cy - ey, cx + ex, cy + ey, height=2.5)
        world = World(Bounds(-10.0, -10.0, 10.0, 10.0), walls=(wall,))
        pose = Pose(0.0, 0.0, yaw, z=height)
        hits = cast_rays(world, pose, SMALL_CAMERA)

        cam = SMALL_CAMERA
        uu, vv = np.meshgrid(np.arange(cam.width, dtype=float), np.arange(cam.height, dtype=float))
        a = (uu - cam.cx) / cam.fx
        b = (vv - cam.cy) / cam.fy
        # forward + a * right + b * down, per unit optical depth
        dx = math.cos(pose.yaw) + a * math.sin(pose.yaw)
        dy = math.sin(pose.yaw) - a * math.cos(pose.yaw)
        dz = -b
        seg_x, seg_y = wall.x1 - wall.x0, wall.y1 - wall.y0
        det = -dx * seg_y + seg_x * dy
        ok = np.abs(det) > 1e-3
        lhs = np.zeros(dx.shape + (2, 2))
        lhs[..., 0, 0], lhs[..., 0, 1] = dx, -seg_x
        lhs[..., 1, 0], lhs[..., 1, 1] = dy, -seg_y
        rhs = np.zeros(dx.shape + (2,))
        rhs[..., 0], rhs[..., 1] = wall.x0 - pose.x, wall.y0 - pose.y
        sol = np.linalg.solve(lhs[ok], rhs[ok][..., None])[..., 0]
        t = np.full(dx.shape, np.inf)
        s = np.full(dx.shape, -1.0)
        t[ok], s[ok] = sol[:, 0], sol[:, 1]
        z = pose.z + np.where(np.isfinite(t), t, 0.0) * dz
        on_wall = ok & (t > 1e-6) & (s >= 0.02) & (s <= 0.98) & (z >= 0.02) & (z <= 2.48)
        assert on_wall.any()
        assert np.abs(hits.depth[on_wall] - t[on_wall]).max() < 1e-6

    @given(
        u=st.floats(min_value=0.0, max_value=SMALL_CAMERA.width - 1),
        v=st.floats(min_value=0.0, max_value=SMALL_CAMERA.height - 1),
        depth=st.floats(min_value=0.17, max_value=10.0),
        x=st.floats(min_value=-5.0, max_value=5.0),
        y=st.floats(min_value=-5.0, max_value=5.0),
        yaw=st.floats(min_value=-math.pi, max_value=math.pi),
        z=st.floats(min_value=0.1, max_value=2.0),
    )
    def test_backproject_matches_homogeneous_transform(self, u, v, depth, x, y, yaw, z) -> None:
        pose = Pose(x, y, yaw, z)
        T = pose.matrix()
        np.testing.assert_allclose(T[:3, :3].T @ T[:3, :3], np.eye(3), atol=1e-12)
        assert np.linalg.det(T[:3, :3]) == pytest.approx(1.0)
        cam = SMALL_CAMERA
        point_cam = np.array([
            (u - cam.cx) * depth / cam.fx,
            (v - cam.cy) * depth / cam.fy,
            depth,
            1.0,
        ])
        expected = (T @ point_cam)[:3]
        np.testing.assert_allclose(backproject((u, v), depth, cam, pose), expected, atol=1e-9)

        iu, iv = int(u), int(v)
        values = np.zeros((cam.height, cam.width))
        values[iv, iu] = depth
        mask = values > 0
        frame_point = backproject_frame(DepthFrame.from_values(values), cam, pose, mask)[0]
        np.testing.assert_allclose(
            frame_point, backproject((float(iu), float(iv)), depth, cam, pose), atol=1e-9
        )


class TestReliabilityProperties:
    """Invariants of the reliability network and its scoring."""

    @settings(max_examples=20, deadline=None)
    @given(seed=seeds)
    def test_encoder_output_follows_input_shift(self, seed) -> None:
        # two stride-2 blocks: a 4-pixel shift moves the bottleneck by one column
        model = DrmModel.initialize(DrmSchedule(stem_channels=2, encoder_channels=(3, 4)), seed=seed)
        x = np.random.default_rng(seed).random((1, 5, 12, 36))
        _, left = network_forward(model, x[..., :32])
        _, right = network_forward(model, x[..., 4:])
        np.testing.assert_allclose(
            right.skips[-1][..., 1:6], left.skips[-1][..., 2:7], rtol=1e-10, atol=1e-12
        )

    @given(
        levels=arrays(np.int64, (1, 12), elements=st.integers(min_value=0, max_value=20)),
        labels=arrays(np.bool_, (1, 12)),
        power=st.floats(min_value=0.25, max_value=4.0),
    )
    def test_auprc_ignores_monotone_rescoring(self, levels, labels, power) -> None:
        assume(0 < labels.sum() < labels.size)
        target = ReliabilityTarget(labels.astype(np.float64), "binary")
        scores = levels / 20.0
        base = pr_metrics(ReliabilityMap(scores), target).auprc
        for rescored in (scores ** power, 0.25 + 0.5 * scores, np.sqrt(scores)):
            assert pr_metrics(ReliabilityMap(rescored), target).auprc == pytest.approx(base, abs=1e-12)
