"""
End-to-end tests for the harness: CLI exit codes, simgen -> run -> eval,
deterministic outputs, fairness enforcement and the comparison driver.
"""

import csv
import json
import logging

import pytest
import numpy as np
from pathlib import Path
from typing import Any, Dict

import sys

sys.path.insert(0, str(Path(__file__).parent.parent))

from baselines import naive_weights
from config import (
    ExperimentConfig,
    load_preset,
    load_scenario,
    resolve_scenario_path,
    shared_config_hash,
)
from drm import DrmModel, DrmSchedule, save_model
from errors import ConfigError
from evalsuite import gt_costmap
from gridfusion import OccupancyGrid, fuse_frame, read_costmap
from harness import (
    PipelineRunner,
    compare,
    evaluate_costmap,
    main,
    scenario_trials,
    simgen,
)
from logging_config import PipelineLogger
from scenegen import build_world, load_dataset


SMALL_PRESETS = """
[DEFAULT]
camera_width = 64
camera_height = 36
stem_channels = 1
encoder_channels = 2,3
work_width = 16
work_height = 12
epochs = 2

[gated]
mode = gated
"""


@pytest.fixture
def presets_path(tmp_path: Path) -> Path:
    path = tmp_path / "presets.ini"
    path.write_text(SMALL_PRESETS)
    return path


@pytest.fixture
def scenario_path(tmp_path: Path, corridor_config: Dict[str, Any]) -> Path:
    path = tmp_path / "corridor.json"
    path.write_text(json.dumps(corridor_config))
    return path


@pytest.fixture
def dataset_dir(tmp_path: Path, presets_path: Path, scenario_path: Path) -> Path:
    out = tmp_path / "data"
    simgen(scenario_path, load_preset(presets_path, "DEFAULT"), out, seed=3, severity="L2")
    return out


class TestExitCodes:
    """Tests for CLI error handling."""

    def test_argparse_error(self) -> None:
        assert main(["bogus"]) == 2

    def test_unknown_preset(self, tmp_path: Path, scenario_path: Path) -> None:
        code = main(["simgen", "--scenario", str(scenario_path), "--preset", "nonexistent",
                     "--out", str(tmp_path / "d")])
        assert code == 2

    def test_missing_scenario(self, tmp_path: Path) -> None:
        code = main(["simgen", "--scenario", str(tmp_path / "absent.json"), "--out", str(tmp_path / "d")])
        assert code == 2

    def test_invalid_frame_count(self, tmp_path: Path, scenario_path: Path, presets_path: Path) -> None:
        code = main(["simgen", "--config", str(presets_path), "--scenario", str(scenario_path),
                     "--frames", "0", "--out", str(tmp_path / "d")])
        assert code == 1

    def test_malformed_params(self, tmp_path: Path, dataset_dir: Path, presets_path: Path) -> None:
        code = main(["run", str(dataset_dir), "--config", str(presets_path), "--method", "naive",
                     "--params", "{bad", "--out", str(tmp_path / "r")])
        assert code == 1

    def test_drm_without_model(self, tmp_path: Path, dataset_dir: Path, presets_path: Path) -> None:
        code = main(["run", str(dataset_dir), "--config", str(presets_path), "--method", "drm_rgf",
                     "--out", str(tmp_path / "r")])
        assert code == 2

    def test_shared_key_in_params(self, tmp_path: Path, dataset_dir: Path, presets_path: Path) -> None:
        code = main(["run", str(dataset_dir), "--config", str(presets_path), "--method", "naive",
                     "--params", '{"t_on": 0.9}', "--out", str(tmp_path / "r")])
        assert code == 2


class TestPipeline:
    """Tests for simgen -> run -> eval."""

    def test_simgen_records_severity(self, dataset_dir: Path) -> None:
        ds = load_dataset(dataset_dir)
        assert len(ds) == 6
        assert ds.manifest["scenario"]["severity"] == "L2"
        assert ds.intrinsics.width == 64

    def test_run_writes_artifacts(self, tmp_path: Path, dataset_dir: Path, presets_path: Path) -> None:
        out = tmp_path / "run"
        code = main(["run", str(dataset_dir), "--config", str(presets_path),
                     "--method", "heuristic_rgf", "--dump-reliability", "--out", str(out)])
        assert code == 0
        for name in ("grid.csv", "costmap.pgm", "costmap_raw.pgm", "runtime.csv",
                     "runtime.json", "report.json", "reliability_000000.pgm"):
            assert (out / name).exists(), name
        report = json.loads((out / "report.json").read_text())
        assert report["method"] == "heuristic_rgf"
        assert report["frames"] == 6
        assert report["seed"] == 3
        assert "auprc" in report["sensor"]
        costmap = read_costmap(out / "costmap.pgm")
        assert costmap.spec == load_preset(presets_path, "DEFAULT").grid
        assert costmap.free.any() and costmap.unknown.any()

    def test_run_is_deterministic(self, tmp_path: Path, dataset_dir: Path, presets_path: Path) -> None:
        out = tmp_path / "run"
        args = ["run", str(dataset_dir), "--config", str(presets_path),
                "--method", "spatial_median", "--out", str(out)]
        assert main(args) == 0
        first = {n: (out / n).read_bytes() for n in ("report.json", "costmap.pgm", "grid.csv")}
        assert main(args) == 0
        for name, content in first.items():
            assert (out / name).read_bytes() == content, name

    def test_drm_run_with_model(self, tmp_path: Path, dataset_dir: Path, presets_path: Path) -> None:
        model_path = tmp_path / "m.bin"
        save_model(DrmModel.initialize(DrmSchedule(1, (2, 3)), seed=0, work_size=(16, 12)), model_path)
        out = tmp_path / "run"
        code = main(["run", str(dataset_dir), "--config", str(presets_path), "--method", "drm_rgf",
                     "--model", str(model_path), "--out", str(out)])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["sensor"]["f1"] is not None

    def test_train_writes_model_and_loss(self, tmp_path: Path, dataset_dir: Path, presets_path: Path) -> None:
        model_path = tmp_path / "models" / "m.bin"
        code = main(["train", str(dataset_dir), "--config", str(presets_path), "--out", str(model_path)])
        assert code == 0
        assert model_path.exists()
        lines = (tmp_path / "models" / "m.loss.csv").read_text().splitlines()
        assert lines[0] == "epoch,loss" and len(lines) == 4

    def test_soft_target_recorded_and_repeatable(
        self, tmp_path: Path, dataset_dir: Path, presets_path: Path
    ) -> None:
        paths = [tmp_path / "a.bin", tmp_path / "b.bin"]
        for path in paths:
            assert main(["train", str(dataset_dir), "--config", str(presets_path),
                         "--target", "soft", "--out", str(path)]) == 0
        assert paths[0].read_bytes() == paths[1].read_bytes()
        header = json.loads(paths[0].read_bytes().split(b"\n", 1)[0])
        assert header["target_mode"] == "soft"

    def test_eval_writes_tables(self, tmp_path: Path, dataset_dir: Path, presets_path: Path) -> None:
        runs = []
        for method in ("naive", "validity_range"):
            out = tmp_path / method
            assert main(["run", str(dataset_dir), "--config", str(presets_path),
                         "--method", method, "--out", str(out)]) == 0
            runs.append(str(out))
        report_dir = tmp_path / "eval"
        assert main(["eval", *runs, "--config", str(presets_path), "--out", str(report_dir)]) == 0
        with open(report_dir / "metrics.csv") as f:
            rows = list(csv.DictReader(f))
        metrics = {(r["method"], r["metric"]) for r in rows}
        assert ("naive", "FOR") in metrics and ("validity_range", "FSR") in metrics
        summary = json.loads((report_dir / "summary.json").read_text())
        assert all(entry["severity"] == "L2" for entry in summary)

    def test_eval_rejects_other_grid(self, tmp_path: Path, dataset_dir: Path, presets_path: Path) -> None:
        out = tmp_path / "run"
        assert main(["run", str(dataset_dir), "--config", str(presets_path),
                     "--method", "naive", "--out", str(out)]) == 0
        other = tmp_path / "other.ini"
        other.write_text("[DEFAULT]\nresolution = 0.1\n")
        assert main(["eval", str(out), "--config", str(other), "--out", str(tmp_path / "e")]) == 1


class TestRunner:
    """Tests for PipelineRunner construction."""

    def test_drm_requires_model(self, presets_path: Path) -> None:
        with pytest.raises(ConfigError):
            PipelineRunner("drm_rgf", load_preset(presets_path, "DEFAULT"))

    def test_unknown_method(self, presets_path: Path) -> None:
        with pytest.raises(ConfigError):
            PipelineRunner("magic", load_preset(presets_path, "DEFAULT"))

    def test_gated_mode_runs(self, dataset_dir: Path, presets_path: Path) -> None:
        preset = load_preset(presets_path, "gated")
        result = PipelineRunner("heuristic_rgf", preset).run(load_dataset(dataset_dir))
        assert result.frames == 6
        assert result.grid.p.min() >= 0.0 and result.grid.p.max() <= 1.0

    def test_run_is_a_fold_of_fuse_frame(self, dataset_dir: Path, presets_path: Path) -> None:
        preset = load_preset(presets_path, "DEFAULT")
        dataset = load_dataset(dataset_dir)
        result = PipelineRunner("naive", preset).run(dataset)
        grid = OccupancyGrid.empty(preset.grid)
        for i in range(len(dataset)):
            frame = dataset.read_frame(i)
            grid = fuse_frame(grid, frame.depth, naive_weights(frame.depth), frame.pose,
                              dataset.intrinsics, preset.fusion)
        np.testing.assert_array_equal(result.grid.p, grid.p)
        np.testing.assert_array_equal(result.grid.observed, grid.observed)

    def test_temporal_reject_warms_up(self, dataset_dir: Path, presets_path: Path) -> None:
        preset = load_preset(presets_path, "DEFAULT")
        result = PipelineRunner("temporal_reject", preset).run(load_dataset(dataset_dir))
        assert result.method_params == {"persistence": 3, "agreement_tol": 0.02}
        assert result.inflated.occupied.sum() >= result.costmap.occupied.sum()


class TestCompare:
    """Tests for the comparison driver."""

    def test_unfair_overrides_rejected(self, scenario_path: Path) -> None:
        with pytest.raises(ConfigError):
            ExperimentConfig(str(scenario_path), ("L2",), ("naive",), (0,),
                             method_overrides={"naive": {"forgetting": 0.5}})

    def test_small_matrix(
        self, tmp_path: Path, scenario_path: Path, presets_path: Path, caplog: pytest.LogCaptureFixture
    ) -> None:
        experiment = ExperimentConfig(
            scenario=str(scenario_path),
            severities=("L2",),
            methods=("naive", "heuristic_rgf"),
            seeds=(0, 1),
            presets_path=presets_path,
            out_dir=tmp_path / "out",
        )
        logger = logging.getLogger("harness_test")
        caplog.set_level(logging.INFO, logger="harness_test")
        summary_path = compare(experiment, PipelineLogger(logger))
        payload = json.loads(summary_path.read_text())
        assert payload["methods"] == ["naive", "heuristic_rgf"]
        assert len(payload["config_hash"]) == 64
        assert any("[CONFIG_HASH]" in r.message for r in caplog.records)

        out = tmp_path / "out"
        assert (out / "costmaps_L2.pgm").exists()
        with open(out / "comparison.csv") as f:
            rows = list(csv.DictReader(f))
        seeds = {r["seed"] for r in rows if r["metric"] == "FOR"}
        assert seeds == {"0", "1"}
        with open(out / "summary.csv") as f:
            table = list(csv.DictReader(f))
        assert {r["method"] for r in table} == {"naive", "heuristic_rgf"}
        assert all(r["config_hash"] == payload["config_hash"] for r in table)
        with open(out / "runtime.csv") as f:
            runtime = list(csv.DictReader(f))
        assert all(float(r["relative_overhead"]) == 0.0 for r in runtime if r["method"] == "naive")

    def test_cli_flags_override_experiment(
        self, tmp_path: Path, scenario_path: Path, presets_path: Path
    ) -> None:
        experiment = tmp_path / "exp.json"
        experiment.write_text(json.dumps({
            "scenario": str(scenario_path),
            "severities": ["L2"],
            "methods": ["naive"],
            "seeds": [0, 1, 2],
            "out": "unused",
        }))
        out = tmp_path / "cli"
        code = main([
            "compare", str(experiment), "--seed", "1", "--out", str(out), "--config", str(presets_path),
        ])
        assert code == 0
        assert not (tmp_path / "unused").exists()
        payload = json.loads((out / "summary.json").read_text())
        assert payload["config_hash"] == shared_config_hash(load_preset(presets_path, "DEFAULT"))
        with open(out / "comparison.csv") as f:
            assert {r["seed"] for r in csv.DictReader(f)} == {"1"}


@pytest.mark.slow
def test_reliability_gating_suppresses_partition_phantoms(tmp_path: Path) -> None:
    """Wall glare behind a glass partition marks phantoms only without gating."""
    presets = tmp_path / "presets.ini"
    presets.write_text("[DEFAULT]\ncamera_width = 160\ncamera_height = 120\n")
    preset = load_preset(presets, "DEFAULT")
    path = resolve_scenario_path("glass_partition")
    scenario = load_scenario(path)
    simgen(path, preset, tmp_path / "data", seed=0, severity="L2")
    dataset = load_dataset(tmp_path / "data")

    world = build_world(scenario).with_severity("L2")
    gt = gt_costmap(world, preset.grid, preset.costmap.inflation_radius)
    trials = scenario_trials(scenario, preset.grid)
    rates = {}
    for method in ("naive", "heuristic_rgf"):
        result = PipelineRunner(method, preset).run(dataset)
        metrics, _ = evaluate_costmap(result.inflated, gt, trials)
        rates[method] = metrics["FOR"]
    assert rates["naive"] > rates["heuristic_rgf"]
    assert np.isfinite(rates["heuristic_rgf"])


@pytest.mark.slow
def test_glass_reflections_block_the_corridor_only_without_gating(tmp_path: Path) -> None:
    """Divider reflections wall off the goal lane for naive fusion at L2."""
    presets = tmp_path / "presets.ini"
    presets.write_text("[DEFAULT]\ncamera_width = 160\ncamera_height = 120\n")
    preset = load_preset(presets, "DEFAULT")
    path = resolve_scenario_path("reflective_corridor")
    scenario = load_scenario(path)
    world = build_world(scenario).with_severity("L2")
    gt = gt_costmap(world, preset.grid, preset.costmap.inflation_radius)
    trials = scenario_trials(scenario, preset.grid)

    methods = ("naive", "temporal_reject", "heuristic_rgf")
    rates: Dict[str, list] = {m: [] for m in methods}
    outcomes: Dict[str, list] = {m: [] for m in methods}
    for seed in (0, 1, 2):
        simgen(path, preset, tmp_path / f"data{seed}", seed=seed, severity="L2")
        dataset = load_dataset(tmp_path / f"data{seed}")
        for method in methods:
            result = PipelineRunner(method, preset).run(dataset)
            metrics, results = evaluate_costmap(result.inflated, gt, trials)
            rates[method].append(metrics["FOR"])
            outcomes[method].extend(results)

    assert len(outcomes["heuristic_rgf"]) == 3
    assert sum(not r.success for r in outcomes["naive"]) >= 2
    assert all(r.success and r.plr < 1.15 for r in outcomes["heuristic_rgf"])
    assert np.mean(rates["naive"]) > np.mean(rates["temporal_reject"])
    assert np.mean(rates["naive"]) > np.mean(rates["heuristic_rgf"])


@pytest.mark.slow
def test_reliability_gating_suppresses_sensor_artifacts(tmp_path: Path) -> None:
    """Gated measurements carry far fewer holes, spikes and depth error than the raw stream."""
    presets = tmp_path / "presets.ini"
    presets.write_text("[DEFAULT]\ncamera_width = 160\ncamera_height = 120\n")
    preset = load_preset(presets, "DEFAULT")
    path = tmp_path / "glossy_room.json"
    path.write_text(json.dumps({
        "name": "glossy_room",
        "room": {"min": [-2.0, -2.0], "max": [2.0, 2.0]},
        "glare_patches": [
            {"min": [-0.5, -2.0], "max": [2.0, 2.0], "severity": "L2", "surface": "floor"}
        ],
        "camera_height": 0.5,
        "trajectory": {"start": [-1.5, 0.0], "end": [-1.0, 0.0], "frames": 8},
        "trials": [{"start": [-1.5, 0.0], "goal": [1.0, 0.0]}],
    }))
    for seed in (0, 1):
        simgen(path, preset, tmp_path / f"data{seed}", seed=seed, severity="L2")
        sensor = PipelineRunner("heuristic_rgf", preset).run(load_dataset(tmp_path / f"data{seed}")).sensor
        assert sensor["raw_hole_rate"] > 0.05
        assert sensor["gated_hole_rate"] * 5 <= sensor["raw_hole_rate"]
        assert sensor["gated_spike_rate"] * 5 <= sensor["raw_spike_rate"]
        assert sensor["gated_rmse"] * 3 <= sensor["raw_rmse"]
