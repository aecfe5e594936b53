#!/usr/bin/env python3
"""
Glare-resilient costmap harness.

Ties the pipeline together: synthesize glare-corrupted sequences, train
the reliability network, run a method frame by frame into a costmap,
evaluate costmaps against geometry-derived ground truth, and run the full
method x severity x seed comparison.

Usage:
    python harness.py simgen --scenario reflective_corridor --severity L2 --seed 7 --out data/l2
    python harness.py train data/l2 --out models/drm.bin
    python harness.py run data/l2 --method drm_rgf --model models/drm.bin --out runs/drm
    python harness.py eval runs/drm --out eval/
    python harness.py compare experiment.json
"""

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from baselines import (
    DEFAULT_MEDIAN_WINDOW,
    DEFAULT_PERSISTENCE,
    DEFAULT_TRUSTED_RANGE,
    BaselineKind,
    TemporalRejector,
    naive_weights,
    preprocess,
)
from config import (
    DEFAULT_PRESETS,
    VALID_METHODS,
    ExperimentConfig,
    PipelinePreset,
    corruption_for_scenario,
    load_experiment,
    load_preset,
    load_scenario,
    merge_cli_with_preset,
    resolve_scenario_path,
    shared_config_hash,
    shared_parameters,
    validate_method_overrides,
    worker_count,
)
from drm import (
    DrmModel,
    build_training_set,
    drm_forward,
    drm_train,
    load_model,
    save_model,
    write_loss_csv,
)
from errors import ConfigError, DomainError
from evalsuite import (
    GroundTruthCostmap,
    TrialResult,
    aggregate_rows,
    for_metric,
    fsr_metric,
    gated_sensor_metrics,
    gt_costmap,
    path_metrics,
    pr_metrics,
    sensor_metrics,
    trial_outcome,
    world_to_cell,
)
from gridfusion import (
    Costmap,
    OccupancyGrid,
    binarize,
    costmap_to_pgm,
    fuse_frame_with_stats,
    inflate,
    read_costmap,
    write_costmap,
    write_grid_csv,
)
from logging_config import (
    FusionFrameEvent,
    PipelineLogger,
    TrialEvent,
    configure_pipeline_logging,
)
from netpbm import write_netpbm
from reliability import (
    ReliabilityMap,
    binary_target,
    heuristic_reliability,
    low_reliability_fraction,
    temporal_difference,
)
from scenegen import (
    SEVERITY_LEVELS,
    Dataset,
    DepthFrame,
    FrameData,
    build_world,
    generate_sequence,
    intrinsics_from_config,
    load_dataset,
    trajectory_from_config,
)


RELIABILITY_METHODS = ("drm_rgf", "heuristic_rgf")


# ============================================================================
# Pipelines
# ============================================================================


@dataclass
class RunResult:
    """Outcome of running one method over one dataset."""

    method: str
    grid: OccupancyGrid
    costmap: Costmap
    inflated: Costmap
    config_hash: str
    method_params: Dict[str, Any]
    frames: int
    degraded_frames: List[int]
    runtime: List[Dict[str, float]]
    sensor: Dict[str, Optional[float]]
    shared: Dict[str, Any] = field(default_factory=dict)
    artifacts: Dict[str, str] = field(default_factory=dict)

    def runtime_summary(self) -> Dict[str, float]:
        if not self.runtime:
            return {"reliability_ms": 0.0, "update_ms": 0.0, "total_ms": 0.0, "throughput_fps": 0.0}
        rel = float(np.mean([r["reliability_ms"] for r in self.runtime]))
        upd = float(np.mean([r["update_ms"] for r in self.runtime]))
        tot = float(np.mean([r["total_ms"] for r in self.runtime]))
        return {
            "reliability_ms": rel,
            "update_ms": upd,
            "total_ms": tot,
            "throughput_fps": 1000.0 / tot if tot > 0 else 0.0,
        }


def default_method_params(method: str) -> Dict[str, Any]:
    if method == "validity_range":
        return {"trusted_min": DEFAULT_TRUSTED_RANGE[0], "trusted_max": DEFAULT_TRUSTED_RANGE[1]}
    if method == "spatial_median":
        return {"window": DEFAULT_MEDIAN_WINDOW}
    if method == "temporal_reject":
        return {"persistence": DEFAULT_PERSISTENCE, "agreement_tol": 0.02}
    return {}


class PipelineRunner:
    """
    Per-frame reliability estimation and fusion for one method.

    Parameters
    ----------
    method : str
        One of drm_rgf, heuristic_rgf, naive, validity_range,
        spatial_median, temporal_reject.
    preset : PipelinePreset
        Shared grid/fusion/costmap parameters.
    model : Optional[DrmModel]
        Required for drm_rgf.
    method_params : Optional[Mapping[str, Any]]
        Non-shared knobs of the method.
    logger : Optional[PipelineLogger]
        Event sink.
    """

    def __init__(
        self,
        method: str,
        preset: PipelinePreset,
        model: Optional[DrmModel] = None,
        method_params: Optional[Mapping[str, Any]] = None,
        logger: Optional[PipelineLogger] = None,
    ) -> None:
        if method not in VALID_METHODS:
            raise ConfigError("method", f"unknown method {method!r}; choose from {VALID_METHODS}")
        if method == "drm_rgf" and model is None:
            raise ConfigError("model", "drm_rgf requires a trained model (--model)")
        overrides = dict(method_params or {})
        validate_method_overrides({method: overrides})
        self.method = method
        self.preset = preset
        self.model = model
        self.params = {**default_method_params(method), **overrides}
        self.logger = logger or PipelineLogger()
        self._rejector: Optional[TemporalRejector] = None

    def reset(self) -> None:
        self._rejector = None
        if self.method == "temporal_reject":
            self._rejector = TemporalRejector(
                persistence=int(self.params["persistence"]),
                agreement_tol=float(self.params["agreement_tol"]),
            )

    def estimate(self, frame: FrameData, prev_depth: Optional[DepthFrame]) -> Tuple[DepthFrame, ReliabilityMap]:
        """Depth handed to fusion and its per-pixel weights."""
        if self.method == "drm_rgf":
            assert self.model is not None
            diff = temporal_difference(frame.depth, prev_depth)
            return frame.depth, drm_forward(self.model, frame.rgb, frame.depth, diff)
        if self.method == "heuristic_rgf":
            return frame.depth, heuristic_reliability(frame.rgb, frame.depth, prev_depth)
        kind = BaselineKind(self.method)
        depth = preprocess(
            kind,
            frame.depth,
            rejector=self._rejector,
            trusted_range=(float(self.params.get("trusted_min", DEFAULT_TRUSTED_RANGE[0])),
                           float(self.params.get("trusted_max", DEFAULT_TRUSTED_RANGE[1]))),
            window=int(self.params.get("window", DEFAULT_MEDIAN_WINDOW)),
        )
        return depth, naive_weights(depth)

    def run(
        self,
        dataset: Dataset,
        out_dir: Optional[Path] = None,
        dump_reliability: bool = False,
    ) -> RunResult:
        """
        Fold every frame of ``dataset`` into a grid and binarize it.

        Writes grid CSV, costmap PGM, runtime CSV and report JSON to
        ``out_dir`` when given.
        """
        self.reset()
        preset = self.preset
        intrinsics = dataset.intrinsics
        grid = OccupancyGrid.empty(preset.grid)
        costmap: Optional[Costmap] = None
        prev_depth: Optional[DepthFrame] = None
        degraded: List[int] = []
        runtime: List[Dict[str, float]] = []
        raw_rows: List[Dict[str, float]] = []
        gated_rows: List[Dict[str, float]] = []
        pr_rows: List[Dict[str, float]] = []
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)

        for i in range(len(dataset)):
            frame = dataset.read_frame(i)
            started = time.perf_counter()
            depth, reliability = self.estimate(frame, prev_depth)
            reliability_ms = (time.perf_counter() - started) * 1000.0
            grid, stats = fuse_frame_with_stats(
                grid, depth, reliability, frame.pose, intrinsics, preset.fusion
            )
            costmap = binarize(grid, costmap, preset.costmap)
            total_ms = (time.perf_counter() - started) * 1000.0

            low = low_reliability_fraction(reliability, depth, preset.fusion.tau_r)
            if self.method in RELIABILITY_METHODS and low > preset.degraded_fraction:
                degraded.append(i)
                self.logger.log_degraded_sensing(i, low, preset.degraded_fraction)
            self.logger.log_frame_fused(FusionFrameEvent(
                frame_index=i,
                contributing_pixels=stats.contributing_pixels,
                touched_cells=stats.touched_cells,
                low_reliability_fraction=low,
                reliability_ms=reliability_ms,
                update_ms=stats.update_ms,
            ))
            runtime.append({
                "frame": i,
                "reliability_ms": reliability_ms,
                "update_ms": stats.update_ms,
                "total_ms": total_ms,
            })

            raw_rows.append(asdict(sensor_metrics(frame.depth, frame.clean)))
            gated_rows.append(asdict(gated_sensor_metrics(
                depth, frame.clean, reliability, preset.fusion.tau_r
            )))
            if self.method in RELIABILITY_METHODS:
                pr = pr_metrics(reliability, binary_target(frame.depth, frame.clean), preset.fusion.tau_r)
                pr_rows.append({"auprc": pr.auprc, "f1": pr.f1})
            if dump_reliability and out_dir is not None:
                img = np.rint(reliability.values * 255.0).astype(np.uint8)
                write_netpbm(out_dir / f"reliability_{i:06d}.pgm", img, 255)
            prev_depth = frame.depth

        if costmap is None:
            costmap = binarize(grid, None, preset.costmap)
        inflated = inflate(costmap, preset.costmap.inflation_radius)
        result = RunResult(
            method=self.method,
            grid=grid,
            costmap=costmap,
            inflated=inflated,
            config_hash=shared_config_hash(preset),
            method_params=dict(self.params),
            frames=len(dataset),
            degraded_frames=degraded,
            runtime=runtime,
            sensor=_mean_sensor(raw_rows, gated_rows, pr_rows),
            shared=shared_parameters(preset),
        )
        if out_dir is not None:
            write_run_artifacts(result, dataset, out_dir)
        return result


def _mean_of(rows: Sequence[Mapping[str, Any]], key: str) -> Optional[float]:
    vals = [r[key] for r in rows if r.get(key) is not None and np.isfinite(r[key])]
    return float(np.mean(vals)) if vals else None


def _mean_sensor(
    raw: Sequence[Mapping[str, Any]],
    gated: Sequence[Mapping[str, Any]],
    pr: Sequence[Mapping[str, Any]],
) -> Dict[str, Optional[float]]:
    out: Dict[str, Optional[float]] = {}
    for prefix, rows in (("raw", raw), ("gated", gated)):
        for key in ("hole_rate", "spike_rate", "rmse"):
            out[f"{prefix}_{key}"] = _mean_of(rows, key)
    out["auprc"] = _mean_of(pr, "auprc")
    out["f1"] = _mean_of(pr, "f1")
    return out


def write_run_artifacts(result: RunResult, dataset: Dataset, out_dir: Path) -> None:
    """Grid CSV, costmap PGMs, runtime CSV/JSON and the deterministic report."""
    grid_path = out_dir / "grid.csv"
    costmap_path = out_dir / "costmap.pgm"
    raw_path = out_dir / "costmap_raw.pgm"
    runtime_path = out_dir / "runtime.csv"
    write_grid_csv(result.grid, grid_path)
    write_costmap(result.inflated, costmap_path)
    write_costmap(result.costmap, raw_path)
    with open(runtime_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["frame", "reliability_ms", "update_ms", "total_ms"])
        writer.writeheader()
        writer.writerows(result.runtime)
    (out_dir / "runtime.json").write_text(json.dumps(result.runtime_summary(), indent=2, sort_keys=True))
    result.artifacts = {
        "grid": str(grid_path),
        "costmap": str(costmap_path),
        "costmap_raw": str(raw_path),
        "runtime": str(runtime_path),
    }
    report = {
        "method": result.method,
        "method_params": result.method_params,
        "config_hash": result.config_hash,
        "shared": result.shared,
        "dataset": str(dataset.root),
        "scenario": dataset.manifest.get("scenario", {}),
        "seed": dataset.manifest.get("params", {}).get("seed"),
        "frames": result.frames,
        "degraded_frames": result.degraded_frames,
        "sensor": result.sensor,
        "artifacts": result.artifacts,
    }
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))


# ============================================================================
# Evaluation
# ============================================================================


def scenario_trials(scenario: Mapping[str, Any], spec) -> List[Tuple[Tuple[int, int], Tuple[int, int]]]:
    pairs = []
    for i, trial in enumerate(scenario.get("trials", [])):
        try:
            sx, sy = trial["start"]
            gx, gy = trial["goal"]
        except (KeyError, TypeError, ValueError):
            raise ConfigError(f"trials[{i}]", "expected {start: [x, y], goal: [x, y]}") from None
        pairs.append((world_to_cell(spec, sx, sy), world_to_cell(spec, gx, gy)))
    return pairs


def evaluate_costmap(
    costmap: Costmap,
    gt: GroundTruthCostmap,
    trials: Sequence[Tuple[Tuple[int, int], Tuple[int, int]]],
) -> Tuple[Dict[str, float], List[TrialResult]]:
    """FOR, FSR, unknown fraction and paired trial outcomes of one costmap."""
    n_free = float(gt.free.sum())
    metrics = {
        "FOR": for_metric(costmap, gt),
        "FSR": fsr_metric(costmap, gt),
        "unknown_fraction": float((costmap.unknown & gt.free).sum()) / n_free,
    }
    results = []
    for start, goal in trials:
        try:
            results.append(trial_outcome(costmap, gt, start, goal))
        except DomainError:
            continue
    return metrics, results


def _metric_rows(
    scenario: str, severity: str, method: str, seed: Any,
    costmap_metrics: Mapping[str, float], trials: Sequence[TrialResult],
    sensor: Mapping[str, Optional[float]],
) -> List[Dict[str, Any]]:
    rows = [
        {"scenario": scenario, "severity": severity, "method": method, "seed": seed,
         "metric": k, "value": v}
        for k, v in costmap_metrics.items()
    ]
    pm = path_metrics(trials)
    if pm.trials:
        rows.append({"scenario": scenario, "severity": severity, "method": method,
                     "seed": seed, "metric": "success_rate", "value": pm.success_rate})
        rows.append({"scenario": scenario, "severity": severity, "method": method,
                     "seed": seed, "metric": "detour_rate", "value": pm.detour_rate})
        if pm.plr_mean is not None:
            rows.append({"scenario": scenario, "severity": severity, "method": method,
                         "seed": seed, "metric": "PLR", "value": pm.plr_mean})
    for k, v in sensor.items():
        if v is not None:
            rows.append({"scenario": scenario, "severity": severity, "method": method,
                         "seed": seed, "metric": k, "value": v})
    return rows


def _write_rows(path: Path, rows: Sequence[Mapping[str, Any]]) -> None:
    if not rows:
        path.write_text("")
        return
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def _trial_id(row: Mapping[str, Any]) -> Tuple[str, str, str, str, str]:
    return (str(row["scenario"]), str(row["severity"]), str(row["method"]),
            str(row["seed"]), str(row["metric"]))


# ============================================================================
# Commands
# ============================================================================


def _load_preset_from_args(args: argparse.Namespace) -> PipelinePreset:
    preset = load_preset(Path(args.config), args.preset)
    return merge_cli_with_preset(
        preset,
        mode=getattr(args, "mode", None),
        tau_r=getattr(args, "tau_r", None),
        forgetting=getattr(args, "forgetting", None),
    )


def simgen(
    scenario_path: Path,
    preset: PipelinePreset,
    out_dir: Path,
    seed: int,
    severity: Optional[str] = None,
    frames: Optional[int] = None,
) -> Path:
    """Generate one dataset; returns the manifest path."""
    scenario = load_scenario(scenario_path)
    world = build_world(scenario)
    if severity is not None:
        world = world.with_severity(severity)
    intrinsics = intrinsics_from_config(scenario)
    if preset.camera_size is not None:
        intrinsics = intrinsics.scaled(*preset.camera_size)
    trajectory = trajectory_from_config(scenario, frames)
    params = corruption_for_scenario(preset, scenario, seed)
    record = dict(scenario)
    record["severity"] = severity
    return generate_sequence(world, trajectory, intrinsics, params, out_dir, record)


def cmd_simgen(args: argparse.Namespace) -> int:
    preset = _load_preset_from_args(args)
    path = simgen(
        resolve_scenario_path(args.scenario), preset, Path(args.out), args.seed,
        args.severity, args.frames,
    )
    print(path)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    preset = load_preset(Path(args.config), args.preset)
    preset = merge_cli_with_preset(
        preset,
        target_mode=args.target,
        epochs=args.epochs,
        train_seed=args.seed,
        learning_rate=args.lr,
        reference=args.reference,
    )
    datasets = [load_dataset(Path(d)) for d in args.datasets]
    for ds in datasets:
        if not ds.has_clean_depth:
            raise DomainError(f"Dataset {ds.root} has no clean depth; regenerate it with simgen")
    training_set = build_training_set(datasets, preset.train)
    model = drm_train(training_set, preset.train)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    loss_path = out.with_suffix(".loss.csv")
    write_loss_csv(model, loss_path)
    print(out)
    print(loss_path)
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    preset = _load_preset_from_args(args)
    dataset = load_dataset(Path(args.dataset))
    model = load_model(Path(args.model)) if args.model else None
    params = json.loads(args.params) if args.params else None
    runner = PipelineRunner(args.method, preset, model, params)
    result = runner.run(dataset, Path(args.out), dump_reliability=args.dump_reliability)
    summary = result.runtime_summary()
    print(f"{args.method}: {result.frames} frames, "
          f"reliability {summary['reliability_ms']:.2f} ms, "
          f"update {summary['update_ms']:.2f} ms, total {summary['total_ms']:.2f} ms")
    print(result.artifacts["costmap"])
    return 0


def evaluate_runs(run_dirs: Sequence[Path], preset: PipelinePreset, logger: PipelineLogger) -> List[Dict[str, Any]]:
    """Metric rows for every run directory."""
    rows: List[Dict[str, Any]] = []
    for run_dir in run_dirs:
        report_path = Path(run_dir) / "report.json"
        if not report_path.exists():
            raise FileNotFoundError(f"Run report not found: {report_path}")
        report = json.loads(report_path.read_text())
        costmap = read_costmap(Path(run_dir) / "costmap.pgm")
        if costmap.spec != preset.grid:
            raise DomainError(f"{run_dir}: run GridSpec differs from the evaluation preset")
        scenario = report["scenario"]
        world = build_world(scenario)
        if scenario.get("severity"):
            world = world.with_severity(scenario["severity"])
        gt = gt_costmap(world, preset.grid, preset.costmap.inflation_radius, costmap.spec)
        metrics, trials = evaluate_costmap(costmap, gt, scenario_trials(scenario, preset.grid))
        severity = scenario.get("severity") or "-"
        for t in trials:
            logger.log_trial(TrialEvent(report["method"], severity, report.get("seed"), t.success, t.plr))
        rows.extend(_metric_rows(
            scenario.get("name", "unnamed"), severity, report["method"],
            report.get("seed"), metrics, trials, report.get("sensor", {}),
        ))
    return sorted(rows, key=_trial_id)


def cmd_eval(args: argparse.Namespace) -> int:
    preset = load_preset(Path(args.config), args.preset)
    logger = PipelineLogger()
    rows = evaluate_runs([Path(r) for r in args.runs], preset, logger)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "metrics.csv", rows)
    summary = aggregate_rows(rows)
    _write_rows(out / "summary.csv", summary)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(out / "summary.json")
    return 0


def _side_by_side(costmaps: Sequence[Costmap]) -> np.ndarray:
    tiles = [costmap_to_pgm(c) for c in costmaps]
    gap = np.full((tiles[0].shape[0], 4), 128, dtype=np.uint8)
    parts: List[np.ndarray] = []
    for i, tile in enumerate(tiles):
        if i:
            parts.append(gap)
        parts.append(tile)
    return np.concatenate(parts, axis=1)


def table_rows(summary: Sequence[Mapping[str, Any]], config_hash: str) -> List[Dict[str, Any]]:
    """Pivot aggregated rows into one row per (scenario, severity, method)."""
    table: Dict[Tuple[str, str, str], Dict[str, Any]] = {}
    for row in summary:
        key = (row["scenario"], row["severity"], row["method"])
        entry = table.setdefault(key, {
            "scenario": key[0], "severity": key[1], "method": key[2], "config_hash": config_hash,
        })
        if row["metric"] in ("FOR", "FSR", "success_rate", "PLR", "detour_rate", "unknown_fraction"):
            entry[f"{row['metric']}_mean"] = row["mean"]
            entry[f"{row['metric']}_std"] = row["std"]
            entry[f"{row['metric']}_n"] = row["n"]
    columns = ["scenario", "severity", "method"]
    for metric in ("FOR", "FSR", "unknown_fraction", "success_rate", "PLR", "detour_rate"):
        columns += [f"{metric}_mean", f"{metric}_std", f"{metric}_n"]
    columns.append("config_hash")
    return [{c: table[k].get(c, "") for c in columns} for k in sorted(table)]


def compare(experiment: ExperimentConfig, logger: Optional[PipelineLogger] = None) -> Path:
    """
    Run the full comparison matrix and write tables and images.

    Returns
    -------
    Path
        Path of ``summary.json``.

    Raises
    ------
    ConfigError
        If the methods would not share identical costmap parameters.
    """
    plog = logger or PipelineLogger()
    preset = load_preset(experiment.presets_path, experiment.preset)
    validate_method_overrides(experiment.method_overrides)
    config_hash = shared_config_hash(preset)
    plog.log_config_hash(config_hash, list(experiment.methods))

    model = load_model(experiment.model_path) if "drm_rgf" in experiment.methods else None
    scenario_path = resolve_scenario_path(experiment.scenario)
    scenario = load_scenario(scenario_path)
    out = Path(experiment.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    world = build_world(scenario)
    trials = scenario_trials(scenario, preset.grid)
    rows: List[Dict[str, Any]] = []
    runtime_rows: List[Dict[str, Any]] = []
    for severity in experiment.severities:
        world_s = world.with_severity(severity)
        gt = gt_costmap(world_s, preset.grid, preset.costmap.inflation_radius)
        datasets = {}
        for seed in experiment.seeds:
            ds_dir = out / "datasets" / severity / f"seed_{seed:04d}"
            simgen(scenario_path, preset, ds_dir, seed, severity, experiment.frames)
            datasets[seed] = load_dataset(ds_dir)

        def run_trial(job: Tuple[str, int]) -> Tuple[str, int, RunResult]:
            method, seed = job
            runner = PipelineRunner(
                method, preset, model, experiment.method_overrides.get(method), plog
            )
            return method, seed, runner.run(datasets[seed])

        jobs = [(m, s) for m in experiment.methods for s in experiment.seeds]
        with ThreadPoolExecutor(max_workers=worker_count()) as pool:
            results = list(pool.map(run_trial, jobs))

        first_seed = experiment.seeds[0]
        tiles = []
        for method, seed, result in sorted(results, key=lambda r: (r[0], r[1])):
            if result.config_hash != config_hash:
                raise ConfigError("methods", f"{method} ran with a different shared configuration")
            metrics, outcomes = evaluate_costmap(result.inflated, gt, trials)
            for t in outcomes:
                plog.log_trial(TrialEvent(method, severity, seed, t.success, t.plr))
            rows.extend(_metric_rows(
                scenario["name"], severity, method, seed, metrics, outcomes, result.sensor,
            ))
            runtime_rows.append({"severity": severity, "method": method, "seed": seed,
                                 **result.runtime_summary()})
        for method in experiment.methods:
            tiles.extend(r.inflated for m, s, r in results if m == method and s == first_seed)
        write_netpbm(out / f"costmaps_{severity}.pgm", _side_by_side(tiles), 255)

    rows.sort(key=_trial_id)
    _write_rows(out / "comparison.csv", rows)
    summary = aggregate_rows(rows)
    _write_rows(out / "summary.csv", table_rows(summary, config_hash))
    _write_rows(out / "runtime.csv", _with_overhead(runtime_rows))
    payload = {
        "config_hash": config_hash,
        "shared": shared_parameters(preset),
        "scenario": scenario["name"],
        "methods": list(experiment.methods),
        "method_params": {m: {**default_method_params(m), **experiment.method_overrides.get(m, {})}
                          for m in experiment.methods},
        "severities": list(experiment.severities),
        "seeds": list(experiment.seeds),
        "f1_threshold": preset.fusion.tau_r,
        "summary": summary,
    }
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return summary_path


def _with_overhead(rows: Sequence[Mapping[str, Any]]) -> List[Dict[str, Any]]:
    """Attach total-time overhead relative to the naive run of the same severity and seed."""
    naive = {(r["severity"], r["seed"]): r["total_ms"] for r in rows if r["method"] == "naive"}
    out = []
    for r in rows:
        base = naive.get((r["severity"], r["seed"]))
        overhead = (r["total_ms"] / base - 1.0) if base else ""
        out.append({**r, "relative_overhead": overhead})
    return out


def cmd_compare(args: argparse.Namespace) -> int:
    experiment = load_experiment(Path(args.experiment))
    overrides: Dict[str, Any] = {}
    if args.config is not None:
        overrides["presets_path"] = Path(args.config)
    if args.preset is not None:
        overrides["preset"] = args.preset
    if args.seed is not None:
        overrides["seeds"] = (args.seed,)
    if args.out is not None:
        overrides["out_dir"] = Path(args.out)
    if overrides:
        experiment = replace(experiment, **overrides)
    print(compare(experiment))
    return 0


# ============================================================================
# CLI
# ============================================================================


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Glare-resilient costmap construction and evaluation"
    )
    parser.add_argument(
        "--log-level",
        type=str,
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Log level (default: WARNING)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=str, default=str(DEFAULT_PRESETS),
                       help="Path to .ini config file with presets")
        p.add_argument("--preset", type=str, default="DEFAULT",
                       help="Preset name from config file (default: DEFAULT)")

    p = sub.add_parser("simgen", help="Generate a synthetic glare dataset")
    common(p)
    p.add_argument("--scenario", required=True, help="Bundled scenario name or JSON path")
    p.add_argument("--severity", choices=SEVERITY_LEVELS, help="Bind every glare patch to this level")
    p.add_argument("--frames", type=int, help="Frame count (overrides the scenario)")
    p.add_argument("--seed", type=int, default=0, help="Corruption seed (default: 0)")
    p.add_argument("--out", required=True, help="Dataset directory")
    p.set_defaults(func=cmd_simgen)

    p = sub.add_parser("train", help="Train the reliability network")
    common(p)
    p.add_argument("datasets", nargs="+", help="Dataset directories")
    p.add_argument("--out", required=True, help="Model file")
    p.add_argument("--target", choices=["binary", "soft"], help="Target mode (overrides preset)")
    p.add_argument("--reference", choices=["clean", "temporal"], help="Reference depth source")
    p.add_argument("--epochs", type=int, help="Epochs (overrides preset)")
    p.add_argument("--lr", type=float, help="Learning rate (overrides preset)")
    p.add_argument("--seed", type=int, help="Training seed (overrides preset)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="Run one method over a dataset")
    common(p)
    p.add_argument("dataset", help="Dataset directory")
    p.add_argument("--method", required=True, choices=VALID_METHODS)
    p.add_argument("--model", help="Model file (required for drm_rgf)")
    p.add_argument("--params", help="JSON object of method parameters")
    p.add_argument("--mode", choices=["weighted", "gated"], help="Fusion mode (overrides preset)")
    p.add_argument("--tau-r", type=float, help="Reliability threshold (overrides preset)")
    p.add_argument("--forgetting", type=float, help="Forgetting factor (overrides preset)")
    p.add_argument("--dump-reliability", action="store_true", help="Write per-frame reliability PGMs")
    p.add_argument("--out", required=True, help="Run output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="Evaluate run directories against ground truth")
    common(p)
    p.add_argument("runs", nargs="+", help="Run output directories")
    p.add_argument("--out", required=True, help="Report directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="Run a full comparison experiment")
    p.add_argument("experiment", help="Experiment JSON file")
    p.add_argument("--config", type=str, help="Path to .ini config file (overrides the experiment)")
    p.add_argument("--preset", type=str, help="Preset name (overrides the experiment)")
    p.add_argument("--seed", type=int, help="Run this single seed (overrides the experiment)")
    p.add_argument("--out", help="Output directory (overrides the experiment)")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else 2

    configure_pipeline_logging(level=args.log_level)
    try:
        return int(args.func(args))
    except (ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
