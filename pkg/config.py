"""
Configuration loading for pipeline presets, scenarios and experiments.

Presets live in an INI file with a [DEFAULT] section carrying the shared
grid, fusion and costmap parameters; named sections override them.
Scenarios and experiments are JSON files.
"""

import configparser
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

from drm import TrainConfig
from errors import ConfigError
from gridfusion import CostmapParams, FusionParams, GridSpec
from scenegen import SEVERITY_LEVELS, CorruptionParams


DEFAULT_PRESETS = Path(__file__).parent / "presets.ini"
SCENARIO_DIR = Path(__file__).parent / "scenarios"

VALID_MODES = frozenset(["weighted", "gated"])
VALID_TARGETS = frozenset(["binary", "soft"])
VALID_REFERENCES = frozenset(["clean", "temporal"])
VALID_METHODS = (
    "drm_rgf",
    "heuristic_rgf",
    "naive",
    "validity_range",
    "spatial_median",
    "temporal_reject",
)

# Keys every compared pipeline must share; a per-method override of any of
# these breaks the comparison.
SHARED_KEYS = frozenset([
    "resolution", "extent", "origin_x", "origin_y", "height_min", "height_max",
    "forgetting", "tau_r", "mode", "confirmations", "mark_clear_range",
    "apply_threshold", "t_on", "t_off", "inflation_radius",
])

# Per-method knobs that may differ between pipelines.
METHOD_KEYS: Dict[str, frozenset] = {
    "drm_rgf": frozenset(),
    "heuristic_rgf": frozenset(),
    "naive": frozenset(),
    "validity_range": frozenset(["trusted_min", "trusted_max"]),
    "spatial_median": frozenset(["window"]),
    "temporal_reject": frozenset(["persistence", "agreement_tol"]),
}


@dataclass(frozen=True)
class PipelinePreset:
    """
    Immutable pipeline configuration loaded from an INI section.

    Parameters
    ----------
    name : str
        Section name.
    grid : GridSpec
        Shared occupancy grid geometry.
    fusion : FusionParams
        Shared fusion parameters.
    costmap : CostmapParams
        Shared binarization and inflation parameters.
    corruption : CorruptionParams
        Glare measurement model (seed 0; runs rebind the seed).
    train : TrainConfig
        DRM training configuration.
    camera_size : Optional[Tuple[int, int]]
        (width, height) to resample scenario cameras to, or None.
    degraded_fraction : float
        Low-reliability fraction above which a frame is flagged degraded.
    voxel_size : float
        TSDF voxel size, recorded for provenance only.
    tsdf_truncation : float
        TSDF truncation distance, recorded for provenance only.
    """

    name: str
    grid: GridSpec
    fusion: FusionParams
    costmap: CostmapParams
    corruption: CorruptionParams
    train: TrainConfig
    camera_size: Optional[Tuple[int, int]] = None
    degraded_fraction: float = 0.5
    voxel_size: float = 0.05
    tsdf_truncation: float = 0.15


def _get_float(section: Mapping[str, str], key: str, default: str) -> float:
    try:
        return float(section.get(key, default))
    except ValueError:
        raise ConfigError(key, f"expected a number, got {section.get(key)!r}") from None


def _get_int(section: Mapping[str, str], key: str, default: str) -> int:
    try:
        return int(section.get(key, default))
    except ValueError:
        raise ConfigError(key, f"expected an integer, got {section.get(key)!r}") from None


def _get_bool(section: Mapping[str, str], key: str, default: str) -> bool:
    raw = str(section.get(key, default)).strip().lower()
    if raw in ("1", "yes", "true", "on"):
        return True
    if raw in ("0", "no", "false", "off"):
        return False
    raise ConfigError(key, f"expected a boolean, got {raw!r}")


def _get_choice(section: Mapping[str, str], key: str, default: str, valid: frozenset) -> str:
    value = str(section.get(key, default)).strip()
    if value not in valid:
        raise ConfigError(key, f"must be one of {sorted(valid)}, got {value!r}")
    return value


def _preset_from_section(name: str, section: Mapping[str, str]) -> PipelinePreset:
    """Parse and validate one flat key/value section."""

    def build(key: str, factory: Any, **kwargs: Any) -> Any:
        try:
            return factory(**kwargs)
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(key, str(e)) from None

    grid = build(
        "grid", GridSpec,
        resolution=_get_float(section, "resolution", "0.05"),
        extent=_get_float(section, "extent", "12.0"),
        origin_x=_get_float(section, "origin_x", "-6.0"),
        origin_y=_get_float(section, "origin_y", "-6.0"),
        height_min=_get_float(section, "height_min", "0.1"),
        height_max=_get_float(section, "height_max", "2.0"),
    )
    fusion = build(
        "fusion", FusionParams,
        forgetting=_get_float(section, "forgetting", "0.85"),
        tau_r=_get_float(section, "tau_r", "0.3"),
        mode=_get_choice(section, "mode", "weighted", VALID_MODES),
        confirmations=_get_int(section, "confirmations", "3"),
        mark_clear_range=_get_float(section, "mark_clear_range", "5.0"),
        apply_threshold=_get_bool(section, "apply_threshold", "true"),
    )
    costmap = build(
        "costmap", CostmapParams,
        t_on=_get_float(section, "t_on", "0.7"),
        t_off=_get_float(section, "t_off", "0.5"),
        inflation_radius=_get_float(section, "inflation_radius", "0.55"),
    )
    corruption = build(
        "corruption", CorruptionParams,
        hole_prob=tuple(_get_float(section, f"hole_prob_{lv.lower()}", d)
                        for lv, d in zip(SEVERITY_LEVELS, ("0.01", "0.25", "0.55"))),
        spike_prob=tuple(_get_float(section, f"spike_prob_{lv.lower()}", d)
                         for lv, d in zip(SEVERITY_LEVELS, ("0.005", "0.15", "0.3"))),
        spike_bias_range=(_get_float(section, "spike_bias_min", "0.5"),
                          _get_float(section, "spike_bias_max", "3.0")),
        noise_coeff=_get_float(section, "noise_coeff", "0.0025"),
    )
    try:
        encoder = tuple(
            int(c) for c in str(section.get("encoder_channels", "32,64,96,128")).split(",")
        )
    except ValueError:
        raise ConfigError("encoder_channels", "expected a comma-separated integer list") from None
    train = build(
        "train", TrainConfig,
        learning_rate=_get_float(section, "learning_rate", "0.05"),
        momentum=_get_float(section, "momentum", "0.9"),
        batch_size=_get_int(section, "batch_size", "4"),
        epochs=_get_int(section, "epochs", "30"),
        target_mode=_get_choice(section, "target_mode", "binary", VALID_TARGETS),
        work_width=_get_int(section, "work_width", "320"),
        work_height=_get_int(section, "work_height", "240"),
        seed=_get_int(section, "train_seed", "0"),
        reference=_get_choice(section, "reference", "clean", VALID_REFERENCES),
        reference_window=_get_int(section, "reference_window", "15"),
        stem_channels=_get_int(section, "stem_channels", "16"),
        encoder_channels=encoder,
    )

    cam_w = _get_int(section, "camera_width", "0")
    cam_h = _get_int(section, "camera_height", "0")
    if (cam_w > 0) != (cam_h > 0) or cam_w < 0 or cam_h < 0:
        raise ConfigError("camera_width", "camera_width and camera_height go together")
    degraded = _get_float(section, "degraded_fraction", "0.5")
    if not 0.0 <= degraded <= 1.0:
        raise ConfigError("degraded_fraction", f"must be in [0, 1], got {degraded}")

    return PipelinePreset(
        name=name,
        grid=grid,
        fusion=fusion,
        costmap=costmap,
        corruption=corruption,
        train=train,
        camera_size=(cam_w, cam_h) if cam_w > 0 else None,
        degraded_fraction=degraded,
        voxel_size=_get_float(section, "voxel_size", "0.05"),
        tsdf_truncation=_get_float(section, "tsdf_truncation", "0.15"),
    )


def _read_parser(config_path: Path) -> configparser.ConfigParser:
    if not config_path.exists():
        raise FileNotFoundError(f"Config file not found: {config_path}")
    parser = configparser.ConfigParser()
    parser.read(config_path)
    return parser


def load_preset(config_path: Path, preset_name: str) -> PipelinePreset:
    """
    Load a named preset from INI file.

    Parameters
    ----------
    config_path : Path
        Path to the .ini configuration file.
    preset_name : str
        Name of the preset section to load.

    Returns
    -------
    PipelinePreset
        Immutable configuration object with validated values.

    Raises
    ------
    FileNotFoundError
        If the config file does not exist.
    ConfigError
        If the preset is not found or a value fails validation; the
        message names the key.

    Examples
    --------
    >>> preset = load_preset(Path("presets.ini"), "gated")
    >>> preset.fusion.mode
    'gated'
    """
    parser = _read_parser(Path(config_path))
    if preset_name != "DEFAULT" and preset_name not in parser.sections():
        available = ["DEFAULT"] + parser.sections()
        raise ConfigError(
            "preset", f"'{preset_name}' not found. Available presets: {available}"
        )
    section = parser[preset_name] if preset_name != "DEFAULT" else parser.defaults()
    return _preset_from_section(preset_name, section)


def list_presets(config_path: Path) -> List[str]:
    """
    List all available preset names from an INI file.

    Raises
    ------
    FileNotFoundError
        If the config file does not exist.
    """
    return ["DEFAULT"] + _read_parser(Path(config_path)).sections()


def preset_to_flat(preset: PipelinePreset) -> Dict[str, str]:
    """Flatten a preset back into INI key/value strings."""
    g, f, c, k, t = preset.grid, preset.fusion, preset.costmap, preset.corruption, preset.train
    flat: Dict[str, Any] = {
        "resolution": g.resolution, "extent": g.extent,
        "origin_x": g.origin_x, "origin_y": g.origin_y,
        "height_min": g.height_min, "height_max": g.height_max,
        "forgetting": f.forgetting, "tau_r": f.tau_r, "mode": f.mode,
        "confirmations": f.confirmations, "mark_clear_range": f.mark_clear_range,
        "apply_threshold": f.apply_threshold,
        "t_on": c.t_on, "t_off": c.t_off, "inflation_radius": c.inflation_radius,
        "spike_bias_min": k.spike_bias_range[0], "spike_bias_max": k.spike_bias_range[1],
        "noise_coeff": k.noise_coeff,
        "learning_rate": t.learning_rate, "momentum": t.momentum,
        "batch_size": t.batch_size, "epochs": t.epochs, "target_mode": t.target_mode,
        "work_width": t.work_width, "work_height": t.work_height, "train_seed": t.seed,
        "reference": t.reference, "reference_window": t.reference_window,
        "stem_channels": t.stem_channels,
        "encoder_channels": ",".join(str(ch) for ch in t.encoder_channels),
        "camera_width": preset.camera_size[0] if preset.camera_size else 0,
        "camera_height": preset.camera_size[1] if preset.camera_size else 0,
        "degraded_fraction": preset.degraded_fraction,
        "voxel_size": preset.voxel_size, "tsdf_truncation": preset.tsdf_truncation,
    }
    for i, level in enumerate(SEVERITY_LEVELS):
        flat[f"hole_prob_{level.lower()}"] = k.hole_prob[i]
        flat[f"spike_prob_{level.lower()}"] = k.spike_prob[i]
    return {key: str(value).lower() if isinstance(value, bool) else str(value)
            for key, value in flat.items()}


def merge_cli_with_preset(preset: PipelinePreset, **overrides: Any) -> PipelinePreset:
    """
    Merge CLI arguments with preset values (CLI takes precedence).

    Parameters
    ----------
    preset : PipelinePreset
        Base preset configuration.
    **overrides
        INI key names mapped to values; None values are ignored.

    Returns
    -------
    PipelinePreset
        New preset named ``<name>+cli`` when anything was overridden.

    Raises
    ------
    ConfigError
        For unknown keys or values failing validation.
    """
    flat = preset_to_flat(preset)
    applied = {k: v for k, v in overrides.items() if v is not None}
    for key, value in applied.items():
        if key not in flat:
            raise ConfigError(key, "unknown configuration key")
        if isinstance(value, bool):
            flat[key] = str(value).lower()
        elif isinstance(value, (tuple, list)):
            flat[key] = ",".join(str(v) for v in value)
        else:
            flat[key] = str(value)
    if not applied:
        return preset
    return _preset_from_section(f"{preset.name}+cli", flat)


def shared_parameters(preset: PipelinePreset) -> Dict[str, Any]:
    """Grid, fusion and costmap parameters shared by every compared method."""
    return {
        "grid": asdict(preset.grid),
        "fusion": asdict(preset.fusion),
        "costmap": asdict(preset.costmap),
    }


def shared_config_hash(preset: PipelinePreset) -> str:
    """SHA-256 over the canonical JSON of the shared parameters."""
    canonical = json.dumps(shared_parameters(preset), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def resolve_scenario_path(name_or_path: str) -> Path:
    """A bundled scenario name (``reflective_corridor``) or a JSON path."""
    path = Path(name_or_path)
    if path.suffix == ".json" or path.exists():
        return path
    return SCENARIO_DIR / f"{name_or_path}.json"


def load_scenario(path: Path) -> Dict[str, Any]:
    """
    Load a scenario JSON file.

    Raises
    ------
    FileNotFoundError
        If the file does not exist.
    ConfigError
        If the file is not a JSON object.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Scenario file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(str(path), f"invalid JSON: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(str(path), "scenario must be a JSON object")
    data.setdefault("name", path.stem)
    return data


def corruption_for_scenario(
    preset: PipelinePreset, scenario: Mapping[str, Any], seed: int
) -> CorruptionParams:
    """Preset corruption parameters with the scenario's ``corruption`` overrides applied."""
    overrides = scenario.get("corruption", {})
    base = preset_to_flat(preset)
    allowed = {k for k in base if k.startswith(("hole_prob_", "spike_prob_"))} | \
        {"spike_bias_min", "spike_bias_max", "noise_coeff"}
    for key, value in overrides.items():
        if key not in allowed:
            raise ConfigError(f"corruption.{key}", "unknown corruption parameter")
        base[key] = str(value)
    return _preset_from_section(preset.name, base).corruption.with_seed(seed)


@dataclass(frozen=True)
class ExperimentConfig:
    """
    One comparison matrix: methods x severities x seeds on one scenario.

    Parameters
    ----------
    scenario : str
        Bundled scenario name or scenario file path.
    severities : Tuple[str, ...]
        Glare levels to run.
    methods : Tuple[str, ...]
        Pipelines to compare.
    seeds : Tuple[int, ...]
        Corruption seeds; every (method, severity) replays the same seeds.
    preset : str
        Preset section holding the shared parameters.
    presets_path : Path
        INI file with the preset.
    method_overrides : Dict[str, Dict[str, Any]]
        Per-method non-shared knobs.
    model_path : Optional[Path]
        DRM model, required when ``drm_rgf`` is compared.
    out_dir : Path
        Output directory.
    frames : Optional[int]
        Frame count override for the scenario trajectory.
    """

    scenario: str
    severities: Tuple[str, ...]
    methods: Tuple[str, ...]
    seeds: Tuple[int, ...]
    preset: str = "DEFAULT"
    presets_path: Path = DEFAULT_PRESETS
    method_overrides: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    model_path: Optional[Path] = None
    out_dir: Path = Path("results")
    frames: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ConfigError("seeds", "at least one seed is required")
        if not self.methods:
            raise ConfigError("methods", "at least one method is required")
        for i, m in enumerate(self.methods):
            if m not in VALID_METHODS:
                raise ConfigError(f"methods[{i}]", f"unknown method {m!r}")
        for i, s in enumerate(self.severities):
            if s not in SEVERITY_LEVELS:
                raise ConfigError(f"severities[{i}]", f"must be one of {SEVERITY_LEVELS}")
        if "drm_rgf" in self.methods and self.model_path is None:
            raise ConfigError("model", "drm_rgf requires a model path")
        validate_method_overrides(self.method_overrides)


def validate_method_overrides(overrides: Mapping[str, Mapping[str, Any]]) -> None:
    """
    Reject overrides that would give methods different shared parameters.

    Raises
    ------
    ConfigError
        Naming ``method_overrides.<method>.<key>``.
    """
    for method, knobs in overrides.items():
        if method not in METHOD_KEYS:
            raise ConfigError(f"method_overrides.{method}", "unknown method")
        for key in knobs:
            where = f"method_overrides.{method}.{key}"
            if key in SHARED_KEYS:
                raise ConfigError(where, "shared costmap parameters must be identical across methods")
            if key not in METHOD_KEYS[method]:
                raise ConfigError(where, f"not a parameter of {method}")


def load_experiment(path: Path) -> ExperimentConfig:
    """
    Load an experiment JSON file.

    Relative ``model`` and ``presets`` paths resolve against the file's
    directory.

    Raises
    ------
    FileNotFoundError
        If the file does not exist.
    ConfigError
        For malformed fields or a fairness violation.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Experiment file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(str(path), f"invalid JSON: {e}") from None
    if "scenario" not in raw:
        raise ConfigError("scenario", "missing")

    def rel(p: Optional[str]) -> Optional[Path]:
        if p is None:
            return None
        q = Path(p)
        return q if q.is_absolute() else path.parent / q

    try:
        seeds = tuple(int(s) for s in raw.get("seeds", range(20)))
    except (TypeError, ValueError):
        raise ConfigError("seeds", "expected a list of integers") from None
    return ExperimentConfig(
        scenario=str(raw["scenario"]),
        severities=tuple(raw.get("severities", SEVERITY_LEVELS)),
        methods=tuple(raw.get("methods", VALID_METHODS)),
        seeds=seeds,
        preset=str(raw.get("preset", "DEFAULT")),
        presets_path=rel(raw.get("presets")) or DEFAULT_PRESETS,
        method_overrides={k: dict(v) for k, v in raw.get("method_overrides", {}).items()},
        model_path=rel(raw.get("model")),
        out_dir=rel(raw.get("out")) or Path("results"),
        frames=raw.get("frames"),
    )


def worker_count() -> int:
    """Trial worker count from GLARECOST_THREADS (default 1)."""
    raw = os.environ.get("GLARECOST_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError("GLARECOST_THREADS", f"expected an integer, got {raw!r}") from None
    return max(1, n)
