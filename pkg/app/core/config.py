# app/core/config.py
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import yaml

from app.core.errors import ConfigError

logger = logging.getLogger(__name__)

DB_NAME = "gfef_runs.db"
CHECKPOINT_NAME = "model.gfef"
EPOCH_LOG_NAME = "epochs.tsv"

# Fixed by the node construction: every encoder emits P·L values.
ENCODER_FEATURE_SIZE = 128
IMAGE_SIZE = 64
NUM_EXPERT_FEATURES = 12
TS_KERNEL_SIZES = (1, 2, 3, 5, 7, 11)

SYNTHETIC_CLASS_NAMES = ["NORMAL", "BUCKLING", "STUCK"]
SYNTHETIC_SERIES_LENGTH = 101

DATASET_FORMATS = ("ucr", "strain_csv", "synthetic")
CONSTRUCTIONS = ("rwhc", "knn")
FUSIONS = ("hypergraph", "self_attention")
ARCHITECTURES = ("gfef", "conv_baseline")


@dataclass
class SyntheticConfig:
    n_per_class: int = 200
    seed: int = 1
    test_seed: int = 2


@dataclass
class DatasetConfig:
    path: Optional[str] = None
    test_path: Optional[str] = None
    format: str = "synthetic"
    normalize: bool = True
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)


@dataclass
class ModelConfig:
    architecture: str = "gfef"
    hidden_size: int = 128
    layers: int = 1
    patch_len: int = 8
    nodes_per_type: int = 16
    top_k: int = 12
    alpha: float = 0.5
    walk_steps: int = 1
    tau: float = 1.0
    noise_levels: List[int] = field(default_factory=lambda: [1, 2, 3])


@dataclass
class FeatureConfig:
    use_ts: bool = True
    use_image: bool = True
    use_expert: bool = True
    use_frf: bool = True
    use_dra: bool = True
    dynamic_hyperedges: bool = True
    construction: str = "rwhc"
    fusion: str = "hypergraph"
    hypergraph_attention: bool = True
    key_embedding: bool = True
    repeat_eps: float = 1e-9

    def active_types(self) -> List[str]:
        """Returns the enabled input types in their fixed concatenation order."""
        flags = (("ts", self.use_ts), ("img", self.use_image), ("exp", self.use_expert))
        return [name for name, enabled in flags if enabled]


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 500
    batch: int = 64
    seeds: List[int] = field(default_factory=lambda: [0])
    deterministic: bool = True
    log_every: int = 1


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    max_body: int = 1_048_576


@dataclass
class RunSettings:
    db_path: str = DB_NAME
    log_level: str = "INFO"


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)
    run: RunSettings = field(default_factory=RunSettings)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def flat(self) -> Dict[str, Any]:
        """Returns the configuration as a mapping of dotted keys to values."""
        return flatten(self.to_dict())

    def total_nodes(self) -> int:
        return len(self.features.active_types()) * self.model.nodes_per_type


def flatten(tree: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in tree.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, prefix=f"{dotted}."))
        else:
            flat[dotted] = value
    return flat


def valid_keys() -> List[str]:
    return sorted(RunConfig().flat().keys())


def _coerce(key: str, value: Any, default: Any) -> Any:
    """Coerces a parsed scalar to the type of the field's default value."""
    if value is None:
        return value
    if default is None:
        return str(value)
    try:
        if isinstance(default, bool):
            if isinstance(value, bool):
                return value
            raise ConfigError(f"'{key}' expects true/false, got {value!r}")
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ConfigError(f"'{key}' expects an integer, got {value!r}")
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, list):
            items = value if isinstance(value, list) else [value]
            return [int(item) for item in items]
        return str(value)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"'{key}' cannot take value {value!r}: {exc}") from exc


def _apply(config: RunConfig, key: str, value: Any) -> None:
    parts = key.split(".")
    target: Any = config
    for part in parts[:-1]:
        target = getattr(target, part)
    setattr(target, parts[-1], value)


def apply_overrides(config: RunConfig, values: Dict[str, Any]) -> RunConfig:
    """
    Applies dotted-key values onto a config, rejecting unknown keys.

    Args:
        config (RunConfig): The configuration to update in place.
        values (Dict[str, Any]): Dotted keys mapped to already-parsed values.

    Returns:
        RunConfig: The same, updated configuration.
    """
    defaults = config.flat()
    unknown = [key for key in values if key not in defaults]
    if unknown:
        raise ConfigError(
            f"Unknown configuration key(s) {', '.join(sorted(unknown))}; "
            f"valid keys are: {', '.join(valid_keys())}"
        )
    for key, value in values.items():
        _apply(config, key, _coerce(key, value, RunConfig().flat()[key]))
    return config


def parse_override(text: str) -> Dict[str, Any]:
    """Parses one `key=value` CLI override, reading the value with YAML scalar rules."""
    if "=" not in text:
        raise ConfigError(f"Override '{text}' must look like key=value")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw) if raw != "" else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"Override '{text}' has an unparsable value: {exc}") from exc
    return {key.strip(): value}


def load_config(path: Optional[str] = None, overrides: Iterable[str] = ()) -> RunConfig:
    """
    Builds a validated RunConfig from an optional YAML file plus CLI overrides.

    Args:
        path (Optional[str]): A YAML file with nested sections; None uses defaults.
        overrides (Iterable[str]): `key=value` strings; they win over file values.

    Returns:
        RunConfig: The validated configuration.
    """
    config = RunConfig()
    if path:
        file_path = Path(path)
        if not file_path.exists():
            raise ConfigError(f"Config file not found: {path}")
        try:
            tree = yaml.safe_load(file_path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"Config file {path} is not valid YAML: {exc}") from exc
        if not isinstance(tree, dict):
            raise ConfigError(f"Config file {path} must hold a mapping at top level")
        apply_overrides(config, flatten(tree))

    merged: Dict[str, Any] = {}
    for text in overrides:
        merged.update(parse_override(text))
    if merged:
        logger.info("Applying overrides: %s", merged)
        apply_overrides(config, merged)

    validate_config(config)
    return config


def config_from_dict(tree: Dict[str, Any]) -> RunConfig:
    """Rebuilds a config from the nested echo stored in checkpoints."""
    config = RunConfig()
    apply_overrides(config, flatten(tree))
    validate_config(config)
    return config


def validate_config(config: RunConfig) -> None:
    """Raises ConfigError when a cross-field invariant is broken."""
    model, features = config.model, config.features
    if config.dataset.format not in DATASET_FORMATS:
        raise ConfigError(f"dataset.format must be one of {DATASET_FORMATS}")
    if features.construction not in CONSTRUCTIONS:
        raise ConfigError(f"features.construction must be one of {CONSTRUCTIONS}")
    if features.fusion not in FUSIONS:
        raise ConfigError(f"features.fusion must be one of {FUSIONS}")
    if model.architecture not in ARCHITECTURES:
        raise ConfigError(f"model.architecture must be one of {ARCHITECTURES}")
    if model.patch_len * model.nodes_per_type != ENCODER_FEATURE_SIZE:
        raise ConfigError(
            f"model.patch_len * model.nodes_per_type must equal {ENCODER_FEATURE_SIZE}, "
            f"got {model.patch_len} * {model.nodes_per_type}"
        )
    if model.hidden_size != ENCODER_FEATURE_SIZE:
        raise ConfigError(f"model.hidden_size must be {ENCODER_FEATURE_SIZE}")
    if not features.active_types():
        raise ConfigError("At least one of features.use_ts/use_image/use_expert must be true")
    if model.architecture == "conv_baseline" and not features.use_ts:
        raise ConfigError("The convolutional baseline needs features.use_ts=true")
    max_k = config.total_nodes() - 1
    if not 1 <= model.top_k <= max_k:
        raise ConfigError(f"model.top_k must lie in [1, {max_k}] for the enabled inputs")
    if not 0.0 <= model.alpha <= 1.0:
        raise ConfigError("model.alpha must lie in [0, 1]")
    if model.walk_steps < 0:
        raise ConfigError("model.walk_steps must be >= 0")
    if model.tau <= 0:
        raise ConfigError("model.tau must be positive")
    if model.layers < 1:
        raise ConfigError("model.layers must be >= 1")
    if not model.noise_levels or min(model.noise_levels) < 1:
        raise ConfigError("model.noise_levels must be a non-empty list of positive levels")
    if config.train.lr <= 0 or config.train.batch < 1 or config.train.epochs < 0:
        raise ConfigError("train.lr must be > 0, train.batch >= 1, train.epochs >= 0")
    if not config.train.seeds:
        raise ConfigError("train.seeds must list at least one seed")
    if config.dataset.format != "synthetic" and not config.dataset.path:
        raise ConfigError(f"dataset.path is required for format '{config.dataset.format}'")
    if config.dataset.synthetic.n_per_class < 0:
        raise ConfigError("dataset.synthetic.n_per_class must be >= 0")
    if features.repeat_eps < 0:
        raise ConfigError("features.repeat_eps must be >= 0")


def describe(config: RunConfig) -> str:
    """Renders the flat configuration, one `key = value` line per field."""
    return "\n".join(f"{key} = {value}" for key, value in sorted(config.flat().items()))
