"""Model and training configuration, plus JSON run manifests."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

FEATURE_SETS = {
    "text": ("tweet",),
    "meta": ("tweet", "description", "location", "name", "language", "timezone"),
    "net": ("tweet", "network"),
    "all": ("tweet", "description", "location", "name", "language", "timezone", "network"),
}


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass
class ModelConfig:
    """Network hyperparameters. Defaults are the published settings."""

    word_dim: int = 300
    char_dim: int = 50
    filter_sizes: tuple = (3, 4, 5)
    filters_per_size: int = 100
    n_heads: int = 10
    n_layers: int = 3
    ff_dim: int = 2400
    lambda_init: float = 1.0
    alpha: float = 1.0
    max_tweets: int = 20
    max_tokens: int = 30
    max_chars: int = 20
    word_min_count: int = 10
    char_min_count: int = 5
    dropout_lstm_in: float = 0.3
    dropout_encoder: float = 0.1
    features: str = "all"
    use_char_cnn: bool = True
    use_word_attention: bool = True
    use_field_attention: bool = True
    use_encoders: bool = True
    use_country_supervision: bool = True
    clamp_lambda: bool = False
    layer_norm_eps: float = 1e-5
    dtype: str = "float64"

    def __post_init__(self):
        self.filter_sizes = tuple(self.filter_sizes)
        self.validate()

    def validate(self):
        if (2 * self.word_dim) % self.n_heads:
            raise ConfigError(f"2*word_dim={2 * self.word_dim} not divisible by n_heads={self.n_heads}")
        if self.use_char_cnn and self.filters_per_size * len(self.filter_sizes) != self.word_dim:
            raise ConfigError("filters_per_size * len(filter_sizes) must equal word_dim")
        for name in ("dropout_lstm_in", "dropout_encoder"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must be in [0, 1)")
        if self.features not in FEATURE_SETS:
            raise ConfigError(f"features must be one of {sorted(FEATURE_SETS)}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("dtype must be float64 or float32")
        if self.max_tokens < 1 or self.max_chars < 1 or self.max_tweets < 0:
            raise ConfigError("max_tokens/max_chars must be >= 1 and max_tweets >= 0")

    @property
    def effective_alpha(self):
        return self.alpha if self.use_country_supervision else 0.0


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr_initial: float = 1e-4
    lr_reduced: float = 1e-5
    extra_epochs_after_reduction: int = 3
    max_epochs: int = 10
    seed: int = 0
    eval_every: int = 1
    clip_value: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.lr_reduced < self.lr_initial:
            raise ConfigError("lr_reduced must be smaller than lr_initial")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass
class RunManifest:
    """Everything one CLI invocation needs, loaded from a JSON document."""

    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    world: dict = field(default_factory=dict)
    graph: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)
    seed: int | None = None
    version: str = ""

    def resolved_seed(self):
        return self.train.seed if self.seed is None else self.seed

    def to_dict(self):
        return asdict(self)


_SECTIONS = {"model", "train", "world", "graph", "paths", "seed"}
_GRAPH_KEYS = {"mode", "celebrity_threshold", "dim", "lr0", "negatives", "samples", "batch_size"}
_PATH_KEYS = {"train", "dev", "test", "registry", "embeddings", "pretrained", "out", "graph",
              "data", "checkpoint"}


def _build(cls, section, data):
    if not isinstance(data, dict):
        raise ConfigError(f"section '{section}' must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"section '{section}': {exc}") from None


def _check_keys(section, data, allowed):
    if not isinstance(data, dict):
        raise ConfigError(f"section '{section}' must be an object")
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {sorted(unknown)}")
    return dict(data)


def manifest_from_dict(doc):
    from .synth import WorldSpec

    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    world = doc.get("world", {})
    _build(WorldSpec, "world", world)
    return RunManifest(
        model=_build(ModelConfig, "model", doc.get("model", {})),
        train=_build(TrainConfig, "train", doc.get("train", {})),
        world=dict(world),
        graph=_check_keys("graph", doc.get("graph", {}), _GRAPH_KEYS),
        paths=_check_keys("paths", doc.get("paths", {}), _PATH_KEYS),
        seed=doc.get("seed"),
    )


def load_manifest(path):
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
    return manifest_from_dict(doc)


def config_hash(*configs):
    blob = json.dumps([asdict(c) for c in configs], sort_keys=True, default=list)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
