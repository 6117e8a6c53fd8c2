"""Run configuration: dataclasses, JSON round trip, dotted --set overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    hidden_size: int = 32          # d; encoded streams are T x 2d
    embed_dim: int = 16
    video_feat_dim: int = 24
    vocab_size: int = 48
    second_lstm_hidden: int | None = None  # per direction; defaults to 5d so u is 10d wide
    num_answers: int = 5
    margin: float = 1.0
    loss_form: str = "summed_bce"   # or "categorical"
    reg_form: str = "norm"         # or "squared"

    def __post_init__(self):
        if self.second_lstm_hidden is None:
            self.second_lstm_hidden = 5 * self.hidden_size
        if self.num_answers != 5:
            raise ConfigError("num_answers is fixed at 5")
        for name in ("hidden_size", "embed_dim", "video_feat_dim", "vocab_size", "second_lstm_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.margin < 0:
            raise ConfigError("margin must be nonnegative")
        if self.loss_form not in ("summed_bce", "categorical"):
            raise ConfigError(f"unknown loss_form {self.loss_form!r}")
        if self.reg_form not in ("norm", "squared"):
            raise ConfigError(f"unknown reg_form {self.reg_form!r}")


@dataclass
class GeneratorConfig:
    seed: int = 1234
    vocab_size: int = 48
    clip_len: int = 12
    num_concepts: int = 24
    concepts_per_category: int = 4
    span_min: int = 2
    span_max: int = 4
    noise_sigma: float = 0.1
    video_feat_dim: int = 24
    subtitle_filler_prob: float = 0.2
    train_count: int = 2000
    val_count: int = 500
    test_count: int = 500

    def __post_init__(self):
        if self.span_max > self.clip_len:
            raise ConfigError(f"span_max {self.span_max} wider than clip_len {self.clip_len}")
        if not (1 <= self.span_min <= self.span_max):
            raise ConfigError("need 1 <= span_min <= span_max")
        if self.clip_len < 2 * self.span_min + self.span_max:
            raise ConfigError("clip_len too short to hold a marked scene plus neighbours")
        if self.num_concepts % self.concepts_per_category != 0:
            raise ConfigError("num_concepts must be a multiple of concepts_per_category")
        # token layout: PAD, QWHAT, 3 markers, categories, concepts, >=1 filler
        reserved = 2 + 3 + self.num_categories + self.num_concepts
        if self.vocab_size < reserved + 1:
            raise ConfigError(f"vocab_size {self.vocab_size} too small; need > {reserved}")
        if self.num_concepts < self.clip_len // self.span_min + 4:
            raise ConfigError("need enough concepts for distinct scenes plus distractors")

    @property
    def num_categories(self) -> int:
        return self.num_concepts // self.concepts_per_category


@dataclass
class ScheduleConfig:
    # anchors: [step, [alpha_qa, alpha_ma, alpha_tl]]
    anchors: list = field(default_factory=list)
    interpolation: str = "linear"  # or "step-wise"

    def __post_init__(self):
        if self.interpolation not in ("linear", "step-wise"):
            raise ConfigError(f"unknown interpolation {self.interpolation!r}")


def default_curriculum_anchors(total_steps: int) -> list:
    """Easy-tasks-first curriculum: alignment dominates early, then
    localization, then question answering. Tool defaults, fully overridable."""
    t = int(total_steps)
    raw = [
        [0, [0.2, 1.0, 0.2]],
        [t // 4, [0.5, 0.5, 1.0]],
        [t // 2, [1.0, 0.2, 0.5]],
        [t, [1.0, 0.1, 0.1]],
    ]
    anchors = []
    for step, weights in raw:  # tiny budgets collapse anchors; keep the first
        if not anchors or step > anchors[-1][0]:
            anchors.append([step, weights])
    return anchors


@dataclass
class OptimizerConfig:
    learning_rate: float = 0.0003
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    total_steps: int = 600


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    data_dir: str = "data"
    streams: list = field(default_factory=lambda: ["subtitle", "video-cpt"])
    losses: list = field(default_factory=lambda: ["qa", "ma", "tl"])
    log_every: int = 10

    def __post_init__(self):
        for s in self.streams:
            if s not in ("subtitle", "video-cpt", "video-img"):
                raise ConfigError(f"unknown stream {s!r}")
        if not self.streams:
            raise ConfigError("at least one stream must be active")
        for l in self.losses:
            if l not in ("qa", "ma", "tl"):
                raise ConfigError(f"unknown loss {l!r}")
        if "qa" not in self.losses:
            raise ConfigError("the qa loss is always required")
        if "ma" in self.losses:
            if self.optimizer.batch_size < 2:
                raise ConfigError("ma loss needs batch_size >= 2 (in-batch negatives)")
            if "subtitle" not in self.streams or not any(s.startswith("video") for s in self.streams):
                raise ConfigError("ma loss needs both a subtitle and a video stream")
        if not self.schedule.anchors:
            self.schedule.anchors = default_curriculum_anchors(self.optimizer.total_steps)
        if self.model.vocab_size != self.generator.vocab_size:
            raise ConfigError("model.vocab_size must match generator.vocab_size")
        if self.model.video_feat_dim != self.generator.video_feat_dim:
            raise ConfigError("model.video_feat_dim must match generator.video_feat_dim")


def _from_dict(cls, data: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**data)


def run_config_from_dict(data: dict) -> RunConfig:
    data = dict(data)
    kwargs = {}
    for key, sub in (("model", ModelConfig), ("generator", GeneratorConfig),
                     ("optimizer", OptimizerConfig), ("schedule", ScheduleConfig)):
        if key in data:
            kwargs[key] = _from_dict(sub, data.pop(key))
    for key in ("data_dir", "streams", "losses", "log_every"):
        if key in data:
            kwargs[key] = data.pop(key)
    if data:
        raise ConfigError(f"unknown config keys: {sorted(data)}")
    return RunConfig(**kwargs)


def run_config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_run_config(path: str) -> RunConfig:
    with open(path) as fh:
        return run_config_from_dict(json.load(fh))


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply `a.b.c=value` overrides to a nested config dict in place."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        path, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        keys = path.split(".")
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {path!r} crosses a non-dict value")
        node[keys[-1]] = value
    return data


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(run_config_to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()
