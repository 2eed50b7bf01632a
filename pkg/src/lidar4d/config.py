"""Pipeline configuration.

The on-disk format is plain ``section.key = value`` lines; ``#`` starts a
comment. Missing keys keep their defaults. :func:`dump_config` writes every
field together with where its default comes from, so an effective-config
dump doubles as a record of which values were published hyperparameters.
"""

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

PUBLISHED = "published"
TOOL_DEFAULT = "tool default"


def _pub(default):
    return field(default=default, metadata={"source": PUBLISHED})


@dataclass(frozen=True)
class GroundConfig:
    inlier_threshold: float = 0.25
    max_normal_tilt: float = 15.0  # degrees from vertical
    iterations: int = 200
    seed: int = 0

    def validate(self):
        _check(self.inlier_threshold > 0, "ground.inlier_threshold", "inlier_threshold > 0")
        _check(0 <= self.max_normal_tilt <= 90, "ground.max_normal_tilt", "max_normal_tilt ∈ [0,90]")
        _check(self.iterations >= 1, "ground.iterations", "iterations ≥ 1")


@dataclass(frozen=True)
class ClusterConfig:
    window_len: int = 12
    stride: int = 12
    voxel_size: float = 0.15
    eps: float = 0.5
    min_pts: int = 5

    def validate(self):
        _check(self.window_len >= 1, "cluster.window_len", "window_len ≥ 1")
        _check(self.stride >= 1, "cluster.stride", "stride ≥ 1")
        _check(self.voxel_size > 0, "cluster.voxel_size", "voxel_size > 0")
        _check(self.eps > 0, "cluster.eps", "eps > 0")
        _check(self.min_pts >= 1, "cluster.min_pts", "min_pts ≥ 1")


@dataclass(frozen=True)
class SynthConfig:
    n_s: int = _pub(600)
    validmap_res: float = 0.5
    min_points: int = 30
    seed: int = 0
    collide_existing: bool = True

    def validate(self):
        _check(self.n_s >= 0, "synth.n_s", "n_s ≥ 0")
        _check(self.validmap_res > 0, "synth.validmap_res", "validmap_res > 0")
        _check(self.min_points >= 1, "synth.min_points", "min_points ≥ 1")


@dataclass(frozen=True)
class SamplingConfig:
    n_pairs: int = 1000
    max_gap: int = _pub(4)
    enable_nfs: bool = True
    enable_rto: bool = True
    rto_duplicate: bool = False
    seed: int = 0

    def validate(self):
        _check(self.n_pairs >= 0, "sampling.n_pairs", "n_pairs ≥ 0")
        _check(self.max_gap >= 1, "sampling.max_gap", "max_gap ≥ 1")


@dataclass(frozen=True)
class LossConfig:
    alpha: float = _pub(0.6)
    epsilon: float = _pub(0.1)
    beta: float = _pub(0.2)
    lambda_dice: float = 2.0
    lambda_bce: float = 5.0
    lambda_cons: float = 1.0
    tk_mask: str = "none"

    def validate(self):
        _check(0 <= self.alpha <= 1, "loss.alpha", "alpha ∈ [0,1]")
        _check(self.epsilon > 0, "loss.epsilon", "epsilon > 0")
        _check(self.beta > 0, "loss.beta", "beta > 0")
        for name in ("lambda_dice", "lambda_bce", "lambda_cons"):
            _check(getattr(self, name) >= 0, f"loss.{name}", f"{name} ≥ 0")
        _check(self.tk_mask in ("none", "reuse", "fresh"), "loss.tk_mask", "tk_mask ∈ {none, reuse, fresh}")


@dataclass(frozen=True)
class MetricsConfig:
    min_points: int = 50
    filter_mode: str = "slice"

    def validate(self):
        _check(self.min_points >= 0, "metrics.min_points", "min_points ≥ 0")
        _check(self.filter_mode in ("slice", "segment"), "metrics.filter_mode", "filter_mode ∈ {slice, segment}")


@dataclass(frozen=True)
class ModelConfig:
    """Input voxelization of the downstream segmenter; recorded, not used here."""

    input_voxel_size: float = _pub(0.05)

    def validate(self):
        _check(self.input_voxel_size > 0, "model.input_voxel_size", "input_voxel_size > 0")


@dataclass(frozen=True)
class PipelineConfig:
    ground: GroundConfig = field(default_factory=GroundConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self):
        for f in fields(self):
            getattr(self, f.name).validate()
        return self


class ConfigError(ValueError):
    pass


def _check(ok, key, constraint):
    if not ok:
        raise ConfigError(f"{key}: {constraint}")


def _parse_value(raw, typ, key):
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def apply_overrides(cfg: PipelineConfig, pairs) -> PipelineConfig:
    """Apply ``(key, raw_value)`` pairs, ``key`` being ``section.field``."""
    sections = {f.name: f for f in fields(PipelineConfig)}
    updates = {}
    for key, raw in pairs:
        section, _, name = key.partition(".")
        if section not in sections or not name:
            raise ConfigError(f"unknown config key {key!r}")
        sec_obj = updates.get(section, getattr(cfg, section))
        sec_fields = {f.name: f for f in fields(sec_obj)}
        if name not in sec_fields:
            raise ConfigError(f"unknown config key {key!r}")
        value = _parse_value(raw.strip(), sec_fields[name].type, key)
        updates[section] = replace(sec_obj, **{name: value})
    return replace(cfg, **updates).validate()


def parse_config_text(text: str):
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        pairs.append((key.strip(), value.strip()))
    return pairs


def load_config(path=None, overrides=()) -> PipelineConfig:
    """Defaults, then the file at ``path`` (if any), then ``key=value`` overrides."""
    pairs = []
    if path is not None:
        pairs.extend(parse_config_text(Path(path).read_text()))
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        pairs.append((key.strip(), value.strip()))
    return apply_overrides(PipelineConfig(), pairs)


def dump_config(cfg: PipelineConfig) -> str:
    lines = ["# effective configuration"]
    for sec in fields(cfg):
        sec_obj = getattr(cfg, sec.name)
        for f in fields(sec_obj):
            source = f.metadata.get("source", TOOL_DEFAULT)
            lines.append(f"{sec.name}.{f.name} = {_format_value(getattr(sec_obj, f.name))}  # {source}")
    return "\n".join(lines) + "\n"


def default_sources(cfg: PipelineConfig = None):
    """``{"section.key": source}`` for every field."""
    cfg = cfg or PipelineConfig()
    out = {}
    for sec in fields(cfg):
        for f in fields(getattr(cfg, sec.name)):
            out[f"{sec.name}.{f.name}"] = f.metadata.get("source", TOOL_DEFAULT)
    return out
