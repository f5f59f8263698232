# tcc/config.py
"""
Run configuration: validated pydantic models loaded from a YAML file.

Layout of the file (every section and key optional, unknown keys rejected):

    data:  {train_path, test_path, output_dir}
    synth: {n_per_class, channels, length, num_classes, noise_sigma, seed, base_frequency,
            phase_jitter, amplitude_jitter}
    train:
      epochs, batch_size, seed, labels_fraction, final_eval,
      pseudo_label_threshold, progress, threads
      loss:     {lambda1, lambda2, lambda3, lambda4, tau, scc_reduction}
      augment:  {weak_jitter_sigma, weak_scale_sigma, strong_jitter_sigma, max_segments,
                 time_shift_max, weak_recipe, strong_recipe}
      model:    {conv_channels, d, kernel_widths, conv_stride, pool, encoder_dropout,
                 h, layers, heads, dropout, k_fraction, positional_encoding}
      optim:    {lr, weight_decay, beta1, beta2, eps}
      ablation: {cross_view, contextual, views}
"""
import math
from pathlib import Path
from typing import Any, Dict, Iterable, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from tcc.augment import AugmentConfig, ViewMode
from tcc.errors import ConfigError
from tcc.losses import LossWeights
from tcc.nn import ModelConfig, OptimConfig


class AblationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    cross_view: bool = True
    contextual: Literal["off", "unsup", "sup"] = "unsup"
    views: ViewMode = "weak+strong"

    @field_validator("contextual", mode="before")
    @classmethod
    def _yaml_off(cls, value):
        # YAML 1.1 reads a bare `off` as false
        return "off" if value is False else value


ABLATIONS: Dict[str, Dict[str, Any]] = {
    "full": {},
    "tc_only": {"cross_view": False, "contextual": "off"},
    "tc_xaug": {"cross_view": True, "contextual": "off"},
    "weak_only": {"views": "weak-only"},
    "strong_only": {"views": "strong-only"},
}


def ablation_preset(name: str) -> AblationConfig:
    if name not in ABLATIONS:
        raise ConfigError(f"unknown ablation {name!r}, expected one of {sorted(ABLATIONS)}")
    return AblationConfig(**ABLATIONS[name])


def ablation_name(ablation: AblationConfig) -> str:
    for name, fields in ABLATIONS.items():
        if ablation == AblationConfig(**fields):
            return name
    return "custom"


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(40, ge=1)
    batch_size: int = Field(128, ge=1)
    seed: int = Field(0, ge=0)
    labels_fraction: float = Field(1.0, gt=0.0, le=1.0)
    final_eval: Literal["finetune", "linear"] = "finetune"
    pseudo_label_threshold: Optional[float] = Field(None, ge=0.0, le=1.0)
    progress: bool = False
    threads: int = Field(1, ge=1)
    loss: LossWeights = LossWeights()
    augment: AugmentConfig = AugmentConfig()
    model: ModelConfig = ModelConfig()
    optim: OptimConfig = OptimConfig()
    ablation: AblationConfig = AblationConfig()


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    train_path: Optional[Path] = None
    test_path: Optional[Path] = None
    output_dir: Path = Path("runs/latest")


class SyntheticConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_per_class: int = Field(200, ge=1)
    channels: int = Field(1, ge=1)
    length: int = Field(128, ge=1)
    num_classes: int = Field(3, ge=1)
    noise_sigma: float = Field(0.3, ge=0.0)
    seed: int = Field(0, ge=0)
    base_frequency: float = Field(2.0, gt=0.0)
    phase_jitter: float = Field(0.5 * math.pi, ge=0.0, lt=2 * math.pi)
    amplitude_jitter: float = Field(0.3, ge=0.0, lt=1.0)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    data: DataConfig = DataConfig()
    synth: SyntheticConfig = SyntheticConfig()
    train: TrainConfig = TrainConfig()


def _validate(payload: Dict[str, Any], source: str) -> RunConfig:
    try:
        return RunConfig.model_validate(payload)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"{source}: {problems}") from e


def load_run_config(path: Optional[Path] = None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        payload = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from e
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: top level must be a mapping of sections")
    return _validate(payload, str(path))


def apply_overrides(cfg: RunConfig, assignments: Iterable[str]) -> RunConfig:
    """Apply ``section.key=value`` assignments; values are parsed as YAML scalars/lists."""
    payload = cfg.model_dump(mode="json")
    for assignment in assignments:
        if "=" not in assignment:
            raise ConfigError(f"override {assignment!r} must look like section.key=value")
        dotted, raw = assignment.split("=", 1)
        keys = dotted.strip().split(".")
        node = payload
        for key in keys[:-1]:
            if not isinstance(node.get(key), dict):
                raise ConfigError(f"unknown config key {dotted!r}")
            node = node[key]
        if keys[-1] not in node:
            raise ConfigError(f"unknown config key {dotted!r}")
        try:
            node[keys[-1]] = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise ConfigError(f"override {assignment!r}: {e}") from e
    return _validate(payload, "override")


def dump_snapshot(cfg: RunConfig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False, allow_unicode=True),
        encoding="utf-8",
        newline="\n",
    )
    return path


def _short(value: float) -> str:
    return f"{value:g}" if value >= 1e-3 else f"{value:.0e}".replace("e-0", "e-")


def describe_defaults() -> str:
    t = TrainConfig()
    return (
        "defaults: "
        f"epochs {t.epochs}, batch size {t.batch_size}, "
        f"Adam lr {_short(t.optim.lr)}, weight decay {_short(t.optim.weight_decay)}, "
        f"beta1 {t.optim.beta1:g}, beta2 {t.optim.beta2:g}, eps {_short(t.optim.eps)}; "
        f"tau {t.loss.tau:g}, lambda1 {t.loss.lambda1:g}, lambda2 {t.loss.lambda2:g}, "
        f"lambda3 {t.loss.lambda3:g}, lambda4 {t.loss.lambda4:g}; "
        f"transformer h {t.model.h}, L {t.model.layers}, heads {t.model.heads}, dropout {t.model.dropout:g}; "
        f"K = {t.model.k_fraction:g} x T_z; segments M {t.augment.max_segments}, "
        f"scaling ratio {t.augment.weak_scale_sigma:g}"
    )
