"""Experiment configuration: one YAML (or JSON) document, validated up front."""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Paths(_Strict):
    dataset: Optional[str] = None
    tech: Optional[str] = None
    out_dir: str = "out"
    checkpoint: Optional[str] = None


class DataCfg(_Strict):
    kind: Literal["gaussian", "uniform", "constant", "csv"] = "uniform"
    rows: int = Field(400, ge=1)
    in_dim: int = Field(2, ge=1)
    out_dim: int = Field(1, ge=1)
    noise: float = Field(0.0, ge=0)
    val_fraction: float = Field(0.25, ge=0, lt=1)
    domain_policy: Literal["clip", "reject"] = "clip"


class ModelCfg(_Strict):
    hidden: list[int] = Field(default_factory=list)
    K: int = Field(3, ge=1, le=8)
    G: int = Field(5, ge=1)
    domain_lo: float = -1.0
    domain_hi: float = 1.0
    init_scale: float = Field(0.1, ge=0)
    base_act: Literal["relu", "silu"] = "relu"

    @model_validator(mode="after")
    def _domain(self):
        if not self.domain_hi > self.domain_lo:
            raise ValueError("domain_hi must exceed domain_lo")
        return self


class TrainCfg(_Strict):
    epochs: int = Field(50, ge=0)
    lr: float = Field(0.05, gt=0)
    batch_size: int = Field(32, ge=1)
    momentum: float = Field(0.9, ge=0, lt=1)
    task: Literal["regression", "classification"] = "regression"
    loss_threshold: Optional[float] = None


class QuantCfg(_Strict):
    n_bits: int = Field(8, ge=1, le=16)
    mode: Literal["conventional", "align_sym", "align_sym_powergap"] = "align_sym_powergap"
    coeff_bits: int = Field(8, ge=2, le=16)
    g_sweep: list[int] = Field(default_factory=lambda: [8, 16, 32, 64])


class TransferCfg(_Strict):
    kind: Literal["linear", "square"] = "linear"
    gain: float = Field(1e-4, gt=0)
    vt: float = 0.3


class EncoderCfg(_Strict):
    scheme: Literal["pure_voltage", "pure_pwm", "tmdv"] = "tmdv"
    N: int = Field(4, ge=1, le=4)
    w_p1: float = Field(1e-9, gt=0)
    v_top: float = 0.9
    transfer: TransferCfg = Field(default_factory=TransferCfg)
    voltage_noise_sigma: float = Field(0.0, ge=0)
    mode: Literal["TD_P", "TD_A"] = "TD_P"
    n_values: list[int] = Field(default_factory=lambda: [1, 2, 3, 4])
    sigmas: list[float] = Field(default_factory=lambda: [0.005, 0.01, 0.02])
    trials: int = Field(10_000, ge=1)


class CrossbarCfg(_Strict):
    rows: int = Field(128, ge=1, le=4096)
    cols: int = Field(256, ge=2)
    wire_r: float = Field(0.5, ge=0)
    g_on: float = Field(1e-5, gt=0)
    g_off: float = Field(0.0, ge=0)
    v_read: float = 0.2
    v_clamp: float = 0.0
    c_sample: float = Field(1e-13, gt=0)
    adc_bits: Optional[int] = Field(None, ge=1, le=32)
    variation_sigma: float = Field(0.0, ge=0)


class MappingCfg(_Strict):
    alpha: float = Field(0.5, ge=0, le=1)
    beta: float = Field(0.5, ge=0, le=1)
    eps: float = Field(1e-6, gt=0)
    sizes: list[tuple[int, int]] = Field(
        default_factory=lambda: [(128, 7), (256, 15), (512, 30), (1024, 60)])
    seeds: int = Field(3, ge=1)
    train_rows: int = Field(600, ge=2)
    out_dim: int = Field(2, ge=1)
    epochs: int = Field(20, ge=0)
    lr: float = Field(0.02, gt=0)
    eval_samples: int = Field(100, ge=1)
    trials: int = Field(1, ge=1)
    control: bool = True

    @model_validator(mode="after")
    def _mix(self):
        if abs(self.alpha + self.beta - 1) > 1e-12:
            raise ValueError("alpha + beta must equal 1")
        return self


class Budget(_Strict):
    area: Optional[float] = Field(None, gt=0)
    energy: Optional[float] = Field(None, gt=0)
    latency: Optional[float] = Field(None, gt=0)


class TuningCfg(_Strict):
    warmup_epochs: int = Field(5, ge=0)
    interval: int = Field(5, ge=1)
    increment: int = Field(5, ge=1)
    g_cap: int = Field(64, ge=1)
    max_windows: int = Field(20, ge=0)
    budget: Budget = Field(default_factory=Budget)
    templates: Optional[tuple[int, int, int]] = None
    rel_improvement: float = Field(1e-4, ge=0)


class ExperimentConfig(_Strict):
    seed: int = Field(0, ge=0, lt=2**64)
    paths: Paths = Field(default_factory=Paths)
    data: DataCfg = Field(default_factory=DataCfg)
    model: ModelCfg = Field(default_factory=ModelCfg)
    train: TrainCfg = Field(default_factory=TrainCfg)
    quant: QuantCfg = Field(default_factory=QuantCfg)
    encoder: EncoderCfg = Field(default_factory=EncoderCfg)
    crossbar: CrossbarCfg = Field(default_factory=CrossbarCfg)
    mapping: MappingCfg = Field(default_factory=MappingCfg)
    tuning: TuningCfg = Field(default_factory=TuningCfg)


def _format_errors(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_config(doc: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(doc or {})
    except ValidationError as e:
        raise ConfigError(f"invalid config: {_format_errors(e)}") from None


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> ExperimentConfig:
    """Read ``path`` (YAML or JSON) and apply ``key.sub=value`` overrides."""
    doc: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        try:
            doc = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            where = f" line {mark.line + 1}" if mark is not None else ""
            raise ConfigError(f"config {path}:{where} not valid YAML/JSON") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path}: top level must be a mapping")
    for item in overrides or []:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} must look like key.path=value")
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r}: {p!r} is not a section")
        node[parts[-1]] = yaml.safe_load(raw)
    return parse_config(doc)
