"""Sensitivity-based grid assignment and the budget-gated grid-extension loop."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import model_from_dict, model_to_dict
from .cost import CostReport, TechParams, check_constraints, estimate
from .data import Dataset
from .errors import ConfigError, MappingError, QuantRangeError
from .fabric import CrossbarConfig, EncoderConfig
from .quant import QuantScheme
from .spline import (KanModel, backward, evaluate_loss, forward_cache, grid_extend, loss_and_delta,
                     refit_grid)
from .train import TrainConfig, Trainer

log = logging.getLogger(__name__)

HIGH, MEDIUM, LOW = "HIGH", "MEDIUM", "LOW"


# --------------------------------------------------------------------------- #
# sensitivity

@dataclass
class SensitivityProfile:
    S: list[float]
    tau_high: float | None = None
    tau_low: float | None = None
    classes: list[str] | None = None
    templates: tuple[int, int, int] | None = None  # (G_high, G_med, G_low)

    @property
    def grids(self) -> list[int] | None:
        if self.classes is None or self.templates is None:
            return None
        g = dict(zip((HIGH, MEDIUM, LOW), self.templates))
        return [g[c] for c in self.classes]


def profile_sensitivity(model: KanModel, X, Y, task: str = "regression") -> SensitivityProfile:
    """Per layer, mean over samples of the mean squared per-sample loss
    gradient with respect to that layer's spline coefficients.

    For one sample the coefficient gradient of layer ``i`` is the outer
    product of the output delta and the basis values, so its squared norm
    factorises as ``sum(delta**2) * sum(B**2)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n = X.shape[0]
    pred, caches = forward_cache(model, X)
    _, delta = loss_and_delta(pred, Y, task)
    _, deltas = backward(model, caches, delta * n)  # undo batch averaging
    S = []
    for layer, (h, B, *_), d in zip(model.layers, caches, deltas):
        M = layer.coeffs.size
        per_sample = np.sum(d**2, axis=1) * np.sum(B**2, axis=(1, 2)) / M
        S.append(float(np.mean(per_sample)))
    return SensitivityProfile(S)


def assign_grids(S, templates: tuple[int, int, int]) -> SensitivityProfile:
    """Three-tier classification at the 67th / 33rd percentiles of ``S``.

    Percentiles use linear interpolation between order statistics.
    """
    S = [float(s) for s in S]
    if not S:
        raise ValueError("need at least one layer")
    g_high, g_med, g_low = templates
    if not g_high >= g_med >= g_low >= 1:
        raise ConfigError("grid templates must satisfy G_high >= G_med >= G_low >= 1")
    arr = np.asarray(S)
    tau_high = float(np.percentile(arr, 67))
    tau_low = float(np.percentile(arr, 33))
    classes = [HIGH if s >= tau_high else MEDIUM if s >= tau_low else LOW for s in S]
    return SensitivityProfile(S, tau_high, tau_low, classes, tuple(templates))


# --------------------------------------------------------------------------- #
# tuning loop

@dataclass
class TuneConfig:
    warmup_epochs: int = 5
    interval: int = 5
    increment: int = 5
    g_cap: int = 64
    max_windows: int = 20
    budget: dict = field(default_factory=dict)
    templates: tuple[int, int, int] | None = None
    modes: dict = field(default_factory=lambda: {HIGH: "TD_A", MEDIUM: "TD_P", LOW: "TD_P"})
    mode_N: dict = field(default_factory=lambda: {"TD_P": 4, "TD_A": 3})
    rel_improvement: float = 1e-4
    n_bits: int = 8

    def __post_init__(self):
        if self.increment < 1 or self.interval < 1:
            raise ConfigError("increment and interval must be >= 1")
        if self.warmup_epochs < 0 or self.max_windows < 0:
            raise ConfigError("warmup_epochs and max_windows must be >= 0")
        if self.g_cap < 1 or self.g_cap > (1 << self.n_bits):
            raise ConfigError(f"g_cap must be in 1..{1 << self.n_bits}")
        for k in self.budget:
            if k not in ("area", "energy", "latency"):
                raise ConfigError(f"unknown budget dimension {k!r}")


@dataclass
class TuneResult:
    status: str  # "ok" | "infeasible"
    model: KanModel
    trace: list[dict]
    report: CostReport
    profile: SensitivityProfile
    rollbacks: int = 0

    @property
    def feasible(self) -> bool:
        return self.status == "ok"

    def summary(self) -> dict:
        return {
            "status": self.status,
            "grids": self.model.grids,
            "classes": self.profile.classes,
            "sensitivity": self.profile.S,
            "extensions": sum(1 for r in self.trace if r["decision"] == "extend"),
            "rollbacks": self.rollbacks,
            "cost": self.report.to_dict(),
            "final_val_loss": self.trace[-1]["val_loss"] if self.trace else None,
        }


class _Hardware:
    def __init__(self, cfg: TuneConfig, classes, xbar: CrossbarConfig, enc: EncoderConfig,
                 tech: TechParams):
        self.cfg, self.xbar, self.tech = cfg, xbar, tech
        self.encs = []
        for c in classes:
            mode = cfg.modes[c]
            self.encs.append(EncoderConfig(enc.scheme, cfg.mode_N[mode], enc.w_p1, enc.v_top,
                                           enc.transfer, enc.voltage_noise_sigma, mode))

    def _scheme(self, G, enc):
        return QuantScheme(G, self.cfg.n_bits, "align_sym_powergap", value_bits=2 * enc.N)

    def check(self, model: KanModel, grids) -> tuple[bool, list[str], CostReport | None]:
        probe = _regrid_shape(model, grids)
        try:
            rep = estimate(probe, [self._scheme(g, e) for g, e in zip(grids, self.encs)],
                           self.xbar, self.encs, self.tech)
        except (MappingError, QuantRangeError) as e:
            return False, [f"unmappable: {e}"], None
        ok, bad = check_constraints(rep, self.cfg.budget)
        return ok, bad, rep


def _regrid_shape(model: KanModel, grids) -> KanModel:
    """Same topology at new grids; changed layers are least-squares refits."""
    layers = []
    for layer, g in zip(model.layers, grids):
        layers.append(layer if g == layer.spec.grid_G else refit_grid(layer, g))
    return KanModel(layers)


def _regrid(model: KanModel, grids) -> KanModel:
    return _regrid_shape(model, grids).copy()


def _record(trace, fh, rec):
    trace.append(rec)
    if fh is not None:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")
        fh.flush()


def tune(model: KanModel, data: Dataset, cfg: TuneConfig, train_cfg: TrainConfig,
         tech: TechParams, xbar: CrossbarConfig, enc: EncoderConfig,
         trace_path: str | Path | None = None, checkpoint_path: str | Path | None = None,
         resume: bool = False) -> TuneResult:
    """Warm up, assign grids by sensitivity, then extend grids window by window.

    Each window first checks the extended configuration (every layer below
    the cap grows by ``increment``) against the budget, applies it, trains
    ``interval`` epochs and keeps it only if validation loss fell by at
    least ``rel_improvement`` relative to the pre-extension loss. A failed
    window restores the pre-extension grids and coefficients and ends the
    loop. A refused extension (budget or cap) also ends it.
    """
    Xva, Yva = data.val
    ckpt = Path(checkpoint_path) if checkpoint_path else None
    state = None
    if resume:
        if ckpt is None or not ckpt.exists():
            raise ConfigError("resume requested but no checkpoint file found")
        state = json.loads(ckpt.read_text())

    if state is None:
        trace: list[dict] = []
        fh = open(trace_path, "w", encoding="utf-8") if trace_path else None
        trainer = Trainer(model.copy(), data, train_cfg)
        trainer.run(cfg.warmup_epochs)
        prof = profile_sensitivity(trainer.model, Xva, Yva, train_cfg.task)
        if cfg.templates is not None:
            prof = assign_grids(prof.S, cfg.templates)
            trainer.model = _regrid(trainer.model, [min(g, cfg.g_cap) for g in prof.grids])
        else:
            prof = assign_grids(prof.S, (1, 1, 1))
            prof.templates = None
        hw = _Hardware(cfg, prof.classes, xbar, enc, tech)

        # shrink toward compliance if the starting point is over budget
        grids = trainer.model.grids
        ok, bad, rep = hw.check(trainer.model, grids)
        while not ok:
            if all(g == 1 for g in grids):
                _record(trace, fh, _rec(-1, trainer.epoch, None, grids, rep, "infeasible", bad))
                if fh:
                    fh.close()
                return TuneResult("infeasible", trainer.model, trace, rep or CostReport(), prof)
            grids = [max(1, g - cfg.increment) for g in grids]
            trainer.model = _regrid(trainer.model, grids)
            _record(trace, fh, _rec(-1, trainer.epoch, None, grids, rep, "shrink", bad))
            ok, bad, rep = hw.check(trainer.model, grids)
        trainer.reset_velocity()
        val_ref = _val(trainer)
        _record(trace, fh, _rec(0, trainer.epoch, val_ref, grids, rep, "start", []))
        window = 0
    else:
        trace = state["trace"]
        if trace_path:
            fh = open(trace_path, "w", encoding="utf-8")
            for r in trace:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
        else:
            fh = None
        trainer = Trainer(model_from_dict(state["model"]), data, train_cfg, epoch=state["epoch"])
        prof = SensitivityProfile(**{k: (tuple(v) if k == "templates" and v else v)
                                     for k, v in state["profile"].items()})
        hw = _Hardware(cfg, prof.classes, xbar, enc, tech)
        val_ref = state["val_ref"]
        window = state["window"]
        _, _, rep = hw.check(trainer.model, trainer.model.grids)

    rollbacks = 0
    while window < cfg.max_windows:
        window += 1
        grids = trainer.model.grids
        cand = [min(g + cfg.increment, cfg.g_cap) for g in grids]
        if cand == grids:
            _record(trace, fh, _rec(window, trainer.epoch, val_ref, grids, rep, "stop_cap", []))
            break
        ok, bad, cand_rep = hw.check(trainer.model, cand)
        if not ok:
            _record(trace, fh, _rec(window, trainer.epoch, val_ref, grids, rep, "stop_budget", bad))
            break
        pre_model, pre_epoch = trainer.model.copy(), trainer.epoch
        trainer.model = KanModel([grid_extend(l, g) for l, g in zip(trainer.model.layers, cand)])
        trainer.reset_velocity()
        trainer.run(cfg.interval)
        val = _val(trainer)
        if val < val_ref * (1 - cfg.rel_improvement):
            val_ref, rep = val, cand_rep
            _record(trace, fh, _rec(window, trainer.epoch, val, cand, cand_rep, "extend", []))
            if ckpt is not None:
                _save_state(ckpt, trainer, prof, val_ref, window, trace)
        else:
            trainer.model = pre_model
            rollbacks += 1
            _record(trace, fh, {**_rec(window, trainer.epoch, val, grids, rep, "rollback", []),
                                "rejected_grids": cand, "restored_epoch": pre_epoch})
            break
    if fh:
        fh.close()
    return TuneResult("ok", trainer.model, trace, rep, prof, rollbacks)


def _val(trainer: Trainer) -> float:
    Xva, Yva = trainer.data.val
    return evaluate_loss(trainer.model, Xva, Yva, trainer.cfg.task)


def _rec(window, epoch, val, grids, rep, decision, violations) -> dict:
    return {
        "window": window, "epoch": epoch, "val_loss": val, "grids": list(grids),
        "cost": rep.to_dict() if rep is not None else None,
        "decision": decision, "violations": list(violations),
    }


def _save_state(path: Path, trainer: Trainer, prof: SensitivityProfile, val_ref, window, trace):
    state = {
        "model": model_to_dict(trainer.model), "epoch": trainer.epoch,
        "profile": asdict(prof), "val_ref": val_ref, "window": window, "trace": trace,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(state, sort_keys=True))
    tmp.replace(path)
