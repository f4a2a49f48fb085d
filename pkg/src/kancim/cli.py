"""``kancim`` command line.

Exit codes: 0 success, 2 configuration error, 3 infeasible budget,
4 numerical failure at run time.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_model, save_model
from .config import ExperimentConfig, load_config
from .cost import TechParams
from .data import Dataset, read_csv, synthetic
from .errors import (CalibrationError, ConfigError, DegenerateInputError, DomainError,
                     InfeasibleError, QuantRangeError, TrainingDivergedError)
from .experiments import (ENCODER_COLUMNS, RESOURCE_COLUMNS, SAM_COLUMNS, encoder_sweep,
                          resource_sweep, sam_sweep)
from .fabric import CrossbarConfig, EncoderConfig, Transfer
from .quant import QuantScheme, build_conventional_luts, build_sh_lut
from .spline import KanModel
from .train import TrainConfig, train
from .tuner import TuneConfig, tune

log = logging.getLogger("kancim")

REPORT_SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERIC = 0, 2, 3, 4
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO,
              "debug": logging.DEBUG}
ENV_OUT = "KANCIM_OUT_DIR"
ENV_LOG = "KANCIM_LOG_LEVEL"


# --------------------------------------------------------------------------- #
# output helpers

def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if v is None else str(v)


def write_table(path: Path, columns: list[str], rows: list[dict]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in columns])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        f = float(x)
        return f if math.isfinite(f) else None
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_report(out: Path, command: str, cfg: ExperimentConfig, files: list[str], results: dict,
                 status: str = "ok") -> None:
    write_json(out / "report.json", {
        "schema_version": REPORT_SCHEMA_VERSION,
        "tool_version": __version__,
        "command": command,
        "status": status,
        "seed": cfg.seed,
        "config": cfg.model_dump(mode="json", exclude={"paths"}),
        "files": sorted(files + ["report.json"]),
        "results": results,
    })


# --------------------------------------------------------------------------- #
# config -> objects

def make_encoder(cfg: ExperimentConfig) -> EncoderConfig:
    e = cfg.encoder
    return EncoderConfig(e.scheme, e.N, e.w_p1, e.v_top,
                         Transfer(e.transfer.kind, e.transfer.gain, e.transfer.vt),
                         e.voltage_noise_sigma, e.mode)


def make_crossbar(cfg: ExperimentConfig) -> CrossbarConfig:
    c = cfg.crossbar
    return CrossbarConfig(c.rows, c.cols, c.wire_r, c.g_on, c.g_off, c.v_read, c.v_clamp,
                          c.c_sample, c.adc_bits, c.variation_sigma, cfg.seed)


def make_tech(cfg: ExperimentConfig) -> TechParams:
    return TechParams.load(cfg.paths.tech) if cfg.paths.tech else TechParams()


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    d, m = cfg.data, cfg.model
    if d.kind == "csv" or cfg.paths.dataset:
        if not cfg.paths.dataset:
            raise ConfigError("paths.dataset: required when data.kind is 'csv'")
        ds = read_csv(cfg.paths.dataset)
    else:
        ds = synthetic(d.kind, d.rows, d.in_dim, cfg.seed, m.domain_lo, m.domain_hi, d.noise,
                       d.val_fraction, d.out_dim)
    return ds.apply_domain(m.domain_lo, m.domain_hi, d.domain_policy)


def build_model(cfg: ExperimentConfig, ds: Dataset) -> KanModel:
    m = cfg.model
    widths = [ds.X.shape[1], *m.hidden, ds.Y.shape[1]]
    return KanModel.build(widths, m.K, m.G, m.domain_lo, m.domain_hi, cfg.seed, m.init_scale,
                          m.base_act)


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    t = cfg.train
    return TrainConfig(t.epochs, t.lr, t.batch_size, t.momentum, cfg.seed, t.task)


# --------------------------------------------------------------------------- #
# commands

def cmd_train(cfg: ExperimentConfig, out: Path, args) -> int:
    ds = load_dataset(cfg)
    model, hist = train(build_model(cfg, ds), ds, train_config(cfg))
    save_model(model, out / "model.json")
    rows = [{"epoch": i, "train_loss": a, "val_loss": b}
            for i, (a, b) in enumerate(zip(hist.train_loss, hist.val_loss))]
    write_table(out / "loss.csv", ["epoch", "train_loss", "val_loss"], rows)
    final = hist.val_loss[-1] if hist.val_loss else None
    thr = cfg.train.loss_threshold
    write_report(out, "train", cfg, ["model.json", "loss.csv"], {
        "epochs": cfg.train.epochs, "final_train_loss": hist.train_loss[-1] if rows else None,
        "final_val_loss": final, "grids": model.grids,
        "threshold_met": None if thr is None or final is None else bool(final < thr),
    })
    log.info("trained %d epochs, final val loss %s", cfg.train.epochs, final)
    return EXIT_OK


def _checkpoint_path(cfg: ExperimentConfig, out: Path, args) -> Path:
    p = getattr(args, "checkpoint", None) or cfg.paths.checkpoint
    return Path(p) if p else out / "model.json"


def cmd_quantize(cfg: ExperimentConfig, out: Path, args) -> int:
    ckpt = _checkpoint_path(cfg, out, args)
    if not ckpt.exists():
        raise ConfigError(f"checkpoint not found: {ckpt}")
    model = load_model(ckpt)
    q = cfg.quant
    files, luts = [], []
    for i, layer in enumerate(model.layers):
        try:
            scheme = QuantScheme(layer.spec.grid_G, q.n_bits, q.mode, q.coeff_bits)
        except QuantRangeError as e:
            luts.append({"layer": i, "G": layer.spec.grid_G, "feasible": False, "reason": str(e)})
            continue
        if scheme.mode == "conventional":
            # one full-range table per basis function, no sharing to exploit
            name = f"lut_layer{i}.json"
            tables = build_conventional_luts(layer.spec, scheme)
            write_json(out / name, {"scheme": scheme.to_dict(), "tables": tables})
            stored = int(tables.size)
        else:
            name = f"sh_lut_layer{i}.json"
            lut = build_sh_lut(layer.spec, scheme)
            lut.dump(out / name)
            stored = lut.stored_entries
        files.append(name)
        luts.append({"layer": i, "G": layer.spec.grid_G, "feasible": True, "file": name,
                     "stored_entries": stored, "L": scheme.L, "LD": scheme.LD})
    K = model.layers[0].spec.order_K if model.layers else cfg.model.K
    rows = resource_sweep(q.g_sweep, K, q.n_bits, q.mode, make_tech(cfg))
    write_table(out / "resources.csv", RESOURCE_COLUMNS, rows)
    files.append("resources.csv")
    write_report(out, "quantize", cfg, files, {"luts": luts, "resources": rows})
    return EXIT_OK


def cmd_compare_encoders(cfg: ExperimentConfig, out: Path, args) -> int:
    e = cfg.encoder
    rows = encoder_sweep(e.n_values, e.sigmas, make_encoder(cfg), e.trials, cfg.seed)
    write_table(out / "encoders.csv", ENCODER_COLUMNS, rows)
    write_report(out, "compare-encoders", cfg, ["encoders.csv"], {"rows": rows})
    return EXIT_OK


def cmd_map_simulate(cfg: ExperimentConfig, out: Path, args) -> int:
    m = cfg.mapping
    seeds = [cfg.seed + i for i in range(m.seeds)]
    rows = sam_sweep([tuple(s) for s in m.sizes], cfg.model.K, make_crossbar(cfg),
                     make_encoder(cfg), seeds, control=m.control, train_rows=m.train_rows,
                     out_dim=m.out_dim, epochs=m.epochs, lr=m.lr, eval_samples=m.eval_samples,
                     n_bits=cfg.quant.n_bits, alpha=m.alpha, beta=m.beta, eps=m.eps,
                     trials=m.trials, threads=args.threads)
    write_table(out / "sam.csv", SAM_COLUMNS, rows)
    write_report(out, "map-simulate", cfg, ["sam.csv"], {"rows": rows})
    return EXIT_OK


def cmd_tune(cfg: ExperimentConfig, out: Path, args) -> int:
    t = cfg.tuning
    ds = load_dataset(cfg)
    tcfg = TuneConfig(t.warmup_epochs, t.interval, t.increment, t.g_cap, t.max_windows,
                      t.budget.model_dump(exclude_none=True), t.templates,
                      rel_improvement=t.rel_improvement, n_bits=cfg.quant.n_bits)
    res = tune(build_model(cfg, ds), ds, tcfg, train_config(cfg), make_tech(cfg),
               make_crossbar(cfg), make_encoder(cfg), trace_path=out / "trace.jsonl",
               checkpoint_path=out / "tune_state.json", resume=args.resume)
    save_model(res.model, out / "model.json")
    files = ["trace.jsonl", "model.json", "summary.json"]
    if (out / "tune_state.json").exists():
        files.append("tune_state.json")
    write_json(out / "summary.json", res.summary())
    write_report(out, "tune", cfg, files, res.summary(), status=res.status)
    if not res.feasible:
        log.error("budget cannot be met even at the smallest grid")
        return EXIT_INFEASIBLE
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "quantize": cmd_quantize,
    "compare-encoders": cmd_compare_encoders,
    "map-simulate": cmd_map_simulate,
    "tune": cmd_tune,
}


# --------------------------------------------------------------------------- #
# entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (YAML or JSON)")
    common.add_argument("--seed", type=int, help="global seed (overrides config)")
    common.add_argument("--threads", type=int, default=1, help="worker threads (results do not change)")
    common.add_argument("--out", help=f"output directory (overrides ${ENV_OUT} and config)")
    common.add_argument("--log-level", choices=sorted(LOG_LEVELS), help=f"default from ${ENV_LOG}")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. crossbar.wire_r=0.2")
    p = argparse.ArgumentParser(prog="kancim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"kancim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "quantize":
            sp.add_argument("--checkpoint", help="model checkpoint (default OUT/model.json)")
        if name == "tune":
            sp.add_argument("--resume", action="store_true", help="continue from OUT/tune_state.json")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = args.log_level or os.environ.get(ENV_LOG, "warn")
    if level not in LOG_LEVELS:
        print(f"error: unknown log level {level!r}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        cfg = load_config(args.config, overrides)
        out = Path(args.out or os.environ.get(ENV_OUT) or cfg.paths.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args)
    except (ConfigError, DomainError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (TrainingDivergedError, CalibrationError, DegenerateInputError, FloatingPointError,
            np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
