"""Table-producing sweeps shared by the command line and the test-suite."""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

import numpy as np

from .cost import TechParams, decode_path_area
from .data import synthetic
from .errors import QuantRangeError
from .fabric import CrossbarConfig, EncoderConfig, compare_encoders
from .mapping import evaluate_mapping
from .quant import QuantScheme, count_resources
from .spline import KanModel
from .train import TrainConfig, train

RESOURCE_COLUMNS = [
    "G", "K", "n_bits", "mode", "feasible", "L", "LD",
    "baseline_entries", "entries", "entry_ratio",
    "baseline_mux_ways", "mux_ways", "baseline_decoder_lines", "decoder_lines", "area_ratio",
]

ENCODER_COLUMNS = ["scheme", "N", "bits", "sigma", "max_err", "mean_err",
                   "latency_units", "dac_levels", "delay_chain"]

SAM_COLUMNS = ["rows", "G", "channels", "wire_r", "plan", "mac_err", "mac_rel",
               "degradation", "improvement"]

PLANS = ("sam", "uniform", "reversed")


def resource_sweep(grids: Sequence[int], K: int, n_bits: int, mode: str,
                   tech: TechParams | None = None) -> list[dict]:
    """Baseline vs chosen datapath counts per G; infeasible G gets ``feasible=0``."""
    tech = tech or TechParams()
    rows = []
    for G in grids:
        row = dict.fromkeys(RESOURCE_COLUMNS, "")
        row.update(G=G, K=K, n_bits=n_bits, mode=mode)
        try:
            sch = QuantScheme(G, n_bits, mode)
        except QuantRangeError:
            row["feasible"] = 0
            rows.append(row)
            continue
        base, opt = count_resources(sch, K)
        row.update(
            feasible=1, L=sch.L, LD=sch.LD,
            baseline_entries=base.lut_entries, entries=opt.lut_entries,
            entry_ratio=base.lut_entries / opt.lut_entries,
            baseline_mux_ways=base.mux_ways_total, mux_ways=opt.mux_ways_total,
            baseline_decoder_lines=base.decoder_lines, decoder_lines=opt.decoder_lines,
            area_ratio=decode_path_area(base, sch.value_bits, tech)
            / decode_path_area(opt, sch.value_bits, tech),
        )
        rows.append(row)
    return rows


def encoder_sweep(n_values: Sequence[int], sigmas: Sequence[float], base: EncoderConfig,
                  trials: int, seed: int) -> list[dict]:
    rows = []
    for N in n_values:
        rows.extend(compare_encoders(N, sigmas, base, trials, seed))
    return rows


def sam_cell(R: int, G: int, K: int, xbar: CrossbarConfig, enc: EncoderConfig, seeds: Sequence[int],
             train_rows: int = 600, out_dim: int = 2, epochs: int = 20, lr: float = 0.02,
             eval_samples: int = 100, n_bits: int = 8, alpha=0.5, beta=0.5, eps=1e-6,
             trials: int = 1, threads: int = 1) -> list[dict]:
    """One array size: train a channel-filling layer per seed on Gaussian
    inputs, evaluate every placement, average the metrics over seeds.
    """
    ch = R // (K + G)
    xb = replace(xbar, rows=R)
    acc = {p: {"mac_err": [], "mac_rel": [], "degradation": []} for p in PLANS}
    for s in seeds:
        ds = synthetic("gaussian", train_rows, ch, seed=s, lo=-1.0, hi=1.0, out_dim=out_dim)
        model = KanModel.build([ch, out_dim], K, G, -1.0, 1.0, seed=s)
        model, _ = train(model, ds, TrainConfig(epochs=epochs, lr=lr, batch_size=32, seed=s))
        Xtr, _ = ds.train
        Xva, _ = ds.val
        rep = evaluate_mapping(model, Xtr, Xva[:eval_samples], enc, xb, n_bits, PLANS, trials,
                               alpha, beta, eps, threads)
        for p in PLANS:
            for k in acc[p]:
                acc[p][k].append(rep[p][k])
    mean = {p: {k: float(np.mean(v)) for k, v in acc[p].items()} for p in PLANS}
    d_sam = mean["sam"]["degradation"]
    imp = mean["uniform"]["degradation"] / d_sam if d_sam > 0 else float("inf")
    return [{"rows": R, "G": G, "channels": ch, "wire_r": xbar.wire_r, "plan": p, **mean[p],
             "improvement": imp} for p in PLANS]


def sam_sweep(sizes: Sequence[tuple[int, int]], K: int, xbar: CrossbarConfig, enc: EncoderConfig,
              seeds: Sequence[int], control: bool = True, **kw) -> list[dict]:
    """All (R, G) cells; with ``control`` the first size is repeated at zero wire resistance."""
    rows = []
    if control and sizes:
        R, G = sizes[0]
        rows.extend(sam_cell(R, G, K, replace(xbar, wire_r=0.0), enc, seeds, **kw))
    for R, G in sizes:
        rows.extend(sam_cell(R, G, K, xbar, enc, seeds, **kw))
    return rows
