"""Sparsity-aware placement of spline coefficients on crossbar rows.

Basis functions that fire often, strongly and consistently get the rows
closest to the bit-line clamp, where IR drop is smallest.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import MappingError
from .fabric import CrossbarConfig, EncoderConfig, simulate_mac
from .quant import QuantScheme, build_sh_lut, full_scale, quantize_coeffs
from .spline import BSplineSpec, KanLayer, KanModel, _base_act, basis_matrix


@dataclass
class BasisStats:
    """Per-basis activation statistics; arrays are ``[..., K + G]``."""

    cnt: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    n_samples: int

    @property
    def p(self) -> np.ndarray:
        return self.cnt / self.n_samples

    @property
    def mu(self) -> np.ndarray:
        return self.s1 / np.maximum(self.cnt, 1)

    @property
    def var(self) -> np.ndarray:
        v = self.s2 / np.maximum(self.cnt, 1) - self.mu**2
        return np.where(v < 0, 0.0, v)

    def merge(self, other: "BasisStats") -> "BasisStats":
        return BasisStats(self.cnt + other.cnt, self.s1 + other.s1, self.s2 + other.s2,
                          self.n_samples + other.n_samples)


def profile_stats(X, spec: BSplineSpec, theta: float = 0.0) -> BasisStats:
    """One pass over training inputs ``X`` ([n] or [n, channels]).

    A basis counts as active when its value exceeds ``theta``. Sums are
    taken over sorted values so the result does not depend on row order.
    """
    X = np.asarray(X, dtype=float)
    if X.shape[0] == 0:
        raise ValueError("empty training split")
    B = basis_matrix(X, spec, clamp=True)  # [n, (ch,) nb]
    active = B > theta
    b = np.where(active, B, 0.0)
    cnt = active.sum(axis=0).astype(np.int64)
    s1 = np.sort(b, axis=0).sum(axis=0)
    s2 = np.sort(b * b, axis=0).sum(axis=0)
    return BasisStats(cnt, s1, s2, X.shape[0])


@dataclass
class CriticalityScore:
    S: np.ndarray
    J: np.ndarray
    C_w: np.ndarray
    CV: np.ndarray
    alpha: float
    beta: float
    eps: float


def score(stats: BasisStats, qmag, alpha: float = 0.5, beta: float = 0.5,
          eps: float = 1e-6) -> CriticalityScore:
    """Criticality ``C_w = alpha*J + beta*S*J`` with ``J = p * mu * |c|_Q``."""
    if not (0 <= alpha <= 1 and 0 <= beta <= 1 and abs(alpha + beta - 1) < 1e-12):
        raise ValueError("alpha, beta must lie in [0, 1] and sum to 1")
    if eps <= 0:
        raise ValueError("eps must be positive")
    sigma = np.sqrt(stats.var)
    cv = sigma / (stats.mu + eps)
    S = 1.0 / (1.0 + cv)
    J = stats.p * stats.mu * np.asarray(qmag, dtype=float)
    return CriticalityScore(S, J, alpha * J + beta * S * J, cv, alpha, beta, eps)


@dataclass
class MappingPlan:
    perm: np.ndarray  # logical index -> physical row
    row_order: np.ndarray  # physical rows, nearest clamp first
    scores: np.ndarray | None = None
    labels: list[tuple[int, int]] | None = field(default=None)  # (channel, basis) per logical index

    def __post_init__(self):
        self.perm = np.asarray(self.perm, dtype=np.int64)
        self.row_order = np.asarray(self.row_order, dtype=np.int64)
        if len(set(self.perm.tolist())) != len(self.perm):
            raise MappingError("plan assigns two coefficients to one row")

    @property
    def ranking(self) -> np.ndarray:
        """Logical indices ordered by their row's distance from the clamp."""
        pos = {r: k for k, r in enumerate(self.row_order.tolist())}
        return np.array(sorted(range(len(self.perm)), key=lambda i: pos[int(self.perm[i])]))

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "index", "channel", "basis", "score"])
            for i in self.ranking:
                ch, b = self.labels[i] if self.labels else (0, int(i))
                s = "" if self.scores is None else repr(float(self.scores[i]))
                w.writerow([int(self.perm[i]), int(i), ch, b, s])

    @classmethod
    def from_csv(cls, path: str | Path, row_order=None) -> "MappingPlan":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            recs = list(csv.DictReader(fh))
        n = len(recs)
        perm = np.zeros(n, dtype=np.int64)
        scores = np.zeros(n)
        labels = [None] * n
        has_scores = all(r["score"] != "" for r in recs)
        for r in recs:
            i = int(r["index"])
            perm[i] = int(r["row"])
            labels[i] = (int(r["channel"]), int(r["basis"]))
            if has_scores:
                scores[i] = float(r["score"])
        if row_order is None:
            row_order = np.arange(int(perm.max()) + 1 if n else 0)
        return cls(perm, row_order, scores if has_scores else None, labels)


def assign_rows(scores, row_order) -> MappingPlan:
    """k-th highest score goes to the k-th nearest row; ties keep the lower index first."""
    scores = np.asarray(scores, dtype=float)
    row_order = np.asarray(row_order, dtype=np.int64)
    if len(scores) > len(row_order):
        raise MappingError(f"{len(scores)} coefficients but only {len(row_order)} rows")
    ranked = np.argsort(-scores, kind="stable")
    perm = np.empty(len(scores), dtype=np.int64)
    perm[ranked] = row_order[: len(scores)]
    return MappingPlan(perm, row_order, scores)


def uniform_plan(n: int, row_order) -> MappingPlan:
    """Probability-blind baseline: logical order straight down the rows."""
    row_order = np.asarray(row_order, dtype=np.int64)
    if n > len(row_order):
        raise MappingError(f"{n} coefficients but only {len(row_order)} rows")
    return MappingPlan(row_order[:n].copy(), row_order)


def reversed_plan(scores, row_order) -> MappingPlan:
    """Adversarial baseline: least critical coefficients nearest the clamp."""
    scores = np.asarray(scores, dtype=float)
    ranked = np.argsort(-scores, kind="stable")[::-1]
    row_order = np.asarray(row_order, dtype=np.int64)
    perm = np.empty(len(scores), dtype=np.int64)
    perm[ranked] = row_order[: len(scores)]
    return MappingPlan(perm, row_order, scores)


# --------------------------------------------------------------------------- #
# whole-layer evaluation

def channel_groups(in_dim: int, n_basis: int, rows: int) -> list[np.ndarray]:
    """Input channels per crossbar: as many whole channels as fit in ``rows``."""
    per = rows // n_basis
    if per < 1:
        raise MappingError(f"{n_basis} basis rows per channel exceed crossbar height {rows}")
    return [np.arange(s, min(s + per, in_dim)) for s in range(0, in_dim, per)]


def layer_row_scores(layer: KanLayer, X_train, coeff_codes: np.ndarray, alpha=0.5, beta=0.5,
                     eps=1e-6, theta=0.0) -> np.ndarray:
    """C_w per (channel, basis); |c|_Q is the mean code magnitude over output columns."""
    stats = profile_stats(X_train, layer.spec, theta)  # [in, nb]
    qmag = np.abs(coeff_codes).mean(axis=0)  # [in, nb]
    return score(stats, qmag, alpha, beta, eps).C_w


@dataclass
class LayerPlans:
    """One plan per crossbar (channel group) for one layer."""

    groups: list[np.ndarray]
    plans: list[MappingPlan]


def make_layer_plans(layer: KanLayer, scores: np.ndarray, rows: int, kind: str) -> LayerPlans:
    nb = layer.spec.n_basis
    groups = channel_groups(layer.in_dim, nb, rows)
    row_order = np.arange(rows)
    plans = []
    for grp in groups:
        s = scores[grp].ravel()
        if kind == "sam":
            p = assign_rows(s, row_order)
        elif kind == "uniform":
            p = uniform_plan(len(s), row_order)
            p.scores = s
        elif kind == "reversed":
            p = reversed_plan(s, row_order)
        else:
            raise ValueError(f"unknown plan kind {kind!r}")
        p.labels = [(int(c), b) for c in grp for b in range(nb)]
        plans.append(p)
    return LayerPlans(groups, plans)


def analog_layer_forward(layer: KanLayer, X, scheme: QuantScheme, plans: LayerPlans,
                         enc: EncoderConfig, xbar: CrossbarConfig, trial: int = 0,
                         threads: int = 1):
    """Layer output with the spline MAC run on simulated crossbars.

    Returns ``(y, mac_err, mac_ideal)``: outputs plus decoded-minus-ideal and
    ideal partial sums, both in integer code units, shape [samples, out].
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    lut = build_sh_lut(layer.spec, scheme)
    if 2 * enc.N != lut.value_bits:
        raise ValueError(f"encoder takes {2 * enc.N}-bit inputs but LUT values are {lut.value_bits}-bit")
    codes = scheme.quantize_input(X, layer.spec)
    Bq = lut.basis_codes(codes)  # [S, in, nb]
    cq, cscale = quantize_coeffs(layer.coeffs, scheme.coeff_bits)  # [out, in, nb]
    S = X.shape[0]
    total = np.zeros((S, layer.out_dim), dtype=np.int64)
    ideal = np.zeros_like(total)
    for gi, (grp, plan) in enumerate(zip(plans.groups, plans.plans)):
        W = cq[:, grp, :].transpose(1, 2, 0).reshape(-1, layer.out_dim)
        inp = Bq[:, grp, :].reshape(S, -1)
        xb = xbar if gi == 0 else _reseed(xbar, gi)
        res = simulate_mac(W, inp, plan.perm, enc, xb, trial=trial,
                           coeff_bits=scheme.coeff_bits, threads=threads)
        total += res.decoded_sum
        ideal += res.ideal_sum
    Xq = scheme.dequantize_input(codes, layer.spec)
    base = _base_act(Xq, layer.base_act)[0] @ layer.base_weights.T
    y = base + total * cscale / full_scale(lut.value_bits)
    return y, total - ideal, ideal


def _reseed(xbar: CrossbarConfig, k: int) -> CrossbarConfig:
    return replace(xbar, seed=int(np.random.SeedSequence([xbar.seed, k]).generate_state(1)[0]))


def model_plans(model: KanModel, X_train, scheme_for, rows: int, kind: str, alpha=0.5,
                beta=0.5, eps=1e-6) -> list[LayerPlans]:
    out = []
    h = np.asarray(X_train, dtype=float)
    for layer in model.layers:
        scheme = scheme_for(layer)
        cq, _ = quantize_coeffs(layer.coeffs, scheme.coeff_bits)
        sc = layer_row_scores(layer, h, cq, alpha, beta, eps)
        out.append(make_layer_plans(layer, sc, rows, kind))
        h = layer.forward(h)
    return out


def evaluate_mapping(model: KanModel, X_train, X_eval, enc: EncoderConfig, xbar: CrossbarConfig,
                     n_bits: int = 8, kinds=("sam", "uniform", "reversed"), trials: int = 1,
                     alpha=0.5, beta=0.5, eps=1e-6, threads: int = 1) -> dict:
    """Run the analog model under each placement policy.

    Per policy: ``mac_err`` (mean |decoded - ideal| partial sum, code units),
    ``mac_rel`` (that over mean |ideal|) and ``degradation`` (RMS deviation
    of the analog output from the floating-point output, relative to the RMS
    floating-point output). ``improvement`` is
    uniform degradation over SAM degradation.
    """
    def scheme_for(layer):
        return QuantScheme(layer.spec.grid_G, n_bits, "align_sym_powergap")

    X_eval = np.atleast_2d(np.asarray(X_eval, dtype=float))
    y_float = model.forward(X_eval)
    ref = float(np.sqrt(np.mean(y_float**2))) or 1.0
    report = {}
    for kind in kinds:
        plans = model_plans(model, X_train, scheme_for, xbar.rows, kind, alpha, beta, eps)
        errs, ideals, devs = [], [], []
        for t in range(trials):
            h = X_eval
            for layer, lp in zip(model.layers, plans):
                h, e, ideal = analog_layer_forward(layer, h, scheme_for(layer), lp, enc, xbar,
                                                   trial=t, threads=threads)
                errs.append(np.abs(e).ravel())
                ideals.append(np.abs(ideal).ravel())
            devs.append(((h - y_float) ** 2).ravel())
        e = np.concatenate(errs)
        report[kind] = {
            "mac_err": float(e.mean()),
            "mac_rel": float(e.mean() / max(np.concatenate(ideals).mean(), 1e-300)),
            "degradation": float(np.sqrt(np.concatenate(devs).mean()) / ref),
        }
    if "sam" in report and "uniform" in report:
        d_sam = report["sam"]["degradation"]
        report["improvement"] = report["uniform"]["degradation"] / d_sam if d_sam > 0 else float("inf")
    return report
