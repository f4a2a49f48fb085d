"""Floating-point B-spline and KAN layer math.

Everything in the quantized and analog paths is checked against this module.
Knots are uniform and extended by ``K`` knots past each end of the domain, so
every knot interval carries the same ``K + 1`` polynomial pieces.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import DomainError, ShapeError

RIDGE_EPS = 1e-8
SAMPLES_PER_INTERVAL = 64


@dataclass(frozen=True)
class BSplineSpec:
    order_K: int
    grid_G: int
    domain_lo: float = 0.0
    domain_hi: float = 1.0

    def __post_init__(self):
        if self.order_K < 1 or self.grid_G < 1:
            raise ValueError(f"need K >= 1 and G >= 1, got K={self.order_K}, G={self.grid_G}")
        if not self.domain_hi > self.domain_lo:
            raise ValueError("domain_hi must exceed domain_lo")

    @property
    def n_basis(self) -> int:
        return self.order_K + self.grid_G

    @property
    def h(self) -> float:
        return (self.domain_hi - self.domain_lo) / self.grid_G

    @property
    def knots(self) -> np.ndarray:
        j = np.arange(-self.order_K, self.grid_G + self.order_K + 1)
        return self.domain_lo + j * self.h

    def with_grid(self, G: int) -> "BSplineSpec":
        return BSplineSpec(self.order_K, G, self.domain_lo, self.domain_hi)

    def clip(self, x):
        return np.clip(x, self.domain_lo, self.domain_hi)

    def check_domain(self, x) -> None:
        x = np.asarray(x, dtype=float)
        bad = (x < self.domain_lo) | (x > self.domain_hi) | ~np.isfinite(x)
        if np.any(bad):
            first = x[bad].ravel()[0]
            raise DomainError(
                f"input {first!r} outside [{self.domain_lo}, {self.domain_hi}]"
            )

    def locate(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Split in-domain ``x`` into (interval index g, local position u in [0, 1]).

        The right domain edge belongs to the last interval (u = 1).
        """
        t = (np.asarray(x, dtype=float) - self.domain_lo) / self.h
        g = np.clip(np.floor(t), 0, self.grid_G - 1).astype(np.int64)
        return g, t - g


def local_pieces(u, K: int) -> np.ndarray:
    """Values of the K+1 uniform B-spline pieces at local position(s) ``u``.

    Column ``l`` is the basis function whose support starts ``K - l``
    intervals to the left, i.e. global index ``g + l`` on interval ``g``.
    This is the triangular de Boor scheme; with unit knot spacing every
    denominator collapses to the recursion depth ``j``.
    """
    u = np.asarray(u, dtype=float)
    N = np.zeros(u.shape + (K + 1,))
    N[..., 0] = 1.0
    for j in range(1, K + 1):
        saved = np.zeros(u.shape)
        for r in range(j):
            right = r + 1 - u
            left = u + j - r - 1
            temp = N[..., r] / j
            N[..., r] = saved + right * temp
            saved = left * temp
        N[..., j] = saved
    return N


def local_pieces_exact(u: Fraction, K: int) -> list[Fraction]:
    """Same recursion as :func:`local_pieces` in exact rational arithmetic."""
    N = [Fraction(0)] * (K + 1)
    N[0] = Fraction(1)
    for j in range(1, K + 1):
        saved = Fraction(0)
        for r in range(j):
            temp = N[r] / j
            N[r] = saved + (r + 1 - u) * temp
            saved = (u + j - r - 1) * temp
        N[j] = saved
    return N


def local_piece_derivs(u, K: int, h: float) -> np.ndarray:
    """d/dx of the K+1 active pieces, from the order K-1 pieces."""
    u = np.asarray(u, dtype=float)
    lower = local_pieces(u, K - 1) if K > 1 else np.ones(u.shape + (1,))
    padded = np.zeros(u.shape + (K + 2,))
    padded[..., 1 : K + 1] = lower
    return (padded[..., :-1] - padded[..., 1:]) / h


def basis_matrix(x, spec: BSplineSpec, clamp: bool = False) -> np.ndarray:
    """Dense basis values, shape ``x.shape + (K + G,)``."""
    x = np.asarray(x, dtype=float)
    if clamp:
        x = spec.clip(x)
    else:
        spec.check_domain(x)
    g, u = spec.locate(x)
    pieces = local_pieces(u, spec.order_K)
    out = np.zeros(x.shape + (spec.n_basis,))
    idx = g[..., None] + np.arange(spec.order_K + 1)
    np.put_along_axis(out, idx, pieces, axis=-1)
    return out


def basis_eval(x: float, spec: BSplineSpec) -> np.ndarray:
    """Basis vector of length K + G at a scalar ``x``; raises DomainError off-domain."""
    return basis_matrix(np.asarray(float(x)), spec)


def basis_matrix_and_deriv(x, spec: BSplineSpec):
    """Basis values and d/dx at clamped ``x``; derivative is zero where clamping bit."""
    x = np.asarray(x, dtype=float)
    inside = (x >= spec.domain_lo) & (x <= spec.domain_hi)
    xc = spec.clip(x)
    g, u = spec.locate(xc)
    idx = g[..., None] + np.arange(spec.order_K + 1)
    B = np.zeros(x.shape + (spec.n_basis,))
    dB = np.zeros_like(B)
    np.put_along_axis(B, idx, local_pieces(u, spec.order_K), axis=-1)
    d = local_piece_derivs(u, spec.order_K, spec.h) * inside[..., None]
    np.put_along_axis(dB, idx, d, axis=-1)
    return B, dB


def _relu(x):
    return np.maximum(x, 0.0)


def _base_act(x, kind: str):
    if kind == "relu":
        return _relu(x), (x > 0).astype(float)
    if kind == "silu":
        s = 1.0 / (1.0 + np.exp(-x))
        return x * s, s * (1 + x * (1 - s))
    raise ValueError(f"unknown base activation {kind!r}")


@dataclass
class KanLayer:
    spec: BSplineSpec
    coeffs: np.ndarray  # [out, in, K+G]
    base_weights: np.ndarray  # [out, in]
    base_act: str = "relu"

    def __post_init__(self):
        # C order keeps reductions, and so results, independent of provenance
        self.coeffs = np.ascontiguousarray(self.coeffs, dtype=float)
        self.base_weights = np.ascontiguousarray(self.base_weights, dtype=float)
        if self.coeffs.ndim != 3 or self.coeffs.shape[2] != self.spec.n_basis:
            raise ShapeError(
                f"coeffs shape {self.coeffs.shape} incompatible with K+G={self.spec.n_basis}"
            )
        if self.base_weights.shape != self.coeffs.shape[:2]:
            raise ShapeError(
                f"base_weights shape {self.base_weights.shape} != {self.coeffs.shape[:2]}"
            )
        if not (np.all(np.isfinite(self.coeffs)) and np.all(np.isfinite(self.base_weights))):
            raise ValueError("non-finite layer parameters")

    @property
    def out_dim(self) -> int:
        return self.coeffs.shape[0]

    @property
    def in_dim(self) -> int:
        return self.coeffs.shape[1]

    @classmethod
    def init(cls, in_dim: int, out_dim: int, spec: BSplineSpec, rng: np.random.Generator,
             scale: float = 0.1, base_act: str = "relu") -> "KanLayer":
        coeffs = rng.normal(0.0, scale, size=(out_dim, in_dim, spec.n_basis))
        base = rng.normal(0.0, 1.0 / math.sqrt(in_dim), size=(out_dim, in_dim))
        return cls(spec, coeffs, base, base_act)

    def forward(self, x: np.ndarray, clamp: bool = True) -> np.ndarray:
        """Batched forward pass; ``x`` is ``[n, in]`` or ``[in]``."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.shape[1] != self.in_dim:
            raise ShapeError(f"expected input width {self.in_dim}, got {X.shape[1]}")
        B = basis_matrix(X, self.spec, clamp=clamp)
        act, _ = _base_act(X, self.base_act)
        out = act @ self.base_weights.T + np.einsum("nji,oji->no", B, self.coeffs)
        return out[0] if single else out

    def copy(self) -> "KanLayer":
        return copy.deepcopy(self)


def layer_forward(layer: KanLayer, x) -> np.ndarray:
    return layer.forward(x)


@dataclass
class KanModel:
    layers: list[KanLayer] = field(default_factory=list)

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")

    @classmethod
    def build(cls, widths: Sequence[int], K: int, G: int | Sequence[int], lo: float, hi: float,
              seed: int = 0, scale: float = 0.1, base_act: str = "relu") -> "KanModel":
        rng = np.random.default_rng(seed)
        Gs = [G] * (len(widths) - 1) if isinstance(G, int) else list(G)
        layers = [
            KanLayer.init(a, b, BSplineSpec(K, g, lo, hi), rng, scale, base_act)
            for a, b, g in zip(widths[:-1], widths[1:], Gs)
        ]
        return cls(layers)

    @property
    def grids(self) -> list[int]:
        return [l.spec.grid_G for l in self.layers]

    def forward(self, x) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def copy(self) -> "KanModel":
        return copy.deepcopy(self)


# --------------------------------------------------------------------------- #
# backward pass

def forward_cache(model: KanModel, X: np.ndarray):
    caches = []
    h = np.atleast_2d(np.asarray(X, dtype=float))
    for layer in model.layers:
        B, dB = basis_matrix_and_deriv(h, layer.spec)
        act, dact = _base_act(h, layer.base_act)
        out = act @ layer.base_weights.T + np.einsum("nji,oji->no", B, layer.coeffs)
        caches.append((h, B, dB, act, dact))
        h = out
    return h, caches


def backward(model: KanModel, caches, delta: np.ndarray):
    """Back-propagate ``delta = dLoss/dOutput`` (already batch-averaged).

    Returns ``[(grad_coeffs, grad_base), ...]`` per layer and the per-layer
    output deltas (needed for per-sample sensitivity).
    """
    grads = [None] * len(model.layers)
    deltas = [None] * len(model.layers)
    for k in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[k]
        h, B, dB, act, dact = caches[k]
        deltas[k] = delta
        gc = np.einsum("no,nji->oji", delta, B)
        gb = delta.T @ act
        grads[k] = (gc, gb)
        if k > 0:
            spline_dx = np.einsum("no,oji,nji->nj", delta, layer.coeffs, dB)
            delta = spline_dx + (delta @ layer.base_weights) * dact
    return grads, deltas


def loss_and_delta(pred: np.ndarray, Y: np.ndarray, task: str):
    n = pred.shape[0]
    if task == "regression":
        diff = pred - Y
        return float(np.mean(np.sum(diff**2, axis=1))), 2.0 * diff / n
    if task == "classification":
        z = pred - pred.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        labels = Y.argmax(axis=1) if Y.ndim == 2 and Y.shape[1] > 1 else Y.astype(int).ravel()
        loss = -np.mean(np.log(p[np.arange(n), labels] + 1e-300))
        d = p.copy()
        d[np.arange(n), labels] -= 1.0
        return float(loss), d / n
    raise ValueError(f"unknown task {task!r}")


def loss_and_grads(model: KanModel, X, Y, task: str = "regression"):
    pred, caches = forward_cache(model, X)
    loss, delta = loss_and_delta(pred, np.atleast_2d(Y), task)
    grads, _ = backward(model, caches, delta)
    return loss, grads


def evaluate_loss(model: KanModel, X, Y, task: str = "regression") -> float:
    pred = model.forward(np.atleast_2d(X))
    return loss_and_delta(pred, np.atleast_2d(Y), task)[0]


# --------------------------------------------------------------------------- #
# grid extension

def refit_grid(layer: KanLayer, G_new: int, samples_per_interval: int = SAMPLES_PER_INTERVAL,
               ridge: float = RIDGE_EPS) -> KanLayer:
    """Least-squares projection of each edge spline onto a ``G_new`` grid.

    Samples are cell centres, ``samples_per_interval`` per interval of the
    finer of the two grids. If the normal equations are ill-conditioned
    (cond > 1e12) a ridge of ``ridge`` times their mean diagonal is added.
    """
    spec = layer.spec
    new_spec = spec.with_grid(G_new)
    m = samples_per_interval * max(G_new, spec.grid_G)
    xs = spec.domain_lo + (np.arange(m) + 0.5) * (spec.domain_hi - spec.domain_lo) / m
    B_old = basis_matrix(xs, spec)
    B_new = basis_matrix(xs, new_spec)
    targets = np.einsum("si,oji->sjo", B_old, layer.coeffs).reshape(m, -1)
    sol = _normal_solve(B_new, targets, ridge)
    coeffs = sol.reshape(new_spec.n_basis, layer.in_dim, layer.out_dim).transpose(2, 1, 0)
    return KanLayer(new_spec, coeffs, layer.base_weights.copy(), layer.base_act)


def grid_extend(layer: KanLayer, G_new: int, **kw) -> KanLayer:
    if G_new < layer.spec.grid_G:
        raise ValueError(f"grid_extend needs G_new >= G ({G_new} < {layer.spec.grid_G})")
    return refit_grid(layer, G_new, **kw)


def _normal_solve(design: np.ndarray, targets: np.ndarray, ridge: float) -> np.ndarray:
    A = design.T @ design
    rhs = design.T @ targets
    if np.linalg.cond(A) < 1e12:
        return np.linalg.solve(A, rhs)
    A = A + ridge * max(np.trace(A) / A.shape[0], 1.0) * np.eye(A.shape[0])
    return np.linalg.solve(A, rhs)
