"""Model checkpoints as versioned JSON text.

Schema (version 1)::

    {"format": "kancim-model", "version": 1,
     "layers": [{"order_K", "grid_G", "domain_lo", "domain_hi", "in_dim",
                 "out_dim", "base_act",
                 "coeffs": [... out*in*(K+G) floats, row-major ...],
                 "base_weights": [... out*in floats, row-major ...]}]}

Floats are written with ``repr`` so a reload is bit-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .spline import BSplineSpec, KanLayer, KanModel

FORMAT = "kancim-model"
VERSION = 1


def model_to_dict(model: KanModel) -> dict:
    layers = []
    for l in model.layers:
        s = l.spec
        layers.append({
            "order_K": s.order_K, "grid_G": s.grid_G,
            "domain_lo": s.domain_lo, "domain_hi": s.domain_hi,
            "in_dim": l.in_dim, "out_dim": l.out_dim, "base_act": l.base_act,
            "coeffs": [float(v) for v in l.coeffs.ravel()],
            "base_weights": [float(v) for v in l.base_weights.ravel()],
        })
    return {"format": FORMAT, "version": VERSION, "layers": layers}


def model_from_dict(d: dict) -> KanModel:
    if d.get("format") != FORMAT or d.get("version") != VERSION:
        raise ConfigError(f"unsupported checkpoint format {d.get('format')!r} v{d.get('version')!r}")
    layers = []
    for i, ld in enumerate(d["layers"]):
        try:
            spec = BSplineSpec(ld["order_K"], ld["grid_G"], ld["domain_lo"], ld["domain_hi"])
            shape = (ld["out_dim"], ld["in_dim"])
            layers.append(KanLayer(
                spec,
                np.array(ld["coeffs"], dtype=float).reshape(shape + (spec.n_basis,)),
                np.array(ld["base_weights"], dtype=float).reshape(shape),
                ld.get("base_act", "relu"),
            ))
        except (KeyError, ValueError) as e:
            raise ConfigError(f"checkpoint layer {i}: {e}") from None
    return KanModel(layers)


def save_model(model: KanModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> KanModel:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}: {e.msg}") from None
    return model_from_dict(d)
