"""Mini-batch SGD with analytic gradients."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import TrainingDivergedError
from .spline import KanModel, evaluate_loss, loss_and_grads

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 50
    lr: float = 0.05
    batch_size: int = 32
    momentum: float = 0.9
    seed: int = 0
    task: str = "regression"
    train_base: bool = True

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size >= 1 and epochs >= 0 required")


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)


class Trainer:
    """Stateful SGD loop so callers can train in windows (the tuner does).

    The shuffle order of epoch ``e`` depends only on ``(seed, e)``, which
    makes a resumed run identical to an uninterrupted one.
    """

    def __init__(self, model: KanModel, data: Dataset, cfg: TrainConfig, epoch: int = 0):
        self.model = model
        self.data = data
        self.cfg = cfg
        self.epoch = epoch
        self.history = History()
        self._velocity = self._zero_velocity()

    def _zero_velocity(self):
        return [(np.zeros_like(l.coeffs), np.zeros_like(l.base_weights)) for l in self.model.layers]

    def reset_velocity(self):
        self._velocity = self._zero_velocity()

    def run(self, epochs: int) -> History:
        Xtr, Ytr = self.data.train
        Xva, Yva = self.data.val
        cfg = self.cfg
        n = len(Xtr)
        for _ in range(epochs):
            good = self.model.copy()
            order = np.random.default_rng([cfg.seed, self.epoch]).permutation(n)
            for start in range(0, n, cfg.batch_size):
                b = order[start : start + cfg.batch_size]
                loss, grads = loss_and_grads(self.model, Xtr[b], Ytr[b], cfg.task)
                if not np.isfinite(loss):
                    raise TrainingDivergedError(
                        f"loss became non-finite at epoch {self.epoch}", good, self.epoch
                    )
                self._step(grads)
            tl = evaluate_loss(self.model, Xtr, Ytr, cfg.task)
            vl = evaluate_loss(self.model, Xva, Yva, cfg.task)
            if not (np.isfinite(tl) and np.isfinite(vl)):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {self.epoch}", good, self.epoch
                )
            self.history.train_loss.append(tl)
            self.history.val_loss.append(vl)
            log.debug("epoch %d train %.6g val %.6g", self.epoch, tl, vl)
            self.epoch += 1
        return self.history

    def _step(self, grads):
        mu, lr = self.cfg.momentum, self.cfg.lr
        for layer, (gc, gb), (vc, vb) in zip(self.model.layers, grads, self._velocity):
            vc *= mu
            vc -= lr * gc
            layer.coeffs += vc
            if self.cfg.train_base:
                vb *= mu
                vb -= lr * gb
                layer.base_weights += vb


def train(model: KanModel, data: Dataset, cfg: TrainConfig) -> tuple[KanModel, History]:
    """Train a private copy of ``model``; the argument is left untouched."""
    if len(data.train[0]) == 0:
        raise ValueError("no training rows")
    trainer = Trainer(model.copy(), data, cfg)
    hist = trainer.run(cfg.epochs)
    return trainer.model, hist
