from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from tracer.data.dataset import LabeledDataset
from tracer.engine.losses import softmax_cross_entropy
from tracer.engine.model import TappedModel, gradients
from tracer.engine.optim import Adam

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    seed: int
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")


@dataclass
class TrainedModel:
    model: TappedModel
    history: list[float] = field(default_factory=list)


def accuracy(model: TappedModel, dataset: LabeledDataset) -> float:
    if len(dataset) == 0:
        raise ValueError("accuracy of an empty dataset is undefined")
    return float((model.predict(dataset.features) == dataset.labels).mean())


def train_classifier(model: TappedModel, dataset: LabeledDataset, config: TrainConfig) -> TrainedModel:
    """Mini-batch Adam on softmax cross-entropy; returns a trained copy.

    A trailing softmax layer is folded into the loss so gradients are taken
    on logits.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    model = model.copy()
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.parameters(), lr=config.lr)
    stop = model.logit_stop()
    history = []
    n = len(dataset)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            labels = dataset.labels[idx]
            value, grads, _ = gradients(
                model, dataset.features[idx], lambda out: softmax_cross_entropy(out, labels), stop=stop
            )
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch}, batch starting {start}"
                )
            opt.step(grads)
            total += value * len(idx)
        history.append(total / n)
        log.debug("epoch %d loss %.6f", epoch, history[-1])
    for name, p in model.parameters().items():
        if not np.all(np.isfinite(p)):
            raise TrainingDivergedError(f"parameter {name} became non-finite")
    return TrainedModel(model, history)
