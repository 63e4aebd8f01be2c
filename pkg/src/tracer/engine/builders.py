"""Reference architectures used by the CLI and the test-suite."""

from __future__ import annotations

from typing import Sequence

from tracer.engine.layers import Conv2d, Dense, Flatten, MaxPool2d, ReLU, Softmax
from tracer.engine.model import TappedModel


def mlp(input_dim: int, hidden: Sequence[int], classes: int, seed: int) -> TappedModel:
    layers = []
    width = input_dim
    for h in hidden:
        layers += [Dense(width, h), ReLU()]
        width = h
    layers += [Dense(width, classes), Softmax()]
    return TappedModel(layers, (input_dim,)).init_params(seed)


def convnet(input_shape: tuple[int, int, int], classes: int, seed: int,
            channels: int = 8, hidden: Sequence[int] = (32, 32, 32)) -> TappedModel:
    """conv3x3 -> relu -> maxpool2 -> dense stack -> softmax.

    The convolutional stage is tapped once, after pooling, so each tap is a
    block output.
    """
    c, h, w = input_shape
    layers = [Conv2d(c, channels, 3, padding=1), ReLU(), MaxPool2d(2), Flatten()]
    width = channels * (h // 2) * (w // 2)
    for size in hidden:
        layers += [Dense(width, size), ReLU()]
        width = size
    layers += [Dense(width, classes), Softmax()]
    taps = [2] + [5 + 2 * i for i in range(len(hidden) + 1)]
    return TappedModel(layers, input_shape, taps).init_params(seed)
