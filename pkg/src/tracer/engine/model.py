"""Sequential model with activation taps and a context tape for gradients."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from tracer.engine.layers import Layer, ShapeError, Softmax, Shape


def default_tap_points(layers: Sequence[Layer]) -> list[int]:
    """Post-activation outputs of every representation-changing layer.

    A dense/conv/pool/identity layer is tapped after the run of elementwise
    activations that directly follows it.
    """
    taps = []
    i = 0
    while i < len(layers):
        if layers[i].representational:
            j = i
            while j + 1 < len(layers) and layers[j + 1].elementwise:
                j += 1
            taps.append(j)
            i = j + 1
        else:
            i += 1
    return taps


class TappedModel:
    def __init__(self, layers: Sequence[Layer], input_shape: Shape,
                 tap_points: Sequence[int] | None = None) -> None:
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.build(shape)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
            for name, pshape in layer.param_shapes().items():
                if layer.params[name].shape != tuple(pshape):
                    raise ShapeError(
                        f"layer {i} ({layer.kind}): parameter {name} has shape "
                        f"{layer.params[name].shape}, expected {tuple(pshape)}"
                    )
        self.output_shape = shape
        taps = default_tap_points(self.layers) if tap_points is None else [int(t) for t in tap_points]
        if any(b <= a for a, b in zip(taps, taps[1:])):
            raise ValueError(f"tap points must be strictly increasing: {taps}")
        if taps and (taps[0] < 0 or taps[-1] >= len(self.layers)):
            raise ValueError(f"tap points out of range for {len(self.layers)} layers: {taps}")
        self.tap_points = taps

    def __repr__(self) -> str:
        inner = ", ".join(repr(layer) for layer in self.layers)
        return f"TappedModel(input_shape={self.input_shape}, taps={self.tap_points}, [{inner}])"

    def copy(self) -> "TappedModel":
        return copy.deepcopy(self)

    def init_params(self, seed: int) -> "TappedModel":
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.init_params(rng)
        return self

    def parameters(self) -> dict[str, np.ndarray]:
        """Parameter arrays keyed by ``"<layer index>.<name>"`` (live references)."""
        return {f"{i}.{name}": arr for i, layer in enumerate(self.layers)
                for name, arr in layer.params.items()}

    def n_parameters(self) -> int:
        return int(sum(a.size for a in self.parameters().values()))

    def _check_batch(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch, dtype=np.float64)
        if batch.shape[1:] != self.input_shape:
            first = self.layers[0].kind if self.layers else "input"
            raise ShapeError(
                f"layer 0 ({first}): expected batch of shape (N, {', '.join(map(str, self.input_shape))}), "
                f"got {batch.shape}"
            )
        return batch

    def forward(self, batch: np.ndarray, taps: bool = True,
                stop: int | None = None) -> tuple[np.ndarray, dict[int, np.ndarray]]:
        """Run the model; returns (final output, {tap layer index: output})."""
        x = self._check_batch(batch)
        recorded: dict[int, np.ndarray] = {}
        tapset = set(self.tap_points) if taps else ()
        end = len(self.layers) if stop is None else stop
        for i, layer in enumerate(self.layers[:end]):
            x = layer.forward(x)
            if i in tapset:
                recorded[i] = x
        return x, recorded

    def __call__(self, batch: np.ndarray) -> np.ndarray:
        return self.forward(batch, taps=False)[0]

    def predict(self, batch: np.ndarray) -> np.ndarray:
        return self(batch).argmax(axis=1)

    def logits(self, batch: np.ndarray) -> np.ndarray:
        """Output before a trailing softmax (the final output otherwise)."""
        return self.forward(batch, taps=False, stop=self.logit_stop())[0]

    def logit_stop(self) -> int:
        if self.layers and isinstance(self.layers[-1], Softmax):
            return len(self.layers) - 1
        return len(self.layers)

    def tape(self, batch: np.ndarray, stop: int | None = None) -> "Tape":
        x = self._check_batch(batch)
        end = len(self.layers) if stop is None else stop
        ctxs = []
        for layer in self.layers[:end]:
            x, ctx = layer.forward_ctx(x)
            ctxs.append(ctx)
        return Tape(self, ctxs, x)


@dataclass
class Tape:
    """Recorded forward pass; ``backward`` yields gradients keyed like ``parameters()``."""

    model: TappedModel
    ctxs: list
    output: np.ndarray
    grads: dict[str, np.ndarray] = field(default_factory=dict)

    def backward(self, grad_output: np.ndarray) -> np.ndarray:
        """Back-propagate ``dL/d output``; returns ``dL/d input``."""
        grad = np.asarray(grad_output, dtype=np.float64)
        if grad.shape != self.output.shape:
            raise ShapeError(f"gradient shape {grad.shape} does not match output {self.output.shape}")
        self.grads = {}
        for i in range(len(self.ctxs) - 1, -1, -1):
            layer = self.model.layers[i]
            grad, pgrads = layer.backward(self.ctxs[i], grad)
            for name, g in pgrads.items():
                self.grads[f"{i}.{name}"] = g
        return grad


LossFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


def gradients(model: TappedModel, batch: np.ndarray, loss_fn: LossFn,
              stop: int | None = None) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """Loss value, parameter gradients and input gradient for ``loss_fn(model(batch))``.

    ``loss_fn`` maps the model output to ``(value, dvalue/doutput)``.
    """
    tape = model.tape(batch, stop=stop)
    value, grad_out = loss_fn(tape.output)
    grad_in = tape.backward(grad_out)
    params = model.parameters()
    grads = {k: tape.grads.get(k, np.zeros_like(v)) for k, v in params.items()}
    return float(value), grads, grad_in
