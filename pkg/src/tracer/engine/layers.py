"""Layer kinds for the sequential engine.

Every layer works on float64 batches with a leading batch axis. ``forward`` is
pure; ``forward_ctx`` additionally returns whatever ``backward`` needs, so a
tape of contexts is enough for reverse-mode differentiation.
"""

from __future__ import annotations

from typing import Any

import numpy as np

Shape = tuple[int, ...]


class ShapeError(ValueError):
    pass


class NotDifferentiableError(RuntimeError):
    pass


class Layer:
    kind = "layer"
    # kinds whose output counts as a new representation (tap candidates)
    representational = False
    elementwise = False

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.input_shape: Shape | None = None
        self.output_shape: Shape | None = None

    def build(self, input_shape: Shape) -> Shape:
        self.input_shape = tuple(int(s) for s in input_shape)
        self.output_shape = tuple(int(s) for s in self.infer_shape(self.input_shape))
        return self.output_shape

    def infer_shape(self, input_shape: Shape) -> Shape:
        return input_shape

    def param_shapes(self) -> dict[str, Shape]:
        return {}

    def init_params(self, rng: np.random.Generator) -> None:
        pass

    def config(self) -> dict[str, Any]:
        return {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_ctx(x)[0]

    def forward_ctx(self, x: np.ndarray) -> tuple[np.ndarray, Any]:
        raise NotImplementedError

    def backward(self, ctx: Any, grad: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        raise NotDifferentiableError(f"layer kind '{self.kind}' has no backward rule")

    def __repr__(self) -> str:
        cfg = ", ".join(f"{k}={v}" for k, v in self.config().items())
        return f"{type(self).__name__}({cfg})"


def _fan_in_uniform(rng: np.random.Generator, shape: Shape, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Dense(Layer):
    kind = "dense"
    representational = True

    def __init__(self, in_features: int, out_features: int, bias: bool = True) -> None:
        super().__init__()
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        self.bias = bool(bias)
        self.params["W"] = np.zeros((self.in_features, self.out_features))
        if self.bias:
            self.params["b"] = np.zeros(self.out_features)

    def infer_shape(self, input_shape: Shape) -> Shape:
        if input_shape != (self.in_features,):
            raise ShapeError(f"dense expects input ({self.in_features},), got {input_shape}")
        return (self.out_features,)

    def param_shapes(self) -> dict[str, Shape]:
        shapes = {"W": (self.in_features, self.out_features)}
        if self.bias:
            shapes["b"] = (self.out_features,)
        return shapes

    def init_params(self, rng: np.random.Generator) -> None:
        self.params["W"] = _fan_in_uniform(rng, (self.in_features, self.out_features), self.in_features)
        if self.bias:
            self.params["b"] = np.zeros(self.out_features)

    def config(self) -> dict[str, Any]:
        return {"in_features": self.in_features, "out_features": self.out_features, "bias": self.bias}

    def forward_ctx(self, x):
        out = x @ self.params["W"]
        if self.bias:
            out = out + self.params["b"]
        return out, x

    def backward(self, ctx, grad):
        x = ctx
        grads = {"W": x.T @ grad}
        if self.bias:
            grads["b"] = grad.sum(axis=0)
        return grad @ self.params["W"].T, grads


def _conv_out(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


class Conv2d(Layer):
    """Direct 2-D convolution (cross-correlation), NCHW layout."""

    kind = "conv2d"
    representational = True

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, padding: int = 0) -> None:
        super().__init__()
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel_size = int(kernel_size)
        self.stride = int(stride)
        self.padding = int(padding)
        self.params["W"] = np.zeros(self.param_shapes()["W"])
        self.params["b"] = np.zeros(self.out_channels)

    def infer_shape(self, input_shape):
        if len(input_shape) != 3 or input_shape[0] != self.in_channels:
            raise ShapeError(f"conv2d expects ({self.in_channels}, H, W), got {input_shape}")
        _, h, w = input_shape
        ho = _conv_out(h, self.kernel_size, self.stride, self.padding)
        wo = _conv_out(w, self.kernel_size, self.stride, self.padding)
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv2d kernel {self.kernel_size} larger than padded input {input_shape}")
        return (self.out_channels, ho, wo)

    def param_shapes(self):
        k = self.kernel_size
        return {"W": (self.out_channels, self.in_channels, k, k), "b": (self.out_channels,)}

    def init_params(self, rng):
        fan_in = self.in_channels * self.kernel_size**2
        self.params["W"] = _fan_in_uniform(rng, self.param_shapes()["W"], fan_in)
        self.params["b"] = np.zeros(self.out_channels)

    def config(self):
        return {"in_channels": self.in_channels, "out_channels": self.out_channels,
                "kernel_size": self.kernel_size, "stride": self.stride, "padding": self.padding}

    def _pad(self, x):
        p = self.padding
        if p == 0:
            return x
        return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))

    def forward_ctx(self, x):
        xp = self._pad(x)
        _, ho, wo = self.output_shape
        s, k = self.stride, self.kernel_size
        W = self.params["W"]
        out = np.zeros((x.shape[0], self.out_channels, ho, wo))
        for u in range(k):
            for v in range(k):
                patch = xp[:, :, u:u + s * ho:s, v:v + s * wo:s]
                out += np.einsum("ncij,oc->noij", patch, W[:, :, u, v])
        out += self.params["b"][None, :, None, None]
        return out, xp

    def backward(self, ctx, grad):
        xp = ctx
        _, ho, wo = self.output_shape
        s, k, p = self.stride, self.kernel_size, self.padding
        W = self.params["W"]
        gW = np.zeros_like(W)
        gxp = np.zeros_like(xp)
        for u in range(k):
            for v in range(k):
                sl = (slice(None), slice(None), slice(u, u + s * ho, s), slice(v, v + s * wo, s))
                gW[:, :, u, v] = np.einsum("noij,ncij->oc", grad, xp[sl])
                gxp[sl] += np.einsum("noij,oc->ncij", grad, W[:, :, u, v])
        gx = gxp[:, :, p:gxp.shape[2] - p, p:gxp.shape[3] - p] if p else gxp
        return gx, {"W": gW, "b": grad.sum(axis=(0, 2, 3))}


class ConvTranspose2d(Layer):
    """Transposed convolution: the input-adjoint of :class:`Conv2d`."""

    kind = "conv_transpose2d"
    representational = True

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, padding: int = 0) -> None:
        super().__init__()
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel_size = int(kernel_size)
        self.stride = int(stride)
        self.padding = int(padding)
        self.params["W"] = np.zeros(self.param_shapes()["W"])
        self.params["b"] = np.zeros(self.out_channels)

    def infer_shape(self, input_shape):
        if len(input_shape) != 3 or input_shape[0] != self.in_channels:
            raise ShapeError(f"conv_transpose2d expects ({self.in_channels}, H, W), got {input_shape}")
        _, h, w = input_shape
        k, s, p = self.kernel_size, self.stride, self.padding
        ho = (h - 1) * s - 2 * p + k
        wo = (w - 1) * s - 2 * p + k
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv_transpose2d padding {p} too large for {input_shape}")
        return (self.out_channels, ho, wo)

    def param_shapes(self):
        k = self.kernel_size
        return {"W": (self.in_channels, self.out_channels, k, k), "b": (self.out_channels,)}

    def init_params(self, rng):
        fan_in = self.in_channels * self.kernel_size**2
        self.params["W"] = _fan_in_uniform(rng, self.param_shapes()["W"], fan_in)
        self.params["b"] = np.zeros(self.out_channels)

    def config(self):
        return {"in_channels": self.in_channels, "out_channels": self.out_channels,
                "kernel_size": self.kernel_size, "stride": self.stride, "padding": self.padding}

    def forward_ctx(self, x):
        n, _, h, w = x.shape
        k, s, p = self.kernel_size, self.stride, self.padding
        W = self.params["W"]
        full = np.zeros((n, self.out_channels, (h - 1) * s + k, (w - 1) * s + k))
        for u in range(k):
            for v in range(k):
                full[:, :, u:u + s * h:s, v:v + s * w:s] += np.einsum("ncij,co->noij", x, W[:, :, u, v])
        out = full[:, :, p:full.shape[2] - p, p:full.shape[3] - p] if p else full
        out = out + self.params["b"][None, :, None, None]
        return out, x

    def backward(self, ctx, grad):
        x = ctx
        n, _, h, w = x.shape
        k, s, p = self.kernel_size, self.stride, self.padding
        W = self.params["W"]
        gfull = np.zeros((n, self.out_channels, (h - 1) * s + k, (w - 1) * s + k))
        if p:
            gfull[:, :, p:gfull.shape[2] - p, p:gfull.shape[3] - p] = grad
        else:
            gfull = grad
        gx = np.zeros_like(x)
        gW = np.zeros_like(W)
        for u in range(k):
            for v in range(k):
                g = gfull[:, :, u:u + s * h:s, v:v + s * w:s]
                gx += np.einsum("noij,co->ncij", g, W[:, :, u, v])
                gW[:, :, u, v] = np.einsum("ncij,noij->co", x, g)
        return gx, {"W": gW, "b": grad.sum(axis=(0, 2, 3))}


class MaxPool2d(Layer):
    kind = "maxpool2d"
    representational = True

    def __init__(self, kernel_size: int = 2, stride: int | None = None) -> None:
        super().__init__()
        self.kernel_size = int(kernel_size)
        self.stride = int(stride) if stride is not None else self.kernel_size

    def infer_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ShapeError(f"maxpool2d expects (C, H, W), got {input_shape}")
        c, h, w = input_shape
        ho = _conv_out(h, self.kernel_size, self.stride, 0)
        wo = _conv_out(w, self.kernel_size, self.stride, 0)
        if ho < 1 or wo < 1:
            raise ShapeError(f"maxpool2d window {self.kernel_size} larger than input {input_shape}")
        return (c, ho, wo)

    def config(self):
        return {"kernel_size": self.kernel_size, "stride": self.stride}

    def forward_ctx(self, x):
        _, ho, wo = self.output_shape
        k, s = self.kernel_size, self.stride
        windows = np.stack(
            [x[:, :, u:u + s * ho:s, v:v + s * wo:s] for u in range(k) for v in range(k)], axis=-1
        )
        idx = windows.argmax(axis=-1)
        out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
        return out, (x.shape, idx)

    def backward(self, ctx, grad):
        shape, idx = ctx
        _, ho, wo = self.output_shape
        k, s = self.kernel_size, self.stride
        gx = np.zeros(shape)
        for u in range(k):
            for v in range(k):
                hit = idx == u * k + v
                gx[:, :, u:u + s * ho:s, v:v + s * wo:s] += grad * hit
        return gx, {}


class ReLU(Layer):
    kind = "relu"
    elementwise = True

    def forward_ctx(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, ctx, grad):
        return grad * ctx, {}


class LeakyReLU(Layer):
    kind = "leaky_relu"
    elementwise = True

    def __init__(self, slope: float = 0.2) -> None:
        super().__init__()
        self.slope = float(slope)

    def config(self):
        return {"slope": self.slope}

    def forward_ctx(self, x):
        mask = x > 0
        return np.where(mask, x, self.slope * x), mask

    def backward(self, ctx, grad):
        return np.where(ctx, grad, self.slope * grad), {}


class Sigmoid(Layer):
    kind = "sigmoid"
    elementwise = True

    def forward_ctx(self, x):
        out = 0.5 * (1.0 + np.tanh(0.5 * x))
        return out, out

    def backward(self, ctx, grad):
        return grad * ctx * (1.0 - ctx), {}


class Tanh(Layer):
    kind = "tanh"
    elementwise = True

    def forward_ctx(self, x):
        out = np.tanh(x)
        return out, out

    def backward(self, ctx, grad):
        return grad * (1.0 - ctx**2), {}


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


class Softmax(Layer):
    kind = "softmax"
    elementwise = True

    def infer_shape(self, input_shape):
        if len(input_shape) != 1:
            raise ShapeError(f"softmax expects a flat feature vector, got {input_shape}")
        return input_shape

    def forward_ctx(self, x):
        out = softmax(x, axis=1)
        return out, out

    def backward(self, ctx, grad):
        s = ctx
        return s * (grad - (grad * s).sum(axis=1, keepdims=True)), {}


class Flatten(Layer):
    kind = "flatten"

    def infer_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward_ctx(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, ctx, grad):
        return grad.reshape(ctx), {}


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, shape: Shape) -> None:
        super().__init__()
        self.shape = tuple(int(s) for s in shape)

    def infer_shape(self, input_shape):
        if int(np.prod(input_shape)) != int(np.prod(self.shape)):
            raise ShapeError(f"cannot reshape {input_shape} to {self.shape}")
        return self.shape

    def config(self):
        return {"shape": list(self.shape)}

    def forward_ctx(self, x):
        return x.reshape((x.shape[0],) + self.shape), x.shape

    def backward(self, ctx, grad):
        return grad.reshape(ctx), {}


class Identity(Layer):
    kind = "identity"
    representational = True

    def forward_ctx(self, x):
        return x, None

    def backward(self, ctx, grad):
        return grad, {}


LAYER_KINDS: dict[str, type[Layer]] = {
    cls.kind: cls
    for cls in (Dense, Conv2d, ConvTranspose2d, MaxPool2d, ReLU, LeakyReLU, Sigmoid, Tanh,
                Softmax, Flatten, Reshape, Identity)
}


def layer_from_config(kind: str, config: dict[str, Any]) -> Layer:
    try:
        cls = LAYER_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown layer kind '{kind}'") from None
    return cls(**config)


def flops(layer: Layer) -> int:
    """Analytic multiply-accumulate count per sample (weights + bias adds)."""
    if isinstance(layer, Dense):
        return layer.in_features * layer.out_features + (layer.out_features if layer.bias else 0)
    if isinstance(layer, Conv2d):
        _, ho, wo = layer.output_shape
        k = layer.kernel_size
        return k * k * layer.in_channels * layer.out_channels * ho * wo + layer.out_channels * ho * wo
    if isinstance(layer, ConvTranspose2d):
        _, h, w = layer.input_shape
        _, ho, wo = layer.output_shape
        k = layer.kernel_size
        return k * k * layer.in_channels * layer.out_channels * h * w + layer.out_channels * ho * wo
    return 0
