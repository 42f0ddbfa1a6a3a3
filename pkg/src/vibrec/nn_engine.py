"""Minimal from-scratch neural network engine.

Layers (valid convolution, overlapping max pooling, inverted dropout, dense,
flatten) operate on float64 numpy arrays in height x width x channels layout.
Each layer caches what its backward pass needs; analytic gradients are
verified against central finite differences by ``gradient_check``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    ConfigurationError,
    DimensionError,
    ShapeError,
    StateError,
)
from .rng import derive_rng

CHECKPOINT_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# Activations


@dataclass(frozen=True)
class Activation:
    """Elementwise nonlinearity: relu, elu, leaky_relu, sigmoid or identity."""

    kind: str = "identity"
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in ("relu", "elu", "leaky_relu", "sigmoid", "identity"):
            raise ConfigurationError(f"unknown activation '{self.kind}'")
        if self.kind in ("elu", "leaky_relu") and not self.alpha > 0:
            raise ConfigurationError(f"{self.kind} needs alpha > 0, got {self.alpha}")

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "relu":
            return np.maximum(x, 0.0)
        if self.kind == "elu":
            # exp only on the negative branch to avoid overflow for large x
            return np.where(x < 0, self.alpha * np.expm1(np.minimum(x, 0.0)), x)
        if self.kind == "leaky_relu":
            return np.where(x < 0, self.alpha * x, x)
        if self.kind == "sigmoid":
            pos = 1.0 / (1.0 + np.exp(-np.maximum(x, 0.0)))
            ex = np.exp(np.minimum(x, 0.0))
            return np.where(x >= 0, pos, ex / (1.0 + ex))
        return x

    def derivative(self, x: np.ndarray) -> np.ndarray:
        """Derivative with respect to the pre-activation x."""
        if self.kind == "relu":
            return (x > 0).astype(np.float64)
        if self.kind == "elu":
            return np.where(x < 0, self.alpha * np.exp(np.minimum(x, 0.0)), 1.0)
        if self.kind == "leaky_relu":
            return np.where(x < 0, self.alpha, 1.0)
        if self.kind == "sigmoid":
            s = self.apply(x)
            return s * (1.0 - s)
        return np.ones_like(x)


def relu(x):
    return Activation("relu").apply(np.asarray(x, dtype=np.float64))


def elu(x, alpha: float = 1.0):
    return Activation("elu", alpha).apply(np.asarray(x, dtype=np.float64))


def leaky_relu(x, alpha: float = 0.01):
    return Activation("leaky_relu", alpha).apply(np.asarray(x, dtype=np.float64))


def sigmoid(x):
    return Activation("sigmoid").apply(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# Parameters and layers


@dataclass
class Param:
    """A trainable tensor with its gradient slot."""

    name: str
    value: np.ndarray
    grad: np.ndarray | None = None


def conv_output_size(input_size: int, kernel: int, stride: int) -> int:
    """Valid-convolution output size (I - K) / stride + 1; must be integral."""
    if input_size < kernel:
        raise ShapeError(f"input size {input_size} smaller than kernel {kernel}")
    if (input_size - kernel) % stride != 0:
        raise ShapeError(
            f"(I - K) = {input_size - kernel} not divisible by stride {stride}"
        )
    return (input_size - kernel) // stride + 1


class Layer:
    """Base layer: forward caches, backward consumes the cache once."""

    def params(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError

    def spec(self) -> dict:
        raise NotImplementedError


class Conv2D(Layer):
    """Valid 2-D convolution with per-filter bias and fused activation."""

    def __init__(
        self,
        kernel_size: int,
        in_channels: int,
        filters: int,
        stride: int = 1,
        activation: Activation = Activation("identity"),
        rng: np.random.Generator | None = None,
    ):
        self.kernel_size = kernel_size
        self.in_channels = in_channels
        self.filters = filters
        self.stride = stride
        self.activation = activation

        fan_in = kernel_size * kernel_size * in_channels
        fan_out = kernel_size * kernel_size * filters
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        rng = rng if rng is not None else np.random.default_rng(0)
        # weight matrix holds kernels flattened in (K, K, Cin) order
        self.weight = Param(
            "kernels", rng.uniform(-limit, limit, size=(fan_in, filters))
        )
        self.bias = Param("bias", np.zeros(filters))
        self._cache = None

    def params(self):
        return [self.weight, self.bias]

    def output_shape(self, input_shape):
        h, w, c = input_shape
        if c != self.in_channels:
            raise ShapeError(f"expected {self.in_channels} channels, got {c}")
        oh = conv_output_size(h, self.kernel_size, self.stride)
        ow = conv_output_size(w, self.kernel_size, self.stride)
        return (oh, ow, self.filters)

    def _im2col(self, x: np.ndarray) -> tuple[np.ndarray, int, int]:
        k, s = self.kernel_size, self.stride
        oh, ow, _ = self.output_shape(x.shape)
        # (oh_full, ow_full, C, K, K) -> stride subsample -> (oh, ow, K, K, C)
        view = sliding_window_view(x, (k, k), axis=(0, 1))[::s, ::s]
        cols = view.transpose(0, 1, 3, 4, 2).reshape(oh * ow, k * k * self.in_channels)
        return cols, oh, ow

    def forward(self, x, training=False):
        cols, oh, ow = self._im2col(x)
        z = cols @ self.weight.value + self.bias.value
        self._cache = (x.shape, cols, z, oh, ow)
        return self.activation.apply(z).reshape(oh, ow, self.filters)

    def backward(self, grad):
        if self._cache is None:
            raise StateError("conv backward called without a cached forward pass")
        in_shape, cols, z, oh, ow = self._cache
        self._cache = None
        gz = grad.reshape(oh * ow, self.filters) * self.activation.derivative(z)
        self.weight.grad = cols.T @ gz
        self.bias.grad = gz.sum(axis=0)

        dcols = (gz @ self.weight.value.T).reshape(
            oh, ow, self.kernel_size, self.kernel_size, self.in_channels
        )
        dx = np.zeros(in_shape)
        s = self.stride
        for ki in range(self.kernel_size):
            for kj in range(self.kernel_size):
                dx[ki : ki + oh * s : s, kj : kj + ow * s : s, :] += dcols[
                    :, :, ki, kj, :
                ]
        return dx

    def spec(self):
        return {
            "kind": "conv",
            "kernel_size": self.kernel_size,
            "in_channels": self.in_channels,
            "filters": self.filters,
            "stride": self.stride,
            "activation": {"kind": self.activation.kind, "alpha": self.activation.alpha},
        }


class MaxPool2D(Layer):
    """Max pooling; overlapping when stride < size. Ties go to the first
    maximal index in row-major order."""

    def __init__(self, size: int, stride: int = 1):
        self.size = size
        self.stride = stride
        self._cache = None

    def output_shape(self, input_shape):
        h, w, c = input_shape
        oh = conv_output_size(h, self.size, self.stride)
        ow = conv_output_size(w, self.size, self.stride)
        return (oh, ow, c)

    def forward(self, x, training=False):
        p, s = self.size, self.stride
        oh, ow, c = self.output_shape(x.shape)
        view = sliding_window_view(x, (p, p), axis=(0, 1))[::s, ::s]  # (oh,ow,c,p,p)
        flat = view.reshape(oh, ow, c, p * p)
        arg = flat.argmax(axis=3)  # first max on ties
        out = np.take_along_axis(flat, arg[..., None], axis=3)[..., 0]

        # flat indices into the input for the backward scatter
        ai, aj = np.divmod(arg, p)
        rows = np.arange(oh)[:, None, None] * s + ai
        cols = np.arange(ow)[None, :, None] * s + aj
        chans = np.arange(c)[None, None, :]
        flat_idx = (rows * x.shape[1] + cols) * c + chans
        self._cache = (x.shape, flat_idx)
        return out

    def backward(self, grad):
        if self._cache is None:
            raise StateError("maxpool backward called without a cached forward pass")
        in_shape, flat_idx = self._cache
        self._cache = None
        dx = np.zeros(int(np.prod(in_shape)))
        np.add.at(dx, flat_idx.ravel(), grad.ravel())
        return dx.reshape(in_shape)

    def spec(self):
        return {"kind": "maxpool", "size": self.size, "stride": self.stride}


class Dropout(Layer):
    """Inverted dropout: scales survivors by 1/(1-rate) so inference is an
    identity map. The mask stream is owned by the layer and is reproducible
    from the network seed."""

    def __init__(self, rate: float, rng: np.random.Generator | None = None):
        if not 0.0 <= rate < 1.0:
            raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._mask = None

    def output_shape(self, input_shape):
        return input_shape

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._mask = np.ones(x.shape)
            return x
        keep = self.rng.random(x.shape) >= self.rate
        self._mask = keep / (1.0 - self.rate)
        return x * self._mask

    def backward(self, grad):
        if self._mask is None:
            raise StateError("dropout backward called without a forward pass")
        mask, self._mask = self._mask, None
        return grad * mask

    def spec(self):
        return {"kind": "dropout", "rate": self.rate}


class Flatten(Layer):
    def __init__(self):
        self._shape = None

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x, training=False):
        self._shape = x.shape
        return x.ravel()

    def backward(self, grad):
        if self._shape is None:
            raise StateError("flatten backward called without a forward pass")
        shape, self._shape = self._shape, None
        return grad.reshape(shape)

    def spec(self):
        return {"kind": "flatten"}


class Dense(Layer):
    """Fully connected layer: act(x W + b)."""

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        activation: Activation = Activation("identity"),
        rng: np.random.Generator | None = None,
    ):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Param("weights", rng.uniform(-limit, limit, (in_dim, out_dim)))
        self.bias = Param("bias", np.zeros(out_dim))
        self._cache = None

    def params(self):
        return [self.weight, self.bias]

    def output_shape(self, input_shape):
        if input_shape != (self.in_dim,):
            raise DimensionError(
                f"dense layer expects input shape ({self.in_dim},), got {input_shape}"
            )
        return (self.out_dim,)

    def forward(self, x, training=False):
        if x.shape != (self.in_dim,):
            raise DimensionError(
                f"dense layer expects length {self.in_dim}, got {x.shape}"
            )
        z = x @ self.weight.value + self.bias.value
        self._cache = (x, z)
        return self.activation.apply(z)

    def backward(self, grad):
        if self._cache is None:
            raise StateError("dense backward called without a cached forward pass")
        (x, z), self._cache = self._cache, None
        gz = grad * self.activation.derivative(z)
        self.weight.grad = np.outer(x, gz)
        self.bias.grad = gz
        return self.weight.value @ gz

    def spec(self):
        return {
            "kind": "dense",
            "in_dim": self.in_dim,
            "out_dim": self.out_dim,
            "activation": {"kind": self.activation.kind, "alpha": self.activation.alpha},
        }


# ---------------------------------------------------------------------------
# Network, loss, optimizer


class Network:
    """Ordered layer stack with a seed that reproduces weights and dropout."""

    def __init__(self, layers: list[Layer], seed: int = 0):
        self.layers = layers
        self.seed = seed

    def params(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params()]

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        out = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            out = layer.forward(out, training=training)
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def shape_chain(self, input_shape: tuple[int, ...]) -> list[tuple[int, ...]]:
        """Input shape followed by every layer's output shape."""
        shapes = [input_shape]
        for layer in self.layers:
            shapes.append(layer.output_shape(shapes[-1]))
        return shapes

    def n_params(self) -> int:
        return sum(p.value.size for p in self.params())


def rmse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Root-mean-square-error loss and its gradient with respect to pred.

    The gradient at zero loss is defined as the zero tensor.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.sqrt(np.mean(diff**2)))
    if loss == 0.0:
        return 0.0, np.zeros_like(pred)
    return loss, diff / (diff.size * loss)


class Adam:
    """Adam with bias correction; moment state persists across steps."""

    def __init__(
        self,
        params: list[Param],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]

    def step(self):
        for p in self.params:
            if p.grad is None:
                raise StateError(
                    f"optimizer step before backward: '{p.name}' has no gradient"
                )
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for i, p in enumerate(self.params):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * p.grad
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * p.grad**2
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.value -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state(self) -> dict:
        return {
            "t": self.t,
            "m": [m.ravel().tolist() for m in self.m],
            "v": [v.ravel().tolist() for v in self.v],
        }

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = [
            np.array(m, dtype=np.float64).reshape(p.value.shape)
            for m, p in zip(state["m"], self.params)
        ]
        self.v = [
            np.array(v, dtype=np.float64).reshape(p.value.shape)
            for v, p in zip(state["v"], self.params)
        ]


# ---------------------------------------------------------------------------
# Gradient verification


def gradient_check(
    network: Network,
    x: np.ndarray,
    target: np.ndarray,
    eps: float = 1e-5,
    samples_per_param: int = 8,
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, float]]:
    """Compare analytic gradients against central finite differences.

    Runs in inference mode so dropout is an identity map (with an active,
    unfrozen dropout mask the loss is not a deterministic function of the
    weights and the check is meaningless). Samples up to
    ``samples_per_param`` entries of every parameter tensor. Returns the
    overall max relative error and the worst error per layer.
    """
    rng = rng if rng is not None else np.random.default_rng(0)

    def loss_at():
        loss = rmse_loss(network.forward(x, training=False), target)[0]
        # pooling winners chosen during this forward; a perturbation that
        # flips any of them puts a kink inside the difference interval
        selections = [
            layer._cache[1].copy()
            for layer in network.layers
            if isinstance(layer, MaxPool2D) and layer._cache is not None
        ]
        return loss, selections

    def same_selections(a, b):
        return len(a) == len(b) and all(
            np.array_equal(u, v) for u, v in zip(a, b)
        )

    loss, grad = rmse_loss(network.forward(x, training=False), target)
    network.backward(grad)

    worst = 0.0
    per_layer: dict[str, float] = {}
    for li, layer in enumerate(network.layers):
        for p in layer.params():
            analytic = p.grad.ravel()
            flat = p.value.ravel()
            n = flat.size
            idx = (
                np.arange(n)
                if n <= samples_per_param
                else rng.choice(n, size=samples_per_param, replace=False)
            )
            for i in idx:
                keep = flat[i]
                flat[i] = keep + eps
                lp, sel_p = loss_at()
                flat[i] = keep - eps
                lm, sel_m = loss_at()
                flat[i] = keep
                if not same_selections(sel_p, sel_m):
                    # the loss is piecewise-smooth in this coordinate and the
                    # interval straddles a max-pool switch; a central
                    # difference there does not estimate either one-sided
                    # derivative, so the sample carries no information
                    continue
                numeric = (lp - lm) / (2.0 * eps)
                a = analytic[i]
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                key = f"layer{li}:{layer.spec()['kind']}:{p.name}"
                per_layer[key] = max(per_layer.get(key, 0.0), rel)
                worst = max(worst, rel)
    return worst, per_layer


# ---------------------------------------------------------------------------
# Checkpoint serialization


def _layer_from_spec(spec: dict, rng: np.random.Generator) -> Layer:
    kind = spec["kind"]
    if kind == "conv":
        act = Activation(**spec["activation"])
        return Conv2D(
            spec["kernel_size"],
            spec["in_channels"],
            spec["filters"],
            spec["stride"],
            act,
            rng,
        )
    if kind == "maxpool":
        return MaxPool2D(spec["size"], spec["stride"])
    if kind == "dropout":
        return Dropout(spec["rate"], rng)
    if kind == "flatten":
        return Flatten()
    if kind == "dense":
        act = Activation(**spec["activation"])
        return Dense(spec["in_dim"], spec["out_dim"], act, rng)
    raise ConfigurationError(f"unknown layer kind '{kind}'")


def save_checkpoint(network: Network, path: str, optimizer: Adam | None = None) -> None:
    doc = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "seed": network.seed,
        "layers": [
            {
                "spec": layer.spec(),
                "params": {
                    p.name: {"shape": list(p.value.shape), "values": p.value.ravel().tolist()}
                    for p in layer.params()
                },
            }
            for layer in network.layers
        ],
        "optimizer": optimizer.state() if optimizer is not None else None,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path: str) -> tuple[Network, dict | None]:
    """Rebuild a network from a checkpoint; returns (network, optimizer state)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise ConfigurationError(
            f"unsupported checkpoint schema version {doc.get('schema_version')}"
        )
    seed = int(doc["seed"])
    rng = derive_rng(seed, "network-init")
    layers = []
    for entry in doc["layers"]:
        layer = _layer_from_spec(entry["spec"], rng)
        for p in layer.params():
            stored = entry["params"][p.name]
            p.value = np.array(stored["values"], dtype=np.float64).reshape(
                stored["shape"]
            )
        layers.append(layer)
    return Network(layers, seed=seed), doc.get("optimizer")
