"""Model variants, training with convergence logging, and signal recovery.

Four architectures share one input geometry (square windows, sensor count x
sensor count): three convolutional variants differing in depth and in how
many faulted sensors they predict, plus a plain dense baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import IO

import numpy as np

from . import signal_core
from .errors import ConfigurationError, DimensionError, DivergenceError
from .nn_engine import (
    Activation,
    Adam,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    MaxPool2D,
    Network,
    rmse_loss,
)
from .rng import derive_rng
from .signal_core import MaskSpec, ScaleParams, WindowSet

VARIANTS = ("cnn_a", "cnn_b", "cnn_c", "nn_baseline")

# samples predicted per faulted sensor = window length = sensor count
WINDOW_LEN = 30


@dataclass(frozen=True)
class ModelVariant:
    kind: str

    def __post_init__(self):
        if self.kind not in VARIANTS:
            raise ConfigurationError(
                f"unknown variant '{self.kind}', expected one of {VARIANTS}"
            )

    @property
    def n_faulted(self) -> int:
        return 2 if self.kind == "cnn_c" else 1

    @property
    def n_conv_layers(self) -> int:
        return {"cnn_a": 3, "cnn_b": 2, "cnn_c": 3, "nn_baseline": 0}[self.kind]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    validation_fraction: float = 0.2
    seed: int = 0
    learning_rate: float = 1e-3
    lr_decay: float = 1.0  # multiplicative per-epoch factor; 1.0 disables decay
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dropout_rate: float = 0.2

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigurationError("validation_fraction must be in (0, 1)")


@dataclass
class ConvergenceLog:
    """Per-epoch training and validation metrics."""

    train_rmse: list[float] = field(default_factory=list)
    train_mae: list[float] = field(default_factory=list)
    val_rmse: list[float] = field(default_factory=list)
    val_mae: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_rmse)

    def write_csv(self, dest: str | IO[str]) -> None:
        if isinstance(dest, str):
            with open(dest, "w", encoding="utf-8", newline="\n") as fh:
                self.write_csv(fh)
            return
        dest.write("epoch,train_rmse,train_mae,val_rmse,val_mae\n")
        rows = zip(self.train_rmse, self.train_mae, self.val_rmse, self.val_mae)
        for epoch, (tr, tm, vr, vm) in enumerate(rows, start=1):
            dest.write(f"{epoch},{tr!r},{tm!r},{vr!r},{vm!r}\n")


def build_model(
    variant: ModelVariant,
    n_sensors: int = 30,
    seed: int = 0,
    dropout_rate: float = 0.2,
    conv_activation: Activation | None = None,
    hidden_widths: tuple[int, int] = (256, 64),
) -> Network:
    """Assemble one of the four architectures for square n_sensors windows.

    The three-stage CNN uses kernels 17/8/4 with 32/64/128 filters,
    2x2 stride-1 pooling after each convolution, and a sigmoid dense head.
    Any geometry whose conv/pool sizes come out non-integral raises a shape
    error naming the offending layer.
    """
    act = conv_activation if conv_activation is not None else Activation("elu", 1.0)
    rng = derive_rng(seed, "network-init")
    # square windows: samples predicted per faulted sensor = window length = Ns
    out_dim = n_sensors * variant.n_faulted

    if variant.kind == "nn_baseline":
        layers = [
            Flatten(),
            Dense(n_sensors * n_sensors, hidden_widths[0], act, rng),
            Dense(hidden_widths[0], hidden_widths[1], act, rng),
            Dense(hidden_widths[1], out_dim, Activation("sigmoid"), rng),
        ]
        return Network(layers, seed=seed)

    stages = [(17, 32), (8, 64), (4, 128)]
    if variant.kind == "cnn_b":
        stages = stages[:2]

    layers: list = []
    shape = (n_sensors, n_sensors, 1)
    in_channels = 1
    for i, (kernel, filters) in enumerate(stages, start=1):
        conv = Conv2D(kernel, in_channels, filters, 1, act, rng)
        pool = MaxPool2D(2, 1)
        try:
            shape = conv.output_shape(shape)
            shape = pool.output_shape(shape)
        except Exception as exc:
            raise type(exc)(f"stage {i} (kernel {kernel}): {exc}") from exc
        layers += [conv, pool, Dropout(dropout_rate, rng)]
        in_channels = filters
    flat_dim = int(np.prod(shape))
    # every CNN variant reads out from the same 128-feature fully connected
    # vector, so depth differences live in the convolutional stages rather
    # than in the size of the readout; the full three-stage network already
    # pools down to 128 values, shallower ones reduce to it with a dense layer
    layers.append(Flatten())
    if flat_dim != 128:
        layers.append(Dense(flat_dim, 128, act, rng))
    layers.append(Dense(128, out_dim, Activation("sigmoid"), rng))
    return Network(layers, seed=seed)


def _evaluate(model: Network, window_set: WindowSet) -> tuple[float, float]:
    """Mean RMSE and MAE over a window set, in inference mode."""
    rmses, maes = [], []
    for x, t in zip(window_set.inputs, window_set.targets):
        pred = model.forward(x[..., None], training=False)
        rmses.append(signal_core.rmse(pred, t))
        maes.append(signal_core.mae(pred, t))
    return float(np.mean(rmses)), float(np.mean(maes))


def train(
    model: Network,
    train_set: WindowSet,
    val_set: WindowSet,
    cfg: TrainConfig,
) -> tuple[Network, ConvergenceLog]:
    """Train per-window (batch size 1) with Adam and a seeded epoch shuffle."""
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigurationError("training and validation sets must be nonempty")
    wl, ns = train_set.inputs.shape[1], train_set.inputs.shape[2]
    out_len = model.shape_chain((wl, ns, 1))[-1][0]
    expected = train_set.targets.shape[1]
    if out_len != expected:
        raise DimensionError(
            f"model predicts {out_len} values but targets have {expected}"
        )

    optimizer = Adam(
        model.params(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps
    )
    shuffle_rng = derive_rng(cfg.seed, "epoch-shuffle")
    log = ConvergenceLog()
    for epoch in range(1, cfg.epochs + 1):
        # the RMSE loss gradient has constant magnitude, so without decay the
        # iterates orbit the minimum at a floor proportional to the step size
        optimizer.learning_rate = cfg.learning_rate * cfg.lr_decay ** (epoch - 1)
        order = shuffle_rng.permutation(len(train_set))
        for w in order:
            x = train_set.inputs[w][..., None]
            pred = model.forward(x, training=True)
            loss, grad = rmse_loss(pred, train_set.targets[w])
            if not np.isfinite(loss):
                raise DivergenceError(epoch)
            model.backward(grad)
            optimizer.step()
        tr_rmse, tr_mae = _evaluate(model, train_set)
        va_rmse, va_mae = _evaluate(model, val_set)
        if not all(np.isfinite([tr_rmse, tr_mae, va_rmse, va_mae])):
            raise DivergenceError(epoch)
        log.train_rmse.append(tr_rmse)
        log.train_mae.append(tr_mae)
        log.val_rmse.append(va_rmse)
        log.val_mae.append(va_mae)
    return model, log


def recover(
    model: Network,
    window: np.ndarray,
    scale: ScaleParams,
    mask: MaskSpec,
) -> dict[int, np.ndarray]:
    """Predict the masked columns of one window, in physical units.

    The window's faulted columns are zeroed before the forward pass, so the
    result never depends on whatever values they held. The model output is
    split into window-length segments, one per faulted sensor in mask order,
    and each is denormalized with its own channel scale.
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or window.shape[0] != window.shape[1]:
        raise DimensionError(f"expected a square window, got shape {window.shape}")
    mask.validate(window.shape[1])
    wl = window.shape[0]

    x = window.copy()
    x[:, list(mask.faulted)] = 0.0
    pred = model.forward(x[..., None], training=False)
    if pred.shape[0] != wl * len(mask.faulted):
        raise ConfigurationError(
            f"model predicts {pred.shape[0]} values; mask of {len(mask.faulted)} "
            f"sensor(s) needs {wl * len(mask.faulted)}"
        )
    out = {}
    for k, ch in enumerate(mask.faulted):
        out[ch] = signal_core.denormalize(pred[k * wl : (k + 1) * wl], ch, scale)
    return out


def max_window_error(pred: np.ndarray, ref: np.ndarray) -> float:
    """Largest absolute deviation over a window, as a percent of the
    normalized [0, 1] range."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    ref = np.asarray(ref, dtype=np.float64).ravel()
    if pred.shape != ref.shape:
        raise DimensionError(f"length mismatch: {pred.shape[0]} vs {ref.shape[0]}")
    return float(100.0 * np.max(np.abs(pred - ref)))


def mean_predictor_rmse(train_set: WindowSet, val_set: WindowSet) -> float:
    """RMSE of the constant per-sensor-mean predictor, the trivial baseline.

    Predicts each target element as the mean of the training targets at that
    position's sensor, evaluated on the validation windows.
    """
    mean = train_set.targets.mean(axis=0)
    rmses = [signal_core.rmse(mean, t) for t in val_set.targets]
    return float(np.mean(rmses))
