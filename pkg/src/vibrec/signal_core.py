"""Ingest, normalize, window and mask multi-channel vibration records.

Records are time-by-sensor matrices. Channels are min-max rescaled to [0, 1]
per sensor, cut into overlapping square windows (window length = sensor
count), and each window is paired with the columns removed by the fault
mask, which become the training target.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    DataError,
    DegenerateChannelError,
    DimensionError,
    InsufficientDataError,
    ParseError,
)
from .rng import derive_rng


@dataclass(frozen=True)
class RecordMatrix:
    """Raw acceleration record: data[t, sensor] with a fixed sampling step dt."""

    data: np.ndarray
    dt: float

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise DataError(f"record must be a 2-D matrix, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DataError("record contains non-finite entries")
        if not (self.dt > 0):
            raise DataError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "data", data)

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def n_sensors(self) -> int:
        return self.data.shape[1]

    @property
    def fs(self) -> float:
        return 1.0 / self.dt


@dataclass(frozen=True)
class ScaleParams:
    """Per-channel (min, max) pairs needed to invert the normalization."""

    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        mins = np.asarray(self.mins, dtype=np.float64)
        maxs = np.asarray(self.maxs, dtype=np.float64)
        if mins.shape != maxs.shape or mins.ndim != 1:
            raise DimensionError("mins/maxs must be 1-D vectors of equal length")
        bad = np.nonzero(~(maxs > mins))[0]
        if bad.size:
            raise DegenerateChannelError(
                f"channel(s) {bad.tolist()} have max <= min (zero range)"
            )
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)

    @property
    def n_channels(self) -> int:
        return self.mins.shape[0]


@dataclass(frozen=True)
class NormalizedMatrix:
    """Min-max normalized record plus the scale parameters to undo it."""

    data: np.ndarray
    scale: ScaleParams
    dt: float

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def n_sensors(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class WindowingConfig:
    """Square-window extraction settings: window length WL, stride WS."""

    window_len: int
    stride: int = 6

    def __post_init__(self):
        if self.window_len < 1 or self.stride < 1:
            raise ConfigurationError("window_len and stride must be positive")


@dataclass(frozen=True)
class MaskSpec:
    """Indices of faulted sensors whose columns are zeroed in the input."""

    faulted: tuple[int, ...]

    def __init__(self, faulted: Sequence[int]):
        faulted = tuple(int(i) for i in faulted)
        if len(faulted) not in (1, 2):
            raise ConfigurationError("mask must name 1 or 2 sensors")
        if len(set(faulted)) != len(faulted):
            raise ConfigurationError("mask indices must be distinct")
        object.__setattr__(self, "faulted", faulted)

    def validate(self, n_sensors: int) -> None:
        for i in self.faulted:
            if not 0 <= i < n_sensors:
                raise ConfigurationError(
                    f"mask index {i} out of range for {n_sensors} sensors"
                )


@dataclass(frozen=True)
class WindowSet:
    """Masked input windows with their recovery targets.

    inputs[w] is a WL x Ns block with faulted columns zeroed; targets[w] is
    the concatenation of the removed columns in mask order.
    """

    inputs: np.ndarray     # (W, WL, Ns)
    targets: np.ndarray    # (W, WL * n_faulted)
    offsets: np.ndarray    # (W,) start sample of each window
    mask: MaskSpec

    def __len__(self) -> int:
        return self.inputs.shape[0]


def load_records(source: str | IO[str]) -> RecordMatrix:
    """Parse the package CSV record format.

    Line 1: ``# dt=<seconds> channels=<Ns>``. Every following line holds Ns
    comma-separated numbers, one time step per line.
    """
    if isinstance(source, str):
        with open(source, "r", encoding="utf-8") as fh:
            return load_records(fh)
    header = source.readline().strip()
    fields = header.lstrip("#").split()
    meta = {}
    for field in fields:
        if "=" in field:
            key, _, value = field.partition("=")
            meta[key] = value
    if not header.startswith("#") or "dt" not in meta or "channels" not in meta:
        raise ParseError("line 1: expected header '# dt=<seconds> channels=<Ns>'")
    try:
        dt = float(meta["dt"])
        n_channels = int(meta["channels"])
    except ValueError as exc:
        raise ParseError(f"line 1: malformed header value ({exc})") from exc
    if dt <= 0:
        raise ParseError(f"line 1: dt must be positive, got {dt}")
    if n_channels < 1:
        raise ParseError(f"line 1: channels must be positive, got {n_channels}")

    rows = []
    for lineno, line in enumerate(source, start=2):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != n_channels:
            raise ParseError(
                f"line {lineno}: expected {n_channels} fields, got {len(parts)}"
            )
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise ParseError(f"line {lineno}: non-numeric field") from None
    if not rows:
        raise ParseError("no data rows")
    return RecordMatrix(np.array(rows, dtype=np.float64), dt)


def save_records(records: RecordMatrix, dest: str | IO[str]) -> None:
    """Write the CSV record format (inverse of load_records)."""
    if isinstance(dest, str):
        with open(dest, "w", encoding="utf-8", newline="\n") as fh:
            save_records(records, fh)
        return
    dest.write(f"# dt={records.dt!r} channels={records.n_sensors}\n")
    for row in records.data:
        dest.write(",".join(repr(float(v)) for v in row) + "\n")


def records_to_csv(records: RecordMatrix) -> str:
    buf = io.StringIO()
    save_records(records, buf)
    return buf.getvalue()


def normalize(records: RecordMatrix) -> NormalizedMatrix:
    """Min-max rescale each channel to [0, 1] over the whole record."""
    mins = records.data.min(axis=0)
    maxs = records.data.max(axis=0)
    scale = ScaleParams(mins, maxs)  # rejects zero-range channels
    data = (records.data - mins) / (maxs - mins)
    return NormalizedMatrix(data, scale, records.dt)


def denormalize(values: np.ndarray, channel: int, scale: ScaleParams) -> np.ndarray:
    """Map normalized values of one channel back to physical units."""
    if not 0 <= channel < scale.n_channels:
        raise IndexError(f"channel {channel} out of range [0, {scale.n_channels})")
    values = np.asarray(values, dtype=np.float64)
    lo, hi = scale.mins[channel], scale.maxs[channel]
    return values * (hi - lo) + lo


def window_count(n_samples: int, cfg: WindowingConfig) -> int:
    """Number of fully contained windows: floor((Nt - WL) / WS) + 1."""
    if n_samples < cfg.window_len:
        raise InsufficientDataError(
            f"record has {n_samples} samples, window needs {cfg.window_len}"
        )
    return (n_samples - cfg.window_len) // cfg.stride + 1


def extract_windows(
    norm: NormalizedMatrix, cfg: WindowingConfig, mask: MaskSpec
) -> WindowSet:
    """Cut square windows, zero the faulted columns, keep them as targets."""
    if cfg.window_len != norm.n_sensors:
        raise ConfigurationError(
            f"square windows require window_len ({cfg.window_len}) "
            f"= sensor count ({norm.n_sensors})"
        )
    mask.validate(norm.n_sensors)
    n_windows = window_count(norm.n_samples, cfg)
    offsets = np.arange(n_windows) * cfg.stride
    wl = cfg.window_len

    inputs = np.stack([norm.data[o : o + wl] for o in offsets])
    targets = np.concatenate(
        [inputs[:, :, ch].copy() for ch in mask.faulted], axis=1
    )
    inputs = inputs.copy()
    inputs[:, :, list(mask.faulted)] = 0.0
    return WindowSet(inputs, targets, offsets, mask)


def split_train_validation(
    window_set: WindowSet, fraction: float, seed: int
) -> tuple[WindowSet, WindowSet]:
    """Seeded shuffle, then round(fraction * W) windows train, rest validate."""
    if not 0.0 < fraction < 1.0:
        raise ConfigurationError(f"fraction must be in (0, 1), got {fraction}")
    n = len(window_set)
    n_train = int(round(fraction * n))
    if n_train == 0 or n_train == n:
        raise ConfigurationError(
            f"split of {n} windows at fraction {fraction} leaves a partition empty"
        )
    perm = derive_rng(seed, "train-val-split").permutation(n)
    train_idx, val_idx = perm[:n_train], perm[n_train:]

    def take(idx):
        return WindowSet(
            window_set.inputs[idx],
            window_set.targets[idx],
            window_set.offsets[idx],
            window_set.mask,
        )

    return take(train_idx), take(val_idx)


def _check_pair(pred: np.ndarray, ref: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    ref = np.asarray(ref, dtype=np.float64).ravel()
    if pred.shape != ref.shape:
        raise DimensionError(f"length mismatch: {pred.shape[0]} vs {ref.shape[0]}")
    if pred.size == 0:
        raise DimensionError("empty vectors")
    return pred, ref


def mae(pred: np.ndarray, ref: np.ndarray) -> float:
    pred, ref = _check_pair(pred, ref)
    return float(np.mean(np.abs(pred - ref)))


def rmse(pred: np.ndarray, ref: np.ndarray) -> float:
    pred, ref = _check_pair(pred, ref)
    return float(np.sqrt(np.mean((pred - ref) ** 2)))
