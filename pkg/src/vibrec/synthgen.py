"""Synthetic multi-channel acceleration generator.

Channels are modal superpositions: each mode is a damped single-degree-of-
freedom oscillator driven by seeded white noise, propagated with the exact
discrete state transition (matrix exponential per step), so the generated
record has known natural frequencies and mode shapes and no integration-
error ambiguity. Serves as the ground-truth oracle for training and for
modal identification tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np
from scipy.linalg import expm

from .errors import ConfigurationError, DataError
from .rng import derive_rng
from .signal_core import RecordMatrix

# natural frequencies (Hz) of the default 4-mode structure
DEFAULT_FREQUENCIES = (7.6210, 12.2984, 20.1747, 24.2876)
DEFAULT_DAMPING = 0.02
DEFAULT_NOISE_FRACTION = 0.05
DEFAULT_FS = 128.0
DEFAULT_N_SAMPLES = 2048
DEFAULT_N_SENSORS = 30


@dataclass(frozen=True)
class Mode:
    frequency_hz: float
    damping_ratio: float
    shape: np.ndarray

    def __post_init__(self):
        if not self.frequency_hz > 0:
            raise ConfigurationError(f"mode frequency must be > 0, got {self.frequency_hz}")
        if not 0.0 < self.damping_ratio < 1.0:
            raise ConfigurationError(
                f"damping ratio must be in (0, 1), got {self.damping_ratio}"
            )
        shape = np.asarray(self.shape, dtype=np.float64)
        if shape.ndim != 1 or not np.any(shape):
            raise ConfigurationError("mode shape must be a nonzero vector")
        object.__setattr__(self, "shape", shape)


@dataclass(frozen=True)
class StructureSpec:
    n_sensors: int
    modes: tuple[Mode, ...]
    noise_rms_fraction: float = DEFAULT_NOISE_FRACTION
    seed: int = 0

    def __post_init__(self):
        if self.n_sensors < 1:
            raise ConfigurationError("n_sensors must be >= 1")
        if self.noise_rms_fraction < 0:
            raise ConfigurationError("noise_rms_fraction must be >= 0")
        modes = tuple(self.modes)
        freqs = [m.frequency_hz for m in modes]
        if len(set(freqs)) != len(freqs):
            raise ConfigurationError("mode frequencies must be distinct")
        for m in modes:
            if m.shape.shape[0] != self.n_sensors:
                raise ConfigurationError(
                    f"mode shape length {m.shape.shape[0]} != n_sensors {self.n_sensors}"
                )
        object.__setattr__(self, "modes", modes)

    def to_dict(self) -> dict:
        return {
            "n_sensors": self.n_sensors,
            "modes": [
                {
                    "frequency_hz": m.frequency_hz,
                    "damping_ratio": m.damping_ratio,
                    "shape": m.shape.tolist(),
                }
                for m in self.modes
            ],
            "noise_rms_fraction": self.noise_rms_fraction,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "StructureSpec":
        modes = tuple(
            Mode(m["frequency_hz"], m["damping_ratio"], np.array(m["shape"]))
            for m in doc["modes"]
        )
        return cls(doc["n_sensors"], modes, doc["noise_rms_fraction"], doc["seed"])


@dataclass(frozen=True)
class GroundTruth:
    """The spec used plus the clean (noise-free) record it produced."""

    spec: StructureSpec
    clean: RecordMatrix
    duration_s: float
    fs: float


def default_mode_shapes(n_sensors: int, n_modes: int) -> np.ndarray:
    """Simply-supported-beam sine shapes, mutually orthogonal.

    shape[m, j] = sin((m+1) * pi * (j+1) / (n_sensors+1)).
    """
    if not n_modes < n_sensors:
        raise ConfigurationError("need n_modes < n_sensors")
    j = np.arange(1, n_sensors + 1)
    return np.stack(
        [np.sin(m * np.pi * j / (n_sensors + 1)) for m in range(1, n_modes + 1)]
    )


def default_structure(
    n_sensors: int = DEFAULT_N_SENSORS,
    frequencies: Sequence[float] = DEFAULT_FREQUENCIES,
    damping: float = DEFAULT_DAMPING,
    noise_rms_fraction: float = DEFAULT_NOISE_FRACTION,
    seed: int = 0,
) -> StructureSpec:
    shapes = default_mode_shapes(n_sensors, len(frequencies))
    modes = tuple(
        Mode(f, damping, shapes[i]) for i, f in enumerate(frequencies)
    )
    return StructureSpec(n_sensors, modes, noise_rms_fraction, seed)


def _sdof_acceleration(
    frequency_hz: float, damping: float, n_samples: int, dt: float, excitation: np.ndarray
) -> np.ndarray:
    """Acceleration of a damped SDOF oscillator under zero-order-hold forcing.

    Exact discrete propagation: x_{k+1} = Ad x_k + Bd f_k with Ad = expm(A dt).
    """
    w = 2.0 * np.pi * frequency_hz
    a = np.array([[0.0, 1.0], [-w * w, -2.0 * damping * w]])
    b = np.array([0.0, 1.0])
    ad = expm(a * dt)
    bd = np.linalg.solve(a, (ad - np.eye(2)) @ b)

    state = np.zeros(2)
    acc = np.empty(n_samples)
    for k in range(n_samples):
        acc[k] = a[1] @ state + excitation[k]
        state = ad @ state + bd * excitation[k]
    return acc


def generate(
    spec: StructureSpec, duration_s: float, fs: float
) -> tuple[RecordMatrix, GroundTruth]:
    """Modal-superposition record plus its noise-free ground truth.

    Each channel gets seeded Gaussian measurement noise with RMS equal to
    noise_rms_fraction times the clean channel RMS; channels whose clean RMS
    is zero (no modes) get noise of RMS noise_rms_fraction itself.
    """
    n_samples = int(round(duration_s * fs))
    if n_samples < 64:
        raise ConfigurationError(
            f"duration {duration_s} s at {fs} Hz gives only {n_samples} samples (need >= 64)"
        )
    dt = 1.0 / fs
    for m in spec.modes:
        if m.frequency_hz >= fs / 2:
            raise DataError(
                f"mode at {m.frequency_hz} Hz aliases: at or above Nyquist {fs / 2} Hz"
            )

    clean = np.zeros((n_samples, spec.n_sensors))
    for mode in spec.modes:
        # stream keyed by frequency (distinct per spec), not list position, so
        # each mode's contribution is unchanged when other modes are removed
        excitation = derive_rng(
            spec.seed, f"excitation-{mode.frequency_hz!r}"
        ).standard_normal(n_samples)
        q_acc = _sdof_acceleration(
            mode.frequency_hz, mode.damping_ratio, n_samples, dt, excitation
        )
        clean += np.outer(q_acc, mode.shape)

    clean_rms = np.sqrt(np.mean(clean**2, axis=0))
    noise_rms = np.where(
        clean_rms > 0, spec.noise_rms_fraction * clean_rms, spec.noise_rms_fraction
    )
    noise = derive_rng(spec.seed, "measurement-noise").standard_normal(clean.shape)
    noisy = clean + noise * noise_rms

    truth = GroundTruth(spec, RecordMatrix(clean, dt), duration_s, fs)
    return RecordMatrix(noisy, dt), truth


def save_ground_truth(truth: GroundTruth, dest: str | IO[str]) -> None:
    """JSON sidecar from which the clean record is regenerable bit-exactly."""
    doc = {
        "spec": truth.spec.to_dict(),
        "duration_s": truth.duration_s,
        "fs": truth.fs,
    }
    if isinstance(dest, str):
        with open(dest, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
    else:
        json.dump(doc, dest, indent=2)


def load_ground_truth(source: str | IO[str]) -> GroundTruth:
    if isinstance(source, str):
        with open(source, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    else:
        doc = json.load(source)
    spec = StructureSpec.from_dict(doc["spec"])
    _, truth = generate(spec, doc["duration_s"], doc["fs"])
    return truth
