"""Operational modal analysis: Welch cross-spectra, frequency domain
decomposition, peak picking and the Modal Assurance Criterion.

The FDD route: estimate the Hermitian cross-power spectral density matrix
G(f) by Welch averaging, take an SVD at every frequency line, locate peaks
of the first singular value (natural frequencies), and read the matching
first singular vectors as mode shapes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import IO

import numpy as np
from scipy.signal import find_peaks, get_window

from .errors import (
    ConfigurationError,
    DimensionError,
    NumericalError,
    UndefinedMACError,
)
from .signal_core import RecordMatrix


@dataclass(frozen=True)
class SpectralMatrix:
    """One-sided cross-power spectra: matrices[k] is Hermitian Ns x Ns at
    frequencies[k]; frequency lines span (0, fs/2]."""

    frequencies: np.ndarray            # (F,) Hz, strictly increasing
    matrices: np.ndarray               # (F, Ns, Ns) complex

    @property
    def df(self) -> float:
        return float(self.frequencies[1] - self.frequencies[0])

    @property
    def n_sensors(self) -> int:
        return self.matrices.shape[1]


@dataclass(frozen=True)
class FddResult:
    """Per-line singular values (descending) and first singular vectors."""

    frequencies: np.ndarray            # (F,)
    singular_values: np.ndarray        # (F, Ns)
    first_vectors: np.ndarray          # (F, Ns) complex, unit norm


@dataclass(frozen=True)
class ModalResult:
    natural_frequencies: np.ndarray    # (M,) Hz ascending
    mode_shapes: np.ndarray            # (M, Ns) complex, unit norm


@dataclass
class ModalComparison:
    frequencies_ref: np.ndarray
    frequencies_rec: np.ndarray
    errors_pct: np.ndarray
    mac_matrix: np.ndarray
    warnings: list[str] = field(default_factory=list)

    def write_csv(self, dest: str | IO[str]) -> None:
        if isinstance(dest, str):
            with open(dest, "w", encoding="utf-8", newline="\n") as fh:
                self.write_csv(fh)
            return
        dest.write("mode,f_ref_hz,f_rec_hz,error_pct\n")
        for i, (fr, fc, e) in enumerate(
            zip(self.frequencies_ref, self.frequencies_rec, self.errors_pct), start=1
        ):
            dest.write(f"{i},{fr!r},{fc!r},{e!r}\n")
        dest.write("\n")
        n = self.mac_matrix.shape[0]
        dest.write("mac," + ",".join(str(j + 1) for j in range(n)) + "\n")
        for i in range(n):
            dest.write(
                f"{i + 1}," + ",".join(repr(float(v)) for v in self.mac_matrix[i]) + "\n"
            )
        for w in self.warnings:
            dest.write(f"# warning: {w}\n")


def cpsd(
    records: RecordMatrix,
    segment_len: int = 512,
    overlap_fraction: float = 0.5,
) -> SpectralMatrix:
    """Welch-averaged one-sided cross-power spectral density with Hann taper.

    Segments are mean-detrended and taper-power compensated so that the
    integral of a channel's auto-spectrum approximates its variance. The DC
    line is dropped; frequencies cover (0, fs/2].
    """
    n_samples, n_sensors = records.data.shape
    if segment_len < 2 or segment_len & (segment_len - 1):
        raise ConfigurationError(f"segment_len must be a power of two, got {segment_len}")
    if segment_len > n_samples:
        raise ConfigurationError(
            f"segment_len {segment_len} exceeds record length {n_samples}"
        )
    if not 0.0 <= overlap_fraction < 1.0:
        raise ConfigurationError("overlap_fraction must be in [0, 1)")

    step = max(1, int(round(segment_len * (1.0 - overlap_fraction))))
    n_segments = (n_samples - segment_len) // step + 1
    if n_segments < 2:
        raise ConfigurationError(
            f"only {n_segments} segment(s); need >= 2 for Welch averaging"
        )

    fs = records.fs
    taper = get_window("hann", segment_len)
    scale = 1.0 / (fs * np.sum(taper**2))
    n_bins = segment_len // 2 + 1

    acc = np.zeros((n_bins, n_sensors, n_sensors), dtype=np.complex128)
    for s in range(n_segments):
        seg = records.data[s * step : s * step + segment_len]
        seg = (seg - seg.mean(axis=0)) * taper[:, None]
        spec = np.fft.rfft(seg, axis=0)
        acc += spec[:, :, None] * np.conj(spec[:, None, :])
    acc *= scale / n_segments
    acc[1:-1] *= 2.0  # one-sided: double everything but DC and Nyquist

    freqs = np.fft.rfftfreq(segment_len, d=records.dt)
    return SpectralMatrix(freqs[1:], acc[1:])


def fdd_decompose(spectra: SpectralMatrix) -> FddResult:
    """SVD of G(f) at every line; singular vectors get a deterministic phase
    (largest-magnitude component made real positive)."""
    n_lines = spectra.frequencies.shape[0]
    sv = np.empty((n_lines, spectra.n_sensors))
    vec = np.empty((n_lines, spectra.n_sensors), dtype=np.complex128)
    for k in range(n_lines):
        try:
            u, s, _ = np.linalg.svd(spectra.matrices[k], hermitian=True)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                f"SVD failed at frequency line {spectra.frequencies[k]:.4f} Hz: {exc}"
            ) from exc
        sv[k] = s
        vec[k] = _fix_phase(u[:, 0])
    return FddResult(spectra.frequencies, sv, vec)


def _fix_phase(v: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(v)))
    phase = v[i] / abs(v[i]) if v[i] != 0 else 1.0
    return v / phase


def pick_peaks(
    sv_curve: np.ndarray,
    frequencies: np.ndarray,
    min_prominence: float = 6.0,
    max_peaks: int = 4,
    log_scale: bool = True,
) -> np.ndarray:
    """Frequencies of the most prominent local maxima of the singular-value
    curve, sorted ascending. With log_scale (default), prominence is measured
    in dB of the curve, which makes the threshold scale-free. No qualifying
    peak returns an empty vector.
    """
    sv_curve = np.asarray(sv_curve, dtype=np.float64)
    if not np.all(np.isfinite(sv_curve)):
        raise ConfigurationError("singular-value curve contains non-finite entries")
    curve = sv_curve
    if log_scale:
        floor = sv_curve[sv_curve > 0].min() if np.any(sv_curve > 0) else 1.0
        curve = 10.0 * np.log10(np.maximum(sv_curve, floor * 1e-12))
    idx, props = find_peaks(curve, prominence=min_prominence)
    if idx.size == 0:
        return np.array([])
    order = np.argsort(props["prominences"])[::-1][:max_peaks]
    return np.sort(np.asarray(frequencies)[idx[order]])


def identify_modes(
    records: RecordMatrix,
    n_modes: int = 4,
    segment_len: int = 512,
    overlap_fraction: float = 0.5,
    min_prominence: float = 6.0,
) -> ModalResult:
    """Full FDD pass: natural frequencies and unit-norm mode shapes."""
    spectra = cpsd(records, segment_len, overlap_fraction)
    fdd = fdd_decompose(spectra)
    freqs = pick_peaks(
        fdd.singular_values[:, 0], fdd.frequencies, min_prominence, n_modes
    )
    lines = np.searchsorted(fdd.frequencies, freqs)
    shapes = fdd.first_vectors[lines]
    return ModalResult(freqs, shapes)


def mac(phi_a: np.ndarray, phi_b: np.ndarray) -> float:
    """Modal Assurance Criterion: |a^H b|^2 / ((a^H a)(b^H b)), in [0, 1]."""
    a = np.asarray(phi_a).ravel()
    b = np.asarray(phi_b).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    na = np.vdot(a, a).real
    nb = np.vdot(b, b).real
    if na == 0.0 or nb == 0.0:
        raise UndefinedMACError("MAC undefined for a zero vector")
    return float(abs(np.vdot(a, b)) ** 2 / (na * nb))


def compare_modal(
    reference: RecordMatrix,
    recovered: RecordMatrix,
    n_modes: int = 4,
    segment_len: int = 512,
    overlap_fraction: float = 0.5,
    min_prominence: float = 6.0,
) -> ModalComparison:
    """Identify modes in both records, pair frequencies by nearest neighbor
    (10% relative gate), and report percent errors plus the MAC matrix
    between reference and recovered shapes."""
    if reference.n_sensors != recovered.n_sensors:
        raise ConfigurationError(
            f"channel counts differ: {reference.n_sensors} vs {recovered.n_sensors}"
        )
    if not np.isclose(reference.dt, recovered.dt):
        raise ConfigurationError(f"dt differs: {reference.dt} vs {recovered.dt}")

    ref = identify_modes(reference, n_modes, segment_len, overlap_fraction, min_prominence)
    rec = identify_modes(recovered, n_modes, segment_len, overlap_fraction, min_prominence)

    warnings: list[str] = []
    if len(rec.natural_frequencies) < len(ref.natural_frequencies):
        warnings.append(
            f"only {len(rec.natural_frequencies)} of {len(ref.natural_frequencies)} "
            "reference modes found in the recovered record"
        )

    pairs = []
    used: set[int] = set()
    for i, f_ref in enumerate(ref.natural_frequencies):
        best, best_err = None, np.inf
        for j, f_rec in enumerate(rec.natural_frequencies):
            if j in used:
                continue
            err = abs(f_ref - f_rec) / f_ref
            if err < best_err:
                best, best_err = j, err
        if best is None or best_err > 0.10:
            warnings.append(f"no recovered peak within 10% of {f_ref:.4f} Hz")
            continue
        used.add(best)
        pairs.append((i, best))

    f_ref = np.array([ref.natural_frequencies[i] for i, _ in pairs])
    f_rec = np.array([rec.natural_frequencies[j] for _, j in pairs])
    errors = 100.0 * (f_ref - f_rec) / f_ref
    n = len(pairs)
    mac_matrix = np.empty((n, n))
    for a, (i, _) in enumerate(pairs):
        for b, (_, j) in enumerate(pairs):
            mac_matrix[a, b] = mac(ref.mode_shapes[i], rec.mode_shapes[j])
    return ModalComparison(f_ref, f_rec, errors, mac_matrix, warnings)
