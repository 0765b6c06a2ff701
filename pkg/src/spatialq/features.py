"""Time-frequency auditory features and the reference/degraded difference.

Four planes per (band, frame) cell, in this fixed order:

0. envelope: ear-averaged band energy in dB, divided by ``envelope_scale``
1. ILD: left/right energy ratio in dB, clamped, divided by ``ild_scale``
2. interaural coherence in [0, 1]
3. diffuseness of the first-order sound field in [0, 1] (optional)
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from .errors import DataError, NumericalError
from .hoa import EPS, cell_diffuseness, smoothed_intensity_energy

FEATURE_NAMES = ("envelope", "ild", "coherence", "diffuseness")
GRID_MAGIC = b"QFTG"
GRID_VERSION = 1


@dataclass(frozen=True)
class AnalysisConfig:
    sample_rate: int = 48000
    window: float = 0.020
    hop: float = 0.010
    fft_size: int = 1024
    band_count: int = 32
    band_range: tuple[float, float] = (50.0, 16000.0)
    frame_duration: float = 0.040
    include_diffuseness: bool = True
    envelope_scale: float = 40.0
    ild_scale: float = 20.0
    ild_clamp: float = 30.0
    smoothing_tau: float = 0.040

    def __post_init__(self):
        if self.band_count < 1:
            raise DataError("band_count must be >= 1")
        if self.window_samples > self.fft_size:
            raise DataError("window longer than fft_size")
        ratio = self.frame_duration / self.hop
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise DataError("frame_duration must be an integer multiple of hop")
        lo, hi = self.band_range
        if not 0 <= lo < hi <= self.sample_rate / 2:
            raise DataError("band_range must lie within [0, Nyquist]")

    @property
    def window_samples(self) -> int:
        return int(round(self.window * self.sample_rate))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop * self.sample_rate))

    @property
    def frames_per_cell(self) -> int:
        return int(round(self.frame_duration / self.hop))

    @property
    def feature_count(self) -> int:
        return 4 if self.include_diffuseness else 3

    @property
    def frame_ms(self) -> int:
        return int(round(self.frame_duration * 1000))


def erb_rate(f):
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(f, dtype=np.float64))


def erb_rate_to_hz(e):
    return (10.0 ** (np.asarray(e, dtype=np.float64) / 21.4) - 1.0) / 0.00437


@dataclass(frozen=True)
class BandPlan:
    centers: np.ndarray  # Hz
    edges: np.ndarray  # Hz, n_bands + 1
    bin_band: np.ndarray  # band index per FFT bin, -1 outside every band

    @property
    def n_bands(self) -> int:
        return len(self.centers)

    def bins_per_band(self) -> np.ndarray:
        return np.bincount(self.bin_band[self.bin_band >= 0], minlength=self.n_bands)


def erb_band_plan(config: AnalysisConfig) -> BandPlan:
    """ERB-rate spaced bands.

    Centers run from E(lo) to E(hi) inclusive; edges sit midway between
    centers and half a step beyond the outer ones. With one band the edges
    are the range limits themselves.
    """
    lo, hi = config.band_range
    n = config.band_count
    if n == 1:
        edges_e = erb_rate([lo, hi])
        centers_e = np.array([edges_e.mean()])
    else:
        centers_e = np.linspace(erb_rate(lo), erb_rate(hi), n)
        step = centers_e[1] - centers_e[0]
        edges_e = np.concatenate(
            [[centers_e[0] - step / 2], (centers_e[1:] + centers_e[:-1]) / 2, [centers_e[-1] + step / 2]]
        )
    edges = erb_rate_to_hz(edges_e)
    edges[-1] = min(edges[-1], config.sample_rate / 2)
    freqs = np.fft.rfftfreq(config.fft_size, 1.0 / config.sample_rate)
    bin_band = np.searchsorted(edges, freqs, side="right") - 1
    bin_band[(freqs < edges[0]) | (freqs >= edges[-1])] = -1
    plan = BandPlan(erb_rate_to_hz(centers_e), edges, bin_band)
    empty = np.flatnonzero(plan.bins_per_band() == 0)
    if empty.size:
        raise DataError(
            f"bands {empty.tolist()} contain no FFT bin; increase fft_size or reduce band_count"
        )
    return plan


def stft(channel, config: AnalysisConfig) -> np.ndarray:
    """Hann-windowed one-sided STFT, shaped [bin][frame], no padding."""
    x = np.asarray(channel, dtype=np.float64)
    win_len = config.window_samples
    if x.shape[-1] < win_len:
        raise DataError("signal shorter than one window")
    frames = sliding_window_view(x, win_len, axis=-1)[..., :: config.hop_samples, :]
    spec = np.fft.rfft(frames * get_window("hann", win_len), n=config.fft_size, axis=-1)
    return np.swapaxes(spec, -1, -2)


def n_stft_frames(n_samples: int, config: AnalysisConfig) -> int:
    return 1 + (n_samples - config.window_samples) // config.hop_samples


@dataclass(frozen=True)
class FeatureGrid:
    values: np.ndarray  # [feature][band][frame]
    config: AnalysisConfig

    @property
    def n_frames(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class DifferenceTensor:
    values: np.ndarray  # [feature][band][frame], non-negative


def _cell_sums(per_bin: np.ndarray, plan: BandPlan, frames_per_cell: int) -> np.ndarray:
    """Sum a [..., bin, frame] array over band x frame cells."""
    member = np.zeros((plan.n_bands, per_bin.shape[-2]))
    valid = plan.bin_band >= 0
    member[plan.bin_band[valid], np.flatnonzero(valid)] = 1.0
    banded = np.matmul(member, per_bin)
    starts = np.arange(0, per_bin.shape[-1], frames_per_cell)
    return np.add.reduceat(banded, starts, axis=-1)


def _cell_counts(plan: BandPlan, n_frames: int, frames_per_cell: int) -> np.ndarray:
    starts = np.arange(0, n_frames, frames_per_cell)
    lengths = np.diff(np.append(starts, n_frames))
    return plan.bins_per_band()[:, None] * lengths[None, :]


def binaural_planes(left: np.ndarray, right: np.ndarray, config: AnalysisConfig,
                    plan: BandPlan) -> np.ndarray:
    """Envelope, ILD and coherence planes, shaped [3][band][frame]."""
    spec_l, spec_r = stft(left, config), stft(right, config)
    k = config.frames_per_cell
    pow_l = _cell_sums(np.abs(spec_l) ** 2, plan, k)
    pow_r = _cell_sums(np.abs(spec_r) ** 2, plan, k)
    cross = _cell_sums(spec_l * np.conj(spec_r), plan, k)
    counts = _cell_counts(plan, spec_l.shape[-1], k)
    e_l, e_r = pow_l / counts, pow_r / counts
    envelope = 10.0 * np.log10(EPS + 0.5 * (e_l + e_r)) / config.envelope_scale
    ild = np.clip(10.0 * np.log10((e_l + EPS) / (e_r + EPS)), -config.ild_clamp, config.ild_clamp)
    coherence = np.abs(cross) / np.sqrt(pow_l * pow_r + EPS)
    return np.stack([envelope, ild / config.ild_scale, np.clip(coherence, 0.0, 1.0)])


def diffuseness_plane(foa: np.ndarray, config: AnalysisConfig, plan: BandPlan) -> np.ndarray:
    """Diffuseness per cell from (w, x, y, z) time signals, shaped [band][frame]."""
    spectra = stft(foa, config)
    intensity, energy = smoothed_intensity_energy(spectra, config.hop, config.smoothing_tau)
    return cell_diffuseness(intensity, energy, plan.bin_band, plan.n_bands, config.frames_per_cell)


def feature_grid(binaural, foa, config: AnalysisConfig, plan: BandPlan | None = None) -> FeatureGrid:
    """Build the feature grid of one rendered signal.

    ``binaural`` is a BinauralSignal; ``foa`` the (w, x, y, z) time signals or
    ``None`` when diffuseness is disabled.
    """
    if binaural.sample_rate != config.sample_rate:
        raise DataError(f"sample rate {binaural.sample_rate} != analysis rate {config.sample_rate}")
    plan = plan or erb_band_plan(config)
    planes = binaural_planes(binaural.left, binaural.right, config, plan)
    if config.include_diffuseness:
        if foa is None:
            raise DataError("diffuseness enabled but no first-order channels given")
        foa = np.asarray(foa, dtype=np.float64)
        if foa.shape != (4, len(binaural.left)):
            raise DataError("first-order channels and binaural signal differ in length")
        planes = np.concatenate([planes, diffuseness_plane(foa, config, plan)[None]])
    if not np.all(np.isfinite(planes)):
        raise NumericalError("non-finite features")
    return FeatureGrid(planes, config)


def feature_difference(ref: FeatureGrid, deg: FeatureGrid) -> DifferenceTensor:
    if ref.config != deg.config:
        raise DataError("feature grids built with different configs")
    a, b = ref.values, deg.values
    if a.shape[:2] != b.shape[:2] or abs(a.shape[2] - b.shape[2]) > 1:
        raise DataError("unaligned pair")
    t = min(a.shape[2], b.shape[2])
    return DifferenceTensor(np.square(a[..., :t] - b[..., :t]))


def save_feature_grid(grid: FeatureGrid, path) -> None:
    f, b, t = grid.values.shape
    header = GRID_MAGIC + struct.pack(
        "<IIIII", GRID_VERSION, b, f, t, int(round(grid.config.frame_duration * 1e6))
    )
    Path(path).write_bytes(header + np.ascontiguousarray(grid.values, dtype="<f4").tobytes())


def load_feature_grid(path) -> tuple[np.ndarray, float]:
    """Read a cached grid; returns (values [feature][band][frame], frame_duration)."""
    raw = Path(path).read_bytes()
    if raw[:4] != GRID_MAGIC or len(raw) < 24:
        raise DataError("not a feature-grid file")
    version, b, f, t, frame_us = struct.unpack("<IIIII", raw[4:24])
    if version != GRID_VERSION:
        raise DataError(f"unsupported feature-grid version {version}")
    payload = np.frombuffer(raw[24:], dtype="<f4")
    if payload.size != f * b * t:
        raise DataError("feature-grid payload size mismatch")
    return payload.reshape(f, b, t).astype(np.float64), frame_us / 1e6


def expected_frames(n_samples: int, config: AnalysisConfig) -> int:
    return math.ceil(n_stft_frames(n_samples, config) / config.frames_per_cell)
