"""HOA-to-binaural filter sets ("heads") and multichannel FIR rendering."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import convolve
from scipy.special import eval_legendre

from .errors import DataError
from .hoa import SoundFieldSignal, acn_degrees, n_channels, order_from_channels, sn3d_harmonics
from .wavio import read_wav, write_wav

MAX_HEADS = 20


@dataclass(frozen=True)
class RenderFilterSet:
    taps: np.ndarray  # [ear][hoa_channel][tap]
    sample_rate: int
    name: str = "head"

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 3 or taps.shape[0] != 2 or taps.shape[2] < 1:
            raise DataError("malformed filter set")
        order_from_channels(taps.shape[1])
        object.__setattr__(self, "taps", taps)

    @property
    def hoa_order(self) -> int:
        return order_from_channels(self.taps.shape[1])

    @property
    def n_taps(self) -> int:
        return self.taps.shape[2]


@dataclass(frozen=True)
class BinauralSignal:
    left: np.ndarray
    right: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if len(self.left) != len(self.right):
            raise DataError("ear signals differ in length")


def load_filter_set(path) -> RenderFilterSet:
    path = Path(path)
    data, rate = read_wav(path)
    n_ch = data.shape[0]
    half = n_ch // 2
    try:
        if n_ch % 2:
            raise DataError
        order_from_channels(half)
    except DataError:
        raise DataError(f"malformed filter set {path.name}: {n_ch} channels is not 2*(L+1)^2") from None
    return RenderFilterSet(data.reshape(2, half, -1), rate, path.stem)


def save_filter_set(filters: RenderFilterSet, path) -> None:
    write_wav(path, filters.taps.reshape(-1, filters.n_taps), filters.sample_rate)


def load_heads(directory, limit: int = MAX_HEADS) -> list[RenderFilterSet]:
    """Every ``*.wav`` in ``directory``, sorted by filename, capped at ``limit``."""
    files = sorted(Path(directory).glob("*.wav"))
    if not files:
        raise DataError(f"no filter sets found in {directory}")
    return [load_filter_set(p) for p in files[:limit]]


def render_binaural(signal: SoundFieldSignal, filters: RenderFilterSet) -> BinauralSignal:
    """Sum of per-channel FIR convolutions, truncated to the input length.

    A filter set of higher order than the signal is fine: the missing signal
    channels are zero, so their filters contribute nothing. All-zero filters
    are skipped, so a unit impulse on one channel reproduces it exactly.
    """
    if signal.sample_rate != filters.sample_rate:
        raise DataError(
            f"filter set {filters.name!r} is {filters.sample_rate} Hz, signal is {signal.sample_rate} Hz"
        )
    if signal.order > filters.hoa_order:
        raise DataError(
            f"signal order {signal.order} exceeds filter set {filters.name!r} order {filters.hoa_order}"
        )
    n_ch, n = signal.samples.shape
    ears = np.zeros((2, n))
    for ear in range(2):
        for c in range(n_ch):
            h = filters.taps[ear, c]
            if np.any(h):
                ears[ear] += convolve(signal.samples[c], h, mode="full", method="auto")[:n]
    return BinauralSignal(ears[0], ears[1], signal.sample_rate)


def cardioid_head(order: int = 1, sample_rate: int = 48000) -> RenderFilterSet:
    """Single-tap left/right first-order cardioids facing +-90 degrees azimuth.

    Higher-order channels, if any, get zero filters.
    """
    taps = np.zeros((2, n_channels(order), 1))
    taps[:, 0, 0] = 0.5
    taps[0, 1, 0] = 0.5  # ACN1 is the y (left) dipole
    taps[1, 1, 0] = -0.5
    return RenderFilterSet(taps, sample_rate, "cardioid")


def max_re_weights(order: int) -> np.ndarray:
    """Per-degree max-rE weights (Legendre polynomials at the rE angle)."""
    x = np.cos(np.deg2rad(137.9) / (order + 1.51))
    return np.array([eval_legendre(l, x) for l in range(order + 1)])


def beam_head(order: int, ear_azimuth: float = 90.0, ear_elevation: float = 0.0,
              kernel=None, sample_rate: int = 48000, name: str = "beam") -> RenderFilterSet:
    """Mirror-symmetric max-rE beams towards each ear.

    ``kernel`` is an optional FIR applied identically to both ears, giving
    the filter set a frequency colouring.
    """
    degrees = acn_degrees(order)
    weights = max_re_weights(order)[degrees] * (2 * degrees + 1)
    left = sn3d_harmonics(order, ear_azimuth, ear_elevation) * weights
    right = sn3d_harmonics(order, -ear_azimuth, ear_elevation) * weights
    gains = np.stack([left, right]) / weights.sum()
    kernel = np.array([1.0]) if kernel is None else np.asarray(kernel, dtype=np.float64)
    return RenderFilterSet(gains[:, :, None] * kernel[None, None, :], sample_rate, name)


def synthetic_heads(count: int, order: int = 3, seed: int = 0,
                    sample_rate: int = 48000) -> list[RenderFilterSet]:
    """Deterministic family of distinct beam heads, for use without measured filters."""
    if not 1 <= count <= MAX_HEADS:
        raise DataError(f"head count must be in 1..{MAX_HEADS}")
    rng = np.random.default_rng(seed)
    heads = []
    for k in range(count):
        azimuth = 90.0 + rng.uniform(-20.0, 20.0)
        elevation = rng.uniform(-10.0, 10.0)
        kernel = np.zeros(16)
        kernel[0] = 1.0
        kernel[1:] = rng.normal(0.0, 0.15, 15) * np.exp(-np.arange(1, 16) / 4.0)
        heads.append(beam_head(order, azimuth, elevation, kernel, sample_rate, f"synthetic_{k:02d}"))
    return heads
