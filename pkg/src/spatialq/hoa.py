"""Ambisonic signals, encoding, normalization and diffuseness estimation.

Canonical form everywhere in this package is ACN channel ordering with SN3D
normalization. The first-order channels used for the intensity vector are
``w, x, y, z = ACN 0, 3, 1, 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import lfilter
from scipy.spatial.transform import Rotation
from scipy.special import lpmv

from .errors import DataError
from .wavio import read_wav, write_wav

EPS = 1e-12
# Scales the intensity/energy ratio so that a single SN3D plane wave gives 0.
DIFFUSENESS_KAPPA = 1.5
DIFFUSE_TARGET_DB = -30.0


class Normalization(str, Enum):
    SN3D = "SN3D"
    N3D = "N3D"


def n_channels(order: int) -> int:
    return (order + 1) ** 2


def order_from_channels(n_ch: int) -> int:
    order = math.isqrt(n_ch) - 1
    if order < 0 or n_channels(order) != n_ch:
        raise DataError(f"{n_ch} channels is not (L+1)^2 for any order L")
    return order


def acn_degrees(order: int) -> np.ndarray:
    """Spherical-harmonic degree l of every ACN channel up to ``order``."""
    return np.concatenate([np.full(2 * l + 1, l) for l in range(order + 1)])


@dataclass(frozen=True)
class SoundFieldSignal:
    """Multichannel ambisonic buffer, always held as ACN/SN3D internally."""

    samples: np.ndarray
    sample_rate: int = 48000
    order: int = field(default=-1)
    channel_ordering: str = "ACN"
    normalization: Normalization = Normalization.SN3D

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 2:
            raise DataError("samples must be a [channel][sample] array")
        order = order_from_channels(samples.shape[0])
        if self.order not in (-1, order):
            raise DataError(f"order {self.order} does not match {samples.shape[0]} channels")
        if not np.all(np.isfinite(samples)):
            raise DataError("non-finite samples in sound field")
        if self.channel_ordering != "ACN":
            raise DataError(f"unsupported channel ordering {self.channel_ordering!r}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "normalization", Normalization(self.normalization))

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def foa(self) -> np.ndarray:
        """First-order channels in (w, x, y, z) order."""
        if self.order < 1:
            raise DataError("first-order channels require order >= 1")
        return self.samples[[0, 3, 1, 2]]

    def with_samples(self, samples: np.ndarray) -> SoundFieldSignal:
        return replace(self, samples=samples, order=-1)


def sn3d_harmonics(order: int, azimuth_deg, elevation_deg) -> np.ndarray:
    """Real SN3D spherical harmonics in ACN order, without Condon-Shortley phase.

    Returns an array shaped ``[(order+1)**2, n_directions]`` (the direction
    axis is dropped for scalar angles).
    """
    az = np.deg2rad(np.asarray(azimuth_deg, dtype=np.float64))
    el = np.deg2rad(np.asarray(elevation_deg, dtype=np.float64))
    scalar = az.ndim == 0 and el.ndim == 0
    az, el = np.broadcast_arrays(np.atleast_1d(az), np.atleast_1d(el))
    sin_el = np.sin(el)
    out = np.empty((n_channels(order), az.size))
    for l in range(order + 1):
        for m in range(-l, l + 1):
            am = abs(m)
            norm = math.sqrt((1.0 if m == 0 else 2.0) * math.factorial(l - am) / math.factorial(l + am))
            # scipy includes the (-1)^m Condon-Shortley phase; ambisonics does not
            legendre = (-1) ** am * lpmv(am, l, sin_el)
            trig = np.cos(am * az) if m >= 0 else np.sin(am * az)
            out[l * l + l + m] = norm * legendre * trig
    return out[:, 0] if scalar else out


def encode_plane_wave(source, azimuth: float, elevation: float, order: int,
                      sample_rate: int = 48000) -> SoundFieldSignal:
    source = np.asarray(source, dtype=np.float64)
    if source.size == 0:
        raise DataError("empty input")
    if not (np.isfinite(azimuth) and np.isfinite(elevation)):
        raise DataError("angles must be finite")
    gains = sn3d_harmonics(order, azimuth, elevation)
    return SoundFieldSignal(np.outer(gains, source), sample_rate)


def fibonacci_directions(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Near-uniform sphere lattice with a seeded random rotation.

    Returns (azimuth_deg, elevation_deg). The lattice keeps the resultant of
    the unit vectors near zero, which random sampling at n~128 does not.
    """
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    r = np.sqrt(1.0 - z * z)
    xyz = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    xyz = Rotation.random(random_state=np.random.default_rng(seed)).apply(xyz)
    az = np.rad2deg(np.arctan2(xyz[:, 1], xyz[:, 0]))
    el = np.rad2deg(np.arcsin(np.clip(xyz[:, 2], -1.0, 1.0)))
    return az, el


def synth_isotropic_diffuse(duration: float, order: int, n_waves: int, seed: int,
                            sample_rate: int = 48000) -> SoundFieldSignal:
    """Sum of independent Gaussian plane waves from near-uniform directions.

    ACN0 is normalized to ``DIFFUSE_TARGET_DB`` RMS re full scale.
    """
    if n_waves < 1:
        raise DataError("n_waves must be >= 1")
    if duration <= 0:
        raise DataError("duration must be positive")
    n = int(round(duration * sample_rate))
    rng = np.random.default_rng(seed)
    carriers = rng.standard_normal((n_waves, n))
    if n_waves == 1:
        d = rng.standard_normal(3)
        az = np.atleast_1d(np.rad2deg(np.arctan2(d[1], d[0])))
        el = np.atleast_1d(np.rad2deg(np.arcsin(d[2] / np.linalg.norm(d))))
    else:
        az, el = fibonacci_directions(n_waves, int(rng.integers(2**31)))
    gains = sn3d_harmonics(order, az, el)
    field = SoundFieldSignal(gains @ carriers, sample_rate)
    return normalize_level(field, DIFFUSE_TARGET_DB)


def convert_normalization(signal: SoundFieldSignal, target) -> SoundFieldSignal:
    """Rescale per degree between SN3D and N3D.

    The returned object carries ``target`` as its declared normalization, so
    this is also how N3D data is brought into (or out of) canonical form.
    """
    try:
        target = Normalization(target)
    except ValueError as exc:
        raise DataError(f"unknown normalization {target!r}") from exc
    if target == signal.normalization:
        return signal
    scale = np.sqrt(2.0 * acn_degrees(signal.order) + 1.0)
    if target == Normalization.SN3D:
        scale = 1.0 / scale
    return replace(signal, samples=signal.samples * scale[:, None], order=-1,
                   normalization=target)


def rms_db(x: np.ndarray) -> float:
    return 10.0 * math.log10(float(np.mean(np.square(x))) + EPS)


def normalize_level(signal: SoundFieldSignal, target_db: float = DIFFUSE_TARGET_DB) -> SoundFieldSignal:
    """Common-gain scaling so that the ACN0 RMS sits at ``target_db`` dBFS."""
    ms = float(np.mean(np.square(signal.samples[0])))
    if ms == 0.0:
        raise DataError("silent input")
    gain = 10.0 ** (target_db / 20.0) / math.sqrt(ms)
    return signal.with_samples(signal.samples * gain)


def load_soundfield(path, normalization="SN3D") -> SoundFieldSignal:
    samples, rate = read_wav(path)
    sig = SoundFieldSignal(samples, rate, normalization=Normalization(normalization))
    return convert_normalization(sig, Normalization.SN3D)


def save_soundfield(signal: SoundFieldSignal, path) -> None:
    write_wav(Path(path), signal.samples, signal.sample_rate)


@dataclass(frozen=True)
class TfFrame:
    """One short-time spectrum of the four first-order channels."""

    w: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    bin_frequencies: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.w)
        if not (len(self.x) == len(self.y) == len(self.z) == n):
            raise DataError("TfFrame spectra must share one length")


@dataclass(frozen=True)
class DiffusenessGrid:
    values: np.ndarray  # [band][frame], each in [0, 1]
    frame_duration: float


def intensity_energy(w, x, y, z) -> tuple[np.ndarray, np.ndarray]:
    """Instantaneous intensity vector (3, ...) and energy (...) per T-F bin."""
    wc = np.conj(w)
    intensity = np.stack([np.real(wc * x), np.real(wc * y), np.real(wc * z)])
    energy = np.abs(w) ** 2 + 0.5 * (np.abs(x) ** 2 + np.abs(y) ** 2 + np.abs(z) ** 2)
    return intensity, energy


def smoothed_intensity_energy(spectra: np.ndarray, hop: float, smoothing_tau: float):
    """Recursively averaged intensity and energy.

    ``spectra`` holds (w, x, y, z) as a complex array shaped [4][bin][frame];
    the one-pole smoother runs along the frame axis starting from zero state.
    """
    if smoothing_tau <= 0:
        raise DataError("smoothing_tau must be positive")
    a = math.exp(-hop / smoothing_tau)
    intensity, energy = intensity_energy(*spectra)
    b_coef, a_coef = [1.0 - a], [1.0, -a]
    return lfilter(b_coef, a_coef, intensity, axis=-1), lfilter(b_coef, a_coef, energy, axis=-1)


def cell_diffuseness(intensity: np.ndarray, energy: np.ndarray, bin_band: np.ndarray,
                     n_bands: int, frames_per_cell: int) -> np.ndarray:
    """Aggregate smoothed intensity/energy over band x frame cells and form Ψ.

    Intensity vectors are summed (not their norms), so incoherent directions
    cancel inside a cell. Bins with ``bin_band < 0`` are ignored.
    """
    member = np.zeros((n_bands, energy.shape[0]))
    valid = bin_band >= 0
    member[bin_band[valid], np.flatnonzero(valid)] = 1.0
    starts = np.arange(0, energy.shape[1], frames_per_cell)
    i_cells = np.add.reduceat(np.einsum("bk,ckt->cbt", member, intensity), starts, axis=-1)
    e_cells = np.add.reduceat(member @ energy, starts, axis=-1)
    psi = 1.0 - DIFFUSENESS_KAPPA * np.linalg.norm(i_cells, axis=0) / (e_cells + EPS)
    return np.clip(psi, 0.0, 1.0)


def diffuseness_grid(foa_frames: Sequence[TfFrame], hop: float, smoothing_tau: float,
                     band_plan=None, frames_per_cell: int = 1) -> DiffusenessGrid:
    """Diffuseness of a first-order sound field per band and frame.

    ``band_plan`` needs ``bin_band`` (band index per bin, -1 for unused) and
    ``n_bands``; ``None`` treats every bin as its own band.
    """
    if len(foa_frames) == 0:
        raise DataError("no frames")
    n_bins = len(foa_frames[0].w)
    if any(len(f.w) != n_bins for f in foa_frames):
        raise DataError("mismatched frame lengths")
    spectra = np.stack(
        [np.stack([f.w, f.x, f.y, f.z]) for f in foa_frames], axis=-1
    )
    intensity, energy = smoothed_intensity_energy(spectra, hop, smoothing_tau)
    if band_plan is None:
        bin_band, n_bands = np.arange(n_bins), n_bins
    else:
        bin_band, n_bands = np.asarray(band_plan.bin_band), band_plan.n_bands
        if len(bin_band) != n_bins:
            raise DataError("band plan does not match the spectrum length")
    values = cell_diffuseness(intensity, energy, bin_band, n_bands, frames_per_cell)
    return DiffusenessGrid(values, hop * frames_per_cell)
