"""Deterministic synthetic reference/degraded corpus with proxy quality labels.

Labels are invented severity proxies: they order conditions within a
family and say nothing about perceived quality in absolute terms.
"""

from __future__ import annotations

import logging
import math
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import butter, firwin, oaconvolve, sosfilt

from .errors import DataError
from .hoa import (
    SoundFieldSignal,
    acn_degrees,
    encode_plane_wave,
    normalize_level,
    save_soundfield,
    synth_isotropic_diffuse,
)
from .render import save_filter_set, synthetic_heads
from .trainer import write_manifest

log = logging.getLogger(__name__)

LOWPASS_TAPS = 511
ANCHOR_CUTOFF = 3500.0
REFERENCE_LEVEL_DB = -30.0


# -- degradations --------------------------------------------------------------

def degrade_lowpass(signal: SoundFieldSignal, cutoff: float) -> SoundFieldSignal:
    """Linear-phase Hamming windowed-sinc low-pass, delay-compensated.

    Cutoffs at or above 0.999 x Nyquist return the input unchanged.
    """
    nyquist = signal.sample_rate / 2
    if not 0 < cutoff:
        raise DataError("cutoff must be positive")
    if cutoff >= 0.999 * nyquist:
        return signal.with_samples(signal.samples.copy())
    taps = firwin(LOWPASS_TAPS, cutoff, window="hamming", fs=signal.sample_rate)
    delay = (LOWPASS_TAPS - 1) // 2
    out = oaconvolve(signal.samples, taps[None, :], mode="full", axes=-1)
    return signal.with_samples(out[:, delay:delay + signal.n_samples])


def degrade_order_truncate(signal: SoundFieldSignal, keep_order: int) -> SoundFieldSignal:
    if not 0 <= keep_order <= signal.order:
        raise DataError(f"keep_order must be within 0..{signal.order}")
    samples = signal.samples.copy()
    samples[acn_degrees(signal.order) > keep_order] = 0.0
    return signal.with_samples(samples)


def degrade_bitcrush(signal: SoundFieldSignal, bits: int) -> SoundFieldSignal:
    """Mid-tread uniform quantizer with 2**bits levels spanning [-1, 1)."""
    if not 2 <= bits <= 24:
        raise DataError("bits must be within 2..24")
    step = 2.0 / 2 ** bits
    half = 2 ** (bits - 1)
    codes = np.clip(np.round(signal.samples / step), -half, half - 1)
    return signal.with_samples(codes * step)


def degrade_noise(signal: SoundFieldSignal, snr_db: float, seed: int = 0) -> SoundFieldSignal:
    """Independent Gaussian noise per channel at ``snr_db`` below the ACN0 power."""
    if math.isinf(snr_db) and snr_db > 0:
        return signal.with_samples(signal.samples.copy())
    if not math.isfinite(snr_db):
        raise DataError("snr must be finite or +inf")
    power = float(np.mean(np.square(signal.samples[0])))
    if power == 0.0:
        raise DataError("silent input: SNR undefined")
    rng = np.random.default_rng(seed)
    sigma = math.sqrt(power * 10.0 ** (-snr_db / 10.0))
    return signal.with_samples(signal.samples + sigma * rng.standard_normal(signal.samples.shape))


# -- corpus description ----------------------------------------------------------

@dataclass(frozen=True)
class Condition:
    name: str
    family: str
    value: float  # cutoff Hz, SNR dB, bits, or kept order
    label: float

    @property
    def severity(self) -> float:
        """Larger is worse, comparable only within a family."""
        return -self.value  # lower cutoff, SNR, bit depth or kept order are all worse

    def apply(self, signal: SoundFieldSignal, seed: int) -> SoundFieldSignal:
        if self.family == "lowpass":
            return degrade_lowpass(signal, self.value)
        if self.family == "noise":
            return degrade_noise(signal, self.value, seed)
        if self.family == "bitcrush":
            return degrade_bitcrush(signal, int(self.value))
        if self.family == "truncate":
            return degrade_order_truncate(signal, int(self.value))
        raise DataError(f"unknown degradation family {self.family!r}")


DEFAULT_CONDITIONS = (
    Condition("lp14000", "lowpass", 14000.0, 85.0),
    Condition("noise35", "noise", 35.0, 75.0),
    Condition("order1", "truncate", 1, 60.0),
    Condition("lp7000", "lowpass", 7000.0, 50.0),
    Condition("bits8", "bitcrush", 8, 40.0),
    Condition("noise15", "noise", 15.0, 30.0),
    Condition("anchor", "lowpass", ANCHOR_CUTOFF, 20.0),
)


@dataclass(frozen=True)
class CorpusSpec:
    recipes: tuple[str, ...] = ("speech", "music", "ambiance")
    scenes: tuple[str, ...] = ("anechoic", "reverberant")
    variants: int = 3
    conditions: tuple[Condition, ...] = DEFAULT_CONDITIONS
    duration: float = 1.5
    order: int = 3
    sample_rate: int = 48000
    rt60: float = 0.5
    reference_label: float = 100.0
    ci95: float = 5.0
    n_heads: int = 4
    seed: int = 0

    def validate(self) -> None:
        for r in self.recipes:
            if r not in RECIPES:
                raise DataError(f"unknown content recipe {r!r}")
        for s in self.scenes:
            if s not in ("anechoic", "reverberant"):
                raise DataError(f"unknown scene {s!r}")
        if self.variants < 3:
            raise DataError("need at least three variants per recipe/scene for train/val/test splits")
        families: dict[str, list[Condition]] = {}
        for c in self.conditions:
            families.setdefault(c.family, []).append(c)
            if not 0 <= c.label < self.reference_label:
                raise DataError(f"label of {c.name} must lie below the reference label")
        for fam, conds in families.items():
            conds = sorted(conds, key=lambda c: c.severity)
            labels = [c.label for c in conds]
            if any(b >= a for a, b in zip(labels, labels[1:])):
                raise DataError(f"labels in family {fam!r} are not strictly decreasing with severity")
        if len({c.name for c in self.conditions}) != len(self.conditions):
            raise DataError("duplicate condition names")

    def contents(self) -> list[tuple[str, str, str, int, str]]:
        """(content id, recipe, scene, variant, split) for every content."""
        out = []
        for ri, recipe in enumerate(self.recipes):
            for si, scene in enumerate(self.scenes):
                for v in range(self.variants):
                    held = self.variants - 1 - v  # 0 for the last variant
                    if held == 0:
                        split = "val" if (ri + si) % 2 == 0 else "test"
                    elif held == 1 and self.variants >= 4:
                        split = "test" if (ri + si) % 2 == 0 else "val"
                    else:
                        split = "train"
                    out.append((f"{recipe}_{scene[:3]}_{v}", recipe, scene, v, split))
        return out


# -- content recipes ---------------------------------------------------------------

def _pink(rng, n: int) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    spec[1:] /= np.sqrt(np.arange(1, len(spec)))
    x = np.fft.irfft(spec, n)
    return x / np.std(x)


def _direction(rng) -> tuple[float, float]:
    return float(rng.uniform(-180, 180)), float(rng.uniform(-30, 45))


def _speech(rng, n: int, fs: int) -> list[np.ndarray]:
    """One or two talkers: voiced buzz plus noise under a syllabic envelope."""
    sources = []
    t = np.arange(n) / fs
    for _ in range(int(rng.integers(1, 3))):
        f0 = rng.uniform(100, 220) * (1 + 0.08 * np.sin(2 * np.pi * rng.uniform(0.5, 2) * t))
        phase = 2 * np.pi * np.cumsum(f0) / fs
        buzz = sum(np.sin(k * phase) / k for k in range(1, 30) if k * 220 < fs / 2)
        carrier = buzz / np.std(buzz) + 0.3 * _pink(rng, n)
        sos = butter(2, [rng.uniform(300, 700), rng.uniform(2500, 5000)], "bandpass", fs=fs, output="sos")
        carrier = sosfilt(sos, carrier)
        rate = rng.uniform(3.0, 5.5)
        syllables = np.maximum(0.0, np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))) ** 1.5
        gate = (rng.random(int(n / fs * rate) + 2) > 0.25).astype(float)
        gated = syllables * gate[np.minimum((t * rate).astype(int), len(gate) - 1)]
        if gated.any():
            syllables = gated
        elif not syllables.any():
            syllables = np.ones(n)  # excerpt shorter than one syllable gap
        sources.append(carrier * syllables)
    return sources


def _music(rng, n: int, fs: int) -> list[np.ndarray]:
    """Two or three harmonic voices playing random pentatonic notes."""
    scale = np.array([0, 2, 4, 7, 9])
    sources = []
    for _ in range(int(rng.integers(2, 4))):
        out = np.zeros(n)
        base = rng.choice([110.0, 220.0, 440.0])
        pos = 0
        while pos < n:
            length = int(rng.uniform(0.15, 0.5) * fs)
            f0 = base * 2 ** ((scale[rng.integers(5)] + 12 * rng.integers(0, 2)) / 12)
            tt = np.arange(min(length, n - pos)) / fs
            tone = sum(np.sin(2 * np.pi * k * f0 * tt) / k ** rng.uniform(0.8, 1.5)
                       for k in range(1, 40) if k * f0 < 16000)
            env = np.minimum(1.0, tt / 0.01) * np.exp(-tt * rng.uniform(1.0, 6.0))
            out[pos:pos + len(tt)] += tone * env
            pos += length
        sources.append(out / (np.std(out) + 1e-12))
    return sources


def _ambiance_transients(rng, n: int, fs: int) -> list[np.ndarray]:
    """Short decaying noise bursts (claps, steps) at random times."""
    sources = []
    for _ in range(int(rng.integers(3, 6))):
        out = np.zeros(n)
        for start in rng.integers(0, n, size=int(rng.integers(2, 6))):
            length = int(rng.uniform(0.005, 0.04) * fs)
            burst = rng.standard_normal(length) * np.exp(-np.arange(length) / (0.3 * length))
            end = min(n, start + length)
            out[start:end] += burst[: end - start]
        sources.append(out)
    return sources


RECIPES = {"speech": _speech, "music": _music, "ambiance": _ambiance_transients}


def diffuse_tail(duration: float, order: int, rt60: float, seed: int, sample_rate: int) -> np.ndarray:
    """Exponentially decaying isotropic impulse response, shaped [channel][tap]."""
    field = synth_isotropic_diffuse(duration, order, 128, seed, sample_rate).samples
    t = np.arange(field.shape[1]) / sample_rate
    tail = field * np.exp(-6.9078 * t / rt60)[None, :]
    return tail / np.sqrt(np.sum(tail[0] ** 2))


def render_content(recipe: str, scene: str, spec: CorpusSpec, seed: int) -> SoundFieldSignal:
    """Synthesize one reference scene at the reference level."""
    rng = np.random.default_rng(seed)
    fs, order = spec.sample_rate, spec.order
    n = int(round(spec.duration * fs))
    field = np.zeros(((order + 1) ** 2, n))
    sources = RECIPES[recipe](rng, n, fs)
    for src in sources:
        az, el = _direction(rng)
        field += encode_plane_wave(src / (np.std(src) + 1e-12), az, el, order, fs).samples
    if recipe == "ambiance":
        bed = synth_isotropic_diffuse(spec.duration, order, 128, int(rng.integers(2**31)), fs).samples
        tilt = butter(1, 2000, "lowpass", fs=fs, output="sos")
        bed = sosfilt(tilt, bed, axis=-1)
        field += 0.7 * bed * np.std(field[0]) / np.std(bed[0])
    if scene == "reverberant":
        tail = diffuse_tail(min(spec.rt60 * 1.2, spec.duration), order, spec.rt60,
                            int(rng.integers(2**31)), fs)
        dry = np.sum(sources, axis=0) if sources else field[0]
        wet = oaconvolve(dry[None, :], tail, mode="full", axes=-1)[:, :n]
        field += wet * np.std(field[0]) / (np.std(wet[0]) + 1e-12)
    return normalize_level(SoundFieldSignal(field, fs), REFERENCE_LEVEL_DB)


# -- corpus writer ---------------------------------------------------------------

EXTRA_COLUMNS = ("scene", "recipe", "family")


def build_corpus(spec: CorpusSpec, out_dir) -> Path:
    """Write refs/, degs/, filters/ and manifest.csv under ``out_dir``.

    Everything is derived from ``spec.seed``. Files created by a failed run
    are removed before the error propagates.
    """
    spec.validate()
    out_dir = Path(out_dir)
    created: list[Path] = []
    try:
        for sub in ("refs", "degs", "filters"):
            d = out_dir / sub
            if not d.exists():
                d.mkdir(parents=True)
                created.append(d)
        rows = []
        for ci, (cid, recipe, scene, _, split) in enumerate(spec.contents()):
            seq = np.random.SeedSequence([spec.seed, ci])
            content_seed, noise_root = (int(s.generate_state(1)[0]) for s in seq.spawn(2))
            ref = render_content(recipe, scene, spec, content_seed)
            ref_rel = Path("refs") / f"{cid}.wav"
            save_soundfield(ref, out_dir / ref_rel)
            created.append(out_dir / ref_rel)
            common = {"ci95": spec.ci95, "split": split, "scene": scene, "recipe": recipe,
                      "ref_path": ref_rel.as_posix()}
            rows.append({**common, "id": f"{cid}__reference", "deg_path": ref_rel.as_posix(),
                         "condition": "reference", "mos": spec.reference_label,
                         "hidden_ref": "true", "family": "reference"})
            for k, cond in enumerate(spec.conditions):
                deg = cond.apply(ref, noise_root + k)
                deg_rel = Path("degs") / f"{cid}__{cond.name}.wav"
                save_soundfield(deg, out_dir / deg_rel)
                created.append(out_dir / deg_rel)
                rows.append({**common, "id": f"{cid}__{cond.name}", "deg_path": deg_rel.as_posix(),
                             "condition": cond.name, "mos": cond.label, "hidden_ref": "false",
                             "family": cond.family})
        for head in synthetic_heads(spec.n_heads, spec.order, spec.seed, spec.sample_rate):
            path = out_dir / "filters" / f"{head.name}.wav"
            save_filter_set(head, path)
            created.append(path)
        manifest = out_dir / "manifest.csv"
        write_manifest(rows, manifest, EXTRA_COLUMNS)
        created.append(manifest)
    except BaseException:
        for p in reversed(created):
            if p.is_dir():
                shutil.rmtree(p, ignore_errors=True)
            else:
                p.unlink(missing_ok=True)
        raise
    log.info("wrote %d manifest rows to %s", len(rows), manifest)
    return manifest
