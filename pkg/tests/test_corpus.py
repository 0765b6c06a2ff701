import csv
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import correlate, freqz, welch

from spatialq import corpus
from spatialq.corpus import (
    DEFAULT_CONDITIONS,
    Condition,
    CorpusSpec,
    build_corpus,
    degrade_bitcrush,
    degrade_lowpass,
    degrade_noise,
    degrade_order_truncate,
)
from spatialq.errors import DataError
from spatialq.hoa import SoundFieldSignal, load_soundfield

from conftest import SMALL_SPEC

FS = 48000


def white(n=4 * FS, channels=4, seed=0, scale=0.1):
    return SoundFieldSignal(scale * np.random.default_rng(seed).standard_normal((channels, n)))


def snr_db(clean, noisy):
    return 10 * np.log10(np.mean(clean ** 2) / np.mean((noisy - clean) ** 2))


# -- lowpass ---------------------------------------------------------------------

def test_anchor_lowpass_stopband_on_white_noise():
    sig = white()
    out = degrade_lowpass(sig, 3500.0)
    f, p_in = welch(sig.samples[0], FS, nperseg=4096)
    _, p_out = welch(out.samples[0], FS, nperseg=4096)
    band = f >= 7000
    atten = 10 * np.log10(np.sum(p_out[band]) / np.sum(p_in[band]))
    assert atten <= -60


def test_lowpass_design_response_scan():
    from scipy.signal import firwin

    taps = firwin(corpus.LOWPASS_TAPS, 3500.0, window="hamming", fs=FS)
    w, h = freqz(taps, worN=16384, fs=FS)
    mag = 20 * np.log10(np.abs(h) + 1e-300)
    assert np.ptp(mag[w <= 0.8 * 3500]) < 0.5
    assert mag[w >= 7000].max() <= -60


def test_lowpass_passband_on_signal():
    t = np.arange(FS) / FS
    samples = np.zeros((4, FS))
    samples[0] = 0.3 * np.sin(2 * np.pi * 1000 * t)
    out = degrade_lowpass(SoundFieldSignal(samples), 3500.0).samples[0]
    core = slice(1000, FS - 1000)
    gain_db = 10 * np.log10(np.mean(out[core] ** 2) / np.mean(samples[0, core] ** 2))
    assert abs(gain_db) < 0.5


def test_lowpass_near_nyquist_is_identity():
    sig = white(4800)
    out = degrade_lowpass(sig, 0.999 * FS / 2)
    assert np.max(np.abs(out.samples - sig.samples)) < 1e-3


def test_lowpass_is_delay_compensated():
    sig = white(FS, seed=3)
    out = degrade_lowpass(sig, 7000.0)
    xc = correlate(out.samples[0], sig.samples[0], mode="full")
    assert np.argmax(xc) - (sig.n_samples - 1) == 0


# -- truncation ------------------------------------------------------------------

def test_order_truncation():
    sig = white(100, channels=16)
    assert degrade_order_truncate(sig, 3).samples.tobytes() == sig.samples.tobytes()
    zero = degrade_order_truncate(sig, 0).samples
    assert np.any(zero[0]) and not np.any(zero[1:])
    one = degrade_order_truncate(sig, 1).samples
    np.testing.assert_array_equal(one[:4], sig.samples[:4])
    assert not np.any(one[4:])
    with pytest.raises(DataError):
        degrade_order_truncate(sig, 4)


# -- bitcrush --------------------------------------------------------------------

def test_bitcrush_snr_formula():
    rng = np.random.default_rng(4)
    uniform = SoundFieldSignal(rng.uniform(-1, 1, (4, FS)))
    measured = snr_db(uniform.samples, degrade_bitcrush(uniform, 4).samples)
    assert measured == pytest.approx(6.02 * 4 + 1.76, abs=3.0)
    t = np.arange(FS) / FS
    sine = SoundFieldSignal(np.tile(0.99 * np.sin(2 * np.pi * 997 * t), (4, 1)))  # below the top code
    expected = 6.02 * 8 + 1.76 + 20 * np.log10(0.99)
    assert snr_db(sine.samples, degrade_bitcrush(sine, 8).samples) == pytest.approx(expected, abs=0.5)
    scaled = SoundFieldSignal(0.5 * rng.uniform(-1, 1, (4, FS)))
    assert snr_db(scaled.samples, degrade_bitcrush(scaled, 24).samples) > 120


def test_bitcrush_zero_and_levels():
    assert not np.any(degrade_bitcrush(SoundFieldSignal(np.zeros((4, 10))), 3).samples)
    x = np.linspace(-1.5, 1.5, 1001)
    out = degrade_bitcrush(SoundFieldSignal(np.tile(x, (4, 1))), 3).samples[0]
    levels = np.unique(out)
    assert len(levels) <= 8 and 0.0 in levels
    with pytest.raises(DataError):
        degrade_bitcrush(SoundFieldSignal(np.zeros((4, 10))), 1)


# -- noise -----------------------------------------------------------------------

def test_noise_snr_and_seeds():
    sig = white(FS, seed=5)
    out = degrade_noise(sig, 60.0, seed=1)
    assert snr_db(sig.samples[0], out.samples[0]) == pytest.approx(60.0, abs=0.5)
    other = degrade_noise(sig, 60.0, seed=2)
    n1, n2 = out.samples - sig.samples, other.samples - sig.samples
    assert not np.allclose(n1, n2)
    assert 10 * np.log10(np.mean(n1 ** 2) / np.mean(n2 ** 2)) == pytest.approx(0.0, abs=0.1)
    assert degrade_noise(sig, float("inf")).samples.tobytes() == sig.samples.tobytes()
    with pytest.raises(DataError, match="silent"):
        degrade_noise(SoundFieldSignal(np.zeros((4, 10))), 20.0)
    with pytest.raises(DataError):
        degrade_noise(sig, float("nan"))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, len(DEFAULT_CONDITIONS) - 1), st.integers(0, 2**31))
def test_every_degradation_preserves_shape_and_rate(k, seed):
    sig = SoundFieldSignal(white(2400, channels=16, seed=seed % 1000).samples, 44100)
    out = DEFAULT_CONDITIONS[k].apply(sig, seed)
    assert out.samples.shape == sig.samples.shape and out.sample_rate == 44100


# -- spec validation ---------------------------------------------------------------

def test_spec_rejects_non_monotone_family_labels():
    bad = (Condition("lp7000", "lowpass", 7000.0, 40.0), Condition("lp3500", "lowpass", 3500.0, 50.0))
    with pytest.raises(DataError, match="strictly decreasing"):
        CorpusSpec(conditions=bad).validate()
    with pytest.raises(DataError):
        CorpusSpec(variants=2).validate()
    CorpusSpec().validate()


def test_default_lowpass_family_ranks():
    lp = sorted((c for c in DEFAULT_CONDITIONS if c.family == "lowpass"), key=lambda c: -c.value)
    assert [c.value for c in lp] == [14000.0, 7000.0, 3500.0]
    assert [c.label for c in lp] == sorted([c.label for c in lp], reverse=True)
    assert all(c.label < CorpusSpec().reference_label for c in lp)


def test_default_split_is_content_disjoint():
    contents = CorpusSpec().contents()
    assert len(contents) == 18
    splits = [c[4] for c in contents]
    assert splits.count("train") == 12 and splits.count("val") == 3 and splits.count("test") == 3


# -- build -----------------------------------------------------------------------

def _manifest_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_build_corpus_cross_product(small_corpus):
    rows = _manifest_rows(small_corpus)
    contents = SMALL_SPEC.contents()
    pairs = {(r["ref_path"], r["condition"]) for r in rows}
    assert len(rows) == len(pairs) == len(contents) * (len(SMALL_SPEC.conditions) + 1)
    hidden = [r for r in rows if r["hidden_ref"] == "true"]
    assert len(hidden) == len(contents)
    assert all(r["deg_path"] == r["ref_path"] and float(r["mos"]) == 100.0 for r in hidden)
    assert all(float(r["ci95"]) == 5.0 for r in rows)
    for cid, *_, split in contents:
        assert {r["split"] for r in rows if r["id"].startswith(cid + "__")} == {split}
    assert len(list((small_corpus.parent / "filters").glob("*.wav"))) == SMALL_SPEC.n_heads


def test_build_corpus_alignment_and_shapes(small_corpus):
    base = small_corpus.parent
    rows = [r for r in _manifest_rows(small_corpus) if r["condition"] in ("lp7000", "noise35")]
    for r in rows[:4]:
        ref = load_soundfield(base / r["ref_path"])
        deg = load_soundfield(base / r["deg_path"])
        assert deg.samples.shape == ref.samples.shape == (16, int(SMALL_SPEC.duration * FS))
        xc = correlate(deg.samples[0], ref.samples[0], mode="full")
        assert np.argmax(xc) - (ref.n_samples - 1) == 0


def test_build_corpus_is_byte_identical(small_corpus, tmp_path):
    again = build_corpus(SMALL_SPEC, tmp_path)
    assert again.read_bytes() == small_corpus.read_bytes()
    for rel in ("refs", "degs", "filters"):
        first = sorted((small_corpus.parent / rel).iterdir())
        second = sorted((tmp_path / rel).iterdir())
        assert [p.name for p in first] == [p.name for p in second]
        for a, b in zip(first, second):
            assert a.read_bytes() == b.read_bytes(), a.name


def test_build_corpus_cleans_up_on_failure(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise OSError("disk full")

    monkeypatch.setattr(corpus, "write_manifest", boom)
    with pytest.raises(OSError):
        build_corpus(replace(SMALL_SPEC, duration=0.1), tmp_path / "out")
    leftover = [p for p in (tmp_path / "out").rglob("*") if p.is_file()] if (tmp_path / "out").exists() else []
    assert leftover == []
