import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spatialq.errors import DataError
from spatialq.features import AnalysisConfig, binaural_planes, erb_band_plan
from spatialq.hoa import SoundFieldSignal, encode_plane_wave
from spatialq.render import (
    MAX_HEADS,
    RenderFilterSet,
    beam_head,
    cardioid_head,
    load_filter_set,
    load_heads,
    render_binaural,
    save_filter_set,
    synthetic_heads,
)


def naive_render(samples, taps):
    """Direct time-domain sum over channels and taps, truncated to the input length."""
    n_ch, n = samples.shape
    out = np.zeros((2, n))
    for ear in range(2):
        for c in range(n_ch):
            h = taps[ear, c]
            for k, hk in enumerate(h):
                if hk != 0.0 and k < n:
                    out[ear, k:] += hk * samples[c, : n - k]
    return out


def test_fast_render_matches_naive_convolution():
    rng = np.random.default_rng(0)
    for trial in range(3):
        sig = SoundFieldSignal(rng.standard_normal((4, 2000)))
        filt = RenderFilterSet(rng.standard_normal((2, 4, 64)), 48000)
        out = render_binaural(sig, filt)
        ref = naive_render(sig.samples, filt.taps)
        assert np.max(np.abs(out.left - ref[0])) < 1e-9
        assert np.max(np.abs(out.right - ref[1])) < 1e-9


def test_identity_filters_pass_channel_zero():
    rng = np.random.default_rng(1)
    sig = SoundFieldSignal(rng.standard_normal((4, 300)))
    taps = np.zeros((2, 4, 8))
    taps[:, 0, 0] = 1.0
    out = render_binaural(sig, RenderFilterSet(taps, 48000))
    np.testing.assert_array_equal(out.left, sig.samples[0])
    np.testing.assert_array_equal(out.right, sig.samples[0])


def test_output_length_equals_input_length():
    sig = SoundFieldSignal(np.ones((4, 37)))
    out = render_binaural(sig, RenderFilterSet(np.ones((2, 4, 100)), 48000))
    assert len(out.left) == 37 == len(out.right)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-10, 10), st.floats(-10, 10))
def test_render_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, 4, 200))
    filt = RenderFilterSet(rng.standard_normal((2, 4, 16)), 48000)
    lhs = render_binaural(SoundFieldSignal(a * x + b * y), filt)
    rx = render_binaural(SoundFieldSignal(x), filt)
    ry = render_binaural(SoundFieldSignal(y), filt)
    scale = 1 + abs(a) + abs(b)
    np.testing.assert_allclose(lhs.left, a * rx.left + b * ry.left, atol=1e-9 * scale * 10)
    np.testing.assert_allclose(lhs.right, a * rx.right + b * ry.right, atol=1e-9 * scale * 10)


def test_mirror_symmetric_head_frontal_source_ild():
    cfg = AnalysisConfig()
    plan = erb_band_plan(cfg)
    source = np.random.default_rng(2).standard_normal(48000)
    sig = encode_plane_wave(source, 0, 0, 3)
    for head in [beam_head(3), cardioid_head(3), *synthetic_heads(3, 3, seed=4)]:
        b = render_binaural(sig, head)
        _, ild, _ = binaural_planes(b.left, b.right, cfg, plan)
        ild_db = ild * cfg.ild_scale
        assert np.max(np.abs(ild_db)) < 0.5, head.name


def test_lateral_source_gives_positive_ild_for_left():
    cfg = AnalysisConfig()
    source = np.random.default_rng(3).standard_normal(24000)
    b = render_binaural(encode_plane_wave(source, 90, 0, 1), cardioid_head(1))
    _, ild, _ = binaural_planes(b.left, b.right, cfg, erb_band_plan(cfg))
    assert np.all(ild > 0)


def test_lower_order_signal_with_higher_order_filters():
    rng = np.random.default_rng(4)
    sig1 = SoundFieldSignal(rng.standard_normal((4, 500)))
    padded = SoundFieldSignal(np.vstack([sig1.samples, np.zeros((12, 500))]))
    head = synthetic_heads(1, 3, seed=0)[0]
    a, b = render_binaural(sig1, head), render_binaural(padded, head)
    np.testing.assert_allclose(a.left, b.left, atol=1e-12)


def test_render_errors():
    sig3 = SoundFieldSignal(np.zeros((16, 10)))
    with pytest.raises(DataError, match="exceeds"):
        render_binaural(sig3, cardioid_head(1))
    with pytest.raises(DataError, match="Hz"):
        render_binaural(SoundFieldSignal(np.zeros((4, 10)), 44100), cardioid_head(1))
    with pytest.raises(DataError):
        RenderFilterSet(np.zeros((2, 5, 3)), 48000)


@pytest.mark.parametrize("n_ch,ok", [(32, True), (8, True), (30, False), (9, False)])
def test_load_filter_set_channel_counts(tmp_path, n_ch, ok):
    from spatialq.wavio import write_wav

    path = tmp_path / "h.wav"
    write_wav(path, np.random.default_rng(n_ch).standard_normal((n_ch, 64)) * 0.1, 48000)
    if ok:
        filt = load_filter_set(path)
        assert filt.hoa_order == {32: 3, 8: 1}[n_ch] and filt.n_taps == 64
    else:
        with pytest.raises(DataError, match="malformed filter set"):
            load_filter_set(path)


def test_filter_set_round_trip_and_layout(tmp_path):
    head = synthetic_heads(1, 3, seed=7)[0]
    quant = RenderFilterSet(head.taps.astype(np.float32), 48000, head.name)
    save_filter_set(quant, tmp_path / "a.wav")
    back = load_filter_set(tmp_path / "a.wav")
    np.testing.assert_array_equal(back.taps, quant.taps)
    assert back.name == "a"


def test_load_heads_sorted_and_capped(tmp_path):
    heads = synthetic_heads(MAX_HEADS, 1, seed=1)
    for k, h in enumerate(heads):
        save_filter_set(h, tmp_path / f"{(7 * k) % MAX_HEADS:02d}.wav")
    save_filter_set(heads[0], tmp_path / "zz_extra.wav")
    loaded = load_heads(tmp_path)
    assert len(loaded) == MAX_HEADS
    assert [h.name for h in loaded] == [f"{k:02d}" for k in range(MAX_HEADS)]
    with pytest.raises(DataError):
        load_heads(tmp_path / "missing")


def test_synthetic_heads_deterministic_and_distinct():
    a = synthetic_heads(4, 3, seed=2)
    b = synthetic_heads(4, 3, seed=2)
    for x, y in zip(a, b):
        assert x.taps.tobytes() == y.taps.tobytes()
    assert not np.allclose(a[0].taps, a[1].taps)
    with pytest.raises(DataError):
        synthetic_heads(MAX_HEADS + 1)
