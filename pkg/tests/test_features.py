import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vgskws.corpus import write_audio
from vgskws.features import (
    AugmentPolicy,
    FeatureConfig,
    FeatureError,
    FeatureSequence,
    compute_mfcc,
    load_features,
    mel_filterbank,
    spec_augment,
)

SR = 16000


def tone(freq, seconds=1.0):
    t = np.arange(int(seconds * SR)) / SR
    return 0.5 * np.sin(2 * np.pi * freq * t)


def test_one_second_gives_98_frames():
    feats = compute_mfcc(tone(440))
    # 1 + floor((16000 - 400) / 160)
    assert feats.frames.shape == (98, 39)


@pytest.mark.parametrize("n", [400, 401, 559, 560, 16000, 48123])
def test_frame_count_formula(n):
    assert compute_mfcc(np.random.default_rng(n).normal(size=n)).n_frames == 1 + (n - 400) // 160


def test_silence_is_finite():
    feats = compute_mfcc(np.zeros(SR))
    assert np.isfinite(feats.frames).all()


def test_tones_are_distinguishable():
    a = compute_mfcc(tone(440)).frames.mean(axis=0)
    b = compute_mfcc(tone(4000)).frames.mean(axis=0)
    assert np.linalg.norm(a - b) > 0


def test_pure_function():
    x = np.random.default_rng(0).normal(size=SR)
    np.testing.assert_array_equal(compute_mfcc(x).frames, compute_mfcc(x.copy()).frames)


@pytest.mark.parametrize("x", [np.zeros(0), np.zeros(399), np.zeros((2, 800))], ids=["empty", "short", "2d"])
def test_bad_waveforms(x):
    with pytest.raises(FeatureError):
        compute_mfcc(x)


def test_wrong_sample_rate():
    with pytest.raises(FeatureError, match="resample"):
        compute_mfcc(tone(440), sample_rate=48000)


def test_no_deltas_dimension():
    assert compute_mfcc(tone(440), FeatureConfig(deltas=False)).dim == 13


def test_mel_filterbank_shape_and_coverage():
    fb = mel_filterbank(SR, 512, 40, 20.0, 8000.0)
    assert fb.shape == (40, 257)
    assert (fb >= 0).all()
    assert (fb.max(axis=1) > 0).all()  # no empty filters


def test_frame_time_mapping():
    feats = compute_mfcc(tone(440, 2.0))
    assert feats.frame_time(0) == 0.0
    assert feats.frame_time(10) == pytest.approx(0.1)
    assert feats.frame_time(10, centre=True) == pytest.approx(0.1125)
    assert all(0 <= feats.frame_time(t) < 2.0 for t in range(feats.n_frames))


# -- SpecAugment ------------------------------------------------------------


def _seq(T=98, D=39, seed=0):
    return FeatureSequence(np.random.default_rng(seed).normal(size=(T, D)), 0.01, 0.025, "x")


def test_identity_policy():
    feats = _seq()
    out = spec_augment(feats, AugmentPolicy(0, 20, 0, 7), seed=3)
    np.testing.assert_array_equal(out.frames, feats.frames)


@pytest.mark.parametrize("seed", range(20))
def test_single_time_mask(seed):
    feats = _seq()
    out = spec_augment(feats, AugmentPolicy(1, 5, 0, 0), seed=seed)
    changed = np.flatnonzero((out.frames != feats.frames).any(axis=1))
    assert len(changed) <= 5
    if len(changed):
        assert np.array_equal(changed, np.arange(changed[0], changed[-1] + 1))
        np.testing.assert_array_equal(out.frames[changed], feats.frames.mean())


def test_augment_deterministic():
    feats = _seq()
    policy = AugmentPolicy()
    np.testing.assert_array_equal(spec_augment(feats, policy, 5).frames, spec_augment(feats, policy, 5).frames)


def test_augment_does_not_mutate_input():
    feats = _seq()
    before = feats.frames.copy()
    spec_augment(feats, AugmentPolicy(), 1)
    np.testing.assert_array_equal(feats.frames, before)


def test_negative_policy_rejected():
    with pytest.raises(ValueError):
        AugmentPolicy(-1, 5, 0, 0)


@settings(max_examples=100, deadline=None)
@given(
    T=st.integers(1, 60),
    D=st.integers(1, 40),
    policy=st.builds(AugmentPolicy, st.integers(0, 4), st.integers(0, 100), st.integers(0, 4), st.integers(0, 100)),
    seed=st.integers(0, 2**32 - 1),
)
def test_augment_keeps_shape_and_finiteness(T, D, policy, seed):
    feats = _seq(T, D, seed=seed % 1000)
    out = spec_augment(feats, policy, seed)
    assert out.frames.shape == (T, D)
    assert np.isfinite(out.frames).all()


# -- cache ------------------------------------------------------------------


def test_cache_gives_identical_features(tmp_path):
    write_audio(tmp_path / "x.wav", tone(1000) * np.hanning(SR))
    plain = load_features(tmp_path / "x.wav", utterance_id="x")
    first = load_features(tmp_path / "x.wav", utterance_id="x", cache=tmp_path / "cache")
    second = load_features(tmp_path / "x.wav", utterance_id="x", cache=tmp_path / "cache")
    np.testing.assert_array_equal(plain.frames, first.frames)
    np.testing.assert_array_equal(plain.frames, second.frames)
    (header,) = (tmp_path / "cache").rglob("*.txt")
    assert header.read_text().splitlines()[:2] == ["T=98", "D=39"]


def test_cache_env_var(tmp_path, monkeypatch):
    write_audio(tmp_path / "x.wav", tone(700))
    monkeypatch.setenv("VGSKWS_CACHE_DIR", str(tmp_path / "envcache"))
    load_features(tmp_path / "x.wav", utterance_id="x")
    assert list((tmp_path / "envcache").rglob("*.npy"))
