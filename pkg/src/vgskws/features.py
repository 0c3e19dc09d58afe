"""MFCC front end and SpecAugment-style masking."""

from __future__ import annotations

import hashlib
import os
from dataclasses import asdict, dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.fft import dct, rfft

from .corpus import SAMPLE_RATE

CACHE_ENV = "VGSKWS_CACHE_DIR"
LOG_FLOOR = 1e-10


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = SAMPLE_RATE
    frame_length_s: float = 0.025
    frame_hop_s: float = 0.010
    n_fft: int = 512
    n_mels: int = 40
    n_ceps: int = 13
    f_min: float = 20.0
    f_max: float | None = None
    deltas: bool = True
    delta_window: int = 2
    cmvn: bool = False  # per-utterance mean/variance normalisation

    @property
    def frame_length(self) -> int:
        return int(round(self.frame_length_s * self.sample_rate))

    @property
    def hop(self) -> int:
        return int(round(self.frame_hop_s * self.sample_rate))

    @property
    def dim(self) -> int:
        return self.n_ceps * (3 if self.deltas else 1)

    def to_dict(self) -> dict:
        return asdict(self)

    def key(self) -> str:
        return hashlib.sha256(repr(sorted(asdict(self).items())).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class FeatureSequence:
    frames: np.ndarray  # (T, D)
    frame_hop_s: float
    frame_length_s: float
    utterance_id: str = ""

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def frame_time(self, t: int, centre: bool = False) -> float:
        return t * self.frame_hop_s + (self.frame_length_s / 2 if centre else 0.0)


@dataclass(frozen=True)
class AugmentPolicy:
    n_time_masks: int = 2
    max_time_mask_frames: int = 20
    n_freq_masks: int = 2
    max_freq_mask_bins: int = 7

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise FeatureError(f"{name} must be non-negative")


NO_AUGMENT = AugmentPolicy(0, 0, 0, 0)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int, f_min: float, f_max: float) -> np.ndarray:
    """Triangular HTK-style filters, shape (n_mels, n_fft // 2 + 1)."""
    mel_points = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bin_freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    fb = np.zeros((n_mels, bin_freqs.size))
    for m in range(n_mels):
        lo, centre, hi = hz_points[m : m + 3]
        up = (bin_freqs - lo) / (centre - lo)
        down = (hi - bin_freqs) / (hi - centre)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    fb.setflags(write=False)
    return fb


def delta(features: np.ndarray, window: int) -> np.ndarray:
    """Regression deltas along time with edge replication."""
    T = features.shape[0]
    padded = np.pad(features, ((window, window), (0, 0)), mode="edge")
    denom = 2 * sum(n * n for n in range(1, window + 1))
    out = np.zeros_like(features)
    for n in range(1, window + 1):
        out += n * (padded[window + n : window + n + T] - padded[window - n : window - n + T])
    return out / denom


def compute_mfcc(
    waveform: np.ndarray,
    config: FeatureConfig = FeatureConfig(),
    sample_rate: int | None = None,
    utterance_id: str = "",
) -> FeatureSequence:
    """MFCC (+ deltas) for a mono waveform.

    ``sample_rate`` is checked against ``config.sample_rate`` when given;
    resampling belongs upstream (``corpus.read_audio``).
    """
    if sample_rate is not None and sample_rate != config.sample_rate:
        raise FeatureError(f"waveform at {sample_rate} Hz, expected {config.sample_rate} Hz; resample first")
    x = np.asarray(waveform, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise FeatureError("waveform must be a non-empty 1-D array")
    flen, hop = config.frame_length, config.hop
    if x.size < flen:
        raise FeatureError(f"waveform of {x.size} samples shorter than one frame ({flen})")

    n_frames = 1 + (x.size - flen) // hop
    idx = np.arange(flen)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * np.hamming(flen)
    power = np.abs(rfft(frames, n=config.n_fft, axis=1)) ** 2 / config.n_fft
    f_max = config.f_max or config.sample_rate / 2
    fb = mel_filterbank(config.sample_rate, config.n_fft, config.n_mels, config.f_min, f_max)
    log_mel = np.log(np.maximum(power @ fb.T, LOG_FLOOR))
    ceps = dct(log_mel, type=2, axis=1, norm="ortho")[:, : config.n_ceps]

    if config.deltas:
        d1 = delta(ceps, config.delta_window)
        d2 = delta(d1, config.delta_window)
        ceps = np.concatenate([ceps, d1, d2], axis=1)
    if config.cmvn:
        std = ceps.std(axis=0)
        ceps = (ceps - ceps.mean(axis=0)) / np.where(std > 1e-8, std, 1.0)
    return FeatureSequence(ceps, config.frame_hop_s, config.frame_length_s, utterance_id)


def spec_augment(features: FeatureSequence, policy: AugmentPolicy, seed) -> FeatureSequence:
    """Replace random time and feature-bin bands with the utterance mean.

    Masks are clamped to the sequence shape, so any policy is valid for any
    input.  Same (features, policy, seed) always gives the same output.
    """
    x = features.frames
    T, D = x.shape
    if policy == NO_AUGMENT or (policy.n_time_masks == 0 and policy.n_freq_masks == 0):
        return features
    rng = np.random.default_rng(seed)
    out = x.copy()
    fill = x.mean()
    for _ in range(policy.n_time_masks):
        width = int(rng.integers(0, min(policy.max_time_mask_frames, T) + 1))
        start = int(rng.integers(0, T - width + 1))
        out[start : start + width, :] = fill
    for _ in range(policy.n_freq_masks):
        width = int(rng.integers(0, min(policy.max_freq_mask_bins, D) + 1))
        start = int(rng.integers(0, D - width + 1))
        out[:, start : start + width] = fill
    return replace(features, frames=out)


# ---------------------------------------------------------------------------
# on-disk cache


def cache_dir() -> Path | None:
    value = os.environ.get(CACHE_ENV)
    return Path(value) if value else None


def _cache_paths(root: Path, config: FeatureConfig, utterance_id: str, audio_path: Path) -> tuple[Path, Path]:
    st = audio_path.stat()
    tag = hashlib.sha256(f"{audio_path.resolve()}|{st.st_size}|{st.st_mtime_ns}".encode()).hexdigest()[:12]
    base = root / config.key() / f"{utterance_id}.{tag}"
    return base.with_suffix(".npy"), base.with_suffix(".txt")


def load_features(
    audio_path: str | Path,
    config: FeatureConfig = FeatureConfig(),
    utterance_id: str = "",
    cache: Path | None = None,
) -> FeatureSequence:
    """Read audio and compute features, going through the cache when one is set."""
    from .corpus import read_audio

    audio_path = Path(audio_path)
    cache = cache if cache is not None else cache_dir()
    if cache is not None:
        npy, header = _cache_paths(Path(cache), config, utterance_id, audio_path)
        if npy.exists() and header.exists():
            frames = np.load(npy)
            return FeatureSequence(frames, config.frame_hop_s, config.frame_length_s, utterance_id)
    feats = compute_mfcc(read_audio(audio_path, config.sample_rate), config, utterance_id=utterance_id)
    if cache is not None:
        npy.parent.mkdir(parents=True, exist_ok=True)
        tmp = npy.with_name(npy.name + ".tmp.npy")
        np.save(tmp, feats.frames)
        os.replace(tmp, npy)
        T, D = feats.frames.shape
        header.write_text(
            f"T={T}\nD={D}\nhop_s={config.frame_hop_s}\nwindow_s={config.frame_length_s}\n", encoding="utf-8"
        )
    return feats
