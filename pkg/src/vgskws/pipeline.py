"""Glue between corpus, features and model: feature banks and batched scoring."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .corpus import Corpus, UtteranceRecord, Vocabulary, nfc
from .features import FeatureConfig, load_features
from .metrics import MetricsReport, build_pairs, evaluate
from .model import VgsModel, predicted_time


@dataclass
class SplitData:
    """Features (and whatever labels exist) for one corpus split, in manifest order."""

    records: list[UtteranceRecord]
    features: list[np.ndarray]
    durations: np.ndarray
    frame_hop_s: float
    targets: np.ndarray | None = None  # (N, W) visual targets
    presence: np.ndarray | None = None  # (N, W) caption-derived ground truth

    def __len__(self) -> int:
        return len(self.records)

    @property
    def ids(self) -> list[str]:
        return [r.utterance_id for r in self.records]


def caption_presence(caption: str | None, vocab: Vocabulary) -> np.ndarray:
    """Keyword presence from a target-language caption (NFC substring match)."""
    out = np.zeros(len(vocab))
    if caption is None:
        return out
    caption = nfc(caption)
    for e in vocab.entries:
        if nfc(e.target_word) in caption:
            out[e.keyword_id] = 1.0
    return out


def load_split(corpus: Corpus, split: str, feature_config: FeatureConfig = FeatureConfig(), with_targets: bool = False) -> SplitData:
    records = corpus.split(split)
    feats = [
        load_features(corpus.audio_path(r), feature_config, r.utterance_id).frames.astype(np.float32)
        for r in records
    ]
    durations = np.array([corpus.duration(r) for r in records])
    targets = np.stack([corpus.target_for(r) for r in records]) if with_targets and records else None
    presence = np.stack([caption_presence(r.caption_target_lang, corpus.vocab) for r in records]) if records else None
    return SplitData(records, feats, durations, feature_config.frame_hop_s, targets, presence)


def pad_batch(features: list[np.ndarray], dtype: torch.dtype) -> tuple[torch.Tensor, torch.Tensor]:
    lengths = torch.tensor([f.shape[0] for f in features])
    T, D = int(lengths.max()), features[0].shape[1]
    batch = np.zeros((len(features), T, D), dtype=np.float64)
    for i, f in enumerate(features):
        batch[i, : f.shape[0]] = f
    return torch.as_tensor(batch, dtype=dtype), lengths


def predict(model: VgsModel, features: list[np.ndarray], batch_size: int = 32) -> tuple[np.ndarray, list[np.ndarray]]:
    """Detection probabilities (N, W) and per-utterance attention (W, T'_i)."""
    probs, attn = [], []
    model.eval()
    with torch.no_grad():
        for i in range(0, len(features), batch_size):
            chunk = features[i : i + batch_size]
            x, lengths = pad_batch(chunk, model.dtype)
            logits, weights = model(x, lengths)
            out_len = [model.config.output_length(int(n)) for n in lengths]
            probs.append(torch.sigmoid(logits).numpy())
            attn.extend(weights[j, :, : out_len[j]].numpy() for j in range(len(chunk)))
    W = model.config.n_keywords
    return (np.concatenate(probs) if probs else np.zeros((0, W))), attn


def predicted_times(model: VgsModel, attention: list[np.ndarray], durations: np.ndarray, frame_hop_s: float) -> np.ndarray:
    """(N, W) predicted keyword times from attention argmax."""
    ds = model.downsample_factor
    return np.array(
        [[predicted_time(a[k], ds, frame_hop_s, float(d)) for k in range(a.shape[0])] for a, d in zip(attention, durations)]
    ).reshape(len(attention), model.config.n_keywords)


def split_pairs(model: VgsModel, data: SplitData, alignments):
    """Full (utterance x keyword) evaluation grid for a split."""
    probs, attention = predict(model, data.features)
    times = predicted_times(model, attention, data.durations, data.frame_hop_s)
    return build_pairs(data.ids, probs, times, alignments)


def evaluate_split(model: VgsModel, data: SplitData, corpus: Corpus, theta: float = 0.5) -> MetricsReport:
    return evaluate(split_pairs(model, data, corpus.alignments), theta, corpus.vocab)
