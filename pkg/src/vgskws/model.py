"""Keyword-conditioned attention network for spoken keyword detection and localisation.

Four parts, applied in order:

* audio encoder: a stack of 1-D convolutions over time (ReLU, same padding)
* keyword encoder: a learnable lookup table, one row per keyword
* attention: scaled dot product between projected frames and the projected
  keyword embedding, softmax over frames, weighted sum of frame embeddings
* classifier: MLP on the pooled context ending in one logit

The attention weights double as the localisation signal: the predicted time
of a keyword is the centre of the encoder frame with the largest weight.
"""

from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .features import FeatureSequence

DEFAULT_THETA = 0.5


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_keywords: int
    feature_dim: int = 39
    channels: tuple[int, ...] = (512, 512, 512, 512, 512, 512)
    kernel_sizes: tuple[int, ...] = (9, 5, 5, 5, 5, 5)
    strides: tuple[int, ...] = (1, 2, 1, 1, 1, 1)
    keyword_dim: int = 512
    attention_dim: int = 512
    hidden_sizes: tuple[int, ...] = (4096, 8192)

    def __post_init__(self):
        # tuples survive JSON round trips as lists
        for name in ("channels", "kernel_sizes", "strides", "hidden_sizes"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if not (len(self.channels) == len(self.kernel_sizes) == len(self.strides)) or not self.channels:
            raise ModelError("channels, kernel_sizes and strides must be equally long and non-empty")
        if any(k % 2 == 0 or k < 1 for k in self.kernel_sizes):
            raise ModelError("kernel sizes must be odd (same padding)")
        if any(s < 1 for s in self.strides):
            raise ModelError("strides must be >= 1")
        if self.n_keywords < 1:
            raise ModelError("n_keywords must be >= 1")

    @property
    def downsample_factor(self) -> int:
        return math.prod(self.strides)

    @property
    def receptive_field(self) -> int:
        rf, jump = 1, 1
        for k, s in zip(self.kernel_sizes, self.strides):
            rf += (k - 1) * jump
            jump *= s
        return rf

    @property
    def embed_dim(self) -> int:
        return self.channels[-1]

    def output_length(self, n_frames: int) -> int:
        for s in self.strides:
            n_frames = -(-n_frames // s)
        return n_frames

    def to_dict(self) -> dict:
        return asdict(self)


def small_config(n_keywords: int, feature_dim: int = 39, **overrides) -> ModelConfig:
    """Reduced-width model for desk-scale experiments and tests."""
    base = dict(
        n_keywords=n_keywords,
        feature_dim=feature_dim,
        channels=(64, 64, 64, 64),
        kernel_sizes=(5, 3, 3, 3),
        strides=(1, 2, 1, 1),
        keyword_dim=32,
        attention_dim=32,
        hidden_sizes=(64, 128),
    )
    base.update(overrides)
    return ModelConfig(**base)


class VgsModel(nn.Module):
    def __init__(self, config: ModelConfig, seed: int = 0, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        c = config
        in_ch = [c.feature_dim, *c.channels[:-1]]
        self.convs = nn.ModuleList(
            nn.Conv1d(i, o, k, stride=s, padding=(k - 1) // 2)
            for i, o, k, s in zip(in_ch, c.channels, c.kernel_sizes, c.strides)
        )
        self.keyword_embeddings = nn.Parameter(torch.empty(c.n_keywords, c.keyword_dim))
        self.query_proj = nn.Linear(c.keyword_dim, c.attention_dim)
        self.key_proj = nn.Linear(c.embed_dim, c.attention_dim)
        sizes = [c.embed_dim, *c.hidden_sizes]
        self.hidden = nn.ModuleList(nn.Linear(a, b) for a, b in zip(sizes[:-1], sizes[1:]))
        self.output = nn.Linear(sizes[-1], 1)
        self.to(dtype)
        self.reset_parameters(seed)
        if self.downsample_factor != math.prod(conv.stride[0] for conv in self.convs):
            raise ModelError("downsample factor does not match encoder strides")

    @property
    def downsample_factor(self) -> int:
        return self.config.downsample_factor

    @property
    def dtype(self) -> torch.dtype:
        return self.keyword_embeddings.dtype

    def reset_parameters(self, seed: int) -> None:
        """Uniform fan-in initialisation, zero biases."""
        gen = torch.Generator().manual_seed(int(seed))

        def fill(w: torch.Tensor, fan_in: int, gain: float) -> None:
            bound = math.sqrt(gain / fan_in)
            with torch.no_grad():
                w.copy_((torch.rand(w.shape, generator=gen, dtype=torch.float64) * 2 - 1) * bound)

        for conv in self.convs:
            fill(conv.weight, conv.in_channels * conv.kernel_size[0], 6.0)
            nn.init.zeros_(conv.bias)
        fill(self.keyword_embeddings, self.config.keyword_dim, 3.0)
        for lin, gain in [(self.query_proj, 3.0), (self.key_proj, 3.0), *[(h, 6.0) for h in self.hidden], (self.output, 3.0)]:
            fill(lin.weight, lin.in_features, gain)
            nn.init.zeros_(lin.bias)

    # -- pieces -----------------------------------------------------------

    def encode(self, feats: torch.Tensor, lengths: torch.Tensor | None = None):
        """(B, T, D) features -> (B, T', C) frame embeddings and valid lengths."""
        B, T, _ = feats.shape
        if lengths is None:
            lengths = torch.full((B,), T, dtype=torch.long)
        x = feats.transpose(1, 2)
        for conv in self.convs:
            x = F.relu(conv(x))
            s = conv.stride[0]
            lengths = torch.div(lengths + s - 1, s, rounding_mode="floor")
            # zero the padded tail so batched and single-utterance results agree
            valid = torch.arange(x.shape[-1])[None, :] < lengths[:, None]
            x = x * valid[:, None, :].to(x.dtype)
        return x.transpose(1, 2), lengths

    def embed(self, keyword_ids: torch.Tensor | None = None) -> torch.Tensor:
        if keyword_ids is None:
            return self.keyword_embeddings
        return self.keyword_embeddings[keyword_ids]

    def attend(self, frames: torch.Tensor, lengths: torch.Tensor, kw_emb: torch.Tensor):
        """Pool (B, T', C) frames for each of K keyword embeddings.

        Returns context (B, K, C) and weights (B, K, T').
        """
        keys = self.key_proj(frames)  # (B, T', A)
        query = self.query_proj(kw_emb)  # (K, A)
        scores = torch.einsum("ka,bta->bkt", query, keys) / math.sqrt(self.config.attention_dim)
        valid = torch.arange(frames.shape[1])[None, :] < lengths[:, None]
        scores = scores.masked_fill(~valid[:, None, :], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        context = torch.einsum("bkt,btc->bkc", weights, frames)
        return context, weights

    def classify(self, x: torch.Tensor) -> torch.Tensor:
        for lin in self.hidden:
            x = F.relu(lin(x))
        return self.output(x).squeeze(-1)

    def forward(self, feats: torch.Tensor, lengths: torch.Tensor | None = None, keyword_ids: torch.Tensor | None = None):
        """Logits (B, K) and attention weights (B, K, T') for K keywords (all by default)."""
        frames, out_lengths = self.encode(feats, lengths)
        kw = self.embed(keyword_ids)
        context, weights = self.attend(frames, out_lengths, kw)
        return self.classify(context), weights

    def numpy_state(self) -> dict[str, np.ndarray]:
        return {k: v.detach().cpu().numpy().copy() for k, v in self.state_dict().items()}


# ---------------------------------------------------------------------------
# single-utterance operations


@dataclass(frozen=True)
class AttentionMap:
    weights: np.ndarray
    utterance_id: str
    keyword_id: int


@dataclass(frozen=True)
class LocalisationResult:
    keyword_id: int
    detection_score: float
    detected: bool
    predicted_time_s: float
    attention: AttentionMap
    theta: float = DEFAULT_THETA


def _as_batch(features: FeatureSequence, model: VgsModel) -> torch.Tensor:
    T = features.n_frames
    if T < model.config.receptive_field:
        raise ModelError(f"utterance has {T} frames, fewer than the encoder receptive field ({model.config.receptive_field})")
    if features.dim != model.config.feature_dim:
        raise ModelError(f"feature dim {features.dim} != model feature dim {model.config.feature_dim}")
    return torch.as_tensor(features.frames, dtype=model.dtype)[None]


def encode_audio(features: FeatureSequence, model: VgsModel) -> np.ndarray:
    with torch.no_grad():
        frames, _ = model.encode(_as_batch(features, model))
    return frames[0].numpy()


def embed_keyword(keyword_id: int, model: VgsModel) -> np.ndarray:
    if not 0 <= keyword_id < model.config.n_keywords:
        raise ModelError(f"keyword id {keyword_id} outside 0..{model.config.n_keywords - 1}")
    return model.keyword_embeddings[keyword_id].detach().numpy().copy()


def attend(frame_embeddings: np.ndarray, keyword_embedding: np.ndarray, model: VgsModel):
    """Context vector (C,) and attention weights (T',) for one utterance and keyword."""
    frames = torch.as_tensor(np.asarray(frame_embeddings), dtype=model.dtype)[None]
    kw = torch.as_tensor(np.asarray(keyword_embedding), dtype=model.dtype)[None]
    with torch.no_grad():
        context, weights = model.attend(frames, torch.tensor([frames.shape[1]]), kw)
    return context[0, 0].numpy(), weights[0, 0].numpy()


def score(context: np.ndarray, model: VgsModel) -> float:
    x = torch.as_tensor(np.asarray(context), dtype=model.dtype)
    with torch.no_grad():
        return float(torch.sigmoid(model.classify(x)))


def forward(features: FeatureSequence, keyword_id: int, model: VgsModel) -> tuple[float, AttentionMap]:
    embed_keyword(keyword_id, model)  # bounds check
    with torch.no_grad():
        logits, weights = model(_as_batch(features, model), keyword_ids=torch.tensor([keyword_id]))
    prob = float(torch.sigmoid(logits[0, 0]))
    return prob, AttentionMap(weights[0, 0].numpy(), features.utterance_id, keyword_id)


def score_all(features: FeatureSequence, model: VgsModel) -> tuple[np.ndarray, np.ndarray]:
    """Detection probabilities (W,) and attention weights (W, T') for every keyword."""
    with torch.no_grad():
        logits, weights = model(_as_batch(features, model))
    return torch.sigmoid(logits[0]).numpy(), weights[0].numpy()


def frame_to_time(frame: int, downsample_factor: int, frame_hop_s: float) -> float:
    return (frame + 0.5) * downsample_factor * frame_hop_s


def predicted_time(weights: np.ndarray, downsample_factor: int, frame_hop_s: float, duration: float | None = None) -> float:
    # np.argmax returns the first maximum: ties go to the earliest frame
    t = frame_to_time(int(np.argmax(weights)), downsample_factor, frame_hop_s)
    return min(t, duration) if duration is not None else t


def localise(
    features: FeatureSequence,
    keyword_id: int,
    model: VgsModel,
    theta: float = DEFAULT_THETA,
    duration: float | None = None,
) -> LocalisationResult:
    prob, attn = forward(features, keyword_id, model)
    t = predicted_time(attn.weights, model.downsample_factor, features.frame_hop_s, duration)
    return LocalisationResult(keyword_id, prob, prob > theta, t, attn, theta)


# ---------------------------------------------------------------------------
# checkpoints

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


@dataclass
class CheckpointMeta:
    model: dict
    vocab_hash: str
    query_words: list[str]
    seed: int
    steps: int
    feature_config: dict = field(default_factory=dict)
    source_checkpoint: str | None = None
    extra: dict = field(default_factory=dict)

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.model)


def save_checkpoint(model: VgsModel, path: str | Path, meta: CheckpointMeta) -> None:
    """Write parameters and metadata to a zip archive (np.load-compatible).

    Entries carry a fixed timestamp so identical models give identical bytes.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("metadata.json", date_time=_ZIP_DATE)
        zf.writestr(info, json.dumps(asdict(meta), indent=2, sort_keys=True, ensure_ascii=False))
        for name, arr in sorted(model.numpy_state().items()):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, arr, allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_DATE), buf.getvalue())
    tmp.replace(path)


def read_checkpoint_meta(path: str | Path) -> CheckpointMeta:
    with zipfile.ZipFile(path) as zf:
        return CheckpointMeta(**json.loads(zf.read("metadata.json").decode("utf-8")))


def load_checkpoint(
    path: str | Path,
    vocab_hash: str | None = None,
    dtype: torch.dtype = torch.float32,
) -> tuple[VgsModel, CheckpointMeta]:
    """Load a model; if ``vocab_hash`` is given it must match the checkpoint's."""
    meta = read_checkpoint_meta(path)
    if vocab_hash is not None and vocab_hash != meta.vocab_hash:
        raise ModelError(f"vocabulary hash mismatch: checkpoint {meta.vocab_hash[:12]} vs corpus {vocab_hash[:12]}")
    model = VgsModel(meta.model_config, dtype=dtype)
    state = {}
    with zipfile.ZipFile(path) as zf:
        for name in model.state_dict():
            arr = np.lib.format.read_array(io.BytesIO(zf.read(f"{name}.npy")), allow_pickle=False)
            state[name] = torch.as_tensor(arr).to(dtype)
    model.load_state_dict(state)
    for name, tensor in model.state_dict().items():
        if not torch.isfinite(tensor).all():
            raise ModelError(f"non-finite values in parameter {name}")
    return model, meta


def parameter_groups(model: VgsModel) -> dict[str, Sequence[nn.Parameter]]:
    return {
        "encoder": [p for conv in model.convs for p in conv.parameters()],
        "keyword_table": [model.keyword_embeddings],
        "attention": [*model.query_proj.parameters(), *model.key_proj.parameters()],
        "classifier": [p for lin in [*model.hidden, model.output] for p in lin.parameters()],
    }
