"""Training against visual soft targets, dev-F1 model selection, transfer initialisation."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .corpus import Vocabulary
from .fileio import write_text_atomic
from .features import AugmentPolicy, FeatureSequence, spec_augment
from .metrics import f1_score
from .model import (
    CheckpointMeta,
    ModelConfig,
    ModelError,
    VgsModel,
    load_checkpoint,
    read_checkpoint_meta,
    save_checkpoint,
)
from .pipeline import SplitData, pad_batch, predict

log = logging.getLogger(__name__)

CLAMP_EPS = 1e-7


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 100
    theta_dev: float = 0.5
    seed: int = 0
    augment: AugmentPolicy = AugmentPolicy()
    init_checkpoint: str | None = None
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    seed: int
    loss_curve: list[float] = field(default_factory=list)
    dev_f1_curve: list[float] = field(default_factory=list)
    best_epoch: int | None = None
    best_dev_f1: float | None = None
    best_checkpoint: str | None = None
    source_checkpoint: str | None = None
    config: dict = field(default_factory=dict)
    steps: int = 0
    wall_clock_s: float = 0.0

    def to_dict(self, timing: bool = False) -> dict:
        d = asdict(self)
        if not timing:
            d.pop("wall_clock_s")
        return d

    def to_json(self) -> str:
        """Serialised report; timing is left out so reruns are byte-identical."""
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def epochs_to_reach(self, f1: float) -> int | None:
        for epoch, value in enumerate(self.dev_f1_curve, start=1):
            if value >= f1:
                return epoch
        return None


# ---------------------------------------------------------------------------
# loss


def bce_loss(predictions, targets) -> float:
    """Mean binary cross-entropy over the keyword axis (numpy, one utterance)."""
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(targets, dtype=float)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {y.shape}")
    if np.isnan(p).any() or np.isnan(y).any():
        raise ValueError("NaN input")
    p = np.clip(p, CLAMP_EPS, 1 - CLAMP_EPS)
    return float(np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p))))


def bce_loss_torch(probs: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Same loss, batched: mean over keywords then over utterances."""
    p = probs.clamp(CLAMP_EPS, 1 - CLAMP_EPS)
    return (-(targets * torch.log(p) + (1 - targets) * torch.log1p(-p))).mean()


def batch_loss(model: VgsModel, feats: list[np.ndarray], targets: np.ndarray) -> torch.Tensor:
    x, lengths = pad_batch(feats, model.dtype)
    logits, _ = model(x, lengths)
    return bce_loss_torch(torch.sigmoid(logits), torch.as_tensor(targets, dtype=model.dtype))


# ---------------------------------------------------------------------------
# evaluation during training


def dev_f1(model: VgsModel, dev: SplitData, theta: float = 0.5) -> float:
    """Detection F1 over all (utterance, keyword) dev pairs; truth from captions."""
    if len(dev) == 0:
        raise TrainingError("empty dev set")
    probs, _ = predict(model, dev.features)
    return f1_score(probs > theta, dev.presence > 0.5)


# ---------------------------------------------------------------------------
# transfer


def checkpoint_id(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def transfer_init(
    checkpoint: str | Path,
    vocab: Vocabulary,
    model_config: ModelConfig | None = None,
    dtype: torch.dtype = torch.float32,
) -> tuple[VgsModel, CheckpointMeta]:
    """Load a trained checkpoint as the starting point for a new corpus.

    Only the query-language words need to match: the target-language side of
    the vocabulary is free to differ.
    """
    meta = read_checkpoint_meta(checkpoint)
    src = meta.model_config
    if model_config is not None:
        for name in ("n_keywords", "feature_dim", "keyword_dim", "hidden_sizes", "downsample_factor", "channels", "kernel_sizes", "strides", "attention_dim"):
            a, b = getattr(src, name), getattr(model_config, name)
            if a != b:
                raise ModelError(f"architecture mismatch on {name}: checkpoint has {a}, target config has {b}")
    if src.n_keywords != len(vocab):
        raise ModelError(f"architecture mismatch on n_keywords: checkpoint has {src.n_keywords}, vocabulary has {len(vocab)}")
    if meta.query_words != vocab.query_words:
        missing = sorted(set(vocab.query_words) ^ set(meta.query_words))
        raise ModelError(f"query vocabulary mismatch (differing words: {missing or 'order only'})")
    model, meta = load_checkpoint(checkpoint, dtype=dtype)
    meta.steps = 0
    meta.source_checkpoint = checkpoint_id(checkpoint)
    meta.vocab_hash = vocab.hash()
    return model, meta


# ---------------------------------------------------------------------------
# training loop


def _augment(feat: np.ndarray, policy: AugmentPolicy, seed) -> np.ndarray:
    seq = FeatureSequence(feat, 0.01, 0.025)
    return spec_augment(seq, policy, seed).frames


def train(
    train_data: SplitData,
    dev_data: SplitData | None,
    vocab: Vocabulary,
    model_config: ModelConfig,
    config: TrainConfig = TrainConfig(),
    out_dir: str | Path | None = None,
    feature_config: dict | None = None,
    dtype: torch.dtype = torch.float32,
    initial_model: VgsModel | None = None,
) -> tuple[VgsModel, TrainReport]:
    """Adam on mean BCE between predicted keyword probabilities and visual targets.

    Every utterance is scored against all W keywords each step.  After each
    epoch the dev detection F1 is computed and the best epoch's parameters are
    kept (the later epoch wins ties).  Returns the selected model.
    """
    if train_data.targets is None:
        raise TrainingError("train split has no visual targets")
    if len(train_data) and train_data.targets.shape[1] != model_config.n_keywords:
        raise TrainingError("visual target width does not match the model")
    torch.manual_seed(config.seed)
    source = None
    if initial_model is not None:
        model = initial_model
    elif config.init_checkpoint:
        model, meta = transfer_init(config.init_checkpoint, vocab, model_config, dtype)
        source = meta.source_checkpoint
    else:
        model = VgsModel(model_config, seed=config.seed, dtype=dtype)

    report = TrainReport(seed=config.seed, source_checkpoint=source, config=config.to_dict())
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate, betas=config.betas, eps=config.adam_eps)
    best_state = copy.deepcopy(model.state_dict())
    start = time.perf_counter()
    n = len(train_data)
    steps = 0
    use_dev = dev_data is not None and len(dev_data) > 0

    for epoch in range(1, config.epochs + 1):
        model.train()
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        total, seen = 0.0, 0
        for b, i in enumerate(range(0, n, config.batch_size)):
            idx = order[i : i + config.batch_size]
            feats = [_augment(train_data.features[j], config.augment, [config.seed, epoch, int(j)]) for j in idx]
            loss = batch_loss(model, feats, train_data.targets[idx])
            if not torch.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}, batch {b}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            steps += 1
            total += loss.item() * len(idx)
            seen += len(idx)
        report.loss_curve.append(total / max(seen, 1))
        if use_dev:
            f1 = dev_f1(model, dev_data, config.theta_dev)
            report.dev_f1_curve.append(f1)
            if report.best_dev_f1 is None or f1 >= report.best_dev_f1:
                report.best_dev_f1, report.best_epoch = f1, epoch
                best_state = copy.deepcopy(model.state_dict())
        log.info("epoch %d loss %.4f dev_f1 %s", epoch, report.loss_curve[-1], report.dev_f1_curve[-1] if use_dev else "-")

    if use_dev and report.best_epoch is not None:
        model.load_state_dict(best_state)
    elif config.epochs > 0:
        report.best_epoch = config.epochs
    report.steps = steps
    report.wall_clock_s = time.perf_counter() - start
    model.eval()

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt = out_dir / "model.ckpt"
        meta = CheckpointMeta(
            model=model_config.to_dict(),
            vocab_hash=vocab.hash(),
            query_words=vocab.query_words,
            seed=config.seed,
            steps=steps,
            feature_config=feature_config or {},
            source_checkpoint=source,
        )
        save_checkpoint(model, ckpt, meta)
        report.best_checkpoint = str(ckpt)
        write_text_atomic(out_dir / "train_report.json", report.to_json())
        write_text_atomic(out_dir / "timing.json", json.dumps({"wall_clock_s": report.wall_clock_s}) + "\n")
    return model, report
