"""Evaluation: localisation/detection precision, random baseline, seed aggregation, κ co-occurrence.

Three regimes are scored over the full (utterance x keyword) grid:

actual localisation
    retrieved = score > theta; a hit needs the keyword to occur and the
    predicted time to fall inside its aligned interval (closed interval).
oracle localisation
    only pairs whose keyword occurs; accuracy of the predicted time alone.
keyword detection
    retrieved = score > theta; a hit needs only that the keyword occurs.

Precision over an empty retrieved set is reported as 0 with ``empty=True``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import unicodedata
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .corpus import AlignmentSet, Vocabulary, nfc
from .model import DEFAULT_THETA


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class EvalPair:
    utterance_id: str
    keyword_id: int
    detection_score: float
    predicted_time_s: float
    ground_truth_interval: tuple[float, float] | None = None

    @property
    def occurs(self) -> bool:
        return self.ground_truth_interval is not None


@dataclass(frozen=True)
class Counts:
    retrieved: int
    true_positives: int
    positives: int  # ground-truth positives in scope

    @property
    def empty(self) -> bool:
        return self.retrieved == 0

    @property
    def precision(self) -> float:
        return self.true_positives / self.retrieved if self.retrieved else 0.0

    @property
    def recall(self) -> float:
        return self.true_positives / self.positives if self.positives else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0


class _Grid:
    """Column view of a pair list for vectorised scoring."""

    def __init__(self, pairs: Sequence[EvalPair]):
        n = len(pairs)
        self.scores = np.fromiter((p.detection_score for p in pairs), float, n)
        self.times = np.fromiter((p.predicted_time_s for p in pairs), float, n)
        self.keywords = np.fromiter((p.keyword_id for p in pairs), int, n)
        self.occurs = np.fromiter((p.occurs for p in pairs), bool, n)
        gt = [p.ground_truth_interval or (math.nan, math.nan) for p in pairs]
        self.starts = np.array([g[0] for g in gt], dtype=float).reshape(n)
        self.ends = np.array([g[1] for g in gt], dtype=float).reshape(n)
        with np.errstate(invalid="ignore"):
            self.inside = self.occurs & (self.starts <= self.times) & (self.times <= self.ends)

    def retrieved(self, theta: float) -> np.ndarray:
        return self.scores > theta


def _check_pairs(pairs: Sequence[EvalPair], theta: float | None) -> None:
    for p in pairs:
        if math.isnan(p.detection_score):
            raise MetricsError(f"{p.utterance_id}/{p.keyword_id}: NaN detection score")
        if math.isnan(p.predicted_time_s) and (theta is None or p.detection_score > theta):
            raise MetricsError(f"{p.utterance_id}/{p.keyword_id}: NaN predicted time")


def with_alignments(pairs: Sequence[EvalPair], alignments: AlignmentSet) -> list[EvalPair]:
    """Replace each pair's ground-truth interval with the one in ``alignments``."""
    out = []
    for p in pairs:
        iv = alignments.interval(p.utterance_id, p.keyword_id)
        out.append(replace(p, ground_truth_interval=None if iv is None else (iv.start_s, iv.end_s)))
    return out


def actual_localisation_precision(pairs: Sequence[EvalPair], theta: float = DEFAULT_THETA) -> tuple[float, Counts]:
    _check_pairs(pairs, theta)
    g = _Grid(pairs)
    ret = g.retrieved(theta)
    counts = Counts(int(ret.sum()), int((ret & g.inside).sum()), int(g.occurs.sum()))
    return counts.precision, counts


def oracle_localisation_accuracy(pairs: Sequence[EvalPair], alignments: AlignmentSet | None = None) -> tuple[float, Counts]:
    if alignments is not None:
        pairs = with_alignments(pairs, alignments)
    g = _Grid(pairs)
    n_pos = int(g.occurs.sum())
    if n_pos == 0:
        raise MetricsError("no ground-truth positives: oracle localisation undefined")
    if np.isnan(g.times[g.occurs]).any():
        raise MetricsError("NaN predicted time on a ground-truth positive")
    counts = Counts(n_pos, int(g.inside.sum()), n_pos)
    return counts.precision, counts


def detection_counts(pairs: Sequence[EvalPair], theta: float = DEFAULT_THETA) -> Counts:
    _check_pairs(pairs, None)
    g = _Grid(pairs)
    ret = g.retrieved(theta)
    return Counts(int(ret.sum()), int((ret & g.occurs).sum()), int(g.occurs.sum()))


def detection_precision(pairs: Sequence[EvalPair], theta: float = DEFAULT_THETA) -> tuple[float, Counts]:
    counts = detection_counts(pairs, theta)
    return counts.precision, counts


def f1_score(predicted: np.ndarray, truth: np.ndarray) -> float:
    predicted = np.asarray(predicted, bool)
    truth = np.asarray(truth, bool)
    tp = int((predicted & truth).sum())
    return Counts(int(predicted.sum()), tp, int(truth.sum())).f1


# ---------------------------------------------------------------------------
# reports


@dataclass
class MetricsReport:
    actual_localisation_precision: float
    oracle_localisation_accuracy: float
    detection_precision: float
    detection_recall: float
    detection_f1: float
    actual_counts: Counts
    oracle_counts: Counts
    detection_counts: Counts
    theta: float
    keyword: str = "ALL"
    flags: tuple[str, ...] = ()
    per_keyword: list["MetricsReport"] = field(default_factory=list)

    HEADLINE = ("actual_localisation_precision", "oracle_localisation_accuracy", "detection_precision")

    def row(self) -> dict:
        return {
            "keyword": self.keyword,
            "actual_localisation_precision": self.actual_localisation_precision,
            "oracle_localisation_accuracy": self.oracle_localisation_accuracy,
            "detection_precision": self.detection_precision,
            "detection_recall": self.detection_recall,
            "detection_f1": self.detection_f1,
            "retrieved": self.detection_counts.retrieved,
            "actual_true_positives": self.actual_counts.true_positives,
            "detection_true_positives": self.detection_counts.true_positives,
            "oracle_correct": self.oracle_counts.true_positives,
            "ground_truth_positives": self.detection_counts.positives,
            "flags": ";".join(self.flags),
        }

    def to_dict(self) -> dict:
        return {"theta": self.theta, "global": self.row(), "per_keyword": [r.row() for r in self.per_keyword]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def to_csv(self) -> str:
        rows = [r.row() for r in self.per_keyword] + [self.row()]
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()


def _report(pairs: Sequence[EvalPair], theta: float, keyword: str) -> MetricsReport:
    actual, a_counts = actual_localisation_precision(pairs, theta)
    d_counts = detection_counts(pairs, theta)
    flags = []
    if d_counts.empty:
        flags.append("no_retrieved")
    if d_counts.positives == 0:
        flags.append("no_positives")
        oracle, o_counts = 0.0, Counts(0, 0, 0)
    else:
        oracle, o_counts = oracle_localisation_accuracy(pairs)
    return MetricsReport(
        actual, oracle, d_counts.precision, d_counts.recall, d_counts.f1,
        a_counts, o_counts, d_counts, theta, keyword, tuple(flags),
    )


def per_keyword_report(pairs: Sequence[EvalPair], theta: float = DEFAULT_THETA, vocab: Vocabulary | None = None) -> list[MetricsReport]:
    """One report per keyword; undefined rates are flagged, not silently zeroed."""
    by_kw: dict[int, list[EvalPair]] = {}
    for p in pairs:
        by_kw.setdefault(p.keyword_id, []).append(p)
    rows = []
    for kid in sorted(by_kw):
        name = vocab.entries[kid].query_word if vocab is not None else str(kid)
        rows.append(_report(by_kw[kid], theta, name))
    return rows


def evaluate(pairs: Sequence[EvalPair], theta: float = DEFAULT_THETA, vocab: Vocabulary | None = None) -> MetricsReport:
    report = _report(pairs, theta, "ALL")
    report.per_keyword = per_keyword_report(pairs, theta, vocab)
    return report


def build_pairs(
    utterance_ids: Sequence[str],
    scores: np.ndarray,
    times: np.ndarray,
    alignments: AlignmentSet,
) -> list[EvalPair]:
    """Full evaluation grid from (N, W) score and time arrays."""
    pairs = []
    for i, uid in enumerate(utterance_ids):
        for k in range(scores.shape[1]):
            iv = alignments.interval(uid, k)
            gt = None if iv is None else (iv.start_s, iv.end_s)
            pairs.append(EvalPair(uid, k, float(scores[i, k]), float(times[i, k]), gt))
    return pairs


def random_baseline(pairs: Sequence[EvalPair], durations: Mapping[str, float], seed: int) -> list[EvalPair]:
    """Same grid with scores ~ U[0, 1] and times ~ U[0, duration]."""
    rng = np.random.default_rng(seed)
    scores = rng.random(len(pairs))
    fractions = rng.random(len(pairs))
    return [
        replace(p, detection_score=float(s), predicted_time_s=float(f * durations[p.utterance_id]))
        for p, s, f in zip(pairs, scores, fractions)
    ]


def expected_random_oracle_accuracy(pairs: Sequence[EvalPair], durations: Mapping[str, float]) -> float:
    """Mean fraction of the utterance covered by each positive's interval."""
    fracs = [
        (p.ground_truth_interval[1] - p.ground_truth_interval[0]) / durations[p.utterance_id]
        for p in pairs
        if p.ground_truth_interval is not None
    ]
    if not fracs:
        raise MetricsError("no ground-truth positives")
    return float(np.mean(fracs))


def expected_random_detection_precision(pairs: Sequence[EvalPair]) -> float:
    """Keyword prior over the grid: scores carry no information about truth."""
    return float(np.mean([p.occurs for p in pairs]))


# ---------------------------------------------------------------------------
# multi-seed aggregation


@dataclass(frozen=True)
class Aggregate:
    mean: float
    std: float
    n: int

    def __str__(self) -> str:
        note = " (n=1)" if self.n == 1 else ""
        return f"{100 * self.mean:.1f} ± {100 * self.std:.1f}{note}"


def aggregate_values(values: Sequence[float]) -> Aggregate:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise MetricsError("nothing to aggregate")
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return Aggregate(float(arr.mean()), std, int(arr.size))


def aggregate_runs(reports: Sequence[MetricsReport]) -> dict[str, Aggregate]:
    if not reports:
        raise MetricsError("nothing to aggregate")
    theta = reports[0].theta
    grid = reports[0].detection_counts.positives, reports[0].actual_counts.positives
    for r in reports[1:]:
        if r.theta != theta:
            raise MetricsError(f"reports use different thresholds ({theta} vs {r.theta})")
        if (r.detection_counts.positives, r.actual_counts.positives) != grid:
            raise MetricsError("reports were computed on different evaluation grids")
    names = [*MetricsReport.HEADLINE, "detection_recall", "detection_f1"]
    return {name: aggregate_values([getattr(r, name) for r in reports]) for name in names}


# ---------------------------------------------------------------------------
# co-occurrence


def tokenise(text: str) -> list[str]:
    """Whitespace tokens with surrounding punctuation stripped, NFC."""
    out = []
    for tok in nfc(text).split():
        start, end = 0, len(tok)
        while start < end and unicodedata.category(tok[start]).startswith("P"):
            start += 1
        while end > start and unicodedata.category(tok[end - 1]).startswith("P"):
            end -= 1
        if start < end:
            out.append(tok[start:end])
    return out


def _contains(tokens: list[str], word: str) -> bool:
    parts = word.split()
    if len(parts) == 1:
        return word in tokens
    n = len(parts)
    return any(tokens[i : i + n] == parts for i in range(len(tokens) - n + 1))


def presence_matrix(captions: Sequence[str | None], words: Sequence[str], casefold: bool) -> np.ndarray:
    """(N, W) boolean: caption n contains word w as a token."""
    out = np.zeros((len(captions), len(words)), dtype=bool)
    norm_words = [nfc(w).casefold() if casefold else nfc(w) for w in words]
    for n, cap in enumerate(captions):
        if cap is None:
            continue
        tokens = tokenise(cap)
        if casefold:
            tokens = [t.casefold() for t in tokens]
        for w, word in enumerate(norm_words):
            out[n, w] = _contains(tokens, word)
    return out


def contingency(x: np.ndarray, y: np.ndarray) -> tuple[int, int, int, int]:
    """(a, b, c, d) = (both, x only, y only, neither)."""
    x = np.asarray(x, bool)
    y = np.asarray(y, bool)
    return int((x & y).sum()), int((x & ~y).sum()), int((~x & y).sum()), int((~x & ~y).sum())


def kappa_from_counts(a: int, b: int, c: int, d: int) -> float:
    n = a + b + c + d
    if n == 0:
        return 0.0
    p_o = (a + d) / n
    p_e = ((a + b) * (a + c) + (c + d) * (b + d)) / (n * n)
    if p_e >= 1.0:
        return 0.0
    return (p_o - p_e) / (1.0 - p_e)


def cohen_kappa(x: np.ndarray, y: np.ndarray) -> float:
    if len(x) != len(y):
        raise MetricsError("presence vectors differ in length")
    return kappa_from_counts(*contingency(x, y))


@dataclass
class CooccurrenceMatrix:
    query_words: list[str]
    target_words: list[str]
    kappa: np.ndarray  # raw, (Wq, Wt)
    normalised: np.ndarray
    counts: np.ndarray  # (Wq, Wt, 4) contingency (a, b, c, d)

    def to_csv(self, normalised: bool = True) -> str:
        values = self.normalised if normalised else self.kappa
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["", *self.target_words])
        for q, row in zip(self.query_words, values):
            writer.writerow([q, *(f"{v:.6f}" for v in row)])
        return buf.getvalue()

    def to_long_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["query_word", "target_word", "kappa", "kappa_normalised"])
        for i, q in enumerate(self.query_words):
            for j, t in enumerate(self.target_words):
                writer.writerow([q, t, f"{self.kappa[i, j]:.6f}", f"{self.normalised[i, j]:.6f}"])
        return buf.getvalue()


def normalise_rows(kappa: np.ndarray) -> np.ndarray:
    """Clamp negatives to 0 and divide each row by its maximum (if positive)."""
    k = np.maximum(kappa, 0.0)
    row_max = k.max(axis=1, keepdims=True)
    return np.divide(k, row_max, out=np.zeros_like(k), where=row_max > 0)


def cooccurrence_kappa(
    captions_query: Sequence[str | None],
    captions_target: Sequence[str | None],
    vocab: Vocabulary,
) -> CooccurrenceMatrix:
    if len(captions_query) != len(captions_target):
        raise MetricsError(f"caption lists differ in length ({len(captions_query)} vs {len(captions_target)})")
    q = presence_matrix(captions_query, vocab.query_words, casefold=True)
    t = presence_matrix(captions_target, vocab.target_words, casefold=False)
    W = len(vocab)
    counts = np.zeros((W, W, 4), dtype=int)
    kappa = np.zeros((W, W))
    for i in range(W):
        for j in range(W):
            counts[i, j] = contingency(q[:, i], t[:, j])
            kappa[i, j] = kappa_from_counts(*counts[i, j])
    return CooccurrenceMatrix(vocab.query_words, vocab.target_words, kappa, normalise_rows(kappa), counts)
