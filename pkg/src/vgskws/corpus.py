"""Corpus formats: manifests, vocabularies, keyword alignments, visual targets.

On-disk layout of a corpus directory::

    manifest.jsonl         one utterance record per line
    vocab.csv              keyword_id,query_word,target_word
    alignments.csv         utterance_id,keyword,start_s,end_s
    visual_targets.csv     visual_target_id,p_0,...,p_{W-1}
    audio/<id>.wav         16 kHz mono waveforms

All loaders validate eagerly and raise :class:`CorpusError` with enough
context (file, line, offending value) to fix the input by hand.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

SAMPLE_RATE = 16000
SPLITS = ("train", "dev", "test")

MANIFEST_NAME = "manifest.jsonl"
VOCAB_NAME = "vocab.csv"
ALIGNMENTS_NAME = "alignments.csv"
TARGETS_NAME = "visual_targets.csv"

MANIFEST_KEYS = (
    "utterance_id",
    "audio_path",
    "split",
    "caption_en",
    "caption_yo",
    "visual_target_id",
)


class CorpusError(ValueError):
    """Raised for malformed or inconsistent corpus files."""


def nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text)


# ---------------------------------------------------------------------------
# Vocabulary


@dataclass(frozen=True)
class VocabEntry:
    keyword_id: int
    query_word: str
    target_word: str


class Vocabulary:
    """Closed keyword inventory pairing query-language and target-language words."""

    def __init__(self, entries: Iterable[VocabEntry | tuple[int, str, str]]):
        items = [e if isinstance(e, VocabEntry) else VocabEntry(int(e[0]), nfc(e[1]), nfc(e[2])) for e in entries]
        items.sort(key=lambda e: e.keyword_id)
        if not items:
            raise CorpusError("vocabulary is empty")
        ids = [e.keyword_id for e in items]
        if ids != list(range(len(items))):
            raise CorpusError(f"keyword ids must be contiguous 0..{len(items) - 1}, got {ids}")
        dupes = [w for w, n in Counter(e.query_word for e in items).items() if n > 1]
        if dupes:
            raise CorpusError(f"duplicate query words: {dupes}")
        self.entries: tuple[VocabEntry, ...] = tuple(items)
        self._by_query = {e.query_word: e.keyword_id for e in items}
        self._by_target = {e.target_word: e.keyword_id for e in items}

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.entries == other.entries

    def __repr__(self) -> str:
        return f"Vocabulary(W={len(self)})"

    @property
    def query_words(self) -> list[str]:
        return [e.query_word for e in self.entries]

    @property
    def target_words(self) -> list[str]:
        return [e.target_word for e in self.entries]

    def id_of(self, word: str) -> int:
        """Resolve a query word (preferred) or target word to its keyword id."""
        word = nfc(word)
        if word in self._by_query:
            return self._by_query[word]
        if word in self._by_target:
            return self._by_target[word]
        raise CorpusError(f"unknown keyword {word!r}")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["keyword_id", "query_word", "target_word"])
        for e in self.entries:
            writer.writerow([e.keyword_id, e.query_word, e.target_word])
        return buf.getvalue()

    def hash(self) -> str:
        return hashlib.sha256(self.to_csv().encode("utf-8")).hexdigest()


def load_vocabulary(path: str | Path) -> Vocabulary:
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["keyword_id", "query_word", "target_word"]:
            raise CorpusError(f"{path}: bad vocabulary header {reader.fieldnames}")
        entries = []
        for lineno, row in enumerate(reader, start=2):
            try:
                kid = int(row["keyword_id"])
            except (TypeError, ValueError):
                raise CorpusError(f"{path}:{lineno}: bad keyword_id {row['keyword_id']!r}") from None
            entries.append(VocabEntry(kid, nfc(row["query_word"]), nfc(row["target_word"])))
    return Vocabulary(entries)


def save_vocabulary(vocab: Vocabulary, path: str | Path) -> None:
    Path(path).write_text(vocab.to_csv(), encoding="utf-8")


# ---------------------------------------------------------------------------
# Manifest


@dataclass(frozen=True)
class UtteranceRecord:
    utterance_id: str
    audio_path: str
    split: str
    caption_query_lang: str | None = None
    caption_target_lang: str | None = None
    visual_target_id: str | None = None

    def to_json(self) -> str:
        obj = {
            "utterance_id": self.utterance_id,
            "audio_path": self.audio_path,
            "split": self.split,
            "caption_en": self.caption_query_lang,
            "caption_yo": self.caption_target_lang,
            "visual_target_id": self.visual_target_id,
        }
        return json.dumps(obj, ensure_ascii=False, sort_keys=False)


def split_counts(records: Sequence[UtteranceRecord]) -> dict[str, int]:
    counts = Counter(r.split for r in records)
    return {s: counts.get(s, 0) for s in SPLITS}


def load_manifest(path: str | Path) -> list[UtteranceRecord]:
    path = Path(path)
    records: list[UtteranceRecord] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: parse error: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}:{lineno}: expected an object")
            for key in ("utterance_id", "audio_path", "split"):
                if not isinstance(obj.get(key), str):
                    raise CorpusError(f"{path}:{lineno}: missing or non-text field {key!r}")
            uid = obj["utterance_id"]
            if obj["split"] not in SPLITS:
                raise CorpusError(f"{path}:{lineno}: unknown split {obj['split']!r}")
            if uid in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate utterance_id {uid!r}")
            seen.add(uid)
            cap_en = obj.get("caption_en")
            cap_yo = obj.get("caption_yo")
            records.append(
                UtteranceRecord(
                    utterance_id=uid,
                    audio_path=obj["audio_path"],
                    split=obj["split"],
                    caption_query_lang=None if cap_en is None else nfc(cap_en),
                    caption_target_lang=None if cap_yo is None else nfc(cap_yo),
                    visual_target_id=obj.get("visual_target_id"),
                )
            )
    return records


def save_manifest(records: Sequence[UtteranceRecord], path: str | Path) -> None:
    text = "".join(r.to_json() + "\n" for r in records)
    Path(path).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# Alignments


@dataclass(frozen=True)
class Interval:
    keyword_id: int
    start_s: float
    end_s: float

    def contains(self, t: float) -> bool:
        return self.start_s <= t <= self.end_s


class AlignmentSet(Mapping[str, tuple[Interval, ...]]):
    """utterance_id -> keyword intervals, at most one per keyword."""

    def __init__(self, data: Mapping[str, Iterable[Interval]]):
        self._data: dict[str, tuple[Interval, ...]] = {}
        for uid, intervals in data.items():
            ivs = tuple(sorted(intervals, key=lambda iv: (iv.start_s, iv.keyword_id)))
            kids = Counter(iv.keyword_id for iv in ivs)
            repeated = [k for k, n in kids.items() if n > 1]
            if repeated:
                raise CorpusError(f"{uid}: keyword ids {repeated} annotated more than once")
            for iv in ivs:
                if not (iv.start_s >= 0 and iv.start_s < iv.end_s):
                    raise CorpusError(f"{uid}: bad interval {iv}")
            if ivs:
                self._data[uid] = ivs

    def __getitem__(self, uid: str) -> tuple[Interval, ...]:
        return self._data[uid]

    def __iter__(self):
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, AlignmentSet) and self._data == other._data

    def interval(self, uid: str, keyword_id: int) -> Interval | None:
        for iv in self._data.get(uid, ()):
            if iv.keyword_id == keyword_id:
                return iv
        return None

    def check_durations(self, durations: Mapping[str, float]) -> None:
        for uid, ivs in self._data.items():
            if uid not in durations:
                raise CorpusError(f"alignment for unknown utterance {uid!r}")
            dur = durations[uid]
            for iv in ivs:
                # 0.5 ms slack: times are written at millisecond resolution
                if iv.end_s > dur + 5e-4:
                    raise CorpusError(f"{uid}: interval end {iv.end_s} beyond duration {dur:.4f}")


def load_alignments(
    path: str | Path,
    vocab: Vocabulary,
    durations: Mapping[str, float] | None = None,
) -> AlignmentSet:
    path = Path(path)
    grouped: dict[str, list[Interval]] = {}
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["utterance_id", "keyword", "start_s", "end_s"]:
            raise CorpusError(f"{path}: bad alignment header {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            try:
                kid = vocab.id_of(row["keyword"])
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
            try:
                start, end = float(row["start_s"]), float(row["end_s"])
            except (TypeError, ValueError):
                raise CorpusError(f"{path}:{lineno}: non-numeric time") from None
            if not (math.isfinite(start) and math.isfinite(end)):
                raise CorpusError(f"{path}:{lineno}: non-finite time")
            if start < 0:
                raise CorpusError(f"{path}:{lineno}: negative start time {start}")
            if start >= end:
                raise CorpusError(f"{path}:{lineno}: start {start} >= end {end}")
            uid = row["utterance_id"]
            bucket = grouped.setdefault(uid, [])
            if any(iv.keyword_id == kid for iv in bucket):
                raise CorpusError(f"{path}:{lineno}: keyword {row['keyword']!r} repeated in {uid!r}")
            bucket.append(Interval(kid, start, end))
    alignments = AlignmentSet(grouped)
    if durations is not None:
        alignments.check_durations(durations)
    return alignments


def save_alignments(alignments: AlignmentSet, vocab: Vocabulary, path: str | Path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["utterance_id", "keyword", "start_s", "end_s"])
    for uid in alignments:
        for iv in alignments[uid]:
            writer.writerow([uid, vocab.entries[iv.keyword_id].query_word, _fmt_time(iv.start_s), _fmt_time(iv.end_s)])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _fmt_time(t: float) -> str:
    s = f"{t:.3f}"
    # keep full precision when millisecond formatting would lose information
    return s if float(s) == t else repr(float(t))


# ---------------------------------------------------------------------------
# Visual targets


class VisualTargetStore(Mapping[str, np.ndarray]):
    """Read-only map of visual_target_id to a length-W probability vector."""

    def __init__(self, vectors: Mapping[str, Sequence[float] | np.ndarray], n_keywords: int):
        self.n_keywords = n_keywords
        self._data: dict[str, np.ndarray] = {}
        for vid, vec in vectors.items():
            arr = np.array(vec, dtype=np.float64)
            if arr.shape != (n_keywords,):
                raise CorpusError(f"{vid}: expected {n_keywords} values, got {arr.size}")
            if np.isnan(arr).any():
                raise CorpusError(f"{vid}: NaN in visual target")
            if (arr < 0).any() or (arr > 1).any():
                raise CorpusError(f"{vid}: value outside [0, 1]")
            arr.setflags(write=False)
            self._data[vid] = arr

    def __getitem__(self, vid: str) -> np.ndarray:
        return self._data[vid]

    def __iter__(self):
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VisualTargetStore) or other.n_keywords != self.n_keywords:
            return False
        return self._data.keys() == other._data.keys() and all(
            np.array_equal(v, other._data[k]) for k, v in self._data.items()
        )


def load_visual_targets(path: str | Path, n_keywords: int) -> VisualTargetStore:
    path = Path(path)
    vectors: dict[str, list[float]] = {}
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["visual_target_id"] + [f"p_{i}" for i in range(n_keywords)]
        if header != expected:
            got = None if header is None else len(header) - 1
            raise CorpusError(f"{path}: header does not match W={n_keywords} (has {got} value columns)")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != n_keywords + 1:
                raise CorpusError(f"{path}:{lineno}: expected {n_keywords} values, got {len(row) - 1}")
            try:
                values = [float(x) for x in row[1:]]
            except ValueError:
                raise CorpusError(f"{path}:{lineno}: non-numeric value") from None
            if row[0] in vectors:
                raise CorpusError(f"{path}:{lineno}: duplicate visual_target_id {row[0]!r}")
            vectors[row[0]] = values
    try:
        return VisualTargetStore(vectors, n_keywords)
    except CorpusError as exc:
        raise CorpusError(f"{path}: {exc}") from None


def save_visual_targets(store: VisualTargetStore, path: str | Path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["visual_target_id"] + [f"p_{i}" for i in range(store.n_keywords)])
    for vid in store:
        writer.writerow([vid] + [repr(float(x)) for x in store[vid]])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


# ---------------------------------------------------------------------------
# Audio


def read_audio(path: str | Path, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Read a WAV file as float64 mono at ``sample_rate``, downsampling if needed."""
    sr, data = wavfile.read(str(path))
    if np.issubdtype(data.dtype, np.integer):
        data = data.astype(np.float64) / float(np.iinfo(data.dtype).max + 1)
    else:
        data = data.astype(np.float64)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if sr != sample_rate:
        if sr < sample_rate:
            raise CorpusError(f"{path}: sample rate {sr} below {sample_rate}")
        ratio = Fraction(sample_rate, sr)
        data = resample_poly(data, ratio.numerator, ratio.denominator)
    return data


def write_audio(path: str | Path, waveform: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    pcm = np.clip(np.round(np.asarray(waveform) * 32767.0), -32768, 32767).astype(np.int16)
    wavfile.write(str(path), sample_rate, pcm)


def audio_duration(path: str | Path) -> float:
    sr, data = wavfile.read(str(path), mmap=True)
    return data.shape[0] / sr


# ---------------------------------------------------------------------------
# Whole corpus


@dataclass
class Corpus:
    root: Path
    records: list[UtteranceRecord]
    vocab: Vocabulary
    alignments: AlignmentSet
    targets: VisualTargetStore
    _durations: dict[str, float] = field(default_factory=dict, repr=False)

    def split(self, name: str) -> list[UtteranceRecord]:
        return [r for r in self.records if r.split == name]

    def audio_path(self, record: UtteranceRecord) -> Path:
        p = Path(record.audio_path)
        return p if p.is_absolute() else self.root / p

    def load_audio(self, record: UtteranceRecord) -> np.ndarray:
        return read_audio(self.audio_path(record))

    def duration(self, record: UtteranceRecord) -> float:
        if record.utterance_id not in self._durations:
            self._durations[record.utterance_id] = audio_duration(self.audio_path(record))
        return self._durations[record.utterance_id]

    def target_for(self, record: UtteranceRecord) -> np.ndarray:
        if record.visual_target_id is None or record.visual_target_id not in self.targets:
            raise CorpusError(f"{record.utterance_id}: no visual target vector")
        return self.targets[record.visual_target_id]

    def validate(self) -> dict[str, int]:
        """Check cross-file invariants; return split counts."""
        durations = {}
        for r in self.records:
            path = self.audio_path(r)
            if not path.exists():
                raise CorpusError(f"{r.utterance_id}: missing audio file {path}")
            durations[r.utterance_id] = self.duration(r)
            if r.split == "train":
                self.target_for(r)
        self.alignments.check_durations(durations)
        return split_counts(self.records)


def load_corpus(root: str | Path) -> Corpus:
    root = Path(root)
    vocab = load_vocabulary(root / VOCAB_NAME)
    records = load_manifest(root / MANIFEST_NAME)
    alignments = load_alignments(root / ALIGNMENTS_NAME, vocab)
    targets = load_visual_targets(root / TARGETS_NAME, len(vocab))
    return Corpus(root, records, vocab, alignments, targets)


def save_corpus_tables(corpus: Corpus) -> None:
    save_vocabulary(corpus.vocab, corpus.root / VOCAB_NAME)
    save_manifest(corpus.records, corpus.root / MANIFEST_NAME)
    save_alignments(corpus.alignments, corpus.vocab, corpus.root / ALIGNMENTS_NAME)
    save_visual_targets(corpus.targets, corpus.root / TARGETS_NAME)
