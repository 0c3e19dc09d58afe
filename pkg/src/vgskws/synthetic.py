"""Desk-scale synthetic stand-in for a bilingual spoken-caption corpus.

Each utterance is coloured noise plus short tonal bursts.  Every keyword owns
a fixed two-partial chirp ("signature"); placing a signature in an utterance
is the synthetic equivalent of speaking that keyword.  Single-partial filler
bursts play the role of non-keyword words.  Alignments record the exact
signature intervals, and visual targets are the ground-truth presence vector
(optionally softened), which is what a perfect image tagger would emit.

Two corpora generated with the same ``signature_seed`` but different
``freq_scale``/noise settings behave like two "languages" that share their
keyword inventory but not their acoustics.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .corpus import (
    SAMPLE_RATE,
    AlignmentSet,
    Corpus,
    CorpusError,
    Interval,
    UtteranceRecord,
    VisualTargetStore,
    Vocabulary,
    save_corpus_tables,
    write_audio,
)

# (query word, target word) pairs; ids beyond this table get placeholder names
WORD_PAIRS = [
    ("dog", "ajá"),
    ("child", "ọmọ"),
    ("water", "omi"),
    ("ball", "bọ́ọ̀lù"),
    ("man", "ọkùnrin"),
    ("woman", "obìnrin"),
    ("house", "ilé"),
    ("tree", "igi"),
    ("grass", "koríko"),
    ("road", "ọ̀nà"),
    ("shirt", "ẹ̀wù"),
    ("bike", "kẹ̀kẹ́"),
    ("red", "pupa"),
    ("white", "funfun"),
    ("black", "dúdú"),
    ("rock", "àpáta"),
    ("beach", "etíkun"),
    ("people", "èèyàn"),
    ("snow", "yìnyín"),
    ("car", "ọkọ̀"),
]
FILLERS_EN = ["a", "the", "with", "in", "on", "is", "and", "near"]
FILLERS_YO = ["ní", "àti", "kan", "ti", "náà", "sí", "wà", "lórí"]


@dataclass(frozen=True)
class SyntheticSpec:
    n_keywords: int = 8
    n_train: int = 400
    n_dev: int = 50
    n_test: int = 50
    min_duration: float = 3.0
    max_duration: float = 5.0
    keyword_prior: float = 0.15
    max_keywords: int = 3
    signature_min_s: float = 0.35
    signature_max_s: float = 0.5
    gap_s: float = 0.1
    signature_level: float = 0.3
    noise_level: float = 0.05
    noise_colour: float = 0.0  # 0 white, 1 fully low-passed
    freq_scale: float = 1.0
    filler_rate: float = 1.0  # mean filler bursts per utterance
    target_noise: float = 0.0
    signature_seed: int = 1234
    sample_rate: int = SAMPLE_RATE
    mask_keyword: int | None = None  # signature replaced by silence (ablation)

    def validate(self) -> None:
        if self.n_keywords < 1:
            raise CorpusError("n_keywords must be >= 1")
        if min(self.n_train, self.n_dev, self.n_test) < 0:
            raise CorpusError("split sizes must be non-negative")
        if not 0 < self.min_duration <= self.max_duration:
            raise CorpusError("need 0 < min_duration <= max_duration")
        if not 0 < self.signature_min_s <= self.signature_max_s:
            raise CorpusError("need 0 < signature_min_s <= signature_max_s")
        if not 0 <= self.keyword_prior <= 1:
            raise CorpusError("keyword_prior must lie in [0, 1]")
        if not 0 <= self.target_noise <= 1:
            raise CorpusError("target_noise must lie in [0, 1]")
        cap = min(self.max_keywords, self.n_keywords)
        needed = cap * (self.signature_max_s + self.gap_s) + self.gap_s
        if self.min_duration < needed:
            raise CorpusError(
                f"min_duration {self.min_duration}s too short for {cap} signatures "
                f"of up to {self.signature_max_s}s (needs {needed:.3f}s)"
            )

    def to_dict(self) -> dict:
        return asdict(self)


def make_vocabulary(n_keywords: int) -> Vocabulary:
    entries = []
    for k in range(n_keywords):
        if k < len(WORD_PAIRS):
            q, t = WORD_PAIRS[k]
        else:
            q, t = f"keyword{k}", f"ọ̀rọ̀{k}"
        entries.append((k, q, t))
    return Vocabulary(entries)


def signature_table(n_keywords: int, signature_seed: int) -> np.ndarray:
    """Per-keyword (f_low, f_high, sweep) triples.

    Partials come from a shuffled log-spaced grid so no two keywords share a
    frequency band.
    """
    rng = np.random.default_rng(signature_seed)
    grid = np.geomspace(300.0, 4000.0, 2 * n_keywords)
    order = rng.permutation(2 * n_keywords)
    pairs = np.sort(grid[order].reshape(n_keywords, 2), axis=1)
    sweep = rng.choice([-0.15, 0.15], size=n_keywords)
    return np.column_stack([pairs, sweep])


def _chirp(freq: float, sweep: float, n: int, sr: int) -> np.ndarray:
    t = np.arange(n) / sr
    dur = n / sr
    # instantaneous frequency moves linearly from freq to freq*(1+sweep)
    phase = 2 * np.pi * (freq * t + 0.5 * freq * sweep * t**2 / dur)
    return np.sin(phase)


def render_signature(row: np.ndarray, n: int, sr: int, freq_scale: float) -> np.ndarray:
    f_lo, f_hi, sweep = row
    wave = _chirp(f_lo * freq_scale, sweep, n, sr) + 0.7 * _chirp(f_hi * freq_scale, -sweep, n, sr)
    return wave * np.hanning(n) / 1.7


def _noise(rng: np.random.Generator, n: int, colour: float) -> np.ndarray:
    white = rng.standard_normal(n)
    if colour <= 0:
        return white
    # one-pole low-pass, renormalised to unit variance
    smooth = lfilter([0.05], [1.0, -0.95], white)
    smooth /= smooth.std() + 1e-12
    return (1 - colour) * white + colour * smooth


def _ms(x: float) -> float:
    return round(x * 1000) / 1000


def _place(rng: np.random.Generator, duration: float, lengths: list[float], gap: float) -> list[float]:
    """Random non-overlapping start times (ms grid) for bursts of given lengths."""
    free = duration - sum(lengths) - gap * (len(lengths) + 1)
    cuts = np.sort(rng.uniform(0.0, free, size=len(lengths)))
    starts, cursor, prev = [], gap, 0.0
    for length, cut in zip(lengths, cuts):
        cursor += cut - prev
        prev = cut
        start = _ms(cursor)
        starts.append(start)
        cursor = start + length + gap
    return starts


def _utterance(spec: SyntheticSpec, table: np.ndarray, rng: np.random.Generator):
    sr = spec.sample_rate
    W = spec.n_keywords
    duration = _ms(rng.uniform(spec.min_duration, spec.max_duration))
    n_samples = int(round(duration * sr))
    present = np.flatnonzero(rng.random(W) < spec.keyword_prior)
    if present.size > spec.max_keywords:
        present = np.sort(rng.choice(present, size=spec.max_keywords, replace=False))
    kw_lengths = [_ms(rng.uniform(spec.signature_min_s, spec.signature_max_s)) for _ in present]

    # fillers share the timeline, but only if they fit after the keywords
    n_fill = int(rng.poisson(spec.filler_rate))
    fill_lengths = [_ms(rng.uniform(0.15, 0.3)) for _ in range(n_fill)]
    while fill_lengths and sum(kw_lengths) + sum(fill_lengths) + spec.gap_s * (len(kw_lengths) + len(fill_lengths) + 1) > duration:
        fill_lengths.pop()

    slots = [("kw", int(k), L) for k, L in zip(present, kw_lengths)] + [("fill", -1, L) for L in fill_lengths]
    order = rng.permutation(len(slots))
    slots = [slots[i] for i in order]
    starts = _place(rng, duration, [s[2] for s in slots], spec.gap_s)

    wave = spec.noise_level * _noise(rng, n_samples, spec.noise_colour)
    intervals: list[Interval] = []
    sequence: list[tuple[str, int]] = []
    for (kind, k, length), start in zip(slots, starts):
        i0 = int(round(start * sr))
        n = int(round(length * sr))
        if kind == "kw":
            if k != spec.mask_keyword:
                wave[i0 : i0 + n] += spec.signature_level * render_signature(table[k], n, sr, spec.freq_scale)
            intervals.append(Interval(k, start, _ms(start + length)))
        else:
            f = float(np.exp(rng.uniform(np.log(250.0), np.log(4500.0))))
            wave[i0 : i0 + n] += 0.6 * spec.signature_level * np.sin(2 * np.pi * f * np.arange(n) / sr) * np.hanning(n)
        sequence.append((kind, k))
    return duration, wave, intervals, sequence, present


def _captions(vocab: Vocabulary, sequence, rng: np.random.Generator) -> tuple[str, str]:
    en, yo = [], []
    for kind, k in sequence:
        if kind == "kw":
            en.append(vocab.entries[k].query_word)
            yo.append(vocab.entries[k].target_word)
        else:
            en.append(FILLERS_EN[int(rng.integers(len(FILLERS_EN)))])
            yo.append(FILLERS_YO[int(rng.integers(len(FILLERS_YO)))])
    return " ".join(en), " ".join(yo)


def generate_synthetic_corpus(spec: SyntheticSpec, seed: int, out_dir: str | Path) -> Corpus:
    """Write a synthetic corpus to ``out_dir`` and return it loaded in memory.

    Output is a pure function of ``(spec, seed)``: rerunning produces
    byte-identical files.
    """
    spec.validate()
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    vocab = make_vocabulary(spec.n_keywords)
    table = signature_table(spec.n_keywords, spec.signature_seed)

    records: list[UtteranceRecord] = []
    aligned: dict[str, list[Interval]] = {}
    targets: dict[str, np.ndarray] = {}
    durations: dict[str, float] = {}
    index = 0
    for split, count in (("train", spec.n_train), ("dev", spec.n_dev), ("test", spec.n_test)):
        for i in range(count):
            rng = np.random.default_rng([seed, index])
            index += 1
            uid = f"{split}_{i:05d}"
            vid = f"img_{uid}"
            duration, wave, intervals, sequence, present = _utterance(spec, table, rng)
            cap_en, cap_yo = _captions(vocab, sequence, rng)
            write_audio(out_dir / "audio" / f"{uid}.wav", wave, spec.sample_rate)
            presence = np.zeros(spec.n_keywords)
            presence[present] = 1.0
            if spec.target_noise > 0:
                presence = np.abs(presence - spec.target_noise * rng.random(spec.n_keywords))
            targets[vid] = presence
            aligned[uid] = intervals
            durations[uid] = duration
            records.append(UtteranceRecord(uid, f"audio/{uid}.wav", split, cap_en, cap_yo, vid))

    corpus = Corpus(
        out_dir,
        records,
        vocab,
        AlignmentSet(aligned),
        VisualTargetStore(targets, spec.n_keywords),
        _durations=durations,
    )
    save_corpus_tables(corpus)
    return corpus
