import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vgskws.corpus import (
    AlignmentSet,
    CorpusError,
    Interval,
    UtteranceRecord,
    Vocabulary,
    VisualTargetStore,
    load_alignments,
    load_corpus,
    load_manifest,
    load_visual_targets,
    load_vocabulary,
    read_audio,
    save_alignments,
    save_manifest,
    save_visual_targets,
    save_vocabulary,
    split_counts,
    write_audio,
)
from vgskws.synthetic import SyntheticSpec, generate_synthetic_corpus

VOCAB = Vocabulary([(0, "dog", "ajá"), (1, "child", "ọmọ"), (2, "water", "omi")])


def _write_lines(path, objs):
    path.write_text("".join(json.dumps(o, ensure_ascii=False) + "\n" for o in objs), encoding="utf-8")
    return path


def _rec(uid, split):
    return {"utterance_id": uid, "audio_path": f"{uid}.wav", "split": split, "caption_en": "a dog", "caption_yo": "ajá kan", "visual_target_id": None}


# -- manifest ---------------------------------------------------------------


def test_manifest_three_lines(tmp_path):
    p = _write_lines(tmp_path / "m.jsonl", [_rec("a", "train"), _rec("b", "dev"), _rec("c", "test")])
    records = load_manifest(p)
    assert [r.split for r in records] == ["train", "dev", "test"]
    assert split_counts(records) == {"train": 1, "dev": 1, "test": 1}


def test_manifest_full_scale_counts(tmp_path):
    objs = [_rec(f"u{i:05d}", "train" if i < 5000 else "dev" if i < 5500 else "test") for i in range(6000)]
    records = load_manifest(_write_lines(tmp_path / "m.jsonl", objs))
    assert split_counts(records) == {"train": 5000, "dev": 500, "test": 500}


def test_manifest_duplicate_id_named(tmp_path):
    p = _write_lines(tmp_path / "m.jsonl", [_rec("a", "train"), _rec("dup7", "dev"), _rec("dup7", "test")])
    with pytest.raises(CorpusError, match="dup7"):
        load_manifest(p)


def test_manifest_parse_error_has_line_number(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text(json.dumps(_rec("a", "train")) + "\n{not json\n", encoding="utf-8")
    with pytest.raises(CorpusError, match=r"m\.jsonl:2"):
        load_manifest(p)


def test_manifest_unknown_split(tmp_path):
    p = _write_lines(tmp_path / "m.jsonl", [_rec("a", "validation")])
    with pytest.raises(CorpusError, match="validation"):
        load_manifest(p)


def test_manifest_captions_normalised_to_nfc(tmp_path):
    decomposed = "ajá"  # a + combining acute
    obj = _rec("a", "train") | {"caption_yo": decomposed}
    (rec,) = load_manifest(_write_lines(tmp_path / "m.jsonl", [obj]))
    assert rec.caption_target_lang == "aj\u00e1"


caption_text = st.one_of(st.none(), st.text(alphabet=st.characters(blacklist_categories=("Cs", "Cc")), max_size=30))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["train", "dev", "test"]), caption_text, caption_text), max_size=8))
def test_manifest_round_trip(tmp_path_factory, rows):
    import unicodedata

    records = [
        UtteranceRecord(
            f"u{i}",
            f"audio/u{i}.wav",
            split,
            None if en is None else unicodedata.normalize("NFC", en),
            None if yo is None else unicodedata.normalize("NFC", yo),
            f"img{i}" if i % 2 else None,
        )
        for i, (split, en, yo) in enumerate(rows)
    ]
    path = tmp_path_factory.mktemp("m") / "m.jsonl"
    save_manifest(records, path)
    assert load_manifest(path) == records


# -- vocabulary -------------------------------------------------------------


def test_vocabulary_bijection():
    for e in VOCAB.entries:
        assert VOCAB.id_of(e.query_word) == e.keyword_id
        assert VOCAB.entries[e.keyword_id].query_word == e.query_word
    assert len(set(VOCAB.query_words)) == len(VOCAB)


@pytest.mark.parametrize(
    "entries",
    [[], [(0, "a", "x"), (2, "b", "y")], [(0, "a", "x"), (1, "a", "y")], [(1, "a", "x")]],
    ids=["empty", "gap", "duplicate-word", "not-zero-based"],
)
def test_vocabulary_invalid(entries):
    with pytest.raises(CorpusError):
        Vocabulary(entries)


def test_vocabulary_round_trip_and_hash(tmp_path):
    save_vocabulary(VOCAB, tmp_path / "v.csv")
    loaded = load_vocabulary(tmp_path / "v.csv")
    assert loaded == VOCAB
    assert loaded.hash() == VOCAB.hash()
    assert Vocabulary([(0, "dog", "ajá")]).hash() != VOCAB.hash()


# -- alignments -------------------------------------------------------------


def _alignment_file(tmp_path, rows):
    p = tmp_path / "a.csv"
    lines = ["utterance_id,keyword,start_s,end_s", *(",".join(map(str, r)) for r in rows)]
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return p


def test_alignment_single_row(tmp_path):
    al = load_alignments(_alignment_file(tmp_path, [("utt1", "dog", "0.40", "0.85")]), VOCAB)
    assert al.interval("utt1", 0) == Interval(0, 0.40, 0.85)
    assert al.interval("utt1", 1) is None


def test_alignment_target_word_resolves(tmp_path):
    al = load_alignments(_alignment_file(tmp_path, [("utt1", "ọmọ", "1.000", "1.500")]), VOCAB)
    assert al.interval("utt1", 1) == Interval(1, 1.0, 1.5)


@pytest.mark.parametrize(
    "row,message",
    [
        (("u", "dog", "0.500", "0.500"), ">="),
        (("u", "dog", "0.600", "0.500"), ">="),
        (("u", "dog", "-0.100", "0.500"), "negative"),
        (("u", "cat", "0.100", "0.500"), "cat"),
    ],
    ids=["empty-interval", "reversed", "negative", "unknown-keyword"],
)
def test_alignment_rejects(tmp_path, row, message):
    with pytest.raises(CorpusError, match=message):
        load_alignments(_alignment_file(tmp_path, [row]), VOCAB)


def test_alignment_repeated_keyword_rejected(tmp_path):
    rows = [("u", "dog", "0.100", "0.500"), ("u", "dog", "1.100", "1.500")]
    with pytest.raises(CorpusError, match="repeated"):
        load_alignments(_alignment_file(tmp_path, rows), VOCAB)


def test_alignment_beyond_duration(tmp_path):
    p = _alignment_file(tmp_path, [("u", "dog", "0.100", "2.500")])
    with pytest.raises(CorpusError, match="beyond duration"):
        load_alignments(p, VOCAB, durations={"u": 2.0})


def test_alignment_67_keyword_vocabulary(tmp_path):
    vocab = Vocabulary([(i, f"query{i:02d}", f"àfojúsùn{i:02d}") for i in range(67)])
    save_vocabulary(vocab, tmp_path / "v.csv")
    vocab = load_vocabulary(tmp_path / "v.csv")
    rows = [(f"utt{i % 10}", f"query{i:02d}" if i % 2 else f"àfojúsùn{i:02d}", f"{i * 0.01:.3f}", f"{i * 0.01 + 0.3:.3f}") for i in range(67)]
    al = load_alignments(_alignment_file(tmp_path, rows), vocab)
    assert sorted(iv.keyword_id for ivs in al.values() for iv in ivs) == list(range(67))


interval_lists = st.lists(
    st.tuples(st.floats(0, 50, allow_nan=False), st.floats(1e-3, 5, allow_nan=False)),
    max_size=3,
)


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(st.from_regex(r"[a-z]{1,6}", fullmatch=True), interval_lists, max_size=5))
def test_alignment_round_trip(tmp_path_factory, data):
    al = AlignmentSet({uid: [Interval(k, s, s + d) for k, (s, d) in enumerate(ivs) if s < s + d] for uid, ivs in data.items()})
    path = tmp_path_factory.mktemp("a") / "a.csv"
    save_alignments(al, VOCAB, path)
    loaded = load_alignments(path, VOCAB)
    assert loaded == al
    for ivs in loaded.values():
        assert all(0 <= iv.start_s < iv.end_s for iv in ivs)


# -- visual targets ---------------------------------------------------------


def test_visual_targets_zero_vector_valid():
    store = VisualTargetStore({"img1": [0.0, 0.0, 0.0]}, 3)
    np.testing.assert_array_equal(store["img1"], np.zeros(3))


@pytest.mark.parametrize("vec,message", [([0.1, 1.3, 0.0], "outside"), ([0.1, float("nan"), 0.0], "NaN"), ([0.1, 0.2], "expected 3")])
def test_visual_targets_rejects(vec, message):
    with pytest.raises(CorpusError, match=message):
        VisualTargetStore({"img": vec}, 3)


def test_visual_targets_file_rejects_out_of_range(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("visual_target_id,p_0,p_1,p_2\nimg1,0.1,1.3,0\n", encoding="utf-8")
    with pytest.raises(CorpusError, match="outside"):
        load_visual_targets(p, 3)


def test_visual_targets_file_wrong_width(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("visual_target_id,p_0,p_1\nimg1,0.1,0.2\n", encoding="utf-8")
    with pytest.raises(CorpusError, match="W=3"):
        load_visual_targets(p, 3)


def test_visual_targets_need_not_sum_to_one():
    store = VisualTargetStore({"img": [1.0, 1.0, 1.0]}, 3)
    assert store["img"].sum() == 3.0


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(st.from_regex(r"img[0-9]{1,4}", fullmatch=True), st.lists(st.floats(0, 1), min_size=4, max_size=4), max_size=6))
def test_visual_targets_round_trip(tmp_path_factory, vectors):
    store = VisualTargetStore(vectors, 4)
    path = tmp_path_factory.mktemp("t") / "t.csv"
    save_visual_targets(store, path)
    assert load_visual_targets(path, 4) == store


# -- audio ------------------------------------------------------------------


def test_audio_48k_downsampled(tmp_path):
    from scipy.io import wavfile

    t = np.arange(48000) / 48000
    wavfile.write(tmp_path / "hi.wav", 48000, (0.5 * np.sin(2 * np.pi * 440 * t) * 32767).astype(np.int16))
    x = read_audio(tmp_path / "hi.wav")
    assert x.shape == (16000,)
    assert np.abs(x).max() == pytest.approx(0.5, abs=0.02)


def test_audio_round_trip_int16(tmp_path):
    x = np.linspace(-0.9, 0.9, 1600)
    write_audio(tmp_path / "x.wav", x)
    np.testing.assert_allclose(read_audio(tmp_path / "x.wav"), x, atol=2 / 32768)  # int16 quantisation


# -- synthetic corpus -------------------------------------------------------


def test_synthetic_byte_identical(tmp_path):
    spec = SyntheticSpec(n_keywords=5, n_train=12, n_dev=4, n_test=4)
    generate_synthetic_corpus(spec, seed=7, out_dir=tmp_path / "a")
    generate_synthetic_corpus(spec, seed=7, out_dir=tmp_path / "b")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b and len(files_a) == 20 + 4
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


def test_synthetic_seed_changes_output(tmp_path):
    spec = SyntheticSpec(n_keywords=5, n_train=4, n_dev=1, n_test=1)
    generate_synthetic_corpus(spec, seed=7, out_dir=tmp_path / "a")
    generate_synthetic_corpus(spec, seed=8, out_dir=tmp_path / "b")
    assert (tmp_path / "a/audio/train_00000.wav").read_bytes() != (tmp_path / "b/audio/train_00000.wav").read_bytes()


def test_synthetic_invariants(tiny_corpus):
    reloaded = load_corpus(tiny_corpus.root)
    assert reloaded.validate() == {"train": 24, "dev": 6, "test": 6}
    assert reloaded.records == tiny_corpus.records
    assert reloaded.alignments == tiny_corpus.alignments
    for r in reloaded.records:
        dur = reloaded.duration(r)
        present = np.zeros(len(reloaded.vocab))
        for iv in reloaded.alignments.get(r.utterance_id, ()):
            assert 0 <= iv.start_s < iv.end_s <= dur
            present[iv.keyword_id] = 1
        # visual targets are the ground-truth presence
        np.testing.assert_array_equal(reloaded.target_for(r), present)
        for k in np.flatnonzero(present):
            assert reloaded.vocab.target_words[k] in r.caption_target_lang
            assert reloaded.vocab.query_words[k] in r.caption_query_lang


def test_synthetic_presence_rate(tmp_path):
    spec = SyntheticSpec(n_keywords=5, n_train=2000, n_dev=0, n_test=0, min_duration=2.0, max_duration=3.0)
    corpus = generate_synthetic_corpus(spec, seed=11, out_dir=tmp_path)
    presence = np.stack([corpus.target_for(r) for r in corpus.records])
    rates = presence.mean(axis=0)
    assert np.all(np.abs(rates - spec.keyword_prior) <= 0.05), rates


def test_synthetic_spec_too_short():
    with pytest.raises(CorpusError, match="too short"):
        SyntheticSpec(min_duration=1.0, max_duration=1.2, max_keywords=3).validate()


def test_synthetic_masked_keyword_keeps_layout(tmp_path):
    spec = SyntheticSpec(n_keywords=5, n_train=6, n_dev=0, n_test=0)
    plain = generate_synthetic_corpus(spec, seed=2, out_dir=tmp_path / "a")
    masked = generate_synthetic_corpus(SyntheticSpec(**{**spec.to_dict(), "mask_keyword": 1}), seed=2, out_dir=tmp_path / "b")
    assert plain.alignments == masked.alignments
    assert [r.caption_target_lang for r in plain.records] == [r.caption_target_lang for r in masked.records]
