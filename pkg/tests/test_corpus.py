from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lexmtl.corpus import (Batcher, IngestReport, ParallelCorpus, Sample, TaskDataset, gen_synthetic_task,
                           keyword_labels, label_indices, make_batches, read_labeled,
                           read_moses_pair, read_summarization, split_of, write_moses_pair)
from lexmtl.errors import AlignmentError, ConfigError, DegenerateBatchError, ParseError
from lexmtl.vocab import (EOS, LABEL_BASE, PAD, UNK, Vocabulary, build_subword_vocab,
                          pretokenize)

FIXTURE_DE = ["Der Rat hat folgende Verordnung erlassen:", "Artikel 1", "Diese Verordnung tritt in Kraft."]
FIXTURE_EN = ["The Council has adopted this regulation:", "Article 1", "This Regulation shall enter into force."]


def write_lines(path, lines):
    path.write_bytes("".join(line + "\n" for line in lines).encode("utf-8"))
    return path


# -- Moses pairs ------------------------------------------------------------------------

def test_read_moses_pair(tmp_path):
    corpus = read_moses_pair(write_lines(tmp_path / "c.de", FIXTURE_DE),
                             write_lines(tmp_path / "c.en", FIXTURE_EN), "de-en")
    assert len(corpus) == 3
    assert corpus.report.kept == 3 and corpus.report.balanced()


def test_moses_alignment_error_reports_counts(tmp_path):
    src = write_lines(tmp_path / "a", FIXTURE_DE)
    tgt = write_lines(tmp_path / "b", FIXTURE_EN + ["extra"])
    with pytest.raises(AlignmentError, match=r"\(3, 4\)"):
        read_moses_pair(src, tgt, "de-en")


def test_moses_round_trip_byte_exact(tmp_path):
    lines_de = FIXTURE_DE + ["Größe ≥ 5 € — ok", "  leading and trailing  "]
    lines_en = FIXTURE_EN + ["size ≥ 5 €", "x"]
    original = read_moses_pair(write_lines(tmp_path / "a", lines_de),
                               write_lines(tmp_path / "b", lines_en), "de-en")
    write_moses_pair(original, tmp_path / "c", tmp_path / "d")
    assert (tmp_path / "c").read_bytes() == (tmp_path / "a").read_bytes()
    again = read_moses_pair(tmp_path / "c", tmp_path / "d", "de-en")
    assert again.source == original.source and again.target == original.target


def test_moses_control_characters_cleaned_and_empty_quarantined(tmp_path):
    corpus = read_moses_pair(write_lines(tmp_path / "a", ["ok", "bad\x07bell", "\x01"]),
                             write_lines(tmp_path / "b", ["ok", "fine", "x"]), "de-en")
    assert corpus.source == ["ok", "badbell"]
    r = corpus.report
    assert (r.kept, r.cleaned, r.quarantined, r.input_lines) == (1, 1, 1, 3)
    assert r.balanced()


# -- labelled documents ---------------------------------------------------------------------

def test_read_labeled_sets(tmp_path):
    docs = write_lines(tmp_path / "docs", ["d1\tsome text", "d2\tother text", "d3\tmore"])
    labels = write_lines(tmp_path / "labels", ["d1\t12 7", "d2\t5 5 9", "d3\t1 2 3 4 5 6 7 8"])
    corpus = read_labeled(docs, labels)
    got = {doc_id: set(ls) for doc_id, _, ls in corpus.docs}
    assert got == {"d1": {7, 12}, "d2": {5, 9}}
    assert corpus.report.quarantined == 1 and len(corpus.report.violations) == 1
    assert corpus.report.balanced()


def test_read_labeled_missing_text_names_line(tmp_path):
    docs = write_lines(tmp_path / "docs", ["d1\ttext"])
    labels = write_lines(tmp_path / "labels", ["d1\t3", "d9\t4"])
    with pytest.raises(ParseError, match=":2:"):
        read_labeled(docs, labels)


def test_read_labeled_malformed_line(tmp_path):
    docs = write_lines(tmp_path / "docs", ["d1\ttext"])
    labels = write_lines(tmp_path / "labels", ["d1 3"])
    with pytest.raises(ParseError, match=":1:"):
        read_labeled(docs, labels)


def test_read_summarization(tmp_path):
    path = write_lines(tmp_path / "s.tsv", ["a long body text here\tshort title",
                                           "tiny\ttitle longer than body",
                                           "body words go here\t"])
    corpus = read_summarization(path)
    assert corpus.pairs == [("a long body text here", "short title")]
    assert corpus.report.quarantined == 2 and corpus.report.balanced()


# -- vocabulary ------------------------------------------------------------------------------

def brute_force_pairs(text):
    counts = Counter()
    for word in pretokenize(text):
        for a, b in zip(word, word[1:]):
            counts[(a, b)] += 1
    return counts


def test_first_merge_matches_brute_force_count():
    counts = brute_force_pairs("aaab aab")
    assert counts[("a", "a")] == 3
    alphabet = len(set("aaab aab"))
    vocab = build_subword_vocab([["aaab aab"]], 64 + alphabet + 1)
    assert vocab.merges[0] == ("a", "a")
    assert max(counts.values()) == counts[vocab.merges[0]]


def test_vocab_target_too_small():
    with pytest.raises(ConfigError):
        build_subword_vocab([["hello world"]], 64 + 3)


def test_vocab_lossless_on_training_lines():
    lines = FIXTURE_DE + FIXTURE_EN + ["  doppelte  Leerzeichen\tund Tab", "Ümlaute ß"]
    vocab = build_subword_vocab([lines], 160)
    for line in lines:
        assert vocab.decode(vocab.encode(line)) == line
    assert all(i >= 64 for line in lines for i in vocab.encode(line))


def test_vocab_unknown_character_flagged():
    vocab = build_subword_vocab([["abc abc"]], 64 + 10)
    ids = vocab.encode("abz")
    assert UNK in ids
    assert vocab.stats["unknown_chars"] == 1


def test_vocab_text_round_trip_and_hash(tmp_path):
    vocab = build_subword_vocab([FIXTURE_DE], 120)
    vocab.register_classes([12, 7])
    vocab.save(tmp_path / "v.txt")
    loaded = Vocabulary.load(tmp_path / "v.txt")
    assert loaded.tokens == vocab.tokens and loaded.merges == vocab.merges
    assert loaded.classes == [7, 12]
    assert loaded.hash() == vocab.hash()
    assert loaded.encode_labels([12]) == [LABEL_BASE + 1]
    assert loaded.decode_labels([0, 1]) == {7, 12}


def test_vocab_is_deterministic():
    a = build_subword_vocab([FIXTURE_DE, FIXTURE_EN], 150)
    b = build_subword_vocab([FIXTURE_DE, FIXTURE_EN], 150)
    assert a.to_text() == b.to_text()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.text(alphabet="abcdeäö .,\t", min_size=1, max_size=20), min_size=1, max_size=6))
def test_vocab_round_trip_property(lines):
    alphabet = {ch for line in lines for ch in line}
    vocab = build_subword_vocab([lines], 64 + len(alphabet) + 12)
    for line in lines:
        assert vocab.decode(vocab.encode(line)) == line


# -- datasets and splits ------------------------------------------------------------------------

def test_dataset_save_load(tmp_path):
    ds = TaskDataset("t", "translation", [Sample([70, 71], [80]), Sample([72], [81, 82])])
    ds.save(tmp_path / "t.ids")
    back = TaskDataset.load(tmp_path / "t.ids", "t", "translation")
    assert back.samples == ds.samples


def test_split_is_stable_and_roughly_90_5_5():
    keys = [f"line {i}" for i in range(4000)]
    splits = Counter(split_of(k) for k in keys)
    assert splits["train"] / 4000 == pytest.approx(0.9, abs=0.03)
    assert splits["valid"] / 4000 == pytest.approx(0.05, abs=0.02)
    assert [split_of(k) for k in keys[:50]] == [split_of(k) for k in keys[:50]]


# -- batching -------------------------------------------------------------------------------------

def toy_dataset(n, seed=0):
    rng = np.random.default_rng(seed)
    return TaskDataset("toy", "translation",
                       [Sample(list(rng.integers(64, 100, rng.integers(1, 9))),
                               list(rng.integers(64, 100, rng.integers(1, 9)))) for _ in range(n)])


def test_batch_sizes_per_epoch():
    batches = list(make_batches(toy_dataset(10), None, 4, seed=3))
    assert [len(b) for b in batches] == [4, 4, 2]
    assert batches[-1].last_in_epoch


def test_same_seed_same_order():
    a = [b.indices.tolist() for b in make_batches(toy_dataset(30), None, 4, seed=5, epochs=2)]
    b = [b.indices.tolist() for b in make_batches(toy_dataset(30), None, 4, seed=5, epochs=2)]
    c = [b.indices.tolist() for b in make_batches(toy_dataset(30), None, 4, seed=6, epochs=2)]
    assert a == b and a != c


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 60), st.integers(1, 9), st.integers(0, 1000))
def test_each_epoch_partitions_the_dataset(n, batch_size, seed):
    ds = toy_dataset(n, seed)
    batcher = Batcher(ds, batch_size, seed=seed)
    for epoch in range(2):
        seen = []
        for i in range(batcher.batches_per_epoch):
            batch = batcher.batch_at(epoch * batcher.batches_per_epoch + i)
            assert batch.epoch == epoch
            seen += batch.indices.tolist()
            assert np.array_equal(batch.src_pad, batch.src == PAD)
            assert np.array_equal(batch.tgt_pad, batch.tgt == PAD)
        assert sorted(seen) == list(range(n))


def test_targets_end_with_eos_and_truncation_counted():
    ds = TaskDataset("t", "translation", [Sample(list(range(64, 84)), list(range(64, 84)))])
    batch = Batcher(ds, 1, max_len=8).batch_at(0)
    assert batch.src.shape == (1, 8) and batch.tgt.shape == (1, 8)
    assert batch.tgt[0, -1] == EOS
    assert batch.tgt[0].tolist() == list(range(64, 71)) + [EOS]


def test_empty_dataset_is_degenerate():
    with pytest.raises(DegenerateBatchError):
        Batcher(TaskDataset("t", "translation", []), 4)


# -- synthetic tasks ---------------------------------------------------------------------------------

@pytest.mark.parametrize("kind,relation", [("copy", lambda s: s), ("reverse", lambda s: s[::-1]),
                                            ("token-sort", sorted)])
def test_synthetic_sequence_tasks(kind, relation):
    ds = gen_synthetic_task(kind, 200, (64, 96), seed=1)
    assert all(s.tgt == relation(s.src) for s in ds.samples)
    assert all(64 <= t < 96 for s in ds.samples for t in s.src)


def test_keyword_labels_match_scan_oracle():
    ds = gen_synthetic_task("keyword-label", 500, (64, 96), seed=2)
    for s in ds.samples:
        assert label_indices(s.tgt) == keyword_labels(s.src, (64, 96))
        assert 1 <= len(s.tgt) <= 3
        assert s.tgt == sorted(s.tgt)


def test_synthetic_is_deterministic():
    a = gen_synthetic_task("reverse", 20, (64, 96), seed=4)
    b = gen_synthetic_task("reverse", 20, (64, 96), seed=4)
    assert a.samples == b.samples


def test_unknown_task_kind():
    with pytest.raises(ConfigError):
        gen_synthetic_task("shuffle", 3, (64, 96))
    with pytest.raises(ConfigError):
        TaskDataset("t", "regression", [])


def test_parallel_corpus_length():
    assert len(ParallelCorpus(["a", "b"], ["c", "d"], "de-en", IngestReport("de-en"))) == 2
