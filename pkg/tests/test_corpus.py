"""CoNLL parsing, JSONL round trips and synthetic corpus properties."""

import json

import numpy as np
import pytest

from accoref.corpus import (
    PRONOUNS,
    CorpusError,
    Document,
    SynthConfig,
    generate_synthetic,
    parse_conll_lines,
    read_jsonl,
    write_jsonl,
)


def conll_line(doc="test/doc", idx=0, word="w", speaker="spk0", coref="-"):
    return f"{doc} 0 {idx} {word} POS * - - - {speaker} * {coref}"


def wrap_doc(lines, doc="test/doc"):
    return [f"#begin document ({doc}); part 000"] + lines + ["#end document"]


class TestConllParser:
    def test_single_multitoken_span(self):
        lines = wrap_doc(
            [
                conll_line(idx=0, word="a", coref="(0"),
                conll_line(idx=1, word="b", coref="-"),
                conll_line(idx=2, word="c", coref="0)"),
            ]
        )
        (doc,) = parse_conll_lines(lines)
        assert doc.gold_clusters == [((0, 2),)]
        assert doc.doc_key == "test/doc_000"
        assert doc.genre == "test"

    def test_all_dashes_means_no_clusters(self):
        lines = wrap_doc([conll_line(idx=i, word=f"w{i}") for i in range(4)])
        (doc,) = parse_conll_lines(lines)
        assert doc.gold_clusters == []

    def test_nested_brackets_two_clusters(self):
        lines = wrap_doc(
            [
                conll_line(idx=0, word="a", coref="(0)|(1"),
                conll_line(idx=1, word="b", coref="1)"),
            ]
        )
        (doc,) = parse_conll_lines(lines)
        assert doc.gold_clusters == [((0, 0),), ((0, 1),)]

    def test_unbalanced_brackets_report_line(self):
        lines = wrap_doc(
            [
                conll_line(idx=0, word="a", coref="(0"),
                conll_line(idx=1, word="b", coref="-"),
            ]
        )
        with pytest.raises(CorpusError, match=":4:"):
            parse_conll_lines(lines)

    def test_close_without_open_fails(self):
        lines = wrap_doc([conll_line(idx=0, word="a", coref="3)")])
        with pytest.raises(CorpusError, match="no opener"):
            parse_conll_lines(lines)

    def test_too_few_columns(self):
        lines = wrap_doc(["test/doc 0 0 word"])
        with pytest.raises(CorpusError, match="columns"):
            parse_conll_lines(lines)

    def test_sentence_breaks_and_speakers(self):
        lines = wrap_doc(
            [
                conll_line(idx=0, word="a", speaker="alice"),
                conll_line(idx=1, word="b", speaker="alice"),
                "",
                conll_line(idx=0, word="c", speaker="bob"),
            ]
        )
        (doc,) = parse_conll_lines(lines)
        assert doc.sentences == [["a", "b"], ["c"]]
        assert doc.speakers == [["alice", "alice"], ["bob"]]

    def test_multiple_parts_become_separate_documents(self):
        lines = (
            wrap_doc([conll_line(idx=0, word="a")])
            + ["#begin document (test/doc); part 001"]
            + [conll_line(idx=0, word="b")]
            + ["#end document"]
        )
        docs = parse_conll_lines(lines)
        assert [d.doc_key for d in docs] == ["test/doc_000", "test/doc_001"]


class TestDocumentValidation:
    def test_span_outside_document(self):
        with pytest.raises(CorpusError, match="outside"):
            Document("d", "g", [["a"]], [["s"]], [((0, 3),)])

    def test_span_in_two_clusters(self):
        with pytest.raises(CorpusError, match="clusters"):
            Document("d", "g", [["a", "b"]], [["s", "s"]], [((0, 0),), ((0, 0),)])

    def test_speaker_alignment(self):
        with pytest.raises(CorpusError, match="align"):
            Document("d", "g", [["a", "b"]], [["s"]], [])


class TestJsonlRoundTrip:
    def test_round_trip_preserves_documents(self, tmp_path):
        docs = generate_synthetic(SynthConfig(n_docs=5, seed=3))
        path = tmp_path / "docs.jsonl"
        write_jsonl(docs, path)
        loaded = read_jsonl(path)
        assert len(loaded) == len(docs)
        for a, b in zip(docs, loaded):
            assert a.to_json() == b.to_json()

    def test_rewrite_is_byte_identical(self, tmp_path):
        docs = generate_synthetic(SynthConfig(n_docs=3, seed=4))
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_jsonl(docs, p1)
        write_jsonl(read_jsonl(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_missing_field_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps({"doc_key": "x"}) + "\n")
        with pytest.raises(CorpusError, match="missing fields"):
            read_jsonl(path)


class TestSyntheticCorpus:
    def test_singletons_when_one_mention_each(self):
        docs = generate_synthetic(
            SynthConfig(n_docs=4, entities_per_doc=1, mentions_per_entity=1, seed=1)
        )
        for doc in docs:
            assert all(len(c) == 1 for c in doc.gold_clusters)

    def test_pronoun_rate_zero_uses_only_names(self):
        docs = generate_synthetic(SynthConfig(n_docs=6, pronoun_rate=0.0, seed=2))
        for doc in docs:
            toks = doc.tokens
            for cluster in doc.gold_clusters:
                words = {toks[s] for s, e in cluster}
                assert not words & set(PRONOUNS)

    def test_fixed_seed_reproducible(self):
        cfg = SynthConfig(n_docs=10, seed=42)
        a = [d.to_json() for d in generate_synthetic(cfg)]
        b = [d.to_json() for d in generate_synthetic(cfg)]
        assert a == b

    def test_clusters_cover_all_mention_tokens_and_nothing_else(self):
        docs = generate_synthetic(SynthConfig(n_docs=10, seed=5))
        for doc in docs:
            toks = doc.tokens
            covered = set()
            for cluster in doc.gold_clusters:
                for s, e in cluster:
                    covered.update(range(s, e + 1))
            for t, word in enumerate(toks):
                is_mention_token = not word.startswith("w")
                assert (t in covered) == is_mention_token

    def test_mention_counts_match_config(self):
        cfg = SynthConfig(n_docs=5, entities_per_doc=3, mentions_per_entity=4, seed=6)
        for doc in generate_synthetic(cfg):
            assert len(doc.gold_clusters) == 3
            assert all(len(c) == 4 for c in doc.gold_clusters)

    def test_multiword_names_bounded_by_config(self):
        cfg = SynthConfig(n_docs=6, name_width_max=5, seed=7)
        widest = 0
        for doc in generate_synthetic(cfg):
            for cluster in doc.gold_clusters:
                for s, e in cluster:
                    widest = max(widest, e - s + 1)
        assert 1 < widest <= 5

    def test_invalid_config_rejected(self):
        with pytest.raises(CorpusError):
            SynthConfig(pronoun_rate=1.5)
        with pytest.raises(CorpusError):
            SynthConfig(n_docs=0)
