import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vecqa.corpus import Corpus, Passage, tokenize
from vecqa.errors import EmptyCorpusError, FormatError, NotFoundError
from vecqa.lexical import (LexicalIndex, bm25_score, build_lexical,
                           lexical_top_k, load_lexical, save_lexical)


@pytest.fixture
def cats() -> LexicalIndex:
    return build_lexical(Corpus([
        Passage("d1", "", "cat sat mat"),
        Passage("d2", "", "dog sat log"),
        Passage("d3", "", "cat cat cat"),
    ]))


class TestBuild:
    def test_doc_count(self, cats):
        assert cats.doc_count == 3

    def test_df_by_hand(self, cats):
        assert len(cats.postings["cat"]) == 2

    def test_empty_corpus(self):
        with pytest.raises(EmptyCorpusError):
            build_lexical(Corpus([]))

    def test_empty_tokenization_contributes_zero_length(self):
        idx = build_lexical(Corpus([Passage("d1", "", "!!!"),
                                    Passage("d2", "", "words here")]))
        assert idx.doc_len["d1"] == 0

    def test_title_is_indexed(self):
        idx = build_lexical(Corpus([Passage("d1", "Cats", "sat")]))
        assert "cats" in idx.postings

    def test_avgdl_matches_lengths(self, cats):
        mean = sum(cats.doc_len.values()) / cats.doc_count
        assert abs(cats.avgdl - mean) < 1e-9


class TestScore:
    def test_d3_by_hand(self, cats):
        # idf = ln(1 + (3-2+0.5)/(2+0.5)) = ln 1.6; tf=3, len=avglen=3
        # score = idf * 3*2.2 / (3 + 1.2) = idf * 6.6/4.2
        idf = math.log(1.6)
        assert abs(cats.idf("cat") - idf) < 1e-12
        got = bm25_score(cats, ["cat"], "d3")
        assert abs(got - idf * 6.6 / 4.2) < 1e-12
        assert abs(got - 0.7386) < 1e-3

    def test_d1_by_hand(self, cats):
        got = bm25_score(cats, ["cat"], "d1")
        assert abs(got - math.log(1.6)) < 1e-12

    def test_absent_term_contributes_zero(self, cats):
        assert bm25_score(cats, ["zebra"], "d1") == 0.0
        with_term = bm25_score(cats, ["cat"], "d1")
        assert bm25_score(cats, ["cat", "zebra"], "d1") == with_term

    def test_repeated_query_term_counts_twice(self, cats):
        assert bm25_score(cats, ["cat", "cat"], "d1") == pytest.approx(
            2 * bm25_score(cats, ["cat"], "d1"))

    def test_unknown_passage(self, cats):
        with pytest.raises(NotFoundError, match="d9"):
            bm25_score(cats, ["cat"], "d9")


class TestTopK:
    def test_top1(self, cats):
        assert [pid for pid, _ in lexical_top_k(cats, "cat", 1)] == ["d3"]

    def test_k_beyond_corpus(self, cats):
        hits = lexical_top_k(cats, "cat sat", 50)
        assert {pid for pid, _ in hits} == {"d1", "d2", "d3"}

    def test_zero_overlap_is_empty(self, cats):
        assert lexical_top_k(cats, "zebra quark", 5) == []

    def test_ties_break_by_ascending_id(self):
        idx = build_lexical(Corpus([Passage("b", "", "cat"),
                                    Passage("a", "", "cat"),
                                    Passage("c", "", "dog")]))
        assert [pid for pid, _ in lexical_top_k(idx, "cat", 2)] == ["a", "b"]

    def test_descending_scores(self, cats):
        hits = lexical_top_k(cats, "cat sat mat", 3)
        scores = [s for _, s in hits]
        assert scores == sorted(scores, reverse=True)


WORDS = ["cat", "dog", "sat", "mat", "log", "fog", "ran", "sun"]


@settings(max_examples=40, deadline=None)
@given(
    texts=st.lists(st.lists(st.sampled_from(WORDS), min_size=1, max_size=8),
                   min_size=1, max_size=20),
    query=st.lists(st.sampled_from(WORDS), min_size=1, max_size=3),
    k=st.integers(min_value=1, max_value=25),
)
def test_topk_matches_brute_force(texts, query, k):
    corpus = Corpus([Passage(f"p{i:03d}", "", " ".join(ws))
                     for i, ws in enumerate(texts)])
    idx = build_lexical(corpus)
    qtoks = tokenize(" ".join(query))
    brute = [(pid, bm25_score(idx, qtoks, pid)) for pid in corpus.ids]
    brute = sorted(((pid, s) for pid, s in brute if s > 0.0),
                   key=lambda ps: (-ps[1], ps[0]))[:k]
    assert lexical_top_k(idx, " ".join(query), k) == brute


class TestStore:
    def test_roundtrip_scores(self, cats, tmp_path):
        f = tmp_path / "lex.idx"
        save_lexical(cats, f)
        again = load_lexical(f)
        assert again.doc_count == cats.doc_count
        assert again.postings == cats.postings
        assert again.avgdl == cats.avgdl
        for pid in ("d1", "d2", "d3"):
            assert bm25_score(again, ["cat", "sat"], pid) == \
                bm25_score(cats, ["cat", "sat"], pid)

    def test_bad_magic(self, tmp_path):
        f = tmp_path / "lex.idx"
        f.write_bytes(b"NOTMAGIC" + b"\x00" * 40)
        with pytest.raises(FormatError):
            load_lexical(f)

    def test_truncated(self, cats, tmp_path):
        f = tmp_path / "lex.idx"
        save_lexical(cats, f)
        data = f.read_bytes()
        f.write_bytes(data[:len(data) // 2])
        with pytest.raises(FormatError):
            load_lexical(f)
