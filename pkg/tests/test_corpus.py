import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kdretrieval.corpus import (
    Corpus,
    Passage,
    chunk_document,
    contains_answer,
    load_corpus,
    load_questions,
    save_corpus,
    save_questions,
)
from kdretrieval.errors import IntegrityError, InvalidInputError, ParseError
from kdretrieval.synthetic import generate_synthetic


def make_body(n_words):
    return " ".join(f"word{i}" for i in range(n_words))


class TestChunkDocument:
    def test_250_words_chunk_100(self):
        passages = chunk_document("t", make_body(250), 100)
        assert [len(p.tokens) for p in passages] == [100, 100, 50]

    def test_exact_fit(self):
        passages = chunk_document("t", make_body(100), 100)
        assert [len(p.tokens) for p in passages] == [100]

    def test_single_word(self):
        passages = chunk_document("t", make_body(1), 100)
        assert [len(p.tokens) for p in passages] == [1]

    def test_empty_body_rejected(self):
        with pytest.raises(InvalidInputError):
            chunk_document("t", "   \n\t ", 100)

    @given(n_words=st.integers(1, 400), chunk_size=st.integers(1, 120))
    @settings(max_examples=50, deadline=None)
    def test_chunking_is_a_partition(self, n_words, chunk_size):
        body = make_body(n_words)
        passages = chunk_document("t", body, chunk_size)
        rejoined = [t for p in passages for t in p.tokens]
        assert rejoined == body.split()
        assert all(len(p.tokens) <= chunk_size for p in passages)
        assert all(len(p.tokens) == chunk_size for p in passages[:-1])


class TestContainsAnswer:
    def test_case_normalized_match(self):
        p = Passage(0, "t", ("the", "Eiffel", "Tower", "opened"))
        assert contains_answer(p, ["eiffel tower"])

    def test_no_match(self):
        p = Passage(0, "t", ("paris", "france"))
        assert not contains_answer(p, ["London"])

    def test_any_answer_matches(self):
        p = Passage(0, "t", ("a", "b", "c"))
        assert contains_answer(p, ["b c", "z"])

    def test_matches_brute_force_scan(self):
        # independent oracle: check every window of every length
        p = Passage(0, "t", ("a", "b", "c", "d"))
        tokens = ["a", "b", "c", "d"]
        for answer in ["a", "b c", "c d", "a b c d", "b d", "e", "d a"]:
            needle = answer.split()
            expected = any(
                tokens[i : i + len(needle)] == needle
                for i in range(len(tokens) - len(needle) + 1)
            )
            assert contains_answer(p, [answer]) == expected

    def test_punctuation_stripped_at_boundaries(self):
        p = Passage(0, "t", ("Visit", "Paris,", "France."))
        assert contains_answer(p, ["paris france"])

    @given(st.lists(st.sampled_from(["Alpha", "beta", "GAMMA"]), min_size=1, max_size=6))
    @settings(max_examples=30, deadline=None)
    def test_case_invariance(self, tokens):
        p_lower = Passage(0, "t", tuple(t.lower() for t in tokens))
        p_upper = Passage(0, "t", tuple(t.upper() for t in tokens))
        answer = " ".join(tokens[:2])
        assert contains_answer(p_lower, [answer]) == contains_answer(p_upper, [answer])

    def test_empty_answers_rejected(self):
        with pytest.raises(InvalidInputError):
            contains_answer(Passage(0, "t", ("a",)), [])


class TestCorpusInvariants:
    def test_ids_must_be_dense(self):
        passages = (Passage(0, "t", ("a",)), Passage(2, "t", ("b",)))
        with pytest.raises(IntegrityError):
            Corpus(passages=passages)

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            Corpus(passages=())

    def test_oversized_passage_rejected(self):
        p = Passage(0, "t", tuple(f"w{i}" for i in range(101)))
        with pytest.raises(IntegrityError):
            Corpus(passages=(p,), chunk_size=100)


class TestFileIO:
    def test_corpus_roundtrip(self, tmp_path):
        corpus, questions, _ = generate_synthetic(30, 5, 4, seed=2)
        cpath = tmp_path / "corpus.jsonl"
        qpath = tmp_path / "questions.jsonl"
        save_corpus(corpus, cpath)
        save_questions(questions, qpath)
        assert load_corpus(cpath) == corpus
        assert load_questions(qpath) == questions

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": 0, "title": "t", "text": "a"}\nnot json\n')
        with pytest.raises(ParseError, match="line 2"):
            load_corpus(path)

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "dup.jsonl"
        rec = json.dumps({"id": 0, "title": "t", "text": "a"})
        path.write_text(rec + "\n" + rec + "\n")
        with pytest.raises(IntegrityError):
            load_corpus(path)

    def test_missing_answers_allowed(self, tmp_path):
        path = tmp_path / "q.jsonl"
        path.write_text(json.dumps({"id": 0, "question": "who"}) + "\n")
        qs = load_questions(path)
        assert qs[0].answers == ()


class TestGenerateSynthetic:
    def test_identical_seed_identical_output(self):
        a = generate_synthetic(100, 10, 8, seed=1)
        b = generate_synthetic(100, 10, 8, seed=1)
        assert a[0] == b[0]
        assert a[1] == b[1]

    def test_gold_contains_answer(self):
        corpus, questions, _ = generate_synthetic(100, 10, 8, seed=1)
        for q in questions:
            assert contains_answer(corpus[q.gold_passage_ids[0]], q.answers)

    def test_teacher_top1_is_gold_for_95_percent(self):
        # exhaustive teacher scoring over the full corpus
        corpus, questions, teacher = generate_synthetic(100, 10, 8, seed=1)
        hits = sum(
            int(teacher.score_all(q).argmax()) == q.gold_passage_ids[0]
            for q in questions
        )
        assert hits / len(questions) >= 0.95

    def test_question_count_validated(self):
        with pytest.raises(InvalidInputError):
            generate_synthetic(5, 10, 8, seed=0)

    def test_marker_unique_to_gold(self):
        corpus, questions, _ = generate_synthetic(80, 8, 6, seed=4)
        for q in questions:
            holders = [p.id for p in corpus.passages if contains_answer(p, q.answers)]
            assert holders == [q.gold_passage_ids[0]]
