import numpy as np
import pytest

from kdretrieval.config import TrainConfig
from kdretrieval.corpus import Corpus, Passage, Question, contains_answer
from kdretrieval.encoder import JointMlp, TwoTowerStudent
from kdretrieval.errors import InvalidInputError
from kdretrieval.evaluation import (
    ablate_distillation,
    bench_rerank_latency,
    end_to_end_accuracy,
    finetune_reader_after_swap,
    linear_fit_r2,
    negative_sampling_study,
    recall_at_k,
    sweep_k,
)
from kdretrieval.index import build_flat
from kdretrieval.synthetic import generate_synthetic


class OneHotStudent:
    """Stub retriever tower: question i maps to the i-th basis vector, so the
    flat index ranks passages by column i of the score matrix."""

    def __init__(self, dim):
        self.dim = dim

    def embed_question(self, q):
        e = np.zeros(self.dim)
        e[q.id] = 1.0
        return e


def make_rank_table_world():
    """60 passages ranked by id for every question; gold ranks 1, 3, 7, 50,
    and 'never' give recall [0.2, 0.4, 0.6] at k = 1, 5, 10."""
    n, n_q = 60, 5
    gold_ranks = [1, 3, 7, 50, None]
    answer_passage = {i: r - 1 for i, r in enumerate(gold_ranks) if r is not None}
    passages = []
    for pid in range(n):
        tokens = [f"pad{pid}"]
        for qi, ap in answer_passage.items():
            if ap == pid:
                tokens.append(f"ans{qi}")
        passages.append(Passage(id=pid, title="t", tokens=tuple(tokens)))
    corpus = Corpus(passages=tuple(passages))
    questions = [Question(id=i, tokens=("q",), answers=(f"ans{i}",))
                 for i in range(n_q)]
    # score for passage p under every question: 60 - p, so rank = p + 1
    vectors = np.tile((n - np.arange(n, dtype=np.float64))[:, None], (1, n_q))
    return build_flat(vectors), OneHotStudent(n_q), questions, corpus


class TestRecallAtK:
    def test_hand_built_rank_table(self):
        index, student, questions, corpus = make_rank_table_world()
        report = recall_at_k(index, student, questions, corpus, [1, 5, 10])
        assert report.recall == [0.2, 0.4, 0.6]
        assert report.n_questions == 5

    def test_recall_is_non_decreasing_in_k(self, tiny_world):
        corpus, questions, _ = tiny_world
        student = TwoTowerStudent(d_in=64, hidden=8, d_emb=4, seed=0)
        index = build_flat(student.embed_passages(corpus.passages))
        report = recall_at_k(index, student, questions, corpus, [1, 2, 5, 10, 20, 50])
        assert all(b >= a for a, b in zip(report.recall, report.recall[1:]))

    def test_full_corpus_recall_is_one(self, tiny_world):
        # every question has exactly one answer passage somewhere
        corpus, questions, _ = tiny_world
        student = TwoTowerStudent(d_in=64, hidden=8, d_emb=4, seed=0)
        index = build_flat(student.embed_passages(corpus.passages))
        report = recall_at_k(index, student, questions, corpus, [len(corpus)])
        assert report.recall == [1.0]

    def test_k_values_must_ascend(self, tiny_world):
        corpus, questions, _ = tiny_world
        student = TwoTowerStudent(d_in=64, hidden=8, d_emb=4, seed=0)
        index = build_flat(student.embed_passages(corpus.passages))
        for bad in ([], [5, 2], [0, 1], [3, 3]):
            with pytest.raises(InvalidInputError):
                recall_at_k(index, student, questions, corpus, bad)


def make_pipeline_world(seed=7):
    corpus, questions, teacher = generate_synthetic(50, 10, 4, seed=seed)
    student = TwoTowerStudent(d_in=64, hidden=8, d_emb=4, seed=seed)
    index = build_flat(student.embed_passages(corpus.passages))
    return corpus, questions, teacher, student, index


class TestEndToEnd:
    def test_k1_rerank_equals_retrieval_top1(self):
        corpus, questions, teacher, student, index = make_pipeline_world()
        result = end_to_end_accuracy(index, student, teacher, questions, corpus, 1)
        assert result.accuracy == result.retrieval_top1_accuracy
        assert result.accuracy == result.retrieval_recall

    def test_reranked_is_permutation_of_retrieved(self):
        corpus, questions, teacher, student, index = make_pipeline_world()
        result = end_to_end_accuracy(index, student, teacher, questions, corpus, 8)
        for o in result.outcomes:
            assert sorted(o.reranked_ids) == sorted(o.retrieved_ids)
            assert len(o.retrieved_ids) == 8

    def test_accuracy_bounded_by_retrieval_recall(self):
        corpus, questions, teacher, student, index = make_pipeline_world()
        for k in (1, 4, 16):
            result = end_to_end_accuracy(index, student, teacher, questions, corpus, k)
            assert result.accuracy <= result.retrieval_recall + 1e-12

    def test_correct_flag_matches_reranked_top1(self):
        corpus, questions, teacher, student, index = make_pipeline_world()
        result = end_to_end_accuracy(index, student, teacher, questions, corpus, 5)
        for o in result.outcomes:
            q = next(q for q in questions if q.id == o.question_id)
            assert o.correct == contains_answer(corpus.passages[o.reranked_ids[0]],
                                                q.answers)

    def test_k_validated(self):
        corpus, questions, teacher, student, index = make_pipeline_world()
        with pytest.raises(InvalidInputError):
            end_to_end_accuracy(index, student, teacher, questions, corpus, 0)


class TestSweepK:
    def test_matches_brute_force_two_stage_oracle(self):
        # independent oracle: score every passage, rank, rerank, score top-1
        corpus, questions, teacher = generate_synthetic(20, 5, 4, seed=13)
        student = TwoTowerStudent(d_in=64, hidden=8, d_emb=4, seed=13)
        index = build_flat(student.embed_passages(corpus.passages))
        ks = [1, 2, 5, 10, 20]
        curve = sweep_k(index, student, teacher, questions, corpus, ks)
        for row in curve:
            k = row["k"]
            correct = 0
            recall_hits = 0
            for q in questions:
                scores = [student.score(q, p) for p in corpus.passages]
                order = sorted(range(len(corpus)), key=lambda i: (-scores[i], i))
                top = order[:k]
                t_scores = [teacher.score(q, corpus.passages[i]) for i in top]
                best = min(range(k), key=lambda j: (-t_scores[j], top[j]))
                correct += contains_answer(corpus.passages[top[best]], q.answers)
                recall_hits += any(contains_answer(corpus.passages[i], q.answers)
                                   for i in top)
            assert row["accuracy"] == pytest.approx(correct / len(questions), abs=1e-12)
            assert row["retrieval_recall"] == pytest.approx(
                recall_hits / len(questions), abs=1e-12)

    def test_repeat_runs_identical(self):
        corpus, questions, teacher, student, index = make_pipeline_world()
        ks = [1, 2, 5, 10, 20, 50]
        a = sweep_k(index, student, teacher, questions, corpus, ks)
        b = sweep_k(index, student, teacher, questions, corpus, ks)
        assert a == b

    def test_retrieval_recall_non_decreasing(self):
        corpus, questions, teacher, student, index = make_pipeline_world()
        curve = sweep_k(index, student, teacher, questions, corpus, [1, 5, 20, 50])
        recalls = [row["retrieval_recall"] for row in curve]
        assert all(b >= a for a, b in zip(recalls, recalls[1:]))


class TestNegativeSamplingStudy:
    def test_trains_one_reader_per_variant(self):
        corpus, questions, _, student, index = make_pipeline_world()
        cfg = TrainConfig(kd_weight=0.0, contrastive_weight=1.0, epochs=1,
                          learning_rate=1e-3, warmup_steps=2, seed=0)
        variants = [{"source": "random", "n_negatives": 3},
                    {"source": "retrieved", "n_negatives": 3}]
        report = negative_sampling_study(corpus, questions, index, student,
                                         variants, cfg, k_values=[1, 5],
                                         d_in=64, hidden=8)
        assert set(report) == {"random-3", "retrieved-3"}
        for curve in report.values():
            assert [row["k"] for row in curve] == [1, 5]

    def test_unknown_source_rejected(self):
        corpus, questions, _, student, index = make_pipeline_world()
        cfg = TrainConfig(kd_weight=0.0, contrastive_weight=1.0, epochs=1, seed=0)
        with pytest.raises(InvalidInputError):
            negative_sampling_study(corpus, questions, index, student,
                                    [{"source": "bogus", "n_negatives": 2}],
                                    cfg, k_values=[1], d_in=64, hidden=8)


class TestAblateDistillation:
    def test_structure_and_arm_isolation(self):
        cfg = TrainConfig(epochs=2, learning_rate=1e-3, warmup_steps=5,
                          passages_per_question=6, batch_size=5, seed=1)
        pre = TrainConfig(kd_weight=0.0, contrastive_weight=1.0, epochs=2,
                          learning_rate=3e-3, warmup_steps=2, batch_size=5, seed=1)
        result = ablate_distillation(120, 12, 4, seed=1, config=cfg,
                                     pretrain_config=pre, k_values=(1, 5),
                                     student_kwargs={"d_in": 64, "hidden": 8,
                                                     "d_emb": 4})
        assert result["k_values"] == [1, 5]
        assert len(result["deltas"]) == 2
        for arm in ("kd", "contrastive"):
            assert result[arm].k_values == [1, 5]
            assert all(0.0 <= r <= 1.0 for r in result[arm].recall)
        for k, d in zip(result["k_values"], result["deltas"]):
            kd = result["kd"].recall[result["k_values"].index(k)]
            con = result["contrastive"].recall[result["k_values"].index(k)]
            assert d == pytest.approx(100.0 * (kd - con), abs=1e-9)
        # the two arms actually diverged from the shared starting point
        pk = result["students"]["kd"].params
        pc = result["students"]["contrastive"].params
        assert any(not np.array_equal(pk[k], pc[k]) for k in pk)


class TestFinetuneReader:
    def test_reports_before_after_delta(self):
        corpus, questions, _, student, index = make_pipeline_world()
        reader = JointMlp(d_in=64, hidden=8, seed=0, extractor=student.extractor)
        cfg = TrainConfig(kd_weight=0.0, contrastive_weight=1.0, epochs=1,
                          learning_rate=1e-3, warmup_steps=2, seed=0)
        _, report = finetune_reader_after_swap(reader, student, index, corpus,
                                               questions, 4, cfg)
        assert set(report) == {"accuracy_before", "accuracy_after", "delta"}
        assert report["delta"] == pytest.approx(
            report["accuracy_after"] - report["accuracy_before"], abs=1e-12)


class TestRerankLatency:
    def test_per_k_timings_scale_with_k(self):
        corpus, questions, teacher, student, index = make_pipeline_world()
        timings = bench_rerank_latency(teacher, questions, corpus, index, student,
                                       k_values=(1, 10, 40), repeats=5)
        assert set(timings) == {1, 10, 40}
        assert all(t > 0 for t in timings.values())
        assert timings[40] > timings[1]


class TestLinearFit:
    def test_perfect_line_gives_one(self):
        x = np.arange(10, dtype=float)
        assert linear_fit_r2(x, 3.0 * x + 2.0) == pytest.approx(1.0, abs=1e-12)

    def test_matches_manual_computation(self):
        # independent oracle: closed-form R^2 = corr(x, y)^2 for a 1-D fit
        rng = np.random.default_rng(0)
        x = rng.standard_normal(30)
        y = 2.0 * x + rng.standard_normal(30)
        expected = float(np.corrcoef(x, y)[0, 1] ** 2)
        assert linear_fit_r2(x, y) == pytest.approx(expected, abs=1e-10)

    def test_nonlinear_data_scores_lower(self):
        x = np.linspace(0, 3, 40)
        assert linear_fit_r2(x, np.exp(3 * x)) < linear_fit_r2(x, 2 * x + 1)
