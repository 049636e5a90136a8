"""Metrics and experiment harnesses: recall@k, retrieve-then-rerank accuracy,
k-sweeps, the negative-sampling and distillation-ablation studies, and the
reranking latency benchmark."""
from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .config import TrainConfig
from .corpus import Corpus, Question, contains_answer
from .encoder import JointMlp, TwoTowerStudent, train_joint_reader
from .errors import InvalidInputError
from .index import build_flat
from .distill import pretrain_student, train
from .synthetic import generate_synthetic

DEFAULT_K_SWEEP = (1, 2, 5, 10, 20, 30, 40, 50, 100)


@dataclass
class RecallReport:
    k_values: list[int]
    recall: list[float]
    n_questions: int


@dataclass
class QuestionOutcome:
    question_id: int
    retrieved_ids: list[int]
    reranked_ids: list[int]
    correct: bool


@dataclass
class PipelineResult:
    outcomes: list[QuestionOutcome]
    accuracy: float
    retrieval_top1_accuracy: float
    retrieval_recall: float


def _check_ascending(k_values) -> list[int]:
    ks = [int(k) for k in k_values]
    if not ks or any(b <= a for a, b in zip(ks, ks[1:])) or ks[0] < 1:
        raise InvalidInputError("k_values must be positive and strictly ascending")
    return ks


def recall_at_k(index, student: TwoTowerStudent, questions, corpus: Corpus,
                k_values) -> RecallReport:
    """Fraction of questions with an answer-containing passage in the top-k."""
    ks = _check_ascending(k_values)
    questions = list(questions)
    kmax = ks[-1]
    hits = {k: 0 for k in ks}
    for q in questions:
        res = index.search(student.embed_question(q), kmax)
        found_rank = None
        for rank, pid in enumerate(res.ids):
            if contains_answer(corpus.passages[int(pid)], q.answers):
                found_rank = rank
                break
        for k in ks:
            if found_rank is not None and found_rank < k:
                hits[k] += 1
    n = len(questions)
    return RecallReport(k_values=ks, recall=[hits[k] / n for k in ks], n_questions=n)


def end_to_end_accuracy(index, student: TwoTowerStudent, teacher, questions,
                        corpus: Corpus, k: int) -> PipelineResult:
    """Retrieve top-k with the student, rerank with the teacher.

    A question counts as correct when the teacher's top-1 passage contains
    the answer. Deterministic; teacher ties are broken by smaller id.
    """
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    outcomes = []
    correct = 0
    top1 = 0
    recall_hits = 0
    for q in questions:
        res = index.search(student.embed_question(q), k)
        ids = res.ids
        passages = [corpus.passages[int(i)] for i in ids]
        t_scores = np.asarray(teacher.score_many(q, passages), dtype=np.float64)
        order = np.lexsort((ids, -t_scores))
        reranked = [int(ids[i]) for i in order]
        ok = contains_answer(corpus.passages[reranked[0]], q.answers)
        outcomes.append(QuestionOutcome(
            question_id=q.id,
            retrieved_ids=[int(i) for i in ids],
            reranked_ids=reranked,
            correct=ok,
        ))
        correct += ok
        top1 += contains_answer(passages[0], q.answers)
        recall_hits += any(contains_answer(p, q.answers) for p in passages)
    n = len(outcomes)
    return PipelineResult(
        outcomes=outcomes,
        accuracy=correct / n,
        retrieval_top1_accuracy=top1 / n,
        retrieval_recall=recall_hits / n,
    )


def sweep_k(index, student: TwoTowerStudent, teacher, questions, corpus: Corpus,
            k_values=DEFAULT_K_SWEEP) -> list[dict]:
    """One end-to-end evaluation per k; returns curve records."""
    ks = _check_ascending(k_values)
    curve = []
    for k in ks:
        result = end_to_end_accuracy(index, student, teacher, questions, corpus, k)
        curve.append({
            "k": k,
            "accuracy": result.accuracy,
            "retrieval_recall": result.retrieval_recall,
        })
    return curve


def _reader_batches(corpus, questions, source, n_negatives, index=None,
                    student=None, seed=0):
    rng = np.random.default_rng(seed)
    batches = []
    n = len(corpus)
    for q in questions:
        if not q.gold_passage_ids:
            continue
        gold = q.gold_passage_ids[0]
        if source == "random":
            pool = rng.permutation(n)
            neg_ids = [int(p) for p in pool if p != gold][:n_negatives]
        elif source == "retrieved":
            res = index.search(student.embed_question(q), n_negatives + 1)
            neg_ids = [int(p) for p in res.ids if p != gold][:n_negatives]
        else:
            raise InvalidInputError(f"unknown negative source {source!r}")
        batches.append((q, corpus.passages[gold], [corpus.passages[p] for p in neg_ids]))
    return batches


def negative_sampling_study(corpus: Corpus, questions, index,
                            student: TwoTowerStudent, variants,
                            config: TrainConfig, k_values=DEFAULT_K_SWEEP,
                            d_in: int = 512, hidden: int = 64) -> dict:
    """Train one joint reader per (negative source, negative count) variant,
    then sweep k with each trained reader as the reranking stage."""
    report = {}
    for variant in variants:
        source = variant["source"]
        n_neg = int(variant["n_negatives"])
        name = f"{source}-{n_neg}"
        batches = _reader_batches(corpus, questions, source, n_neg,
                                  index=index, student=student, seed=config.seed)
        reader = JointMlp(d_in=d_in, hidden=hidden, seed=config.seed,
                          extractor=student.extractor)
        train_joint_reader(reader, batches, config)
        report[name] = sweep_k(index, student, reader, questions, corpus, k_values)
    return report


def ablate_distillation(n_passages: int, n_questions: int, latent_dim: int,
                        seed: int, config: TrainConfig,
                        pretrain_config: TrainConfig | None = None,
                        k_values=(1, 20, 50, 100),
                        student_kwargs: dict | None = None) -> dict:
    """Train a KD arm and a contrastive-only arm from identical pretrained
    parameters and report recall@k for both, plus the deltas (KD minus
    contrastive) in absolute points."""
    corpus, questions, teacher = generate_synthetic(n_passages, n_questions,
                                                    latent_dim, seed)
    student = TwoTowerStudent(seed=config.seed, **(student_kwargs or {}))
    # Contrastive pretraining takes few but aggressive steps (batches, not
    # per-question items), so it gets a higher rate and shorter warmup.
    pre_cfg = pretrain_config or TrainConfig(
        seed=config.seed, kd_weight=0.0, contrastive_weight=1.0,
        epochs=10, learning_rate=3e-3, warmup_steps=20,
        batch_size=config.batch_size,
    )
    pretrain_student(student, corpus, questions, pre_cfg)

    student_kd = student.copy()
    student_con = student.copy()
    assert all(np.array_equal(a, b) for a, b in
               zip(student_kd.params.values(), student_con.params.values()))

    frozen = build_flat(student.embed_passages(corpus.passages))
    cfg_kd = replace(config, kd_weight=1.0, contrastive_weight=0.0)
    cfg_con = replace(config, kd_weight=0.0, contrastive_weight=1.0)
    ck_kd = train(student_kd, teacher, corpus, questions, questions, frozen, cfg_kd)
    ck_con = train(student_con, teacher, corpus, questions, questions, frozen, cfg_con)
    student_kd.set_params(ck_kd.params)
    student_con.set_params(ck_con.params)

    reports = {}
    for name, s in (("kd", student_kd), ("contrastive", student_con)):
        idx = build_flat(s.embed_passages(corpus.passages))
        reports[name] = recall_at_k(idx, s, questions, corpus, k_values)
    deltas = [100.0 * (a - b) for a, b in
              zip(reports["kd"].recall, reports["contrastive"].recall)]
    return {"kd": reports["kd"], "contrastive": reports["contrastive"],
            "k_values": list(k_values), "deltas": deltas,
            "students": {"kd": student_kd, "contrastive": student_con}}


def finetune_reader_after_swap(reader: JointMlp, student: TwoTowerStudent,
                               index, corpus: Corpus, questions, k: int,
                               config: TrainConfig) -> tuple[JointMlp, dict]:
    """End-to-end accuracy with and without finetuning the reader on the
    swapped-in retriever's top-k outputs."""
    before = end_to_end_accuracy(index, student, reader, questions, corpus, k)
    batches = _reader_batches(corpus, questions, "retrieved", k - 1 if k > 1 else 1,
                              index=index, student=student, seed=config.seed)
    train_joint_reader(reader, batches, config)
    after = end_to_end_accuracy(index, student, reader, questions, corpus, k)
    return reader, {
        "accuracy_before": before.accuracy,
        "accuracy_after": after.accuracy,
        "delta": after.accuracy - before.accuracy,
    }


def bench_rerank_latency(teacher, questions, corpus: Corpus, index,
                         student: TwoTowerStudent, k_values=(1, 10, 20, 30, 40, 50),
                         repeats: int = 3) -> dict[int, float]:
    """Mean wall-clock seconds to teacher-score the top-k candidates, per k.

    Candidates are scored one pair at a time, matching a reader that reads
    passages sequentially.
    """
    ks = _check_ascending(k_values)
    kmax = ks[-1]
    retrieved = {}
    for q in questions:
        res = index.search(student.embed_question(q), kmax)
        retrieved[q.id] = [corpus.passages[int(i)] for i in res.ids]
    out = {}
    for k in ks:
        start = time.perf_counter()
        for _ in range(repeats):
            for q in questions:
                for p in retrieved[q.id][:k]:
                    teacher.score(q, p)
        out[k] = (time.perf_counter() - start) / (repeats * len(list(questions)))
    return out


def linear_fit_r2(x, y) -> float:
    """R-squared of an ordinary least-squares line through (x, y)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    coeffs = np.polyfit(x, y, 1)
    pred = np.polyval(coeffs, x)
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0


def format_recall_report(report: RecallReport, seed: int, variant: str) -> str:
    lines = []
    for k, r in zip(report.k_values, report.recall):
        lines.append(f"metric=recall k={k} value={r:.6f} n={report.n_questions} "
                     f"seed={seed} variant={variant}")
    return "\n".join(lines) + "\n"


def format_curve(curve, seed: int, variant: str) -> str:
    lines = []
    for row in curve:
        lines.append(f"metric=accuracy k={row['k']} value={row['accuracy']:.6f} "
                     f"n=- seed={seed} variant={variant}")
        lines.append(f"metric=retrieval_recall k={row['k']} "
                     f"value={row['retrieval_recall']:.6f} n=- seed={seed} variant={variant}")
    return "\n".join(lines) + "\n"
