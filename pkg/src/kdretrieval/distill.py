"""Distilling the teacher's ranking distribution into the two-tower student.

Per question, the student's and teacher's scores over the same candidate
passages become distributions via temperature softmax; training minimizes
KL(teacher || student), optionally combined with a contrastive term
(negative log-softmax of the gold passage), with AdamW and linear warmup.
The teacher is frozen: no gradient flows through its scores.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .corpus import Corpus, Passage, Question, contains_answer
from .errors import ConfigurationError, InvalidInputError
from .encoder import TwoTowerStudent
from .optim import AdamW

__all__ = [
    "TrainConfig", "ScoreVector", "Checkpoint", "StepResult",
    "softmax_with_temperature", "kl_divergence", "distill_loss_and_grads",
    "distill_step", "contrastive_loss", "contrastive_loss_and_grads",
    "train", "pretrain_student",
]


@dataclass
class ScoreVector:
    scores: np.ndarray
    passage_ids: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.passage_ids = np.asarray(self.passage_ids, dtype=np.int64)
        if self.scores.shape != self.passage_ids.shape:
            raise InvalidInputError("scores and passage_ids must have equal length")
        if not np.all(np.isfinite(self.scores)):
            raise InvalidInputError("scores must be finite")


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    step: int
    validation_recall: float

    def __post_init__(self):
        if not 0.0 <= self.validation_recall <= 1.0:
            raise InvalidInputError("validation_recall must be in [0, 1]")


@dataclass
class StepResult:
    loss: float
    kd_loss: float
    contrastive_loss: float


def softmax_with_temperature(z, temperature: float) -> np.ndarray:
    """Stabilized softmax of z / T; sums to 1 within 1e-9."""
    if temperature <= 0:
        raise InvalidInputError("temperature must be > 0")
    scores = z.scores if isinstance(z, ScoreVector) else np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise InvalidInputError("scores must be finite")
    shifted = scores / temperature
    shifted = shifted - shifted.max()
    e = np.exp(shifted)
    return e / e.sum()


def kl_divergence(p_teacher, p_student) -> float:
    """Sum of p * ln(p/q) with 0 ln 0 := 0; clamped at 0 against rounding."""
    p = np.asarray(p_teacher, dtype=np.float64)
    q = np.asarray(p_student, dtype=np.float64)
    if p.shape != q.shape:
        raise InvalidInputError("distributions must have equal length")
    mask = p > 0
    val = float(np.sum(p[mask] * np.log(p[mask] / q[mask])))
    return max(val, 0.0)


def _student_forward(student: TwoTowerStudent, q: Question, candidates):
    qx = student.extractor.features(q.tokens)
    eq, q_cache = student.question_tower.forward(qx)
    p_caches = []
    emb = np.empty((len(candidates), student.d_emb))
    for i, p in enumerate(candidates):
        px = student.extractor.features(p.tokens)
        ep, cache = student.passage_tower.forward(px)
        emb[i] = ep
        p_caches.append(cache)
    z = emb @ eq
    return eq, q_cache, emb, p_caches, z


def _backprop_scores(student: TwoTowerStudent, eq, q_cache, emb, p_caches, dz):
    d_eq = emb.T @ dz
    grads = {f"q.{k}": v for k, v in student.question_tower.backward(q_cache, d_eq).items()}
    p_grads = None
    for i, cache in enumerate(p_caches):
        gi = student.passage_tower.backward(cache, dz[i] * eq)
        if p_grads is None:
            p_grads = gi
        else:
            for k in p_grads:
                p_grads[k] += gi[k]
    grads.update({f"p.{k}": v for k, v in p_grads.items()})
    return grads


def distill_loss_and_grads(student: TwoTowerStudent, teacher, q: Question,
                           candidates, config: TrainConfig):
    """Combined KD + contrastive loss and parameter gradients for one question.

    Teacher scores are treated as constants. The contrastive term needs the
    question's gold passage among the candidates.
    """
    if len(candidates) < 2:
        raise InvalidInputError("need at least 2 candidate passages")
    eq, q_cache, emb, p_caches, z = _student_forward(student, q, candidates)
    temp = config.temperature
    dz = np.zeros_like(z)
    kd = 0.0
    contrast = 0.0
    if config.kd_weight > 0:
        z_read = np.asarray(teacher.score_many(q, candidates), dtype=np.float64)
        p_read = softmax_with_temperature(z_read, temp)
        p_ret = softmax_with_temperature(z, temp)
        kd = kl_divergence(p_read, p_ret)
        dz += config.kd_weight * (p_ret - p_read) / temp
    if config.contrastive_weight > 0:
        golds = set(q.gold_passage_ids)
        pos = next((i for i, p in enumerate(candidates) if p.id in golds), None)
        if pos is None:
            raise InvalidInputError(
                f"question {q.id}: gold passage required among candidates for contrastive loss"
            )
        s1 = softmax_with_temperature(z, 1.0)
        contrast = -math.log(s1[pos])
        d_contrast = s1.copy()
        d_contrast[pos] -= 1.0
        dz += config.contrastive_weight * d_contrast
    loss = config.kd_weight * kd + config.contrastive_weight * contrast
    grads = _backprop_scores(student, eq, q_cache, emb, p_caches, dz)
    return loss, kd, contrast, grads


def distill_step(student: TwoTowerStudent, teacher, q: Question, candidates,
                 config: TrainConfig, optimizer: AdamW) -> StepResult:
    """One gradient update on a single question; raises on non-finite values."""
    loss, kd, contrast, grads = distill_loss_and_grads(student, teacher, q, candidates, config)
    if not np.isfinite(loss) or any(not np.all(np.isfinite(g)) for g in grads.values()):
        raise FloatingPointError(
            f"non-finite loss/gradient at step {optimizer.step_count} (question {q.id})"
        )
    optimizer.step(grads)
    return StepResult(loss=loss, kd_loss=kd, contrastive_loss=contrast)


def contrastive_loss_and_grads(student: TwoTowerStudent, q: Question,
                               positive: Passage, negatives):
    """Negative log-softmax of the positive among {positive} + negatives, T=1."""
    if not negatives:
        raise InvalidInputError("at least one negative passage required")
    candidates = [positive] + list(negatives)
    eq, q_cache, emb, p_caches, z = _student_forward(student, q, candidates)
    s = softmax_with_temperature(z, 1.0)
    loss = -math.log(s[0])
    dz = s.copy()
    dz[0] -= 1.0
    grads = _backprop_scores(student, eq, q_cache, emb, p_caches, dz)
    return loss, grads


def contrastive_loss(student: TwoTowerStudent, q: Question, positive: Passage,
                     negatives) -> float:
    return contrastive_loss_and_grads(student, q, positive, negatives)[0]


def _recall_with_student(student: TwoTowerStudent, corpus: Corpus, questions,
                         k_values) -> dict[int, float]:
    """Brute-force recall@k of the current student over the whole corpus."""
    pmat = student.embed_passages(corpus.passages)
    kmax = max(k_values)
    hits = {k: 0 for k in k_values}
    for q in questions:
        scores = pmat @ student.embed_question(q)
        top = np.argsort(-scores, kind="stable")[:kmax]
        found_rank = None
        for rank, pid in enumerate(top):
            if contains_answer(corpus.passages[pid], q.answers):
                found_rank = rank
                break
        for k in k_values:
            if found_rank is not None and found_rank < k:
                hits[k] += 1
    return {k: hits[k] / len(questions) for k in k_values}


def _select_candidates(student: TwoTowerStudent, retriever, q: Question,
                       corpus: Corpus, n: int) -> list[Passage]:
    """Top-n candidates from the retriever, with the gold passage forced in."""
    res = retriever.search(student.embed_question(q), n)
    ids = list(res.ids)
    golds = [g for g in q.gold_passage_ids if 0 <= g < len(corpus)]
    if golds and not any(g in ids for g in golds):
        ids[-1] = golds[0]
    return [corpus.passages[int(i)] for i in ids]


def train(student: TwoTowerStudent, teacher, corpus: Corpus, train_qs, valid_qs,
          retriever_for_candidates, config: TrainConfig, log=None) -> Checkpoint:
    """Distillation training loop with per-epoch validation and checkpoint selection.

    Candidates come from the frozen retriever (the student as passed in)
    unless ``config.refresh_candidates`` re-derives them from the updating
    student each epoch. Returns the snapshot with the highest validation
    recall@``checkpoint_k``; ties keep the earlier step.
    """
    train_qs = list(train_qs)
    valid_qs = list(valid_qs)
    if not train_qs:
        raise ConfigurationError("empty training set")
    rng_val = np.random.default_rng(config.seed + 1)
    n_val = max(1, math.ceil(config.validation_fraction * len(valid_qs))) if valid_qs else 0
    if n_val == 0:
        raise ConfigurationError("empty validation set")
    val_subset = [valid_qs[i] for i in rng_val.permutation(len(valid_qs))[:n_val]]

    n = config.passages_per_question
    candidates = {
        q.id: _select_candidates(student, retriever_for_candidates, q, corpus, n)
        for q in train_qs
    }

    opt = AdamW(student.params, learning_rate=config.learning_rate, betas=config.betas,
                weight_decay=config.weight_decay, warmup_steps=config.warmup_steps)
    rng = np.random.default_rng(config.seed)
    recall_ks = sorted({1, 20, config.checkpoint_k})
    best: Checkpoint | None = None
    step = 0
    for epoch in range(config.epochs):
        if config.refresh_candidates and epoch > 0:
            from .index import build_flat
            fresh = build_flat(student.embed_passages(corpus.passages))
            candidates = {
                q.id: _select_candidates(student, fresh, q, corpus, n) for q in train_qs
            }
        order = rng.permutation(len(train_qs))
        for i in order:
            q = train_qs[i]
            result = distill_step(student, teacher, q, candidates[q.id], config, opt)
            if log is not None:
                log(f"step step={step} kd_loss={result.kd_loss:.6f} "
                    f"contrastive_loss={result.contrastive_loss:.6f} lr={opt.current_lr:.6e}")
            step += 1
        recall = _recall_with_student(student, corpus, val_subset, recall_ks)
        if log is not None:
            log(f"epoch epoch={epoch} recall@1={recall[1]:.4f} recall@20={recall[20]:.4f}")
        score = recall[config.checkpoint_k]
        if best is None or score > best.validation_recall:
            best = Checkpoint(params=student.snapshot(), step=step, validation_recall=score)
    return best


def pretrain_student(student: TwoTowerStudent, corpus: Corpus, train_qs,
                     config: TrainConfig, log=None) -> TwoTowerStudent:
    """Contrastive pretraining with in-batch negatives over gold passages."""
    items = [q for q in train_qs if q.gold_passage_ids]
    if not items:
        raise ConfigurationError("pretraining needs questions with gold passage ids")
    opt = AdamW(student.params, learning_rate=config.learning_rate, betas=config.betas,
                weight_decay=config.weight_decay, warmup_steps=config.warmup_steps)
    rng = np.random.default_rng(config.seed)
    bsz = config.batch_size
    step = 0
    for _epoch in range(config.epochs):
        order = rng.permutation(len(items))
        for start in range(0, len(order), bsz):
            batch = [items[i] for i in order[start : start + bsz]]
            if len(batch) < 2:
                continue
            forwards = []
            emb_p = np.empty((len(batch), student.d_emb))
            for i, q in enumerate(batch):
                gold = corpus.passages[q.gold_passage_ids[0]]
                qx = student.extractor.features(q.tokens)
                eq, q_cache = student.question_tower.forward(qx)
                px = student.extractor.features(gold.tokens)
                ep, p_cache = student.passage_tower.forward(px)
                forwards.append((eq, q_cache, p_cache))
                emb_p[i] = ep
            grads = None
            total = 0.0
            for i, (eq, q_cache, _) in enumerate(forwards):
                z = emb_p @ eq
                s = softmax_with_temperature(z, 1.0)
                total += -math.log(s[i])
                dz = s.copy()
                dz[i] -= 1.0
                dz /= len(batch)
                gq = student.question_tower.backward(q_cache, emb_p.T @ dz)
                gi = {f"q.{k}": v for k, v in gq.items()}
                for j, (_, _, p_cache) in enumerate(forwards):
                    gp = student.passage_tower.backward(p_cache, dz[j] * eq)
                    for k, v in gp.items():
                        key = f"p.{k}"
                        gi[key] = gi.get(key, 0) + v
                if grads is None:
                    grads = gi
                else:
                    for k in grads:
                        grads[k] += gi[k]
            loss = total / len(batch)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite pretraining loss at step {step}")
            opt.step(grads)
            if log is not None:
                log(f"pretrain_step step={step} contrastive_loss={loss:.6f} "
                    f"lr={opt.current_lr:.6e}")
            step += 1
    return student
