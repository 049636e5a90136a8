"""Synthetic corpora with planted gold passages and an RBF oracle teacher.

Passages live in a hidden latent space organized into clusters, so every
gold passage has near-duplicate "sibling" passages that a retriever must
rank below the true gold. Surface tokens are a bucketed rendering of the
latent coordinates plus filler words, and each question's answer is a
unique marker string embedded only in its gold passage, which makes
answer-containment recall noise-free.
"""
from __future__ import annotations

import numpy as np

from .corpus import Corpus, Passage, Question
from .encoder import RbfOracle
from .errors import InvalidInputError

# Latent-to-token rendering: each latent coordinate is quantized into one of
# N_BUCKETS equal-width bins over [-BUCKET_SPAN, BUCKET_SPAN].
N_BUCKETS = 6
BUCKET_SPAN = 2.5


def _bucket_tokens(latent: np.ndarray, edges: np.ndarray) -> list[str]:
    buckets = np.digitize(latent, edges)
    return [f"w{j}x{b}" for j, b in enumerate(buckets)]


def generate_synthetic(
    n_passages: int,
    n_questions: int,
    latent_dim: int,
    seed: int,
    chunk_size: int = 100,
    cluster_size: int = 10,
    intra_scale: float = 0.6,
    question_noise: float = 0.25,
    gamma: float = 1.0,
    token_repeats: int = 2,
    filler_vocab: int = 50,
    filler_per_passage: int = 6,
) -> tuple[Corpus, list[Question], RbfOracle]:
    """Build a corpus, questions planted near unique golds, and the oracle teacher.

    Pure function of its arguments: identical seeds give bit-identical output.
    """
    if n_questions < 1 or n_passages < n_questions:
        raise InvalidInputError("need n_passages >= n_questions >= 1")
    if latent_dim < 2:
        raise InvalidInputError("latent_dim must be >= 2")

    rng = np.random.default_rng(seed)
    edges = np.linspace(-BUCKET_SPAN, BUCKET_SPAN, N_BUCKETS - 1)

    n_clusters = (n_passages + cluster_size - 1) // cluster_size
    centers = rng.standard_normal((n_clusters, latent_dim))
    cluster_of = np.arange(n_passages) % n_clusters
    passage_latents = centers[cluster_of] + intra_scale * rng.standard_normal(
        (n_passages, latent_dim)
    )

    gold_ids = rng.choice(n_passages, size=n_questions, replace=False)
    question_latents = passage_latents[gold_ids] + question_noise * rng.standard_normal(
        (n_questions, latent_dim)
    )

    # Marker answer strings, one per question, planted in the gold passage.
    markers = {int(g): f"zanchorq{qi}z" for qi, g in enumerate(gold_ids)}

    passages = []
    for pid in range(n_passages):
        tokens: list[str] = []
        for tok in _bucket_tokens(passage_latents[pid], edges):
            tokens.extend([tok] * token_repeats)
        fillers = rng.integers(0, filler_vocab, size=filler_per_passage)
        tokens.extend(f"filler{f}" for f in fillers)
        order = rng.permutation(len(tokens))
        tokens = [tokens[i] for i in order]
        if pid in markers:
            tokens = tokens[: chunk_size - 1]
            pos = int(rng.integers(0, len(tokens) + 1))
            tokens.insert(pos, markers[pid])
        tokens = tokens[:chunk_size]
        passages.append(Passage(id=pid, title=f"doc{pid}", tokens=tuple(tokens)))

    questions = []
    question_latent_map = {}
    for qi in range(n_questions):
        tokens = _bucket_tokens(question_latents[qi], edges)
        fillers = rng.integers(0, filler_vocab, size=2)
        tokens = tokens + [f"filler{f}" for f in fillers]
        gold = int(gold_ids[qi])
        questions.append(
            Question(
                id=qi,
                tokens=tuple(tokens),
                answers=(markers[gold],),
                gold_passage_ids=(gold,),
            )
        )
        question_latent_map[qi] = question_latents[qi]

    corpus = Corpus(passages=tuple(passages), chunk_size=chunk_size)
    teacher = RbfOracle(passage_latents, question_latent_map, gamma=gamma)
    return corpus, questions, teacher
