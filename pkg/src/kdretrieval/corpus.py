"""Passages, questions, and corpora: data model, chunking, answer matching, file IO.

Corpus and question files are UTF-8 JSON lines. Corpus records carry
``id`` (integer), ``title``, ``text``; question records carry ``id``,
``question``, ``answers`` (array of strings) and optionally
``gold_passage_ids``. Values are immutable after load and safe to share
across workers.
"""
from __future__ import annotations

import json
import logging
import string
from dataclasses import dataclass

from .errors import InvalidInputError, IntegrityError, ParseError

logger = logging.getLogger(__name__)

DEFAULT_CHUNK_SIZE = 100

_PUNCT = string.punctuation


@dataclass(frozen=True)
class Passage:
    """A chunk of at most ``chunk_size`` whitespace tokens."""

    id: int
    title: str
    tokens: tuple[str, ...]

    def __post_init__(self):
        if len(self.tokens) < 1:
            raise InvalidInputError(f"passage {self.id} has no tokens")

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass(frozen=True)
class Question:
    id: int
    tokens: tuple[str, ...]
    answers: tuple[str, ...] = ()
    gold_passage_ids: tuple[int, ...] = ()

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass(frozen=True)
class Corpus:
    """An ordered collection of passages with ids dense in [0, N)."""

    passages: tuple[Passage, ...]
    chunk_size: int = DEFAULT_CHUNK_SIZE

    def __post_init__(self):
        if len(self.passages) < 1:
            raise InvalidInputError("corpus must contain at least one passage")
        if self.chunk_size < 1:
            raise InvalidInputError("chunk_size must be positive")
        ids = [p.id for p in self.passages]
        if sorted(ids) != list(range(len(ids))):
            raise IntegrityError("passage ids must be unique and dense in [0, N)")
        for p in self.passages:
            if len(p.tokens) > self.chunk_size:
                raise IntegrityError(
                    f"passage {p.id} has {len(p.tokens)} tokens > chunk_size {self.chunk_size}"
                )

    def __len__(self) -> int:
        return len(self.passages)

    def __getitem__(self, pid: int) -> Passage:
        return self.passages[pid]


def chunk_document(title: str, body: str, chunk_size: int = DEFAULT_CHUNK_SIZE) -> list[Passage]:
    """Split a document into consecutive non-overlapping word windows.

    Every window has exactly ``chunk_size`` words except possibly the last.
    Passage ids number the windows from 0 in order.
    """
    if chunk_size < 1:
        raise InvalidInputError("chunk_size must be positive")
    words = body.split()
    if not words:
        raise InvalidInputError("document body is empty after tokenization")
    return [
        Passage(id=i, title=title, tokens=tuple(words[start : start + chunk_size]))
        for i, start in enumerate(range(0, len(words), chunk_size))
    ]


def normalize_tokens(tokens) -> list[str]:
    """Lowercase and strip punctuation at token boundaries; drop emptied tokens."""
    out = []
    for t in tokens:
        t = t.lower().strip(_PUNCT)
        if t:
            out.append(t)
    return out


def contains_answer(passage: Passage, answers) -> bool:
    """True iff any answer occurs as a contiguous token subsequence of the passage.

    Both sides are normalized (lowercase, punctuation stripped at token
    boundaries, whitespace collapsed by tokenization).
    """
    answers = list(answers)
    if not answers:
        raise InvalidInputError("answers must be non-empty")
    hay = normalize_tokens(passage.tokens)
    for answer in answers:
        needle = normalize_tokens(answer.split())
        if not needle or len(needle) > len(hay):
            continue
        for start in range(len(hay) - len(needle) + 1):
            if hay[start : start + len(needle)] == needle:
                return True
    return False


def _iter_json_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc}", lineno) from exc
            if not isinstance(record, dict):
                raise ParseError("record is not an object", lineno)
            yield lineno, record


def load_corpus(path, chunk_size: int = DEFAULT_CHUNK_SIZE) -> Corpus:
    """Load a corpus file (JSON lines with fields id, title, text)."""
    passages = []
    seen = set()
    for lineno, rec in _iter_json_lines(path):
        try:
            pid = int(rec["id"])
            title = str(rec["title"])
            text = str(rec["text"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"missing or malformed field: {exc}", lineno) from exc
        if pid in seen:
            raise IntegrityError(f"duplicate passage id {pid} at line {lineno}")
        seen.add(pid)
        tokens = tuple(text.split())
        if not tokens:
            raise ParseError("passage text is empty", lineno)
        if len(tokens) > chunk_size:
            raise ParseError(
                f"passage has {len(tokens)} tokens > chunk_size {chunk_size}", lineno
            )
        passages.append(Passage(id=pid, title=title, tokens=tokens))
    if not passages:
        raise ParseError("corpus file contains no records")
    passages.sort(key=lambda p: p.id)
    return Corpus(passages=tuple(passages), chunk_size=chunk_size)


def load_questions(path) -> list[Question]:
    """Load a question file (JSON lines with id, question, answers, gold_passage_ids)."""
    questions = []
    for lineno, rec in _iter_json_lines(path):
        try:
            qid = int(rec["id"])
            text = str(rec["question"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"missing or malformed field: {exc}", lineno) from exc
        answers = rec.get("answers", [])
        if not isinstance(answers, list):
            raise ParseError("answers must be an array of strings", lineno)
        if not answers:
            logger.warning("question %d (line %d) has no answers", qid, lineno)
        gold = tuple(int(g) for g in rec.get("gold_passage_ids", []))
        questions.append(
            Question(
                id=qid,
                tokens=tuple(text.split()),
                answers=tuple(str(a) for a in answers),
                gold_passage_ids=gold,
            )
        )
    return questions


def save_corpus(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in corpus.passages:
            fh.write(json.dumps({"id": p.id, "title": p.title, "text": p.text}) + "\n")


def save_questions(questions, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in questions:
            rec = {"id": q.id, "question": q.text, "answers": list(q.answers)}
            if q.gold_passage_ids:
                rec["gold_passage_ids"] = list(q.gold_passage_ids)
            fh.write(json.dumps(rec) + "\n")
