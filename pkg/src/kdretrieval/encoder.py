"""Scorers: hashed bag-of-words features, the two-tower student, and one-tower teachers.

The student keeps two parameter-disjoint feed-forward towers (tanh hidden
layers, linear output) over hashed bag-of-words features; its score for a
(question, passage) pair is the inner product of the two embeddings. The
teachers score the pair jointly: either an RBF oracle over hidden latent
vectors, or a trainable MLP over concatenated features.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .corpus import Passage, Question
from .errors import FormatError, InvalidInputError, UnknownIdError
from .optim import AdamW

CHECKPOINT_MAGIC = b"RDCK"
READER_MAGIC = b"RDJM"
TEACHER_MAGIC = b"RDTX"
CHECKPOINT_VERSION = 1


class FeatureExtractor:
    """Deterministic hashed bag-of-words into a fixed input dimension.

    Each token is hashed (crc32) to a bucket; a second hash picks a sign to
    reduce collision bias. Vectors are L2-normalized by default. An explicit
    ``vocabulary`` (token -> index) overrides hashing for known tokens.
    """

    def __init__(self, d_in: int = 512, vocabulary: dict[str, int] | None = None,
                 signed: bool = True, normalize: bool = True):
        if d_in < 1:
            raise InvalidInputError("d_in must be positive")
        self.d_in = d_in
        self.vocabulary = vocabulary
        self.signed = signed
        self.normalize = normalize

    def features(self, tokens) -> np.ndarray:
        x = np.zeros(self.d_in)
        for t in tokens:
            data = t.encode("utf-8")
            if self.vocabulary is not None and t in self.vocabulary:
                idx = self.vocabulary[t] % self.d_in
            else:
                idx = zlib.crc32(data) % self.d_in
            sign = 1.0
            if self.signed and zlib.crc32(b"#" + data) & 1:
                sign = -1.0
            x[idx] += sign
        if self.normalize:
            norm = np.linalg.norm(x)
            if norm > 0:
                x /= norm
        return x


def _init_affine(rng: np.random.Generator, fan_in: int, fan_out: int):
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
    b = rng.uniform(-bound, bound, size=fan_out)
    return w, b


class Tower:
    """Feed-forward map: tanh after every affine layer except the last."""

    def __init__(self, layer_sizes: list[int], rng: np.random.Generator | None = None):
        if len(layer_sizes) < 2:
            raise InvalidInputError("a tower needs at least one affine layer")
        self.layer_sizes = list(layer_sizes)
        self.params: dict[str, np.ndarray] = {}
        rng = rng if rng is not None else np.random.default_rng(0)
        for i, (fi, fo) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
            w, b = _init_affine(rng, fi, fo)
            self.params[f"W{i}"] = w
            self.params[f"b{i}"] = b

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    def forward(self, x: np.ndarray):
        """Returns (output, cache) where cache holds per-layer activations."""
        activations = [x]
        h = x
        for i in range(self.n_layers):
            h = self.params[f"W{i}"] @ h + self.params[f"b{i}"]
            if i < self.n_layers - 1:
                h = np.tanh(h)
            activations.append(h)
        return h, activations

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, activations, d_out: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients given the gradient of the loss w.r.t. the output."""
        grads = {}
        delta = d_out
        for i in reversed(range(self.n_layers)):
            a_in = activations[i]
            grads[f"W{i}"] = np.outer(delta, a_in)
            grads[f"b{i}"] = delta.copy()
            if i > 0:
                delta = self.params[f"W{i}"].T @ delta
                delta = delta * (1.0 - activations[i] ** 2)  # a_in is post-tanh
        return grads

    def copy(self) -> "Tower":
        t = Tower.__new__(Tower)
        t.layer_sizes = list(self.layer_sizes)
        t.params = {k: v.copy() for k, v in self.params.items()}
        return t


class TwoTowerStudent:
    """Two parameter-disjoint towers mapping questions and passages to d_emb."""

    def __init__(self, d_in: int = 512, hidden: int = 128, d_emb: int = 32,
                 seed: int = 0, extractor: FeatureExtractor | None = None):
        rng = np.random.default_rng(seed)
        self.extractor = extractor if extractor is not None else FeatureExtractor(d_in)
        self.d_emb = d_emb
        self.question_tower = Tower([self.extractor.d_in, hidden, d_emb], rng)
        self.passage_tower = Tower([self.extractor.d_in, hidden, d_emb], rng)

    @property
    def params(self) -> dict[str, np.ndarray]:
        out = {f"q.{k}": v for k, v in self.question_tower.params.items()}
        out.update({f"p.{k}": v for k, v in self.passage_tower.params.items()})
        return out

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        for k, v in params.items():
            prefix, name = k.split(".", 1)
            tower = self.question_tower if prefix == "q" else self.passage_tower
            tower.params[name][...] = v

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def embed_question(self, q: Question) -> np.ndarray:
        return self.question_tower(self.extractor.features(q.tokens))

    def embed_passage(self, d: Passage) -> np.ndarray:
        return self.passage_tower(self.extractor.features(d.tokens))

    def embed_passages(self, passages) -> np.ndarray:
        return np.stack([self.embed_passage(p) for p in passages])

    def score(self, q: Question, d: Passage) -> float:
        return float(self.embed_question(q) @ self.embed_passage(d))

    def copy(self) -> "TwoTowerStudent":
        s = TwoTowerStudent.__new__(TwoTowerStudent)
        s.extractor = self.extractor
        s.d_emb = self.d_emb
        s.question_tower = self.question_tower.copy()
        s.passage_tower = self.passage_tower.copy()
        return s


def student_score(student: TwoTowerStudent, q: Question, d: Passage) -> float:
    return student.score(q, d)


class RbfOracle:
    """Perfect one-tower teacher over hidden latent vectors.

    Score is exp(-gamma * ||u_q - v_d||^2); symmetric in the pair, positive,
    and at most 1.
    """

    def __init__(self, passage_latents: np.ndarray, question_latents: dict[int, np.ndarray],
                 gamma: float = 1.0):
        self.passage_latents = np.asarray(passage_latents, dtype=np.float64)
        self.question_latents = {int(k): np.asarray(v, dtype=np.float64)
                                 for k, v in question_latents.items()}
        self.gamma = float(gamma)

    def _question_latent(self, q: Question) -> np.ndarray:
        try:
            return self.question_latents[q.id]
        except KeyError:
            raise UnknownIdError(f"no latent for question id {q.id}") from None

    def score(self, q: Question, d: Passage) -> float:
        u = self._question_latent(q)
        if d.id < 0 or d.id >= len(self.passage_latents):
            raise UnknownIdError(f"no latent for passage id {d.id}")
        diff = u - self.passage_latents[d.id]
        return float(np.exp(-self.gamma * diff @ diff))

    def score_many(self, q: Question, passages) -> np.ndarray:
        u = self._question_latent(q)
        ids = np.array([p.id for p in passages])
        if ids.min(initial=0) < 0 or ids.max(initial=0) >= len(self.passage_latents):
            raise UnknownIdError("passage id out of range for oracle latents")
        diff = self.passage_latents[ids] - u
        return np.exp(-self.gamma * np.einsum("ij,ij->i", diff, diff))

    def score_all(self, q: Question) -> np.ndarray:
        u = self._question_latent(q)
        diff = self.passage_latents - u
        return np.exp(-self.gamma * np.einsum("ij,ij->i", diff, diff))


class JointMlp:
    """Trainable one-tower teacher over concatenated question/passage features."""

    def __init__(self, d_in: int = 512, hidden: int = 64, seed: int = 0,
                 extractor: FeatureExtractor | None = None):
        self.extractor = extractor if extractor is not None else FeatureExtractor(d_in)
        rng = np.random.default_rng(seed)
        self.tower = Tower([2 * self.extractor.d_in, hidden, 1], rng)

    def _pair_features(self, q: Question, d: Passage) -> np.ndarray:
        return np.concatenate([self.extractor.features(q.tokens),
                               self.extractor.features(d.tokens)])

    def score(self, q: Question, d: Passage) -> float:
        return float(self.tower(self._pair_features(q, d))[0])

    def score_many(self, q: Question, passages) -> np.ndarray:
        qf = self.extractor.features(q.tokens)
        return np.array([float(self.tower(np.concatenate([qf, self.extractor.features(p.tokens)]))[0])
                         for p in passages])

    def copy(self) -> "JointMlp":
        m = JointMlp.__new__(JointMlp)
        m.extractor = self.extractor
        m.tower = self.tower.copy()
        return m


def reader_rank_loss_and_grads(reader: JointMlp, q: Question, positive: Passage,
                               negatives) -> tuple[float, dict[str, np.ndarray]]:
    """Softmax cross-entropy of the positive among {positive} + negatives."""
    if not negatives:
        raise InvalidInputError("at least one negative passage required")
    candidates = [positive] + list(negatives)
    qf = reader.extractor.features(q.tokens)
    feats = [np.concatenate([qf, reader.extractor.features(p.tokens)]) for p in candidates]
    caches = []
    z = np.empty(len(candidates))
    for i, x in enumerate(feats):
        out, cache = reader.tower.forward(x)
        z[i] = out[0]
        caches.append(cache)
    zs = z - z.max()
    probs = np.exp(zs)
    probs /= probs.sum()
    loss = -float(np.log(probs[0]))
    dz = probs.copy()
    dz[0] -= 1.0
    grads = {k: np.zeros_like(v) for k, v in reader.tower.params.items()}
    for i, cache in enumerate(caches):
        gi = reader.tower.backward(cache, np.array([dz[i]]))
        for k in grads:
            grads[k] += gi[k]
    return loss, grads


def train_joint_reader(reader: JointMlp, batches, config: TrainConfig,
                       log=None) -> JointMlp:
    """Train the one-tower reader to rank positives above negatives.

    ``batches`` is a list of (Question, positive Passage, list of negative
    Passage) items. Deterministic under a fixed config seed.
    """
    opt = AdamW(reader.tower.params, learning_rate=config.learning_rate,
                betas=config.betas, weight_decay=config.weight_decay,
                warmup_steps=config.warmup_steps)
    rng = np.random.default_rng(config.seed)
    items = list(batches)
    step = 0
    for _epoch in range(config.epochs):
        order = rng.permutation(len(items))
        for idx in order:
            q, pos, negs = items[idx]
            loss, grads = reader_rank_loss_and_grads(reader, q, pos, negs)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite reader loss at step {step}")
            opt.step(grads)
            if log is not None:
                log(f"reader_step step={step} loss={loss:.6f} lr={opt.current_lr:.3e}")
            step += 1
    return reader


# --- binary checkpoints -----------------------------------------------------
# Header: magic(4) version(u16) flags(u8) d_in(u32) d_emb(u32), then per tower
# a layer count (u16) and layer sizes (u32 each), then all parameters as
# little-endian float64 in layer order (W then b).

def _write_tower(fh, tower: Tower) -> None:
    fh.write(struct.pack("<H", len(tower.layer_sizes)))
    for s in tower.layer_sizes:
        fh.write(struct.pack("<I", s))
    for i in range(tower.n_layers):
        fh.write(np.ascontiguousarray(tower.params[f"W{i}"], dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(tower.params[f"b{i}"], dtype="<f8").tobytes())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError("truncated checkpoint file")
    return data


def _read_tower(fh) -> Tower:
    (n_sizes,) = struct.unpack("<H", _read_exact(fh, 2))
    sizes = [struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(n_sizes)]
    tower = Tower(sizes, np.random.default_rng(0))
    for i, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = np.frombuffer(_read_exact(fh, 8 * fi * fo), dtype="<f8").reshape(fo, fi)
        b = np.frombuffer(_read_exact(fh, 8 * fo), dtype="<f8")
        tower.params[f"W{i}"] = w.astype(np.float64)
        tower.params[f"b{i}"] = b.astype(np.float64)
    return tower


def _extractor_flags(extractor: FeatureExtractor) -> int:
    return (1 if extractor.signed else 0) | (2 if extractor.normalize else 0)


def _extractor_from_flags(d_in: int, flags: int) -> FeatureExtractor:
    return FeatureExtractor(d_in, signed=bool(flags & 1), normalize=bool(flags & 2))


def save_student(student: TwoTowerStudent, path) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<HBII", CHECKPOINT_VERSION,
                             _extractor_flags(student.extractor),
                             student.extractor.d_in, student.d_emb))
        _write_tower(fh, student.question_tower)
        _write_tower(fh, student.passage_tower)


def load_student(path) -> TwoTowerStudent:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r}")
        version, flags, d_in, d_emb = struct.unpack("<HBII", _read_exact(fh, 11))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        student = TwoTowerStudent.__new__(TwoTowerStudent)
        student.extractor = _extractor_from_flags(d_in, flags)
        student.d_emb = d_emb
        student.question_tower = _read_tower(fh)
        student.passage_tower = _read_tower(fh)
        if fh.read(1):
            raise FormatError("trailing bytes in checkpoint file")
        return student


def save_reader(reader: JointMlp, path) -> None:
    with open(path, "wb") as fh:
        fh.write(READER_MAGIC)
        fh.write(struct.pack("<HBII", CHECKPOINT_VERSION,
                             _extractor_flags(reader.extractor),
                             reader.extractor.d_in, 1))
        _write_tower(fh, reader.tower)


def load_reader(path) -> JointMlp:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != READER_MAGIC:
            raise FormatError(f"bad reader magic {magic!r}")
        version, flags, d_in, _ = struct.unpack("<HBII", _read_exact(fh, 11))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        reader = JointMlp.__new__(JointMlp)
        reader.extractor = _extractor_from_flags(d_in, flags)
        reader.tower = _read_tower(fh)
        if fh.read(1):
            raise FormatError("trailing bytes in reader file")
        return reader


def save_rbf_oracle(oracle: RbfOracle, path) -> None:
    with open(path, "wb") as fh:
        fh.write(TEACHER_MAGIC)
        n, dim = oracle.passage_latents.shape
        fh.write(struct.pack("<HdIQ", CHECKPOINT_VERSION, oracle.gamma, dim, n))
        fh.write(np.ascontiguousarray(oracle.passage_latents, dtype="<f8").tobytes())
        qids = sorted(oracle.question_latents)
        fh.write(struct.pack("<Q", len(qids)))
        for qid in qids:
            fh.write(struct.pack("<q", qid))
            fh.write(np.ascontiguousarray(oracle.question_latents[qid], dtype="<f8").tobytes())


def load_rbf_oracle(path) -> RbfOracle:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != TEACHER_MAGIC:
            raise FormatError(f"bad teacher magic {magic!r}")
        version, gamma, dim, n = struct.unpack("<HdIQ", _read_exact(fh, 22))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported teacher version {version}")
        latents = np.frombuffer(_read_exact(fh, 8 * n * dim), dtype="<f8").reshape(n, dim)
        (nq,) = struct.unpack("<Q", _read_exact(fh, 8))
        qlat = {}
        for _ in range(nq):
            (qid,) = struct.unpack("<q", _read_exact(fh, 8))
            qlat[qid] = np.frombuffer(_read_exact(fh, 8 * dim), dtype="<f8").copy()
        if fh.read(1):
            raise FormatError("trailing bytes in teacher file")
        return RbfOracle(latents.astype(np.float64), qlat, gamma)
