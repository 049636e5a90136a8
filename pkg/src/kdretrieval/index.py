"""Maximum-inner-product search over passage embeddings.

Three variants share one search contract: an exact flat scan, a navigable
small-world graph over max-norm-augmented vectors (L2 order on the
augmented space equals inner-product order on the originals), and an
8-bit scalar-quantized flat scan. All variants serialize to a common
binary container (magic ``RDRX``), and search ties are broken by smaller
passage id.
"""
from __future__ import annotations

import struct
import time
from dataclasses import dataclass

import numpy as np

from . import _hnsw
from .errors import FormatError, InvalidInputError

INDEX_MAGIC = b"RDRX"
INDEX_VERSION = 1

_VARIANT_FLAT = 0
_VARIANT_GRAPH = 1
_VARIANT_SQ8 = 2


@dataclass
class GraphParams:
    neighbors_per_node: int = 512
    construction_depth: int = 200
    search_depth: int = 128

    def __post_init__(self):
        if min(self.neighbors_per_node, self.construction_depth, self.search_depth) < 1:
            raise InvalidInputError("all graph parameters must be positive")


@dataclass
class SearchResult:
    ids: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


def _as_matrix(embeddings) -> np.ndarray:
    if isinstance(embeddings, np.ndarray):
        mat = np.asarray(embeddings, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] < 1:
            raise InvalidInputError("embeddings must be a non-empty 2-D array")
        return mat
    rows = [np.asarray(e, dtype=np.float64).ravel() for e in embeddings]
    if not rows:
        raise InvalidInputError("embeddings must be non-empty")
    d = rows[0].shape[0]
    if any(r.shape[0] != d for r in rows):
        raise InvalidInputError("all embeddings must have the same dimension")
    return np.stack(rows)


def _check_query(query, d_emb: int) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64).ravel()
    if q.shape[0] != d_emb:
        raise InvalidInputError(f"query dimension {q.shape[0]} != index dimension {d_emb}")
    return q


def _top_k_by_score(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores, ties broken by smaller index."""
    n = scores.shape[0]
    if k >= n:
        cand = np.arange(n)
    else:
        part = np.argpartition(-scores, k - 1)[:k]
        thresh = scores[part].min()
        cand = np.flatnonzero(scores >= thresh)
    order = np.lexsort((cand, -scores[cand]))
    return cand[order][:min(k, n)]


class FlatIPIndex:
    """Exact MIPS by full scan of raw vectors."""

    variant = "flat"

    def __init__(self, vectors: np.ndarray):
        self.vectors = vectors
        self.count, self.d_emb = vectors.shape

    def search(self, query, k: int) -> SearchResult:
        if k < 1:
            raise InvalidInputError("k must be >= 1")
        q = _check_query(query, self.d_emb)
        scores = self.vectors @ q
        ids = _top_k_by_score(scores, k)
        return SearchResult(ids=ids.astype(np.int64), scores=scores[ids])


class SQ8FlatIndex:
    """Flat scan over 8-bit scalar-quantized vectors.

    Per-dimension affine codes trained on the indexed vectors themselves;
    search scores are exact inner products with the reconstructions.
    """

    variant = "sq8"

    def __init__(self, codes: np.ndarray, vmin: np.ndarray, vmax: np.ndarray):
        self.codes = codes
        self.vmin = vmin
        self.vmax = vmax
        self.count, self.d_emb = codes.shape
        scale = (vmax - vmin) / 255.0
        self._reconstructed = vmin + codes.astype(np.float64) * scale

    @classmethod
    def from_vectors(cls, vectors: np.ndarray) -> "SQ8FlatIndex":
        vmin = vectors.min(axis=0)
        vmax = vectors.max(axis=0)
        span = vmax - vmin
        safe = np.where(span > 0, span, 1.0)
        codes = np.round(255.0 * (vectors - vmin) / safe).astype(np.uint8)
        codes[:, span == 0] = 0
        return cls(codes, vmin, vmax)

    def reconstruct(self, i: int) -> np.ndarray:
        return self._reconstructed[i]

    def search(self, query, k: int) -> SearchResult:
        if k < 1:
            raise InvalidInputError("k must be >= 1")
        q = _check_query(query, self.d_emb)
        scores = self._reconstructed @ q
        ids = _top_k_by_score(scores, k)
        return SearchResult(ids=ids.astype(np.int64), scores=scores[ids])


def _augment(vectors: np.ndarray, max_norm: float) -> np.ndarray:
    norms_sq = np.einsum("ij,ij->i", vectors, vectors)
    extra = np.sqrt(np.maximum(max_norm * max_norm - norms_sq, 0.0))
    return np.ascontiguousarray(np.column_stack([vectors, extra]))


class GraphIPIndex:
    """Navigable small-world layered graph under L2 over augmented vectors.

    Each stored vector x becomes [x ; sqrt(M^2 - |x|^2)] with M the largest
    norm at build time; queries are augmented with 0, so L2 order equals
    inner-product order. The max norm is frozen: the index must be rebuilt
    to admit vectors with larger norms.
    """

    variant = "graph"

    def __init__(self, vectors: np.ndarray, params: GraphParams, _defer_build: bool = False):
        self.vectors = vectors
        self.params = params
        self.count, self.d_emb = vectors.shape
        self.max_norm = float(np.sqrt(np.einsum("ij,ij->i", vectors, vectors).max()))
        self._aug = _augment(vectors, self.max_norm)
        self.node_level = np.zeros(self.count, dtype=np.int32)
        self.max_level = 0
        self.entry = 0
        self._neighbors: list[np.ndarray] = []
        self._counts: list[np.ndarray] = []
        self._nbr_dist: list[np.ndarray | None] = []
        self._visited = np.zeros(self.count, dtype=np.int64)
        self._stamp = 0
        if not _defer_build:
            self._build()

    def _alloc_level(self) -> None:
        m = self.params.neighbors_per_node
        self._neighbors.append(np.zeros((self.count, m), dtype=np.int64))
        self._counts.append(np.zeros(self.count, dtype=np.int64))
        self._nbr_dist.append(np.zeros((self.count, m), dtype=np.float64))

    def _build(self) -> None:
        m = self.params.neighbors_per_node
        ef_c = self.params.construction_depth
        rng = np.random.default_rng(0)
        mult = 1.0 / np.log(m) if m > 1 else 1.0
        levels = np.floor(-np.log(rng.random(self.count)) * mult).astype(np.int32)
        self.node_level = levels
        self.max_level = int(levels[0])
        self.entry = 0
        for _ in range(self.max_level + 1):
            self._alloc_level()
        for i in range(1, self.count):
            li = int(levels[i])
            ep = self.entry
            for lev in range(self.max_level, li, -1):
                ep, _ = _hnsw.greedy_descent(
                    self._aug, self._neighbors[lev], self._counts[lev], ep, self._aug[i]
                )
            for lev in range(min(li, self.max_level), -1, -1):
                self._stamp += 1
                dists, ids = _hnsw.search_layer(
                    self._aug, self._neighbors[lev], self._counts[lev],
                    ep, self._aug[i], ef_c, self._visited, self._stamp,
                )
                n_sel = min(m, len(ids))
                self._neighbors[lev][i, :n_sel] = ids[:n_sel]
                self._nbr_dist[lev][i, :n_sel] = dists[:n_sel]
                self._counts[lev][i] = n_sel
                for j in range(n_sel):
                    _hnsw.add_edge(
                        self._neighbors[lev], self._nbr_dist[lev], self._counts[lev],
                        ids[j], i, dists[j], m,
                    )
                ep = int(ids[0])
            if li > self.max_level:
                for _ in range(self.max_level, li):
                    self._alloc_level()
                self.max_level = li
                self.entry = i

    def search(self, query, k: int) -> SearchResult:
        if k < 1:
            raise InvalidInputError("k must be >= 1")
        q = _check_query(query, self.d_emb)
        if k >= self.count:
            scores = self.vectors @ q
            ids = _top_k_by_score(scores, k)
            return SearchResult(ids=ids.astype(np.int64), scores=scores[ids])
        q_aug = np.ascontiguousarray(np.append(q, 0.0))
        ep = self.entry
        for lev in range(self.max_level, 0, -1):
            ep, _ = _hnsw.greedy_descent(
                self._aug, self._neighbors[lev], self._counts[lev], ep, q_aug
            )
        self._stamp += 1
        ef = max(self.params.search_depth, k)
        _, ids = _hnsw.search_layer(
            self._aug, self._neighbors[0], self._counts[0],
            ep, q_aug, ef, self._visited, self._stamp,
        )
        scores = self.vectors[ids] @ q
        order = np.lexsort((ids, -scores))[:k]
        return SearchResult(ids=ids[order].astype(np.int64), scores=scores[order])


def build_flat(embeddings) -> FlatIPIndex:
    return FlatIPIndex(_as_matrix(embeddings))


def build_sq8(embeddings) -> SQ8FlatIndex:
    return SQ8FlatIndex.from_vectors(_as_matrix(embeddings))


def build_graph(embeddings, params: GraphParams | None = None) -> GraphIPIndex:
    return GraphIPIndex(_as_matrix(embeddings), params or GraphParams())


# --- serialization -----------------------------------------------------------

def _write_array(fh, arr: np.ndarray, dtype: str) -> None:
    fh.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError("truncated index file")
    return data


def _read_array(fh, dtype: str, shape) -> np.ndarray:
    count = int(np.prod(shape))
    itemsize = np.dtype(dtype).itemsize
    arr = np.frombuffer(_read_exact(fh, count * itemsize), dtype=dtype)
    return arr.reshape(shape).copy()


def serialize(index, path) -> None:
    variant = {"flat": _VARIANT_FLAT, "graph": _VARIANT_GRAPH, "sq8": _VARIANT_SQ8}[index.variant]
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(struct.pack("<HBIQ", INDEX_VERSION, variant, index.d_emb, index.count))
        if index.variant == "flat":
            _write_array(fh, index.vectors, "<f8")
        elif index.variant == "sq8":
            _write_array(fh, index.vmin, "<f8")
            _write_array(fh, index.vmax, "<f8")
            _write_array(fh, index.codes, "u1")
        else:
            p = index.params
            fh.write(struct.pack("<IIIHQd", p.neighbors_per_node, p.construction_depth,
                                 p.search_depth, index.max_level, index.entry,
                                 index.max_norm))
            _write_array(fh, index.vectors, "<f8")
            _write_array(fh, index.node_level, "<i4")
            for lev in range(index.max_level + 1):
                _write_array(fh, index._counts[lev], "<i8")
                _write_array(fh, index._neighbors[lev], "<i8")


def deserialize(path):
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != INDEX_MAGIC:
            raise FormatError(f"bad index magic {magic!r}")
        version, variant, d_emb, count = struct.unpack("<HBIQ", _read_exact(fh, 15))
        if version != INDEX_VERSION:
            raise FormatError(f"unsupported index version {version}")
        if variant == _VARIANT_FLAT:
            vectors = _read_array(fh, "<f8", (count, d_emb))
            idx = FlatIPIndex(vectors)
        elif variant == _VARIANT_SQ8:
            vmin = _read_array(fh, "<f8", (d_emb,))
            vmax = _read_array(fh, "<f8", (d_emb,))
            codes = _read_array(fh, "u1", (count, d_emb))
            idx = SQ8FlatIndex(codes, vmin, vmax)
        elif variant == _VARIANT_GRAPH:
            m, ef_c, ef_s, max_level, entry, max_norm = struct.unpack(
                "<IIIHQd", _read_exact(fh, 30)
            )
            params = GraphParams(m, ef_c, ef_s)
            vectors = _read_array(fh, "<f8", (count, d_emb))
            idx = GraphIPIndex(vectors, params, _defer_build=True)
            idx.max_norm = max_norm
            idx._aug = _augment(vectors, max_norm)
            idx.node_level = _read_array(fh, "<i4", (count,))
            idx.max_level = max_level
            idx.entry = entry
            for _ in range(max_level + 1):
                counts = _read_array(fh, "<i8", (count,))
                neighbors = _read_array(fh, "<i8", (count, m))
                idx._counts.append(counts)
                idx._neighbors.append(neighbors)
                idx._nbr_dist.append(None)
        else:
            raise FormatError(f"unknown index variant {variant}")
        if fh.read(1):
            raise FormatError("trailing bytes in index file")
        return idx


def bench_search(index, queries, k_values, flat_reference=None) -> list[dict]:
    """Mean per-query wall-clock (ms) per k, plus recall vs a flat reference."""
    queries = [np.asarray(q, dtype=np.float64) for q in queries]
    if not queries:
        raise InvalidInputError("need at least one query")
    rows = []
    for k in k_values:
        start = time.perf_counter()
        results = [index.search(q, k) for q in queries]
        elapsed = time.perf_counter() - start
        row = {"k": k, "mean_ms": 1000.0 * elapsed / len(queries), "recall_vs_flat": None}
        if flat_reference is not None:
            hits = 0
            total = 0
            for q, res in zip(queries, results):
                ref = flat_reference.search(q, k)
                hits += len(set(res.ids.tolist()) & set(ref.ids.tolist()))
                total += len(ref.ids)
            row["recall_vs_flat"] = hits / total if total else 1.0
        rows.append(row)
    return rows


def format_bench_table(rows, variant: str) -> str:
    lines = [f"{'variant':<10}{'k':>6}{'mean_ms':>12}{'recall_vs_flat':>16}"]
    for row in rows:
        rec = f"{row['recall_vs_flat']:.4f}" if row["recall_vs_flat"] is not None else "-"
        lines.append(f"{variant:<10}{row['k']:>6}{row['mean_ms']:>12.4f}{rec:>16}")
    return "\n".join(lines) + "\n"
