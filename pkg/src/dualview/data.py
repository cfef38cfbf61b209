"""Candidate-set datasets: file formats, synthetic generators, negative mining.

The canonical on-disk format is JSON Lines, one candidate set per line::

    {"query_id": "...", "query_embedding": [...],
     "candidates": [{"doc_id": "...", "embedding": [...], "label": 0}, ...]}

A packed binary cache (magic ``DVRK1``) holds the same fields for fast
loading; see :func:`write_binary_cache`.
"""

from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from dualview.errors import ConfigError, InputError, LoadError


@dataclass(frozen=True)
class Candidate:
    doc_id: str
    embedding: np.ndarray
    label: int


@dataclass
class CandidateSet:
    """One reranking instance. Embeddings are kept unnormalized."""

    query_id: str
    query_embedding: np.ndarray
    doc_ids: list[str]
    doc_embeddings: np.ndarray  # (n, D)
    labels: np.ndarray  # (n,) int8 in {0, 1}

    def __post_init__(self):
        self.query_embedding = np.asarray(self.query_embedding, dtype=np.float32)
        self.doc_embeddings = np.asarray(self.doc_embeddings, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        self.doc_ids = [str(d) for d in self.doc_ids]

    @classmethod
    def from_candidates(cls, query_id, query_embedding, candidates: Sequence[Candidate]):
        dim = np.asarray(query_embedding).shape[-1]
        embs = np.array([c.embedding for c in candidates], dtype=np.float32).reshape(-1, dim)
        return cls(query_id, query_embedding, [c.doc_id for c in candidates], embs,
                   [c.label for c in candidates])

    @property
    def n(self) -> int:
        return len(self.doc_ids)

    @property
    def embed_dim(self) -> int:
        return self.query_embedding.shape[-1]

    @property
    def candidates(self) -> list[Candidate]:
        return [Candidate(d, e, int(y))
                for d, e, y in zip(self.doc_ids, self.doc_embeddings, self.labels)]

    def doc_matrix(self) -> np.ndarray:
        return self.doc_embeddings

    def gold_indices(self) -> set[int]:
        return {int(i) for i in np.flatnonzero(self.labels)}

    def validate(self, embed_dim: int | None = None, max_candidates: int = 10,
                 require_gold: bool = False):
        dim = self.embed_dim if embed_dim is None else embed_dim
        if self.query_embedding.shape != (dim,):
            raise InputError(f"query embedding has width {self.query_embedding.shape[-1]}, "
                             f"expected {dim}")
        if not 1 <= self.n <= max_candidates:
            raise InputError(f"{self.n} candidates; expected between 1 and {max_candidates}")
        if self.doc_embeddings.shape != (self.n, dim):
            raise InputError(f"candidate embeddings have width {self.doc_embeddings.shape[-1]}, "
                             f"expected {dim}")
        if len(self.labels) != self.n or not np.isin(self.labels, (0, 1)).all():
            raise InputError("labels must be 0 or 1, one per candidate")
        if require_gold and not self.labels.any():
            raise InputError("training sets need at least one gold document")
        if not (np.isfinite(self.query_embedding).all() and np.isfinite(self.doc_embeddings).all()):
            raise InputError("embeddings contain non-finite values")

    def same_as(self, other: "CandidateSet") -> bool:
        return (
            self.query_id == other.query_id
            and self.doc_ids == other.doc_ids
            and np.array_equal(self.query_embedding, other.query_embedding)
            and np.array_equal(self.doc_embeddings, other.doc_embeddings)
            and np.array_equal(self.labels, other.labels)
        )


# ---------------------------------------------------------------------------
# JSONL


def _floats(arr: np.ndarray) -> str:
    # str() of a float32 is its shortest round-tripping repr
    return "[" + ", ".join(str(x) for x in np.asarray(arr, dtype=np.float32)) + "]"


def encode_record(cs: CandidateSet) -> str:
    cands = ", ".join(
        '{"doc_id": %s, "embedding": %s, "label": %d}' % (json.dumps(d), _floats(e), int(y))
        for d, e, y in zip(cs.doc_ids, cs.doc_embeddings, cs.labels)
    )
    return ('{"query_id": %s, "query_embedding": %s, "candidates": [%s]}'
            % (json.dumps(cs.query_id), _floats(cs.query_embedding), cands))


def write_dataset(path, sets: Iterable[CandidateSet]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for cs in sets:
            fh.write(encode_record(cs))
            fh.write("\n")


def _parse_record(obj, embed_dim, max_candidates, require_gold) -> CandidateSet:
    if not isinstance(obj, dict):
        raise InputError("record is not a JSON object")
    for key in ("query_id", "query_embedding", "candidates"):
        if key not in obj:
            raise InputError(f"missing field {key!r}")
    cands = obj["candidates"]
    if not isinstance(cands, list):
        raise InputError("'candidates' must be a list")
    for c in cands:
        if not isinstance(c, dict) or not {"doc_id", "embedding", "label"} <= set(c):
            raise InputError("candidate entries need doc_id, embedding and label")
        if c["label"] not in (0, 1) or isinstance(c["label"], bool):
            raise InputError(f"label {c['label']!r} outside {{0, 1}}")
    q = np.asarray(obj["query_embedding"], dtype=np.float32)
    if q.ndim != 1:
        raise InputError("query_embedding must be a flat list")
    dim = q.shape[0] if embed_dim is None else embed_dim
    for c in cands:
        width = np.asarray(c["embedding"]).shape
        if width != (dim,):
            raise InputError(f"candidate {c['doc_id']!r} embedding has width "
                             f"{width[-1] if width else 0}, expected {dim}")
    docs = np.array([c["embedding"] for c in cands], dtype=np.float32).reshape(len(cands), dim)
    cs = CandidateSet(str(obj["query_id"]), q, [c["doc_id"] for c in cands], docs,
                      [c["label"] for c in cands])
    cs.validate(dim, max_candidates, require_gold)
    return cs


def load_dataset(path, embed_dim: int | None = None, max_candidates: int = 10,
                 require_gold: bool = False) -> Iterator[CandidateSet]:
    """Streams validated candidate sets from a JSONL file.

    When ``embed_dim`` is None the width of the first record is enforced on
    the rest. Errors carry the 1-based line number.
    """
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LoadError(f"malformed JSON: {exc.msg}", line=lineno) from None
            try:
                cs = _parse_record(obj, embed_dim, max_candidates, require_gold)
            except InputError as exc:
                raise LoadError(str(exc), line=lineno) from None
            if embed_dim is None:
                embed_dim = cs.embed_dim
            yield cs


def read_dataset(path, **kwargs) -> list[CandidateSet]:
    if Path(path).suffix == ".dvrk":
        return read_binary_cache(path)
    return list(load_dataset(path, **kwargs))


# ---------------------------------------------------------------------------
# binary cache

CACHE_MAGIC = b"DVRK1"
_U32 = struct.Struct("<I")


def write_binary_cache(path, sets: Sequence[CandidateSet]):
    """Packed little-endian cache.

    ``DVRK1``, u32 embed_dim, u32 n_records, then per record: u32 id length,
    id bytes, u32 n, f32[D] query, and per candidate u32 id length, id bytes,
    u8 label, f32[D] embedding.
    """
    sets = list(sets)
    dim = sets[0].embed_dim if sets else 0
    out = bytearray(CACHE_MAGIC)
    out += _U32.pack(dim) + _U32.pack(len(sets))
    for cs in sets:
        if cs.embed_dim != dim:
            raise InputError("all records in a cache must share embed_dim")
        qid = cs.query_id.encode("utf-8")
        out += _U32.pack(len(qid)) + qid + _U32.pack(cs.n)
        out += cs.query_embedding.astype("<f4").tobytes()
        for doc_id, emb, label in zip(cs.doc_ids, cs.doc_embeddings, cs.labels):
            did = doc_id.encode("utf-8")
            out += _U32.pack(len(did)) + did + bytes([int(label)])
            out += emb.astype("<f4").tobytes()
    Path(path).write_bytes(bytes(out))


def read_binary_cache(path) -> list[CandidateSet]:
    data = Path(path).read_bytes()
    if not data.startswith(CACHE_MAGIC):
        raise LoadError(f"{path} is not a DVRK1 cache")
    pos = len(CACHE_MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise LoadError(f"truncated cache {path}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    def u32():
        return _U32.unpack(take(4))[0]

    dim, count = u32(), u32()
    sets = []
    for _ in range(count):
        qid = take(u32()).decode("utf-8")
        n = u32()
        q = np.frombuffer(take(4 * dim), dtype="<f4").astype(np.float32)
        ids, embs, labels = [], [], []
        for _ in range(n):
            ids.append(take(u32()).decode("utf-8"))
            labels.append(take(1)[0])
            embs.append(np.frombuffer(take(4 * dim), dtype="<f4"))
        sets.append(CandidateSet(qid, q, ids, np.array(embs, dtype=np.float32).reshape(n, dim),
                                 labels))
    if pos != len(data):
        raise LoadError(f"{len(data) - pos} trailing bytes in {path}")
    return sets


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    """Desk-scale stand-in for the multi-hop benchmarks.

    ``planted_similarity``: golds are noisy copies of the query, negatives are
    uniform on the sphere.

    ``complementary_pair``: the query bisects two orthogonal directions u, v;
    the two golds are noisy u and noisy v. Distractors are noisy copies of the
    query (``distractor_sigma``, default ``noise_sigma``) plus ``n_random``
    uniform vectors. With a small ``distractor_sigma`` cosine ranks the copies
    above the golds; raising it to ~1 makes the copies' cosine match the
    golds', so only the pairing of the golds reveals them.

    Noise vectors are isotropic Gaussians with expected squared norm 1, so
    ``noise_sigma`` is a relative magnitude independent of ``embed_dim``.
    """

    mode: str = "planted_similarity"
    n_queries: int = 100
    n_candidates: int = 6
    embed_dim: int = 64
    noise_sigma: float = 0.3
    n_gold: int = 2
    seed: int = 42
    distractor_sigma: float | None = None
    n_random: int = 1

    def __post_init__(self):
        if self.mode not in ("planted_similarity", "complementary_pair"):
            raise ConfigError(f"unknown synthetic mode {self.mode!r}")
        if self.n_queries < 0 or self.n_candidates < 1 or self.embed_dim < 2:
            raise ConfigError("n_queries >= 0, n_candidates >= 1 and embed_dim >= 2 required")
        if not 0 <= self.n_gold <= self.n_candidates:
            raise ConfigError("n_gold must not exceed n_candidates")
        if self.noise_sigma < 0 or (self.distractor_sigma is not None and self.distractor_sigma < 0):
            raise ConfigError("noise levels must be non-negative")
        if self.mode == "complementary_pair":
            if self.n_gold != 2:
                raise ConfigError("complementary_pair requires n_gold = 2")
            if not 0 <= self.n_random <= self.n_candidates - 2:
                raise ConfigError("n_random must leave room for the two golds")


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _noise(rng, shape, dim):
    return rng.standard_normal(shape) / math.sqrt(dim)


def generate_synthetic(spec: SyntheticSpec) -> list[CandidateSet]:
    """Deterministic under ``spec.seed``; candidate order is shuffled per query."""
    rng = np.random.default_rng(spec.seed)
    d, n = spec.embed_dim, spec.n_candidates
    sets = []
    for qi in range(spec.n_queries):
        if spec.mode == "planted_similarity":
            q = _unit(rng.standard_normal(d))
            golds = _unit(q + spec.noise_sigma * _noise(rng, (spec.n_gold, d), d))
            negs = _unit(rng.standard_normal((n - spec.n_gold, d)))
        else:
            a, b = rng.standard_normal(d), rng.standard_normal(d)
            u = _unit(a)
            v = _unit(b - (b @ u) * u)
            q = _unit(u + v)
            golds = _unit(np.stack([u, v]) + spec.noise_sigma * _noise(rng, (2, d), d))
            sigma_d = spec.noise_sigma if spec.distractor_sigma is None else spec.distractor_sigma
            n_copies = n - 2 - spec.n_random
            copies = _unit(q + sigma_d * _noise(rng, (n_copies, d), d))
            randoms = _unit(rng.standard_normal((spec.n_random, d)))
            negs = np.concatenate([copies, randoms]).reshape(-1, d)
        docs = np.concatenate([golds, negs]).reshape(n, d)
        labels = np.array([1] * len(golds) + [0] * len(negs), dtype=np.int8)
        order = rng.permutation(n)
        qid = f"q{qi:05d}"
        sets.append(CandidateSet(qid, q, [f"{qid}-d{k}" for k in range(n)],
                                 docs[order], labels[order]))
    return sets


# ---------------------------------------------------------------------------
# hard negatives


@dataclass
class MinedNegatives:
    indices: np.ndarray  # (G, k) into the distractor pool
    similarities: np.ndarray  # (G, k), non-increasing along each row


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    return (a / np.where(na > 0, na, 1)) @ (b / np.where(nb > 0, nb, 1)).T


def mine_hard_negatives(gold_pool, distractor_pool, k: int) -> MinedNegatives:
    """Top-``k`` most cosine-similar distractors for every gold embedding.

    Ties are broken by pool index. Asking for more than the pool holds
    returns the whole pool with a warning.
    """
    gold_pool = np.atleast_2d(gold_pool)
    distractor_pool = np.atleast_2d(distractor_pool)
    if gold_pool.size == 0 or distractor_pool.size == 0:
        raise InputError("both pools must be non-empty")
    if k > len(distractor_pool):
        warnings.warn(f"k={k} exceeds pool size {len(distractor_pool)}; truncating",
                      stacklevel=2)
        k = len(distractor_pool)
    sims = cosine_matrix(gold_pool, distractor_pool)
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    return MinedNegatives(order, np.take_along_axis(sims, order, axis=1))


def build_candidate_set(query_id: str, query_embedding, golds: Sequence[tuple[str, np.ndarray]],
                        negatives: Sequence[tuple[str, np.ndarray]], target_n: int,
                        seed: int = 42) -> CandidateSet:
    """Golds plus the first ``target_n - len(golds)`` negatives, shuffled under ``seed``.

    ``negatives`` should already be ordered hardest-first (e.g. by mining).
    """
    need = target_n - len(golds)
    if need < 0 or need > len(negatives):
        raise InputError(f"cannot build {target_n} candidates from {len(golds)} golds and "
                         f"{len(negatives)} negatives")
    docs = [(d, e, 1) for d, e in golds] + [(d, e, 0) for d, e in negatives[:need]]
    order = np.random.default_rng(seed).permutation(target_n)
    docs = [docs[i] for i in order]
    dim = np.asarray(query_embedding).shape[-1]
    return CandidateSet(query_id, query_embedding, [d for d, _, _ in docs],
                        np.array([e for _, e, _ in docs], dtype=np.float32).reshape(-1, dim),
                        [y for _, _, y in docs])


def stratified_mix(sources: dict[str, Sequence], counts: dict[str, int] | None = None,
                   seed: int = 42) -> list:
    """Samples ``counts[name]`` items from each source and interleaves them.

    Items from each source are spread evenly through the output (source ``s``
    item ``i`` sits at fractional position ``(i + 0.5) / counts[s]``), so any
    prefix keeps roughly the mixing proportions.
    """
    rng = np.random.default_rng(seed)
    keyed = []
    for name in sorted(sources):
        items = sources[name]
        take = len(items) if counts is None else counts.get(name, 0)
        if take > len(items):
            raise ConfigError(f"source {name!r} has {len(items)} items, {take} requested")
        picked = rng.choice(len(items), size=take, replace=False) if take else []
        for i, idx in enumerate(sorted(int(p) for p in picked)):
            keyed.append(((i + 0.5) / take, name, items[idx]))
    keyed.sort(key=lambda t: (t[0], t[1]))
    return [item for _, _, item in keyed]
