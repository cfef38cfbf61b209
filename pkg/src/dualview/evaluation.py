"""Ranking metrics at K, similarity/MLP baselines and evaluation runners."""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from dualview.errors import InputError
from dualview.nn.layers import MLP, Module
from dualview.nn.checkpoint import read_checkpoint, write_checkpoint

METRICS = ("recall_at_k", "full_hit_at_k", "ndcg_at_k", "mrr_at_k", "precision_at_k")


def _check(ranking, gold):
    if not gold:
        raise InputError("gold set is empty")


def recall_at_k(ranking: Sequence[int], gold: set, k: int = 4) -> float:
    _check(ranking, gold)
    return len(gold.intersection(ranking[:k])) / len(gold)


def full_hit_at_k(ranking: Sequence[int], gold: set, k: int = 4) -> float:
    """1.0 iff every gold item is in the top ``k`` (never when ``|gold| > k``)."""
    _check(ranking, gold)
    return float(gold.issubset(ranking[:k]))


def ndcg_at_k(ranking: Sequence[int], gold: set, k: int = 4) -> float:
    _check(ranking, gold)
    dcg = math.fsum(1.0 / math.log2(r + 2) for r, doc in enumerate(ranking[:k]) if doc in gold)
    idcg = math.fsum(1.0 / math.log2(r + 2) for r in range(min(len(gold), k)))
    return dcg / idcg


def mrr_at_k(ranking: Sequence[int], gold: set, k: int = 4) -> float:
    _check(ranking, gold)
    for r, doc in enumerate(ranking[:k], start=1):
        if doc in gold:
            return 1.0 / r
    return 0.0


def precision_at_k(ranking: Sequence[int], gold: set, k: int = 4) -> float:
    _check(ranking, gold)
    return len(gold.intersection(ranking[:k])) / k


_METRIC_FNS = {
    "recall_at_k": recall_at_k,
    "full_hit_at_k": full_hit_at_k,
    "ndcg_at_k": ndcg_at_k,
    "mrr_at_k": mrr_at_k,
    "precision_at_k": precision_at_k,
}


def query_metrics(ranking, gold, k=4) -> dict[str, float]:
    return {name: fn(ranking, gold, k) for name, fn in _METRIC_FNS.items()}


def config_fingerprint(obj) -> str:
    """Short stable hash of a JSON-serializable config description."""
    blob = json.dumps(obj, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class MetricsReport:
    recall_at_k: float
    full_hit_at_k: float
    ndcg_at_k: float
    mrr_at_k: float
    precision_at_k: float
    k: int = 4
    n_queries: int = 0
    n_skipped: int = 0
    n_gold_exceeds_k: int = 0
    label: str = ""
    fingerprint: str = ""

    def as_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)

    def row(self) -> list[float]:
        return [getattr(self, m) for m in METRICS]


def format_table(reports: Sequence[MetricsReport], title: str = "") -> str:
    """Aligned text table with values in percent."""
    k = reports[0].k if reports else 4
    headers = ["Configuration", f"R@{k}", f"FH@{k}", f"N@{k}", f"M@{k}", f"P@{k}"]
    rows = [[r.label or "-"] + [f"{100 * v:.1f}" for v in r.row()] for r in reports]
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    lines = [title] if title else []
    fmt = lambda cells: "  ".join(
        c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))
    lines.append(fmt(headers))
    lines.append("  ".join("-" * w for w in widths))
    lines.extend(fmt(row) for row in rows)
    return "\n".join(lines)


def _as_ranker(ranker) -> Callable:
    if hasattr(ranker, "rank"):
        return ranker.rank
    if callable(ranker):
        return ranker
    raise TypeError(f"{ranker!r} is neither callable nor has a rank() method")


def evaluate(ranker, dataset: Iterable, k: int = 4, label: str = "",
             fingerprint: str = "") -> MetricsReport:
    """Macro-averaged metrics over the dataset.

    ``ranker`` is a callable ``CandidateSet -> ranking`` or any object with a
    ``rank`` method. Queries without gold documents are skipped and counted.
    """
    rank = _as_ranker(ranker)
    per_metric = {m: [] for m in METRICS}
    skipped = exceeding = 0
    for cs in dataset:
        gold = cs.gold_indices()
        if not gold:
            skipped += 1
            continue
        if len(gold) > k:
            exceeding += 1
        for name, value in query_metrics(rank(cs), gold, k).items():
            per_metric[name].append(value)
    n = len(per_metric["recall_at_k"])
    if skipped:
        warnings.warn(f"skipped {skipped} queries without gold documents", stacklevel=2)
    if n == 0:
        raise InputError("no evaluable queries (all skipped or dataset empty)")
    means = {name: math.fsum(vals) / n for name, vals in per_metric.items()}
    return MetricsReport(**means, k=k, n_queries=n, n_skipped=skipped,
                         n_gold_exceeds_k=exceeding, label=label, fingerprint=fingerprint)


# ---------------------------------------------------------------------------
# baselines


def cosine_scores(query, docs) -> np.ndarray:
    """Cosine similarity per document; zero-norm vectors score -1."""
    query = np.asarray(query, dtype=np.float64)
    docs = np.asarray(docs, dtype=np.float64)
    qn = np.linalg.norm(query)
    dn = np.linalg.norm(docs, axis=-1)
    bad = (dn == 0) | (qn == 0)
    if bad.any():
        warnings.warn("zero-norm embedding scored as similarity -1", stacklevel=2)
    sims = (docs @ query) / np.where(bad, 1.0, dn * (qn if qn else 1.0))
    return np.where(bad, -1.0, sims)


class CosineBaseline:
    """Ranks by cosine similarity between query and document embeddings."""

    name = "cosine"

    def rank(self, cs) -> list[int]:
        sims = cosine_scores(cs.query_embedding, cs.doc_embeddings)
        return [int(i) for i in np.argsort(-sims, kind="stable")]

    def __call__(self, cs):
        return self.rank(cs)


class MLPBaseline(Module):
    """Per-document MLP on ``[q; c; q*c]``; trainable with the same losses.

    Exposes the same ``forward``/``backward`` contract as the dual-view model,
    with ``s_fused`` equal to the MLP score.
    """

    name = "mlp"

    def __init__(self, embed_dim: int = 768, hidden: int = 256, seed: int = 0,
                 dtype=np.float32, max_candidates: int = 10):
        self.embed_dim = embed_dim
        self.hidden = hidden
        self.max_candidates = max_candidates
        self.dtype = np.dtype(dtype)
        self.mlp = MLP(3 * embed_dim, hidden, np.random.default_rng(seed), dtype)

    def forward(self, query, docs):
        query = np.asarray(query, dtype=self.dtype)
        docs = np.asarray(docs, dtype=self.dtype)
        if docs.ndim == 2:
            query, docs = query[None], docs[None]
        if docs.shape[-2] == 0:
            raise InputError("candidate list is empty")
        q = np.broadcast_to(query[..., None, :], docs.shape)
        s, cache = self.mlp.forward(np.concatenate([q, docs, q * docs], axis=-1))
        s = s[..., 0]
        return _MLPOutput(s), cache

    def backward(self, cache, d_scores):
        self.mlp.backward(cache, np.asarray(d_scores, dtype=self.dtype)[..., None])

    def rank(self, cs) -> list[int]:
        scores = self.forward(cs.query_embedding, cs.doc_embeddings)[0].s_fused[0]
        return [int(i) for i in np.argsort(-scores.astype(np.float64), kind="stable")]

    def save(self, path):
        header = {"kind": "mlp", "embed_dim": str(self.embed_dim), "hidden": str(self.hidden)}
        write_checkpoint(path, header, {n: p.value for n, p in self.parameters().items()})

    @classmethod
    def load(cls, path) -> "MLPBaseline":
        header, arrays = read_checkpoint(path)
        model = cls(int(header["embed_dim"]), int(header["hidden"]))
        params = model.parameters()
        model.load_state_dict({n: arrays[n].reshape(p.shape) for n, p in params.items()})
        return model


@dataclass
class _MLPOutput:
    s_fused: np.ndarray


def run_ablation_grid(models: dict, dataset, k: int = 4) -> list[MetricsReport]:
    """One report per named ranker, all on the same dataset."""
    dataset = list(dataset)
    return [evaluate(ranker, dataset, k, label=name) for name, ranker in models.items()]
