"""Dual-view reranker: local scorer, global scorer and adaptive gate.

Shapes used throughout (``B`` queries, ``n`` candidates, ``D`` embed dim,
``G`` global dim)::

    query  (B, D)         docs  (B, n, D)
    local features f      (B, n, 3D + 1) = [q_r ; c_r ; q_r * c_r ; a]
    global features g     (B, n, G)
    scores                (B, n)
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from dualview.errors import CapacityError, ConfigError, InputError, StateError
from dualview.nn.checkpoint import read_checkpoint, write_checkpoint
from dualview.nn.layers import MLP, AttentionBlock, Linear, Module, Parameter, sigmoid

Ablation = Literal["full", "avg_fusion", "no_global", "no_local"]
ABLATIONS: tuple[str, ...] = ("full", "avg_fusion", "no_global", "no_local")

# fixed gate weight used by each ablation; None means the learned gate
_FIXED_GATE = {"full": None, "avg_fusion": 0.5, "no_global": 1.0, "no_local": 0.0}


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 768
    local_layers: int = 2
    local_heads: int = 12
    global_dim: int = 512
    global_layers: int = 2
    global_heads: int = 8
    max_candidates: int = 10
    local_mlp_hidden: int = 512
    global_mlp_hidden: int = 256
    gate_hidden: int = 128
    ablation: str = "full"

    def __post_init__(self):
        if self.embed_dim < 1 or self.local_heads < 1 or self.embed_dim % self.local_heads:
            raise ConfigError(
                f"embed_dim {self.embed_dim} must equal local_heads x head_dim "
                f"(local_heads={self.local_heads})"
            )
        if self.global_heads < 1 or self.global_dim % self.global_heads:
            raise ConfigError(
                f"global_dim {self.global_dim} not divisible by global_heads {self.global_heads}"
            )
        if self.max_candidates < 1:
            raise ConfigError("max_candidates must be >= 1")
        if self.local_layers < 1 or self.global_layers < 1:
            raise ConfigError("layer counts must be >= 1")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.local_heads

    @property
    def local_feature_dim(self) -> int:
        return 3 * self.embed_dim + 1

    @property
    def gate_doc_dim(self) -> int:
        return self.local_feature_dim + 2

    @property
    def gate_feature_dim(self) -> int:
        return self.gate_doc_dim + self.global_dim

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_header(self) -> dict[str, str]:
        return {f.name: str(getattr(self, f.name)) for f in dataclasses.fields(self)}

    @classmethod
    def from_header(cls, header: dict[str, str]) -> "ModelConfig":
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name in header:
                raw = header[f.name]
                kwargs[f.name] = raw if f.type in ("str", str) else int(raw)
        return cls(**kwargs)


@dataclass
class ScoreOutput:
    """Raw batched scorer outputs (leading axes ``(B, n)``)."""

    s_local: np.ndarray
    s_global: np.ndarray
    gate: np.ndarray
    s_fused: np.ndarray
    local_features: np.ndarray
    global_features: np.ndarray


@dataclass
class ScoredCandidates:
    """Per-document scores for a single candidate set plus its ranking."""

    s_local: np.ndarray
    s_global: np.ndarray
    gate: np.ndarray
    s_fused: np.ndarray
    local_features: np.ndarray
    global_features: np.ndarray
    ranking: list[int] = field(default_factory=list)

    def __len__(self):
        return len(self.s_fused)


def rank_by_score(scores) -> list[int]:
    """Indices sorted by descending score; ties keep the lower index first."""
    scores = np.asarray(scores, dtype=np.float64)
    return [int(i) for i in np.argsort(-scores, kind="stable")]


def _cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    denom = na * nb
    dot = (a * b).sum(axis=-1)
    return np.where(denom > 0, dot / np.where(denom > 0, denom, 1), 0).astype(a.dtype)


class LocalScorer(Module):
    """Stacked self-attention over the two-token sequence ``[q; c]``."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.layers = [
            AttentionBlock(cfg.embed_dim, cfg.local_heads, rng, dtype)
            for _ in range(cfg.local_layers)
        ]
        self.mlp = MLP(cfg.local_feature_dim, cfg.local_mlp_hidden, rng, dtype)

    def features(self, query, docs, passthrough=False):
        """Builds local features; returns ``(f, cache)``."""
        q = np.broadcast_to(query[..., None, :], docs.shape)
        if passthrough:
            a = (_cosine(q, docs) + 1) / 2
            f = np.concatenate([q, docs, q * docs, a[..., None]], axis=-1)
            return f, None
        x = np.stack([q, docs], axis=-2)  # (B, n, 2, D)
        caches = []
        weights = None
        for layer in self.layers:
            (x, weights), c = layer.forward(x)
            caches.append(c)
        qr, cr = x[..., 0, :], x[..., 1, :]
        # weight from the query token (row 0) onto the document token (col 1)
        a = weights[..., :, 0, 1].mean(axis=-1)
        f = np.concatenate([qr, cr, qr * cr, a[..., None]], axis=-1)
        return f, (caches, qr, cr, weights.shape)

    def features_backward(self, cache, df):
        if cache is None:  # passthrough features carry no parameters
            return
        caches, qr, cr, wshape = cache
        d = self.cfg.embed_dim
        dqr = df[..., :d] + df[..., 2 * d:3 * d] * cr
        dcr = df[..., d:2 * d] + df[..., 2 * d:3 * d] * qr
        dx = np.stack([dqr, dcr], axis=-2)
        dweights = np.zeros(wshape, dtype=df.dtype)
        dweights[..., :, 0, 1] = df[..., -1:] / self.cfg.local_heads
        for i in range(len(self.layers) - 1, -1, -1):
            dx = self.layers[i].backward(caches[i], dx, dweights if i == len(self.layers) - 1 else None)


class GlobalScorer(Module):
    """Set-level attention over ``[q_proj; h_1 + p_1; ...; h_n + p_n]``."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.feature_proj = Linear(cfg.local_feature_dim, cfg.global_dim, rng, dtype)
        self.positions = Parameter(
            rng.normal(0.0, 0.02, size=(cfg.max_candidates, cfg.global_dim)).astype(dtype)
        )
        self.query_proj = Linear(cfg.embed_dim, cfg.global_dim, rng, dtype)
        self.layers = [
            AttentionBlock(cfg.global_dim, cfg.global_heads, rng, dtype)
            for _ in range(cfg.global_layers)
        ]
        self.mlp = MLP(cfg.global_dim, cfg.global_mlp_hidden, rng, dtype)

    def forward(self, query, f):
        n = f.shape[-2]
        if n > self.cfg.max_candidates:
            raise CapacityError(
                f"{n} candidates exceed the positional table size {self.cfg.max_candidates}"
            )
        h, c_proj = self.feature_proj.forward(f)
        h = h + self.positions.value[:n]
        qt, c_q = self.query_proj.forward(query)
        x = np.concatenate([qt[..., None, :], h], axis=-2)
        caches = []
        for layer in self.layers:
            (x, _), c = layer.forward(x)
            caches.append(c)
        g = x[..., 1:, :]
        s, c_mlp = self.mlp.forward(g)
        return (g, s[..., 0]), (c_proj, c_q, caches, c_mlp, n)

    def backward(self, cache, dg, ds):
        """Returns the gradient with respect to the local features."""
        c_proj, c_q, caches, c_mlp, n = cache
        dg = dg + self.mlp.backward(c_mlp, ds[..., None])
        dx = np.concatenate([np.zeros_like(dg[..., :1, :]), dg], axis=-2)
        for i in range(len(self.layers) - 1, -1, -1):
            dx = self.layers[i].backward(caches[i], dx)
        self.query_proj.backward(c_q, dx[..., 0, :])
        dh = dx[..., 1:, :]
        self.positions.grad[:n] += dh.reshape(-1, n, self.cfg.global_dim).sum(axis=0)
        return self.feature_proj.backward(c_proj, dh)


class AdaptiveGate(Module):
    """Query-conditioned sigmoid weight between local and global scores."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.feat_proj = Linear(cfg.gate_feature_dim, cfg.gate_hidden, rng, dtype)
        self.query_proj = Linear(cfg.embed_dim, cfg.gate_hidden, rng, dtype)
        self.gate_proj = Linear(2 * cfg.gate_hidden, 1, rng, dtype)

    def forward(self, query, f, s_local, s_global, g):
        x_doc = np.concatenate([f, s_local[..., None], s_global[..., None]], axis=-1)
        h_feat, c_feat = self.feat_proj.forward(np.concatenate([x_doc, g], axis=-1))
        h_query, c_query = self.query_proj.forward(query)
        h_query = np.broadcast_to(h_query[..., None, :], h_feat.shape)
        logit, c_gate = self.gate_proj.forward(np.concatenate([h_feat, h_query], axis=-1))
        w = sigmoid(logit[..., 0])
        return w, (c_feat, c_query, c_gate, w)

    def backward(self, cache, dw):
        """Returns gradients for ``(f, s_local, s_global, g)``."""
        c_feat, c_query, c_gate, w = cache
        dlogit = (dw * w * (1 - w))[..., None]
        dh = self.gate_proj.backward(c_gate, dlogit)
        k = self.cfg.gate_hidden
        self.query_proj.backward(c_query, dh[..., k:].sum(axis=-2))
        dx = self.feat_proj.backward(c_feat, dh[..., :k])
        fd = self.cfg.local_feature_dim
        return dx[..., :fd], dx[..., fd], dx[..., fd + 1], dx[..., fd + 2:]


class DualView(Module):
    """The composed reranker.

    ``forward``/``backward`` operate on batched arrays for training;
    ``rerank`` scores one candidate set and is safe to call concurrently on
    a frozen model.
    """

    def __init__(self, config: ModelConfig | None = None, seed: int = 0, dtype=np.float32):
        self.config = config or ModelConfig()
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.local = LocalScorer(self.config, rng, dtype)
        self.global_ = GlobalScorer(self.config, rng, dtype)
        self.gate = AdaptiveGate(self.config, rng, dtype)

    def named_parameters(self, prefix=""):
        # registry names avoid the trailing underscore used on the attribute
        for name, p in self.local.named_parameters(prefix + "local."):
            yield name, p
        for name, p in self.global_.named_parameters(prefix + "global."):
            yield name, p
        for name, p in self.gate.named_parameters(prefix + "gate."):
            yield name, p

    def astype(self, dtype):
        super().astype(dtype)
        self.dtype = np.dtype(dtype)
        return self

    def _prepare(self, query, docs):
        query = np.asarray(query, dtype=self.dtype)
        docs = np.asarray(docs, dtype=self.dtype)
        if docs.ndim == 2:
            query, docs = query[None], docs[None]
        d = self.config.embed_dim
        if docs.ndim != 3 or query.ndim != 2 or query.shape[0] != docs.shape[0]:
            raise ConfigError(f"expected query (B, {d}) and docs (B, n, {d}); "
                              f"got {query.shape} and {docs.shape}")
        if query.shape[-1] != d or docs.shape[-1] != d:
            raise ConfigError(f"embedding width must be {d}; got query {query.shape[-1]}, "
                              f"docs {docs.shape[-1]}")
        if docs.shape[1] == 0:
            raise InputError("candidate list is empty")
        if docs.shape[1] > self.config.max_candidates:
            raise CapacityError(f"{docs.shape[1]} candidates exceed max_candidates "
                                f"{self.config.max_candidates}")
        return query, docs

    def forward(self, query, docs):
        """Batched forward pass; returns ``(ScoreOutput, cache)``."""
        query, docs = self._prepare(query, docs)
        ablation = self.config.ablation
        f, c_local = self.local.features(query, docs, passthrough=ablation == "no_local")
        s_local, c_lmlp = self.local.mlp.forward(f)
        s_local = s_local[..., 0]
        (g, s_global), c_global = self.global_.forward(query, f)
        fixed = _FIXED_GATE[ablation]
        if fixed is None:
            w, c_gate = self.gate.forward(query, f, s_local, s_global, g)
        else:
            w, c_gate = np.full_like(s_local, fixed), None
        s_fused = w * s_local + (1 - w) * s_global
        out = ScoreOutput(s_local, s_global, w, s_fused, f, g)
        return out, (out, c_local, c_lmlp, c_global, c_gate)

    def backward(self, cache, d_fused):
        """Accumulates parameter gradients given ``d loss / d s_fused``."""
        if cache is None:
            raise StateError("backward called before forward")
        out, c_local, c_lmlp, c_global, c_gate = cache
        d_fused = np.asarray(d_fused, dtype=self.dtype).reshape(out.s_fused.shape)
        w = out.gate
        ds_local = d_fused * w
        ds_global = d_fused * (1 - w)
        df = np.zeros_like(out.local_features)
        dg = np.zeros_like(out.global_features)
        if c_gate is not None:
            dw = d_fused * (out.s_local - out.s_global)
            df_g, dsl_g, dsg_g, dg_g = self.gate.backward(c_gate, dw)
            df += df_g
            ds_local = ds_local + dsl_g
            ds_global = ds_global + dsg_g
            dg += dg_g
        df += self.global_.backward(c_global, dg, ds_global)
        df += self.local.mlp.backward(c_lmlp, ds_local[..., None])
        self.local.features_backward(c_local, df)

    def score(self, query, docs) -> ScoreOutput:
        return self.forward(query, docs)[0]

    def rerank(self, candidate_set) -> ScoredCandidates:
        """Scores one candidate set (a ``CandidateSet`` or ``(query, docs)`` pair)."""
        if isinstance(candidate_set, tuple):
            query, docs = candidate_set
        else:
            query, docs = candidate_set.query_embedding, candidate_set.doc_matrix()
        docs = np.asarray(docs)
        if docs.ndim != 2 or docs.shape[0] == 0:
            raise InputError("candidate list is empty")
        out = self.score(query, docs)
        fused = out.s_fused[0]
        return ScoredCandidates(
            s_local=out.s_local[0],
            s_global=out.s_global[0],
            gate=out.gate[0],
            s_fused=fused,
            local_features=out.local_features[0],
            global_features=out.global_features[0],
            ranking=rank_by_score(fused),
        )

    def rank(self, candidate_set) -> list[int]:
        return self.rerank(candidate_set).ranking

    def with_ablation(self, ablation: str) -> "DualView":
        """A view sharing this model's parameters under a different ablation."""
        clone = object.__new__(DualView)
        clone.__dict__.update(self.__dict__)
        clone.config = self.config.replace(ablation=ablation)
        return clone

    def save(self, path):
        header = {"kind": "dualview", **self.config.to_header()}
        write_checkpoint(path, header, {n: p.value for n, p in self.parameters().items()})

    @classmethod
    def load(cls, path, expected: ModelConfig | None = None) -> "DualView":
        header, arrays = read_checkpoint(path)
        if header.get("kind") != "dualview":
            raise ConfigError(f"{path} holds a {header.get('kind')!r} model, not dualview")
        config = ModelConfig.from_header(header)
        if expected is not None and expected != config:
            diff = {
                f.name: (getattr(expected, f.name), getattr(config, f.name))
                for f in dataclasses.fields(config)
                if getattr(expected, f.name) != getattr(config, f.name)
            }
            raise ConfigError(f"checkpoint config differs (expected, found): {diff}")
        model = cls(config)
        params = model.parameters()
        if set(arrays) != set(params):
            model.load_state_dict(arrays)  # raises with the name diff
        model.load_state_dict({n: arrays[n].reshape(p.shape) for n, p in params.items()})
        return model


def parameter_count(model: Module) -> int:
    """Exact number of trainable scalars."""
    return model.num_parameters()
