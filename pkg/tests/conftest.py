import math

import numpy as np
import pytest

from dualview.model import ModelConfig

TINY = ModelConfig(
    embed_dim=8, local_layers=1, local_heads=2, global_dim=8, global_layers=1,
    global_heads=2, max_candidates=4, local_mlp_hidden=6, global_mlp_hidden=5, gate_hidden=4,
)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def tiny_config():
    return TINY


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def brute_softmax(row):
    m = max(row)
    e = [math.exp(v - m) for v in row]
    s = sum(e)
    return [v / s for v in e]


def brute_matvec(w, x, b):
    """``W x + b`` with explicit loops."""
    return [sum(w[i][j] * x[j] for j in range(len(x))) + b[i] for i in range(len(w))]


def brute_layernorm(x, gain, shift, eps=1e-5):
    mu = sum(x) / len(x)
    var = sum((v - mu) ** 2 for v in x) / len(x)
    return [(v - mu) / math.sqrt(var + eps) * g + s for v, g, s in zip(x, gain, shift)]


def brute_attention(attn, seq):
    """Plain-Python multi-head self-attention; returns (out rows, weights[h][i][j])."""
    W = lambda lin: (lin.weight.value.astype(float).tolist(), lin.bias.value.astype(float).tolist())
    proj = {}
    for name in ("q_proj", "k_proj", "v_proj"):
        w, b = W(getattr(attn, name))
        proj[name] = [brute_matvec(w, tok, b) for tok in seq]
    H, dh = attn.heads, attn.head_dim
    T = len(seq)
    ctx = [[0.0] * (H * dh) for _ in range(T)]
    weights = []
    for h in range(H):
        sl = slice(h * dh, (h + 1) * dh)
        wh = []
        for i in range(T):
            qi = proj["q_proj"][i][sl]
            scores = [sum(a * b for a, b in zip(qi, proj["k_proj"][j][sl])) / math.sqrt(dh)
                      for j in range(T)]
            p = brute_softmax(scores)
            wh.append(p)
            for j in range(T):
                vj = proj["v_proj"][j][sl]
                for t in range(dh):
                    ctx[i][h * dh + t] += p[j] * vj[t]
        weights.append(wh)
    w, b = W(attn.out_proj)
    return [brute_matvec(w, c, b) for c in ctx], weights


def brute_mlp(mlp, x):
    w1, b1 = mlp.fc1.weight.value.astype(float).tolist(), mlp.fc1.bias.value.astype(float).tolist()
    w2, b2 = mlp.fc2.weight.value.astype(float).tolist(), mlp.fc2.bias.value.astype(float).tolist()
    h = [max(0.0, v) for v in brute_matvec(w1, x, b1)]
    return brute_matvec(w2, h, b2)[0]


def brute_metrics(ranking, gold, k):
    """Independent per-metric oracle built on explicit rank loops."""
    top = list(ranking)[:k]
    hits = [1 if doc in gold else 0 for doc in top]
    dcg = 0.0
    for r, h in enumerate(hits, start=1):
        if h:
            dcg += 1 / math.log2(r + 1)
    idcg = sum(1 / math.log2(r + 1) for r in range(1, min(len(gold), k) + 1))
    first = next((r for r, h in enumerate(hits, start=1) if h), None)
    return {
        "recall_at_k": sum(hits) / len(gold),
        "full_hit_at_k": 1.0 if all(g in top for g in gold) else 0.0,
        "ndcg_at_k": dcg / idcg,
        "mrr_at_k": 1 / first if first else 0.0,
        "precision_at_k": sum(hits) / k,
    }
