"""Ranking objective: pointwise BCE, pairwise margin, InfoNCE and triplet.

All losses act on the scores of a single candidate set. Each ``*_with_grad``
function returns ``(value, d value / d scores)``; the plain functions return
only the value. A set without positives (or negatives, for the pairwise
terms) is degenerate: the term is 0 and a
:class:`~dualview.errors.DegenerateCandidateSetWarning` is emitted.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from dualview.errors import ConfigError, DegenerateCandidateSetWarning, InputError


@dataclass(frozen=True)
class LossConfig:
    weight_bce: float = 1.0
    weight_margin: float = 1.0
    weight_infonce: float = 1.0
    weight_triplet: float = 1.0
    margin_pairwise: float = 1.0
    margin_triplet: float = 0.5
    infonce_temperature: float = 0.1

    def __post_init__(self):
        weights = (self.weight_bce, self.weight_margin, self.weight_infonce, self.weight_triplet)
        if min(weights) < 0 or max(weights) <= 0:
            raise ConfigError(f"loss weights must be >= 0 with at least one > 0, got {weights}")
        if self.infonce_temperature <= 0:
            raise ConfigError("infonce_temperature must be positive")
        if self.margin_pairwise < 0 or self.margin_triplet < 0:
            raise ConfigError("margins must be non-negative")


def _prepare(scores, labels):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.size == 0:
        raise InputError("empty candidate list")
    if s.shape != y.shape:
        raise InputError(f"{s.size} scores but {y.size} labels")
    return s, y.astype(bool)


def _degenerate(name, warn):
    if warn:
        warnings.warn(f"{name}: candidate set lacks positives or negatives",
                      DegenerateCandidateSetWarning, stacklevel=3)


def bce_with_grad(scores, labels):
    s, y = _prepare(scores, labels)
    # -[y log σ(s) + (1-y) log(1-σ(s))] = softplus(s) - y*s
    value = float(np.mean(np.logaddexp(0.0, s) - y * s))
    prob = np.exp(-np.logaddexp(0.0, -s))
    return value, (prob - y) / s.size


def margin_with_grad(scores, labels, margin=1.0, warn=True):
    s, y = _prepare(scores, labels)
    pos, neg = s[y], s[~y]
    grad = np.zeros_like(s)
    if pos.size == 0 or neg.size == 0:
        _degenerate("margin_loss", warn)
        return 0.0, grad
    gap = margin - (pos[:, None] - neg[None, :])
    active = gap > 0
    pairs = pos.size * neg.size
    value = float(np.where(active, gap, 0.0).sum() / pairs)
    grad[y] = -active.sum(axis=1) / pairs
    grad[~y] = active.sum(axis=0) / pairs
    return value, grad


def infonce_with_grad(scores, labels, temperature=0.1, warn=True):
    s, y = _prepare(scores, labels)
    grad = np.zeros_like(s)
    n_pos = int(y.sum())
    if n_pos == 0:
        _degenerate("infonce_loss", warn)
        return 0.0, grad
    z = s / temperature
    zmax = z.max()
    lse = zmax + np.log(np.sum(np.exp(z - zmax)))
    value = float(np.mean(lse - z[y]))
    probs = np.exp(z - lse)
    grad = (probs - y / n_pos) / temperature
    return value, grad


def triplet_with_grad(scores, labels, margin=0.5, warn=True):
    s, y = _prepare(scores, labels)
    grad = np.zeros_like(s)
    pos_idx, neg_idx = np.flatnonzero(y), np.flatnonzero(~y)
    if pos_idx.size == 0 or neg_idx.size == 0:
        _degenerate("triplet_loss", warn)
        return 0.0, grad
    hardest = neg_idx[np.argmax(s[neg_idx])]
    gaps = margin - (s[pos_idx] - s[hardest])
    active = gaps > 0
    value = float(np.where(active, gaps, 0.0).sum() / pos_idx.size)
    grad[pos_idx] -= active / pos_idx.size
    grad[hardest] += active.sum() / pos_idx.size
    return value, grad


def bce_loss(scores, labels) -> float:
    return bce_with_grad(scores, labels)[0]


def margin_loss(scores, labels, margin=1.0) -> float:
    """Mean hinge over every (positive, negative) pair."""
    return margin_with_grad(scores, labels, margin)[0]


def infonce_loss(scores, labels, temperature=0.1) -> float:
    return infonce_with_grad(scores, labels, temperature)[0]


def triplet_loss(scores, labels, margin=0.5) -> float:
    """Hinge between each positive and the highest-scoring negative."""
    return triplet_with_grad(scores, labels, margin)[0]


@dataclass
class LossResult:
    total: float
    terms: dict[str, float] = field(default_factory=dict)
    grad: np.ndarray | None = None
    degenerate: bool = False


def combined_loss(scores, labels, cfg: LossConfig | None = None, warn=True) -> LossResult:
    """Weighted sum of the four terms with its gradient and per-term breakdown."""
    cfg = cfg or LossConfig()
    s, y = _prepare(scores, labels)
    degenerate = not y.any() or y.all()
    grad = np.zeros_like(s)
    terms = {}
    parts = (
        ("bce", cfg.weight_bce, lambda: bce_with_grad(s, y)),
        ("margin", cfg.weight_margin,
         lambda: margin_with_grad(s, y, cfg.margin_pairwise, warn=False)),
        ("infonce", cfg.weight_infonce,
         lambda: infonce_with_grad(s, y, cfg.infonce_temperature, warn=False)),
        ("triplet", cfg.weight_triplet,
         lambda: triplet_with_grad(s, y, cfg.margin_triplet, warn=False)),
    )
    total = 0.0
    for name, weight, fn in parts:
        if weight == 0:
            terms[name] = 0.0
            continue
        value, g = fn()
        terms[name] = value
        total += weight * value
        grad += weight * g
    if degenerate and warn:
        warnings.warn("combined_loss: candidate set lacks positives or negatives",
                      DegenerateCandidateSetWarning, stacklevel=2)
    return LossResult(total=total, terms=terms, grad=grad, degenerate=degenerate)
