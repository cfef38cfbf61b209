"""Parameterized layers with explicit forward/backward passes.

Every layer follows the same pattern:

* ``forward(x)`` returns ``(y, cache)``; nothing is stored on the layer, so a
  frozen model can be shared across threads for inference.
* ``backward(cache, dy)`` accumulates parameter gradients into
  ``Parameter.grad`` and returns the gradient with respect to the input.
* ``layer(x)`` is shorthand for ``forward(x)[0]``.

Inputs may carry arbitrary leading batch axes; the feature axis is last.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from dualview.errors import ConfigError, DimensionError, StateError


class Parameter:
    """A trainable array together with its accumulated gradient."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, value: np.ndarray, name: str = ""):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Module:
    """Base class providing a deterministic parameter registry.

    Parameters are discovered by walking instance attributes in assignment
    order; lists of modules are walked by index.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for attr, obj in vars(self).items():
            path = f"{prefix}{attr}"
            if isinstance(obj, Parameter):
                yield path, obj
            elif isinstance(obj, Module):
                yield from obj.named_parameters(path + ".")
            elif isinstance(obj, (list, tuple)):
                for i, item in enumerate(obj):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self) -> dict[str, Parameter]:
        """Ordered ``name -> Parameter`` map; also stamps each parameter's name."""
        registry = {}
        for name, p in self.named_parameters():
            if name in registry:
                raise ConfigError(f"duplicate parameter name {name!r}")
            p.name = name
            registry[name] = p
        return registry

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    def astype(self, dtype):
        """Cast every parameter (and its gradient) in place; returns self."""
        for p in self.parameters().values():
            p.value = p.value.astype(dtype)
            p.grad = np.zeros_like(p.value)
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = self.parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ConfigError(
                f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}"
            )
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.value.shape:
                raise DimensionError(
                    f"{name}: expected shape {p.value.shape}, got {value.shape}"
                )
            p.value = value.astype(p.value.dtype, copy=True)


def _check_cache(cache):
    if cache is None:
        raise StateError("backward called without a matching forward pass")


class Linear(Module):
    """Affine map ``y = x @ W.T + b`` with ``W`` of shape (out, in)."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.in_features = in_features
        self.out_features = out_features
        limit = 1.0 / math.sqrt(in_features)
        self.weight = Parameter(
            rng.uniform(-limit, limit, size=(out_features, in_features)).astype(dtype)
        )
        self.bias = Parameter(np.zeros(out_features, dtype=dtype))

    def forward(self, x: np.ndarray):
        if x.shape[-1] != self.in_features:
            raise DimensionError(
                f"linear input has shape {x.shape}, weight has shape "
                f"{self.weight.value.shape} (expected last axis {self.in_features})"
            )
        x2 = x.reshape(-1, self.in_features)
        if self.out_features == 1:
            # BLAS gemv rounds rows differently depending on their position in
            # the block; a row-wise reduction keeps each row's result independent
            y = np.sum(x2 * self.weight.value[0], axis=-1, keepdims=True) + self.bias.value
        else:
            # a 2-D product hits a single BLAS gemm; stacked matmul loops per slice
            y = x2 @ self.weight.value.T + self.bias.value
        return y.reshape(x.shape[:-1] + (self.out_features,)), x

    def backward(self, cache, dy: np.ndarray) -> np.ndarray:
        _check_cache(cache)
        x = cache
        x2 = x.reshape(-1, self.in_features)
        dy2 = dy.reshape(-1, self.out_features)
        self.weight.grad += dy2.T @ x2
        self.bias.grad += dy2.sum(axis=0)
        return (dy2 @ self.weight.value).reshape(x.shape)

    def __call__(self, x):
        return self.forward(x)[0]


class LayerNorm(Module):
    """Per-row standardization over the last axis followed by an affine map."""

    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float32):
        self.dim = dim
        self.eps = eps
        self.gain = Parameter(np.ones(dim, dtype=dtype))
        self.shift = Parameter(np.zeros(dim, dtype=dtype))

    def normalize(self, x: np.ndarray):
        mu = x.mean(axis=-1, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        return (x - mu) * inv_std, inv_std

    def forward(self, x: np.ndarray):
        if x.shape[-1] != self.dim:
            raise DimensionError(f"layernorm expects last axis {self.dim}, got shape {x.shape}")
        xhat, inv_std = self.normalize(x)
        return xhat * self.gain.value + self.shift.value, (xhat, inv_std)

    def backward(self, cache, dy):
        _check_cache(cache)
        xhat, inv_std = cache
        self.gain.grad += (dy * xhat).reshape(-1, self.dim).sum(axis=0)
        self.shift.grad += dy.reshape(-1, self.dim).sum(axis=0)
        dxhat = dy * self.gain.value
        return inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )

    def __call__(self, x):
        return self.forward(x)[0]


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class MultiHeadSelfAttention(Module):
    """Scaled dot-product self-attention over the second-to-last axis.

    ``forward`` returns ``(out, weights), cache`` where ``weights`` has shape
    ``(..., heads, T, T)`` and every row sums to one.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        if heads < 1 or dim % heads:
            raise ConfigError(f"model dim {dim} is not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.q_proj = Linear(dim, dim, rng, dtype)
        self.k_proj = Linear(dim, dim, rng, dtype)
        self.v_proj = Linear(dim, dim, rng, dtype)
        self.out_proj = Linear(dim, dim, rng, dtype)

    def _split(self, x):
        # (..., T, D) -> (..., H, T, dh)
        *lead, t, _ = x.shape
        return np.swapaxes(x.reshape(*lead, t, self.heads, self.head_dim), -2, -3)

    def _merge(self, x):
        # (..., H, T, dh) -> (..., T, D)
        x = np.swapaxes(x, -2, -3)
        *lead, t, _, _ = x.shape
        return x.reshape(*lead, t, self.dim)

    def forward(self, x: np.ndarray):
        if x.ndim < 2 or x.shape[-2] < 1:
            raise DimensionError(f"attention expects (..., T>=1, {self.dim}), got {x.shape}")
        q_lin, cq = self.q_proj.forward(x)
        k_lin, ck = self.k_proj.forward(x)
        v_lin, cv = self.v_proj.forward(x)
        q, k, v = self._split(q_lin), self._split(k_lin), self._split(v_lin)
        scale = 1.0 / math.sqrt(self.head_dim)
        weights = softmax((q @ np.swapaxes(k, -1, -2)) * scale)
        ctx = self._merge(weights @ v)
        out, co = self.out_proj.forward(ctx)
        cache = (cq, ck, cv, co, q, k, v, weights, scale)
        return (out, weights), cache

    def backward(self, cache, dout, dweights=None):
        """Backpropagate ``dout`` (and optionally a gradient on the weights)."""
        _check_cache(cache)
        cq, ck, cv, co, q, k, v, weights, scale = cache
        dctx = self._split(self.out_proj.backward(co, dout))
        dw = dctx @ np.swapaxes(v, -1, -2)
        if dweights is not None:
            dw = dw + dweights
        dv = np.swapaxes(weights, -1, -2) @ dctx
        ds = weights * (dw - (dw * weights).sum(axis=-1, keepdims=True)) * scale
        dq = ds @ k
        dk = np.swapaxes(ds, -1, -2) @ q
        dx = self.q_proj.backward(cq, self._merge(dq))
        dx = dx + self.k_proj.backward(ck, self._merge(dk))
        dx = dx + self.v_proj.backward(cv, self._merge(dv))
        return dx

    def __call__(self, x):
        return self.forward(x)[0]


class AttentionBlock(Module):
    """``LayerNorm(x + Attn(x))`` with no feed-forward sublayer."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        self.attn = MultiHeadSelfAttention(dim, heads, rng, dtype)
        self.norm = LayerNorm(dim, dtype=dtype)

    def forward(self, x):
        (a, weights), ca = self.attn.forward(x)
        y, cn = self.norm.forward(x + a)
        return (y, weights), (ca, cn)

    def backward(self, cache, dy, dweights=None):
        _check_cache(cache)
        ca, cn = cache
        dsum = self.norm.backward(cn, dy)
        return dsum + self.attn.backward(ca, dsum, dweights)


class MLP(Module):
    """``Linear -> ReLU -> Linear`` producing one scalar per row."""

    def __init__(self, in_features: int, hidden: int, rng: np.random.Generator,
                 dtype=np.float32, out_features: int = 1):
        self.fc1 = Linear(in_features, hidden, rng, dtype)
        self.fc2 = Linear(hidden, out_features, rng, dtype)

    def forward(self, x):
        h, c1 = self.fc1.forward(x)
        mask = h > 0
        y, c2 = self.fc2.forward(h * mask)
        return y, (c1, mask, c2)

    def backward(self, cache, dy):
        _check_cache(cache)
        c1, mask, c2 = cache
        dh = self.fc2.backward(c2, dy) * mask
        return self.fc1.backward(c1, dh)

    def __call__(self, x):
        return self.forward(x)[0]
