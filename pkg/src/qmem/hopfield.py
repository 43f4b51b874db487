"""Modern Hopfield association: beta-sharpened softmax retrieval of stored patterns.

Full mode, per head ``h``::

    A_h   = softmax(beta * (R Wq_h) (Y Wk_h)^T)        # over stored patterns
    out_h = A_h (Y Wv_h)

with heads concatenated and mixed by ``Wo``. ``identity_projections=True``
drops every projection and computes ``softmax(beta * R Y^T) Y`` directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import ParamStore, Tensor, as_tensor, matmul, reshape, scale, softmax_lastdim, \
    swap_last, transpose

PROJECTIONS = ("w_q", "w_k", "w_v", "w_o")


@dataclass(frozen=True)
class HopfieldSpec:
    hidden_size: int
    n_heads: int = 2
    n_layers: int = 1
    beta: float | None = None  # None -> 1/sqrt(head width)
    identity_projections: bool = False

    def __post_init__(self):
        if self.hidden_size < 1 or self.n_heads < 1 or self.n_layers < 1:
            raise ValueError(f"invalid HopfieldSpec {self}")
        if self.hidden_size % self.n_heads:
            raise ValueError(f"hidden_size {self.hidden_size} not divisible by n_heads {self.n_heads}")
        if self.beta is not None and self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.n_heads

    @property
    def effective_beta(self) -> float:
        return 1.0 / math.sqrt(self.head_dim) if self.beta is None else float(self.beta)

    def num_params(self) -> int:
        if self.identity_projections:
            return 0
        return self.n_layers * len(PROJECTIONS) * self.hidden_size ** 2


def init_hopfield(spec: HopfieldSpec, params: ParamStore, prefix: str) -> None:
    """Projections are purely linear, so use the unit-gain bound sqrt(3 / fan_in)."""
    if spec.identity_projections:
        return
    bound = math.sqrt(3.0 / spec.hidden_size)
    for layer in range(spec.n_layers):
        for w in PROJECTIONS:
            params.uniform(f"{prefix}.{layer}.{w}.weight", (spec.hidden_size, spec.hidden_size), bound)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, s, h = x.shape
    return transpose(reshape(x, (b, s, n_heads, h // n_heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, nh, s, d = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (b, s, nh * d))


def hopfield_assoc(spec: HopfieldSpec, params: ParamStore | None, R, Y, prefix: str = "hopfield",
                   layer: int = 0) -> Tensor:
    """Retrieve from stored patterns ``Y`` (B, S_y, H) with state patterns ``R`` (B, S_r, H)."""
    R, Y = as_tensor(R), as_tensor(Y)
    if R.ndim != 3 or Y.ndim != 3:
        raise ValueError(f"expected (B, S, H) inputs, got {R.shape} and {Y.shape}")
    if Y.shape[1] == 0:
        raise ValueError("no stored patterns (S_y == 0)")
    if R.shape[-1] != spec.hidden_size or Y.shape[-1] != spec.hidden_size:
        raise ValueError(f"pattern widths {R.shape[-1]}, {Y.shape[-1]} != hidden_size {spec.hidden_size}")
    if R.shape[0] != Y.shape[0]:
        raise ValueError(f"batch mismatch: {R.shape[0]} vs {Y.shape[0]}")
    beta = spec.effective_beta

    if spec.identity_projections:
        attn = softmax_lastdim(scale(matmul(R, swap_last(Y)), beta))
        return matmul(attn, Y)

    p = f"{prefix}.{layer}"
    q = _split_heads(matmul(R, params[f"{p}.w_q.weight"]), spec.n_heads)
    k = _split_heads(matmul(Y, params[f"{p}.w_k.weight"]), spec.n_heads)
    v = _split_heads(matmul(Y, params[f"{p}.w_v.weight"]), spec.n_heads)
    attn = softmax_lastdim(scale(matmul(q, swap_last(k)), beta))
    return matmul(_merge_heads(matmul(attn, v)), params[f"{p}.w_o.weight"])


def attention_weights(spec: HopfieldSpec, params: ParamStore | None, R, Y, prefix: str = "hopfield",
                      layer: int = 0) -> np.ndarray:
    """Retrieval weights (B, n_heads, S_r, S_y) for inspection; no graph is recorded."""
    R, Y = as_tensor(R).data, as_tensor(Y).data
    beta = spec.effective_beta
    if spec.identity_projections:
        logits = beta * (R @ np.swapaxes(Y, -1, -2))[:, None]
    else:
        p = f"{prefix}.{layer}"
        b, sr, h = R.shape
        sy = Y.shape[1]
        nh, d = spec.n_heads, spec.head_dim
        q = (R @ params[f"{p}.w_q.weight"].data).reshape(b, sr, nh, d).transpose(0, 2, 1, 3)
        k = (Y @ params[f"{p}.w_k.weight"].data).reshape(b, sy, nh, d).transpose(0, 2, 1, 3)
        logits = beta * (q @ np.swapaxes(k, -1, -2))
    logits = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True)


def hopfield_stack(spec: HopfieldSpec, params: ParamStore | None, X, prefix: str = "hopfield") -> Tensor:
    """Self-association (R = Y = current sequence) repeated over ``n_layers`` layers."""
    h = as_tensor(X)
    for layer in range(spec.n_layers):
        h = hopfield_assoc(spec, params, h, h, prefix=prefix, layer=layer)
    return h


def take_last(X) -> Tensor:
    X = as_tensor(X)
    if X.ndim != 3 or X.shape[1] == 0:
        raise ValueError(f"take_last needs a non-empty (B, S, H) sequence, got {X.shape}")
    return X[:, -1, :]
