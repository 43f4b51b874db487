"""Shared MLP encoder, sinusoidal positional table and the dense output head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ParamStore, Tensor, add, as_tensor, matmul, relu


@dataclass(frozen=True)
class MlpSpec:
    in_dim: int
    hidden_dim: int
    out_dim: int
    n_blocks: int = 2

    def __post_init__(self):
        for field in ("in_dim", "hidden_dim", "out_dim", "n_blocks"):
            if getattr(self, field) < 1:
                raise ValueError(f"MlpSpec.{field} must be >= 1, got {getattr(self, field)}")

    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.in_dim] + [self.hidden_dim] * self.n_blocks + [self.out_dim]
        return list(zip(dims[:-1], dims[1:]))

    def num_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_dims())


def init_linear(params: ParamStore, prefix: str, fan_in: int, fan_out: int, bias: bool = True) -> None:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights (and biases)."""
    bound = 1.0 / np.sqrt(fan_in)
    params.uniform(f"{prefix}.weight", (fan_in, fan_out), bound)
    if bias:
        params.uniform(f"{prefix}.bias", (fan_out,), bound)


def init_mlp(spec: MlpSpec, params: ParamStore, prefix: str = "mlp") -> None:
    for k, (i, o) in enumerate(spec.layer_dims()):
        init_linear(params, f"{prefix}.{k}", i, o)


def linear(params: ParamStore, prefix: str, x: Tensor) -> Tensor:
    return add(matmul(x, params[f"{prefix}.weight"]), params[f"{prefix}.bias"])


def mlp_forward(spec: MlpSpec, params: ParamStore, x, prefix: str = "mlp") -> Tensor:
    """``n_blocks`` x (linear -> relu), then a final linear layer."""
    x = as_tensor(x)
    if x.shape[-1] != spec.in_dim:
        raise ValueError(f"mlp input width {x.shape[-1]} != in_dim {spec.in_dim}")
    h = x
    for k in range(spec.n_blocks):
        h = relu(linear(params, f"{prefix}.{k}", h))
    return linear(params, f"{prefix}.{spec.n_blocks}", h)


@dataclass(frozen=True)
class PosEncTable:
    max_len: int
    hidden_size: int
    table: np.ndarray  # (max_len, hidden_size), constant


def posenc_build(max_len: int, hidden_size: int) -> PosEncTable:
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    if hidden_size < 2 or hidden_size % 2:
        raise ValueError(f"hidden_size must be even and >= 2, got {hidden_size}")
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    two_i = np.arange(0, hidden_size, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, two_i / hidden_size)
    table = np.empty((max_len, hidden_size))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    table.setflags(write=False)
    return PosEncTable(max_len, hidden_size, table)


def posenc_add(x, table: PosEncTable) -> Tensor:
    """Add row ``s`` of the table to every batch element at position ``s``."""
    x = as_tensor(x)
    _, seq, width = x.shape
    if seq > table.max_len:
        raise ValueError(f"sequence length {seq} exceeds positional table length {table.max_len}")
    if width != table.hidden_size:
        raise ValueError(f"feature width {width} != positional table width {table.hidden_size}")
    return add(x, Tensor(table.table[None, :seq, :]))


def head_forward(params: ParamStore, features, prefix: str = "head") -> Tensor:
    features = as_tensor(features)
    w = params[f"{prefix}.weight"]
    if features.shape[-1] != w.shape[0]:
        raise ValueError(f"head input width {features.shape[-1]} != expected {w.shape[0]}")
    return linear(params, prefix, features)
