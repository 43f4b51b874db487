"""Two-branch memory-aware Q-profile regressor.

    current, history --shared MLP--> features
      history branch: [h_1 .. h_S, current] (+ positional table) -> Hopfield -> last token
      global branch:  [g_1 .. g_G, current] -> Hopfield -> last token
    concat(branches) -> linear head -> Q-profile

The ablation flags switch branches off. The history branch exists when either
the Hopfield or positional flag is set; with no branch at all the head reads
the MLP feature of the current sample directly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ParamStore, Tensor, add, as_tensor, concat, reshape
from .hopfield import HopfieldSpec, hopfield_stack, init_hopfield, take_last
from .layers import MlpSpec, PosEncTable, head_forward, init_linear, init_mlp, mlp_forward, \
    posenc_add, posenc_build


@dataclass(frozen=True)
class Ablation:
    use_hopfield: bool = True
    use_posenc: bool = True
    use_lparam: bool = True


# Component-analysis rows: MLP; +Hopfield; +Hopfield+Position; MLP+LParam; all.
ABLATION_ROWS: dict[str, Ablation] = {
    "mlp": Ablation(False, False, False),
    "hopfield": Ablation(True, False, False),
    "hopfield_pos": Ablation(True, True, False),
    "lparam": Ablation(False, False, True),
    "full": Ablation(True, True, True),
}


@dataclass(frozen=True)
class ModelConfig:
    in_dim: int
    out_dim: int
    feat_dim: int = 64
    n_blocks: int = 2
    n_heads: int = 2
    n_layers: int = 1
    global_heads: int = 2
    global_layers: int = 1
    beta: float | None = None
    identity_projections: bool = False
    n_history: int = 4
    n_global_tokens: int = 4
    ablation: Ablation = field(default_factory=Ablation)

    def __post_init__(self):
        if self.out_dim < 1 or self.in_dim < 1 or self.feat_dim < 1:
            raise ValueError("in_dim, out_dim and feat_dim must be >= 1")
        if self.n_history < 0:
            raise ValueError(f"n_history must be >= 0, got {self.n_history}")
        if self.ablation.use_lparam and self.n_global_tokens < 1:
            raise ValueError("use_lparam requires n_global_tokens >= 1")
        if self.ablation.use_posenc and self.feat_dim % 2:
            raise ValueError(f"positional encoding needs an even feat_dim, got {self.feat_dim}")
        # validates head divisibility early
        self.hist_hopfield, self.global_hopfield  # noqa: B018

    @property
    def mlp(self) -> MlpSpec:
        return MlpSpec(self.in_dim, self.feat_dim, self.feat_dim, self.n_blocks)

    @property
    def hist_hopfield(self) -> HopfieldSpec:
        return HopfieldSpec(self.feat_dim, self.n_heads, self.n_layers, self.beta, self.identity_projections)

    @property
    def global_hopfield(self) -> HopfieldSpec:
        return HopfieldSpec(self.feat_dim, self.global_heads, self.global_layers, self.beta,
                            self.identity_projections)

    @property
    def history_branch(self) -> bool:
        return self.ablation.use_hopfield or self.ablation.use_posenc

    @property
    def head_in_dim(self) -> int:
        n = int(self.history_branch) + int(self.ablation.use_lparam)
        return max(n, 1) * self.feat_dim

    def replace(self, **changes) -> ModelConfig:
        if "ablation" in changes and isinstance(changes["ablation"], str):
            changes["ablation"] = ABLATION_ROWS[changes["ablation"]]
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        d = dict(d)
        abl = d.pop("ablation", None)
        if isinstance(abl, str):
            abl = ABLATION_ROWS[abl]
        elif isinstance(abl, dict):
            abl = Ablation(**abl)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d, ablation=abl or Ablation())


def full_scale_config(**overrides) -> ModelConfig:
    """25500-wide input, 129-point profile, hidden size 2048, 2 heads, 1 layer."""
    base = dict(in_dim=25500, out_dim=129, feat_dim=2048, n_heads=2, n_layers=1)
    base.update(overrides)
    return ModelConfig(**base)


def init_params(config: ModelConfig, seed: int = 0) -> ParamStore:
    params = ParamStore(seed)
    init_mlp(config.mlp, params, "mlp")
    abl = config.ablation
    if abl.use_hopfield:
        init_hopfield(config.hist_hopfield, params, "hist")
    if abl.use_lparam:
        bound = 1.0 / np.sqrt(config.feat_dim)
        params.uniform("global.tokens", (config.n_global_tokens, config.feat_dim), bound)
        init_hopfield(config.global_hopfield, params, "global")
    init_linear(params, "head", config.head_in_dim, config.out_dim)
    return params


def count_params(config: ModelConfig) -> int:
    abl = config.ablation
    n = config.mlp.num_params()
    if abl.use_hopfield:
        n += config.hist_hopfield.num_params()
    if abl.use_lparam:
        n += config.n_global_tokens * config.feat_dim + config.global_hopfield.num_params()
    n += config.head_in_dim * config.out_dim + config.out_dim
    return n


def forward(config: ModelConfig, params: ParamStore, current, history=None,
            posenc: PosEncTable | None = None) -> Tensor:
    """Predict profiles from ``current`` (B, in_dim) and ``history`` (B, n_history, in_dim).

    History rows are ordered oldest first; the current sample is always placed
    at the last sequence position of both branches.
    """
    current = as_tensor(current)
    abl = config.ablation
    mlp = config.mlp
    batch = current.shape[0]

    branches = []
    if not config.history_branch:
        cur_feat = mlp_forward(mlp, params, current)
    else:
        hist = as_tensor(np.zeros((batch, 0, config.in_dim)) if history is None else history)
        if hist.ndim != 3 or hist.shape[0] != batch or hist.shape[1] != config.n_history:
            raise ValueError(f"history shape {hist.shape} does not match "
                             f"(batch={batch}, n_history={config.n_history}, in_dim={config.in_dim})")
        s = config.n_history + 1
        raw = concat([hist, reshape(current, (batch, 1, config.in_dim))], axis=1)
        feats = reshape(mlp_forward(mlp, params, reshape(raw, (batch * s, config.in_dim))),
                        (batch, s, config.feat_dim))
        cur_feat = feats[:, -1, :]
        seq = feats
        if abl.use_posenc:
            seq = posenc_add(seq, posenc or posenc_build(s, config.feat_dim))
        if abl.use_hopfield:
            seq = hopfield_stack(config.hist_hopfield, params, seq, prefix="hist")
        branches.append(take_last(seq))

    if abl.use_lparam:
        tokens = params["global.tokens"]
        g = config.n_global_tokens
        tok = add(Tensor(np.zeros((batch, 1, 1))), reshape(tokens, (1, g, config.feat_dim)))
        gseq = concat([tok, reshape(cur_feat, (batch, 1, config.feat_dim))], axis=1)
        branches.append(take_last(hopfield_stack(config.global_hopfield, params, gseq, prefix="global")))

    if not branches:
        return head_forward(params, cur_feat)
    return head_forward(params, concat(branches, axis=1))


class QDistModel:
    """Config + parameters bundle with a cached positional table."""

    def __init__(self, config: ModelConfig, seed: int = 0, params: ParamStore | None = None):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)
        self._posenc = posenc_build(config.n_history + 1, config.feat_dim) \
            if config.ablation.use_posenc else None

    def forward(self, current, history=None) -> Tensor:
        return forward(self.config, self.params, current, history, posenc=self._posenc)

    __call__ = forward

    def num_params(self) -> int:
        return self.params.num_scalars()
