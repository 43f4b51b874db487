"""MSE objective, plain SGD, the epoch loop, evaluation and checkpoints."""

from __future__ import annotations

import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import IO, Protocol

import numpy as np

from .autodiff import ParamStore, Tensor, as_tensor, backward, mean, no_grad, square, sub
from .data import Standardizer, WindowBatch
from .model import ModelConfig, QDistModel, count_params

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Raised when the training loss becomes NaN or infinite."""


class Model(Protocol):
    params: ParamStore

    def forward(self, current, history=None) -> Tensor: ...


def mse_loss(pred, gt) -> Tensor:
    """Mean of squared errors over every scalar entry (batch x outputs)."""
    pred, gt = as_tensor(pred), as_tensor(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"mse_loss shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    return mean(square(sub(pred, gt)))


def sgd_step(params: ParamStore, lr: float) -> None:
    """theta <- theta - lr * grad, then zero the gradients."""
    for name, t in params.items():
        if t.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient buffer")
        t.data -= lr * t.grad
        t.grad = np.zeros_like(t.data)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 16
    epochs: int = 140
    seed: int = 0
    shuffle: bool = True
    eval_batch_size: int = 512

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    test_mse: float | None
    wall_ms: float


@dataclass
class TrainReport:
    records: list[EpochRecord] = field(default_factory=list)
    best_test_mse: float | None = None
    best_epoch: int | None = None
    param_count: int = 0
    seed: int = 0

    def to_dict(self, include_timing: bool = False) -> dict:
        recs = []
        for r in self.records:
            d = asdict(r)
            if not include_timing:
                d.pop("wall_ms")
            recs.append(d)
        return {
            "records": recs,
            "summary": {"best_test_mse": self.best_test_mse, "best_epoch": self.best_epoch,
                        "param_count": self.param_count, "seed": self.seed},
        }

    @property
    def final(self) -> EpochRecord:
        return self.records[-1]


def predict(model: Model, data: WindowBatch, batch_size: int = 512) -> np.ndarray:
    out = []
    with no_grad():
        for lo in range(0, len(data), batch_size):
            b = data.subset(slice(lo, lo + batch_size))
            out.append(model.forward(b.current, b.history).data)
    return np.concatenate(out, axis=0)


def mse_of(model: Model, data: WindowBatch, batch_size: int = 512) -> float:
    """Mean squared error over all samples; batch partitioning only affects rounding."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty window set")
    sse = 0.0
    with no_grad():
        for lo in range(0, len(data), batch_size):
            b = data.subset(slice(lo, lo + batch_size))
            pred = model.forward(b.current, b.history).data
            if pred.shape != b.target.shape:
                raise ValueError(f"prediction shape {pred.shape} != target shape {b.target.shape}")
            err = pred - b.target
            sse += float(np.sum(err * err))
    return sse / data.target.size


# ---------------------------------------------------------------- checkpoints

def _f32_state(params: ParamStore) -> dict[str, np.ndarray]:
    return {n: t.data.astype("<f4") for n, t in params.items()}


def save_checkpoint(ckpt_dir: Path, params: ParamStore, config: ModelConfig | None = None,
                    standardizer: Standardizer | None = None) -> None:
    """``index.json`` + ``params.bin`` (little-endian float32, lexicographic name order)."""
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    index, offset, blobs = {}, 0, []
    for name, arr in _f32_state(params).items():
        raw = np.ascontiguousarray(arr).tobytes()
        index[name] = {"shape": list(arr.shape), "dtype": "float32", "offset": offset, "nbytes": len(raw),
                       "file": "params.bin"}
        offset += len(raw)
        blobs.append(raw)
    (ckpt_dir / "params.bin").write_bytes(b"".join(blobs))
    (ckpt_dir / "index.json").write_text(json.dumps(index, indent=2) + "\n")
    if config is not None:
        (ckpt_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n")
    if standardizer is not None:
        (ckpt_dir / "standardizer.json").write_text(json.dumps(standardizer.to_json()) + "\n")


def load_state(ckpt_dir: Path) -> dict[str, np.ndarray]:
    ckpt_dir = Path(ckpt_dir)
    index = json.loads((ckpt_dir / "index.json").read_text())
    blob = (ckpt_dir / "params.bin").read_bytes()
    state = {}
    for name in sorted(index):
        e = index[name]
        arr = np.frombuffer(blob, dtype="<f4", count=int(np.prod(e["shape"], dtype=np.int64)), offset=e["offset"])
        state[name] = arr.reshape(e["shape"]).astype(np.float64)
    return state


def load_checkpoint(ckpt_dir: Path) -> QDistModel:
    ckpt_dir = Path(ckpt_dir)
    config = ModelConfig.from_dict(json.loads((ckpt_dir / "config.json").read_text()))
    model = QDistModel(config)
    model.params.load_state_dict(load_state(ckpt_dir))
    return model


def load_standardizer(ckpt_dir: Path) -> Standardizer | None:
    p = Path(ckpt_dir) / "standardizer.json"
    return Standardizer.from_json(json.loads(p.read_text())) if p.exists() else None


def evaluate(checkpoint, windows: WindowBatch, batch_size: int = 512) -> float:
    """MSE of a checkpoint (directory or model object) on already-standardised windows."""
    model = load_checkpoint(checkpoint) if isinstance(checkpoint, (str, Path)) else checkpoint
    cfg = getattr(model, "config", None)
    if cfg is not None:
        if windows.current.shape[1] != cfg.in_dim or windows.target.shape[1] != cfg.out_dim:
            raise ValueError(f"window dims (in={windows.current.shape[1]}, out={windows.target.shape[1]}) "
                             f"do not match checkpoint (in={cfg.in_dim}, out={cfg.out_dim})")
        if windows.history.shape[1] != cfg.n_history:
            raise ValueError(f"window history length {windows.history.shape[1]} != checkpoint "
                             f"n_history {cfg.n_history}")
    return mse_of(model, windows, batch_size)


# ---------------------------------------------------------------- loop

class _Float32View:
    """The model as it will be checkpointed: parameters rounded to float32."""

    def __init__(self, model: Model):
        self._model = model

    def __enter__(self):
        self._saved = {n: t.data for n, t in self._model.params.items()}
        for n, t in self._model.params.items():
            t.data = t.data.astype(np.float32).astype(np.float64)
        return self._model

    def __exit__(self, *exc):
        for n, t in self._model.params.items():
            t.data = self._saved[n]


def train(model: Model, train_data: WindowBatch, test_data: WindowBatch | None, cfg: TrainConfig,
          out_dir: Path | None = None, metrics: IO[str] | None = None, echo: bool = False,
          standardizer: Standardizer | None = None) -> TrainReport:
    """Minibatch SGD on MSE; per-epoch metrics are computed on float32-rounded parameters.

    Rounding the evaluated parameters means the recorded MSEs are exactly what
    the saved checkpoint reproduces. The best (lowest test MSE) checkpoint is
    written to ``out_dir/checkpoint`` when ``out_dir`` is given.
    """
    if len(train_data) == 0:
        raise ValueError("empty training split")
    config = getattr(model, "config", None)
    report = TrainReport(param_count=model.params.num_scalars(), seed=cfg.seed)
    if config is not None:
        assert report.param_count == count_params(config)
    rng = np.random.default_rng(cfg.seed)
    params = model.params
    params.zero_grad()
    n = len(train_data)
    ckpt_dir = Path(out_dir) / "checkpoint" if out_dir is not None else None

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        for bi, lo in enumerate(range(0, n, cfg.batch_size)):
            b = train_data.subset(order[lo:lo + cfg.batch_size])
            loss = mse_loss(model.forward(b.current, b.history), b.target)
            if not math.isfinite(float(loss.data)):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {bi}; try a lower learning rate")
            backward(loss)
            sgd_step(params, cfg.lr)

        with _Float32View(model) as m32:
            train_mse = mse_of(m32, train_data, cfg.eval_batch_size)
            test_mse = mse_of(m32, test_data, cfg.eval_batch_size) if test_data is not None and len(test_data) else None
        if not math.isfinite(train_mse) or (test_mse is not None and not math.isfinite(test_mse)):
            raise DivergenceError(f"non-finite MSE after epoch {epoch} (train {train_mse}, test {test_mse}); "
                                  "try a lower learning rate")
        rec = EpochRecord(epoch, train_mse, test_mse, (time.perf_counter() - t0) * 1e3)
        report.records.append(rec)

        score = test_mse if test_mse is not None else train_mse
        if report.best_test_mse is None or score < report.best_test_mse:
            report.best_test_mse, report.best_epoch = score, epoch
            if ckpt_dir is not None:
                save_checkpoint(ckpt_dir, params, config, standardizer)

        line = json.dumps(asdict(rec))
        if metrics is not None:
            metrics.write(line + "\n")
            metrics.flush()
        if echo:
            print(line, file=sys.stdout, flush=True)
        log.debug("epoch %d train %.6f test %s", epoch, train_mse, test_mse)
    return report
