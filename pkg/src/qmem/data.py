"""Shot-structured corpora: windows, splits, standardisation, synthetic shots, file I/O."""

from __future__ import annotations

import csv
import json
import logging
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

N_BASIS = 4
# A = OBS_GAIN * (orthonormal columns): one sample recovers each latent coordinate
# with error variance obs_noise**2 / OBS_GAIN**2, so pooling history pays off.
OBS_GAIN = np.sqrt(0.5)
STD_FLOOR = 1e-8


@dataclass
class ShotSeries:
    shot_id: str
    timestamps_ms: np.ndarray  # (T,)
    inputs: np.ndarray  # (T, in_dim)
    targets: np.ndarray  # (T, out_dim)

    def __post_init__(self):
        self.timestamps_ms = np.asarray(self.timestamps_ms, dtype=np.float64)
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        t = len(self.timestamps_ms)
        if self.inputs.ndim != 2 or self.targets.ndim != 2:
            raise ValueError(f"shot {self.shot_id}: inputs/targets must be 2-D")
        if len(self.inputs) != t or len(self.targets) != t:
            raise ValueError(f"shot {self.shot_id}: row counts differ "
                             f"({t} timestamps, {len(self.inputs)} inputs, {len(self.targets)} targets)")
        if t > 1 and not np.all(np.diff(self.timestamps_ms) > 0):
            raise ValueError(f"shot {self.shot_id}: timestamps not strictly increasing")

    def __len__(self) -> int:
        return len(self.timestamps_ms)

    @property
    def in_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def out_dim(self) -> int:
        return self.targets.shape[1]


@dataclass
class SampleWindow:
    current: np.ndarray
    history: np.ndarray  # (n_history, in_dim), oldest first
    target: np.ndarray
    padded_count: int
    history_index: np.ndarray  # source row of each history slot


def history_indices(timestamps: np.ndarray, index: int, n_history: int, gap_ms: float) -> list[int]:
    """Indices of up to ``n_history`` real predecessors of ``index``, oldest first.

    Walks backwards and stops at the first inter-sample gap larger than ``gap_ms``.
    """
    found: list[int] = []
    j = index - 1
    while j >= 0 and len(found) < n_history:
        if timestamps[j + 1] - timestamps[j] > gap_ms:
            break
        found.append(j)
        j -= 1
    return found[::-1]


def resolve_window(shot: ShotSeries, index: int, n_history: int, gap_ms: float) -> SampleWindow:
    """Current sample plus exactly ``n_history`` history rows.

    Missing slots (shot start, or history cut by the gap rule) are filled with
    copies of the current sample, placed before the real history.
    """
    if not 0 <= index < len(shot):
        raise IndexError(f"index {index} out of range for shot {shot.shot_id} of length {len(shot)}")
    if gap_ms <= 0:
        raise ValueError(f"gap_ms must be positive, got {gap_ms}")
    real = history_indices(shot.timestamps_ms, index, n_history, gap_ms)
    pad = n_history - len(real)
    idx = np.array([index] * pad + real, dtype=np.int64)
    return SampleWindow(
        current=shot.inputs[index],
        history=shot.inputs[idx].reshape(n_history, shot.in_dim),
        target=shot.targets[index],
        padded_count=pad,
        history_index=idx,
    )


@dataclass
class WindowBatch:
    """Stacked windows, ready for the model."""

    current: np.ndarray  # (N, in_dim)
    history: np.ndarray  # (N, n_history, in_dim)
    target: np.ndarray  # (N, out_dim)
    padded_count: np.ndarray  # (N,)

    def __len__(self) -> int:
        return len(self.current)

    def subset(self, idx) -> WindowBatch:
        return WindowBatch(self.current[idx], self.history[idx], self.target[idx], self.padded_count[idx])


def build_windows(shots: Sequence[ShotSeries], pairs: Iterable[tuple[str, int]], n_history: int,
                  gap_ms: float) -> WindowBatch:
    by_id = {s.shot_id: s for s in shots}
    wins = [resolve_window(by_id[sid], int(i), n_history, gap_ms) for sid, i in pairs]
    if not wins:
        raise ValueError("no windows to build")
    in_dim = wins[0].current.shape[0]
    return WindowBatch(
        current=np.stack([w.current for w in wins]),
        history=np.stack([w.history for w in wins]).reshape(len(wins), n_history, in_dim),
        target=np.stack([w.target for w in wins]),
        padded_count=np.array([w.padded_count for w in wins]),
    )


# ---------------------------------------------------------------- splitting

@dataclass
class Split:
    train: list[tuple[str, int]]
    test: list[tuple[str, int]]

    def to_json(self) -> dict:
        return {"train": [[s, i] for s, i in self.train], "test": [[s, i] for s, i in self.test]}

    @classmethod
    def from_json(cls, d: dict) -> Split:
        return cls([(str(s), int(i)) for s, i in d["train"]], [(str(s), int(i)) for s, i in d["test"]])


def split_contiguous(shots: Sequence[ShotSeries], test_ratio: float = 0.1, seed: int = 0,
                     n_history: int = 4) -> Split:
    """One contiguous block of ``floor(T * test_ratio)`` test samples per shot.

    The block start is drawn from a per-shot seeded stream and, where the shot
    is long enough, kept clear of the first ``n_history`` indices.
    """
    if not 0 < test_ratio < 1:
        raise ValueError(f"test_ratio must be in (0, 1), got {test_ratio}")
    train, test = [], []
    for k, shot in enumerate(shots):
        t = len(shot)
        n_test = int(np.floor(t * test_ratio))
        if n_test == 0:
            log.warning("shot %s too short (%d samples) for a test block; all samples train", shot.shot_id, t)
            train.extend((shot.shot_id, i) for i in range(t))
            continue
        lo = n_history if t - n_test >= n_history else 0
        rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(k,)))
        start = int(rng.integers(lo, t - n_test + 1))
        block = range(start, start + n_test)
        test.extend((shot.shot_id, i) for i in block)
        train.extend((shot.shot_id, i) for i in range(t) if not start <= i < start + n_test)
    return Split(train, test)


# ---------------------------------------------------------------- standardisation

@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> Standardizer:
        x = np.asarray(x, dtype=np.float64)
        if x.size == 0 or len(x) == 0:
            raise ValueError("cannot fit a standardizer on empty input")
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std = np.where(std < STD_FLOOR, 1.0, std)
        return cls(mean, std)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def apply_windows(self, w: WindowBatch) -> WindowBatch:
        return WindowBatch(self.apply(w.current), self.apply(w.history), w.target, w.padded_count)

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> Standardizer:
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


# ---------------------------------------------------------------- synthetic corpus

@dataclass(frozen=True)
class SynthSpec:
    n_shots: int = 22
    samples_per_shot: int = 260
    in_dim: int = 32
    out_dim: int = 16
    latent_dim: int = 4
    rho: float = 0.95
    obs_noise: float = 1.0
    dt_ms: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.rho < 1:
            raise ValueError(f"rho must be in [0, 1), got {self.rho}")
        if self.obs_noise < 0:
            raise ValueError(f"obs_noise must be >= 0, got {self.obs_noise}")
        for f in ("n_shots", "samples_per_shot", "in_dim", "out_dim", "latent_dim"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be >= 1")
        if self.dt_ms <= 0:
            raise ValueError("dt_ms must be positive")


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def profile_basis(out_dim: int, n_basis: int = N_BASIS) -> np.ndarray:
    """Legendre polynomials P_0..P_{n-1} on the normalised radius, shape (out_dim, n_basis)."""
    r = np.linspace(0.0, 1.0, out_dim)
    return np.polynomial.legendre.legvander(2.0 * r - 1.0, n_basis - 1)


class SynthGenerator:
    """AR(1) latent state observed through a fixed noisy linear map.

    ``x_t = A z_t + obs_noise * eps`` and ``q_t = base(r) + basis(r) @ (B z_t)``
    with ``base(r) = 1 + 2 r^2`` so profiles rise monotonically on average.
    """

    def __init__(self, spec: SynthSpec):
        self.spec = spec
        rng = _stream(spec.seed, zlib.crc32(b"maps"))
        q, _ = np.linalg.qr(rng.standard_normal((spec.in_dim, max(spec.in_dim, spec.latent_dim))))
        cols = q[:, :spec.latent_dim] if spec.in_dim >= spec.latent_dim else \
            rng.standard_normal((spec.in_dim, spec.latent_dim)) / np.sqrt(spec.in_dim)
        self.A = OBS_GAIN * cols
        self.B = rng.normal(0.0, 0.5 / np.sqrt(spec.latent_dim), size=(N_BASIS, spec.latent_dim))
        self.basis = profile_basis(spec.out_dim)
        r = np.linspace(0.0, 1.0, spec.out_dim)
        self.base = 1.0 + 2.0 * r ** 2

    def latents(self, shot_index: int) -> np.ndarray:
        s = self.spec
        rng = _stream(s.seed, zlib.crc32(b"latent"), shot_index)
        z = np.empty((s.samples_per_shot, s.latent_dim))
        z[0] = rng.standard_normal(s.latent_dim)
        innov = np.sqrt(1.0 - s.rho ** 2)
        eta = rng.standard_normal((s.samples_per_shot, s.latent_dim))
        for t in range(1, s.samples_per_shot):
            z[t] = s.rho * z[t - 1] + innov * eta[t]
        return z

    def smooth_profile(self, z: np.ndarray) -> np.ndarray:
        return self.base + (z @ self.B.T) @ self.basis.T

    def shot(self, shot_index: int) -> ShotSeries:
        s = self.spec
        z = self.latents(shot_index)
        noise = _stream(s.seed, zlib.crc32(b"noise"), shot_index).standard_normal((s.samples_per_shot, s.in_dim))
        x = z @ self.A.T + s.obs_noise * noise
        return ShotSeries(
            shot_id=f"{shot_index:03d}",
            timestamps_ms=np.arange(s.samples_per_shot) * s.dt_ms,
            inputs=x,
            targets=self.smooth_profile(z),
        )


def synth_generate(spec: SynthSpec) -> list[ShotSeries]:
    gen = SynthGenerator(spec)
    return [gen.shot(k) for k in range(spec.n_shots)]


# ---------------------------------------------------------------- corpus files

def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_shot_csv(path: Path, shot: ShotSeries) -> None:
    header = ["time_ms"] + [f"f_{i:03d}" for i in range(shot.in_dim)] + [f"q_{i:03d}" for i in range(shot.out_dim)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t in range(len(shot)):
            row = [shot.timestamps_ms[t], *shot.inputs[t], *shot.targets[t]]
            w.writerow([_fmt(v) for v in row])


def read_shot_csv(path: Path, shot_id: str, in_dim: int | None = None) -> ShotSeries:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(v) for v in r] for r in reader], dtype=np.float64).reshape(-1, len(header))
    n_f = sum(1 for h in header if h.startswith("f_"))
    n_q = sum(1 for h in header if h.startswith("q_"))
    if header[0] != "time_ms" or 1 + n_f + n_q != len(header):
        raise ValueError(f"{path}: unexpected header")
    if in_dim is not None and n_f != in_dim:
        raise ValueError(f"{path}: {n_f} input columns but manifest says in_dim={in_dim}")
    return ShotSeries(shot_id, rows[:, 0], rows[:, 1:1 + n_f], rows[:, 1 + n_f:])


def write_corpus(out_dir: Path, shots: Sequence[ShotSeries], spec: SynthSpec | None = None,
                 split: Split | None = None) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for shot in shots:
        write_shot_csv(out_dir / f"shot_{shot.shot_id}.csv", shot)
    dts = np.concatenate([np.diff(s.timestamps_ms) for s in shots if len(s) > 1]) if shots else np.array([])
    manifest = {
        "in_dim": shots[0].in_dim,
        "out_dim": shots[0].out_dim,
        "dt_ms": float(spec.dt_ms) if spec else (float(np.median(dts)) if dts.size else None),
        "shots": [{"shot_id": s.shot_id, "n_samples": len(s), "file": f"shot_{s.shot_id}.csv"} for s in shots],
        "generator": asdict(spec) if spec else None,
        "seed": spec.seed if spec else None,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    if split is not None:
        (out_dir / "split.json").write_text(json.dumps(split.to_json()) + "\n")


def read_corpus(corpus_dir: Path) -> tuple[dict, list[ShotSeries]]:
    corpus_dir = Path(corpus_dir)
    manifest = json.loads((corpus_dir / "manifest.json").read_text())
    shots = [read_shot_csv(corpus_dir / e["file"], e["shot_id"], manifest["in_dim"]) for e in manifest["shots"]]
    for s in shots:
        if s.out_dim != manifest["out_dim"]:
            raise ValueError(f"shot {s.shot_id}: out_dim {s.out_dim} != manifest {manifest['out_dim']}")
    return manifest, shots


def read_split(corpus_dir: Path) -> Split:
    return Split.from_json(json.loads((Path(corpus_dir) / "split.json").read_text()))
