import numpy as np
import pytest

from qmem import ModelConfig, QDistModel, forward
from qmem.data import Split, Standardizer, SynthSpec, build_windows, split_contiguous, synth_generate
from qmem.training import mse_loss

DESK = dict(in_dim=8, out_dim=3, feat_dim=8, n_history=2, n_global_tokens=2)
KINK_MARGIN = 1e-2


def relu_margin(config, params, current, history):
    """Smallest |pre-activation| of any MLP rectifier for these inputs.

    Central differences straddling a ReLU kink do not estimate a derivative, so
    gradient checks only use draws whose pre-activations sit well clear of 0.
    """
    x = np.concatenate([history, current[:, None, :]], axis=1).reshape(-1, config.in_dim)
    margin = np.inf
    h = x
    for k in range(config.n_blocks):
        z = h @ params[f"mlp.{k}.weight"].data + params[f"mlp.{k}.bias"].data
        margin = min(margin, np.abs(z).min())
        h = np.maximum(z, 0)
    return margin


def smooth_draws(n, config_kwargs=DESK, batch=2, start=0):
    """Yield (seed, config, model, current, history, target) for ``n`` kink-free random draws."""
    cfg = ModelConfig(**config_kwargs)
    seed, got = start, 0
    while got < n:
        m = QDistModel(cfg, seed=seed)
        rng = np.random.default_rng(10_000 + seed)
        cur = rng.normal(size=(batch, cfg.in_dim))
        hist = rng.normal(size=(batch, cfg.n_history, cfg.in_dim))
        y = rng.normal(size=(batch, cfg.out_dim))
        seed += 1
        if relu_margin(cfg, m.params, cur, hist) < KINK_MARGIN:
            continue
        got += 1
        yield seed - 1, cfg, m, cur, hist, y


def model_loss(cfg, cur, hist, y):
    return lambda p: mse_loss(forward(cfg, p, cur, hist), y)


@pytest.fixture(scope="session")
def small_corpus():
    spec = SynthSpec(n_shots=4, samples_per_shot=60, in_dim=8, out_dim=5, latent_dim=2, seed=3)
    shots = synth_generate(spec)
    split = split_contiguous(shots, 0.1, seed=3, n_history=2)
    return spec, shots, split


@pytest.fixture(scope="session")
def small_windows(small_corpus):
    _, shots, split = small_corpus
    tr = build_windows(shots, split.train, 2, 30.0)
    te = build_windows(shots, split.test, 2, 30.0)
    std = Standardizer.fit(tr.current)
    return std.apply_windows(tr), std.apply_windows(te)


# ---------------------------------------------------------------- acceptance report

ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record(criterion: str, passed: bool, detail: str) -> None:
    """Log one acceptance verdict; printed as a PASS/FAIL line at the end of the session."""
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[criterion] = (passed, line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key][1])
