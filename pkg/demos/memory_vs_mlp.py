"""Training the memory model against a plain MLP on the same corpus.

Both models see identical data, seeds and optimiser settings. The MLP maps the
current sample alone to a profile. The full model also reads the last four
samples through a Hopfield branch and consults learnable global tokens. On a
persistent (rho = 0.95) corpus the memory model should reach a lower test MSE.

Takes about a minute and a half on one CPU core. Pass a smaller epoch count as
the first argument for a quicker look.
"""

import sys

from qmem import ABLATION_ROWS, ModelConfig, QDistModel, Standardizer, SynthSpec, TrainConfig, build_windows, \
    split_contiguous, synth_generate, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 60
spec = SynthSpec(rho=0.95, seed=0)
shots = synth_generate(spec)
split = split_contiguous(shots, 0.1, seed=0)
train_w = build_windows(shots, split.train, 4, 30.0)
test_w = build_windows(shots, split.test, 4, 30.0)
std = Standardizer.fit(train_w.current)
train_w, test_w = std.apply_windows(train_w), std.apply_windows(test_w)

for row in ("mlp", "full"):
    cfg = ModelConfig(in_dim=spec.in_dim, out_dim=spec.out_dim, ablation=ABLATION_ROWS[row])
    report = train(QDistModel(cfg, seed=0), train_w, test_w, TrainConfig(epochs=epochs, seed=0))
    print(f"{row:>4}: {report.param_count:6d} params, final test MSE {report.final.test_mse:.4f} "
          f"(best {report.best_test_mse:.4f} at epoch {report.best_epoch})")
