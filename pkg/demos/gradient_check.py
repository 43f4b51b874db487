"""Checking reverse-mode gradients against central finite differences.

We build a tiny two-branch model, attach a loss and let ``gradcheck`` nudge
every parameter by +/- eps. Backprop and the numerical estimate should agree
to roughly 1e-7 relative error in float64.
"""

import numpy as np

from qmem import ModelConfig, QDistModel, gradcheck, mse_loss

cfg = ModelConfig(in_dim=8, out_dim=3, feat_dim=8, n_history=2, n_global_tokens=2)
model = QDistModel(cfg, seed=1)
print(f"model has {model.num_params()} parameters across {len(model.params)} tensors")

rng = np.random.default_rng(0)
current = rng.normal(size=(2, cfg.in_dim))
history = rng.normal(size=(2, cfg.n_history, cfg.in_dim))
target = rng.normal(size=(2, cfg.out_dim))

report = gradcheck(lambda p: mse_loss(model.forward(current, history), target), model.params)
print(f"checked {report.n_checked} scalars, worst relative error {report.max_rel_error:.2e} "
      f"in {report.worst_param}{list(report.worst_index)}")
print("passed" if report.passed else "FAILED")
