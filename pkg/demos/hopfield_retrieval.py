"""Pattern retrieval with a Modern Hopfield update.

Six orthonormal patterns are stored. A query that is one of them plus noise is
pushed through a single retrieval step at several inverse temperatures. As
beta grows the softmax concentrates on the matching pattern and the output
snaps onto it; at beta = 0 the output is just the average of everything stored.
"""

import numpy as np

from qmem import HopfieldSpec, hopfield_assoc
from qmem.hopfield import attention_weights

rng = np.random.default_rng(0)
d, n, target = 16, 6, 2
patterns = np.linalg.qr(rng.normal(size=(d, n)))[0].T[None]  # (1, n, d)
noise = rng.normal(size=d)
query = (patterns[0, target] + 0.3 * noise / np.linalg.norm(noise))[None, None]

print(" beta   weight on target   cosine(output, target)")
for beta in (0.0, 1.0, 4.0, 16.0, 50.0):
    spec = HopfieldSpec(d, n_heads=1, beta=beta, identity_projections=True)
    out = hopfield_assoc(spec, None, query, patterns).data[0, 0]
    w = attention_weights(spec, None, query, patterns)[0, 0, 0, target]
    cos = out @ patterns[0, target] / np.linalg.norm(out)
    print(f"{beta:5.1f}   {w:16.4f}   {cos:22.4f}")

mean = patterns[0].mean(axis=0)
out0 = hopfield_assoc(HopfieldSpec(d, 1, beta=0.0, identity_projections=True), None, query, patterns).data[0, 0]
print(f"beta = 0 output equals the pattern mean: {np.allclose(out0, mean)}")
