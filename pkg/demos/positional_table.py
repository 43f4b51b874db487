"""The sinusoidal position table added to the history sequence.

Even columns hold sin(pos / 10000^(2i/H)) and odd columns the matching cosine,
so row 0 alternates 0, 1 and low columns oscillate fastest. Without it the
Hopfield branch cannot tell the order of the history samples apart.
"""

import numpy as np

from qmem import posenc_build

table = posenc_build(max_len=6, hidden_size=8).table
np.set_printoptions(precision=3, suppress=True)
print("rows = positions 0..5, columns = feature index 0..7")
print(table)
print("row 0:", table[0])
print("column 0 equals sin(pos):", np.array_equal(table[:, 0], np.sin(np.arange(6.0))))
