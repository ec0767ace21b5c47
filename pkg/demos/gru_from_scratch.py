"""A GRU cell by hand, checked against finite differences.

Run with ``python demos/gru_from_scratch.py``.
"""

import numpy as np

from evcap import nn_core as nn
from evcap.gradcheck import numerical_gradient, relative_error

rng = nn.seeded_rng(0)

# A cell mapping 3 inputs to 5 hidden units.  Weights are Glorot-uniform, biases zero.
cell = nn.GruCellParams.init(3, 5, rng)
print("parameters per cell:", cell.n_params)  # 3 * (3*5 + 5*5 + 5) = 135

x = rng.normal(size=3)
h = np.zeros(5)
h_new, _ = nn.gru_cell_forward(cell, x, h)
print("h after one step:", np.round(h_new, 4))

# With every weight at zero both gates sit at 0.5 and the state halves each step.
zero = nn.GruCellParams.zeros(3, 5)
h0 = np.full(5, 0.8)
print("zero cell:", nn.gru_cell_forward(zero, x, h0)[0])  # 0.4 everywhere

# Unroll over a short sequence; a mask freezes the second sequence after step 2.
seq = rng.normal(size=(4, 2, 3))  # (T, batch, features)
mask = np.array([[1, 1], [1, 1], [1, 0], [1, 0]], dtype=float)
out, layer_cache = nn.gru_layer_forward(cell, seq, mask=mask)
print("masked rows equal:", np.array_equal(out[1, 1], out[3, 1]))

# Reduce the outputs to a scalar with a random projection and compare gradients.
w = rng.normal(size=out.shape)
grads, grad_seq, _ = nn.gru_layer_backward(layer_cache, w)


def loss():
    return float(np.sum(w * nn.gru_layer_forward(cell, seq, mask=mask)[0]))


for name in cell.NAMES:
    err = relative_error(getattr(grads, name), numerical_gradient(loss, getattr(cell, name)))
    print(f"{name:4s} relative error {err:.1e}")
print("inputs relative error", f"{relative_error(grad_seq, numerical_gradient(loss, seq)):.1e}")

# A bidirectional layer concatenates a forward pass and a pass over the reversed
# sequence.  On a palindrome the two halves mirror each other when the cells match.
half = rng.normal(size=(3, 3))
pal = np.concatenate([half, half[::-1]])
bi, _ = nn.bigru_layer_forward(cell, cell, pal)
print("palindrome symmetry:", np.allclose(bi[:, :5], bi[::-1, 5:]))
