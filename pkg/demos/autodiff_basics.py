"""A tour of the autodiff core: tensors, tapes, gradients, and the
flop counter.

Everything in the package runs on float64 numpy arrays wrapped in
Tensor objects. Operations record themselves on a tape only inside a
Graph context; backward() replays the tape once, in reverse, and
leaves gradients on the leaves.
"""

import numpy as np

from newsrec import autodiff as ad
from newsrec.autodiff import Graph, Tensor, backward

rng = np.random.default_rng(0)

# A leaf that wants gradients, and some fixed data.
w = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
x = Tensor(rng.normal(size=4))

with Graph():
    h = ad.relu(ad.matmul(w, x))          # (3,)
    y = ad.sum_(ad.mul(h, h))             # scalar
    backward(y)

print("y           =", float(y.data))
print("dy/dw shape =", w.grad.shape)

# The same gradient by central finite differences, at the entry with
# the largest analytic gradient.
i, j = np.unravel_index(np.argmax(np.abs(w.grad)), w.grad.shape)
h_step = 1e-6
w.data[i, j] += h_step
with Graph():
    y_plus = ad.sum_(ad.mul(ad.relu(ad.matmul(w, x)),
                            ad.relu(ad.matmul(w, x))))
w.data[i, j] -= 2 * h_step
with Graph():
    y_minus = ad.sum_(ad.mul(ad.relu(ad.matmul(w, x)),
                             ad.relu(ad.matmul(w, x))))
w.data[i, j] += h_step
fd = (float(y_plus.data) - float(y_minus.data)) / (2 * h_step)
print(f"analytic dy/dw[{i},{j}] = {w.grad[i, j]:.8f}")
print(f"numeric  dy/dw[{i},{j}] = {fd:.8f}")

# Outside a Graph nothing is recorded: forward-only evaluation.
z = ad.relu(ad.matmul(w, x))
print("forward-only result:", np.round(z.data, 4))

# The flop counter tallies multiply-adds of the heavy ops.
with ad.count_flops() as c:
    ad.matmul(Tensor(rng.normal(size=(64, 32))),
              Tensor(rng.normal(size=(32, 16))))
print(f"madds for (64x32)@(32x16): {c.madds} "
      f"(expected {64 * 32 * 16})")
