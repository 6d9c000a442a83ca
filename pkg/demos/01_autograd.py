"""Tape autograd on a small conv + GELU graph, checked against finite differences."""

import numpy as np

from mren.autograd import PRIMITIVES, Tape, Tensor, check_primitive, conv2d, gelu, sum_all

rng = np.random.default_rng(0)
x = Tensor(rng.standard_normal((1, 3, 6, 6)), requires_grad=True)
w = Tensor(rng.standard_normal((4, 3, 3, 3)), requires_grad=True)

# every primitive called inside the context is recorded in order
with Tape() as tape:
    loss = sum_all(gelu(conv2d(x, w)))
print("loss", loss.item(), "nodes on tape", len(tape.nodes))
tape.backward(loss)
print("dL/dw shape", w.grad.shape, "norm", np.linalg.norm(w.grad))

# central differences in double precision, five seeds per primitive
for name in sorted(PRIMITIVES):
    err = max(check_primitive(name, (2, 4, 6, 6), seed=s) for s in range(5))
    print(f"{name:18s} max rel err {err:.2e}")
