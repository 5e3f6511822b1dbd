"""
Checking gradients by finite differences
========================================

Every layer in the package carries a hand-written backward pass. The way to
trust one is to compare it against central finite differences: nudge one
weight by +-h, difference the loss, and the analytic gradient must agree.
"""

import numpy as np

from enhancodec import nn
from enhancodec.nn import GRUParams, Parameter, Tape, Tensor

rng = np.random.default_rng(0)

# A miniature network: GRU over 6 steps, then a dense readout.
gru = GRUParams("demo.gru", input_dim=4, hidden=5, rng=rng)
w_out = Parameter(rng.normal(size=(5, 3)) * 0.3, "demo.out.w")
x = Tensor(rng.normal(size=(2, 6, 4)))
targets = rng.integers(0, 3, size=(2, 6))


def loss(tape=None):
    h = nn.gru_sequence(x, gru, tape=tape)
    logits = nn.dense(h, w_out, tape=tape)
    return nn.softmax_cross_entropy(logits, targets, tape=tape)


# Analytic gradients: record on a tape, backprop from the scalar loss.
tape = Tape()
tape.backward(loss(tape))

# Numeric gradients: central differences on a few random coordinates.
h = 1e-6
worst = 0.0
for param in [gru.w, gru.u_zr, gru.u_c, gru.b, w_out]:
    flat = rng.choice(param.data.size, size=3, replace=False)
    for k in flat:
        idx = np.unravel_index(k, param.data.shape)
        keep = param.data[idx]
        param.data[idx] = keep + h
        up = float(loss().data)
        param.data[idx] = keep - h
        down = float(loss().data)
        param.data[idx] = keep
        numeric = (up - down) / (2 * h)
        analytic = param.grad[idx]
        rel = abs(analytic - numeric) / max(1.0, abs(numeric))
        worst = max(worst, rel)
        print(f"{param.name:12s}[{k:3d}]  analytic {analytic:+.6f}  "
              f"numeric {numeric:+.6f}  rel err {rel:.2e}")

print(f"\nworst relative error: {worst:.2e} (tolerance 1e-4)")
assert worst < 1e-4
