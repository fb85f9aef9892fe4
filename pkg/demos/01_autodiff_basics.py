#!/usr/bin/env python3
"""A tour of the minimal reverse-mode tape.

The library differentiates exactly the operation set its loss chain needs:
matrix products, a scaled row softmax, max-entry extraction, elementwise
arithmetic, and a few pointwise nonlinearities. This script builds a tiny
computation, runs the backward sweep, and double-checks one gradient with
central finite differences.
"""

import numpy as np

from loco import diffmath as dm
from loco.diffmath import Tape

# Forward pass: a 3x4 "latent", a frozen projection, a row-stochastic map.
rng = np.random.default_rng(0)
tape = Tape()
z = tape.leaf(rng.standard_normal((3, 4)))
w = tape.constant(rng.standard_normal((4, 5)))

attn = dm.row_softmax(dm.matmul(z, w), scale=2.0)
print("attention rows sum to:", attn.value.sum(axis=1))

# A scalar objective: squared distance of the first row's max from 1.
peak = dm.max_norm(attn)
loss = dm.square(1.0 - peak)
print("loss value:", float(loss.value))

# One reverse sweep accumulates d(loss)/d(node) for every recorded node.
grads = tape.backward(loss)
g = grads[z]
print("gradient shape:", g.shape, " largest entry:", np.abs(g).max())

# Independent check: central differences on a fresh forward evaluation.
def forward(z_value):
    t = Tape()
    a = dm.row_softmax(dm.matmul(t.leaf(z_value), t.constant(w.value)), 2.0)
    return float(dm.square(1.0 - dm.max_norm(a)).value)

h = 1e-5
numeric = np.zeros_like(z.value)
flat = z.value.copy()
for i in range(flat.size):
    up = flat.copy(); up.flat[i] += h
    down = flat.copy(); down.flat[i] -= h
    numeric.flat[i] = (forward(up) - forward(down)) / (2 * h)

gap = np.abs(g - numeric).max() / max(np.abs(g).max(), 1e-12)
print(f"max relative gap vs finite differences: {gap:.2e}")

# Constants and detached values block gradient flow.
tape2 = Tape()
x = tape2.leaf([1.0, 2.0, 3.0])
frozen = dm.detach(dm.square(x))
g2 = tape2.backward(dm.total(x * frozen))[x]
print("gradient with a detached factor (equals the frozen values):", g2)
