"""The reverse-mode engine under everything else, checked against finite differences.

    python demos/02_autodiff.py
"""

import numpy as np

from sitevae import ndgrad as nd
from sitevae.ndgrad import Tensor

rng = np.random.default_rng(0)
x = Tensor(rng.uniform(0, 1, size=(5, 6)))
w1 = Tensor(rng.normal(size=(6, 4)) * 0.5, requires_grad=True)
w2 = Tensor(rng.normal(size=(4, 6)) * 0.5, requires_grad=True)


def loss():
    h = nd.relu(nd.matmul(x, w1))
    return nd.scale(nd.sum_all(nd.square(nd.sigmoid(nd.matmul(h, w2)) - x)), 0.5)


loss().backward()
analytic = w1.grad.copy()

numeric = np.zeros_like(w1.data)
base = w1.data.copy()
for i in np.ndindex(base.shape):
    for sign in (1, -1):
        bumped = base.copy()
        bumped[i] += sign * 1e-6
        w1.data = Tensor(bumped).data
        numeric[i] += sign * loss().item() / 2e-6
w1.data = Tensor(base).data

err = np.abs(analytic - numeric).max() / np.abs(numeric).max()
print(f"two-layer autoencoder, dL/dW1 max relative error vs central differences: {err:.2e}")
