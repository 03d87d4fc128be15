"""
Trusting hand-written gradients
===============================

Every layer's backward pass is compared against central differences.  A
deliberately broken gradient shows what a failure looks like.
"""

import numpy as np

from msrc.numeric_core import BatchNorm, Conv1d, Dense, Sequential, Activation, grad_check

rng = np.random.default_rng(0)
net = Sequential([Conv1d(1, 4, 3, rng, bias=False), BatchNorm(4), Activation("relu"), Conv1d(4, 1, 1, rng)])
x = rng.random((5, 1, 12))
R = rng.normal(size=(5, 1, 12))

params = {f"{name}.{k}": layer.params[k] for name, layer in net.named_layers() for k in layer.params}


def loss_and_grads():
    out = net.forward(x, train=True)
    net.backward(R)
    return float(np.sum(out * R)), {f"{n}.{k}": l.grads[k] for n, l in net.named_layers() for k in l.params}


# %% the real gradients
report = grad_check(loss_and_grads, params, tolerance=1e-4)
print(f"conv-bn-relu-conv: max relative error {report.max_rel_error:.2e}, passed={report.passed}")

# %% a single layer, then the same layer with its weight gradient doubled
dense = Dense(6, 3, "sigmoid", rng)
xd = rng.random((4, 6))
Rd = rng.normal(size=(4, 3))


def dense_grads(scale):
    def fn():
        out = dense.forward(xd)
        dense.backward(Rd)
        return float(np.sum(out * Rd)), {"W": scale * dense.grads["W"], "b": dense.grads["b"]}
    return fn


for scale in (1.0, 2.0):
    rep = grad_check(dense_grads(scale), dense.params, tolerance=1e-4)
    print(f"dense, W gradient x{scale:g}: max relative error {rep.max_rel_error:.2e}, passed={rep.passed}")
