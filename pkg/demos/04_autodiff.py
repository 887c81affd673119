"""The autodiff core: tensors, the tape, and a finite-difference check.

Everything the models do reduces to a handful of differentiable ops on
float64 tensors. backward() walks the recorded graph once in reverse and
accumulates gradients, so a tensor used twice gets both contributions.
"""

import numpy as np

from firecast import nn

rng = np.random.default_rng(0)

# d/dw sum(w * w) = 2w
w = nn.Tensor(rng.normal(size=4), requires_grad=True)
loss = nn.tsum(nn.mul(w, w))
nn.backward(loss)
print("w:      ", np.round(w.data, 3))
print("grad:   ", np.round(w.grad, 3))
print("2w:     ", np.round(2 * w.data, 3))

# A conv -> relu -> pool chain, checked against central differences.
x = nn.Tensor(rng.uniform(-1, 1, size=(1, 2, 4, 4)))
kernel = nn.Tensor(rng.uniform(-1, 1, size=(3, 2, 3, 3)), requires_grad=True)
bias = nn.Tensor(np.zeros(3), requires_grad=True)


def forward():
    return nn.tsum(nn.max_pool2(nn.relu(nn.conv2d(x, kernel, bias))))


loss = forward()
kernel.grad = bias.grad = None
nn.backward(loss)

eps = 1e-5
flat = kernel.data.ravel()
numeric = np.zeros_like(flat)
for i in range(flat.size):
    keep = flat[i]
    flat[i] = keep + eps
    up = forward().item()
    flat[i] = keep - eps
    down = forward().item()
    flat[i] = keep
    numeric[i] = (up - down) / (2 * eps)

err = np.abs(numeric - kernel.grad.ravel()).max() / np.abs(numeric).max()
print(f"\nconv kernel gradient vs central differences: rel err {err:.2e}")

# One convolutional LSTM step: gates are convolutions over [x; h].
weights = nn.ConvLSTMWeights(in_channels=2, hidden=3, rng=rng)
h = nn.Tensor(np.zeros((1, 3, 4, 4)))
c = nn.Tensor(np.zeros((1, 3, 4, 4)))
h2, c2 = nn.conv_lstm_step(x, h, c, weights)
print(f"LSTM step: h {h2.shape}, c {c2.shape}, "
      f"|h| max {np.abs(h2.data).max():.3f}")
