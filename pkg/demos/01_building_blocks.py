"""A tour of the kernel layer: what the primitives do and how every
analytic gradient is verified against central finite differences.

Run: python3 demos/01_building_blocks.py
"""

import numpy as np

from maisenet import ops
from maisenet.gradcheck import grad_check
from maisenet.model import init_weights
from maisenet.nn import Conv2d
from maisenet.tensor import Tensor

print("=" * 70)
print("Dense float64 tensors, NCHW layout, deterministic kernels")
print("=" * 70)

# A convolution is plain cross-correlation. With the 1x3 kernel [1, 0, 1]
# sliding over [1, 2, 3, 4] under one pixel of zero padding, each output
# is the sum of its two flanking inputs:
conv = Conv2d(1, 1, 3, padding=1)
conv.weight.data[0, 0, 1, :] = [1.0, 0.0, 1.0]
x = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 1, 4))
print("\nconv([1,2,3,4], kernel [1,0,1], pad 1) =", conv(x).data.ravel())

# Dilation with rate r reads every r-th sample. The same numbers fall out
# of a dense kernel inflated with zeros, which is how the tests pin it:
dilated = Conv2d(1, 1, 3, dilation=2, padding=2)
dilated.weight.data[...] = 1.0
wide = Tensor(np.arange(8.0).reshape(1, 1, 1, 8) * 0 + 1.0)
print("dilated conv over a constant map stays flat:",
      np.unique(dilated(Tensor(np.ones((1, 1, 5, 8)))).data[:, :, 2:-2, 2:-2]))

# Bilinear upsampling uses half-pixel sample centers: position i samples
# the source at (i + 0.5) / factor - 0.5, with replicated borders.
edge = Tensor(np.array([0.0, 1.0]).reshape(1, 1, 1, 2))
print("bilinear [0, 1] x2 ->", ops.upsample(edge, 2, "bilinear").data[0, 0, 0])

# Softmax normalizes with max subtraction, so huge logits are safe:
hot = ops.softmax_axis(Tensor(np.array([1000.0, 0.0]).reshape(1, 2, 1, 1)), 1)
print("softmax([1000, 0]) ->", hot.data.ravel())

print("\n" + "=" * 70)
print("Gradient checking: analytic backward vs central differences")
print("=" * 70)

# Every kernel carries a hand-written backward rule. The checker perturbs
# each coordinate by +/-h, rebuilds a scalar probe loss, and compares the
# finite difference against the backward pass. A linear map has zero
# truncation error, so the agreement is essentially exact:
rng = np.random.default_rng(0)
linear = Conv2d(3, 3, 1)
init_weights(linear, 0)
probe = Tensor(rng.standard_normal((1, 3, 4, 4)), requires_grad=True)
result = grad_check(linear, (probe,), seed=0, tolerance=1e-9, step=1e-2)
print(f"\n1x1 conv: max relative error {result.max_relative_error:.2e} "
      f"over {result.probed_count} coordinates -> pass={result.passed}")

# Piecewise-linear kernels (relu, max pooling) record which linear piece
# each evaluation used; a probe that crosses a kink is skipped because a
# finite difference across the kink measures nothing:
kinked = Tensor(np.array([[0.5, 1e-7], [-0.5, 2.0]]), requires_grad=True)


class _Relu:
    def named_parameters(self):
        return []

    def __call__(self, t):
        return ops.relu(t)


result = grad_check(_Relu(), (kinked,), seed=0, tolerance=1e-6)
print(f"relu with one near-kink value: probed {result.probed_count}, "
      f"skipped {result.skipped_kinks} kink crossing(s), pass={result.passed}")
