"""The scale-enhancement pathway over a four-level backbone pyramid.

A content-aware upsampler predicts a normalized 5x5 reassembly kernel
for every output pixel and synthesizes an extra stride-2 bottom level;
all five levels are averaged at the middle resolution, refined by a
global-context block, and recovered with raw-level residuals.

Run: python3 demos/03_scale_enhancement.py
"""

import numpy as np

from maisenet.model import init_weights
from maisenet.se import (
    ContentAwareUpsampler,
    GlobalContextBlock,
    Pyramid,
    ScaleEnhancement,
    balance_levels,
    reconstruct_pyramid,
)
from maisenet.tensor import Tensor

rng = np.random.default_rng(11)
backbone = Pyramid({
    level: Tensor(rng.standard_normal((1, 4, 64 >> (level - 2), 64 >> (level - 2))))
    for level in range(2, 6)
})
print("backbone levels:", {l: backbone[l].shape for l in backbone.level_indices()})

print()
print("=" * 70)
print("1) Content-aware upsampling doubles the finest level")
print("=" * 70)
carafe = ContentAwareUpsampler(4)
init_weights(carafe, 11)
kernels = carafe.kernels(backbone[2])
sums = kernels.data.sum(axis=1)
print(f"predicted kernels {kernels.shape}: non-negative, per-pixel sums in "
      f"[{sums.min():.15f}, {sums.max():.15f}]")
bottom = carafe(backbone[2])
print("generated bottom level:", bottom.shape, "(stride 2)")

print()
print("=" * 70)
print("2) Balance all five levels at the middle resolution")
print("=" * 70)
levels = dict(backbone.levels)
levels[1] = bottom
full = Pyramid(levels)
balanced = balance_levels(full)
print("balanced map:", balanced.shape)
flat = Pyramid({
    level: Tensor(np.full((1, 4, 64 >> (level - 1), 64 >> (level - 1)), float(level)))
    for level in range(1, 6)
})
print("constant levels 1..5 average to exactly",
      float(np.unique(balance_levels(flat).data)[0]))

print()
print("=" * 70)
print("3) Global-context refinement")
print("=" * 70)
gcb = GlobalContextBlock(4)
init_weights(gcb, 11)
refined, weights = gcb.forward_with_context_weights(balanced)
print(f"context weights sum to {weights.data.sum(axis=2).ravel()[0]:.15f}")
residual = refined.data - balanced.data
print("the residual is one value per (instance, channel): spatial variance",
      residual.var(axis=(2, 3)).max())

print()
print("=" * 70)
print("4) Recovery with raw-level residuals")
print("=" * 70)
rebuilt = reconstruct_pyramid(full, refined)
print("recovered strides:", rebuilt.strides())
zero = reconstruct_pyramid(full, Tensor(np.zeros(refined.shape)))
print("a zero refined map returns the input pyramid bit-exactly:",
      all(np.array_equal(zero[l].data, full[l].data) for l in range(1, 6)))

print()
print("=" * 70)
print("5) The whole pathway in one call")
print("=" * 70)
se = ScaleEnhancement(channels=4)
init_weights(se, 11)
enhanced = se(backbone)
for level in enhanced.level_indices():
    print(f"B{level}: {enhanced[level].shape} stride {enhanced.strides()[level]}")
