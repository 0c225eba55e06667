"""Gradient-check registry: one entry per differentiable block, each with
its desk-scale fixture, tolerance and probe budget.

Linear kernels check at 1e-6. Because their finite-difference truncation
error is exactly zero, those entries probe with a larger step (1e-2):
the step only controls roundoff, and the default 1e-5 step leaves a
roundoff floor above 1e-6 on small-gradient coordinates. Everything
containing a curvature (sigmoid, softmax, normalization, whole blocks)
keeps the default step and checks at the block tolerance. Large blocks
probe a seeded subset of coordinates to keep the whole suite fast.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .config import RunConfig
from .gradcheck import GradCheckResult, grad_check
from .mai import Aspp, Cbam, Csab, MaskInteractionChain
from .mai import ChainConfig
from .model import init_weights
from .nn import Conv2d, Module
from .se import (
    CarafeConfig,
    ContentAwareUpsampler,
    GcbConfig,
    GlobalContextBlock,
    Pyramid,
    ScaleEnhancement,
    balance_levels,
    reconstruct_pyramid,
)
from .tensor import Tensor

__all__ = ["BLOCK_NAMES", "OP_NAMES", "run_block_check", "run_op_check"]

LINEAR_TOL = 1e-6


def _rand(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _mini_pyramid(rng, channels=4, base=16):
    """Backbone levels 2..5 with the finest at base x base."""
    return {
        level: _rand(rng, 1, channels, base >> (level - 2), base >> (level - 2))
        for level in range(2, 6)
    }


class _FnBlock(Module):
    """Adapter giving a plain function the block protocol."""

    def __init__(self, fn):
        super().__init__()
        object.__setattr__(self, "fn", fn)

    def forward(self, *inputs):
        return self.fn(*inputs)


# ---------------------------------------------------------------------------
# primitive kernels
# ---------------------------------------------------------------------------

def _op_conv_plain(rng, seed):
    conv = Conv2d(3, 5, 3, padding=1)
    init_weights(conv, seed)
    return conv, (_rand(rng, 2, 3, 6, 6),), LINEAR_TOL


def _op_conv_dilated(rng, seed):
    conv = Conv2d(2, 4, 3, dilation=3, padding=3)
    init_weights(conv, seed)
    return conv, (_rand(rng, 1, 2, 9, 9),), LINEAR_TOL


def _op_conv_grouped(rng, seed):
    conv = Conv2d(4, 6, 3, groups=2, padding=1)
    init_weights(conv, seed)
    return conv, (_rand(rng, 1, 4, 5, 5),), LINEAR_TOL


def _op_matmul(rng, seed):
    return _FnBlock(ops.matmul_batched), (_rand(rng, 2, 4, 3), _rand(rng, 2, 3, 5)), LINEAR_TOL


def _op_pixel_shuffle(rng, seed):
    return _FnBlock(lambda x: ops.pixel_shuffle(x, 2)), (_rand(rng, 1, 8, 3, 3),), LINEAR_TOL


def _op_channel_shuffle(rng, seed):
    return _FnBlock(lambda x: ops.channel_shuffle(x, 2)), (_rand(rng, 1, 6, 4, 4),), LINEAR_TOL


def _op_upsample_nearest(rng, seed):
    return _FnBlock(lambda x: ops.upsample(x, 2, "nearest")), (_rand(rng, 1, 3, 4, 4),), LINEAR_TOL


def _op_upsample_bilinear(rng, seed):
    return _FnBlock(lambda x: ops.upsample(x, 2, "bilinear")), (_rand(rng, 1, 3, 4, 4),), LINEAR_TOL


def _op_avg_pool(rng, seed):
    return _FnBlock(lambda x: ops.global_pool(x, "avg")), (_rand(rng, 2, 3, 4, 4),), LINEAR_TOL


def _op_maxpool(rng, seed):
    return _FnBlock(lambda x: ops.maxpool2d(x, 2, 2)), (_rand(rng, 1, 3, 6, 6),), 1e-4


def _op_max_pool_global(rng, seed):
    return _FnBlock(lambda x: ops.global_pool(x, "max")), (_rand(rng, 2, 3, 4, 4),), 1e-4


def _op_relu(rng, seed):
    # Keep values away from the kink so the example tolerance holds.
    data = rng.standard_normal((2, 3, 4, 4))
    data = np.where(np.abs(data) < 0.1, data + 0.3, data)
    return _FnBlock(ops.relu), (Tensor(data, requires_grad=True),), 1e-6


def _op_sigmoid(rng, seed):
    return _FnBlock(ops.sigmoid), (_rand(rng, 2, 3, 4, 4),), 1e-4


def _op_softmax(rng, seed):
    return _FnBlock(lambda x: ops.softmax_axis(x, 1)), (_rand(rng, 2, 5, 3, 3),), 1e-4


def _op_layernorm(rng, seed):
    gamma = Tensor(rng.standard_normal((3, 1, 1)), requires_grad=True)
    beta = Tensor(rng.standard_normal((3, 1, 1)), requires_grad=True)
    block = _FnBlock(lambda x: ops.layernorm(x, gamma, beta))
    params = [("gamma", gamma), ("beta", beta)]
    return block, (_rand(rng, 2, 3, 4, 4),), 1e-4, params


OP_BUILDERS = {
    "conv2d": _op_conv_plain,
    "conv2d-dilated": _op_conv_dilated,
    "conv2d-grouped": _op_conv_grouped,
    "matmul": _op_matmul,
    "pixel-shuffle": _op_pixel_shuffle,
    "channel-shuffle": _op_channel_shuffle,
    "upsample-nearest": _op_upsample_nearest,
    "upsample-bilinear": _op_upsample_bilinear,
    "global-avg-pool": _op_avg_pool,
    "maxpool": _op_maxpool,
    "global-max-pool": _op_max_pool_global,
    "relu": _op_relu,
    "sigmoid": _op_sigmoid,
    "softmax": _op_softmax,
    "layernorm": _op_layernorm,
}
OP_NAMES = tuple(OP_BUILDERS)

# Kernels that are (piecewise) linear in values: zero truncation error, so
# the probe step only controls roundoff. Kinks are guarded by the pattern
# trace either way.
LINEAR_STEP = 1e-2
_PIECEWISE_LINEAR_OPS = frozenset(
    name for name in OP_NAMES if name not in ("sigmoid", "softmax", "layernorm")
)


# ---------------------------------------------------------------------------
# blocks (registry keys match the command-line grammar)
# ---------------------------------------------------------------------------

def _blk_aspp(rng, seed, cfg):
    block = Aspp(4, cfg.aspp_rates)
    init_weights(block, seed)
    return block, (_rand(rng, 1, 4, 14, 14),), cfg.tolerance


def _blk_nlb(rng, seed, cfg):
    from .mai import NonLocalBlock

    block = NonLocalBlock(8)
    init_weights(block, seed)
    return block, (_rand(rng, 1, 8, 6, 6),), cfg.tolerance


def _blk_cbam(rng, seed, cfg):
    block = Cbam(16, reduction=cfg.cbam_reduction, spatial_kernel=cfg.cbam_spatial_kernel)
    init_weights(block, seed)
    return block, (_rand(rng, 1, 16, 6, 6),), cfg.tolerance


def _blk_csab(rng, seed, cfg):
    block = Csab(8, reduction=cfg.cbam_reduction, spatial_kernel=cfg.cbam_spatial_kernel)
    init_weights(block, seed)
    return block, (_rand(rng, 1, 8, 8, 8), _rand(rng, 1, 8, 8, 8)), cfg.tolerance


def _blk_carafe(rng, seed, cfg):
    block = ContentAwareUpsampler(
        4,
        CarafeConfig(
            factor=2,
            k_up=cfg.carafe_k_up,
            k_encoder=cfg.carafe_k_encoder,
            mid_channels=cfg.carafe_mid_channels,
        ),
    )
    init_weights(block, seed)
    return block, (_rand(rng, 1, 4, 6, 6),), cfg.tolerance


def _blk_fbo(rng, seed, cfg):
    levels = _mini_pyramid(rng, channels=4, base=16)
    block = _FnBlock(lambda *ts: balance_levels(_assemble_pyramid(ts, full=True)))
    p1 = _rand(rng, 1, 4, 32, 32)
    inputs = (p1,) + tuple(levels[k] for k in sorted(levels))
    return block, inputs, cfg.tolerance


def _assemble_pyramid(tensors, full: bool):
    start = 1 if full else 2
    return Pyramid({start + i: t for i, t in enumerate(tensors)})


def _blk_gcb(rng, seed, cfg):
    block = GlobalContextBlock(8, GcbConfig(ratio=cfg.gcb_ratio, min_width=cfg.gcb_min_width))
    init_weights(block, seed)
    return block, (_rand(rng, 1, 8, 5, 5),), cfg.tolerance


def _blk_reconstruct(rng, seed, cfg):
    levels = _mini_pyramid(rng, channels=4, base=16)
    p1 = _rand(rng, 1, 4, 32, 32)
    refined = _rand(rng, 1, 4, 8, 8)

    def fn(*ts):
        pyr = _assemble_pyramid(ts[:-1], full=True)
        rebuilt = reconstruct_pyramid(pyr, ts[-1])
        return tuple(rebuilt.levels.values())

    inputs = (p1,) + tuple(levels[k] for k in sorted(levels)) + (refined,)
    return _FnBlock(fn), inputs, cfg.tolerance


def _blk_chain(rng, seed, cfg):
    block = MaskInteractionChain(
        ChainConfig(
            channels=8,
            roi_size=cfg.roi_size,
            stages=cfg.stages,
            rates=tuple(cfg.aspp_rates),
            cbam_reduction=cfg.cbam_reduction,
            cbam_spatial_kernel=cfg.cbam_spatial_kernel,
        )
    )
    init_weights(block, seed)
    return block, (_rand(rng, 1, 8, cfg.roi_size, cfg.roi_size),), cfg.tolerance


def _blk_se(rng, seed, cfg):
    block = ScaleEnhancement(
        channels=4,
        carafe=CarafeConfig(
            factor=2,
            k_up=cfg.carafe_k_up,
            k_encoder=cfg.carafe_k_encoder,
            mid_channels=cfg.carafe_mid_channels,
        ),
        gcb=GcbConfig(ratio=cfg.gcb_ratio, min_width=cfg.gcb_min_width),
    )
    init_weights(block, seed)
    levels = _mini_pyramid(rng, channels=4, base=16)

    def fn(*ts):
        rebuilt = block(_assemble_pyramid(ts, full=False))
        return tuple(rebuilt.levels.values())

    wrapper = _FnBlock(fn)
    params = list(block.named_parameters())
    inputs = tuple(levels[k] for k in sorted(levels))
    return wrapper, inputs, cfg.tolerance, params


BLOCK_BUILDERS = {
    "aspp": _blk_aspp,
    "nlb": _blk_nlb,
    "cbam": _blk_cbam,
    "csab": _blk_csab,
    "carafe": _blk_carafe,
    "fbo": _blk_fbo,
    "gcb": _blk_gcb,
    "reconstruct": _blk_reconstruct,
    "chain": _blk_chain,
    "se": _blk_se,
}
BLOCK_NAMES = tuple(BLOCK_BUILDERS)

DEFAULT_PROBES = 600


def _unpack(built):
    if len(built) == 4:
        return built
    block, inputs, tolerance = built
    return block, inputs, tolerance, None


def run_op_check(name: str, seed: int = 0, max_probes: int | None = None) -> GradCheckResult:
    rng = np.random.default_rng(seed + 1)
    block, inputs, tolerance, params = _unpack(OP_BUILDERS[name](rng, seed))
    step = LINEAR_STEP if name in _PIECEWISE_LINEAR_OPS else 1e-5
    return grad_check(
        block, inputs, params, seed=seed, tolerance=tolerance, step=step,
        max_probes=max_probes,
    )


def run_block_check(
    name: str,
    seed: int = 0,
    config: RunConfig | None = None,
    max_probes: int | None = DEFAULT_PROBES,
    tolerance: float | None = None,
) -> GradCheckResult:
    cfg = (config or RunConfig()).validate()
    rng = np.random.default_rng(seed + 1)
    built = BLOCK_BUILDERS[name](rng, seed, cfg)
    block, inputs, tol, params = _unpack(built)
    if tolerance is not None:
        tol = tolerance
    return grad_check(
        block, inputs, params, seed=seed, tolerance=tol, max_probes=max_probes
    )
