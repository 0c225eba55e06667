"""Scale-enhancement pathway over a feature pyramid.

A content-aware upsampler generates an extra bottom level from the
finest backbone level, all five levels are rescaled to the middle level
and averaged, a global-context block refines the average, and the
refined map is rescaled back with a raw-level residual at every level.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import ops
from .nn import Conv2d, LayerNorm, Module
from .tensor import ShapeError, Tensor

__all__ = [
    "CarafeConfig",
    "ContentAwareUpsampler",
    "GcbConfig",
    "GlobalContextBlock",
    "Pyramid",
    "ScaleEnhancement",
    "balance_levels",
    "reconstruct_pyramid",
    "rescale_between_levels",
]

MIDDLE_LEVEL = 3


class Pyramid:
    """Ordered per-level feature maps; level l has stride 2**l.

    Adjacent levels must differ by exactly 2x in each spatial extent and
    all levels share batch and channel extents.
    """

    def __init__(self, levels: dict[int, Tensor]):
        if not levels:
            raise ShapeError("pyramid: no levels")
        keys = sorted(levels)
        if keys != list(range(keys[0], keys[-1] + 1)):
            raise ShapeError(f"pyramid: levels {keys} are not contiguous")
        first = levels[keys[0]]
        for a, b in zip(keys, keys[1:]):
            ta, tb = levels[a], levels[b]
            if ta.shape[0] != tb.shape[0] or ta.shape[1] != tb.shape[1]:
                raise ShapeError(
                    f"pyramid: levels {a} and {b} disagree on batch/channel extents"
                )
            if ta.shape[2] != 2 * tb.shape[2] or ta.shape[3] != 2 * tb.shape[3]:
                raise ShapeError(
                    f"pyramid: level {a} spatial {ta.shape[2:]} is not exactly twice "
                    f"level {b} spatial {tb.shape[2:]}"
                )
        self.levels = {k: levels[k] for k in keys}
        self.channels = first.shape[1]

    def __getitem__(self, level: int) -> Tensor:
        if level not in self.levels:
            raise ShapeError(f"pyramid: missing level {level}")
        return self.levels[level]

    def __contains__(self, level: int) -> bool:
        return level in self.levels

    def level_indices(self) -> list[int]:
        return list(self.levels)

    def strides(self) -> dict[int, int]:
        return {level: 2 ** level for level in self.levels}


@dataclass
class CarafeConfig:
    """Content-aware upsampler hyperparameters. The kernel-prediction head
    emits factor^2 * k_up^2 channels; compressed channels are clamped to
    the input channel count."""

    factor: int = 2
    k_up: int = 5
    k_encoder: int = 3
    mid_channels: int = 64


class ContentAwareUpsampler(Module):
    """Upsample by predicting a normalized reassembly kernel per output pixel.

    A 1x1 conv compresses the input, a small conv predicts factor^2*k_up^2
    kernel logits per source pixel, depth-to-space spreads them over the
    upsampled grid, and a softmax over the k_up^2 taps normalizes each
    kernel. Every output pixel is then the kernel-weighted sum of the
    k_up x k_up input neighborhood around its source pixel (zero-padded
    borders).
    """

    def __init__(self, channels: int, config: CarafeConfig | None = None):
        super().__init__()
        cfg = config or CarafeConfig()
        if cfg.factor < 1:
            raise ShapeError("content-aware upsampler: factor must be >= 1")
        if cfg.k_up % 2 != 1:
            raise ShapeError(f"content-aware upsampler: k_up {cfg.k_up} must be odd")
        mid = min(cfg.mid_channels, channels)
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "config", cfg)
        self.compress = Conv2d(channels, mid, 1)
        self.encoder = Conv2d(
            mid,
            cfg.factor * cfg.factor * cfg.k_up * cfg.k_up,
            cfg.k_encoder,
            padding=cfg.k_encoder // 2,
        )

    def kernels(self, x: Tensor) -> Tensor:
        """Per-output-pixel reassembly kernels (N, k_up^2, fH, fW); each
        kernel is non-negative and sums to 1 over the tap axis."""
        logits = self.encoder(self.compress(x))
        spread = ops.pixel_shuffle(logits, self.config.factor)
        return ops.softmax_axis(spread, axis=1)

    def forward(self, x: Tensor) -> Tensor:
        out, _ = self.forward_with_kernels(x)
        return out

    def forward_with_kernels(self, x: Tensor):
        if x.shape[1] != self.channels:
            raise ShapeError(
                f"content-aware upsampler: channel axis extent {x.shape[1]} does not "
                f"match configured {self.channels}"
            )
        cfg = self.config
        kernels = self.kernels(x)
        n, c, h, w = x.shape
        pad = cfg.k_up // 2
        padded = ops.pad2d(x, (pad, pad, pad, pad))
        out = None
        # Tap order is row-major over (dy, dx); the kernel channel emitted by
        # the encoder at index (dy+pad)*k_up + (dx+pad) weights tap (dy, dx).
        for tap in range(cfg.k_up * cfg.k_up):
            dy, dx = divmod(tap, cfg.k_up)
            shifted = ops.narrow(ops.narrow(padded, 2, dy, h), 3, dx, w)
            spread = ops.upsample(shifted, cfg.factor, "nearest")
            weight = ops.narrow(kernels, 1, tap, 1)
            term = ops.mul(spread, weight)
            out = term if out is None else ops.add(out, term)
        return out, kernels


def rescale_between_levels(x: Tensor, from_level: int, to_level: int) -> Tensor:
    """Move a map between pyramid levels: repeated 2x bilinear steps toward
    finer levels, repeated 2x max-pool steps toward coarser ones."""
    if to_level < from_level:
        for _ in range(from_level - to_level):
            x = ops.upsample(x, 2, "bilinear")
    else:
        for _ in range(to_level - from_level):
            x = ops.maxpool2d(x, 2, 2)
    return x


def balance_levels(pyramid: Pyramid) -> Tensor:
    """Average all five levels at the middle level's resolution.

    Levels finer than the middle are max-pooled down; coarser levels are
    bilinearly upsampled. The summation order is fixed (level 1 to 5).
    """
    for level in range(1, 6):
        if level not in pyramid:
            raise ShapeError(f"level balance: missing pyramid level {level}")
    total = None
    for level in range(1, 6):
        aligned = rescale_between_levels(pyramid[level], level, MIDDLE_LEVEL)
        total = aligned if total is None else ops.add(total, aligned)
    return ops.div_scalar(total, 5.0)


@dataclass
class GcbConfig:
    """Global-context block hyperparameters; the bottleneck width is
    max(floor(channels * ratio), min_width)."""

    ratio: float = 1.0 / 16.0
    min_width: int = 4


class GlobalContextBlock(Module):
    """Global-context refinement with a bottleneck transform and residual.

    A 1x1 conv scores every position; the softmax-normalized scores pool
    the input into one context vector per instance, which runs through
    1x1 conv -> layernorm -> relu -> 1x1 conv and is broadcast-added back
    onto the input. Zeroing the second transform makes the block an exact
    identity.
    """

    def __init__(self, channels: int, config: GcbConfig | None = None):
        super().__init__()
        cfg = config or GcbConfig()
        width = max(int(channels * cfg.ratio), cfg.min_width)
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "config", cfg)
        object.__setattr__(self, "width", width)
        self.context = Conv2d(channels, 1, 1)
        self.transform1 = Conv2d(channels, width, 1)
        self.norm = LayerNorm((width, 1, 1))
        self.transform2 = Conv2d(width, channels, 1)

    def forward(self, x: Tensor) -> Tensor:
        out, _ = self.forward_with_context_weights(x)
        return out

    def forward_with_context_weights(self, x: Tensor):
        if x.shape[1] != self.channels:
            raise ShapeError(
                f"global-context block: channel axis extent {x.shape[1]} does not "
                f"match configured {self.channels}"
            )
        n, c, h, w = x.shape
        scores = ops.reshape(self.context(x), (n, 1, h * w))
        weights = ops.softmax_axis(scores, axis=2)
        flat = ops.reshape(x, (n, c, h * w))
        context = ops.matmul_batched(flat, ops.transpose(weights, (0, 2, 1)))
        context = ops.reshape(context, (n, c, 1, 1))
        refined = self.transform2(ops.relu(self.norm(self.transform1(context))))
        return ops.add(x, refined), weights


def reconstruct_pyramid(pyramid: Pyramid, refined: Tensor) -> Pyramid:
    """Recover per-level maps: each level gets its raw map plus the refined
    middle-level map rescaled to that level. A zero refined map returns
    the input pyramid bit-exactly."""
    middle = pyramid[MIDDLE_LEVEL]
    if refined.shape != middle.shape:
        raise ShapeError(
            f"pyramid recovery: refined map shape {refined.shape} does not match "
            f"middle level shape {middle.shape}"
        )
    rebuilt = {}
    for level in pyramid.level_indices():
        aligned = rescale_between_levels(refined, MIDDLE_LEVEL, level)
        rebuilt[level] = ops.add(pyramid[level], aligned)
    return Pyramid(rebuilt)


class ScaleEnhancement(Module):
    """Full pathway: generate the bottom level, balance, refine, recover."""

    def __init__(
        self,
        channels: int = 256,
        carafe: CarafeConfig | None = None,
        gcb: GcbConfig | None = None,
    ):
        super().__init__()
        object.__setattr__(self, "channels", channels)
        self.carafe = ContentAwareUpsampler(channels, carafe)
        self.gcb = GlobalContextBlock(channels, gcb)

    def build_bottom_level(self, p2: Tensor) -> Tensor:
        """Generate the stride-2 bottom level from the finest existing level."""
        return self.carafe(p2)

    def forward(self, backbone: Pyramid) -> Pyramid:
        if backbone.level_indices() != [2, 3, 4, 5]:
            raise ShapeError(
                f"scale enhancement: expected backbone levels [2, 3, 4, 5], "
                f"got {backbone.level_indices()}"
            )
        if backbone.channels != self.channels:
            raise ShapeError(
                f"scale enhancement: channel extent {backbone.channels} does not "
                f"match configured {self.channels}"
            )
        levels = dict(backbone.levels)
        levels[1] = self.build_bottom_level(backbone[2])
        full = Pyramid(levels)
        refined = self.gcb(balance_levels(full))
        return reconstruct_pyramid(full, refined)
