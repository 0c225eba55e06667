"""Mask-interaction pathway: multi-stage mask heads whose features are
refined between stages by dilated context pooling, non-local
self-attention, and a concat-shuffle-attention fusion with the backbone
ROI features.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import ops
from .nn import Conv2d, Module
from .tensor import ShapeError, Tensor

__all__ = [
    "Aspp",
    "Cbam",
    "Csab",
    "MaskHead",
    "MaskInteractionChain",
    "NonLocalBlock",
]


class Aspp(Module):
    """Parallel dilated 3x3 convolutions fused by a 1x1 reduction.

    Each branch is same-spatial (padding equals its dilation rate); the
    concatenated 4C channels are reduced back to C.
    """

    def __init__(self, channels: int, rates=(2, 3, 4, 5)):
        super().__init__()
        rates = tuple(int(r) for r in rates)
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "rates", rates)
        for i, rate in enumerate(rates):
            setattr(self, f"branch{i}", Conv2d(channels, channels, 3, dilation=rate, padding=rate))
        self.reduce = Conv2d(channels * len(rates), channels, 1)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise ShapeError(
                f"aspp: channel axis extent {x.shape[1]} does not match configured {self.channels}"
            )
        branches = [getattr(self, f"branch{i}")(x) for i in range(len(self.rates))]
        return self.reduce(ops.concat(branches, axis=1))


class NonLocalBlock(Module):
    """Self-attention over all spatial positions with a residual add.

    Queries/keys/values are 1x1 projections into a C/4 embedding; the
    attention row for position i is a softmax over positions j of
    theta_i . phi_j, and the attended values are projected back to C and
    added to the input. Zero output projection makes the block an exact
    identity.
    """

    def __init__(self, channels: int):
        super().__init__()
        if channels % 4 != 0:
            raise ShapeError(
                f"non-local block: channel extent {channels} not divisible by 4"
            )
        embed = channels // 4
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "embed", embed)
        self.theta = Conv2d(channels, embed, 1)
        self.phi = Conv2d(channels, embed, 1)
        self.g = Conv2d(channels, embed, 1)
        self.z = Conv2d(embed, channels, 1)

    def _attend(self, x: Tensor):
        n, c, h, w = x.shape
        if c != self.channels:
            raise ShapeError(
                f"non-local block: channel axis extent {c} does not match configured {self.channels}"
            )
        hw = h * w
        theta = ops.transpose(ops.reshape(self.theta(x), (n, self.embed, hw)), (0, 2, 1))
        phi = ops.reshape(self.phi(x), (n, self.embed, hw))
        attention = ops.softmax_axis(ops.matmul_batched(theta, phi), axis=2)
        values = ops.transpose(ops.reshape(self.g(x), (n, self.embed, hw)), (0, 2, 1))
        mixed = ops.matmul_batched(attention, values)
        mixed = ops.reshape(ops.transpose(mixed, (0, 2, 1)), (n, self.embed, h, w))
        out = ops.add(x, self.z(mixed))
        return out, attention

    def forward(self, x: Tensor) -> Tensor:
        out, _ = self._attend(x)
        return out

    def forward_with_attention(self, x: Tensor):
        """Also return the (N, H*W, H*W) attention matrix, rows summing to 1."""
        return self._attend(x)


class Cbam(Module):
    """Channel attention (shared MLP over avg+max pools, sigmoid) followed
    by spatial attention (7x7 conv over channel mean/max of the
    channel-attended map, sigmoid). Both weights lie strictly in (0, 1).
    """

    def __init__(self, channels: int, reduction: int = 16, spatial_kernel: int = 7):
        super().__init__()
        if channels % reduction != 0:
            raise ShapeError(
                f"cbam: channel extent {channels} not divisible by reduction {reduction}"
            )
        if spatial_kernel % 2 != 1:
            raise ShapeError(f"cbam: spatial kernel {spatial_kernel} must be odd")
        hidden = channels // reduction
        object.__setattr__(self, "channels", channels)
        self.mlp1 = Conv2d(channels, hidden, 1)
        self.mlp2 = Conv2d(hidden, channels, 1)
        self.spatial = Conv2d(2, 1, spatial_kernel, padding=spatial_kernel // 2)

    def _mlp(self, pooled: Tensor) -> Tensor:
        return self.mlp2(ops.relu(self.mlp1(pooled)))

    def forward(self, x: Tensor):
        if x.shape[1] != self.channels:
            raise ShapeError(
                f"cbam: channel axis extent {x.shape[1]} does not match configured {self.channels}"
            )
        avg = ops.global_pool(x, "avg")
        mx = ops.global_pool(x, "max")
        w_channel = ops.sigmoid(ops.add(self._mlp(avg), self._mlp(mx)))
        gated = ops.mul(x, w_channel)
        mean_map = ops.mean_axes(gated, axis=1, keepdims=True)
        max_map = ops.amax(gated, axis=1, keepdims=True)
        w_spatial = ops.sigmoid(self.spatial(ops.concat([mean_map, max_map], axis=1)))
        out = ops.mul(gated, w_spatial)
        return w_channel, w_spatial, out


class Csab(Module):
    """Fuse backbone ROI features with previous-stage refined features.

    Concatenate on channels, refine each source separately with a grouped
    3x3 conv (two groups for the two sources), interleave the groups by a
    channel shuffle, then apply channel+spatial attention. The output
    keeps the concatenated 2C channels.
    """

    def __init__(self, channels: int, reduction: int = 16, spatial_kernel: int = 7):
        super().__init__()
        object.__setattr__(self, "channels", channels)
        self.refine = Conv2d(2 * channels, 2 * channels, 3, groups=2, padding=1)
        self.attention = Cbam(2 * channels, reduction=reduction, spatial_kernel=spatial_kernel)

    def forward(self, f_backbone: Tensor, f_prev: Tensor) -> Tensor:
        if f_backbone.shape != f_prev.shape:
            raise ShapeError(
                f"csab: source shapes differ ({f_backbone.shape} vs {f_prev.shape})"
            )
        if f_backbone.shape[1] != self.channels:
            raise ShapeError(
                f"csab: channel axis extent {f_backbone.shape[1]} does not match "
                f"configured {self.channels}"
            )
        stacked = ops.concat([f_backbone, f_prev], axis=1)
        shuffled = ops.channel_shuffle(self.refine(stacked), groups=2)
        _, _, out = self.attention(shuffled)
        return out


class MaskHead(Module):
    """Per-stage mask head: four same-spatial 3x3 conv+relu layers, then a
    2x upsample and a 1x1 single-logit conv (one foreground class)."""

    def __init__(self, channels: int):
        super().__init__()
        for i in range(4):
            setattr(self, f"conv{i}", Conv2d(channels, channels, 3, padding=1))
        self.logit = Conv2d(channels, 1, 1)

    def trunk(self, x: Tensor) -> Tensor:
        for i in range(4):
            x = ops.relu(getattr(self, f"conv{i}")(x))
        return x

    def predict(self, trunk_features: Tensor) -> Tensor:
        return self.logit(ops.upsample(trunk_features, 2, "nearest"))

    def forward(self, x: Tensor) -> Tensor:
        return self.predict(self.trunk(x))


class _Stage(Module):
    """One prediction branch; stages after the first carry the refinement
    blocks that consume the previous stage's trunk features."""

    def __init__(self, channels, rates, reduction, spatial_kernel, refined: bool):
        super().__init__()
        if refined:
            self.aspp = Aspp(channels, rates)
            self.nlb = NonLocalBlock(channels)
            self.csab = Csab(channels, reduction=reduction, spatial_kernel=spatial_kernel)
            self.restore = Conv2d(2 * channels, channels, 1)
        self.head = MaskHead(channels)


@dataclass
class ChainConfig:
    """Hyperparameters of the interaction chain. The per-stage IoU
    thresholds are training metadata only and affect nothing here."""

    channels: int = 256
    roi_size: int = 14
    stages: int = 3
    rates: tuple = (2, 3, 4, 5)
    cbam_reduction: int = 16
    cbam_spatial_kernel: int = 7
    stage_iou_thresholds: tuple = (0.5, 0.6, 0.7)


class MaskInteractionChain(Module):
    """Three-stage mask prediction with inter-stage feature refinement.

    Stage 1 feeds the ROI features straight to its head. Each later stage
    refines the previous stage's trunk features (context pooling then
    self-attention), fuses them with the raw ROI features, restores the
    channel budget with a 1x1 conv, and runs its own head. Returns the
    mask logits of all stages, each at twice the ROI resolution.
    """

    def __init__(self, config: ChainConfig | None = None, **overrides):
        super().__init__()
        if config is None:
            config = ChainConfig(**overrides)
        elif overrides:
            raise TypeError("pass either a ChainConfig or keyword overrides, not both")
        object.__setattr__(self, "config", config)
        if config.stages < 1:
            raise ShapeError("chain: at least one stage is required")
        for i in range(1, config.stages + 1):
            setattr(
                self,
                f"stage{i}",
                _Stage(
                    config.channels,
                    config.rates,
                    config.cbam_reduction,
                    config.cbam_spatial_kernel,
                    refined=i > 1,
                ),
            )

    def forward(self, f_roi: Tensor):
        cfg = self.config
        if f_roi.shape[1] != cfg.channels:
            raise ShapeError(
                f"chain: channel axis extent {f_roi.shape[1]} does not match "
                f"configured {cfg.channels}"
            )
        logits = []
        trunk = None
        for i in range(1, cfg.stages + 1):
            stage = getattr(self, f"stage{i}")
            if i == 1:
                stage_in = f_roi
            else:
                refined = stage.nlb(stage.aspp(trunk))
                stage_in = stage.restore(stage.csab(f_roi, refined))
            trunk = stage.head.trunk(stage_in)
            logits.append(stage.head.predict(trunk))
        return tuple(logits)
