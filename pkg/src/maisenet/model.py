"""Model assembly, seeded initialization, and weight archive round trips.

Canonical parameter names are the dotted module paths, e.g.
``mai.stage2.aspp.branch0.weight`` or ``se.gcb.transform1.weight``; the
naming manifest is whatever ``parameter_manifest`` returns for a config.
"""

from __future__ import annotations

import math

import numpy as np

from .archive import load_archive, save_archive
from .config import RunConfig
from .mai import ChainConfig, MaskInteractionChain
from .nn import Module
from .se import CarafeConfig, GcbConfig, ScaleEnhancement

__all__ = [
    "MaiSeModel",
    "build_model",
    "init_weights",
    "load_weights",
    "parameter_manifest",
    "save_weights",
]


class MaiSeModel(Module):
    """The two primary pathways under their canonical name prefixes."""

    def __init__(self, config: RunConfig):
        super().__init__()
        config.validate()
        object.__setattr__(self, "run_config", config)
        self.mai = MaskInteractionChain(
            ChainConfig(
                channels=config.channels,
                roi_size=config.roi_size,
                stages=config.stages,
                rates=tuple(config.aspp_rates),
                cbam_reduction=config.cbam_reduction,
                cbam_spatial_kernel=config.cbam_spatial_kernel,
                stage_iou_thresholds=tuple(config.stage_iou_thresholds),
            )
        )
        self.se = ScaleEnhancement(
            channels=config.channels,
            carafe=CarafeConfig(
                factor=2,
                k_up=config.carafe_k_up,
                k_encoder=config.carafe_k_encoder,
                mid_channels=config.carafe_mid_channels,
            ),
            gcb=GcbConfig(ratio=config.gcb_ratio, min_width=config.gcb_min_width),
        )


def build_model(config: RunConfig | None = None) -> MaiSeModel:
    return MaiSeModel(config or RunConfig())


def init_weights(model: Module, seed: int) -> dict[str, np.ndarray]:
    """Deterministic seeded initialization; returns the parameter set.

    Convolution weights draw uniform(-b, b) with b = sqrt(1/fan_in);
    biases and normalization shifts are zero, normalization gains one.
    The same seed always produces bit-identical parameters.
    """
    rng = np.random.default_rng(seed)
    for name, param in model.named_parameters():
        if param.init == "conv":
            bound = math.sqrt(1.0 / param.fan_in)
            param.data[...] = rng.uniform(-bound, bound, size=param.data.shape)
        elif param.init == "one":
            param.data[...] = 1.0
        elif param.init == "zero":
            param.data[...] = 0.0
        else:
            raise ValueError(f"parameter {name}: unknown init rule {param.init!r}")
        param.zero_grad()
    return model.state()


def parameter_manifest(config: RunConfig | None = None) -> list[str]:
    """Canonical parameter names, in archive order, for a configuration."""
    return [name for name, _ in build_model(config).named_parameters()]


def save_weights(params: dict[str, np.ndarray], path) -> None:
    save_archive(params, path)


def load_weights(path) -> dict[str, np.ndarray]:
    return load_archive(path)
