"""Run configuration: one validated bundle of block hyperparameters,
sizes, seeds and file paths, loadable from JSON.

Defaults keep the canonical block constants (dilation rates [2,3,4,5],
14x14 ROI maps, three stages) at desk scale so that the default commands
finish in seconds.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

__all__ = ["ConfigError", "RunConfig", "load_config"]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class RunConfig:
    channels: int = 8
    batch: int = 1
    roi_size: int = 14
    stages: int = 3
    aspp_rates: list[int] = field(default_factory=lambda: [2, 3, 4, 5])
    stage_iou_thresholds: list[float] = field(default_factory=lambda: [0.5, 0.6, 0.7])
    cbam_reduction: int = 16
    cbam_spatial_kernel: int = 7
    carafe_k_up: int = 5
    carafe_k_encoder: int = 3
    carafe_mid_channels: int = 64
    gcb_ratio: float = 1.0 / 16.0
    gcb_min_width: int = 4
    pyramid_base: int = 32
    seed: int = 0
    tolerance: float = 1e-4
    max_dets_per_image: int = 100
    weights_path: str | None = None
    ground_truth_path: str | None = None
    detections_path: str | None = None
    output_path: str | None = None

    def validate(self) -> "RunConfig":
        def fail(fieldname, why):
            raise ConfigError(f"config.{fieldname}: {why}")

        if self.channels < 4 or self.channels % 4 != 0:
            fail("channels", f"must be a positive multiple of 4 (self-attention embeds "
                             f"C/4 channels), got {self.channels}")
        if self.batch < 1:
            fail("batch", f"must be >= 1, got {self.batch}")
        if self.roi_size < 1:
            fail("roi_size", f"must be >= 1, got {self.roi_size}")
        if self.stages < 1:
            fail("stages", f"must be >= 1, got {self.stages}")
        if not self.aspp_rates or any(r < 1 for r in self.aspp_rates):
            fail("aspp_rates", f"must be positive integers, got {self.aspp_rates}")
        for rate in self.aspp_rates:
            if 2 * rate + 1 > self.roi_size + 2 * rate:
                fail("aspp_rates", f"rate {rate} cannot fit the {self.roi_size}x{self.roi_size} map")
        if len(self.stage_iou_thresholds) != self.stages:
            fail("stage_iou_thresholds",
                 f"expected {self.stages} values, got {len(self.stage_iou_thresholds)}")
        if self.cbam_reduction < 1 or (2 * self.channels) % self.cbam_reduction != 0:
            fail("cbam_reduction",
                 f"must divide the fused channel count {2 * self.channels}, "
                 f"got {self.cbam_reduction}")
        if self.cbam_spatial_kernel % 2 != 1:
            fail("cbam_spatial_kernel", f"must be odd, got {self.cbam_spatial_kernel}")
        if self.carafe_k_up % 2 != 1:
            fail("carafe_k_up", f"must be odd, got {self.carafe_k_up}")
        if self.carafe_k_encoder < 1:
            fail("carafe_k_encoder", f"must be >= 1, got {self.carafe_k_encoder}")
        if self.carafe_mid_channels < 1:
            fail("carafe_mid_channels", f"must be >= 1, got {self.carafe_mid_channels}")
        if not 0 < self.gcb_ratio <= 1:
            fail("gcb_ratio", f"must be in (0, 1], got {self.gcb_ratio}")
        if self.gcb_min_width < 1:
            fail("gcb_min_width", f"must be >= 1, got {self.gcb_min_width}")
        if self.pyramid_base < 8 or self.pyramid_base % 8 != 0:
            fail("pyramid_base",
                 f"must be a positive multiple of 8 (levels down to stride 32), "
                 f"got {self.pyramid_base}")
        if self.tolerance <= 0:
            fail("tolerance", f"must be positive, got {self.tolerance}")
        if self.max_dets_per_image < 1:
            fail("max_dets_per_image", f"must be >= 1, got {self.max_dets_per_image}")
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError(f"config: expected a JSON object, got {type(data).__name__}")
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"config: unknown field(s): {', '.join(unknown)}")
        try:
            cfg = cls(**data)
        except TypeError as exc:
            raise ConfigError(f"config: {exc}") from None
        return cfg.validate()


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at byte {exc.pos}: {exc.msg}") from None
    return RunConfig.from_dict(data)
