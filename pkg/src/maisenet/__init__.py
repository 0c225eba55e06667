"""Mask-interaction and scale-enhancement feature blocks, plus the
COCO-style instance-segmentation evaluator and a verification harness.

Submodules are imported lazily so the command-line entry point can cap
thread pools via environment variables before numpy initializes.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "archive",
    "checks",
    "coco_io",
    "config",
    "gradcheck",
    "gradsuite",
    "mai",
    "masks",
    "metrics",
    "model",
    "nn",
    "ops",
    "se",
    "synth",
    "tensor",
)

_EXPORTS = {
    "Tensor": ("tensor", "Tensor"),
    "ShapeError": ("tensor", "ShapeError"),
    "NonFiniteError": ("tensor", "NonFiniteError"),
    "no_grad": ("tensor", "no_grad"),
    "ConvParams": ("ops", "ConvParams"),
    "GradCheckResult": ("gradcheck", "GradCheckResult"),
    "grad_check": ("gradcheck", "grad_check"),
    "Module": ("nn", "Module"),
    "Parameter": ("nn", "Parameter"),
    "Conv2d": ("nn", "Conv2d"),
    "LayerNorm": ("nn", "LayerNorm"),
    "Aspp": ("mai", "Aspp"),
    "NonLocalBlock": ("mai", "NonLocalBlock"),
    "Cbam": ("mai", "Cbam"),
    "Csab": ("mai", "Csab"),
    "MaskHead": ("mai", "MaskHead"),
    "MaskInteractionChain": ("mai", "MaskInteractionChain"),
    "Pyramid": ("se", "Pyramid"),
    "ContentAwareUpsampler": ("se", "ContentAwareUpsampler"),
    "GlobalContextBlock": ("se", "GlobalContextBlock"),
    "ScaleEnhancement": ("se", "ScaleEnhancement"),
    "balance_levels": ("se", "balance_levels"),
    "reconstruct_pyramid": ("se", "reconstruct_pyramid"),
    "BinaryMask": ("masks", "BinaryMask"),
    "mask_iou": ("masks", "mask_iou"),
    "Detection": ("metrics", "Detection"),
    "GroundTruth": ("metrics", "GroundTruth"),
    "EvalReport": ("metrics", "EvalReport"),
    "box_iou": ("metrics", "box_iou"),
    "nms": ("metrics", "nms"),
    "match_detections": ("metrics", "match_detections"),
    "compute_ap": ("metrics", "compute_ap"),
    "compute_coco_metrics": ("metrics", "compute_coco_metrics"),
    "RunConfig": ("config", "RunConfig"),
    "load_config": ("config", "load_config"),
    "MaiSeModel": ("model", "MaiSeModel"),
    "build_model": ("model", "build_model"),
    "init_weights": ("model", "init_weights"),
    "save_weights": ("model", "save_weights"),
    "load_weights": ("model", "load_weights"),
    "synth_scene": ("synth", "synth_scene"),
}

__all__ = sorted(_EXPORTS) + list(_SUBMODULES)


def __getattr__(name):
    import importlib

    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    if name in _EXPORTS:
        module_name, attr = _EXPORTS[name]
        module = importlib.import_module(f".{module_name}", __name__)
        return getattr(module, attr)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return __all__
