"""Command-line harness.

Commands: ``check`` (invariant suite), ``gradcheck`` (finite-difference
suite per block), ``forward`` (synthetic forward pass with tensor
statistics), ``eval`` (metric table from ground-truth/detection JSON),
``nms`` (filter a detection file), ``synth`` (emit a synthetic scene).

Exit codes: 0 success, 1 check failure, 2 usage/input error. The
``MAISENET_THREADS`` environment variable caps internal thread pools;
outputs are bit-identical regardless of its value. Heavy imports happen
after the cap is applied, which is why they live inside the handlers.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

USAGE_ERROR = 2
CHECK_ERROR = 1


def _apply_thread_cap() -> None:
    cap = os.environ.get("MAISENET_THREADS")
    if not cap:
        return
    try:
        value = str(max(1, int(cap)))
    except ValueError:
        raise SystemExit(f"maisenet: MAISENET_THREADS must be an integer, got {cap!r}")
    for name in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ.setdefault(name, value)


def _write_json(payload: dict | list, path: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _load_run_config(args):
    from .config import RunConfig, load_config

    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = RunConfig().validate()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "tol", None) is not None:
        cfg.tolerance = args.tol
    return cfg.validate()


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_check(args) -> int:
    from .checks import run_checks

    report = run_checks(seed=args.seed, tolerance=args.tol)
    for entry in report["checks"]:
        status = "PASS" if entry["pass"] else "FAIL"
        print(f"[{status}] {entry['id']} — {entry['detail']}")
    print(f"{report['passed']} passed, {report['failed']} failed")
    if args.out:
        _write_json(report, args.out)
    return 0 if report["all_pass"] else CHECK_ERROR


def cmd_gradcheck(args) -> int:
    from .gradsuite import BLOCK_NAMES, run_block_check

    cfg = _load_run_config(args)
    names = BLOCK_NAMES if args.block == "all" else (args.block,)
    seeds = (args.seed,) if args.seed is not None else (0, 1, 2)
    results = []
    failed = False
    for name in names:
        for seed in seeds:
            result = run_block_check(
                name, seed=seed, config=cfg, max_probes=args.probes, tolerance=cfg.tolerance
            )
            payload = result.to_json_dict()
            payload["block"] = name
            payload["seed"] = seed
            results.append(payload)
            status = "PASS" if result.passed else "FAIL"
            print(
                f"[{status}] {name} seed={seed} max_rel_err={result.max_relative_error:.3e} "
                f"tol={result.tolerance:.0e} probed={result.probed_count} "
                f"params={result.parameter_count}"
            )
            failed = failed or not result.passed
    if args.out:
        _write_json({"results": results, "all_pass": not failed}, args.out)
    return CHECK_ERROR if failed else 0


def _tensor_stats(name, arr):
    return {
        "name": name,
        "shape": list(arr.shape),
        "mean": float(arr.mean()),
        "variance": float(arr.var()),
    }


def cmd_forward(args) -> int:
    import numpy as np

    from .model import build_model, init_weights, load_weights
    from .se import Pyramid
    from .tensor import Tensor

    cfg = _load_run_config(args)
    model = build_model(cfg)
    if cfg.weights_path:
        model.load_state(load_weights(cfg.weights_path))
    else:
        init_weights(model, cfg.seed)

    rng = np.random.default_rng(cfg.seed + 1)
    roi = Tensor(rng.standard_normal((cfg.batch, cfg.channels, cfg.roi_size, cfg.roi_size)))
    levels = {
        level: Tensor(
            rng.standard_normal(
                (cfg.batch, cfg.channels,
                 cfg.pyramid_base >> (level - 2), cfg.pyramid_base >> (level - 2))
            )
        )
        for level in range(2, 6)
    }

    stats = []
    enhanced = model.se(Pyramid(levels))
    for level in enhanced.level_indices():
        arr = enhanced[level].data
        entry = _tensor_stats(f"se.B{level}", arr)
        entry["stride"] = enhanced.strides()[level]
        stats.append(entry)
    logits = model.mai(roi)
    for i, out in enumerate(logits, start=1):
        stats.append(_tensor_stats(f"mai.stage{i}.logits", out.data))

    payload = {"config_seed": cfg.seed, "tensors": stats}
    for entry in stats:
        print(f"{entry['name']}: shape={tuple(entry['shape'])} "
              f"mean={entry['mean']:.6f} variance={entry['variance']:.6f}")
    _write_json(payload, args.out or cfg.output_path)
    return 0


def cmd_eval(args) -> int:
    from .coco_io import load_detections, load_ground_truth
    from .metrics import compute_coco_metrics

    images, gts = load_ground_truth(args.gt)
    dets = load_detections(args.dt, images)
    report = compute_coco_metrics(dets, gts, args.task)
    print(report.render_table())
    if args.out:
        _write_json(report.to_json_dict(), args.out)
    return 0


def cmd_nms(args) -> int:
    from .coco_io import ParseError, _load_json, _parse_bbox, _require
    from .metrics import box_iou

    if not 0.0 < args.iou <= 1.0:
        raise ParseError(f"--iou must be in (0, 1], got {args.iou}")
    doc = _load_json(args.input)
    if not isinstance(doc, list):
        raise ParseError("$: expected a JSON array of detections")
    parsed = []
    for i, record in enumerate(doc):
        where = f"$[{i}]"
        image_id = _require(record, "image_id", int, where)
        bbox = _parse_bbox(_require(record, "bbox", list, where), f"{where}.bbox")
        score = float(_require(record, "score", (int, float), where))
        parsed.append((image_id, bbox, score, record))

    kept_records = []
    for image_id in sorted({p[0] for p in parsed}):
        group = [p for p in parsed if p[0] == image_id]
        order = sorted(range(len(group)), key=lambda k: (-group[k][2], k))
        kept: list[int] = []
        for k in order:
            if all(box_iou(group[k][1], group[j][1]) <= args.iou for j in kept):
                kept.append(k)
        kept_records.extend(group[k][3] for k in kept)
    _write_json(kept_records, args.out)
    print(f"kept {len(kept_records)} of {len(parsed)} detections at IoU {args.iou}")
    return 0


def cmd_synth(args) -> int:
    from .synth import synth_scene

    mix = None
    if args.mix:
        parts = args.mix.split(",")
        if len(parts) != 3:
            raise SystemExit("maisenet synth: --mix expects SMALL,MEDIUM,LARGE counts")
        mix = tuple(int(p) for p in parts)
    scene = synth_scene(args.seed, args.extent, ship_count=args.ships, bucket_mix=mix)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(scene.ground_truth_json())
    print(f"wrote {len(scene.ships)} ships to {args.out}")
    if args.dt_out:
        with open(args.dt_out, "w", encoding="utf-8") as fh:
            fh.write(scene.detections_json())
        print(f"wrote matching detections to {args.dt_out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maisenet",
        description="Verification harness for the mask-interaction and "
                    "scale-enhancement blocks and the detection evaluator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_check = sub.add_parser("check", help="run the full invariant suite")
    p_check.add_argument("--seed", type=int, default=0)
    p_check.add_argument("--tol", type=float, default=1e-4)
    p_check.add_argument("--out", help="write the machine-readable report here")
    p_check.set_defaults(handler=cmd_check)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p_grad.add_argument(
        "--block",
        required=True,
        choices=["aspp", "nlb", "cbam", "csab", "carafe", "fbo", "gcb",
                 "reconstruct", "chain", "se", "all"],
    )
    p_grad.add_argument("--seed", type=int, default=None,
                        help="single seed (default: seeds 0, 1 and 2)")
    p_grad.add_argument("--probes", type=int, default=600,
                        help="max probed coordinates per block")
    p_grad.add_argument("--tol", type=float, default=None)
    p_grad.add_argument("--config", help="JSON run configuration")
    p_grad.add_argument("--out", help="write results JSON here")
    p_grad.set_defaults(handler=cmd_gradcheck)

    p_fwd = sub.add_parser("forward", help="forward both pathways on synthetic features")
    p_fwd.add_argument("--config", help="JSON run configuration")
    p_fwd.add_argument("--seed", type=int, default=None)
    p_fwd.add_argument("--out", help="write shape/statistics JSON here")
    p_fwd.set_defaults(handler=cmd_forward)

    p_eval = sub.add_parser("eval", help="COCO-style metric table")
    p_eval.add_argument("--gt", required=True, help="ground-truth JSON file")
    p_eval.add_argument("--dt", required=True, help="detections JSON file")
    p_eval.add_argument("--task", required=True, choices=["bbox", "segm"])
    p_eval.add_argument("--out", help="write metrics JSON here")
    p_eval.set_defaults(handler=cmd_eval)

    p_nms = sub.add_parser("nms", help="greedy suppression over a detection file")
    p_nms.add_argument("--in", dest="input", required=True, help="detections JSON file")
    p_nms.add_argument("--iou", type=float, required=True)
    p_nms.add_argument("--out", required=True)
    p_nms.set_defaults(handler=cmd_nms)

    p_synth = sub.add_parser("synth", help="emit a synthetic ground-truth scene")
    p_synth.add_argument("--seed", type=int, required=True)
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--extent", type=int, default=256)
    p_synth.add_argument("--ships", type=int, default=None)
    p_synth.add_argument("--mix", help="SMALL,MEDIUM,LARGE bucket counts")
    p_synth.add_argument("--dt-out", dest="dt_out",
                         help="also write detections equal to the ground truths")
    p_synth.set_defaults(handler=cmd_synth)
    return parser


def main(argv=None) -> int:
    _apply_thread_cap()
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (FileNotFoundError, PermissionError) as exc:
        print(f"maisenet: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except ValueError as exc:
        # covers config, parse, shape and archive errors — all usage-level
        print(f"maisenet: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
