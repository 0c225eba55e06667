"""Acceptance gate: one test per published criterion, each at its stated
tolerance, printing a PASS/FAIL line (run with ``pytest -s`` to see them
inline; any failure fails the suite).
"""

import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from maisenet import ops
from maisenet.gradsuite import BLOCK_NAMES, OP_NAMES, run_block_check, run_op_check
from maisenet.mai import Aspp, Cbam, Csab, MaskInteractionChain, NonLocalBlock
from maisenet.masks import BinaryMask, mask_iou
from maisenet.archive import load_archive, save_archive, ArchiveError
from maisenet.metrics import (
    Detection,
    GroundTruth,
    bbox_overlap,
    box_iou,
    compute_ap,
    compute_coco_metrics,
    nms,
)
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

from naive_oracles import (
    naive_aspp,
    naive_balance,
    naive_carafe,
    naive_cbam,
    naive_csab,
    naive_gcb,
    naive_nlb,
)
from reference_eval import ref_evaluate

SEEDS = (0, 1, 2)


def report(criterion, passed, detail=""):
    status = "PASS" if passed else "FAIL"
    print(f"[{status}] {criterion}" + (f" — {detail}" if detail else ""))
    assert passed, f"{criterion}: {detail}"


def rand(rng, *shape):
    return Tensor(rng.standard_normal(shape))


def const(value, *shape):
    return Tensor(np.full(shape, float(value)))


def test_criterion_gradient_suite():
    """Every kernel and block passes finite differences, 3 seeds, <= 5 min."""
    started = time.time()
    failures = []
    for name in OP_NAMES:
        for seed in SEEDS:
            result = run_op_check(name, seed=seed)
            if not result.passed:
                failures.append(f"{name}@{seed}: {result.max_relative_error:.2e}")
    for name in BLOCK_NAMES:
        for seed in SEEDS:
            result = run_block_check(name, seed=seed)
            if not result.passed:
                failures.append(f"{name}@{seed}: {result.max_relative_error:.2e}")
    elapsed = time.time() - started
    report(
        "gradient suite (all kernels and blocks, 3 seeds, tol 1e-4 / 1e-6 linear)",
        not failures and elapsed <= 300.0,
        f"{(len(OP_NAMES) + len(BLOCK_NAMES)) * len(SEEDS)} checks in {elapsed:.0f}s"
        + (f"; failures: {failures}" if failures else ""),
    )


def test_criterion_residual_identities_bit_exact():
    rng = np.random.default_rng(0)
    ok = True
    details = []

    nlb = NonLocalBlock(8)
    init_weights(nlb, 0)
    nlb.z.weight.data[...] = 0.0
    nlb.z.bias.data[...] = 0.0
    x = rand(rng, 2, 8, 5, 5)
    ok &= np.array_equal(nlb(x).data, x.data)
    details.append("self-attention residual")

    gcb = GlobalContextBlock(8)
    init_weights(gcb, 0)
    gcb.transform2.weight.data[...] = 0.0
    gcb.transform2.bias.data[...] = 0.0
    y = rand(rng, 2, 8, 5, 5)
    ok &= np.array_equal(gcb(y).data, y.data)
    details.append("global-context residual")

    levels = {
        level: rand(rng, 1, 3, 32 >> (level - 1), 32 >> (level - 1))
        for level in range(1, 6)
    }
    pyr = Pyramid(levels)
    rebuilt = reconstruct_pyramid(pyr, Tensor(np.zeros(pyr[3].shape)))
    ok &= all(np.array_equal(rebuilt[l].data, pyr[l].data) for l in range(1, 6))
    details.append("recovery with zero refined map")

    report("residual identities exact to the bit", ok, ", ".join(details))


def test_criterion_normalizations_100_trials():
    rng = np.random.default_rng(1)
    nlb = NonLocalBlock(8)
    init_weights(nlb, 1)
    carafe = ContentAwareUpsampler(4)
    init_weights(carafe, 1)
    gcb = GlobalContextBlock(8)
    init_weights(gcb, 1)
    worst = 0.0
    for _ in range(100):
        _, attn = nlb.forward_with_attention(rand(rng, 1, 8, 4, 4))
        worst = max(worst, np.abs(attn.data.sum(axis=2) - 1.0).max())
        kernels = carafe.kernels(rand(rng, 1, 4, 4, 4))
        assert np.all(kernels.data >= 0.0)
        worst = max(worst, np.abs(kernels.data.sum(axis=1) - 1.0).max())
        _, weights = gcb.forward_with_context_weights(rand(rng, 1, 8, 4, 4))
        worst = max(worst, np.abs(weights.data.sum(axis=2) - 1.0).max())
    report(
        "normalizations sum to 1 within 1e-12 (attention rows, reassembly "
        "kernels, context weights; 100 trials)",
        worst <= 1e-12,
        f"worst deviation {worst:.2e}",
    )


def test_criterion_constant_propagation():
    levels = {
        level: const(float(level), 1, 2, 32 >> (level - 1), 32 >> (level - 1))
        for level in range(1, 6)
    }
    balanced = balance_levels(Pyramid(levels))
    exact_mean = bool(np.all(balanced.data == 3.0))

    carafe = ContentAwareUpsampler(3)
    init_weights(carafe, 2)
    out = carafe(const(1.7, 1, 3, 8, 8))
    pad = carafe.config.k_up // 2
    interior = out.data[:, :, 2 * pad : -2 * pad, 2 * pad : -2 * pad]
    interior_ok = bool(np.all(np.abs(interior - 1.7) <= 1e-12))

    report(
        "constant propagation (level balance of 1..5 equals exactly 3; "
        "constant interior preserved through reassembly)",
        exact_mean and interior_ok,
        f"mean exact={exact_mean}, interior max dev "
        f"{np.abs(interior - 1.7).max():.2e}",
    )


def test_criterion_oracle_equivalence_ten_instances():
    failures = []
    for seed in range(10):
        rng = np.random.default_rng(seed)

        aspp = Aspp(4)
        init_weights(aspp, seed)
        x = rng.standard_normal((1, 4, 14, 14))
        want = naive_aspp(
            x,
            [getattr(aspp, f"branch{i}").weight.data for i in range(4)],
            [getattr(aspp, f"branch{i}").bias.data for i in range(4)],
            aspp.reduce.weight.data, aspp.reduce.bias.data, (2, 3, 4, 5),
        )
        if not np.allclose(aspp(Tensor(x)).data, want, rtol=0, atol=1e-12):
            failures.append(f"aspp@{seed}")

        nlb = NonLocalBlock(4)
        init_weights(nlb, seed)
        xn = rng.standard_normal((1, 4, 3, 3))
        want_nlb, want_attn = naive_nlb(
            xn,
            nlb.theta.weight.data, nlb.theta.bias.data,
            nlb.phi.weight.data, nlb.phi.bias.data,
            nlb.g.weight.data, nlb.g.bias.data,
            nlb.z.weight.data, nlb.z.bias.data,
        )
        got_nlb, got_attn = nlb.forward_with_attention(Tensor(xn))
        if not (np.allclose(got_nlb.data, want_nlb, rtol=0, atol=1e-12)
                and np.allclose(got_attn.data, want_attn, rtol=0, atol=1e-12)):
            failures.append(f"nlb@{seed}")

        csab = Csab(4, reduction=4)
        init_weights(csab, seed)
        fb = rng.standard_normal((1, 4, 14, 14))
        fp = rng.standard_normal((1, 4, 14, 14))
        cb = csab.attention
        want_csab = naive_csab(
            fb, fp, csab.refine.weight.data, csab.refine.bias.data,
            (cb.mlp1.weight.data, cb.mlp1.bias.data,
             cb.mlp2.weight.data, cb.mlp2.bias.data,
             cb.spatial.weight.data, cb.spatial.bias.data),
        )
        if not np.allclose(csab(Tensor(fb), Tensor(fp)).data, want_csab,
                           rtol=0, atol=1e-12):
            failures.append(f"csab@{seed}")

        carafe = ContentAwareUpsampler(4)
        init_weights(carafe, seed)
        xc = rng.standard_normal((1, 4, 3, 3))
        want_carafe = naive_carafe(
            xc, carafe.compress.weight.data, carafe.compress.bias.data,
            carafe.encoder.weight.data, carafe.encoder.bias.data,
            factor=2, k_up=5, k_encoder=3,
        )
        if not np.allclose(carafe(Tensor(xc)).data, want_carafe, rtol=0, atol=1e-12):
            failures.append(f"carafe@{seed}")

        levels = {
            level: rng.standard_normal((1, 2, 16 >> (level - 1), 16 >> (level - 1)))
            for level in range(1, 6)
        }
        got_fbo = balance_levels(Pyramid({k: Tensor(v) for k, v in levels.items()}))
        if not np.array_equal(got_fbo.data, naive_balance(levels)):
            failures.append(f"fbo@{seed}")

        gcb = GlobalContextBlock(16)
        init_weights(gcb, seed)
        xg = rng.standard_normal((1, 16, 4, 4))
        want_gcb = naive_gcb(
            xg, gcb.context.weight.data, gcb.context.bias.data,
            gcb.transform1.weight.data, gcb.transform1.bias.data,
            gcb.norm.gamma.data, gcb.norm.beta.data,
            gcb.transform2.weight.data, gcb.transform2.bias.data,
        )
        if not np.allclose(gcb(Tensor(xg)).data, want_gcb, rtol=0, atol=1e-12):
            failures.append(f"gcb@{seed}")

    report(
        "oracle equivalence within 1e-12 (context pooling, dense attention, "
        "fusion, reassembly, balance, global context; 10 seeded instances each)",
        not failures,
        f"failures: {failures}" if failures else "60 comparisons",
    )


def test_criterion_shape_contracts():
    rng = np.random.default_rng(3)
    chain = MaskInteractionChain(channels=8)
    init_weights(chain, 3)
    logits = chain(rand(rng, 2, 8, 14, 14))
    chain_ok = len(logits) == 3 and all(o.data.shape == (2, 1, 28, 28) for o in logits)

    se = ScaleEnhancement(channels=4)
    init_weights(se, 3)
    backbone = Pyramid({
        level: rand(rng, 1, 4, 64 >> (level - 2), 64 >> (level - 2))
        for level in range(2, 6)
    })
    enhanced = se(backbone)
    pyramid_ok = (
        enhanced.level_indices() == [1, 2, 3, 4, 5]
        and enhanced.strides() == {1: 2, 2: 4, 3: 8, 4: 16, 5: 32}
        and enhanced[1].data.shape == (1, 4, 128, 128)
    )
    report(
        "shape contracts (14x14 ROI -> three 28x28 logit maps; five pyramid "
        "levels at strides {2,4,8,16,32} including the generated bottom level)",
        chain_ok and pyramid_ok,
    )


def _grid_mask(box, size):
    x, y, w, h = box
    grid = np.zeros((size, size), dtype=bool)
    grid[int(y) : int(y + h), int(x) : int(x + w)] = True
    return BinaryMask(grid)


def test_criterion_metric_engine():
    rng = np.random.default_rng(4)
    mismatches = []
    for trial in range(200):
        task = "bbox" if trial % 2 == 0 else "segm"
        gts, dets = [], []
        for image_id in range(1, int(rng.integers(1, 4)) + 1):
            for _ in range(int(rng.integers(1, 5))):
                box = (float(rng.integers(0, 20)), float(rng.integers(0, 20)),
                       float(rng.integers(3, 26)), float(rng.integers(3, 26)))
                mask = _grid_mask(box, 48)
                gts.append(GroundTruth(image_id, box, mask, float(mask.area())))
            for _ in range(int(rng.integers(0, 7))):
                box = (float(rng.integers(0, 20)), float(rng.integers(0, 20)),
                       float(rng.integers(3, 26)), float(rng.integers(3, 26)))
                dets.append(Detection(image_id, box, float(rng.uniform(0.05, 1.0)),
                                      _grid_mask(box, 48)))
        got = compute_coco_metrics(dets, gts, task)
        table = (got.detection if task == "bbox" else got.segmentation).to_json_dict()
        ref = ref_evaluate(
            [{"image_id": d.image_id, "box": d.box, "score": d.score,
              "mask": d.mask.array, "order": i} for i, d in enumerate(dets)],
            [{"image_id": g.image_id, "box": g.box, "mask": g.mask.array,
              "area": g.area} for g in gts],
            task,
        )
        for key, want in ref.items():
            gotv = table[key]
            if want is None:
                if gotv is not None:
                    mismatches.append(f"trial {trial} {key}")
            elif gotv is None or abs(gotv - want) > 1e-9:
                mismatches.append(f"trial {trial} {key}")

    gt = GroundTruth(1, (0, 0, 10, 10), _grid_mask((0, 0, 10, 10), 32), 100.0)
    hand_ok = (
        compute_ap([Detection(1, (0, 0, 10, 10), 0.9)], [gt], bbox_overlap, 0.5) == 1.0
        and compute_ap([], [gt], bbox_overlap, 0.5) == 0.0
        and compute_ap(
            [Detection(1, (0, 0, 10, 10), 0.9), Detection(1, (20, 20, 5, 5), 0.8)],
            [gt], bbox_overlap, 0.5,
        ) == 1.0
    )
    small_gt = GroundTruth(1, (0, 0, 25, 20), _grid_mask((0, 0, 25, 20), 48), 500.0)
    buckets = compute_coco_metrics(
        [Detection(1, (0, 0, 25, 20), 0.9)], [small_gt], "bbox"
    ).detection
    bucket_ok = buckets.ap_s == 1.0 and buckets.ap_m is None and buckets.ap_l is None

    report(
        "metric engine (200 randomized trials vs reference within 1e-9; hand "
        "cases; bucket boundaries at 32^2 and 96^2)",
        not mismatches and hand_ok and bucket_ok,
        f"mismatches: {mismatches[:5]}" if mismatches else "agreement on all trials",
    )


def test_criterion_nms_postcondition_1000():
    rng = np.random.default_rng(5)
    violations = 0
    for _ in range(1000):
        dets = [
            Detection(
                1,
                (rng.uniform(0, 24), rng.uniform(0, 24),
                 rng.uniform(1, 9), rng.uniform(1, 9)),
                float(rng.uniform(0, 1)),
            )
            for _ in range(int(rng.integers(1, 14)))
        ]
        threshold = float(rng.uniform(0.1, 0.9))
        kept = nms(dets, threshold)
        if not all(any(k is d for d in dets) for k in kept):
            violations += 1
            continue
        for i in range(len(kept)):
            for j in range(i + 1, len(kept)):
                if box_iou(kept[i].box, kept[j].box) > threshold:
                    violations += 1
    report(
        "suppression post-condition (kept set pairwise IoU <= threshold, "
        "1000 randomized detection sets)",
        violations == 0,
        f"{violations} violations",
    )


def test_criterion_cli_determinism(tmp_path):
    def run_check(threads=None):
        env = dict(os.environ)
        if threads is not None:
            env["MAISENET_THREADS"] = str(threads)
        out = tmp_path / f"check_{threads}_{time.time_ns()}.json"
        proc = subprocess.run(
            [sys.executable, "-m", "maisenet", "check", "--seed", "0",
             "--out", str(out)],
            capture_output=True, text=True, env=env,
        )
        assert proc.returncode == 0, proc.stdout + proc.stderr
        return out.read_bytes(), proc.stdout

    base_json, base_stdout = run_check()
    again_json, again_stdout = run_check()
    one_json, one_stdout = run_check(threads=1)
    four_json, four_stdout = run_check(threads=4)
    identical = (
        base_json == again_json == one_json == four_json
        and base_stdout == again_stdout == one_stdout == four_stdout
    )
    report(
        "determinism (check --seed 0 twice and under MAISENET_THREADS in "
        "{1, 4}: byte-identical machine-readable output)",
        identical,
        f"{len(base_json)} report bytes compared across 4 runs",
    )


def test_criterion_file_formats(tmp_path):
    rng = np.random.default_rng(6)
    entries = {
        "a.weight": rng.standard_normal((3, 2, 3, 3)),
        "b.bias": rng.standard_normal(5),
    }
    path = tmp_path / "fixture.msnt"
    save_archive(entries, path)
    loaded = load_archive(path)
    archive_ok = all(
        loaded[name].tobytes() == entries[name].tobytes() for name in entries
    )

    located = False
    try:
        broken = tmp_path / "broken.msnt"
        broken.write_bytes(b"MSNT" + b"\x01\x00\x00\x00" + b"\x02\x00\x00\x00" + b"\x05")
        load_archive(broken)
    except ArchiveError as exc:
        located = "byte" in str(exc)

    rle_ok = True
    for grid in (np.zeros((4, 6), dtype=bool), np.ones((4, 6), dtype=bool),
                 rng.random((7, 5)) > 0.5):
        mask = BinaryMask(grid)
        rle_ok &= BinaryMask.from_rle(mask.rle_counts(), grid.shape) == mask

    from maisenet.coco_io import ParseError, load_ground_truth

    json_located = False
    bad_json = tmp_path / "bad.json"
    bad_json.write_text('{"images": [}')
    try:
        load_ground_truth(bad_json)
    except ParseError as exc:
        json_located = "byte" in str(exc)

    report(
        "file formats (archive and run-length round trips bit-exact; "
        "malformed inputs rejected with located diagnostics)",
        archive_ok and located and rle_ok and json_located,
    )
