"""Command-line surface: grammar, exit codes, file outputs, determinism."""

import json
import os
import subprocess
import sys

import pytest

CLI = [sys.executable, "-m", "maisenet"]


def run(*args, env_extra=None, cwd=None):
    env = dict(os.environ)
    if env_extra:
        env.update(env_extra)
    return subprocess.run(
        CLI + list(args), capture_output=True, text=True, env=env, cwd=cwd
    )


@pytest.fixture(scope="module")
def scene_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("scene")
    gt = root / "gt.json"
    dt = root / "dt.json"
    result = run("synth", "--seed", "3", "--out", str(gt), "--dt-out", str(dt))
    assert result.returncode == 0, result.stderr
    return gt, dt


class TestSynth:
    def test_writes_valid_ground_truth(self, scene_files):
        gt, _ = scene_files
        doc = json.loads(gt.read_text())
        assert doc["images"] and doc["annotations"]

    def test_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert run("synth", "--seed", "9", "--out", str(a)).returncode == 0
        assert run("synth", "--seed", "9", "--out", str(b)).returncode == 0
        assert a.read_bytes() == b.read_bytes()

    def test_bucket_mix(self, tmp_path):
        out = tmp_path / "mix.json"
        result = run("synth", "--seed", "1", "--out", str(out), "--mix", "2,2,1")
        assert result.returncode == 0
        doc = json.loads(out.read_text())
        areas = sorted(a["area"] for a in doc["annotations"])
        assert sum(1 for a in areas if a < 1024) == 2
        assert sum(1 for a in areas if 1024 <= a < 9216) == 2
        assert sum(1 for a in areas if a >= 9216) == 1


class TestEval:
    def test_perfect_metrics_table_and_json(self, scene_files, tmp_path):
        gt, dt = scene_files
        out = tmp_path / "metrics.json"
        result = run("eval", "--gt", str(gt), "--dt", str(dt), "--task", "bbox",
                     "--out", str(out))
        assert result.returncode == 0, result.stderr
        assert "Detection" in result.stdout
        assert "1.000" in result.stdout
        payload = json.loads(out.read_text())
        assert payload["detection"]["AP"] == 1.0
        assert payload["detection"]["AP_S"] == 1.0

    def test_segm_task(self, scene_files, tmp_path):
        gt, dt = scene_files
        out = tmp_path / "metrics.json"
        result = run("eval", "--gt", str(gt), "--dt", str(dt), "--task", "segm",
                     "--out", str(out))
        assert result.returncode == 0, result.stderr
        assert json.loads(out.read_text())["segmentation"]["AP"] == 1.0

    def test_missing_file_is_usage_error(self, scene_files):
        gt, _ = scene_files
        result = run("eval", "--gt", str(gt), "--dt", "/does/not/exist.json",
                     "--task", "bbox")
        assert result.returncode == 2

    def test_malformed_json_is_usage_error(self, tmp_path, scene_files):
        _, dt = scene_files
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        result = run("eval", "--gt", str(bad), "--dt", str(dt), "--task", "bbox")
        assert result.returncode == 2
        assert "byte" in result.stderr

    def test_bad_task_is_usage_error(self, scene_files):
        gt, dt = scene_files
        result = run("eval", "--gt", str(gt), "--dt", str(dt), "--task", "boxes")
        assert result.returncode == 2


class TestNms:
    def test_filters_overlaps(self, tmp_path):
        dets = [
            {"image_id": 1, "bbox": [0, 0, 4, 4], "score": 0.9},
            {"image_id": 1, "bbox": [0, 0, 4, 4], "score": 0.8},
            {"image_id": 1, "bbox": [20, 20, 4, 4], "score": 0.7},
            {"image_id": 2, "bbox": [0, 0, 4, 4], "score": 0.6},
        ]
        src = tmp_path / "in.json"
        src.write_text(json.dumps(dets))
        out = tmp_path / "out.json"
        result = run("nms", "--in", str(src), "--iou", "0.5", "--out", str(out))
        assert result.returncode == 0, result.stderr
        kept = json.loads(out.read_text())
        assert len(kept) == 3
        assert all(k["score"] != 0.8 for k in kept)

    def test_preserves_extra_fields(self, tmp_path):
        dets = [{"image_id": 1, "bbox": [0, 0, 4, 4], "score": 0.9,
                 "segmentation": {"counts": [0, 16], "size": [4, 4]}}]
        src = tmp_path / "in.json"
        src.write_text(json.dumps(dets))
        out = tmp_path / "out.json"
        assert run("nms", "--in", str(src), "--iou", "0.5", "--out", str(out)).returncode == 0
        assert "segmentation" in json.loads(out.read_text())[0]

    def test_bad_threshold_usage_error(self, tmp_path):
        src = tmp_path / "in.json"
        src.write_text("[]")
        result = run("nms", "--in", str(src), "--iou", "1.5", "--out",
                     str(tmp_path / "o.json"))
        assert result.returncode == 2


class TestForward:
    def test_shapes_reported(self, tmp_path):
        out = tmp_path / "fwd.json"
        result = run("forward", "--out", str(out))
        assert result.returncode == 0, result.stderr
        payload = json.loads(out.read_text())
        by_name = {t["name"]: t for t in payload["tensors"]}
        assert by_name["mai.stage1.logits"]["shape"] == [1, 1, 28, 28]
        assert by_name["mai.stage3.logits"]["shape"] == [1, 1, 28, 28]
        strides = {f"se.B{l}": by_name[f"se.B{l}"]["stride"] for l in range(1, 6)}
        assert strides == {"se.B1": 2, "se.B2": 4, "se.B3": 8, "se.B4": 16, "se.B5": 32}

    def test_deterministic_given_seed(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert run("forward", "--seed", "2", "--out", str(a)).returncode == 0
        assert run("forward", "--seed", "2", "--out", str(b)).returncode == 0
        assert a.read_bytes() == b.read_bytes()


class TestGradcheckCommand:
    def test_single_block_single_seed(self, tmp_path):
        out = tmp_path / "g.json"
        result = run("gradcheck", "--block", "gcb", "--seed", "0", "--out", str(out))
        assert result.returncode == 0, result.stderr
        payload = json.loads(out.read_text())
        assert payload["all_pass"] is True
        assert payload["results"][0]["block"] == "gcb"
        assert payload["results"][0]["pass"] is True

    def test_unknown_block_usage_error(self):
        assert run("gradcheck", "--block", "resnet").returncode == 2

    def test_all_blocks_reduced_probes(self, tmp_path):
        # full budgets live in the acceptance suite; this covers the CLI path
        out = tmp_path / "all.json"
        result = run("gradcheck", "--block", "all", "--seed", "0",
                     "--probes", "40", "--out", str(out))
        assert result.returncode == 0, result.stdout + result.stderr
        payload = json.loads(out.read_text())
        assert payload["all_pass"] is True
        blocks = {r["block"] for r in payload["results"]}
        assert {"aspp", "nlb", "cbam", "csab", "carafe", "fbo", "gcb",
                "reconstruct", "chain", "se"} == blocks


class TestCheckCommand:
    def test_exit_zero_and_all_ids(self, tmp_path):
        out = tmp_path / "check.json"
        result = run("check", "--seed", "0", "--out", str(out))
        assert result.returncode == 0, result.stdout + result.stderr
        payload = json.loads(out.read_text())
        assert payload["all_pass"] is True
        from maisenet.checks import CHECK_IDS

        assert [c["id"] for c in payload["checks"]] == list(CHECK_IDS)

    def test_usage_error_on_unknown_command(self):
        assert run("frobnicate").returncode == 2
