import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from geowarp.cli import RunConfig, main, worker_count
from geowarp.dataset import FrameRecord, load_frame, frame_paths, write_sequence
from geowarp.geometry import Pose
from geowarp.report import parse_report
from geowarp.synth import default_intrinsics, render_view

from conftest import fronto_parallel_scene


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def seq(tmp_path_factory):
    d = tmp_path_factory.mktemp("seq")
    assert main(["synth", str(d), "--seed", "7", "--frames", "3"]) == 0
    return d


@pytest.fixture(scope="module")
def shifted_seq(tmp_path_factory):
    """Fronto-parallel plane at 2 m seen by a camera stepping 8 cm along +x (4 px of flow)."""
    d = tmp_path_factory.mktemp("shifted")
    K = default_intrinsics(64, 48, 100.0)
    scene = fronto_parallel_scene(K, 2.0, seed=3)
    frames = []
    for i in range(2):
        pose = Pose([-0.08 * i, 0, 0], [1, 0, 0, 0])
        img, depth = render_view(scene, pose)
        frames.append(FrameRecord(img, depth, pose, i))
    write_sequence(d, frames, K)
    return d


def tree_bytes(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


class TestConfig:
    def test_defaults(self):
        c = RunConfig()
        assert (c.beta, c.lambda_d, c.lambda_p, c.lambda_s, c.h) == (3, 1, 0.01, 0.1, 10)

    def test_precedence(self, tmp_path, seq, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# weights\nbeta = 2.0\nlambda_p = 0.5\nseed = 4\n")
        code, out, _ = run(capsys, "loss", seq, "--config", cfg, "--seed", 9, "--set", "lambda_s=0.0")
        assert code == 0
        echoed = json.loads(out)["config"]
        assert echoed["beta"] == 2.0 and echoed["lambda_p"] == 0.5
        assert echoed["seed"] == 9 and echoed["lambda_s"] == 0.0

    def test_bad_settings(self, tmp_path, seq, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("nonsense = 1\n")
        code, _, err = run(capsys, "loss", seq, "--config", cfg)
        assert code == 2 and "nonsense" in err
        code, _, err = run(capsys, "loss", seq, "--set", "beta=abc")
        assert code == 2
        code, _, err = run(capsys, "loss", seq, "--set", "h=0")
        assert code == 2

    def test_thread_cap(self, monkeypatch):
        monkeypatch.setenv("GEOWARP_THREADS", "3")
        assert worker_count() == 3
        monkeypatch.setenv("GEOWARP_THREADS", "junk")
        assert worker_count() >= 1


class TestSynth:
    def test_frames_and_determinism(self, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(capsys, "synth", a, "--seed", 5, "--frames", 4)[0] == 0
        assert run(capsys, "synth", b, "--seed", 5, "--frames", 4)[0] == 0
        assert tree_bytes(a) == tree_bytes(b)
        assert len(list(a.glob("*.color.png"))) == 4
        f = load_frame(*frame_paths(a, 2), frame_id=2)
        assert f.depth.valid.all()

    def test_seed_changes_scene(self, tmp_path, capsys):
        run(capsys, "synth", tmp_path / "a", "--seed", 1, "--frames", 1)
        run(capsys, "synth", tmp_path / "b", "--seed", 2, "--frames", 1)
        assert tree_bytes(tmp_path / "a") != tree_bytes(tmp_path / "b")

    def test_unwritable(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        code, _, err = run(capsys, "synth", blocker / "sub")
        assert code != 0 and "file" in err


class TestWarp:
    def test_identity_pair(self, seq, capsys):
        code, out, _ = run(capsys, "warp", seq, "--prev", 0, "--curr", 0)
        assert code == 0
        stats = json.loads(out)
        assert stats["mean_flow_l1"] == 0 and stats["valid_pixel_count"] > 0

    def test_translated_pair(self, shifted_seq, tmp_path, capsys):
        code, out, _ = run(capsys, "warp", shifted_seq, "--out", tmp_path / "w")
        assert code == 0
        assert json.loads(out)["mean_flow_l1"] == pytest.approx(100 * 0.08 / 2.0, abs=1e-3)
        assert {p.name for p in (tmp_path / "w").iterdir()} == {"warped.png", "validity.png", "flow_stats.json"}

    def test_missing_depth(self, tmp_path, capsys):
        d = tmp_path / "s"
        run(capsys, "synth", d, "--frames", 2)
        (d / "frame-000000.depth.png").unlink()
        code, _, err = run(capsys, "warp", d)
        assert code == 2
        assert "frame-000000.depth.png" in err


class TestLoss:
    def test_ground_truth_on_clean_pair(self, shifted_seq, capsys):
        code, out, _ = run(capsys, "loss", shifted_seq, "--at-ground-truth")
        doc = json.loads(out)
        assert code == 0 and doc["total"] < 1e-3 and doc["l_d"] == 0

    def test_reassembly_and_zero_weights(self, seq, capsys):
        _, out, _ = run(capsys, "loss", seq, "--seed", 1)
        d = json.loads(out)
        assert d["total"] == d["l_d"] + 0.01 * d["l_p"] + 0.1 * d["l_s"]
        _, out, _ = run(capsys, "loss", seq, "--set", "lambda_d=0", "--set", "lambda_p=0", "--set", "lambda_s=0")
        assert json.loads(out)["total"] == 0.0

    def test_degenerate_is_data(self, seq, capsys):
        code, out, _ = run(capsys, "loss", seq, "--sparsity", 1.0)
        assert code == 0 and json.loads(out)["degenerate"] is True


class TestAlign:
    def errors(self, doc):
        t = max(doc["final_prev_translation_error_m"], doc["final_curr_translation_error_m"])
        r = max(doc["final_prev_rotation_error_deg"], doc["final_curr_rotation_error_deg"])
        return t, r

    def test_recovers(self, seq, tmp_path, capsys):
        out = tmp_path / "a.json"
        assert run(capsys, "align", seq, "--seed", 3, "--out", out)[0] == 0
        doc = json.loads(out.read_text())
        assert doc["converged"] is True
        assert doc["initial_prev_translation_error_m"] > 1e-3
        t, r = self.errors(doc)
        assert t < 1e-3 and r < 0.02
        assert doc["config"]["perturb_translation"] == 0.02

    def test_modes(self, seq, capsys):
        _, out, _ = run(capsys, "align", seq, "--mode", "anchored")
        assert json.loads(out)["n_params"] == 6
        _, out, _ = run(capsys, "align", seq, "--mode", "self_supervised", "--set", "max_iterations=2")
        assert json.loads(out)["n_params"] == 12

    def test_sparse_depth(self, seq, capsys):
        _, out, _ = run(capsys, "align", seq, "--sparsity", 0.8, "--seed", 3)
        doc = json.loads(out)
        assert doc["converged"] is True
        assert doc["final_used_pixel_count"] < 0.25 * 160 * 120
        t, r = self.errors(doc)
        assert t < 5e-3 and r < 0.1

    def test_non_convergence_exits_zero(self, seq, capsys):
        code, out, _ = run(capsys, "align", seq, "--set", "max_iterations=1", "--set", "loss_tol=0")
        assert code == 0 and json.loads(out)["converged"] is False

    def test_all_pairs(self, seq, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("GEOWARP_THREADS", "2")
        code, _, _ = run(capsys, "align", seq, "--all-pairs", "--out", tmp_path / "pairs", "--format", "csv",
                         "--set", "max_iterations=3")
        assert code == 0
        names = sorted(p.name for p in (tmp_path / "pairs").iterdir())
        assert names == ["align-000000-000001.csv", "align-000001-000002.csv"]
        doc = parse_report((tmp_path / "pairs" / names[1]).read_bytes(), "csv")
        assert doc["frames"] == "1 2" and doc["config.format"] == "csv"


class TestEval:
    def write(self, path, rows):
        path.write_text("# x y z qw qx qy qz\n" + "".join(" ".join(map(str, r)) + "\n" for r in rows))
        return path

    def test_identical(self, tmp_path, capsys):
        p = self.write(tmp_path / "p.txt", [[0, 0, 0, 1, 0, 0, 0], [1, 2, 3, 0.5, 0.5, 0.5, 0.5]])
        code, out, _ = run(capsys, "eval", p, p)
        d = json.loads(out)
        assert code == 0 and d["median_t_m"] == 0 and d["median_r_deg"] == 0

    def test_toy_lists_and_formats(self, tmp_path, capsys):
        gt = self.write(tmp_path / "gt.txt", [[0, 0, 0, 1, 0, 0, 0]] * 3)
        s = math.sqrt(0.5)
        pred = self.write(tmp_path / "pred.txt", [[0.1, 0, 0, 1, 0, 0, 0], [0.3, 0, 0, s, 0, 0, s],
                                                   [0.2, 0, 0, 1, 0, 0, 0]])
        _, out, _ = run(capsys, "eval", pred, gt)
        j = json.loads(out)
        assert j["median_t_m"] == pytest.approx(0.2)
        assert j["median_r_deg"] == 0.0
        run(capsys, "eval", pred, gt, "--format", "csv", "--out", tmp_path / "e.csv")
        c = parse_report((tmp_path / "e.csv").read_bytes(), "csv")
        assert c["rows"] == j["rows"]

    def test_length_mismatch(self, tmp_path, capsys):
        a = self.write(tmp_path / "a.txt", [[0, 0, 0, 1, 0, 0, 0]])
        b = self.write(tmp_path / "b.txt", [[0, 0, 0, 1, 0, 0, 0]] * 2)
        code, _, err = run(capsys, "eval", a, b)
        assert code == 2 and "1 predictions" in err

    def test_bad_line(self, tmp_path, capsys):
        a = self.write(tmp_path / "a.txt", [[0, 0, 0, 1]])
        code, _, err = run(capsys, "eval", a, a)
        assert code == 2 and "a.txt:2" in err


def test_module_entry_point(seq):
    r = subprocess.run([sys.executable, "-m", "geowarp", "loss", str(seq), "--at-ground-truth"],
                       capture_output=True, text=True, env={**os.environ})
    assert r.returncode == 0
    assert "total" in json.loads(r.stdout)
