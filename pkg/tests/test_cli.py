"""End-to-end checks of the command line surface and its exit codes."""

from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest

from sfsm import cli
from sfsm.evaluation import CSV_COLUMNS
from sfsm.geometry import CameraModel
from sfsm.tracks import FeatureTracks, Track, write_tracks
from sfsm.version import VERSION_STRING

SCENE = {"n_frames": 20, "n_landmarks": 200, "noise_px": 0.0,
         "quantize": False, "n_sequences": 2, "master_seed": 11}
PIPE = {"step1": {"mu_px": 10.0}}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    scene_cfg = root / "scene.json"
    scene_cfg.write_text(json.dumps(SCENE))
    pipe_cfg = root / "pipe.json"
    pipe_cfg.write_text(json.dumps(PIPE))
    data = root / "data"
    assert cli.main(["generate", "--config", str(scene_cfg),
                     "--out", str(data)]) == 0
    return root, scene_cfg, pipe_cfg, data


@pytest.fixture(scope="module")
def solution(workspace):
    root, _, pipe_cfg, data = workspace
    out = root / "sol.txt"
    code = cli.main(["run", str(data / "tracks_0000.txt"),
                     "--out", str(out), "--config", str(pipe_cfg)])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def bench_dir(workspace):
    root, _, pipe_cfg, data = workspace
    out = root / "bench"
    code = cli.main(["bench", str(data), "--out", str(out),
                     "--config", str(pipe_cfg)])
    assert code == 0
    return out


class TestGenerate:
    def test_files_and_manifest(self, workspace):
        _, _, _, data = workspace
        names = sorted(p.name for p in data.iterdir())
        assert names == ["manifest.json", "tracks_0000.txt", "tracks_0001.txt",
                         "truth_0000.txt", "truth_0001.txt"]
        manifest = json.loads((data / "manifest.json").read_text())
        assert manifest["kind"] == "sfsm-dataset"
        assert manifest["version"] == VERSION_STRING
        assert manifest["scene_config"]["n_frames"] == 20
        assert len(manifest["sequences"]) == 2
        assert all(e["seed"] > 0 for e in manifest["sequences"])

    def test_rerun_is_byte_identical(self, workspace, tmp_path):
        _, scene_cfg, _, data = workspace
        redo = tmp_path / "redo"
        assert cli.main(["generate", "--config", str(scene_cfg),
                         "--out", str(redo)]) == 0
        for p in sorted(data.iterdir()):
            assert (redo / p.name).read_bytes() == p.read_bytes()

    def test_default_config_single_sequence(self, tmp_path):
        out = tmp_path / "one"
        assert cli.main(["generate", "--out", str(out)]) == 0
        names = sorted(p.name for p in out.iterdir())
        assert names == ["manifest.json", "tracks_0000.txt", "truth_0000.txt"]

    def test_bad_fov_names_field(self, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"fov_deg": 200}))
        code = cli.main(["generate", "--config", str(cfg),
                         "--out", str(tmp_path / "x")])
        assert code == 2
        assert "fov_deg" in capsys.readouterr().err

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"wobble": 1}))
        code = cli.main(["generate", "--config", str(cfg),
                         "--out", str(tmp_path / "x")])
        assert code == 2
        assert "wobble" in capsys.readouterr().err


class TestRun:
    def test_converged_solution(self, solution, capsys):
        text = solution.read_text()
        assert text.startswith("SFSM-SOLUTION")
        assert VERSION_STRING in text
        assert '"mu_px":10' in text.replace(" ", "")

    def test_rerun_is_byte_identical(self, workspace, solution, tmp_path):
        root, _, pipe_cfg, data = workspace
        redo = tmp_path / "redo.txt"
        assert cli.main(["run", str(data / "tracks_0000.txt"),
                         "--out", str(redo), "--config", str(pipe_cfg)]) == 0
        assert redo.read_bytes() == solution.read_bytes()

    def test_too_few_tracks_exits_3(self, tmp_path, capsys):
        cam = CameraModel(fx=900.0, fy=900.0, cx=64.0, cy=64.0,
                          width=128, height=128)
        uv = np.tile([[3.0, 4.0]], (3, 1))
        ft = FeatureTracks(cam=cam, n_frames=3,
                           tracks=[Track(track_id=0, uv=uv.copy()),
                                   Track(track_id=1, uv=uv + 1.0)])
        path = tmp_path / "two.txt"
        write_tracks(ft, path)
        code = cli.main(["run", str(path), "--out", str(tmp_path / "s.txt")])
        assert code == 3
        err = capsys.readouterr().err
        assert err.startswith("step1: insufficient covisible tracks")

    def test_missing_file_exits_2(self, tmp_path, capsys):
        code = cli.main(["run", str(tmp_path / "nope.txt"),
                         "--out", str(tmp_path / "s.txt")])
        assert code == 2
        assert "nope.txt" in capsys.readouterr().err

    def test_unknown_variant_rejected_by_parser(self, workspace, capsys):
        _, _, _, data = workspace
        code = cli.main(["run", str(data / "tracks_0000.txt"),
                         "--out", "x.txt", "--variant", "newton"])
        assert code == 2


class TestBench:
    def test_outputs(self, bench_dir):
        names = sorted(p.name for p in bench_dir.iterdir())
        assert names == ["ha-baseline.csv", "proposed.csv", "summary.json"]
        for name in ("proposed.csv", "ha-baseline.csv"):
            lines = (bench_dir / name).read_text().splitlines()
            assert lines[0] == CSV_COLUMNS
            assert len(lines) == 3
        summary = json.loads((bench_dir / "summary.json").read_text())
        assert summary["version"] == VERSION_STRING
        assert summary["pipeline_config"]["step1"]["mu_px"] == 10.0
        assert set(summary["variants"]) == {"proposed", "ha-baseline"}
        assert summary["variants"]["proposed"]["n_sequences"] == 2

    def test_jobs_do_not_change_outputs(self, workspace, bench_dir, tmp_path):
        _, _, pipe_cfg, data = workspace
        redo = tmp_path / "redo"
        assert cli.main(["bench", str(data), "--out", str(redo),
                         "--config", str(pipe_cfg), "--jobs", "2"]) == 0
        for name in ("proposed.csv", "ha-baseline.csv"):
            assert (redo / name).read_bytes() == (bench_dir / name).read_bytes()

    def test_unknown_variant_lists_valid(self, workspace, capsys):
        _, _, _, data = workspace
        code = cli.main(["bench", str(data), "--out", "x",
                         "--variant", "newton"])
        assert code == 2
        err = capsys.readouterr().err
        assert "ha-baseline" in err and "proposed" in err

    def test_missing_manifest_exits_2(self, tmp_path, capsys):
        code = cli.main(["bench", str(tmp_path), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "manifest" in capsys.readouterr().err

    def test_thresholds_echoed(self, workspace, tmp_path):
        _, _, pipe_cfg, data = workspace
        out = tmp_path / "strict"
        assert cli.main(["bench", str(data), "--out", str(out),
                         "--config", str(pipe_cfg), "--variant", "proposed",
                         "--thresholds", "0.5,0.25,1.0"]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["pipeline_config"]["thresholds"]["max_rms_are_deg"] == 0.25

    def test_bad_thresholds_exit_2(self, workspace, capsys):
        _, _, _, data = workspace
        code = cli.main(["bench", str(data), "--out", "x",
                         "--thresholds", "1,2"])
        assert code == 2
        assert "thresholds" in capsys.readouterr().err


class TestReport:
    def test_table_from_bench(self, bench_dir, capsys):
        assert cli.main(["report", str(bench_dir / "summary.json")]) == 0
        out = capsys.readouterr().out
        assert "Method" in out and "Success Rate (%)" in out
        assert "RMS ARE (deg)" in out and "Normalized Depth RMSE Mean" in out
        assert "proposed" in out and "ha-baseline" in out
        assert "success criterion" in out

    def test_success_rate_prints_one_decimal(self, tmp_path, capsys):
        entry = dict(success_rate=62.0, mean_rms_ate=0.277,
                     mean_rms_are_deg=0.032, mean_rms_depth=0.605,
                     mean_t_step1=0.0, mean_t_step2=0.0, mean_t_step3=0.0)
        path = tmp_path / "hand.json"
        path.write_text(json.dumps({"variants": {"proposed": entry}}))
        assert cli.main(["report", str(path)]) == 0
        row = [ln for ln in capsys.readouterr().out.splitlines()
               if ln.startswith("proposed")][0]
        assert "62.0" in row and "0.277" in row

    def test_truncated_json_exits_2(self, bench_dir, tmp_path, capsys):
        text = (bench_dir / "summary.json").read_text()
        broken = tmp_path / "broken.json"
        broken.write_text(text[: len(text) // 2])
        assert cli.main(["report", str(broken)]) == 2
        assert "JSON" in capsys.readouterr().err

    def test_missing_fields_exit_2(self, tmp_path, capsys):
        path = tmp_path / "thin.json"
        path.write_text(json.dumps({"variants": {"proposed": {"success_rate": 1}}}))
        assert cli.main(["report", str(path)]) == 2
        assert "missing fields" in capsys.readouterr().err


class TestEntryPoint:
    def test_module_invocation(self):
        proc = subprocess.run([sys.executable, "-m", "sfsm.cli", "--version"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        assert VERSION_STRING in proc.stdout

    def test_no_command_exits_2(self):
        assert cli.main([]) == 2
