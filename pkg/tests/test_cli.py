import json
import os

import numpy as np
import pytest

from eyehand.cli import main
from eyehand.render import load_depth_pfm, load_linkid_png, load_trajectory_json, render
from eyehand.se3 import Extrinsic, rotation_geodesic_deg, so3_exp
from eyehand.synth import SynthSpec, generate_episode


@pytest.fixture(scope="module")
def episode_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("episodes") / "clean"
    spec = SynthSpec(
        arm="spatial_6dof",
        n_frames=16,
        track_noise_px=0.0,
        mark_offset=(0.0, 0.0, 0.0),
        seed=11,
        width=160,
        height=120,
        supersample=2,
    )
    generate_episode(spec, root)
    return root


REFINE_TOML = """
[refine]
learning_rate = 3e-3
max_iters = 250
n_frames = 2
supersample = 2
"""


@pytest.fixture(scope="module")
def config_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("config") / "fast.toml"
    path.write_text(REFINE_TOML)
    return path


class TestSynthCommand:
    def test_writes_episode(self, tmp_path):
        out = tmp_path / "ep"
        code = main(
            [
                "synth", "--out", str(out), "--arm", "single_link",
                "--frames", "12", "--width", "96", "--height", "72", "--seed", "4",
            ]
        )
        assert code == 0
        for name in ("joints.csv", "intrinsics.json", "robot.json", "track.csv",
                     "gt_extrinsic.json"):
            assert (out / name).exists(), name
        assert len(list((out / "frames").glob("*.png"))) == 12
        assert len(list((out / "masks").glob("*.png"))) == 12


class TestCalibrateCommand:
    def test_full_pipeline_recovers_gt(self, episode_dir, config_path, tmp_path):
        out = tmp_path / "calib"
        code = main(
            [
                "calibrate", str(episode_dir), "--out", str(out),
                "--config", str(config_path), "--seed", "0",
            ]
        )
        assert code == 0
        assert (out / "coarse_extrinsic.json").exists()
        assert (out / "refine_report.json").exists()
        assert (out / "loss_curve.csv").exists()
        assert (out / "loss_curve.png").exists()
        T = Extrinsic.load(out / "extrinsic.json")
        gt = Extrinsic.load(episode_dir / "gt_extrinsic.json")
        from eyehand.metrics import MetricConfig, add_metric
        from eyehand.kinematics import load_robot

        cfg = MetricConfig.for_robot(load_robot(episode_dir / "robot.json"))
        assert add_metric(T, gt, cfg) < 1e-3

    def test_idempotent_outputs(self, episode_dir, config_path, tmp_path):
        out = tmp_path / "calib"
        for _ in range(2):
            assert main(
                ["calibrate", str(episode_dir), "--out", str(out),
                 "--config", str(config_path), "--seed", "0"]
            ) == 0
            first = (out / "extrinsic.json").read_bytes()
        assert (out / "extrinsic.json").read_bytes() == first

    def test_missing_joints_exit_2(self, tmp_path, capsys):
        ep = tmp_path / "broken"
        ep.mkdir()
        (ep / "intrinsics.json").write_text("{}")
        code = main(["calibrate", str(ep)])
        assert code == 2
        assert "joints.csv" in capsys.readouterr().err

    def test_awaiting_track_exit_3(self, episode_dir, tmp_path, capsys):
        import shutil

        ep = tmp_path / "no_track"
        shutil.copytree(episode_dir, ep)
        (ep / "track.csv").unlink()
        (ep / "mark.json").unlink(missing_ok=True)
        code = main(["calibrate", str(ep)])
        assert code == 3
        assert (ep / "mark.json").exists()
        out = capsys.readouterr().out
        assert "awaiting track" in out

    def test_collapse_exit_4(self, episode_dir, config_path, tmp_path):
        gt = Extrinsic.load(episode_dir / "gt_extrinsic.json")
        away = Extrinsic(so3_exp([np.pi, 0, 0]), np.zeros(3)).compose(gt)
        override = tmp_path / "away.json"
        away.save(override)
        out = tmp_path / "calib"
        code = main(
            [
                "calibrate", str(episode_dir), "--out", str(out),
                "--config", str(config_path), "--initial-extrinsic", str(override),
            ]
        )
        assert code == 4
        report = json.loads((out / "refine_report.json").read_text())
        assert report["collapsed"] is True

    def test_seed_env_var(self, episode_dir, config_path, tmp_path, monkeypatch):
        monkeypatch.setenv("CALIB_SEED", "123")
        out = tmp_path / "calib"
        assert main(
            ["calibrate", str(episode_dir), "--out", str(out),
             "--config", str(config_path)]
        ) == 0
        report = json.loads((out / "extrinsic.json").read_text())
        assert report["provenance"]["seed"] == 123


class TestAnnotateCommand:
    def test_exports(self, episode_dir, tmp_path):
        out = tmp_path / "ann"
        code = main(
            [
                "annotate", str(episode_dir), str(episode_dir / "gt_extrinsic.json"),
                "--out", str(out),
            ]
        )
        assert code == 0
        depth_files = sorted((out / "depth").glob("*.pfm"))
        link_files = sorted((out / "link_id").glob("*.png"))
        assert len(depth_files) == 16 and len(link_files) == 16
        assert (out / "overlay_000000.png").exists()

        track = load_trajectory_json(out / "trajectory.json")
        assert len(track) == 16

        depth0 = load_depth_pfm(depth_files[0])
        link0 = load_linkid_png(link_files[0])
        assert np.isinf(depth0[link0 < 0]).all()
        assert np.isfinite(depth0[link0 >= 0]).all()

    def test_matches_direct_render(self, episode_dir, tmp_path):
        out = tmp_path / "ann"
        main(
            ["annotate", str(episode_dir), str(episode_dir / "gt_extrinsic.json"),
             "--out", str(out)]
        )
        from eyehand.episode import load_episode

        episode = load_episode(episode_dir)
        bundle = render(
            episode.robot, episode.joints[3], episode.gt_extrinsic,
            episode.intrinsics, ss=4,
        )
        stored = load_linkid_png(out / "link_id" / "000003.png")
        np.testing.assert_array_equal(stored, bundle.link_id)

    def test_convention_mismatch_exit_2(self, episode_dir, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"matrix": list(np.eye(4).ravel()), "convention": "x"}))
        assert main(["annotate", str(episode_dir), str(bad)]) == 2


class TestEvalCommand:
    def test_pred_equals_gt(self, episode_dir, tmp_path, capsys):
        gt = str(episode_dir / "gt_extrinsic.json")
        out = tmp_path / "metrics.csv"
        code = main(
            ["eval", gt, gt, str(episode_dir / "robot.json"), "--out", str(out)]
        )
        assert code == 0
        line = out.read_text().splitlines()[1].split(",")
        add, auc = float(line[0]), float(line[1])
        assert add == 0.0
        assert auc == pytest.approx(0.99)
        assert (tmp_path / "metrics.png").exists()

    def test_shifted_pred(self, episode_dir, tmp_path):
        gt = Extrinsic.load(episode_dir / "gt_extrinsic.json")
        shifted = Extrinsic(gt.rotation, gt.translation + [0.01, 0, 0])
        pred = tmp_path / "pred.json"
        shifted.save(pred)
        out = tmp_path / "metrics.csv"
        assert main(
            ["eval", str(pred), str(episode_dir / "gt_extrinsic.json"),
             str(episode_dir / "robot.json"), "--out", str(out)]
        ) == 0
        add = float(out.read_text().splitlines()[1].split(",")[0])
        assert add == pytest.approx(0.01, abs=1e-9)

    def test_malformed_json_exit_2(self, episode_dir, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(
            ["eval", str(bad), str(episode_dir / "gt_extrinsic.json"),
             str(episode_dir / "robot.json")]
        ) == 2


class TestGridCommand:
    @pytest.mark.slow
    def test_deterministic_rerun(self, tmp_path, config_path):
        args = [
            "grid", "--arm", "single_link", "--frames", "10",
            "--width", "96", "--height", "72",
            "--rot-ranges", "0-0", "--pos-ranges", "0-0",
            "--n", "1", "--m", "1", "--seed", "0",
            "--config", str(config_path),
        ]
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert main(args + ["--out", str(out_a)]) == 0
        assert main(args + ["--out", str(out_b)]) == 0
        assert (out_a / "grid.csv").read_bytes() == (out_b / "grid.csv").read_bytes()
        assert (out_a / "grid_table.txt").exists()
        assert (out_a / "grid.png").exists()
        rows = (out_a / "grid.csv").read_text().splitlines()
        assert rows[1].endswith("converged")
