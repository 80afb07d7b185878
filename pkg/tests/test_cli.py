import json
import subprocess
import sys
import time

import numpy as np
import pytest

from planenerf import cli
from planenerf.config import ConfigError, resolve

FAST = [
    "--pretrain-iters", "6", "--joint-iters", "3", "--batch-rays", "48",
    "--n-coarse", "8", "--n-fine", "8", "--plane-resolution", "16",
    "--z-resolution", "8", "--l-pos", "3", "--grid-hidden", "8",
    "--nerf-width", "8", "--log-every", "2",
]


def run_cli(*args) -> int:
    return cli.main([str(a) for a in args])


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("clidata")
    code = run_cli("synth", "--output", out, "--n-views", "8", "--image-size", "16",
                   "--boxes", "3", "--seed", "5")
    assert code == 0
    return out


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory, dataset_dir):
    out = tmp_path_factory.mktemp("clirun")
    code = run_cli("train", "--dataset", dataset_dir / "manifest.json",
                   "--output", out, *FAST, "--seed", "3")
    assert code == 0
    return out


@pytest.fixture(scope="module")
def pretrain_only_dir(tmp_path_factory, dataset_dir):
    out = tmp_path_factory.mktemp("clipre")
    code = run_cli("train", "--dataset", dataset_dir / "manifest.json",
                   "--output", out, "--stage", "pretrain", *FAST, "--seed", "3")
    assert code == 0
    return out


class TestHelpAndParsing:
    @pytest.mark.parametrize("cmd", ["synth", "train", "render", "eval", "dump-planes"])
    def test_help_exits_zero(self, cmd):
        result = subprocess.run([sys.executable, "-m", "planenerf.cli", cmd, "--help"],
                                capture_output=True, text=True)
        assert result.returncode == 0
        assert cmd in result.stdout

    def test_top_level_help(self):
        result = subprocess.run([sys.executable, "-m", "planenerf.cli", "--help"],
                                capture_output=True, text=True)
        assert result.returncode == 0

    def test_unknown_flag_nonzero(self):
        result = subprocess.run([sys.executable, "-m", "planenerf.cli", "synth",
                                 "--no-such-flag"], capture_output=True, text=True)
        assert result.returncode != 0

    def test_unknown_config_key_exits_2(self, tmp_path):
        bad = tmp_path / "cfg.json"
        bad.write_text(json.dumps({"pretrain_itres": 5}))  # typo
        assert run_cli("synth", "--config", bad, "--output", tmp_path / "o") == 2

    def test_malformed_config_exits_2(self, tmp_path):
        bad = tmp_path / "cfg.json"
        bad.write_text("{not json")
        assert run_cli("synth", "--config", bad, "--output", tmp_path / "o") == 2

    def test_missing_dataset_exits_3(self, tmp_path):
        assert run_cli("train", "--dataset", tmp_path / "nope.json",
                       "--output", tmp_path / "o", *FAST) == 3


class TestConfigPrecedence:
    def test_flag_overrides_file(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_coarse": 9, "lr_planes": 0.5}))
        run = resolve(cfg, {"n_coarse": "17"})
        assert run.train.n_coarse == 17       # flag wins
        assert run.train.lr_planes == 0.5     # file value survives

    def test_effective_config_echoed(self, dataset_dir):
        doc = json.loads((dataset_dir / "config.json").read_text())
        assert doc["n_views"] == 8
        assert doc["image_size"] == 16
        assert doc["seed"] == 5

    def test_defaults_encode_reference_schedule(self):
        run = resolve(None, {})
        assert run.train.pretrain_iters == 10_000
        assert run.train.joint_iters == 100_000

    def test_tuple_values_from_file(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"downsample_factors": [1, 2], "background": [1, 1, 1]}))
        run = resolve(cfg, {})
        assert run.train.downsample_factors == (1, 2)
        assert run.train.background == (1.0, 1.0, 1.0)

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError):
            resolve(None, {"batch_rays": "many"})


class TestSynth:
    def test_expected_file_count(self, dataset_dir):
        pngs = sorted(dataset_dir.glob("view_*.png"))
        assert len(pngs) == 8
        assert (dataset_dir / "manifest.json").exists()

    def test_default_view_count_is_56(self):
        run = resolve(None, {})
        assert run.n_views == 56
        assert run.image_size == 64

    def test_rerun_same_seed_byte_identical(self, dataset_dir, tmp_path):
        out2 = tmp_path / "again"
        assert run_cli("synth", "--output", out2, "--n-views", "8", "--image-size", "16",
                       "--boxes", "3", "--seed", "5") == 0
        for png in sorted(dataset_dir.glob("*.png")):
            assert (out2 / png.name).read_bytes() == png.read_bytes()
        assert (out2 / "manifest.json").read_bytes() == \
            (dataset_dir / "manifest.json").read_bytes()

    def test_zero_boxes(self, tmp_path):
        out = tmp_path / "flat"
        assert run_cli("synth", "--output", out, "--n-views", "7", "--image-size", "16",
                       "--boxes", "0") == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["frames"]) == 7


class TestTrain:
    def test_zero_iters_writes_initialization_checkpoint(self, dataset_dir, tmp_path):
        out = tmp_path / "init"
        code = run_cli("train", "--dataset", dataset_dir / "manifest.json",
                       "--output", out, "--stage", "pretrain", "--iters", "0", *FAST)
        assert code == 0
        assert (out / "checkpoint_final.bin").exists()

    def test_stage_outputs(self, trained_dir):
        for name in ("checkpoint_pretrain.bin", "checkpoint_joint.bin",
                     "checkpoint_final.bin", "train_report.log", "config.json"):
            assert (trained_dir / name).exists()

    def test_resume_from_pretrain(self, dataset_dir, pretrain_only_dir, tmp_path):
        out = tmp_path / "resumed"
        code = run_cli("train", "--dataset", dataset_dir / "manifest.json",
                       "--output", out, "--stage", "joint",
                       "--resume", pretrain_only_dir / "checkpoint_final.bin",
                       *FAST, "--seed", "3")
        assert code == 0
        assert (out / "checkpoint_joint.bin").exists()

    def test_freeze_flag_accepted(self, dataset_dir, tmp_path):
        out = tmp_path / "frozen"
        code = run_cli("train", "--dataset", dataset_dir / "manifest.json",
                       "--output", out, "--freeze-grid-features", "true", *FAST)
        assert code == 0
        assert json.loads((out / "config.json").read_text())["freeze_grid_features"] is True

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")  # overflow is the point
    def test_divergence_exits_4(self, dataset_dir, tmp_path):
        code = run_cli("train", "--dataset", dataset_dir / "manifest.json",
                       "--output", tmp_path / "x", *FAST,
                       "--lr-planes", "1e30", "--lr-mlp", "1e30",
                       "--pretrain-iters", "8", "--joint-iters", "0")
        assert code == 4


class TestRender:
    def test_grid_branch_on_pretrain_checkpoint(self, dataset_dir, pretrain_only_dir,
                                                tmp_path):
        out = tmp_path / "renders"
        code = run_cli("render", "--dataset", dataset_dir / "manifest.json",
                       "--checkpoint", pretrain_only_dir / "checkpoint_final.bin",
                       "--branch", "grid", "--split", "test", "--output", out)
        assert code == 0
        assert list(out.glob("render_grid_*.png"))

    def test_nerf_branch_on_pretrain_checkpoint_errors(self, dataset_dir,
                                                       pretrain_only_dir, tmp_path,
                                                       capsys):
        code = run_cli("render", "--dataset", dataset_dir / "manifest.json",
                       "--checkpoint", pretrain_only_dir / "checkpoint_final.bin",
                       "--branch", "nerf", "--output", tmp_path / "r")
        assert code == 3
        assert "NeRF branch uninitialized" in capsys.readouterr().err

    def test_nerf_branch_after_joint(self, dataset_dir, trained_dir, tmp_path):
        out = tmp_path / "nerf_renders"
        code = run_cli("render", "--dataset", dataset_dir / "manifest.json",
                       "--checkpoint", trained_dir / "checkpoint_final.bin",
                       "--branch", "nerf", "--split", "test", "--output", out)
        assert code == 0
        assert list(out.glob("render_nerf_*.png"))

    def test_grid_renders_faster_than_nerf(self, dataset_dir, trained_dir, tmp_path):
        """The grid branch reads fewer samples through a smaller head, so
        per-image wall time is lower (the speed claim, directionally)."""
        from planenerf.model import SceneModel
        from planenerf.scene import load_dataset
        from planenerf.training import load_checkpoint

        run = resolve(trained_dir / "config.json", {"n_coarse": 32, "n_fine": 64})
        ds = load_dataset(dataset_dir / "manifest.json", load_images=False)
        model = SceneModel(run.train, ds.aabb)
        load_checkpoint(trained_dir / "checkpoint_final.bin", model)
        cam = ds.frames[0].camera

        def best_of(branch, reps=3):
            times = []
            for _ in range(reps):
                t0 = time.perf_counter()
                model.render_image(cam, branch)
                times.append(time.perf_counter() - t0)
            return min(times)

        assert best_of("grid") < best_of("nerf")


class TestEval:
    def test_metrics_schema(self, dataset_dir, trained_dir, tmp_path):
        out = tmp_path / "eval"
        code = run_cli("eval", "--dataset", dataset_dir / "manifest.json",
                       "--checkpoint", trained_dir / "checkpoint_final.bin",
                       "--output", out)
        assert code == 0
        doc = json.loads((out / "metrics.json").read_text())
        assert set(doc) == {"grid_branch", "nerf_branch"}
        for branch in doc.values():
            assert set(branch) == {"psnr", "ssim"}
            assert np.isfinite(branch["psnr"])

    def test_self_comparison_reports_perfect_scores(self, dataset_dir, monkeypatch):
        """Harness check: a model that returns the ground-truth images must
        score PSNR inf / SSIM 1."""
        from planenerf import training as tr
        from planenerf.model import SceneModel
        from planenerf.scene import load_dataset

        ds = load_dataset(dataset_dir / "manifest.json")
        images = {id(f.camera): f.image for f in ds.frames}
        monkeypatch.setattr(SceneModel, "render_image",
                            lambda self, camera, branch, chunk=4096: images[id(camera)])
        run = resolve(None, {"plane_resolution": 16, "z_resolution": 8})
        model = SceneModel(run.train, ds.aabb)
        metrics = tr.evaluate_model(model, ds, branches=("grid",))
        assert metrics["grid_branch"]["psnr"] == float("inf")
        assert metrics["grid_branch"]["ssim"] == pytest.approx(1.0)


class TestDumpPlanes:
    def test_writes_plane_images(self, dataset_dir, trained_dir, tmp_path):
        out = tmp_path / "planes"
        code = run_cli("dump-planes", "--dataset", dataset_dir / "manifest.json",
                       "--checkpoint", trained_dir / "checkpoint_final.bin",
                       "--output", out)
        assert code == 0
        files = list(out.glob("level*_*.png"))
        # 3 levels x (8 density + 16 appearance)
        assert len(files) == 72


class TestDeterminism:
    def test_train_rerun_checkpoint_byte_identical(self, dataset_dir, tmp_path):
        outs = []
        for name in ("d1", "d2"):
            out = tmp_path / name
            code = subprocess.run(
                [sys.executable, "-m", "planenerf.cli", "train",
                 "--dataset", str(dataset_dir / "manifest.json"), "--output", str(out),
                 "--stage", "pretrain", "--threads", "1", "--seed", "11", *FAST],
                capture_output=True).returncode
            assert code == 0
            outs.append((out / "checkpoint_final.bin").read_bytes())
        assert outs[0] == outs[1]
