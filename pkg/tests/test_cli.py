"""End-to-end command-line runs on tiny synthetic data."""
import json

import numpy as np
import pytest
import yaml

from advtrain import cli
from advtrain import data as dio
from advtrain.degrade import degrade_dataset, parse_spec

TINY = {
    "data": {"path": "synth_shapes", "train": 64, "test": 32},
    "model": {"preset": "desk", "widths": [3, 3, 3]},
    "train": {"pretrain_iters": 3, "tune_iters": 3, "batch_size": 16},
}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.yaml").write_text(yaml.safe_dump(TINY))
    assert cli.main(["synth", "--out", str(root / "ds"), "--train", "24", "--test", "12", "--videos", "5"]) == 0
    assert cli.main(["train", "--mode", "rap", "--degrade", "salt-pepper:0.5", "--config", str(root / "tiny.yaml"),
                     "--out", str(root / "rap")]) == 0
    return root


def run(*argv):
    return cli.main([str(a) for a in argv])


class TestHelpAndUsage:
    def test_help_lists_every_flag(self, capsys):
        parser = cli.build_parser()
        sub = next(a for a in parser._actions if a.dest == "command")
        for name, p in sub.choices.items():
            text = p.format_help()
            for action in p._actions:
                for opt in action.option_strings:
                    assert opt in text, (name, opt)

    def test_unknown_command_is_usage_error(self):
        with pytest.raises(SystemExit) as e:
            cli.main(["frobnicate"])
        assert e.value.code == 1

    def test_arap_without_beta(self, work, capsys):
        code = run("train", "--mode", "arap", "--degrade", "lowres:2", "--config", work / "tiny.yaml", "--out", work / "x")
        assert code == 1 and "--beta" in capsys.readouterr().err

    def test_missing_checkpoint(self, work, capsys):
        code = run("eval", "--ckpt", work / "missing.ckpt", "--data", work / "ds")
        assert code == 2 and "missing.ckpt" in capsys.readouterr().err

    def test_divergence_exit_code(self, work):
        conf = dict(TINY, train={"pretrain_iters": 30, "tune_iters": 0, "batch_size": 16, "lr_submodel": 1e6})
        (work / "bad.yaml").write_text(yaml.safe_dump(conf))
        with np.errstate(all="ignore"):
            code = run("train", "--mode", "rap", "--degrade", "salt-pepper:0.5", "--config", work / "bad.yaml",
                       "--out", work / "bad")
        assert code == 3


class TestDegrade:
    def test_identity_bit_equal(self, work):
        assert run("degrade", "--in", work / "ds", "--out", work / "ident", "--spec", "lowres:1") == 0
        for name in ("train_images.tensor", "test_images.tensor"):
            assert (work / "ident" / name).read_bytes() == (work / "ds" / name).read_bytes()

    def test_same_seed_twice(self, work):
        for out in ("n1", "n2"):
            assert run("degrade", "--in", work / "ds", "--out", work / out, "--spec", "salt-pepper:0.3", "--seed", 4) == 0
        assert (work / "n1" / "train_images.tensor").read_bytes() == (work / "n2" / "train_images.tensor").read_bytes()

    def test_mixed_matches_library(self, work):
        spec = "lowres:2|gauss-noise:25"
        assert run("degrade", "--in", work / "ds", "--out", work / "mixed", "--spec", spec, "--seed", 7) == 0
        clean = dio.load_dataset(work / "ds", "train")
        expected = degrade_dataset(clean.images, parse_spec(spec), 7, "train")
        assert np.array_equal(dio.load_dataset(work / "mixed", "train").images, expected)
        man = dio.read_manifest(work / "mixed")
        assert man["degrade"] == {"spec": spec, "seed": 7, "source": str(work / "ds")}

    def test_env_seed(self, work, monkeypatch):
        monkeypatch.setenv("ADVTRAIN_SEED", "7")
        assert run("degrade", "--in", work / "ds", "--out", work / "envseed", "--spec", "lowres:2|gauss-noise:25") == 0
        assert dio.read_manifest(work / "envseed")["degrade"]["seed"] == 7


class TestTrain:
    def test_outputs(self, work):
        out = work / "rap"
        names = {"model.ckpt", "submodel.ckpt", "metrics.jsonl", "config.resolved.yaml", "eval.json", "MANIFEST.json"}
        assert names <= {p.name for p in out.iterdir()}
        model = dio.load_checkpoint(out / "model.ckpt")
        assert model.provenance["method"] == "rap"
        manifest = json.loads((out / "MANIFEST.json").read_text())["artifacts"]
        assert manifest["model.ckpt"] == __import__("hashlib").sha256((out / "model.ckpt").read_bytes()).hexdigest()
        resolved = yaml.safe_load((out / "config.resolved.yaml").read_text())
        assert resolved["mode"] == "rap" and resolved["train"]["tune_iters"] == 3

    def test_arap_beta_equal_alpha_reproduces_rap(self, work):
        assert run("train", "--mode", "arap", "--degrade", "salt-pepper", "--alpha", 0.5, "--beta", 0.5,
                   "--config", work / "tiny.yaml", "--out", work / "arap") == 0
        assert (work / "arap" / "model.ckpt").read_bytes() == (work / "rap" / "model.ckpt").read_bytes()

    def test_rerun_is_bit_exact(self, work):
        assert run("--threads", 1, "train", "--mode", "rap", "--degrade", "salt-pepper:0.5", "--config",
                   work / "tiny.yaml", "--out", work / "rap2") == 0
        assert (work / "rap2" / "model.ckpt").read_bytes() == (work / "rap" / "model.ckpt").read_bytes()
        strip = lambda p: [{k: v for k, v in r.items() if k != "wall_time"} for r in dio.read_metrics(p)]
        assert strip(work / "rap2" / "metrics.jsonl") == strip(work / "rap" / "metrics.jsonl")

    @pytest.mark.parametrize("mode", ["hq", "lq", "rap-non-joint"])
    def test_baselines(self, work, mode):
        args = ["train", "--mode", mode, "--config", work / "tiny.yaml", "--out", work / mode]
        if mode != "hq":
            args += ["--degrade", "salt-pepper:0.5"]
        assert run(*args) == 0
        assert dio.load_checkpoint(work / mode / "model.ckpt").provenance["method"] == mode

    def test_eval_prints_json(self, work, capsys):
        assert run("eval", "--ckpt", work / "rap" / "model.ckpt", "--data", work / "ds", "--degrade", "salt-pepper:0.5",
                   "--out", work / "ev") == 0
        report = json.loads(capsys.readouterr().out)
        assert report["count"] == 12 and 0 <= report["top1"] <= report["top5"] <= 100
        assert (work / "ev" / "eval.json").exists()


class TestVideoCommands:
    def test_fuse_then_constant_clip_check(self, work, capsys):
        assert run("fuse", "--ckpt", work / "rap" / "model.ckpt", "--kind", "early", "--T", 2, "--out", work / "fz") == 0
        capsys.readouterr()
        assert run("video-eval", "--ckpt", work / "fz" / "fused.ckpt", "--videos", work / "ds" / "videos_test",
                   "--single", work / "rap" / "model.ckpt") == 0
        result = json.loads(capsys.readouterr().out)
        assert result["constant_clip_check"]["passed"]
        assert result["video"]["count"] == 12

    def test_video_train_keeps_symmetry(self, work, capsys):
        run("fuse", "--ckpt", work / "rap" / "model.ckpt", "--kind", "slow", "--T", 1, "--out", work / "fz1")
        assert run("video-train", "--ckpt", work / "fz1" / "fused.ckpt", "--videos", work / "ds" / "videos_train",
                   "--config", work / "tiny.yaml", "--out", work / "vt") == 0
        assert "symmetry kept" in capsys.readouterr().out

    def test_video_commands_need_fused_model(self, work):
        assert run("video-eval", "--ckpt", work / "rap" / "model.ckpt", "--videos", work / "ds" / "videos_test") == 2


class TestTransferAndVisualize:
    def test_transfer_table(self, work, capsys):
        plan = {
            "source": "synth_shapes", "target": "synth_shapes",
            "source_data": {"train": 48, "test": 16}, "target_data": {"train": 32, "test": 16, "seed": 5},
            "plan": {"degrade": "lowres:2", "beta_prime": 4, "target_degrade": "lowres:2"},
            "source_model": {"preset": "desk", "widths": [3, 3, 3]},
            "source_train": {"pretrain_iters": 2, "tune_iters": 2, "batch_size": 16},
            "target_train": {"pretrain_iters": 2, "tune_iters": 2, "batch_size": 16},
            "layerwise_iters": 2,
        }
        (work / "plan.yaml").write_text(yaml.safe_dump(plan))
        assert run("transfer", "--plan", work / "plan.yaml", "--out", work / "tr", "--sweep", "3,4") == 0
        table = json.loads((work / "tr" / "comparison.json").read_text())
        assert set(table) == {"LQ_d", "LQ_p", "T-ARAP-non-joint", "T-ARAP"}
        assert dio.load_checkpoint(work / "tr" / "T-ARAP.ckpt").provenance["method"] == "t-arap"
        assert "beta'=4" in capsys.readouterr().out

    def test_plan_missing_section(self, work):
        (work / "badplan.yaml").write_text(yaml.safe_dump({"source": "synth_shapes"}))
        assert run("transfer", "--plan", work / "badplan.yaml", "--out", work / "trb") == 1

    @pytest.mark.parametrize("fmt", ["png", "pgm"])
    def test_visualize(self, work, fmt):
        out = work / f"vis-{fmt}"
        assert run("visualize", "--ckpt", work / "rap" / "model.ckpt", "--ms-ckpt", work / "rap" / "submodel.ckpt",
                   "--images", work / "ds", "--count", 2, "--format", fmt, "--out", out) == 0
        assert (out / f"0001_tuned.{fmt}").exists() and (out / "psnr.json").exists()

    def test_visualize_rejects_non_submodel(self, work):
        assert run("visualize", "--ckpt", work / "rap" / "model.ckpt", "--ms-ckpt", work / "rap" / "model.ckpt",
                   "--images", work / "ds", "--out", work / "visbad") == 2
