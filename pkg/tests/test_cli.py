"""Command-line runs end to end: file contracts and exit codes.

Everything goes through cli.main(argv), the same function the console
script calls, so exit codes 0/2/3 are asserted on the real entry point.
"""

import json
import warnings

import pytest
import torch

from attrswap.cli import main
from attrswap.data import SPRITE_ATTRS
from attrswap.editing import from_uint8, load_png, save_png, to_uint8, transfer
from attrswap.networks import load_checkpoint, save_checkpoint

CONFIG_YAML = """\
model: {image_size: 32, n_attrs: 3, down_layers: 3, base_channels: 4, critic_layers: 4}
train: {total_steps: 1, batch_size: 4, n_critic: 1}
data: {source: sprites, n_images: 64}
seed: 3
"""


def bits(row) -> str:
    return ",".join(str(int(v)) for v in row)


@pytest.fixture(scope="module")
def cli_env(tmp_path_factory, sprites_small):
    """One single-step training run, two PNGs, and an oracle, shared here."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.yaml"
    cfg.write_text(CONFIG_YAML)
    run_dir = root / "run"
    assert main(["train", "--config", str(cfg), "--out", str(run_dir)]) == 0
    ckpt = run_dir / "checkpoint_0000001.zip"

    pair = sprites_small.sample_batch(2, seed=50)
    src_png, ex_png = root / "src.png", root / "ex.png"
    save_png(pair.images[0], src_png)
    save_png(pair.images[1], ex_png)

    oracle = root / "oracle.pt"
    assert main(["train-oracle", "--config", str(cfg), "--steps", "60",
                 "--out", str(oracle)]) == 0
    return {"root": root, "cfg": cfg, "run": run_dir, "ckpt": ckpt,
            "src": src_png, "ex": ex_png, "oracle": oracle,
            "src_labels": bits(pair.labels[0]), "ex_labels": bits(pair.labels[1])}


class TestParser:
    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_no_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_missing_required_argument_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["edit", "--source", "a.png"])  # no --exemplar/--mask/--out
        assert exc.value.code == 2


class TestTrain:
    def test_smoke_writes_manifest_log_and_checkpoint(self, cli_env):
        run = cli_env["run"]
        assert (run / "manifest.json").exists()
        assert cli_env["ckpt"].exists()
        assert sorted(p.name for p in run.glob("checkpoint_*.zip")) == \
            ["checkpoint_0000001.zip"]
        lines = (run / "train_log.jsonl").read_text().splitlines()
        assert len(lines) == 1
        entry = json.loads(lines[0])
        assert entry["step"] == 1
        assert {"l_g", "l_d", "l_rec", "l_cls_c"} <= set(entry)

    def test_manifest_echoes_config_and_seed(self, cli_env):
        doc = json.loads((cli_env["run"] / "manifest.json").read_text())
        assert doc["command"] == "train"
        assert doc["seed"] == 3
        assert doc["config"]["model"]["base_channels"] == 4
        assert doc["config"]["train"]["total_steps"] == 1

    def test_repeat_invocation_same_manifest_modulo_timestamp(self, cli_env, capsys):
        out = cli_env["root"] / "repeat"
        argv = ["train", "--config", str(cli_env["cfg"]), "--out", str(out)]
        assert main(argv) == 0
        first = json.loads((out / "manifest.json").read_text())
        assert main(argv) == 0
        second = json.loads((out / "manifest.json").read_text())
        first.pop("timestamp")
        second.pop("timestamp")
        assert first == second
        printed = capsys.readouterr().out
        assert "step 1/1" in printed and "finished at step 1" in printed

    def test_missing_config_file_exits_2(self, tmp_path, capsys):
        rc = main(["train", "--config", str(tmp_path / "nope.yaml"),
                   "--out", str(tmp_path / "out")])
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_unknown_config_key_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text("model: {imagesize: 32}\n")
        assert main(["train", "--config", str(cfg)]) == 2
        err = capsys.readouterr().err
        assert "imagesize" in err and "image_size" in err

    def test_invalid_yaml_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "broken.yaml"
        cfg.write_text("model: [unclosed\n")
        assert main(["train", "--config", str(cfg)]) == 2
        assert "invalid YAML" in capsys.readouterr().err


class TestEdit:
    def test_requires_checkpoint_or_server(self, cli_env, tmp_path, capsys):
        rc = main(["edit", "--source", str(cli_env["src"]),
                   "--exemplar", str(cli_env["ex"]), "--mask", "1,0,0",
                   "--out", str(tmp_path / "o.png")])
        assert rc == 2
        assert "--checkpoint" in capsys.readouterr().err

    def test_transfer_matches_library_call(self, cli_env, tmp_path):
        out = tmp_path / "out.png"
        rc = main(["edit", "--checkpoint", str(cli_env["ckpt"]),
                   "--source", str(cli_env["src"]), "--exemplar", str(cli_env["ex"]),
                   "--ex-labels", cli_env["ex_labels"],
                   "--src-labels", cli_env["src_labels"],
                   "--mask", "1,1,1", "--mode", "mix", "--out", str(out)])
        assert rc == 0
        ck = load_checkpoint(cli_env["ckpt"])
        ex_lab = torch.tensor([float(v) for v in cli_env["ex_labels"].split(",")])
        src_lab = torch.tensor([float(v) for v in cli_env["src_labels"].split(",")])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            want = transfer(ck.generator.eval(), load_png(cli_env["src"]),
                            load_png(cli_env["ex"]), ex_lab, torch.ones(3),
                            "mix", src_lab)
        assert torch.equal(load_png(out), from_uint8(to_uint8(want)))

    def test_grid_geometry(self, cli_env, tmp_path):
        out = tmp_path / "grid.png"
        rc = main(["edit", "--checkpoint", str(cli_env["ckpt"]),
                   "--source", str(cli_env["src"]),
                   "--exemplar", str(cli_env["ex"]), str(cli_env["src"]),
                   "--ex-labels", "1,0,1;0,1,0", "--mask", "1,0,0",
                   "--mode", "replace", "--out", str(out)])
        assert rc == 0
        grid = load_png(out)
        # (1 + sources) rows by (1 + exemplars) columns of padded 32px cells
        assert grid.shape == (3, 2 * 34 + 2, 3 * 34 + 2)

    def test_mask_length_mismatch_exits_2(self, cli_env, tmp_path, capsys):
        rc = main(["edit", "--checkpoint", str(cli_env["ckpt"]),
                   "--source", str(cli_env["src"]), "--exemplar", str(cli_env["ex"]),
                   "--ex-labels", "1,0,1", "--mask", "1,0",
                   "--mode", "replace", "--out", str(tmp_path / "o.png")])
        assert rc == 2
        assert "3 entries" in capsys.readouterr().err

    def test_non_binary_mask_exits_2(self, cli_env, tmp_path, capsys):
        rc = main(["edit", "--checkpoint", str(cli_env["ckpt"]),
                   "--source", str(cli_env["src"]), "--exemplar", str(cli_env["ex"]),
                   "--ex-labels", "1,0,1", "--mask", "1,0,2",
                   "--mode", "replace", "--out", str(tmp_path / "o.png")])
        assert rc == 2
        assert "only 0 and 1" in capsys.readouterr().err

    def test_mix_without_src_labels_exits_2(self, cli_env, tmp_path, capsys):
        rc = main(["edit", "--checkpoint", str(cli_env["ckpt"]),
                   "--source", str(cli_env["src"]), "--exemplar", str(cli_env["ex"]),
                   "--ex-labels", "1,0,1", "--mask", "1,0,0",
                   "--mode", "mix", "--out", str(tmp_path / "o.png")])
        assert rc == 2
        assert "--src-labels" in capsys.readouterr().err

    def test_wrong_image_size_exits_2(self, cli_env, tmp_path, capsys):
        small = tmp_path / "small.png"
        save_png(torch.zeros(3, 16, 16), small)
        rc = main(["edit", "--checkpoint", str(cli_env["ckpt"]),
                   "--source", str(small), "--exemplar", str(cli_env["ex"]),
                   "--ex-labels", "1,0,1", "--mask", "1,0,0",
                   "--mode", "replace", "--out", str(tmp_path / "o.png")])
        assert rc == 2
        assert "32x32" in capsys.readouterr().err

    def test_predict_labels_path(self, cli_env, tmp_path):
        out = tmp_path / "predicted.png"
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rc = main(["edit", "--checkpoint", str(cli_env["ckpt"]),
                       "--source", str(cli_env["src"]),
                       "--exemplar", str(cli_env["ex"]),
                       "--predict-labels", "--mask", "0,1,0",
                       "--mode", "mix", "--out", str(out)])
        assert rc == 0
        assert load_png(out).shape == (3, 32, 32)

    def test_server_mode_rejects_multiple_sources(self, cli_env, tmp_path, capsys):
        rc = main(["edit", "--server", "http://127.0.0.1:1",
                   "--source", str(cli_env["src"]), str(cli_env["ex"]),
                   "--exemplar", str(cli_env["ex"]), "--mask", "1,0,0",
                   "--out", str(tmp_path / "o.png")])
        assert rc == 2
        assert "one source/exemplar pair" in capsys.readouterr().err


class TestEval:
    def test_smoke_writes_report(self, cli_env, tmp_path, capsys):
        report = tmp_path / "report.json"
        rc = main(["eval", "--checkpoint", str(cli_env["ckpt"]),
                   "--data", str(cli_env["cfg"]), "--oracle", str(cli_env["oracle"]),
                   "--out", str(report), "--samples", "8", "--seed", "1"])
        assert rc == 0
        doc = json.loads(report.read_text())
        assert doc["n_samples"] == 8
        assert tuple(doc["attributes"]) == SPRITE_ATTRS
        assert set(doc["single_attr"]) == set(SPRITE_ATTRS)
        printed = capsys.readouterr().out
        assert "report written to" in printed

    def test_default_sprite_dataset(self, cli_env, tmp_path):
        report = tmp_path / "report.json"
        rc = main(["eval", "--checkpoint", str(cli_env["ckpt"]),
                   "--oracle", str(cli_env["oracle"]),
                   "--out", str(report), "--samples", "8"])
        assert rc == 0
        assert report.exists()

    def test_model_config_mismatch_exits_2(self, cli_env, tmp_path, capsys):
        cfg = tmp_path / "big.yaml"
        cfg.write_text("model: {image_size: 64, n_attrs: 3}\n"
                       "data: {source: sprites, n_images: 64}\n")
        rc = main(["eval", "--checkpoint", str(cli_env["ckpt"]),
                   "--data", str(cfg), "--oracle", str(cli_env["oracle"]),
                   "--out", str(tmp_path / "r.json"), "--samples", "8"])
        assert rc == 2
        assert "does not match checkpoint" in capsys.readouterr().err

    def test_non_finite_weights_exit_3(self, cli_env, tmp_path, capsys):
        ck = load_checkpoint(cli_env["ckpt"])
        with torch.no_grad():
            next(ck.generator.parameters()).fill_(float("nan"))
        bad = tmp_path / "bad.zip"
        save_checkpoint(bad, ck.config, ck.generator, ck.critic, step=ck.step)
        rc = main(["eval", "--checkpoint", str(bad), "--data", str(cli_env["cfg"]),
                   "--oracle", str(cli_env["oracle"]),
                   "--out", str(tmp_path / "r.json"), "--samples", "8"])
        assert rc == 3
        assert "numerical abort" in capsys.readouterr().err


class TestAblate:
    def test_depth_sweep_smoke(self, cli_env, tmp_path, capsys):
        out = tmp_path / "ablate"
        rc = main(["ablate", "--config", str(cli_env["cfg"]), "--d", "3,4",
                   "--oracle", str(cli_env["oracle"]), "--out", str(out)])
        assert rc == 0
        doc = json.loads((out / "ablation_report.json").read_text())
        assert set(doc) == {"3", "4"}
        assert (out / "ablation_montage.png").exists()
        printed = capsys.readouterr().out
        assert "d=3:" in printed and "d=4:" in printed

    def test_bad_depth_list_exits_2(self, cli_env, tmp_path, capsys):
        rc = main(["ablate", "--config", str(cli_env["cfg"]), "--d", "3,x",
                   "--oracle", str(cli_env["oracle"]), "--out", str(tmp_path / "a")])
        assert rc == 2
        assert "comma-separated integers" in capsys.readouterr().err


class TestTrainOracle:
    def test_reports_self_check_rates(self, cli_env, tmp_path, capsys):
        out = tmp_path / "oracle.pt"
        rc = main(["train-oracle", "--config", str(cli_env["cfg"]),
                   "--steps", "40", "--out", str(out)])
        assert rc == 0
        assert out.exists()
        assert "self-check match rates" in capsys.readouterr().out
