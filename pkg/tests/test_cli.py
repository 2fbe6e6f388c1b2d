from pathlib import Path

import pandas as pd
import pytest

from cli import main
from models.config import ExperimentConfig


@pytest.fixture
def config_file(tiny_config, tmp_path):
    return str(tiny_config.save(tmp_path / "tiny.ini"))


class TestCommandLine:
    def test_dump_defaults(self, capsys):
        assert main(["config", "--dump-defaults"]) == 0
        text = capsys.readouterr().out
        assert "[memory]" in text
        assert ExperimentConfig.from_string(text).memory.k == 128

    def test_missing_config_file(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "absent.ini")]) == 2

    def test_bad_set_expression(self, config_file):
        assert main(["config", "--config", config_file, "--set", "memory.k"]) == 2

    def test_missing_dataset(self, config_file, tmp_path):
        code = main(["prepare", "--config", config_file, "--set", f"data.source={tmp_path / 'nowhere'}"])
        assert code == 3

    def test_score_before_training(self, config_file):
        assert main(["score", "--config", config_file]) == 2

    def test_eval_without_scores(self, config_file):
        assert main(["eval", "--config", config_file]) == 3

    def test_bad_ablation_row(self, config_file):
        assert main(["ablate", "--config", config_file, "--rows", "2"]) == 2

    def test_phantom_gen(self, tmp_path):
        out = tmp_path / "phantoms"
        assert main(["phantom-gen", "--out", str(out), "--set", "data.n_train_normal=2",
                     "--set", "data.n_test_normal=1", "--set", "data.n_test_abnormal=1"]) == 0
        assert len(list((out / "train" / "normal").glob("*.png"))) == 2
        assert list((out / "test" / "abnormal").glob("*_mask.png"))


class TestPipeline:
    def test_prepare_with_pseudo_proxies(self, config_file, tiny_config):
        assert main(["prepare", "--config", config_file, "--emit-pseudo", "2"]) == 0
        pseudo = Path(tiny_config.output.dir) / "pseudo"
        assert len(list(pseudo.glob("*_mask.png"))) == 2

    def test_train_score_eval(self, config_file, tiny_config):
        out = Path(tiny_config.output.dir)
        assert main(["train-proxy", "--config", config_file]) == 0
        assert main(["train-recon", "--config", config_file]) == 0
        assert main(["score", "--config", config_file]) == 0
        assert main(["eval", "--config", config_file]) == 0

        for name in ("proxy.ckpt", "recon.ckpt", "loss_proxy.csv", "loss_recon.csv", "scores.csv",
                     "a_pix.npy", "metrics.txt", "metrics.json", "recon_grid.png", "score_hist.png"):
            assert (out / name).exists(), name
        scores = pd.read_csv(out / "scores.csv")
        assert len(scores) == 6
        assert scores["a_si_error"].notna().all()
        metrics = (out / "metrics.txt").read_text()
        assert "auc_a_img" in metrics and "auc_a_img_pixelspace" in metrics
        manifest = (out / "manifest.txt").read_text()
        assert "command.score" in manifest and "config_hash" in manifest

    def test_same_config_same_scores(self, make_config, tmp_path):
        outputs = []
        for name in ("a", "b"):
            config = make_config(out=name)
            path = config.save(tmp_path / f"{name}.ini")
            assert main(["train", "--config", str(path)]) == 0
            assert main(["score", "--config", str(path)]) == 0
            outputs.append((tmp_path / name / "scores.csv").read_bytes())
        assert outputs[0] == outputs[1]

    def test_ablation_ladder(self, config_file, tiny_config):
        assert main(["ablate", "--config", config_file]) == 0
        out = Path(tiny_config.output.dir)
        table = pd.read_csv(out / "ablation.csv")
        assert table["row"].tolist() == [1, 3, 4, 5, 6, 7, 8]
        assert table["tag"].iloc[-1] == "2xEncDec+SI+mem+rep+lat"
        assert table["auc"].between(0, 1).all()
        si_only = pd.read_csv(out / "ablation_si_only.csv")
        assert si_only["row"].tolist() == [4, 5]

    def test_memory_size_one_collapses_the_proxy(self, make_config, tmp_path):
        config = make_config(ablation__use_repairing="false")
        path = config.save(tmp_path / "sweep.ini")
        assert main(["sweep", "memory_size", "1,8", "--config", str(path)]) == 0
        table = pd.read_csv(Path(config.output.dir) / "sweep_memory_size.csv")
        assert table["memory_size"].tolist() == [1, 8]
        assert bool(table["proxy_input_independent"].iloc[0])

    def test_compare_proxies(self, config_file, tiny_config):
        assert main(["compare-proxies", "--modes", "si,edge", "--config", config_file]) == 0
        table = pd.read_csv(Path(tiny_config.output.dir) / "compare_proxies.csv")
        assert table["proxy"].tolist() == ["none", "si", "edge"]
        assert table["tag"].iloc[0] == "EncDec"
        assert table["auc"].between(0, 1).all()
