import json
import math
from pathlib import Path

import numpy as np
import pytest
import yaml

from apecs.cli import main
from apecs.config import ConfigError, load_config
from apecs.reporting import dumps_json

TINY_OVERRIDES = {
    "seed": 7,
    "dataset": {"n_samples": 250},
    "network": {"hidden_layers": 2, "width": 6},
    "training": {"epochs": 25, "learning_rate": 0.0008, "lr_final": 0.0004, "init_gain": 1.6, "lipschitz_bound": 8.0},
    "eval": {"max_steps": 900},
    "sweep": {"bounds": [2.0, 8.0]},
}


def write_tiny_config(tmp_path: Path, **extra) -> Path:
    cfg = dict(TINY_OVERRIDES)
    cfg.update(extra)
    cfg["out_dir"] = str(tmp_path / "runs")
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


class TestGammaCommand:
    def test_reference_point(self, capsys):
        assert main(["gamma", "11.996"]) == 0
        out = capsys.readouterr().out
        values = {line.split()[0]: line.split()[1] for line in out.strip().splitlines()}
        assert float(values["gamma_star"]) == pytest.approx(0.998, abs=1e-3)
        assert values["conditions_ok"] == "true"
        # the printed initializer chains through the full-precision gamma*
        from apecs.weighting import init_lipschitz, optimal_gamma

        expected = init_lipschitz(11.996, optimal_gamma(11.996))
        assert float(values["l_t_init"]) == pytest.approx(expected, abs=1e-6)
        assert expected == pytest.approx(0.962, abs=1e-3)

    def test_alpha_zero(self, capsys):
        assert main(["gamma", "0"]) == 0
        out = capsys.readouterr().out
        values = {line.split()[0]: line.split()[1] for line in out.strip().splitlines()}
        assert float(values["gamma_star"]) == pytest.approx(0.75)
        assert float(values["l_t_init"]) == pytest.approx(0.75)

    def test_small_alpha_prints_six_decimals(self, capsys):
        assert main(["gamma", "0.2"]) == 0
        out = capsys.readouterr().out
        # 3 * 1.2^2 / (3 * 0.2 * 2.2 + 4) = 4.32 / 5.32
        assert "gamma_star    0.812030" in out
        assert "conditions_ok true" in out

    def test_negative_alpha_is_usage_error(self):
        with pytest.raises(SystemExit) as err:
            main(["gamma", "--", "-1.0"])
        assert err.value.code == 2


class TestConfigValidation:
    def test_missing_file_exits_nonzero_without_outputs(self, tmp_path, capsys):
        rc = main(["train", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "runs")])
        assert rc == 1
        assert not (tmp_path / "runs").exists()
        assert "config error" in capsys.readouterr().err

    def test_unknown_key_named(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.safe_dump({"novice": {"gain_excess": 1.5, "wobble": 3}}))
        with pytest.raises(ConfigError, match="novice.wobble"):
            load_config(path)

    def test_invalid_value_rejected(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.safe_dump({"novice": {"gain_excess": 0.5}}))
        with pytest.raises(ConfigError, match="novice"):
            load_config(path)

    def test_unknown_plan_rejected(self, tmp_path, capsys):
        cfg = write_tiny_config(tmp_path)
        rc = main(["train", "--config", str(cfg), "--plan", "apecs-g2"])
        assert rc == 1
        assert "unknown plan" in capsys.readouterr().err

    def test_benchmark_config_loads(self):
        cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "benchmark.yaml")
        assert cfg.dataset.n_samples == 10000
        assert cfg.training.epochs == 1000


class TestPipeline:
    @pytest.fixture(scope="class")
    def workspace(self, tmp_path_factory):
        tmp = tmp_path_factory.mktemp("pipeline")
        cfg_path = write_tiny_config(tmp)
        rc = main(["train", "--config", str(cfg_path), "--plan", "apecs-gstar,f-gstar"])
        assert rc == 0
        rc = main(["eval", "--config", str(cfg_path), "--all"])
        assert rc == 0
        return tmp, cfg_path

    def test_train_outputs_exist(self, workspace):
        tmp, _ = workspace
        plan_dir = tmp / "runs" / "train" / "apecs-gstar"
        for name in ("report.json", "loss_curve.csv", "loss_curve.png", "checkpoint.json"):
            assert (plan_dir / name).exists()

    def test_report_is_valid_json_with_losses(self, workspace):
        tmp, _ = workspace
        doc = json.loads((tmp / "runs" / "train" / "apecs-gstar" / "report.json").read_text())
        assert len(doc["loss"]["total"]) == 25
        assert 0.0 < doc["gamma"] < 1.0
        assert doc["l_t_init"] > 0.0
        assert doc["plan"]["kind"] == "apecs"
        assert doc["course"]["length_m"] > 200.0
        assert doc["config"]["vehicle"]["wheelbase_m"] == 2.9

    def test_loss_csv_schema(self, workspace):
        tmp, _ = workspace
        lines = (tmp / "runs" / "train" / "apecs-gstar" / "loss_curve.csv").read_text().splitlines()
        assert lines[0] == "epoch,l_human,l_expert,l_total"
        assert len(lines) == 26

    def test_eval_outputs(self, workspace):
        tmp, _ = workspace
        eval_dir = tmp / "runs" / "eval"
        table = (eval_dir / "rmse_table.csv").read_text().splitlines()
        assert table[0] == "model,rmse_m"
        names = [line.split(",")[0] for line in table[1:]]
        assert set(names) == {"expert", "novice", "apecs-gstar", "f-gstar"}
        values = [float(line.split(",")[1]) for line in table[1:]]
        assert values == sorted(values)
        assert (eval_dir / "trajectory.png").exists()
        assert (eval_dir / "novice_trace.csv").read_text().splitlines()[0] == "t,x,y,heading,speed,steer,throttle,cte"

    def test_recorded_rmse_matches_reeval(self, workspace):
        tmp, _ = workspace
        doc = json.loads((tmp / "runs" / "train" / "apecs-gstar" / "report.json").read_text())
        table = dict(
            line.split(",")
            for line in (tmp / "runs" / "eval" / "rmse_table.csv").read_text().splitlines()[1:]
        )
        assert float(table["apecs-gstar"]) == pytest.approx(doc["rmse_m"], abs=5e-9)

    def test_single_checkpoint_eval(self, workspace, capsys):
        tmp, cfg_path = workspace
        ckpt = tmp / "runs" / "train" / "f-gstar" / "checkpoint.json"
        rc = main(["eval", "--config", str(cfg_path), "--checkpoint", str(ckpt)])
        assert rc == 0


class TestDeterminism:
    def test_repeat_train_identical_apart_from_timestamp(self, tmp_path):
        cfg_path = write_tiny_config(tmp_path)
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        for out in (out_a, out_b):
            rc = main(["train", "--config", str(cfg_path), "--plan", "apecs-gstar", "--out", str(out)])
            assert rc == 0
        csv_a = (out_a / "train" / "apecs-gstar" / "loss_curve.csv").read_bytes()
        csv_b = (out_b / "train" / "apecs-gstar" / "loss_curve.csv").read_bytes()
        assert csv_a == csv_b
        strip = lambda p: [
            line
            for line in (p / "train" / "apecs-gstar" / "report.json").read_text().splitlines()
            if '"generated_at"' not in line
        ]
        assert strip(out_a) == strip(out_b)
        ck_a = (out_a / "train" / "apecs-gstar" / "checkpoint.json").read_bytes()
        assert ck_a == (out_b / "train" / "apecs-gstar" / "checkpoint.json").read_bytes()


class TestSweepCommand:
    def test_sweep_csv_and_summary(self, tmp_path, capsys):
        cfg_path = write_tiny_config(tmp_path, training={**TINY_OVERRIDES["training"], "epochs": 12})
        rc = main(["sweep", "--config", str(cfg_path)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "best bound=" in out
        lines = (tmp_path / "runs" / "sweep" / "lipschitz_sweep.csv").read_text().splitlines()
        assert lines[0] == "bound,rmse_m,diverged"
        assert len(lines) == 3
        assert (tmp_path / "runs" / "sweep" / "sweep.png").exists()


class TestJsonSerialization:
    def test_floats_round_trip_exactly(self):
        rng = np.random.default_rng(0)
        values = list(rng.uniform(-1e6, 1e6, 50)) + [0.1, 1 / 3, math.pi, 1e-300, 5e300]
        doc = {"values": values, "nested": {"x": 0.1}, "flag": True, "none": None, "n": 42}
        text = dumps_json(doc)
        parsed = json.loads(text)
        assert parsed["values"] == values
        assert parsed["nested"]["x"] == 0.1
        assert parsed["flag"] is True and parsed["none"] is None and parsed["n"] == 42

    def test_seventeen_significant_digits(self):
        text = dumps_json({"x": 0.1})
        assert "0.10000000000000001" in text
