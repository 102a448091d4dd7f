import configparser
import subprocess
import sys

import pytest

from mmcon.cli import main
from mmcon.data import read_dataset

SMALL = ["data.n_patients=24", "data.feature_dim=4", "train.epochs=3", "train.hidden_dim=8", "train.embed_dim=4"]


def _effective(out):
    cfg = configparser.ConfigParser()
    cfg.read(out / "effective_config.ini", encoding="utf-8")
    return cfg


class TestGenData:
    def test_cohort_shape(self, tmp_path):
        assert main(["gen-data", "--out", str(tmp_path), "data.n_patients=502", "data.class_balance=0.2749003984063745"]) == 0
        lines = (tmp_path / "dataset.csv").read_text(encoding="utf-8").splitlines()
        assert len(lines) == 2008 + 1
        ds = read_dataset(tmp_path / "dataset.csv")
        assert int(ds.labels.sum()) == 138
        assert len((tmp_path / "folds.csv").read_text().splitlines()) == 502 + 1

    def test_seed_flag_changes_data(self, tmp_path):
        main(["gen-data", "--out", str(tmp_path / "a"), "--seed", "1", "data.n_patients=10"])
        main(["gen-data", "--out", str(tmp_path / "b"), "--seed", "2", "data.n_patients=10"])
        assert (tmp_path / "a" / "dataset.csv").read_bytes() != (tmp_path / "b" / "dataset.csv").read_bytes()


class TestConfig:
    def test_missing_config(self, tmp_path, capsys):
        missing = tmp_path / "nope.ini"
        assert main(["gen-data", "--config", str(missing), "--out", str(tmp_path)]) == 1
        err = capsys.readouterr().err
        assert str(missing) in err
        assert len(err.strip().splitlines()) == 1

    def test_flags_beat_overrides_beat_file(self, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text("[loss]\ntemperature = 0.5\nmargin_mode = literal\n[train]\nk_folds = 4\n", encoding="utf-8")
        out = tmp_path / "out"
        args = ["gen-data", "--config", str(ini), "--out", str(out), "loss.temperature=0.1", "train.k_folds=3"]
        assert main(args + ["--k", "5", "--margin-mode", "positive-only", "data.n_patients=10"]) == 0
        eff = _effective(out)
        assert eff["loss"]["temperature"] == "0.1"
        assert eff["loss"]["margin_mode"] == "positive_only"
        assert eff["train"]["k_folds"] == "5"
        assert eff["data"]["n_patients"] == "10"

    def test_effective_config_reloads(self, tmp_path):
        out = tmp_path / "out"
        assert main(["gen-data", "--out", str(out), "data.n_patients=12", "--loss", "margincon"]) == 0
        eff = _effective(out)
        assert eff["train"]["loss_kind"] == "margin_con"
        again = tmp_path / "again"
        assert main(["gen-data", "--config", str(out / "effective_config.ini"), "--out", str(again)]) == 0
        assert (out / "dataset.csv").read_bytes() == (again / "dataset.csv").read_bytes()

    @pytest.mark.parametrize(
        "bad",
        [["loss.temperature=-1"], ["loss.bogus=1"], ["nosection=1"], ["train.epochs=many"], ["data.n_patients=1"]],
    )
    def test_invalid_values_exit_1(self, tmp_path, bad, capsys):
        assert main(["gen-data", "--out", str(tmp_path)] + bad) == 1
        assert capsys.readouterr().err.startswith("mmcon: error:")

    def test_unknown_section(self, tmp_path):
        ini = tmp_path / "x.ini"
        ini.write_text("[model]\nwidth = 3\n", encoding="utf-8")
        assert main(["gen-data", "--config", str(ini), "--out", str(tmp_path)]) == 1


class TestTrainEval:
    def test_train_then_eval_holdout(self, tmp_path, capsys):
        common = ["--out", str(tmp_path), "train.holdout_fold=0", "train.k_folds=4"] + SMALL
        assert main(["train", "--figures"] + common) == 0
        assert (tmp_path / "checkpoint.json").is_file()
        assert (tmp_path / "loss_curve.png").stat().st_size > 0
        curve = (tmp_path / "loss_curve.csv").read_text().splitlines()
        assert curve[0] == "epoch,loss" and len(curve) == 4
        assert main(["eval", "--checkpoint", str(tmp_path / "checkpoint.json")] + common) == 0
        metrics = (tmp_path / "metrics.csv").read_text().splitlines()
        assert metrics[0].startswith("fold,accuracy") and metrics[1].startswith("0,")
        assert "accuracy=" in capsys.readouterr().out

    def test_eval_with_test_file(self, tmp_path):
        main(["gen-data", "--out", str(tmp_path / "test"), "--seed", "7"] + SMALL)
        main(["gen-data", "--out", str(tmp_path / "train")] + SMALL)
        data = ["--data", str(tmp_path / "train" / "dataset.csv")]
        assert main(["train", "--out", str(tmp_path)] + data + SMALL) == 0
        args = ["eval", "--out", str(tmp_path), "--checkpoint", str(tmp_path / "checkpoint.json"), "--test-data", str(tmp_path / "test" / "dataset.csv")]
        assert main(args + data + SMALL) == 0

    def test_eval_needs_checkpoint(self, tmp_path):
        assert main(["eval", "--out", str(tmp_path)]) == 1
        assert main(["eval", "--out", str(tmp_path), "--checkpoint", str(tmp_path / "none.json")]) == 1

    def test_missing_dataset(self, tmp_path, capsys):
        assert main(["train", "--out", str(tmp_path), "--data", str(tmp_path / "absent.csv")]) == 1
        assert "absent.csv" in capsys.readouterr().err


class TestCrossValidate:
    def test_outputs_and_figures(self, tmp_path, capsys):
        args = ["cross-validate", "--out", str(tmp_path), "--k", "3", "--figures", "--denominator", "all"] + SMALL
        assert main(args) == 0
        metrics = (tmp_path / "metrics.csv").read_text(encoding="utf-8")
        assert len(metrics.splitlines()) == 1 + 3 + 2
        assert capsys.readouterr().out == metrics
        for name in ("loss_curve.csv", "folds.csv", "loss_curves.png", "fold_metrics.png"):
            assert (tmp_path / name).stat().st_size > 0
        assert _effective(tmp_path)["loss"]["denominator_mode"] == "all_non_anchor"

    def test_byte_identical_reruns(self, tmp_path):
        for name in ("a", "b"):
            assert main(["cross-validate", "--out", str(tmp_path / name), "--k", "3", "--seed", "4"] + SMALL) == 0
        for name in ("metrics.csv", "loss_curve.csv", "folds.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_jobs_do_not_change_output(self, tmp_path):
        main(["cross-validate", "--out", str(tmp_path / "a"), "--k", "3"] + SMALL)
        main(["cross-validate", "--out", str(tmp_path / "b"), "--k", "3", "--jobs", "2"] + SMALL)
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


class TestChecks:
    def test_oracle_check(self, tmp_path, capsys):
        assert main(["oracle-check", "--out", str(tmp_path), "check.oracle_batches=20"]) == 0
        assert "max abs difference" in capsys.readouterr().out

    def test_gradcheck_passes_small_sweep(self, tmp_path, capsys):
        assert main(["gradcheck", "--out", str(tmp_path), "check.gradcheck_configs=2"]) == 0
        assert "max relative error" in capsys.readouterr().out

    def test_gradcheck_fails_above_tolerance(self, tmp_path, capsys):
        assert main(["gradcheck", "--out", str(tmp_path), "check.gradcheck_configs=1", "check.gradcheck_tolerance=1e-30"]) == 2
        assert "FAILED" in capsys.readouterr().out

    @pytest.mark.slow
    def test_gradcheck_defaults_exit_matches_report(self, tmp_path, capsys):
        code = main(["gradcheck", "--out", str(tmp_path)])
        line = capsys.readouterr().out.splitlines()[0]
        err = float(line.split("max relative error ")[1].split()[0])
        assert code == (0 if err <= 1e-5 else 2)


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "mmcon", "gen-data", "--out", str(tmp_path), "data.n_patients=10"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "10 patients x 4 views = 40 rows" in proc.stdout
