import os

import numpy as np
import pytest

from vpu import cli
from vpu.data import load_csv


def run(*args):
    return cli.main(list(args))


QUICK = ["--m", "40", "--n", "120", "--n_test", "60", "--epochs", "2",
         "--batch_size", "40", "--hidden", "8,8"]


def make_dataset(tmp_path, name="data", extra=()):
    out = tmp_path / name
    code = run("generate", "--out", str(out), *QUICK, *extra)
    assert code == 0
    return out / "dataset.csv"


class TestGenerate:
    def test_default_sizes(self, tmp_path):
        out = tmp_path / "gen"
        assert run("generate", "--out", str(out)) == 0
        text = (out / "dataset.csv").read_text().splitlines()
        tags = [line.split(",", 1)[0] for line in text[1:]]
        assert tags.count("P") == 500
        assert tags.count("U") == 2000
        assert tags.count("T") == 2000

    def test_byte_identical_per_seed(self, tmp_path):
        a = make_dataset(tmp_path, "a", ("--seed", "9"))
        b = make_dataset(tmp_path, "b", ("--seed", "9"))
        assert a.read_bytes() == b.read_bytes()

    def test_missing_out_is_usage_error(self, capsys):
        assert run("generate") == 2
        assert "out" in capsys.readouterr().err

    def test_prints_summary(self, tmp_path, capsys):
        make_dataset(tmp_path)
        assert "pi_p=0.5" in capsys.readouterr().out


class TestConfigHandling:
    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("epochs = 3\nwarp_speed = 9\n")
        assert run("generate", "--config", str(cfg), "--out", str(tmp_path / "o")) == 2
        assert "warp_speed" in capsys.readouterr().err

    def test_comments_and_blanks(self, tmp_path):
        cfg = tmp_path / "ok.cfg"
        cfg.write_text("# a comment\n\nm = 40\nn = 120  # trailing\nn_test = 0\n")
        out = tmp_path / "o"
        assert run("generate", "--config", str(cfg), "--out", str(out)) == 0
        data = load_csv(str(out / "dataset.csv"))
        assert data.m == 40 and data.n == 120

    def test_flag_overrides_file(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("m = 40\nn = 120\nn_test = 0\n")
        out = tmp_path / "o"
        assert run("generate", "--config", str(cfg), "--m", "25", "--out", str(out)) == 0
        assert load_csv(str(out / "dataset.csv")).m == 25

    def test_resolved_config_echoed(self, tmp_path):
        out = tmp_path / "o"
        make_dataset(tmp_path, "o")
        resolved = (out / "config.resolved").read_text()
        assert "m = 40" in resolved
        assert sorted(line.split(" = ")[0] for line in resolved.strip().splitlines()) \
            == sorted(cli.DEFAULTS)

    def test_fraction_values_accepted(self, tmp_path):
        dataset = make_dataset(tmp_path)
        out = tmp_path / "t"
        assert run("train", "--data", str(dataset), "--out", str(out),
                   "--val_fraction", "1/4", *QUICK) == 0


class TestTrain:
    def test_writes_artifacts(self, tmp_path):
        dataset = make_dataset(tmp_path)
        out = tmp_path / "t"
        assert run("train", "--data", str(dataset), "--out", str(out), *QUICK) == 0
        for name in ("model.txt", "history.csv", "metrics.txt", "metrics.csv",
                     "config.resolved"):
            assert (out / name).exists(), name

    def test_history_header(self, tmp_path):
        dataset = make_dataset(tmp_path)
        out = tmp_path / "t"
        run("train", "--data", str(dataset), "--out", str(out), *QUICK)
        head = (out / "history.csv").read_text().splitlines()[0]
        assert head == "epoch,train_lvar,val_lvar,val_reg,test_acc"

    def test_missing_data_usage_error(self, tmp_path):
        assert run("train", "--out", str(tmp_path / "t")) == 2

    def test_nnpu_needs_explicit_prior(self, tmp_path, capsys):
        dataset = make_dataset(tmp_path)
        code = run("train", "--data", str(dataset), "--out", str(tmp_path / "t"),
                   "--objective", "nnpu", *QUICK)
        assert code == 2
        assert "pi_p" in capsys.readouterr().err

    def test_nnpu_with_prior_completes(self, tmp_path, capsys):
        dataset = make_dataset(tmp_path)
        code = run("train", "--data", str(dataset), "--out", str(tmp_path / "t"),
                   "--objective", "nnpu", "--pi_p", "0.5", *QUICK)
        assert code == 0
        assert "test_acc=" in capsys.readouterr().out

    def test_numeric_failure_exit_code(self, tmp_path, monkeypatch):
        from vpu.trainer import TrainingDiverged
        dataset = make_dataset(tmp_path)

        def boom(config, data):
            raise TrainingDiverged(2, 1, ArithmeticError("nan loss"))

        monkeypatch.setattr(cli, "train", boom)
        assert run("train", "--data", str(dataset),
                   "--out", str(tmp_path / "t"), *QUICK) == 3

    def test_bare_objective_overfits_in_history(self, tmp_path):
        # lambda 0 / reg none on the overlapping task: the history file
        # records a validation curve that turns upward after its minimum
        out_g = tmp_path / "overlap"
        assert run("generate", "--out", str(out_g), "--m", "100",
                   "--mixture", "+1 0.5 1,0 1,1; -1 0.5 -1,0 1,1") == 0
        out = tmp_path / "overfit"
        assert run("train", "--data", str(out_g / "dataset.csv"),
                   "--out", str(out), "--lambda", "0", "--reg", "none",
                   "--hidden", "128,128", "--epochs", "100") == 0
        rows = (out / "history.csv").read_text().strip().splitlines()[1:]
        vals = [float(r.split(",")[2]) for r in rows]
        assert vals[-1] > min(vals)

    def test_rerun_from_resolved_config_is_bit_exact(self, tmp_path):
        dataset = make_dataset(tmp_path)
        out_a = tmp_path / "a"
        assert run("train", "--data", str(dataset), "--out", str(out_a), *QUICK) == 0
        out_b = tmp_path / "b"
        assert run("train", "--config", str(out_a / "config.resolved"),
                   "--out", str(out_b)) == 0
        for name in ("model.txt", "history.csv", "metrics.csv"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name


class TestSweep:
    def test_single_cell_equals_train(self, tmp_path):
        dataset = make_dataset(tmp_path)
        out_s = tmp_path / "s"
        assert run("sweep", "--data", str(dataset), "--out", str(out_s),
                   "--lambda_grid", "0.3", *QUICK) == 0
        out_t = tmp_path / "t"
        assert run("train", "--data", str(dataset), "--out", str(out_t),
                   "--lambda", "0.3", *QUICK) == 0
        assert (out_s / "model.txt").read_bytes() == (out_t / "model.txt").read_bytes()

    def test_full_default_grid_has_ten_rows(self, tmp_path):
        dataset = make_dataset(tmp_path)
        out = tmp_path / "s"
        assert run("sweep", "--data", str(dataset), "--out", str(out),
                   "--epochs", "1", *QUICK[:-2]) == 0
        lines = (out / "sweep.csv").read_text().strip().splitlines()
        assert lines[0] == "lambda,val_lvar,test_acc,best"
        assert len(lines) == 11

    def test_best_row_marked(self, tmp_path):
        dataset = make_dataset(tmp_path)
        out = tmp_path / "s"
        run("sweep", "--data", str(dataset), "--out", str(out),
            "--lambda_grid", "0.01,0.3", *QUICK)
        rows = [l.split(",") for l in (out / "sweep.csv").read_text().strip().splitlines()[1:]]
        stars = [r for r in rows if r[-1] == "*"]
        assert len(stars) == 1
        starred_val = float(stars[0][1])
        assert starred_val == min(float(r[1]) for r in rows)


class TestEval:
    def test_reports_metrics(self, tmp_path, capsys):
        dataset = make_dataset(tmp_path)
        out = tmp_path / "t"
        run("train", "--data", str(dataset), "--out", str(out), *QUICK)
        capsys.readouterr()
        code = run("eval", "--model", str(out / "model.txt"),
                   "--data", str(dataset), "--out", str(tmp_path / "e"))
        assert code == 0
        assert "accuracy=" in capsys.readouterr().out
        assert (tmp_path / "e" / "metrics.csv").exists()

    def test_needs_test_rows(self, tmp_path, capsys):
        dataset = make_dataset(tmp_path, "nolabels", ("--n_test", "0"))
        out = tmp_path / "t"
        run("train", "--data", str(dataset), "--out", str(out), *QUICK)
        assert run("eval", "--model", str(out / "model.txt"),
                   "--data", str(dataset)) == 2


class TestOracleCheck:
    def test_passes_and_prints_table(self, capsys):
        assert run("oracle-check", "--trials", "40") == 0
        out = capsys.readouterr().out
        assert "kl_identity" in out
        assert "all suites passed" in out

    def test_failure_exit_code_and_counterexample(self, capsys, monkeypatch):
        from vpu import oracle as oc

        def broken(trials, seed):
            return [oc.SuiteResult("kl_identity", trials, 2, 0.5, worst_trial=7,
                                   worst_detail="DiscreteJoint instance: ...")]

        monkeypatch.setattr(cli.oracle, "run_property_suites", broken)
        assert run("oracle-check", "--trials", "10") == 1
        out = capsys.readouterr().out
        assert "FAILED kl_identity" in out
        assert "DiscreteJoint instance" in out

    def test_default_trial_count_is_fast(self, capsys):
        import time
        start = time.time()
        assert run("oracle-check") == 0  # default 1000 trials per suite
        assert time.time() - start < 30.0
        capsys.readouterr()

    def test_seed_flag_reproduces_output(self, capsys):
        assert run("oracle-check", "--trials", "25", "--seed", "4") == 0
        first = capsys.readouterr().out
        assert run("oracle-check", "--trials", "25", "--seed", "4") == 0
        assert capsys.readouterr().out == first


class TestBiasExperiment:
    def test_row_count_and_bounds(self, tmp_path):
        out = tmp_path / "bias"
        code = run("bias-exp", "--out", str(out), "--ratios", "1,4",
                   "--bias_total", "120", "--n", "240", "--n_test", "120",
                   "--epochs", "2", "--batch_size", "60", "--hidden", "8,8")
        assert code == 0
        rows = (out / "bias.csv").read_text().strip().splitlines()
        assert rows[0] == "ratio,method,accuracy"
        assert len(rows) == 1 + 2 * 2
        bounds = (out / "bias_bounds.csv").read_text().strip().splitlines()
        assert bounds[0] == "ratio,c1,c2,epsilon,bound"
        assert len(bounds) == 3
        # ratio 1 is the unbiased case: envelope collapses, bound ~ epsilon
        _, c1, c2, eps, bound = (float(v) for v in bounds[1].split(","))
        assert c1 == pytest.approx(1.0, abs=0.01)
        assert c2 == pytest.approx(1.0, abs=0.01)
        assert bound < 0.05

    def test_needs_multiple_positive_subclasses(self, tmp_path, capsys):
        code = run("bias-exp", "--out", str(tmp_path / "b"),
                   "--mixture", cli.DEFAULT_MIXTURE)
        assert code == 2
        assert "positive" in capsys.readouterr().err


class TestUsage:
    def test_unknown_command(self):
        with pytest.raises(SystemExit) as exc:
            run("frobnicate")
        assert exc.value.code == 2

    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as exc:
            run("train", "--warp", "9")
        assert exc.value.code == 2
