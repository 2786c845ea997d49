import json
import os
import textwrap

import numpy as np
import pytest

from wiorbo.errors import ConfigError
from wiorbo.harness import fit_sampler_errors, parse_config, run_experiment
from wiorbo.harness.cli import main
from wiorbo.harness.experiment import DEFAULT_OUT_DIR, OUT_DIR_ENV, resolve_out_dir
from wiorbo.solvers import CSV_COLUMNS

QUAD = textwrap.dedent(
    """\
    [problem]
    name = "quadratic_bilevel"
    seed = 0
    p = 3
    d = 3
    m = 4
    n = 4
    interpolate = true

    [algorithm]
    name = "wior_bo"
    samplers = ["independent", "shuffle_once", "random_reshuffle"]

    [run]
    epochs = 5
    eta = 0.05
    gamma = 0.2
    rho = 0.2

    [trials]
    seeds = [0, 1, 2, 3, 4]

    [fit]
    order_epochs = 16
    """
)


def _write(tmp_path, text, name="exp.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _strip_wall(csv_text):
    return [line.rsplit(",", 1)[0] for line in csv_text.splitlines()]


class TestConfig:
    def test_parses(self):
        cfg = parse_config(QUAD)
        assert cfg.problem == "quadratic_bilevel" and len(cfg.samplers) == 3
        assert cfg.problem_params == {"p": 3, "d": 3, "m": 4, "n": 4, "interpolate": True}
        assert cfg.grad_norm_target == 1e-3

    def test_unknown_key_reports_line(self):
        text = QUAD.replace("rho = 0.2", "rho = 0.2\nrhoo = 0.3")
        with pytest.raises(ConfigError, match=r"run\.rhoo \(line 19\)"):
            parse_config(text)

    def test_unknown_problem_key(self):
        with pytest.raises(ConfigError, match="problem.kappa"):
            parse_config(QUAD.replace("n = 4", "n = 4\nkappa = 3"))

    def test_wrong_type(self):
        with pytest.raises(ConfigError, match="run.epochs.*expected int"):
            parse_config(QUAD.replace("epochs = 5", 'epochs = "5"'))

    def test_empty_seeds(self):
        with pytest.raises(ConfigError, match="trials.seeds"):
            parse_config(QUAD.replace("seeds = [0, 1, 2, 3, 4]", "seeds = []"))

    def test_incompatible_algorithm(self):
        with pytest.raises(ConfigError, match="cannot run"):
            parse_config(QUAD.replace('name = "wior_bo"', 'name = "wior_minimax"'))

    def test_double_loop_keys_rejected_for_single_loop(self):
        with pytest.raises(ConfigError, match="inner_epochs"):
            parse_config(QUAD.replace("epochs = 5", "epochs = 5\ninner_epochs = 2"))

    def test_missing_rate(self):
        with pytest.raises(ConfigError, match="run.gamma"):
            parse_config(QUAD.replace("gamma = 0.2\n", ""))

    def test_bad_sampler(self):
        with pytest.raises(ConfigError, match="samplers"):
            parse_config(QUAD.replace('"independent", ', '"herding", '))

    def test_toml_syntax_error(self):
        with pytest.raises(ConfigError, match="cannot parse"):
            parse_config("[problem\nname = 1")


class TestRunExperiment:
    def test_outputs_and_summary(self, tmp_path):
        cfg = parse_config(QUAD).with_out_dir(str(tmp_path / "out"))
        result = run_experiment(cfg)
        files = sorted(os.listdir(tmp_path / "out"))
        assert len([f for f in files if f.endswith(".csv")]) == 15 and "summary.json" in files
        assert result.exit_code == 0
        header = (tmp_path / "out" / "wior_bo_random_reshuffle_seed3.csv").read_text().splitlines()[0]
        assert tuple(header.split(",")) == CSV_COLUMNS

        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        for name, block in summary["samplers"].items():
            traces = [result.traces[(s, seed)] for (s, seed) in result.traces if s.value == name]
            totals = {k: sum(t.counters[k] for t in traces) for k in block["counter_totals"]}
            assert block["counter_totals"] == totals
            assert block["completed_trials"] == 5 and block["incomplete_trials"] == []

    def test_byte_reproducible(self, tmp_path):
        cfg = parse_config(QUAD)
        a = run_experiment(cfg.with_out_dir(str(tmp_path / "a")))
        b = run_experiment(cfg.with_out_dir(str(tmp_path / "b")))
        for f in os.listdir(tmp_path / "a"):
            if f.endswith(".csv"):
                assert _strip_wall((tmp_path / "a" / f).read_text()) == _strip_wall((tmp_path / "b" / f).read_text())
        assert a.summary.to_dict() == b.summary.to_dict()

    def test_parallel_matches_serial(self, tmp_path):
        cfg = parse_config(QUAD.replace("[0, 1, 2, 3, 4]", "[0, 1]"))
        serial = run_experiment(cfg.with_out_dir(str(tmp_path / "s")), jobs=1)
        parallel = run_experiment(cfg.with_out_dir(str(tmp_path / "p")), jobs=2)
        assert serial.summary.to_dict() == parallel.summary.to_dict()

    def test_divergence_flags_incomplete(self, tmp_path):
        text = QUAD.replace("eta = 0.05", "eta = 80.0").replace("[0, 1, 2, 3, 4]", "[0, 1]")
        result = run_experiment(parse_config(text).with_out_dir(str(tmp_path)))
        assert result.exit_code == 2
        block = result.summary.to_dict()["samplers"]["random_reshuffle"]
        assert block["completed_trials"] == 0
        assert {t["reason"] for t in block["incomplete_trials"]} == {"diverged"}
        assert block["median_epochs_to_tolerance"] is None

    def test_unreached_target_counts_as_worst(self, tmp_path):
        text = QUAD.replace("[fit]", "[targets]\ngrad_norm = 1e-30\n\n[fit]")
        result = run_experiment(parse_config(text).with_out_dir(str(tmp_path)))
        assert result.summary.samplers["independent"].median_epochs_to_tolerance == np.inf
        assert result.summary.to_dict()["samplers"]["independent"]["median_epochs_to_tolerance"] is None

    def test_irm_reshuffle_not_slower(self, tmp_path):
        text = textwrap.dedent(
            """\
            [problem]
            name = "irm"
            m = 100
            n = 20
            [algorithm]
            name = "wior_cbo"
            samplers = ["independent", "random_reshuffle"]
            [run]
            epochs = 40
            inner_epochs = 2
            eta = 0.02
            gamma = 0.3
            rho = 0.3
            [trials]
            seeds = [0, 1, 2]
            [targets]
            grad_norm = 0.02
            """
        )
        result = run_experiment(parse_config(text).with_out_dir(str(tmp_path)), jobs=3)
        s = result.summary.samplers
        assert s["random_reshuffle"].median_epochs_to_tolerance <= s["independent"].median_epochs_to_tolerance


class TestFit:
    def test_permutation_whole_order_zero(self):
        # a window covering the whole order is a union of full blocks
        text = QUAD.replace("interpolate = true", "interpolate = false")
        cfg = parse_config(text.replace("order_epochs = 16", "order_epochs = 16\nk_values = [1, 4, 64]"))
        fits = fit_sampler_errors(cfg, write=False)
        for dataset in ("outer", "inner"):
            for name in ("shuffle_once", "random_reshuffle"):
                for trial in fits[dataset][name]["trials"]:
                    assert trial["sq_errors"][-1] < 1e-24
            assert max(t["sq_errors"][-1] for t in fits[dataset]["independent"]["trials"]) > 1e-6

    def test_alpha_ordering_on_quadratic(self):
        text = QUAD.replace("p = 3\nd = 3\nm = 4\nn = 4\ninterpolate = true", "p = 10\nd = 10\nm = 32\nn = 32")
        text = text.replace("[0, 1, 2, 3, 4]", str(list(range(20)))).replace("order_epochs = 16", "order_epochs = 64")
        text = text.replace('"independent", "shuffle_once", ', '"independent", ')
        fits = fit_sampler_errors(parse_config(text), write=False)["outer"]
        assert 0.5 <= fits["independent"]["alpha_hat_median"] <= 1.5
        assert fits["random_reshuffle"]["alpha_hat_median"] > fits["independent"]["alpha_hat_median"]

    def test_writes_json(self, tmp_path):
        cfg = parse_config(QUAD).with_out_dir(str(tmp_path))
        fit_sampler_errors(cfg)
        data = json.loads((tmp_path / "fit.json").read_text())
        assert set(data) == {"outer", "inner"}


class TestCli:
    def test_validate_ok(self, tmp_path, capsys):
        assert main(["validate", _write(tmp_path, QUAD)]) == 0
        assert "quadratic_bilevel" in capsys.readouterr().out

    def test_config_error_exit_1(self, tmp_path, capsys):
        path = _write(tmp_path, QUAD.replace("[0, 1, 2, 3, 4]", "[]"))
        assert main(["run", path, "--out-dir", str(tmp_path / "o")]) == 1
        assert "trials.seeds" in capsys.readouterr().err

    def test_missing_file_exit_1(self, tmp_path):
        assert main(["validate", str(tmp_path / "nope.toml")]) == 1

    def test_io_error_exit_3(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        path = _write(tmp_path, QUAD.replace("[0, 1, 2, 3, 4]", "[0]"))
        assert main(["run", path, "--out-dir", str(blocker / "sub")]) == 3

    def test_divergence_exit_2(self, tmp_path):
        path = _write(tmp_path, QUAD.replace("eta = 0.05", "eta = 80.0").replace("[0, 1, 2, 3, 4]", "[0]"))
        assert main(["run", path, "--out-dir", str(tmp_path / "o")]) == 2

    def test_seed_offset_and_jobs(self, tmp_path):
        path = _write(tmp_path, QUAD.replace("[0, 1, 2, 3, 4]", "[0, 1]"))
        out = tmp_path / "o"
        assert main(["run", path, "--out-dir", str(out), "--seed-offset", "10", "--jobs", "2"]) == 0
        names = {f for f in os.listdir(out) if f.endswith(".csv")}
        assert "wior_bo_independent_seed10.csv" in names and "wior_bo_independent_seed11.csv" in names

    def test_fit_errors_command(self, tmp_path):
        path = _write(tmp_path, QUAD.replace("[0, 1, 2, 3, 4]", "[0]"))
        assert main(["fit-errors", path, "--out-dir", str(tmp_path / "o")]) == 0
        assert (tmp_path / "o" / "fit.json").exists()

    def test_out_dir_precedence(self, tmp_path, monkeypatch):
        cfg = parse_config(QUAD)
        monkeypatch.delenv(OUT_DIR_ENV, raising=False)
        assert resolve_out_dir(cfg) == DEFAULT_OUT_DIR
        monkeypatch.setenv(OUT_DIR_ENV, "from-env")
        assert resolve_out_dir(cfg) == "from-env"
        with_section = parse_config(QUAD + '\n[output]\ndir = "from-config"\n')
        assert resolve_out_dir(with_section) == "from-config"
        assert resolve_out_dir(with_section.with_out_dir("from-flag")) == "from-flag"
