"""
End-to-end tests of the command-line entry point: exit codes, output files and
byte-identical reruns.
"""
import json

import pytest

from src.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, build_parser, main
from src.utils.helpers import SCHEMA_PREFIX, read_csv

SMALL = {"n": 40, "m": 48, "T": 3, "seeds": 2, "threads": 1}


def _write_config(tmp_path, data, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def _run(tmp_path, command, config=None, extra=()):
    out = tmp_path / "out"
    argv = [command, "--out", str(out)] + list(extra)
    if config is not None:
        argv += ["--config", _write_config(tmp_path, config)]
    return main(argv), out


def test_fixed_point_writes_outputs(tmp_path, capsys):
    code, out = _run(tmp_path, "fixed-point", SMALL)
    assert code == EXIT_OK
    lines = (out / "fixed_point.csv").read_text().splitlines()
    assert lines[0].startswith(SCHEMA_PREFIX + "eta_inv_star,gamma_star")
    assert len(lines) == 3
    report = (out / "fixed_point_report.txt").read_text()
    assert "psi_plus_i: " in report and "small_eps_passed: True" in report
    summary = json.loads((out / "fixed_point_summary.json").read_text())
    assert summary["command"] == "fixed-point"
    assert summary["config"]["n"] == 40
    assert "out" not in summary["config"]
    printed = json.loads(capsys.readouterr().out)
    assert printed["residual"] <= 1e-10


def test_flags_override_file_and_may_precede_command(tmp_path):
    out = tmp_path / "out"
    config = _write_config(tmp_path, dict(SMALL, seed=3))
    code = main(["--seed", "11", "--tol", "1e-12", "state-evolution", "--config", config, "--out", str(out)])
    assert code == EXIT_OK
    summary = json.loads((out / "state_evolution_summary.json").read_text())
    assert summary["config"]["seed"] == 11
    assert summary["config"]["solver"]["tol"] == 1e-12
    assert summary["results"]["eta2_nondecreasing"] is True
    assert len(read_csv(out / "state_evolution.csv")) == 3


def test_malformed_config_is_a_usage_error(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"n": 40,\n "m": }')
    out = tmp_path / "out"
    assert main(["fixed-point", "--config", str(path), "--out", str(out)]) == EXIT_USAGE
    assert "line 2" in capsys.readouterr().err
    assert not out.exists()


@pytest.mark.parametrize("config", [
    {"n": 40, "unknown_key": 1},
    {"reps": 0},
    {"law": {"kind": "two_point", "d_star": 1.0, "e": 2.0}},
    {"prior": {"kind": "three_point"}},
    {"solver": {"starts": [5.0]}},
])
def test_invalid_config_values(tmp_path, capsys, config):
    code, out = _run(tmp_path, "fixed-point", config)
    assert code == EXIT_USAGE
    assert "invalid configuration" in capsys.readouterr().err
    assert not out.exists()


def test_unknown_command_is_a_usage_error(tmp_path):
    assert main(["no-such-command"]) == EXIT_USAGE
    assert build_parser().parse_args(["simulate", "--resume"]).resume is True


def test_degenerate_law_skips_identities(tmp_path):
    config = dict(SMALL, law={"kind": "point_mass", "d_star": 1.0})
    code, out = _run(tmp_path, "fixed-point", config)
    assert code == EXIT_OK
    assert "identities: skipped" in (out / "fixed_point_report.txt").read_text()

    code = main(["identities", "--config", _write_config(tmp_path, config), "--out", str(out)])
    assert code == EXIT_OK
    assert json.loads((out / "identities_summary.json").read_text())["results"] == {"skipped": True}


def test_oracle_budget_checked_before_any_output(tmp_path, capsys):
    code, out = _run(tmp_path, "oracle", dict(SMALL, oracle_sizes=[24], reps=2))
    assert code == EXIT_USAGE
    assert "max_configs" in capsys.readouterr().err
    assert not out.exists()


def test_oracle_rejects_gaussian_prior(tmp_path):
    config = dict(SMALL, prior={"kind": "gaussian", "rho_star": 1.0}, oracle_sizes=[4], reps=2)
    code, _ = _run(tmp_path, "oracle", config)
    assert code == EXIT_USAGE


def test_fixed_point_failure_is_numerical(tmp_path):
    config = dict(SMALL, solver={"max_iter": 1, "tol": 1e-300, "fallback": False})
    code, _ = _run(tmp_path, "fixed-point", config)
    assert code == EXIT_NUMERICAL


def test_oracle_rerun_is_byte_identical(tmp_path):
    config = _write_config(tmp_path, dict(SMALL, oracle_sizes=[4, 5], reps=4, seed=2 ** 64 - 1))
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["oracle", "--config", config, "--out", str(first)]) == EXIT_OK
    assert main(["oracle", "--config", config, "--out", str(second), "--threads", "1"]) == EXIT_OK
    for name in ("oracle.csv", "oracle_summary.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes()
    frame = read_csv(first / "oracle.csv")
    assert list(frame["n"]) == [4, 5] and list(frame["m"]) == [5, 6]


def test_simulate_resume_matches_fresh_run(tmp_path):
    partial, fresh = tmp_path / "partial", tmp_path / "fresh"
    two = _write_config(tmp_path, SMALL, "two.json")
    three = _write_config(tmp_path, dict(SMALL, seeds=3), "three.json")

    assert main(["simulate", "--config", two, "--out", str(partial)]) == EXIT_OK
    assert main(["simulate", "--resume", "--config", three, "--out", str(partial)]) == EXIT_OK
    assert main(["simulate", "--config", three, "--out", str(fresh)]) == EXIT_OK

    for name in ("simulate.csv", "simulate_summary.csv"):
        assert (partial / name).read_bytes() == (fresh / name).read_bytes()
    assert read_csv(fresh / "simulate.csv")["seed"].nunique() == 3
    summary = json.loads((partial / "simulate_summary.json").read_text())
    assert summary["results"]["seeds_run"] == 1


def test_simulate_resume_drops_cut_off_seed(tmp_path):
    out = tmp_path / "out"
    config = _write_config(tmp_path, SMALL)
    assert main(["simulate", "--config", config, "--out", str(out)]) == EXIT_OK
    complete = (out / "simulate.csv").read_bytes()
    lines = complete.decode().splitlines(keepends=True)
    (out / "simulate.csv").write_text("".join(lines[:-1]))

    assert main(["simulate", "--resume", "--config", config, "--out", str(out)]) == EXIT_OK
    assert (out / "simulate.csv").read_bytes() == complete


@pytest.mark.parametrize("command,files", [
    ("delta-table", ["delta_table.csv"]),
    ("stationary", ["stationary.csv"]),
    ("gaussian-ref", ["gaussian_ref.csv"]),
    ("identities", ["identities.csv"]),
])
def test_remaining_commands_run(tmp_path, command, files):
    code, out = _run(tmp_path, command, SMALL)
    assert code == EXIT_OK
    for name in files:
        assert (out / name).read_text().startswith(SCHEMA_PREFIX)
    assert (out / f"{command.replace('-', '_')}_summary.json").exists()
