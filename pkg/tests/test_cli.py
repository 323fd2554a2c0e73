"""Command-line front end: config parsing, commands, artifacts, exit codes."""

import json
import math
import os

import numpy as np
import pytest

from mtl import catalog
from mtl.cli import (
    EXIT_CONFIG,
    EXIT_INCONCLUSIVE,
    EXIT_OK,
    EXIT_REPRODUCE,
    EXIT_SOLVER,
    ConfigError,
    default_grid,
    eval_number,
    main,
    parse_config,
)
from mtl.criterion import system_fingerprint
from mtl.groundstate import load_profiles
from mtl.model import Grid


@pytest.fixture(autouse=True)
def _isolate_cwd(tmp_path_factory, monkeypatch):
    # error paths without an --out directory drop error.json in the cwd
    monkeypatch.chdir(tmp_path_factory.mktemp("cwd"))


def cfg_file(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


QUADRATIC = """\
[params]
sigma = 2

[system]
dimension = 1
lambda = 1, sigma
omega = 1, 2
labels = u, v

[system.term.1]
coefficient = 1 - 2*sigma
p = 0, 1
q = 0, 1

[system.term.2]
coefficient = -1
p = 0, 1
q = 2, 0
"""


# ------------------------------------------------------------- expressions


def test_expression_evaluator():
    assert eval_number("3/2", {}) == 1.5
    assert eval_number("sqrt(2)", {}) == math.sqrt(2.0)
    assert eval_number("-a * (1 + b)", {"a": 2.0, "b": 0.5}) == -3.0
    assert eval_number("2*pi", {}) == 2.0 * math.pi
    with pytest.raises(ValueError, match="unknown name"):
        eval_number("nope", {})
    with pytest.raises(ValueError, match="division by zero"):
        eval_number("1/0", {})
    with pytest.raises(ValueError, match="unsupported"):
        eval_number("__import__('os')", {})
    with pytest.raises(ValueError, match="unsupported"):
        eval_number("[1,2]", {})


# ----------------------------------------------------------------- parsing


def test_builtin_configs_match_catalog():
    pairs = {
        "quadratic_sync_1d": catalog.quadratic_two_component(2.0),
        "quadratic_sync_3d": catalog.quadratic_two_component(5.0, dimension=3),
        "three_wave_1d": catalog.three_wave(1),
        "cubic_2d": catalog.cubic_third_harmonic(dimension=2),
        "rabi_2d": catalog.rabi_coupled(),
    }
    for name, spec in pairs.items():
        cfg = parse_config(f"builtin:{name}")
        assert system_fingerprint(cfg.spec) == system_fingerprint(spec), name
        assert cfg.spec.labels == spec.labels


def test_unknown_builtin_lists_available(tmp_path):
    with pytest.raises(ConfigError, match="quadratic_sync_1d"):
        parse_config("builtin:nope")


def test_missing_file():
    with pytest.raises(ConfigError, match="no such config file"):
        parse_config("/does/not/exist.cfg")


def test_empty_config_reports_missing_system(tmp_path):
    with pytest.raises(ConfigError, match=r"missing \[system\] section"):
        parse_config(cfg_file(tmp_path, ""))


def test_parse_errors_carry_line_numbers(tmp_path):
    text = QUADRATIC + "\n[grid]\nextent = twenty\n"
    bad_line = text.splitlines().index("extent = twenty") + 1
    with pytest.raises(ConfigError) as err:
        parse_config(cfg_file(tmp_path, text))
    (line,) = err.value.lines()
    assert f":{bad_line}:" in line
    assert "unknown name 'twenty'" in line


def test_reader_rejects_malformed_lines(tmp_path):
    text = "junk = 1\n[system\n[what.ever]\n[system]\nx\ndimension = 1\ndimension = 2\n9bad = 3\nempty =\n"
    with pytest.raises(ConfigError) as err:
        parse_config(cfg_file(tmp_path, text))
    messages = "\n".join(err.value.lines())
    assert ":1: key 'junk' appears before any section" in messages
    assert ":2: malformed section header" in messages
    assert ":3: unknown section [what.ever]" in messages
    assert ":5: expected 'key = value'" in messages
    assert ":7: duplicate key 'dimension'" in messages
    assert ":8: bad key name '9bad'" in messages
    assert ":9: key 'empty' has an empty value" in messages


def test_duplicate_section_rejected(tmp_path):
    text = QUADRATIC + "\n[params]\nother = 1\n"
    with pytest.raises(ConfigError, match=r"duplicate section \[params\]"):
        parse_config(cfg_file(tmp_path, text))


def test_unknown_keys_are_hard_errors(tmp_path):
    text = QUADRATIC.replace("[params]\n", "[params]\n") + "\n[solver]\nmethod = synchronous\nspeed = 11\n"
    with pytest.raises(ConfigError, match=r"unknown key 'speed' in \[solver\]"):
        parse_config(cfg_file(tmp_path, text))
    text2 = QUADRATIC.replace("labels = u, v", "labels = u, v\ncolour = red")
    with pytest.raises(ConfigError, match=r"unknown key 'colour' in \[system\]"):
        parse_config(cfg_file(tmp_path, text2))


def test_term_sections_must_be_consecutive(tmp_path):
    text = QUADRATIC.replace("[system.term.2]", "[system.term.3]")
    with pytest.raises(ConfigError, match="without gaps"):
        parse_config(cfg_file(tmp_path, text))


def test_gauge_mismatch_names_term_and_value(tmp_path, capsys):
    text = """\
[system]
dimension = 1
lambda = 1, 3
omega = 1, 3
labels = u, v

[system.term.1]
coefficient = -1
p = 0, 1
q = 2, 0
"""
    path = cfg_file(tmp_path, text)
    with pytest.raises(ConfigError) as err:
        parse_config(path)
    (line,) = err.value.lines()
    assert "term 1 breaks the common gauge: phase sum mismatch 1" in line
    assert ":7:" in line  # the term's section header
    assert main(["validate", path]) == EXIT_CONFIG
    assert "phase sum mismatch 1" in capsys.readouterr().err


def test_exact_rational_omegas_survive(tmp_path):
    from fractions import Fraction

    text = QUADRATIC.replace("omega = 1, 2", "omega = 3/2, 3")
    cfg = parse_config(cfg_file(tmp_path, text))
    assert cfg.spec.omega_exact == (Fraction(3, 2), Fraction(3, 1))


def test_set_overrides_params_and_sections():
    base = parse_config("builtin:quadratic_sync_1d")
    assert base.params["sigma"] == 2.0

    swept = parse_config("builtin:quadratic_sync_1d", ("sigma=35",))
    assert swept.params["sigma"] == 35.0
    assert system_fingerprint(swept.spec) == system_fingerprint(
        catalog.quadratic_two_component(35.0)
    )

    pointy = parse_config(
        "builtin:quadratic_sync_1d", ("grid.points=1024", "grid.extent=30")
    )
    assert pointy.grid == Grid(1, 30.0, 1024)
    assert not pointy.grid_auto

    with pytest.raises(ConfigError, match=r"--set: unknown key 'bogus'"):
        parse_config("builtin:quadratic_sync_1d", ("grid.bogus=1",))
    with pytest.raises(ConfigError, match="--set: expected NAME=VALUE"):
        parse_config("builtin:quadratic_sync_1d", ("sigma",))
    with pytest.raises(ConfigError, match="does not address a known section"):
        parse_config("builtin:quadratic_sync_1d", ("nope.sigma=1",))


def test_simulate_section_validation(tmp_path):
    text = QUADRATIC + "\n[simulate]\nT = 1\ndt = 0.001\nerror_control = maybe\n"
    with pytest.raises(ConfigError, match="error_control must be true or false"):
        parse_config(cfg_file(tmp_path, text))
    text = QUADRATIC + "\n[simulate]\ndt = 0.001\n"
    with pytest.raises(ConfigError, match=r"\[simulate\] is missing required key 'T'"):
        parse_config(cfg_file(tmp_path, text))
    text = QUADRATIC + "\n[simulate]\nT = -3\n"
    with pytest.raises(ConfigError, match="T must be positive"):
        parse_config(cfg_file(tmp_path, text))


def test_solver_section_validation(tmp_path):
    text = QUADRATIC + "\n[solver]\nmethod = magic\n"
    with pytest.raises(ConfigError, match="method must be"):
        parse_config(cfg_file(tmp_path, text))
    text = QUADRATIC + "\n[solver]\nprofile = somewhere.mtl1\n"
    with pytest.raises(ConfigError, match="only applies to method 'file'"):
        parse_config(cfg_file(tmp_path, text))
    text = QUADRATIC + "\n[solver]\nmethod = file\nprofile = missing.mtl1\n"
    with pytest.raises(ConfigError, match="does not exist"):
        parse_config(cfg_file(tmp_path, text))


def test_output_formats_validated(tmp_path):
    text = QUADRATIC + "\n[output]\nformats = json, yaml\n"
    with pytest.raises(ConfigError, match=r"unknown format\(s\) yaml"):
        parse_config(cfg_file(tmp_path, text))
    text = QUADRATIC + "\n[output]\ndirectory = artifacts\nformats = json\n"
    cfg = parse_config(cfg_file(tmp_path, text))
    assert cfg.output.directory == "artifacts"
    assert cfg.output.formats == ("json",)


# ----------------------------------------------------------------- grids


def test_default_grid_scales_with_linear_part():
    assert default_grid(catalog.quadratic_two_component(2.0)) == Grid(1, 28.0, 512)
    # sigma does not move the shifted linear part of the synchronous family
    assert default_grid(catalog.quadratic_two_component(35.0)) == Grid(1, 28.0, 512)
    assert default_grid(catalog.rabi_coupled()) == Grid(2, 16.0, 256)
    tw = default_grid(catalog.three_wave(1))
    assert tw.points == 512
    assert tw.extent == pytest.approx(28.0 / math.sqrt(2.0), rel=1e-12)


def test_high_dimension_validates_but_cannot_solve(tmp_path, capsys):
    text = QUADRATIC.replace("dimension = 1", "dimension = 4")
    path = cfg_file(tmp_path, text)
    assert main(["validate", path]) == EXIT_OK
    assert "grid: none" in capsys.readouterr().out
    assert main(["groundstate", path, "--out", str(tmp_path / "g")]) == EXIT_CONFIG
    err = json.load(open(tmp_path / "g" / "error.json"))
    assert err["error"] == "config"
    assert any("no computation grid" in d for d in err["details"])


# ---------------------------------------------------------------- validate


def test_validate_audit(capsys):
    assert main(["validate", "builtin:quadratic_sync_1d"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "u: lambda=1 omega=1 lambda*omega=1" in out
    assert "v: lambda=2 omega=2 lambda*omega=4" in out
    assert out.count("phase=0") == 2  # every term with its exact phase sum
    assert "alpha=2" in out and "alpha=3" in out
    assert "gauge: ok" in out
    assert "synchronous: common shifted coefficient 1" in out
    assert "grid: auto, extent 28, points 512" in out
    assert "seed 7" in out


def test_validate_flags_multiple_invariances(tmp_path, capsys):
    text = """\
[system]
dimension = 1
lambda = 1, 1
omega = 1, 2
labels = a, b

[system.term.1]
coefficient = -1
p = 2, 0
q = 2, 0

[system.term.2]
coefficient = -1
p = 1, 1
q = 1, 1
"""
    assert main(["validate", cfg_file(tmp_path, text)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "invariance dimension 2" in out
    assert "warning: 2 independent phase invariances" in out


def test_validate_reports_asynchronous_systems(tmp_path, capsys):
    text = QUADRATIC.replace("coefficient = 1 - 2*sigma", "coefficient = -1")
    assert main(["validate", cfg_file(tmp_path, text)]) == EXIT_OK
    assert "not synchronous: shifted coefficients differ" in capsys.readouterr().out


# -------------------------------------------------------------- groundstate


def test_groundstate_artifacts_and_determinism(tmp_path, capsys):
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    assert main(["groundstate", "builtin:quadratic_sync_1d", "--out", str(out1)]) == EXIT_OK
    stdout = capsys.readouterr().out
    assert "certified" in stdout

    stored = load_profiles(out1 / "profile.mtl1")
    assert stored.grid == Grid(1, 28.0, 512)
    assert [str(w) for w in stored.omegas] == ["1", "2"]
    assert len(stored.profiles) == 2

    payload = json.load(open(out1 / "groundstate.json"))
    assert payload["system"]["labels"] == ["u", "v"]
    assert payload["system"]["omega"] == ["1", "2"]
    assert payload["integrals"]["mass"][0] == pytest.approx(12.0, rel=1e-6)
    assert payload["integrals"]["mass"][1] == pytest.approx(6.0, rel=1e-6)
    assert payload["total_mass"] == pytest.approx(18.0, rel=1e-6)
    assert payload["identities"]["first_integrals"]["ok"] is True
    assert payload["identities"]["pohozaev"]["ok"] is True
    assert max(payload["residual_norms"]) <= payload["certified_at"]
    assert payload["solver"]["seed"] == 7

    assert main(["groundstate", "builtin:quadratic_sync_1d", "--out", str(out2)]) == EXIT_OK
    for name in ("groundstate.json", "profile.mtl1"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_groundstate_solver_failure_writes_error(tmp_path, capsys):
    out = tmp_path / "fail"
    code = main(
        [
            "groundstate",
            "builtin:quadratic_sync_1d",
            "--set",
            "solver.method=petviashvili",
            "--set",
            "solver.max_iter=3",
            "--out",
            str(out),
        ]
    )
    assert code == EXIT_SOLVER
    assert "solver failure" in capsys.readouterr().err
    err = json.load(open(out / "error.json"))
    assert err == {
        "command": "groundstate",
        "exit_code": EXIT_SOLVER,
        "error": "solver",
        "message": err["message"],
        "details": [],
    }
    assert "did not converge" in err["message"]


def test_closed_form_method_requires_one_dimension(tmp_path):
    code = main(
        [
            "groundstate",
            "builtin:cubic_2d",
            "--set",
            "solver.method=closed-form",
            "--out",
            str(tmp_path / "cf"),
        ]
    )
    assert code == EXIT_CONFIG


# ------------------------------------------------------------------ analyze


def test_analyze_exit_codes_and_report(tmp_path):
    out = tmp_path / "inc"
    code = main(
        ["analyze", "builtin:quadratic_sync_1d", "--set", "sigma=1", "--out", str(out)]
    )
    assert code == EXIT_INCONCLUSIVE
    report = json.load(open(out / "report.json"))
    assert report["verdict"] == "INCONCLUSIVE"

    out35 = tmp_path / "uns"
    code = main(
        ["analyze", "builtin:quadratic_sync_1d", "--set", "sigma=35", "--out", str(out35)]
    )
    assert code == EXIT_OK
    report = json.load(open(out35 / "report.json"))
    assert report["verdict"] == "UNSTABLE"
    assert report["eigenvalues"][0] < 0
    assert len(report["direction"]) == 3  # scaling, transfer, closing entry
    assert report["provenance"]["system_hash"] == system_fingerprint(
        catalog.quadratic_two_component(35.0)
    )


def test_analyze_profile_round_trip_is_byte_identical(tmp_path):
    gs = tmp_path / "gs"
    assert main(["groundstate", "builtin:quadratic_sync_1d", "--out", str(gs)]) == EXIT_OK

    direct = tmp_path / "direct"
    reread = tmp_path / "reread"
    assert main(["analyze", "builtin:quadratic_sync_1d", "--out", str(direct)]) in (
        EXIT_OK,
        EXIT_INCONCLUSIVE,
    )
    code = main(
        [
            "analyze",
            "builtin:quadratic_sync_1d",
            "--profile",
            str(gs / "profile.mtl1"),
            "--out",
            str(reread),
        ]
    )
    assert code in (EXIT_OK, EXIT_INCONCLUSIVE)
    assert (direct / "report.json").read_bytes() == (reread / "report.json").read_bytes()


def test_analyze_profile_must_match_system(tmp_path, capsys):
    gs = tmp_path / "gs"
    assert main(["groundstate", "builtin:quadratic_sync_1d", "--out", str(gs)]) == EXIT_OK
    code = main(
        [
            "analyze",
            "builtin:three_wave_1d",
            "--profile",
            str(gs / "profile.mtl1"),
            "--out",
            str(tmp_path / "bad"),
        ]
    )
    assert code == EXIT_CONFIG
    assert "omega" in capsys.readouterr().err


def test_analyze_profile_grid_conflict(tmp_path, capsys):
    gs = tmp_path / "gs"
    assert main(["groundstate", "builtin:quadratic_sync_1d", "--out", str(gs)]) == EXIT_OK
    code = main(
        [
            "analyze",
            "builtin:quadratic_sync_1d",
            "--set",
            "grid.extent=30",
            "--set",
            "grid.points=512",
            "--profile",
            str(gs / "profile.mtl1"),
            "--out",
            str(tmp_path / "bad"),
        ]
    )
    assert code == EXIT_CONFIG
    assert "grid extent" in capsys.readouterr().err


# ----------------------------------------------------------------- simulate


def test_simulate_artifacts(tmp_path):
    out = tmp_path / "sim"
    code = main(
        [
            "simulate",
            "builtin:quadratic_sync_1d",
            "--set",
            "simulate.T=0.2",
            "--out",
            str(out),
        ]
    )
    assert code == EXIT_OK
    lines = (out / "trace.csv").read_text().splitlines()
    assert lines[0] == "time,mass,hamiltonian,mass_1,mass_2,orbit_distance,virial,virial_rate"
    assert len(lines) == 1 + 3  # t = 0, 0.1, 0.2 at dt=1e-3, sample_every=100
    events = json.load(open(out / "trace.events.json"))
    assert events == []


def test_simulate_requires_section(tmp_path, capsys):
    out = tmp_path / "nosim"
    code = main(["simulate", "builtin:cubic_2d", "--out", str(out)])
    assert code == EXIT_CONFIG
    err = json.load(open(out / "error.json"))
    assert any("missing [simulate] section" in d for d in err["details"])


def test_simulate_perturbation_needs_unstable_verdict(tmp_path, capsys):
    out = tmp_path / "t0"
    code = main(
        [
            "simulate",
            "builtin:quadratic_sync_1d",
            "--set",
            "simulate.T=0.2",
            "--set",
            "simulate.t0=0.01",
            "--out",
            str(out),
        ]
    )
    assert code == EXIT_INCONCLUSIVE
    err = json.load(open(out / "error.json"))
    assert err["error"] == "inconclusive"
    assert "INCONCLUSIVE" in err["message"]


def test_simulate_perturbed_unstable_run(tmp_path):
    out = tmp_path / "kick"
    code = main(
        [
            "simulate",
            "builtin:quadratic_sync_1d",
            "--set",
            "sigma=35",
            "--set",
            "simulate.T=0.2",
            "--set",
            "simulate.t0=0.01",
            "--out",
            str(out),
        ]
    )
    assert code == EXIT_OK
    lines = (out / "trace.csv").read_text().splitlines()
    first = dict(zip(lines[0].split(","), (float(v) for v in lines[1].split(","))))
    assert first["orbit_distance"] > 0.01  # the kick moved the state off the orbit


# ---------------------------------------------------------------- reproduce


def summary(outdir, case):
    with open(os.path.join(outdir, case, "summary.json")) as handle:
        data = json.load(handle)
    return data, {row["name"]: row["status"] for row in data["rows"]}


def test_reproduce_list(capsys):
    assert main(["reproduce", "--list"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in (
        "quadratic-1d",
        "quadratic-3d-sweep",
        "three-wave-1d",
        "cubic-supercritical",
        "rabi-2d",
    ):
        assert name in out


def test_reproduce_rejects_unknown_case_and_params(capsys):
    assert main(["reproduce", "frobnicate"]) == EXIT_CONFIG
    assert main(["reproduce"]) == EXIT_CONFIG
    assert main(["reproduce", "quadratic-1d", "--set", "nope=3"]) == EXIT_CONFIG
    assert "does not name a parameter" in capsys.readouterr().err


def test_reproduce_three_wave(tmp_path, capsys):
    out = str(tmp_path)
    assert main(["reproduce", "three-wave-1d", "--out", out]) == EXIT_REPRODUCE
    data, status = summary(out, "three-wave-1d")
    assert status["sphere maximum f_max (as pinned)"] == "fail"
    assert status["sphere maximum f_max (derived)"] == "pass"
    assert status["maximizer components (as pinned)"] == "fail"
    assert status["maximizer middle component"] == "pass"
    assert status["verdict at d=1 (as pinned)"] == "fail"
    assert status["det(A) < 0 (as pinned)"] == "fail"
    assert data["failed"] == 4
    report = json.load(open(tmp_path / "three-wave-1d" / "report.json"))
    assert report["verdict"] == "INCONCLUSIVE"
    assert all(v > 0 for v in report["eigenvalues"])
    printed = capsys.readouterr().out
    assert "FAILED: verdict at d=1 (as pinned)" in printed


def test_reproduce_cubic_supercritical(tmp_path):
    out = str(tmp_path)
    assert main(["reproduce", "cubic-supercritical", "--out", out]) == EXIT_OK
    data, status = summary(out, "cubic-supercritical")
    assert data["failed"] == 0
    assert status["scaling shortcut at d=3"] == "pass"
    assert status["scaling shortcut at d=2"] == "pass"
    checks = json.load(open(tmp_path / "cubic-supercritical" / "checks.json"))
    assert checks[0]["name"] == "supercritical" and checks[0]["applies"] is True


def test_reproduce_rabi(tmp_path):
    out = str(tmp_path)
    assert main(["reproduce", "rabi-2d", "--out", out]) == EXIT_OK
    data, status = summary(out, "rabi-2d")
    assert data["failed"] == 0
    assert status["verdict"] == "pass"
    assert status["component masses differ"] == "pass"
    assert (tmp_path / "rabi-2d" / "profile.mtl1").exists()
    report = json.load(open(tmp_path / "rabi-2d" / "report.json"))
    assert report["verdict"] == "UNSTABLE"


def test_reproduce_quadratic_short_horizon(tmp_path):
    # T=2 keeps the run short; the growth targets then fail alongside the
    # honestly failing pinned rows, but the conservation rows must hold
    out = str(tmp_path)
    code = main(["reproduce", "quadratic-1d", "--set", "T=2", "--out", out])
    assert code == EXIT_REPRODUCE
    data, status = summary(out, "quadratic-1d")
    assert status["scalar iteration matches the closed form"] == "pass"
    assert status["int q^2"] == "pass"
    assert status["int q^3"] == "pass"
    assert status["threshold sweep vs symbolic root"] == "pass"
    assert status["sigma=25 verdict (as pinned)"] == "fail"
    assert status["sigma=35 verdict"] == "pass"
    assert status["total-mass drift"] == "pass"
    assert status["energy drift"] == "pass"
    base = tmp_path / "quadratic-1d"
    assert (base / "report_sigma25.json").exists()
    assert (base / "report_sigma35.json").exists()
    assert (base / "trace_sigma35.csv").exists()
    assert (base / "trace_control.csv").exists()


# -------------------------------------------------------------- entry point


def test_usage_errors_use_config_exit_code():
    assert main([]) == EXIT_CONFIG
    assert main(["frobnicate"]) == EXIT_CONFIG
    assert main(["analyze"]) == EXIT_CONFIG  # missing config argument
