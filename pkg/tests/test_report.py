import json
from pathlib import Path
import math
import warnings

import numpy as np
import pytest

from smartdwr.cli import main
from smartdwr.driver import RunConfig, run_adaptive
from smartdwr.report import (CSV_COLUMNS, ConfigError, build_manifest, check_csv, check_rows, emit_csv,
                             fit_rate, load_config, manifest_path, parse_config, read_csv)

MINIMAL = "[problem]\nkind = poisson\n[goal]\nkind = mean\n"


@pytest.fixture(scope="module")
def short_run():
    return run_adaptive(RunConfig(problem="p-laplace", goal="mean", max_levels=3))


def test_minimal_config_defaults():
    cfg = parse_config(MINIMAL)
    run = cfg.run
    assert (run.problem, run.goal, run.mode) == ("poisson", "mean", "new")
    assert run.c_u == run.c_z == 0.5
    assert run.theta == 0.5 and run.kappa == 1e-2 and run.s_points == 5
    assert cfg.output.csv is None and cfg.output.mesh_dump_every == 0


@pytest.mark.parametrize("mode,c", [("full", -1.0), ("int", 1e100), ("new", 0.5)])
def test_mode_constants(mode, c):
    run = parse_config(MINIMAL + f"[algorithm]\nmode = {mode}\n").run
    assert run.c_u == run.c_z == c


def test_explicit_constants_override_mode():
    run = parse_config(MINIMAL + "[algorithm]\nmode = full\nc_u = 0.25\n").run
    assert run.c_u == 0.25 and run.c_z == -1.0


def test_full_config():
    text = """
# p-Laplace point value
[problem]
kind = p-laplace
p = 4
eps = 1e-10
[goal]
kind = point
point = -0.9, -0.9
vertex_only = no
reference = 0.0419440
[algorithm]
mode = int
tol = 1e-9
max_levels = 12
max_dofs = 50000
theta = 0.25
s_order = 9
[solver]
kappa = 1e-3
newton_max_iter = 30
[output]
csv = out/run.csv
mesh_dump_every = 4
"""
    cfg = parse_config(text)
    r = cfg.run
    assert r.problem == "p-laplace" and r.goal == "point" and r.point == (-0.9, -0.9)
    assert r.reference == 0.041944 and not r.vertex_only
    assert (r.max_levels, r.max_dofs, r.theta, r.s_points, r.kappa, r.newton_max_iter) == (
        12, 50000, 0.25, 9, 1e-3, 30)
    assert cfg.output.csv == "out/run.csv" and cfg.output.mesh_dump_every == 4


@pytest.mark.parametrize("text,line,fragment", [
    (MINIMAL + "[algorithm]\nspeed = 3\n", 6, "unknown key algorithm.speed"),
    (MINIMAL + "[plot]\nx = 1\n", 5, "unknown section"),
    (MINIMAL + "[algorithm]\ntheta = abc\n", 6, "algorithm.theta"),
    (MINIMAL + "[algorithm]\nmax_levels = 2.5\n", 6, "max_levels"),
    ("[problem]\nkind = heat\n[goal]\nkind = mean\n", 2, "problem.kind"),
])
def test_config_errors_carry_line_numbers(text, line, fragment):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.line == line
    assert str(info.value).startswith(f"line {line}:")
    assert fragment in str(info.value)


def test_missing_required_and_invalid_values():
    with pytest.raises(ConfigError, match="goal.kind"):
        parse_config("[problem]\nkind = poisson\n")
    with pytest.raises(ConfigError, match="theta"):
        parse_config(MINIMAL + "[algorithm]\ntheta = 1.5\n")
    with pytest.raises(ConfigError):
        parse_config("kind = poisson\n")
    with pytest.raises(ConfigError):
        load_config("/nonexistent/x.cfg")


def test_csv_schema_and_round_trip(short_run, tmp_path):
    path = tmp_path / "a.csv"
    emit_csv(short_run[:1], path)
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    assert lines[0].split(",") == list(CSV_COLUMNS)
    emit_csv(short_run, path)
    rows = read_csv(path)
    assert len(rows) == len(short_run)
    for row, rec in zip(rows, short_run):
        assert row["level"] == rec.level and row["dofs_primal"] == rec.dofs_primal
        assert row["eta_h2"] == rec.parts.eta_h2 and row["eta_total"] == rec.parts.total
        assert row["J_value"] == rec.J_value and row["I_eff_h"] == rec.effectivity.I_eff_h
        assert row["error"] == rec.error
        assert [a for a, _ in row["step_trace"]] == [a for a, _ in rec.step_trace]
    assert check_rows(rows) == []
    with pytest.raises(ValueError):
        emit_csv([], path)


def test_poisson_error_uses_baked_reference(tmp_path):
    recs = run_adaptive(RunConfig(max_levels=1))
    assert recs[0].error == 0.03514425373878841 - recs[0].J_value


def test_check_detects_tampering(short_run, tmp_path):
    path = tmp_path / "b.csv"
    emit_csv(short_run, path)
    rows = read_csv(path)
    rows[1]["eta_total"] *= 1.001
    rows[2]["u_solves_cum"] += 1
    probs = check_rows(rows)
    assert any("sum of its parts" in p for p in probs)
    assert any("counters" in p for p in probs)


def test_fit_rate_synthetic():
    x = np.logspace(2, 5, 12)
    for slope in (-1.0, -1.5):
        rows = [{"dofs_primal": xi, "error": 3.0 * xi ** slope} for xi in x]
        assert fit_rate(rows) == pytest.approx(slope, abs=1e-10)
    rows = [{"dofs_primal": xi, "error": xi ** -1.0} for xi in x]
    rows[-1]["error"] = 0.0
    with pytest.warns(RuntimeWarning):
        assert fit_rate(rows) == pytest.approx(-1.0, abs=1e-10)
    with pytest.raises(ValueError):
        fit_rate(rows[:3])


def write_cfg(tmp_path, name, body):
    p = tmp_path / name
    p.write_text(body)
    return p


def test_cli_run_and_check(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "poisson_mean.cfg", MINIMAL + "[algorithm]\nmax_levels = 4\n")
    assert main(["run", str(cfg), "-q", "--mesh-dump-every", "2"]) == 0
    csv_path = tmp_path / "poisson_mean.csv"
    assert len(read_csv(csv_path)) == 4
    assert (tmp_path / "poisson_mean.level002.mesh").read_text().startswith("v ")
    assert (tmp_path / "poisson_mean.level004.mesh").exists()
    assert not (tmp_path / "poisson_mean.level003.mesh").exists()
    man = json.loads(manifest_path(csv_path).read_text())
    assert man["levels"] == 4 and man["stop_reason"] == "max_levels"
    assert math.isclose(man["final_J"], read_csv(csv_path)[-1]["J_value"])
    assert main(["check", str(csv_path)]) == 0
    # corrupt one total
    lines = csv_path.read_text().splitlines()
    cells = lines[2].split(",")
    idx = list(CSV_COLUMNS).index("eta_total")
    cells[idx] = "%.16e" % (2 * float(cells[idx]))
    lines[2] = ",".join(cells)
    csv_path.write_text("\n".join(lines) + "\n")
    assert main(["check", str(csv_path)]) == 1
    assert check_csv(csv_path)


def test_cli_error_exit_codes(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.cfg")]) == 2
    bad = write_cfg(tmp_path, "bad.cfg", MINIMAL + "[algorithm]\nfoo = 1\n")
    assert main(["run", str(bad)]) == 2
    assert "line 6" in capsys.readouterr().err
    assert main(["check", str(tmp_path / "none.csv")]) == 2
    # a singular Newton start is a solver failure (p-Laplace with eps = 0 from u = 0)
    sing = write_cfg(tmp_path, "sing.cfg", "[problem]\nkind = p-laplace\neps = 0\n[goal]\nkind = mean\n")
    assert main(["run", str(sing), "-q"]) == 3


def test_cli_sweep_suffixes(tmp_path):
    cfg = write_cfg(tmp_path, "plaplace.cfg",
                    "[problem]\nkind = p-laplace\n[goal]\nkind = mean\n[algorithm]\nmax_levels = 2\n")
    assert main(["sweep", str(cfg), "--modes", "new,int", "-q"]) == 0
    assert (tmp_path / "plaplace.new.csv").exists() and (tmp_path / "plaplace.int.csv").exists()
    assert not (tmp_path / "plaplace.full.csv").exists()
    assert main(["sweep", str(cfg), "--modes", "fast", "-q"]) == 2


def test_byte_identical_output(tmp_path):
    body = "[problem]\nkind = p-laplace\n[goal]\nkind = point\n[algorithm]\nmax_levels = 4\n"
    cfg = write_cfg(tmp_path, "det.cfg", body)
    assert main(["run", str(cfg), "-q", "-o", str(tmp_path / "one.csv")]) == 0
    assert main(["run", str(cfg), "-q", "-o", str(tmp_path / "two.csv")]) == 0
    assert (tmp_path / "one.csv").read_bytes() == (tmp_path / "two.csv").read_bytes()


def test_manifest_slopes_are_finite_or_null(tmp_path):
    recs = run_adaptive(RunConfig(max_levels=6))
    path = tmp_path / "m.csv"
    emit_csv(recs, path)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        data = json.loads(build_manifest(RunConfig(max_levels=6), recs, path).to_json())
    assert set(data["slopes"]) == {"error", "eta_h2", "eta_R", "eta_total"}
    assert data["slopes"]["eta_R"] is None  # Poisson: remainder identically zero
    assert -1.6 < data["slopes"]["eta_h2"] < -0.5


@pytest.mark.parametrize("name", ["poisson_mean", "plaplace_mean", "plaplace_point"])
def test_shipped_configs_parse(name):
    cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / f"{name}.cfg")
    assert cfg.output.csv == f"{name}.csv"
    assert cfg.run.mode == "new"
