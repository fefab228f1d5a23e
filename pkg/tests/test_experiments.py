import csv
import json
import math

import pytest

from ovallab import store
from ovallab.experiments import cli
from ovallab.experiments.config import DEFAULTS, EXPERIMENTS, ConfigError, build, loads
from ovallab.experiments.report import dumps, load_report
from ovallab.experiments.runner import Context, SeedCheckError
from ovallab.geometry import SymmetrySpec

SMALL_SPHERE = """
experiment = "sphere_validation"

[solver]
grid = 64

[sphere]
radii = [1.0]
order_grid = 32
"""


def _write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


# ---------------------------------------------------------------- config

def test_defaults_fill_every_experiment():
    assert set(DEFAULTS) == set(EXPERIMENTS)
    for name in EXPERIMENTS:
        cfg = loads(f'experiment = "{name}"')[0]
        d = cfg.as_dict()
        assert d["experiment"] == name
        assert d["solver"]["rtol"] == 1e-8
    c = loads('experiment = "spectral_coverage"')[0]
    assert c.sym == SymmetrySpec(3, 2)
    assert c.section("sweep")["bracket_tol"] == 0.02


def test_overrides_and_runs():
    cfgs = loads("""
[solver]
rtol = 1e-7

[[run]]
experiment = "quadratic_bending"
ellipsoid = {ell = 10.0}

[[run]]
experiment = "cylinder_asymptotics"
""")
    assert [c.experiment for c in cfgs] == ["quadratic_bending", "cylinder_asymptotics"]
    assert all(c.section("solver")["rtol"] == 1e-7 for c in cfgs)
    assert cfgs[0].section("ellipsoid")["ell"] == 10.0
    assert cfgs[1].section("ellipsoid")["ell"] == 20.0


@pytest.mark.parametrize("text,match", [
    ('experiment = "nope"', "unknown experiment 'nope'; valid names"),
    ('experiment = "sphere_validation"\nfoo = 1', "foo"),
    ('experiment = "spectral_coverage"\n[ellipsoid]\na = [1.0, 0.0]', "noncompact"),
    ('experiment = "jacobian_verification"\n[tau]\ntau0s = [-20.0]', "tau0"),
    ('experiment = "jacobian_verification"\n[spectral]\nkappa = 0.5', "kappa"),
    ('experiment = "shift_monotonicity"\n[tau]\ntau0s = [1.0]', "negative"),
    ('experiment = "sphere_validation"\n[solver]\ngrid = 3', "grid"),
])
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        loads(text)


def test_parse_error_names_the_line():
    with pytest.raises(ConfigError, match="line 2"):
        loads('experiment = "sphere_validation"\n[solver\n')
    with pytest.raises(ConfigError):
        build({})


def test_shipped_configs_validate(capsys):
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.glob("*.toml"))
    assert len(files) == len(EXPERIMENTS) + 1
    for f in files:
        assert cli.main(["validate", str(f)]) == 0
    out = capsys.readouterr().out
    assert "spectral_coverage" in out


# ---------------------------------------------------------------- cli

def test_list_experiments(capsys):
    assert cli.main(["list-experiments"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [ln.split()[0] for ln in lines] == list(EXPERIMENTS)


def test_config_error_exit_code(tmp_path, capsys):
    p = _write(tmp_path, 'experiment = "bogus"')
    assert cli.main(["run", str(p), "--out", str(tmp_path / "o")]) == 3
    assert "unknown experiment 'bogus'" in capsys.readouterr().err
    assert cli.main(["validate", str(tmp_path / "missing.toml")]) == 3


@pytest.fixture(scope="module")
def sphere_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = base / "s.toml"
    cfg.write_text(SMALL_SPHERE)
    codes = [cli.main(["run", str(cfg), "--out", str(base / f"o{i}")]) for i in (1, 2)]
    return base, codes


def test_sphere_run_passes(sphere_runs):
    base, codes = sphere_runs
    assert codes == [0, 0]
    rep = load_report(base / "o1" / "report.json")
    assert rep["status"] == "pass" and rep["exit_code"] == 0
    assert rep["package"]["name"] == "artifact"
    exp = rep["experiments"][0]
    assert exp["config"]["solver"]["grid"] == 64
    assert all(c["passed"] for c in exp["checks"])


def test_outputs_are_deterministic(sphere_runs):
    base, _ = sphere_runs
    for name in ("report.json", "manifest.txt"):
        assert (base / "o1" / name).read_bytes() == (base / "o2" / name).read_bytes()
    for f in (base / "o1" / "figures").glob("*.png"):
        assert f.read_bytes() == (base / "o2" / "figures" / f.name).read_bytes()


def test_manifest_covers_outputs(sphere_runs):
    import hashlib

    out = sphere_runs[0] / "o1"
    entries = [ln.split() for ln in (out / "manifest.txt").read_text().splitlines()]
    names = {e[-1] for e in entries}
    assert "report.json" in names and "timing.json" not in names
    for digest, name in ((e[0], e[-1]) for e in entries):
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest


def test_tables_and_plot_data(sphere_runs):
    out = sphere_runs[0] / "o1"
    tables = sorted(out.glob("*.csv"))
    assert tables
    for t in tables:
        rows = list(csv.reader(t.open()))
        assert len(rows) >= 2 and len({len(r) for r in rows}) == 1
    dats = sorted((out / "plotdata").glob("*.dat"))
    assert dats
    for d in dats:
        lines = d.read_text().splitlines()
        assert lines[0].startswith("# ")
        for ln in lines[1:]:
            x, y = ln.split()
            float(x), float(y)
    assert (out / "plotdata" / "manifest.txt").exists()
    assert list((out / "figures").glob("*.png"))


def test_report_json_round_trip(sphere_runs):
    p = sphere_runs[0] / "o1" / "report.json"
    rep = json.loads(p.read_text())
    assert dumps(rep) == p.read_text()
    timing = json.loads((p.parent / "timing.json").read_text())
    assert "wall_seconds" in json.dumps(timing)


def test_out_dir_from_environment(tmp_path, monkeypatch):
    cfg = _write(tmp_path, SMALL_SPHERE)
    monkeypatch.setenv("OVAL_LAB_OUT", str(tmp_path / "env"))
    assert cli.main(["run", str(cfg), "--no-figures"]) == 0
    assert (tmp_path / "env" / "report.json").exists()
    assert not (tmp_path / "env" / "figures").exists()


# ---------------------------------------------------------------- cache

def test_seed_check_rejects_stale_archive(tmp_path):
    sym = SymmetrySpec(2, 1)
    solver = {"grid": 128, "rtol": 1e-8, "eps_ext": 1e-3, "store_every": 0.05}
    cache = tmp_path / "cache"
    first = Context(cache).flow(sym, 3.0, [1.0], 1.0, solver)
    (path,) = cache.glob("*.ovl")
    # a second context reuses the archive
    ctx = Context(cache, seed_check=True)
    assert ctx.flow(sym, 3.0, [1.0], 1.0, solver) == first
    assert [e["action"] for e in ctx.cache_log] == ["loaded"]
    # overwrite it with an archive carrying someone else's provenance
    store.save(first, path, provenance={"config_hash": "0" * 64})
    with pytest.raises(SeedCheckError, match="provenance hash"):
        Context(cache, seed_check=True).flow(sym, 3.0, [1.0], 1.0, solver)
    # without the check the archive is trusted
    assert Context(cache).flow(sym, 3.0, [1.0], 1.0, solver) == first


def test_solver_failure_becomes_exit_4(tmp_path, capsys):
    # a sphere-like ellipsoid never reaches the normalization target
    cfg = _write(tmp_path, """
experiment = "cylinder_asymptotics"
[ellipsoid]
ell = 1.0
[solver]
grid = 64
""")
    code = cli.main(["run", str(cfg), "--out", str(tmp_path / "o"), "--no-figures"])
    rep = load_report(tmp_path / "o" / "report.json")
    assert code == 4 and rep["status"] == "error"
    err = rep["experiments"][0]["error"]
    assert err["type"] and err["message"]
    assert "ERROR" in capsys.readouterr().out
    assert math.isfinite(rep["experiments"][0]["config"]["ellipsoid"]["ell"])
