"""Experiment configuration files.

Configs are TOML.  A file either describes one experiment::

    experiment = "quadratic_bending"

    [ellipsoid]
    ell = 20.0

or several, as an array of ``[[run]]`` tables.  Keys set outside ``[[run]]``
are shared defaults for every run.  Anything not given falls back to the
per-experiment defaults in :data:`DEFAULTS`; the resolved config is echoed
into the report.  See ``docs/config.md`` for the full grammar.
"""
from __future__ import annotations

import copy
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from ..geometry import GeometryError, SymmetrySpec, ellipsoid_quadric


class ConfigError(ValueError):
    """Unreadable config, unknown key, or a violated experiment precondition."""


EXPERIMENTS = (
    "sphere_validation",
    "cylinder_asymptotics",
    "quadratic_bending",
    "shift_monotonicity",
    "jacobian_verification",
    "rescaling_monotonicity",
    "spectral_coverage",
)

_FLOW_L20 = {
    "symmetry": {"n": 2, "k": 1, "reduction": "AXIAL"},
    "ellipsoid": {"ell": 20.0, "a": None, "mu": 1.0},
}

_BASE = {
    "symmetry": {"n": 2, "k": 1, "reduction": "AXIAL"},
    "ellipsoid": {"ell": 20.0, "a": None, "mu": 1.0},
    "solver": {"grid": None, "rtol": 1e-8, "eps_ext": 1e-3, "store_every": 0.05},
    "spectral": {"order": 32, "theta": None, "kappa": 0.1},
    "tau": {"tau0": -6.0, "tau0s": [-8.0, -6.0], "samples": None},
    "output": {"dir": None, "cache": True},
}

# only the keys that differ from _BASE
DEFAULTS = {
    "sphere_validation": {
        "solver": {"grid": 512},
        "sphere": {"radii": [1.0, math.sqrt(2.0), 2.0], "order_grid": 64, "order_fraction": 0.4,
                   "order_steps": [8, 16, 32], "cutoff_radius": 0.05},
    },
    "cylinder_asymptotics": dict(_FLOW_L20, tau={"samples": None}),
    "quadratic_bending": dict(_FLOW_L20, bending={"r_fit": 3.0}),
    "shift_monotonicity": dict(_FLOW_L20, tau={"tau0s": [-50.0, -20.0, -10.0, -6.0]},
                               shift={"families": ["flow", "ansatz", "cylinder"], "delta": 1e-6}),
    "jacobian_verification": dict(_FLOW_L20, tau={"tau0s": [-8.0, -6.0]},
                                  state={"family": "ansatz", "flow_diagnostic": True}),
    "rescaling_monotonicity": dict(_FLOW_L20, tau={"tau0": -6.0},
                                   state={"family": "ansatz", "flow_diagnostic": True},
                                   scan={"points": 9, "refine": True}),
    "spectral_coverage": {
        "symmetry": {"n": 3, "k": 2, "reduction": "AXIAL"},
        "ellipsoid": {"ell": 15.0, "a": None, "mu": 1.0},
        "solver": {"grid": 256, "store_every": 0.05},
        "tau": {"tau0": -30.0},
        "sweep": {"s_min": 0.5, "s_max": 2.0, "points": 5, "bracket_tol": 0.02, "max_refine": 8,
                  "offdiag": [[1.0, 2.0], [2.0, 1.0]], "offdiag_ell": 8.0, "offdiag_grid": 32,
                  "offdiag_store_every": 0.1},
    },
}

_SECTIONS = {"symmetry", "ellipsoid", "solver", "spectral", "tau", "output", "sphere", "bending",
             "shift", "state", "scan", "sweep"}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _defaults(name: str) -> dict:
    return _merge(_BASE, DEFAULTS[name])


@dataclass(frozen=True)
class ExperimentConfig:
    """One resolved experiment: name plus a nested dict of every parameter."""

    experiment: str
    params: dict = field(hash=False)

    @property
    def sym(self) -> SymmetrySpec:
        s = self.params["symmetry"]
        return SymmetrySpec(int(s["n"]), int(s["k"]), s["reduction"])

    def section(self, name: str) -> dict:
        return self.params.get(name, {})

    @property
    def out_dir(self):
        return self.params["output"]["dir"]

    def as_dict(self) -> dict:
        return {"experiment": self.experiment, **copy.deepcopy(self.params)}


def _check_keys(raw: dict, ref: dict, where: str) -> None:
    for key, val in raw.items():
        if key not in ref:
            raise ConfigError(f"unknown key {where}{key!r}")
        if isinstance(val, dict):
            if not isinstance(ref[key], dict):
                raise ConfigError(f"{where}{key} must be a value, not a section")
            _check_keys(val, ref[key], f"{where}{key}.")


def _num(x, what: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(f"{what} must be a number, got {x!r}")
    return float(x)


def _validate(cfg: ExperimentConfig) -> None:
    p = cfg.params
    try:
        sym = cfg.sym
    except (GeometryError, ValueError) as e:
        raise ConfigError(f"symmetry: {e}") from None
    ell = p["ellipsoid"]
    if ell["a"] is None:
        ell["a"] = [1.0] * sym.k
    if not isinstance(ell["a"], list):
        ell["a"] = [ell["a"]]
    try:
        ellipsoid_quadric(sym, _num(ell["ell"], "ellipsoid.ell"), [_num(a, "ellipsoid.a") for a in ell["a"]],
                          _num(ell["mu"], "ellipsoid.mu"))
    except GeometryError as e:
        raise ConfigError(f"ellipsoid: {e}") from None
    if sym.n_angles == 1 and len(set(ell["a"])) > 1:
        raise ConfigError("ellipsoid: unequal a components need reduction = \"BLOCK\"")
    sol = p["solver"]
    for key in ("rtol", "eps_ext", "store_every"):
        if not _num(sol[key], f"solver.{key}") > 0:
            raise ConfigError(f"solver.{key} must be positive")
    if sol["grid"] is not None:
        g = sol["grid"] if isinstance(sol["grid"], list) else [sol["grid"]]
        if not all(isinstance(x, int) and x >= 8 for x in g):
            raise ConfigError("solver.grid must be an integer >= 8 (or a list of them)")
    spc = p["spectral"]
    if not (isinstance(spc["order"], int) and spc["order"] >= 8):
        raise ConfigError("spectral.order must be an integer >= 8")
    if sym.k > 3:
        raise ConfigError("spectral frames exist for k <= 3 only")
    if not 0 < _num(spc["kappa"], "spectral.kappa") <= 0.1:
        raise ConfigError("spectral.kappa must lie in (0, 0.1]")
    if spc["theta"] is not None and not 0 < _num(spc["theta"], "spectral.theta") < sym.cylinder_radius:
        raise ConfigError("spectral.theta must lie in (0, sqrt(2(n-k)))")
    tau = p["tau"]
    if not _num(tau["tau0"], "tau.tau0") < 0:
        raise ConfigError("tau.tau0 must be negative")
    if not tau["tau0s"] or any(_num(t, "tau.tau0s") >= 0 for t in tau["tau0s"]):
        raise ConfigError("tau.tau0s must be a nonempty list of negative numbers")
    if tau["samples"] is not None and any(_num(t, "tau.samples") >= 0 for t in tau["samples"]):
        raise ConfigError("tau.samples must be negative")
    name = cfg.experiment
    if name == "sphere_validation":
        sp = p["sphere"]
        if not sp["radii"] or any(_num(r, "sphere.radii") <= 0 for r in sp["radii"]):
            raise ConfigError("sphere.radii must be positive")
        if len(sp["order_steps"]) < 2:
            raise ConfigError("sphere.order_steps needs at least two step counts")
    if name in ("jacobian_verification", "rescaling_monotonicity"):
        fam = p["state"]["family"]
        if fam not in ("ansatz", "flow"):
            raise ConfigError(f"state.family must be \"ansatz\" or \"flow\", got {fam!r}")
        for t in tau["tau0s"] if name == "jacobian_verification" else [tau["tau0"]]:
            if not -8.0 - 1e-12 <= t <= -5.0:
                raise ConfigError(f"tau0 = {t} outside the kappa-quadratic window [-8, -5]")
    if name == "shift_monotonicity":
        bad = set(p["shift"]["families"]) - {"flow", "ansatz", "cylinder"}
        if bad:
            raise ConfigError(f"shift.families: unknown {sorted(bad)}")
    if name == "rescaling_monotonicity" and int(p["scan"]["points"]) < 3:
        raise ConfigError("scan.points must be at least 3")
    if name == "spectral_coverage":
        sw = p["sweep"]
        if not 0 < _num(sw["s_min"], "sweep.s_min") < _num(sw["s_max"], "sweep.s_max"):
            raise ConfigError("need 0 < sweep.s_min < sweep.s_max")
        if int(sw["points"]) < 2:
            raise ConfigError("sweep.points must be at least 2")
        if sym.k > 2:
            raise ConfigError("spectral_coverage is defined for k <= 2")
        block = SymmetrySpec(sym.n, 2, "BLOCK") if sym.k == 2 else None
        for pair in sw["offdiag"]:
            if block is None:
                raise ConfigError("sweep.offdiag needs k = 2")
            try:
                ellipsoid_quadric(block, _num(sw["offdiag_ell"], "sweep.offdiag_ell"),
                                  [_num(a, "sweep.offdiag") for a in pair], 1.0)
            except GeometryError as e:
                raise ConfigError(f"sweep.offdiag {pair}: {e}") from None


def build(raw: dict) -> list:
    """Resolve and validate a parsed config table into ExperimentConfig objects."""
    shared = {k: v for k, v in raw.items() if k != "run"}
    runs = raw.get("run")
    if runs is None:
        entries = [shared]
    else:
        if not isinstance(runs, list) or not runs:
            raise ConfigError("run must be a nonempty array of tables")
        shared.pop("experiment", None)
        entries = [_merge(shared, r) for r in runs]
    out = []
    for i, entry in enumerate(entries):
        where = "" if runs is None else f"run[{i}]."
        name = entry.get("experiment")
        if name is None:
            raise ConfigError(f"{where}experiment: missing; valid names: {', '.join(EXPERIMENTS)}")
        if name not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {name!r}; valid names: {', '.join(EXPERIMENTS)}")
        body = {k: v for k, v in entry.items() if k != "experiment"}
        for key, val in body.items():
            if key not in _SECTIONS or not isinstance(val, dict):
                raise ConfigError(f"unknown key {where}{key!r}")
        ref = _defaults(name)
        _check_keys(body, ref, where)
        cfg = ExperimentConfig(name, _merge(ref, body))
        _validate(cfg)
        out.append(cfg)
    return out


def loads(text: str) -> list:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"parse error: {e}") from None
    return build(raw)


def config_load(path) -> list:
    """Parse, resolve and validate a config file.

    Returns
    -------
    list of ExperimentConfig
        One entry per run, in file order.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from None
    try:
        return loads(text)
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from None
