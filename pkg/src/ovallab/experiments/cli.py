"""``oval-lab`` command line.

Exit status: 0 all bands pass, 2 a numeric band failed, 3 configuration
error, 4 solver failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from .config import EXPERIMENTS, ConfigError, config_load

EXIT_OK, EXIT_BAND, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3, 4

DESCRIPTIONS = {
    "sphere_validation": "round spheres against the exact shrinking solution; temporal order",
    "cylinder_asymptotics": "normalized ellipsoid flow approaching the cylinder as tau -> -inf",
    "quadratic_bending": "fitted c(tau)|tau| against the k-oval coefficient sqrt(2(n-k))/4",
    "shift_monotonicity": "shift map beta: convergence, residual, strict increase of the objective",
    "jacobian_verification": "numeric Jacobian of Psi against the closed form; multi-seed zero of Psi",
    "rescaling_monotonicity": "sign and size of d/dgamma of the radial projection",
    "spectral_coverage": "diagonal sweep of the summed spectral value against its target; axis swap",
}


def _out_dir(arg, configs) -> Path:
    if arg:
        return Path(arg)
    env = os.environ.get("OVAL_LAB_OUT")
    if env:
        return Path(env)
    cfg_dir = configs[0].out_dir
    return Path(cfg_dir) if cfg_dir else Path("oval-lab-out")


def _load(path):
    try:
        return config_load(path)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return None


def cmd_run(args) -> int:
    configs = _load(args.config)
    if configs is None:
        return EXIT_CONFIG
    from .report import emit_report
    from .runner import run

    out = _out_dir(args.out, configs)
    cache = out / "cache" if configs[0].section("output")["cache"] else None
    t0 = time.perf_counter()
    results = run(configs, jobs=max(1, args.jobs), cache_dir=cache, seed_check=args.seed_check)
    report = emit_report(results, out, figures=not args.no_figures)
    for i, r in enumerate(results):
        print(f"[{i:02d}] {r['experiment']}: {r['status'].upper()} ({r['timing']['wall_seconds']:.1f} s)")
        for c in r["checks"]:
            if not c["passed"]:
                tag = "diagnostic" if c["diagnostic"] else "FAIL"
                print(f"     {tag}: {c['name']} = {c['value']} (band {c['band']})")
        if r["error"]:
            e = r["error"]
            print(f"     ERROR {e['type']} during {e['stage'] or e['where']}: {e['message'][:400]}")
    print(f"report: {out / 'report.json'} ({time.perf_counter() - t0:.1f} s)")
    return report["exit_code"]


def cmd_validate(args) -> int:
    configs = _load(args.config)
    if configs is None:
        return EXIT_CONFIG
    print(json.dumps([c.as_dict() for c in configs], indent=1, sort_keys=True))
    return EXIT_OK


def cmd_list(args) -> int:
    for name in EXPERIMENTS:
        print(f"{name:24s} {DESCRIPTIONS[name]}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oval-lab", description="Numerical experiments on ancient ovals.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiments of a config file")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides OVAL_LAB_OUT and output.dir)")
    r.add_argument("--jobs", type=int, default=1, help="experiments run in parallel processes")
    r.add_argument("--seed-check", action="store_true",
                   help="verify the provenance hash of every cached trajectory before use")
    r.add_argument("--no-figures", action="store_true", help="skip the PNG renderings")
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("validate", help="resolve and check a config without computing")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)
    ls = sub.add_parser("list-experiments", help="list the experiment names")
    ls.set_defaults(func=cmd_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
