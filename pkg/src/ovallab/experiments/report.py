"""Report files.

Layout under the output directory::

    report.json              config echo, tables, band checks, status (deterministic)
    timing.json              wall-clock times and cache actions (varies run to run)
    NN_<experiment>__<table>.csv
    plotdata/NN_<experiment>__<curve>.dat   two columns x y
    plotdata/manifest.txt    file, label, axis labels and figure of every curve
    figures/NN_<experiment>__<figure>.png
    manifest.txt             sha256 of every file above except timing.json

NN is the run's position in the config.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from importlib import metadata
from pathlib import Path

REPORT_FORMAT = 1


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:  # pragma: no cover
        return "unknown"


def overall_status(results: list) -> tuple:
    """(status, exit code): any error -> 4, else any band failure -> 2, else 0."""
    if any(r["status"] == "error" for r in results):
        return "error", 4
    if any(r["status"] == "fail" for r in results):
        return "fail", 2
    return "pass", 0


def build_report(results: list) -> dict:
    """JSON-ready report; curves and timings are left to their own files."""
    status, code = overall_status(results)
    exps = []
    for i, r in enumerate(results):
        exps.append({"index": i, "experiment": r["experiment"], "status": r["status"], "config": r["config"],
                     "checks": r["checks"], "tables": r["tables"], "info": r["info"], "error": r["error"]})
    return {"format_version": REPORT_FORMAT, "package": {"name": "artifact", "version": _version()},
            "status": status, "exit_code": code, "experiments": exps}


def dumps(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=1, allow_nan=False) + "\n"


def _stem(i: int, name: str) -> str:
    return f"{i:02d}_{name}"


def _write(path: Path, text: str | bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    data = text.encode() if isinstance(text, str) else text
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _csv_text(columns: list, rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])
    return buf.getvalue()


def _render(curves: list, path: Path, title: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=100)
    for c in curves:
        x = [v for v in c["x"] if isinstance(v, (int, float))]
        y = [v for v in c["y"] if isinstance(v, (int, float))]
        if len(x) == len(y) and x:
            ax.plot(x, y, marker="o" if len(x) < 30 else None, ms=3, label=c["label"])
    ax.set_xlabel(curves[0]["xlabel"])
    ax.set_ylabel(curves[0]["ylabel"])
    if curves[0]["xlabel"] == "dt":
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="png", metadata={"Software": None})
    plt.close(fig)
    _write(path, buf.getvalue())


def emit_report(results: list, out_dir, figures: bool = True) -> dict:
    """Write every output file; returns the report dict that went into report.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = build_report(results)
    written = []

    def put(rel: str, text) -> None:
        _write(out / rel, text)
        written.append(rel)

    put("report.json", dumps(report))
    _write(out / "timing.json", json.dumps([{"index": i, "experiment": r["experiment"], **r["timing"]}
                                            for i, r in enumerate(results)], indent=1) + "\n")
    plot_manifest = ["file\tlabel\txlabel\tylabel\tfigure"]
    for i, r in enumerate(results):
        stem = _stem(i, r["experiment"])
        for tname, tab in sorted(r["tables"].items()):
            put(f"{stem}__{tname}.csv", _csv_text(tab["columns"], tab["rows"]))
        groups: dict = {}
        for c in r["curves"]:
            rel = f"plotdata/{stem}__{c['name']}.dat"
            lines = [f"# {c['label']}"] + [f"{x!r} {y!r}" for x, y in zip(c["x"], c["y"])]
            put(rel, "\n".join(lines) + "\n")
            plot_manifest.append("\t".join([rel[len("plotdata/"):], c["label"], c["xlabel"], c["ylabel"],
                                            c["figure"]]))
            groups.setdefault(c["figure"], []).append(c)
        if figures:
            for fig, curves in sorted(groups.items()):
                rel = f"figures/{stem}__{fig}.png"
                _render(curves, out / rel, f"{r['experiment']}: {fig}")
                written.append(rel)
    put("plotdata/manifest.txt", "\n".join(plot_manifest) + "\n")
    lines = []
    for rel in sorted(written):
        lines.append(f"{hashlib.sha256((out / rel).read_bytes()).hexdigest()}  {rel}")
    _write(out / "manifest.txt", "\n".join(lines) + "\n")
    return report


def load_report(path) -> dict:
    return json.loads(Path(path).read_text())


__all__ = ["build_report", "dumps", "emit_report", "load_report", "overall_status"]
