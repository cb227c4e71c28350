"""Report serialization: JSON + RFC-4180 CSV tables + rendered figures.

The JSON and CSV outputs are byte-deterministic for a given report (sorted
keys, repr floats, CRLF line endings, '.' decimal separator); the manifest
records the config hash, seed, versions and a sha256 for every emitted
file so a rerun can be checked for exact reproduction.
"""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from . import __version__  # noqa: E402
from .propertylab import ExperimentReport  # noqa: E402

__all__ = ["report_to_dict", "write_report", "write_manifest", "sha256_file"]


def report_to_dict(report: ExperimentReport) -> dict:
    return {
        "name": report.name,
        "verdict": report.verdict,
        "criteria": report.criteria,
        "statistics": {k: {"value": v.value, "se": v.se}
                       for k, v in sorted(report.statistics.items())},
        "fitted": {k: {"value": v.value, "stderr": v.stderr,
                       "ci95": list(v.ci95)}
                   for k, v in sorted(report.fitted.items())},
        "notes": list(report.notes),
        "provenance": report.provenance,
        "tables": [t.name for t in report.tables],
    }


def _write_json(payload: dict, path: Path) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _write_table_csv(table, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(table.columns)
        for row in table.rows:
            w.writerow([repr(float(v)) if isinstance(v, float)
                        else v for v in row])


def _render_table_figure(table, path: Path) -> None:
    plot = table.plot or {}
    cols = list(table.columns)
    xi = cols.index(plot.get("x", cols[0]))
    ycols = plot.get("y", tuple(cols[1:2]))
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    xs = [float(r[xi]) for r in table.rows]
    for yname in ycols:
        yi = cols.index(yname)
        ys = [float(r[yi]) for r in table.rows]
        ax.plot(xs, ys, marker="o", ms=3.5, lw=1.0, label=yname)
    if plot.get("logx"):
        ax.set_xscale("log")
    if plot.get("logy"):
        ax.set_yscale("log")
    ax.set_xlabel(cols[xi])
    ax.set_title(table.name)
    if len(ycols) > 1:
        ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def write_report(report: ExperimentReport, outdir, basename=None,
                 figures: bool = True) -> list[Path]:
    """Write <name>.json plus one CSV (and one PNG) per table.

    Returns the list of written paths (JSON first).
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    base = basename or report.name
    written = []
    json_path = outdir / f"{base}.json"
    _write_json(report_to_dict(report), json_path)
    written.append(json_path)
    for table in report.tables:
        csv_path = outdir / f"{base}_{table.name}.csv"
        _write_table_csv(table, csv_path)
        written.append(csv_path)
        if figures and table.rows:
            fig_path = outdir / f"{base}_{table.name}.png"
            try:
                _render_table_figure(table, fig_path)
                written.append(fig_path)
            except Exception as exc:   # figures never break the report path
                fig_path.unlink(missing_ok=True)
                print(f"warning: figure {fig_path.name} skipped: {exc}")
    return written


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(outdir, resolved_config: dict, seed: int,
                   files: list[Path], extra: dict | None = None) -> Path:
    """manifest.json: resolved config, its hash, seed, versions, and the
    sha256 of every report file (figures hashed too)."""
    import numpy
    outdir = Path(outdir)
    canon = json.dumps(resolved_config, sort_keys=True,
                       separators=(",", ":"))
    payload = {
        "config": resolved_config,
        "config_hash": hashlib.sha256(canon.encode()).hexdigest(),
        "master_seed": seed,
        "versions": {"jumpsde": __version__, "numpy": numpy.__version__},
        "files": {p.name: sha256_file(p) for p in sorted(files)},
    }
    if extra:
        payload.update(extra)
    path = outdir / "manifest.json"
    _write_json(payload, path)
    return path
