"""Test-report files and figures.

Reports are line-delimited records (header, one line per log entry, then
a summary block) written with the canonical JSON dumper so identical runs
produce identical bytes. The render path draws one matplotlib figure per
report kind next to the delimited output.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .serialization import dumps_canonical
from .sim_engine import REPORT_SCHEMA, TestReport


class ReportError(Exception):
    pass


def write_report(report: TestReport, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_canonical({"schema": REPORT_SCHEMA, "kind": report.kind,
                                  "config": report.config}) + "\n")
        for entry in report.logs:
            fh.write(dumps_canonical({"log": entry}) + "\n")
        fh.write(dumps_canonical({"summary": report.summary}) + "\n")
    return path


def read_report(path: str | Path) -> TestReport:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("schema") != REPORT_SCHEMA:
            raise ReportError(f"unsupported report schema {header.get('schema')!r}")
        logs = []
        summary = None
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if "log" in rec:
                logs.append(rec["log"])
            elif "summary" in rec:
                summary = rec["summary"]
    if summary is None:
        raise ReportError("report has no summary block")
    return TestReport(header["kind"], header["config"], tuple(logs), summary)


def render_report(report: TestReport, out_dir: str | Path) -> Path:
    """Render the report's figure as a PNG alongside the delimited output."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    renderer = _RENDERERS.get(report.kind)
    if renderer is None:
        raise ReportError(f"no figure renderer for report kind {report.kind!r}")
    out = out_dir / f"{report.kind}.png"
    fig = renderer(report)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def _render_pullout(report: TestReport):
    forces = [e["force"] for e in report.logs]
    deflections = [math.degrees(e["max_deflection"]) for e in report.logs]
    tendon = [e["tendon_motor_torque"] for e in report.logs]
    direct = [e["direct_motor_torque"] for e in report.logs]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.plot(forces, deflections, color="tab:blue")
    ax1.axhline(math.degrees(report.config["deflection_limit"]), color="tab:red",
                linestyle="--", label="failure threshold")
    ax1.set_xlabel("applied force (N)")
    ax1.set_ylabel("max joint deflection (deg)")
    ax1.legend(fontsize=8)
    ax2.plot(forces, tendon, label="tendon drive", color="tab:blue")
    ax2.plot(forces, direct, label="direct drive", color="tab:orange")
    ax2.axhline(report.config["motor_torque_limit"], color="tab:red", linestyle="--",
                label="motor limit")
    ax2.axvline(report.summary["tendon_pullout_force"], color="tab:blue", alpha=0.4)
    ax2.axvline(report.summary["direct_pullout_force"], color="tab:orange", alpha=0.4)
    ax2.set_xlabel("applied force (N)")
    ax2.set_ylabel("worst motor torque (N*m)")
    ax2.legend(fontsize=8)
    fig.suptitle("Pull-out test")
    fig.tight_layout()
    return fig


def _render_repeatability(report: TestReport):
    cycles = [e["cycle"] for e in report.logs]
    means = [e["mean_error"] for e in report.logs]
    fig, ax = plt.subplots(figsize=(7, 3.2))
    ax.scatter(cycles, means, s=3, alpha=0.4, color="tab:blue", label="per-cycle mean")
    ax.axhline(report.summary["mean_tracking_error"], color="tab:blue",
               label=f"overall mean {report.summary['mean_tracking_error']:.4f} rad")
    ax.axhline(0.01, color="tab:red", linestyle="--", label="0.01 rad bar")
    ax.set_xlabel("grasp-release cycle")
    ax.set_ylabel("tracking error (rad)")
    ax.set_ylim(bottom=0)
    ax.legend(fontsize=8)
    fig.suptitle("Repeatability under cyclic grasping")
    fig.tight_layout()
    return fig


def _render_holding(report: TestReport):
    t = [e["time"] / 60.0 for e in report.logs]
    tendon = [e["tendon_current"] for e in report.logs]
    direct = [e["direct_current"] for e in report.logs]
    fig, ax = plt.subplots(figsize=(7, 3.2))
    ax.plot(t, tendon, label="tendon drive", color="tab:blue")
    ax.plot(t, direct, label="direct drive", color="tab:orange")
    ax.axhline(600.0, color="tab:red", linestyle="--", label="600 mA clamp (per motor)")
    ax.set_xlabel("time (min)")
    ax.set_ylabel("total current (mA)")
    ax.legend(fontsize=8)
    fig.suptitle(
        f"Holding test: avg ratio {report.summary['current_ratio']:.2f}")
    fig.tight_layout()
    return fig


_RENDERERS = {
    "pullout": _render_pullout,
    "repeatability": _render_repeatability,
    "holding": _render_holding,
}
