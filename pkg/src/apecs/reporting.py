"""Artifact emission: JSON reports, delimited tables, and figures.

All numeric output is locale-independent (dot decimal separator, no
grouping).  JSON floats are written with 17 significant digits so every
value round-trips exactly; trace CSVs use 9 significant digits.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .sim import Course, RunTrace

__all__ = [
    "append_rmse_row",
    "dumps_json",
    "loss_csv",
    "plot_loss_curves",
    "plot_sweep",
    "plot_trajectory",
    "sweep_csv",
    "trace_csv",
    "write_rmse_table",
]

TRACE_HEADER = "t,x,y,heading,speed,steer,throttle,cte"
LOSS_HEADER = "epoch,l_human,l_expert,l_total"
RMSE_HEADER = "model,rmse_m"
SWEEP_HEADER = "bound,rmse_m,diverged"


def _f17(v: float) -> str:
    if math.isnan(v):
        return "null"
    if math.isinf(v):
        return '"inf"' if v > 0 else '"-inf"'
    return format(float(v), ".17g")


def _f9(v: float) -> str:
    return format(float(v), ".9g")


def dumps_json(obj, indent: int = 0) -> str:
    """Serialize to JSON with floats at 17 significant digits."""
    pad = "  " * indent
    child = "  " * (indent + 1)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _f17(obj)
    if isinstance(obj, str):
        return '"' + obj.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'
    if isinstance(obj, (list, tuple, np.ndarray)):
        items = [dumps_json(v, indent + 1) for v in obj]
        if not items:
            return "[]"
        return "[\n" + ",\n".join(child + s for s in items) + "\n" + pad + "]"
    if isinstance(obj, dict):
        items = [f'{child}"{k}": ' + dumps_json(v, indent + 1) for k, v in obj.items()]
        if not items:
            return "{}"
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def trace_csv(trace: RunTrace) -> str:
    lines = [TRACE_HEADER]
    for i in range(len(trace)):
        lines.append(
            ",".join(
                _f9(v)
                for v in (
                    trace.t[i],
                    trace.x[i],
                    trace.y[i],
                    trace.heading[i],
                    trace.speed[i],
                    trace.steer[i],
                    trace.throttle[i],
                    trace.cte[i],
                )
            )
        )
    return "\n".join(lines) + "\n"


def loss_csv(loss_human, loss_expert, loss_total) -> str:
    lines = [LOSS_HEADER]
    for i, (h, e, t) in enumerate(zip(loss_human, loss_expert, loss_total)):
        lines.append(f"{i},{_f17(h)},{_f17(e)},{_f17(t)}")
    return "\n".join(lines) + "\n"


def append_rmse_row(path: Path, model: str, rmse_m: float) -> None:
    path = Path(path)
    new = not path.exists()
    with open(path, "a") as fh:
        if new:
            fh.write(RMSE_HEADER + "\n")
        fh.write(f"{model},{_f9(rmse_m)}\n")


def write_rmse_table(path: Path, rows: list[tuple[str, float]]) -> None:
    """Write the whole table at once, sorted ascending by RMSE."""
    lines = [RMSE_HEADER]
    for model, value in sorted(rows, key=lambda r: r[1]):
        lines.append(f"{model},{_f9(value)}")
    Path(path).write_text("\n".join(lines) + "\n")


def sweep_csv(rows: list[dict]) -> str:
    lines = [SWEEP_HEADER]
    for row in rows:
        rm = "" if row.get("rmse_m") is None else _f9(row["rmse_m"])
        lines.append(f"{_f9(row['bound'])},{rm},{int(bool(row.get('diverged')))}")
    return "\n".join(lines) + "\n"


def plot_loss_curves(loss_human, loss_expert, loss_total, title: str, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    epochs = np.arange(len(loss_total))
    ax.plot(epochs, loss_human, label="human loss")
    ax.plot(epochs, loss_expert, label="expert loss")
    ax.plot(epochs, loss_total, label="total loss", linestyle="--", color="k")
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_trajectory(course: Course, traces: dict[str, RunTrace], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 6))
    ax.plot(course.waypoints[:, 0], course.waypoints[:, 1], "k--", linewidth=1.2, label="course")
    for name, trace in traces.items():
        ax.plot(trace.x, trace.y, linewidth=1.0, label=name)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_sweep(rows: list[dict], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ok = [r for r in rows if r.get("rmse_m") is not None]
    bad = [r for r in rows if r.get("rmse_m") is None]
    if ok:
        ax.plot([r["bound"] for r in ok], [r["rmse_m"] for r in ok], "o-")
    for r in bad:
        ax.axvline(r["bound"], color="r", alpha=0.4, linestyle=":")
    ax.set_xscale("log")
    ax.set_xlabel("Lipschitz bound")
    ax.set_ylabel("closed-loop RMSE [m]")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
