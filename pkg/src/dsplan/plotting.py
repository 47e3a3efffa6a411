"""Matplotlib figures for run reports: bound trace and network topology."""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

from .formulation import FirstStagePlan  # noqa: E402
from .network import Instance  # noqa: E402
from .report import INVESTED, KEPT, REMOVED, REPLACED, RunReport, topology_edges  # noqa: E402

EDGE_DRAW = {
    KEPT: {"color": "black", "linestyle": "-", "linewidth": 1.5},
    REMOVED: {"color": "0.6", "linestyle": ":", "linewidth": 1.0},
    INVESTED: {"color": "tab:red", "linestyle": "-", "linewidth": 2.5},
    REPLACED: {"color": "0.6", "linestyle": "--", "linewidth": 1.0},
}


def plot_bound_trace(report: RunReport, path) -> None:
    """Lower and upper bounds per iteration (branch-and-bound runs show one point)."""
    its = [row["iteration"] for row in report.bound_trace]
    lo = [row["lower"] for row in report.bound_trace]
    up = [row["upper"] if row["upper"] is not None and math.isfinite(row["upper"]) else math.nan
          for row in report.bound_trace]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(its, lo, marker="o", label="lower bound")
    ax.plot(its, up, marker="s", label="upper bound")
    ax.set_xlabel("iteration" if report.method != "extensive" else "nodes")
    ax.set_ylabel("objective ($/yr)")
    ax.set_title(f"{report.method}, {report.mode} (status {report.status})")
    ax.xaxis.set_major_locator(MaxNLocator(integer=True))
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def node_positions(inst: Instance) -> dict:
    """Deterministic circular layout with substations first."""
    subs = set(inst.network.substation_nodes)
    order = sorted(inst.network.node_ids, key=lambda i: (i not in subs, i))
    n = len(order)
    return {i: (math.cos(2 * math.pi * k / n + math.pi / 2), math.sin(2 * math.pi * k / n + math.pi / 2))
            for k, i in enumerate(order)}


def plot_topology(plan: FirstStagePlan, inst: Instance, path, title: str = "plan") -> None:
    """Draw every conductor with its state; parallel replaced/new conductors are offset."""
    pos = node_positions(inst)
    fig, ax = plt.subplots(figsize=(5, 5))
    seen = {}
    for i, j, label, state, conn in topology_edges(inst, plan):
        (x1, y1), (x2, y2) = pos[i], pos[j]
        k = seen.get(label, 0)
        seen[label] = k + 1
        off = 0.04 * k
        dx, dy = y2 - y1, x1 - x2
        norm = math.hypot(dx, dy) or 1.0
        ox, oy = off * dx / norm, off * dy / norm
        style = dict(EDGE_DRAW[state])
        if state in (KEPT, INVESTED) and not conn:
            style["linestyle"] = "--"
        ax.plot([x1 + ox, x2 + ox], [y1 + oy, y2 + oy], **style, zorder=1)
    subs = set(inst.network.substation_nodes)
    caps = {c.node for c in inst.network.capacitors if plan.v_cap.get(c.node)}
    for i, (x, y) in pos.items():
        marker = "s" if i in subs else "o"
        face = "gold" if i in subs else ("tab:green" if i in caps else "white")
        ax.scatter([x], [y], s=500, marker=marker, facecolor=face, edgecolor="black", zorder=2)
        ax.annotate(str(i), (x, y), ha="center", va="center", zorder=3)
    handles = [plt.Line2D([], [], **EDGE_DRAW[s], label=s) for s in (KEPT, INVESTED, REPLACED, REMOVED)]
    ax.legend(handles=handles, loc="lower center", bbox_to_anchor=(0.5, -0.15), ncol=2, fontsize=8)
    ax.set_title(title)
    ax.set_aspect("equal")
    ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
