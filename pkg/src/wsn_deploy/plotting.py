"""Figures for optimizer output: partition map, convergence trace, trade-off curves."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def _owner_image(grid, owner):
    img = np.full(grid.shape, np.nan)
    img[grid.ij[:, 0], grid.ij[:, 1]] = owner
    return img.T  # imshow wants rows = y


def plot_deployment(path, grid, owner, p, q, flows, bbox, title=None):
    """Cell ownership with APs, BSs and AP->BS links (width ~ flow)."""
    fig, ax = plt.subplots(figsize=(6.5, 6.0))
    x0, y0, x1, y1 = bbox
    n_aps = len(p)
    ax.imshow(_owner_image(grid, owner), origin="lower", extent=(x0, x1, y0, y1),
              cmap="tab20", vmin=-0.5, vmax=max(19.5, n_aps - 0.5), alpha=0.55,
              interpolation="nearest")
    flows = np.asarray(flows, dtype=float)
    top = flows.max() if flows.size and flows.max() > 0 else 1.0
    for n in range(n_aps):
        for m in range(len(q)):
            if flows[n, m] > 0:
                ax.plot([p[n, 0], q[m, 0]], [p[n, 1], q[m, 1]], color="0.25",
                        lw=0.4 + 2.6 * flows[n, m] / top, zorder=2)
    ax.scatter(p[:, 0], p[:, 1], marker="o", s=36, c="k", label="AP", zorder=3)
    ax.scatter(q[:, 0], q[:, 1], marker="^", s=90, c="tab:red", edgecolors="k",
               label="BS", zorder=4)
    for n, (x, y) in enumerate(p):
        ax.annotate(str(n), (x, y), textcoords="offset points", xytext=(4, 4), fontsize=7)
    ax.set_xlim(x0, x1)
    ax.set_ylim(y0, y1)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_aspect("equal")
    ax.legend(loc="upper right", fontsize=8, framealpha=0.9)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_trace(path, trace, title=None):
    d = trace.objectives
    fig, ax = plt.subplots(figsize=(6.0, 6.0 * GOLDEN))
    ax.plot(np.arange(len(d)), d * 1e3, marker=".", lw=1)
    ax.set_xlabel("step")
    ax.set_ylabel("weighted power (mW)")
    ax.grid(alpha=0.3)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_tradeoff(path, lambdas, sensor_w, ap_w, title=None):
    """AP power against sensor power across trade-off multipliers."""
    fig, ax = plt.subplots(figsize=(6.0, 6.0 * GOLDEN))
    sensor_mw = np.asarray(sensor_w) * 1e3
    ap_mw = np.asarray(ap_w) * 1e3
    ax.plot(sensor_mw, ap_mw, marker="o")
    for lam, x, y in zip(lambdas, sensor_mw, ap_mw):
        ax.annotate(f"λ={lam:g}", (x, y), textcoords="offset points", xytext=(5, 5), fontsize=8)
    ax.set_xlabel("sensor power (mW)")
    ax.set_ylabel("AP power (mW)")
    ax.grid(alpha=0.3)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
