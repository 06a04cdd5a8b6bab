"""Figure rendering for the report path.

Every delimited artifact the CLI writes gets a companion PNG: the partition
scatter with borders, the indifference loci, and the sweep's certificate
trace with its flip markers. Rendering is headless (Agg) and deterministic.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_COLORS = plt.rcParams["axes.prop_cycle"].by_key()["color"]
_DPI = 150


def _save(fig, path):
    import os
    import tempfile

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".png.tmp")
    os.close(fd)
    try:
        fig.savefig(tmp, dpi=_DPI, bbox_inches="tight", format="png")
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
        plt.close(fig)


def plot_partition(mu, partition, path, borders=(), centers=None,
                   max_points: int = 20000) -> None:
    sample = mu.samples[0]
    k = sample.space.dimension
    fig, ax = plt.subplots(figsize=(6, 5) if k == 2 else (7, 2.2))
    labels = partition.labels[0]
    pts = sample.points
    if len(pts) > max_points:
        step = int(np.ceil(len(pts) / max_points))
        pts = pts[::step]
        labels = labels[::step]
    n = int(partition.realized_sizes.shape[0])
    for i in range(n):
        sel = labels == i
        color = _COLORS[i % len(_COLORS)]
        share = partition.realized_sizes[i]
        if k == 2:
            ax.scatter(pts[sel, 0], pts[sel, 1], s=2, color=color,
                       label=f"community {i + 1} ({share:.3f})", rasterized=True)
        else:
            ax.scatter(pts[sel, 0], np.zeros(int(np.sum(sel))), s=4, color=color,
                       label=f"community {i + 1} ({share:.3f})")
    for border in borders:
        for sl in border.chains:
            verts = border.vertices[sl]
            if k == 2:
                ax.plot(verts[:, 0], verts[:, 1], "k-", lw=1.2)
            else:
                ax.axvline(verts[0, 0], color="k", lw=1.2)
    if centers is not None and k == 2:
        centers = np.asarray(centers)
        ax.plot(centers[:, 0], centers[:, 1], "k*", ms=12, mew=0.5, mec="white")
    ax.set_xlabel("x_1")
    if k == 2:
        ax.set_ylabel("x_2")
        ax.set_aspect("equal")
    else:
        ax.set_yticks([])
    ax.legend(loc="upper right", fontsize=8, framealpha=0.9)
    ax.set_title("cost-minimizing partition")
    _save(fig, path)


def plot_borders(borders, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 5))
    for b_idx, border in enumerate(borders):
        color = _COLORS[b_idx % len(_COLORS)]
        for sl in border.chains:
            verts = border.vertices[sl]
            if verts.shape[1] == 1:
                ax.axvline(verts[0, 0], color=color, lw=1.5)
            else:
                ax.plot(verts[:, 0], verts[:, 1], color=color, lw=1.5)
        label = f"border {border.i + 1}-{border.j + 1}"
        ax.plot([], [], color=color, label=label)
    ax.set_xlabel("x_1")
    ax.set_ylabel("x_2")
    ax.set_aspect("equal")
    ax.legend(fontsize=8)
    ax.set_title("inter-community borders")
    _save(fig, path)


def plot_locus(loci, centers, path) -> None:
    """Indifference loci for a list of fee gaps: bisector, hyperbola
    branches, and the degenerate tangent ray."""
    fig, ax = plt.subplots(figsize=(6, 5))
    centers = np.asarray(centers, dtype=float)
    for idx, (delta_p, chains) in enumerate(loci):
        color = _COLORS[idx % len(_COLORS)]
        for chain in chains:
            ax.plot(chain[:, 0], chain[:, 1], color=color, lw=1.5)
        ax.plot([], [], color=color, label=f"fee gap {delta_p:g}")
        if not chains:
            ax.plot([], [], color=color, ls=":",
                    label=f"fee gap {delta_p:g} (empty)")
    ax.plot(centers[:, 0], centers[:, 1], "k*", ms=12, mew=0.5, mec="white")
    ax.set_xlabel("x_1")
    ax.set_ylabel("x_2")
    ax.set_aspect("equal")
    ax.legend(fontsize=8)
    ax.set_title("indifference loci by fee gap")
    _save(fig, path)


def plot_sweep(table, path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    pairs = sorted({(c.i, c.j) for row in table.rows if row.status == "ok"
                    for c in row.conditions})
    by_branch = {}
    for row in table.rows:
        if row.status != "ok":
            continue
        by_branch.setdefault(row.branch_id, []).append(row)
    for bid, rows in sorted(by_branch.items()):
        for p_idx, pair in enumerate(pairs):
            xs = [r.value for r in rows if r.condition_sum(pair) is not None]
            ys = [r.condition_sum(pair) for r in rows
                  if r.condition_sum(pair) is not None]
            if not xs:
                continue
            color = _COLORS[(bid + p_idx) % len(_COLORS)]
            ax.plot(xs, ys, "o-", ms=4, lw=1.2, color=color,
                    label=f"branch {bid}, pair {pair[0]+1}-{pair[1]+1}")
    for flip in table.flips:
        if flip.refined_value is not None:
            ax.axvline(flip.refined_value, color="k", ls="--", lw=1)
            ax.annotate(f"flip {flip.refined_value:.3f}",
                        (flip.refined_value, 0), textcoords="offset points",
                        xytext=(4, 6), fontsize=8)
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xlabel(f"parameter {table.plan.parameter}")
    ax.set_ylabel("certificate sum (negative = strongly stable)")
    ax.legend(fontsize=8)
    ax.set_title("strong-stability certificate along the sweep")
    _save(fig, path)
