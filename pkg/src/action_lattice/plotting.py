"""Figures written next to the JSON/CSV report."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {"figure.dpi": 120, "savefig.bbox": "tight", "font.size": 9,
         "axes.spines.top": False, "axes.spines.right": False, "axes.grid": True,
         "grid.alpha": 0.3}


def _save(fig, out_dir, name):
    path = os.path.join(out_dir, name)
    fig.savefig(path)
    plt.close(fig)
    return path


def action_spectrum(rows, out_dir):
    """Critical values against the family parameter, closed and fiber problems apart."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(8, 3.2), sharey=True)
        for ax, mode in zip(axes, ("closed", "fiber")):
            sel = [r for r in rows if r["mode"] == mode]
            if sel:
                s = np.array([r["s"] for r in sel]) + 0.15 * (np.array([r["r"] for r in sel]) > 4)
                v = np.array([r["value"] for r in sel])
                idx = np.array([r["index"] for r in sel])
                sc = ax.scatter(s, v, c=idx, s=12, cmap="viridis")
                fig.colorbar(sc, ax=ax, label="Morse index")
            ax.set_title(mode)
            ax.set_xlabel("s")
        axes[0].set_ylabel("critical value")
        return _save(fig, out_dir, "action_spectrum.png")


def pages_grid(page_dicts, out_dir):
    """One heat map of page ranks per computed page."""
    if not page_dicts:
        return None
    n = len(page_dicts)
    with plt.rc_context({**STYLE, "axes.grid": False}):
        fig, axes = plt.subplots(1, n, figsize=(2.4 * n, 2.4), squeeze=False)
        pmax = max((t[0] for pg in page_dicts for t in pg["table"]), default=0)
        qmax = max((t[1] for pg in page_dicts for t in pg["table"]), default=0)
        for ax, pg in zip(axes[0], page_dicts):
            grid = np.zeros((qmax + 1, pmax + 1))
            for p, q, k in pg["table"]:
                grid[q, p] = k
            ax.imshow(grid, origin="lower", cmap="Greys", vmin=0)
            for (q, p), k in np.ndenumerate(grid):
                if k:
                    ax.text(p, q, int(k), ha="center", va="center", color="tab:red")
            ax.set_title(f"E{pg['r']}")
            ax.set_xlabel("p")
            ax.set_xticks(range(pmax + 1))
            ax.set_yticks(range(qmax + 1))
        axes[0][0].set_ylabel("q")
        return _save(fig, out_dir, "pages.png")


def suite_summary(suites, out_dir):
    """Pass/fail strip of every suite in the report."""
    ids = list(suites)
    ok = [suites[i]["ok"] for i in ids]
    with plt.rc_context({**STYLE, "axes.grid": False}):
        fig, ax = plt.subplots(figsize=(6, 0.28 * len(ids) + 0.6))
        ax.barh(range(len(ids)), [1] * len(ids),
                color=["tab:green" if o else "tab:red" for o in ok])
        ax.set_yticks(range(len(ids)))
        ax.set_yticklabels(ids)
        ax.invert_yaxis()
        ax.set_xticks([])
        ax.set_title(f"{sum(ok)}/{len(ok)} suites pass")
        return _save(fig, out_dir, "suites.png")


def continuation_ranks(rep, out_dir):
    """Shifted window ranks along the continuation interval, one line per level."""
    slices = [x for x in rep.get("slices", []) if x.get("regular")]
    if not slices:
        return None
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        for r in sorted({x["r"] for x in slices}):
            sel = [x for x in slices if x["r"] == r]
            ax.plot([x["s"] for x in sel], [sum(x["ranks"].values()) for x in sel], "o-",
                    label=f"r = {r}")
        ax.set_xlabel("s")
        ax.set_ylabel("total window rank")
        ax.legend()
        return _save(fig, out_dir, "continuation.png")


def render_all(report, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    paths = [action_spectrum(report.get("spectra", []), out_dir),
             pages_grid(report.get("pages", []), out_dir),
             suite_summary(report["suites"], out_dir)]
    if "continuation" in report["suites"]:
        paths.append(continuation_ranks(report["suites"]["continuation"], out_dir))
    return [p for p in paths if p]
