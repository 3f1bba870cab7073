"""Figure rendering for experiment reports.

One renderer per experiment, each taking the in-memory report and writing a
single PNG next to the CSV/JSON artifacts. Rendering consumes only the rows
and aggregates that are already serialized, so a figure can always be
recreated from the report files alone.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _cell_rows(rows, **match):
    out = []
    for r in rows:
        if all(abs(r[k] - v) < 1e-12 if isinstance(v, float) else r[k] == v
               for k, v in match.items()):
            out.append(r)
    return out


def render_active_size(report, path):
    """Histogram of per-replication NNLS active-set sizes against the
    sampler's quantile band (dashed lines) and mean (dotted)."""
    cards = np.array([r["card"] for r in report.rows], dtype=float)
    ref = report.aggregates["sampler"]
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    lo = min(cards.min(), ref["band_lo"]) - 1.5
    hi = max(cards.max(), ref["band_hi"]) + 1.5
    bins = np.arange(np.floor(lo), np.ceil(hi) + 1) - 0.5
    ax.hist(cards, bins=bins, color="#4878b0", edgecolor="white",
            label=f"NNLS replications ({cards.size})")
    ax.axvline(ref["band_lo"], color="k", linestyle="--", linewidth=1.2,
               label="sampler band")
    ax.axvline(ref["band_hi"], color="k", linestyle="--", linewidth=1.2)
    ax.axvline(ref["mean"], color="k", linestyle=":", linewidth=1.2,
               label="sampler mean")
    cfg = report.config
    ax.set_xlabel("active-set size |F|")
    ax.set_ylabel("count")
    ax.set_title(f"active-set size: n={cfg['n']} p={cfg['p']} "
                 f"s={cfg['s']} rho={cfg['rho']:g}")
    ax.legend(loc="best", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_tau_contour(report, path):
    """Map of the 0.05-quantile of log2 of the support margin over the
    (p/n, s/n) grid; filled contours when the grid is large enough."""
    p_ratios = sorted({r["p_ratio"] for r in report.rows})
    s_ratios = sorted({r["s_ratio"] for r in report.rows})
    grid = np.empty((len(p_ratios), len(s_ratios)))
    for i, pr in enumerate(p_ratios):
        for j, sr in enumerate(s_ratios):
            vals = [r["log2_tau_sq"]
                    for r in _cell_rows(report.rows, p_ratio=pr, s_ratio=sr)]
            grid[i, j] = np.quantile(vals, 0.05)
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    if len(p_ratios) >= 3 and len(s_ratios) >= 3:
        cs = ax.contourf(s_ratios, p_ratios, grid, levels=12, cmap="viridis")
        for lev, style in ((-10, "solid"), (-8, "dashed"), (-5, "dotted")):
            if grid.min() < lev < grid.max():
                ax.contour(s_ratios, p_ratios, grid, levels=[lev],
                           colors="k", linestyles=style, linewidths=1.0)
        fig.colorbar(cs, ax=ax, label="q0.05 of log2 margin")
    else:
        im = ax.imshow(grid, origin="lower", aspect="auto", cmap="viridis",
                       extent=(min(s_ratios), max(s_ratios),
                               min(p_ratios), max(p_ratios)))
        for i, pr in enumerate(p_ratios):
            for j, sr in enumerate(s_ratios):
                ax.annotate(f"{grid[i, j]:.1f}",
                            ((sr - min(s_ratios)) /
                             max(max(s_ratios) - min(s_ratios), 1e-12)
                             * 0.9 + 0.05,
                             (pr - min(p_ratios)) /
                             max(max(p_ratios) - min(p_ratios), 1e-12)
                             * 0.9 + 0.05),
                            xycoords="axes fraction", ha="center",
                            color="white", fontsize=10)
        fig.colorbar(im, ax=ax, label="q0.05 of log2 margin")
    ax.set_xlabel("s / n")
    ax.set_ylabel("p / n")
    ax.set_title(f"support margin contours: n={report.config['n']}, "
                 f"{report.config['family']} a={report.config['a']:g}")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


_DECONV_METHODS = [("mse_nnls", "NNLS"),
                   ("mse_nnlasso_lam0", "NN-lasso $\\lambda_0$"),
                   ("mse_nnlasso_cv", "NN-lasso CV"),
                   ("mse_ridge_cv", "ridge CV"),
                   ("mse_oracle_ls", "oracle LS")]


def render_deconv(report, path):
    """Per-method prediction-MSE boxplots on a log scale."""
    data = [[r[f] for r in report.rows] for f, _ in _DECONV_METHODS]
    labels = [lab for _, lab in _DECONV_METHODS]
    fig, ax = plt.subplots(figsize=(6.8, 4.2))
    ax.boxplot(data, tick_labels=labels, whis=(5, 95))
    ax.set_yscale("log")
    ax.set_ylabel("prediction MSE")
    cfg = report.config
    ax.set_title(f"deconvolution: n={cfg['n']} p={cfg['p']} "
                 f"sigma={cfg['sigma']:g}, {len(report.rows)} reps")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


_RECOVERY_METHODS = [("tnnls_star", "tNNLS*", "o-"),
                     ("tnnls", "tNNLS", "s-"),
                     ("tnnl1", "tNN-lasso", "^-"),
                     ("nnl1", "NN-lasso", "v--"),
                     ("omp", "OMP", "x--")]


def render_recovery_phase(report, path):
    """Success-rate curves per method, one panel per (p/n, b) pair,
    sweeping the sparsity fraction on the x axis."""
    combos = sorted({(r["p_ratio"], r["b"]) for r in report.rows})
    s_ratios = sorted({r["s_ratio"] for r in report.rows})
    fig, axes = plt.subplots(1, len(combos),
                             figsize=(4.6 * len(combos), 3.8),
                             sharey=True, squeeze=False)
    for ax, (pr, b) in zip(axes[0], combos):
        for field, label, style in _RECOVERY_METHODS:
            rates = []
            for sr in s_ratios:
                sub = _cell_rows(report.rows, p_ratio=pr, s_ratio=sr, b=b)
                rates.append(np.mean([r[field] for r in sub]) if sub
                             else np.nan)
            ax.plot(s_ratios, rates, style, label=label, markersize=5)
        ax.set_xlabel("s / n")
        ax.set_ylim(-0.05, 1.05)
        ax.set_title(f"p/n={pr:g}, b={b:g}")
        ax.grid(alpha=0.3)
    axes[0][0].set_ylabel("exact-recovery rate")
    axes[0][-1].legend(loc="best", fontsize=8)
    fig.suptitle(f"{report.config['design']} recovery, "
                 f"n={report.config['n']}", y=0.99)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


RENDERERS = {
    "active-size": render_active_size,
    "tau-contour": render_tau_contour,
    "deconv": render_deconv,
    "recovery-phase": render_recovery_phase,
}


def render_report(report, out_dir):
    """Render the figure for a report into `<name>-seed<seed>.png`.

    Returns the path, or None when the experiment has no renderer.
    """
    fn = RENDERERS.get(report.name)
    if fn is None:
        return None
    import os
    path = os.path.join(out_dir, f"{report.name}-seed{report.seed}.png")
    fn(report, path)
    return path
