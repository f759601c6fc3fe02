"""Static summary figures. SVG output is made reproducible byte for byte."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "musense", "svg.fonttype": "none", "path.simplify": False}


def _save(fig, path):
    fmt = str(path).rsplit(".", 1)[-1].lower()
    meta = {"Date": None} if fmt in ("svg", "pdf") else {}
    fig.savefig(path, metadata=meta)
    plt.close(fig)


def summary_plot(ranking, path):
    """Bar chart of j_hat per candidate next to the optimum's deviation heatmap."""
    with plt.rc_context(_RC):
        rows = sorted(ranking.rows, key=lambda r: (r.length, r.start_index))
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4.2), gridspec_kw={"width_ratios": [1.1, 1]})
        vals = [r.j_hat if r.ok else 0.0 for r in rows]
        colors = ["tab:red" if r is ranking.optimum else ("0.7" if not r.ok else "tab:blue") for r in rows]
        ax1.bar(range(len(rows)), vals, color=colors)
        ax1.set_xticks(range(len(rows)))
        ax1.set_xticklabels([f"{r.label}\n({r.start_index},{r.length})" for r in rows], fontsize=7)
        ax1.set_ylabel("global average deviation [mm]")
        ax1.set_title("candidates, (i, h)")

        opt = ranking.optimum
        if opt is not None and opt.report is not None:
            rep = opt.report
            im = ax2.imshow(rep.delta_matrix.T, origin="lower", aspect="auto", extent=(0, 100, 0, 100),
                            cmap="viridis", interpolation="nearest")
            fig.colorbar(im, ax=ax2, label="deviation [mm]")
            ax2.set_xlabel("time [%]")
            ax2.set_ylabel("length [%]")
            ax2.set_title(f"optimum {opt.label}")
        else:
            ax2.set_axis_off()
        fig.tight_layout()
        _save(fig, path)


def sweep_plot(labels, columns, matrix, path):
    """Grouped bars: one group per candidate, one bar per scale column."""
    matrix = np.asarray(matrix, dtype=float)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(10, 4))
        width = 0.8 / max(1, len(columns))
        x = np.arange(len(labels))
        for c, name in enumerate(columns):
            ax.bar(x + (c - (len(columns) - 1) / 2) * width, np.nan_to_num(matrix[:, c]), width, label=name)
        ax.set_xticks(x)
        ax.set_xticklabels(labels)
        ax.set_ylabel("global average deviation [mm]")
        ax.legend(fontsize=8)
        fig.tight_layout()
        _save(fig, path)
