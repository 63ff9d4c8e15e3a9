"""Matplotlib figures for reports: ROC comparison, reconstructions, training curves."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
})


def plot_roc_curves(reports, path, title="ROC curves"):
    """Overlay one ROC per report; legend carries AUC and pAUC."""
    fig, ax = plt.subplots(figsize=(4.5, 4.2))
    for rep in reports:
        fpr = [r[0] for r in rep.roc]
        tpr = [r[1] for r in rep.roc]
        ax.plot(fpr, tpr, lw=1.4, label=f"{rep.model} (AUC={rep.auc:.3f}, pAUC={rep.pauc:.3f})")
    ax.plot([0, 1], [0, 1], color="0.6", ls="--", lw=0.8)
    if reports:
        ax.axvline(reports[0].p, color="0.8", lw=0.8)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.01)
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.set_title(title)
    ax.legend(loc="lower right", fontsize=7)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_reconstructions(spectrogram, reconstructions, path, title=""):
    """Input spectrogram followed by each model's reconstruction and error map.

    ``reconstructions`` maps model name -> reconstructed array (frames x mels).
    """
    n = len(reconstructions)
    fig, axes = plt.subplots(n + 1, 2, figsize=(8, 1.8 * (n + 1)), squeeze=False)
    x = np.asarray(spectrogram)
    axes[0, 0].imshow(x.T, origin="lower", aspect="auto", cmap="magma")
    axes[0, 0].set_title(title or "input")
    axes[0, 1].axis("off")
    for row, (name, y) in enumerate(reconstructions.items(), start=1):
        y = np.asarray(y)
        err = (y - x) ** 2
        axes[row, 0].imshow(y.T, origin="lower", aspect="auto", cmap="magma",
                            vmin=x.min(), vmax=x.max())
        axes[row, 0].set_title(f"{name} reconstruction")
        axes[row, 1].imshow(err.T, origin="lower", aspect="auto", cmap="viridis")
        axes[row, 1].set_title(f"squared error, MSE={err.mean():.3f}")
    for ax in axes.ravel():
        ax.grid(False)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_history(history, path, title="training"):
    fig, ax = plt.subplots(figsize=(5, 3))
    epochs = np.arange(history.n_epochs)
    ax.semilogy(epochs, history.train_loss, label="train")
    ax.semilogy(epochs, history.val_loss, label="validation")
    if history.best_epoch >= 0:
        ax.axvline(history.best_epoch, color="0.6", ls=":", lw=0.8)
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_type_table(reports, path):
    """Per-anomaly-type AUC/pAUC table, one row per model."""
    types = sorted({t for r in reports for t in r.per_type})
    header = ["model", "AUC", "pAUC"] + [f"{t}\n{m}" for t in types for m in ("AUC", "pAUC")]
    rows = []
    for r in reports:
        row = [r.model, f"{r.auc:.3f}", f"{r.pauc:.3f}"]
        for t in types:
            m = r.per_type.get(t)
            row += [f"{m['auc']:.3f}", f"{m['pauc']:.3f}"] if m else ["-", "-"]
        rows.append(row)
    fig, ax = plt.subplots(figsize=(1.1 * len(header) + 1, 0.4 * len(rows) + 1))
    ax.axis("off")
    table = ax.table(cellText=rows, colLabels=header, loc="center", cellLoc="center")
    table.auto_set_font_size(False)
    table.set_fontsize(7)
    table.scale(1, 1.6)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
