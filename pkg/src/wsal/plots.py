"""Optional figures for evaluation reports (ROC curves and per-video score tracks)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def roc_figure(report, path):
    """Overall and anomaly-subset ROC curves in one panel."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 3.4))
        ax.plot(*report.roc, lw=1.4, label=f"overall  AUC {report.overall_auc:.3f}")
        ax.plot(*report.subset_roc, lw=1.4, label=f"anomaly subset  AUC {report.subset_auc:.3f}")
        ax.plot([0, 1], [0, 1], color="0.6", lw=0.8, ls="--")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.01)
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.legend(loc="lower right", frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def score_tracks(tracks, path, ncols=2):
    """Frame-level fused scores with the annotated intervals shaded.

    ``tracks`` is a list of (video id, frame scores, [(start, end), ...]).
    """
    if not tracks:
        raise ValueError("no score tracks to draw")
    nrows = int(np.ceil(len(tracks) / ncols))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(nrows, ncols, figsize=(3.4 * ncols, 1.5 * nrows), squeeze=False, sharey=True)
        for ax, (vid, scores, intervals) in zip(axes.ravel(), tracks):
            for s, e in intervals:
                ax.axvspan(s, e, color="tab:red", alpha=0.18, lw=0)
            ax.plot(np.arange(len(scores)), scores, lw=1.0, color="tab:blue")
            ax.set_title(vid, fontsize=8)
            ax.set_ylim(0, 1)
            ax.set_xlim(0, len(scores))
        for ax in axes.ravel()[len(tracks) :]:
            ax.axis("off")
        for ax in axes[-1]:
            ax.set_xlabel("frame")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
