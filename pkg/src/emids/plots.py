"""Static SVG figures: ROC, FAR/FRR against threshold, and score densities."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import EvalReport  # noqa: E402


def plot_report(report: EvalReport, path, title: str = "") -> None:
    fig, (ax_roc, ax_rates, ax_kde) = plt.subplots(1, 3, figsize=(13, 4))

    roc = np.array(report.roc)
    ax_roc.step(roc[:, 0], roc[:, 1], where="post")
    ax_roc.plot([0, 1], [0, 1], linestyle=":", color="grey")
    ax_roc.set(xlabel="FAR", ylabel="GAR", title="ROC", xlim=(0, 1), ylim=(0, 1.01))

    rates = np.array(report.far_frr)
    finite = np.isfinite(rates[:, 0])
    ax_rates.plot(rates[finite, 0], rates[finite, 1], label="FAR")
    ax_rates.plot(rates[finite, 0], rates[finite, 2], label="FRR")
    ax_rates.axvline(report.eer_threshold, linestyle="--", color="grey")
    ax_rates.set(xlabel="threshold", ylabel="rate", title=f"FAR/FRR (EER {report.eer:.3f})")
    ax_rates.legend()

    for name, pts in (("genuine", report.kde_genuine), ("impostor", report.kde_impostor)):
        if pts:
            p = np.array(pts)
            ax_kde.plot(p[:, 0], p[:, 1], label=name)
    ax_kde.set(xlabel="score", ylabel="density", title="Score density")
    ax_kde.legend()

    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
