"""Figure rendering for optimizer traces.

Kept separate from the CLI so matplotlib is only imported when a figure is
actually requested.
"""

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def render_trace_figure(trace, path) -> None:
    """Plot the loss columns of a fit trace, holdout PSNR on a second axis."""
    iterations = [row.iteration for row in trace]
    series = [
        ("total", "tab:blue", [row.total for row in trace]),
        ("mse", "tab:orange", [row.mse for row in trace]),
        ("0.4*(1-ssim)", "tab:green", [0.4 * (1.0 - row.ssim) for row in trace]),
    ]
    fig, ax = plt.subplots(figsize=(8.0, 4.5))
    for label, color, values in series:
        ax.plot(iterations, values, label=label, color=color)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    if all(v > 0 for _, _, values in series for v in values):
        ax.set_yscale("log")
    handles, labels = ax.get_legend_handles_labels()

    psnr_vals = [row.holdout_psnr for row in trace]
    if any(math.isfinite(v) for v in psnr_vals):
        twin = ax.twinx()
        line = twin.plot(iterations, psnr_vals, label="holdout psnr", color="tab:red")
        twin.set_ylabel("holdout PSNR (dB)")
        handles += line
        labels.append("holdout psnr")
    ax.legend(handles, labels, loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
