"""Figure rendering for CLI report paths.

Figures are written next to the delimited outputs; the CSV/JSON files remain
the machine-readable contract. PNG metadata is pinned so repeated runs
produce identical bytes.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .bench import BenchConfig, EstimatorReport  # noqa: E402
from .train import EncoderSpec, TrainConfig, TrainReport  # noqa: E402

_PNG_METADATA = {"Software": "eqcon"}


def render_bench_figure(path, cfg: BenchConfig, reports: list[EstimatorReport]) -> None:
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2), constrained_layout=True)
    labels = [r.kind.value.replace("_", "\n") for r in reports]
    metrics = (
        ("bias", [r.bias for r in reports], [r.bias_std for r in reports]),
        ("variance", [r.variance for r in reports], [r.variance_std for r in reports]),
        ("avg_error", [r.avg_error for r in reports], [r.avg_error_std for r in reports]),
    )
    for ax, (name, means, stds) in zip(axes, metrics):
        ax.bar(range(len(reports)), means, yerr=stds, capsize=3, color="#4878cf")
        ax.set_xticks(range(len(reports)))
        ax.set_xticklabels(labels, fontsize=7)
        ax.set_title(name)
        ax.grid(axis="y", alpha=0.3)
    fig.suptitle(
        f"{cfg.family.value} / {cfg.loss_kind.value} "
        f"({cfg.n_param_sets} sets x {cfg.n_grad_samples} estimates, seed {cfg.seed})",
        fontsize=10,
    )
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)


def render_train_figure(path, cfg: TrainConfig, spec: EncoderSpec, report: TrainReport) -> None:
    fig, ax = plt.subplots(figsize=(6, 4), constrained_layout=True)
    epochs = range(1, len(report.train_mse) + 1)
    ax.plot(epochs, report.train_mse, label="train MSE")
    ax.plot(epochs, report.val_mse, label="validation MSE")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    ax.legend()
    ax.set_title(
        f"{cfg.method.value} (test MSE {report.test_mse:.3e}, "
        f"violation rate {report.violation_rate:.3f})",
        fontsize=10,
    )
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)
