"""Figures for the CLI report paths (PNG/PDF/SVG chosen by file suffix)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_history(history, path, title: str = "training loss") -> None:
    """Per-epoch loss components from a list of EpochRecord."""
    epochs = [r.epoch for r in history]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(epochs, [r.loss_bpr for r in history], label="bpr")
    if any(r.loss_id for r in history):
        ax.plot(epochs, [r.loss_id for r in history], label="distill")
    ax.plot(epochs, [r.loss_l2 for r in history], label="l2")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss per batch")
    ax.set_title(title)
    ax.legend()
    _save(fig, path)


def plot_metrics(report, path) -> None:
    """Recall@K and NDCG@K against K for one MetricReport."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(report.ks, [report.recall[k] for k in report.ks], marker="o", label="recall")
    ax.plot(report.ks, [report.ndcg[k] for k in report.ks], marker="s", label="ndcg")
    ax.set_xlabel("K")
    ax.set_ylim(0, 1)
    ax.set_title(f"{report.path or 'eval'}: {report.num_users} users")
    ax.legend()
    _save(fig, path)


def plot_bench(rows: dict, path) -> None:
    """Latency bars (float vs bitwise) next to storage bars (float32 vs binarized)."""
    fig, (a, b) = plt.subplots(1, 2, figsize=(7, 3.2))
    a.bar(["float", "bitwise"], [rows["ms_per_query_float"], rows["ms_per_query_bitwise"]],
          color=["tab:gray", "tab:blue"])
    a.set_ylabel("ms / query")
    a.set_title(f"speedup {rows['speedup']:.1f}x")
    b.bar(["float32", "binarized"], [rows["float32_bytes"] / 1e6, rows["model_bytes"] / 1e6],
          color=["tab:gray", "tab:blue"])
    b.set_ylabel("MB")
    b.set_title(f"compression {rows['compression']:.1f}x")
    _save(fig, path)
