"""Figure rendering for CLI report paths (always Agg, never a display)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def save_memory_figure(reports, path) -> None:
    """Cache vs hidden-state byte curves over context length."""
    ctx = [r.context_len for r in reports]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ctx, [r.kv_bytes for r in reports], marker="o", label="KV cache")
    ax.plot(ctx, [r.hidden_bytes for r in reports], marker="s", label="hidden states")
    ax.set_xlabel("context length (tokens)")
    ax.set_ylabel("bytes")
    ax.set_title("memory footprint vs context length")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_roc_figure(curves: dict, path) -> None:
    """ROC curves per method; `curves` maps label -> (fpr, tpr) arrays."""
    fig, ax = plt.subplots(figsize=(5, 5))
    for label, (fpr, tpr) in curves.items():
        ax.plot(fpr, tpr, label=label)
    ax.plot([0, 1], [0, 1], linestyle="--", color="grey", linewidth=1)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title("ROC")
    ax.legend(loc="lower right", fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_sweep_figure(rows, path) -> None:
    """Accuracy and mean tokens per (config, method); `rows` are dicts."""
    configs = sorted({r["config"] for r in rows})
    methods = sorted({r["method"] for r in rows})
    fig, (ax_acc, ax_tok) = plt.subplots(1, 2, figsize=(9, 4))
    x = range(len(configs))
    width = 0.8 / max(len(methods), 1)
    for j, method in enumerate(methods):
        by_cfg = {r["config"]: r for r in rows if r["method"] == method}
        offs = [i + j * width for i in x]
        ax_acc.bar(offs, [by_cfg[c]["accuracy"] for c in configs], width=width, label=method)
        ax_tok.bar(offs, [by_cfg[c]["mean_tokens"] for c in configs], width=width, label=method)
    for ax, ylabel in ((ax_acc, "accuracy"), (ax_tok, "mean generated tokens")):
        ax.set_xticks([i + width * (len(methods) - 1) / 2 for i in x])
        ax.set_xticklabels(configs)
        ax.set_xlabel("layers x tokens")
        ax.set_ylabel(ylabel)
        ax.grid(True, axis="y", alpha=0.3)
    ax_acc.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
