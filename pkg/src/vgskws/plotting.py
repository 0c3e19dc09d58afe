"""Static figures: attention over an utterance, co-occurrence heatmaps."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no timestamp/version metadata so reruns write identical files
_PNG_META = {"Software": None}


def plot_attention(
    path: str | Path,
    waveform: np.ndarray,
    sample_rate: int,
    weights: np.ndarray,
    frame_period_s: float,
    predicted_time_s: float,
    title: str = "",
    interval: tuple[float, float] | None = None,
) -> None:
    """Waveform with the attention curve overlaid and the predicted time marked."""
    fig, ax = plt.subplots(figsize=(9, 3))
    t_wave = np.arange(len(waveform)) / sample_rate
    ax.plot(t_wave, waveform, color="0.6", linewidth=0.5)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("amplitude")
    ax.set_xlim(0, len(waveform) / sample_rate)
    if interval is not None:
        ax.axvspan(*interval, color="tab:green", alpha=0.15)
    att = ax.twinx()
    t_att = (np.arange(len(weights)) + 0.5) * frame_period_s
    att.plot(t_att, weights, color="tab:blue")
    att.set_ylabel("attention")
    att.set_ylim(0, max(float(np.max(weights)) * 1.1, 1e-6))
    ax.axvline(predicted_time_s, color="tab:red", linestyle="--")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def plot_cooccurrence(path: str | Path, matrix: np.ndarray, query_words: list[str], target_words: list[str]) -> None:
    n = len(query_words)
    size = max(4.0, 0.18 * n + 2)
    fig, ax = plt.subplots(figsize=(size, size))
    ax.imshow(matrix, cmap="viridis", vmin=0, vmax=1)
    ax.set_xticks(range(len(target_words)), target_words, rotation=90, fontsize=7)
    ax.set_yticks(range(n), query_words, fontsize=7)
    ax.set_xlabel("target-language keyword")
    ax.set_ylabel("query-language keyword")
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
