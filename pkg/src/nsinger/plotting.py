"""Figures written next to the CSV/JSON outputs of the report commands."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .audio import ConditionFeatures  # noqa: E402


def _voiced_line(track: ConditionFeatures) -> np.ndarray:
    f0 = track.f0_hz.astype(float).copy()
    f0[track.vuv == 0] = np.nan
    return f0


def plot_f0_contours(ref: ConditionFeatures, hyps: list[ConditionFeatures], path,
                     labels: list[str] | None = None, hop_seconds: float = 0.01,
                     title: str | None = None) -> Path:
    """Reference and hypothesis F0 over time; unvoiced frames left blank."""
    labels = labels or [f"hyp{i + 1}" if i else "hyp" for i in range(len(hyps))]
    t = np.arange(len(ref)) * hop_seconds
    fig, ax = plt.subplots(figsize=(9, 3.2))
    ax.plot(t, _voiced_line(ref), color="black", lw=2.0, label="reference")
    for track, label in zip(hyps, labels):
        ax.plot(t, _voiced_line(track), lw=1.2, label=label)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("F0 [Hz]")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper right", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def plot_mels(mels: dict[str, np.ndarray], path) -> Path:
    """One panel per named (N, L) mel, stacked vertically."""
    fig, axes = plt.subplots(len(mels), 1, figsize=(9, 1.9 * len(mels)), squeeze=False)
    for ax, (name, mel) in zip(axes[:, 0], mels.items()):
        ax.imshow(mel, origin="lower", aspect="auto", vmin=0.0, vmax=1.0, cmap="magma",
                  interpolation="nearest")
        ax.set_ylabel(name)
        ax.set_yticks([])
    axes[-1, 0].set_xlabel("frame")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def plot_losses(rows: list[dict], path, keys=("L_G", "L_mg", "L_mp", "L_adv", "L_dis")) -> Path:
    steps = [r["step"] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for k in keys:
        ax.plot(steps, [r[k] for r in rows], lw=1.0, label=k)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)
