"""Matplotlib figures written next to the CSV output."""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


MARKERS = {"hotml": "o", "deephotml": "s", "ml": "*", "zf": "v", "box": "^", "fixed": "x"}


def plot_ber(rows, path: str | Path, title: str | None = None) -> Path:
    """BER-vs-SNR curves, one line per detector; zero-BER points are dropped from the log axis."""
    plt = _pyplot()
    curves = defaultdict(list)
    for r in rows:
        curves[r.detector].append((r.snr_db, r.ber))
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    for name, pts in curves.items():
        pts.sort()
        snr = np.array([p[0] for p in pts])
        ber = np.array([p[1] for p in pts])
        keep = ber > 0
        ax.semilogy(snr[keep], ber[keep], marker=MARKERS.get(name, "."), label=name)
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("BER")
    if title is None and rows:
        title = f"M = {rows[0].M}, N = {rows[0].N}"
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_training(losses: np.ndarray, path: str | Path, window: int = 50) -> Path:
    plt = _pyplot()
    losses = np.asarray(losses)
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    ax.plot(losses, lw=0.5, alpha=0.4, label="per batch")
    if len(losses) >= window:
        smooth = np.convolve(losses, np.ones(window) / window, mode="valid")
        ax.plot(np.arange(window - 1, len(losses)), smooth, lw=1.5, label=f"{window}-iter mean")
    ax.set_yscale("log")
    ax.set_xlabel("training iteration")
    ax.set_ylabel("loss per sample")
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_dual(lambdas: np.ndarray, values: np.ndarray, f_star: float, path: str | Path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    ax.plot(lambdas, values, label="d(lambda)")
    ax.axhline(f_star, color="k", ls="--", lw=1, label="f*")
    ax.set_xlabel("lambda")
    ax.set_ylabel("dual value")
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
