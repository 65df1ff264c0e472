"""PNG figures written next to the CSV outputs of the CLI."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .volume import Volume, mip  # noqa: E402

DPI = 120


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def plot_trace(trace, path, title: str = "") -> None:
    """I-divergence (log scale) and flux against iteration."""
    rows = np.asarray(trace, dtype=np.float64).reshape(-1, 3)
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(5, 5), sharex=True)
    idiv = rows[:, 1]
    if np.all(idiv > 0):
        ax0.semilogy(rows[:, 0], idiv, lw=1.2)
    else:
        ax0.plot(rows[:, 0], idiv, lw=1.2)
    ax0.set_ylabel("I-divergence")
    ax1.plot(rows[:, 0], rows[:, 2], lw=1.2, color="C1")
    ax1.set_ylabel("flux")
    ax1.set_xlabel("iteration")
    if title:
        ax0.set_title(title)
    _save(fig, path)


def plot_profiles(profiles: dict, path, xlabel: str = "position (um)") -> None:
    """Overlay of named 1D profiles, each scaled to unit peak."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for name, (x, y) in profiles.items():
        y = np.asarray(y, dtype=np.float64)
        top = y.max()
        ax.plot(x, y / top if top > 0 else y, lw=1.2, label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("normalized intensity")
    ax.legend(frameon=False, fontsize=8)
    _save(fig, path)


def plot_mips(volumes: dict, path) -> None:
    """Grid of MIPs along z (rows: volumes)."""
    n = len(volumes)
    fig, axes = plt.subplots(n, 3, figsize=(7, 2.3 * n), squeeze=False)
    for row, (name, v) in zip(axes, volumes.items()):
        for ax, axis in zip(row, "xyz"):
            ax.imshow(mip(v, axis).T, origin="lower", cmap="gray")
            ax.set_xticks([])
            ax.set_yticks([])
            ax.set_title(f"{name}, MIP {axis}", fontsize=8)
    _save(fig, path)


def plot_volume_mips(v: Volume, path, title: str = "") -> None:
    plot_mips({title or "volume": v}, path)
