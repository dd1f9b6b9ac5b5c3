"""Figures written next to the CSV reports of the command-line tools.

Figures are drawn on bare :class:`matplotlib.figure.Figure` objects, so no
global backend is selected and nothing is shown interactively.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence, Union

import numpy as np
from matplotlib.figure import Figure

__all__ = [
    "plot_fbm_path",
    "plot_error_series",
    "plot_scaling",
    "plot_scaling_check",
    "plot_moments",
]

PathLike = Union[str, Path]
_METADATA = {"Software": None}


def _save(fig: Figure, dest: PathLike) -> Path:
    dest = Path(dest)
    fig.tight_layout()
    fig.savefig(dest, dpi=120, metadata=_METADATA)
    return dest


def plot_fbm_path(times: np.ndarray, values: np.ndarray, hurst: float, dest: PathLike) -> Path:
    fig = Figure(figsize=(6.0, 3.2))
    ax = fig.subplots()
    ax.plot(times, values, lw=0.8, color="tab:blue")
    ax.set_xlabel("t")
    ax.set_ylabel("B(t)")
    ax.set_title(f"fBm sample path, H = {hurst:g}")
    return _save(fig, dest)


def plot_error_series(times: np.ndarray, full: np.ndarray, first: np.ndarray, eps: float,
                      dest: PathLike) -> Path:
    fig = Figure(figsize=(6.0, 3.6))
    ax = fig.subplots()
    ax.semilogy(times, np.maximum(first, 1e-300), lw=0.8, label="|u - eps a|")
    ax.semilogy(times, np.maximum(full, 1e-300), lw=0.8, label="|u - psi|")
    ax.set_xlabel("fast time t")
    ax.set_ylabel("error")
    ax.set_title(f"approximation error, eps = {eps:g}")
    ax.legend(frameon=False)
    return _save(fig, dest)


def plot_scaling(eps: np.ndarray, median: np.ndarray, q10: np.ndarray, q90: np.ndarray,
                 slope: float, gamma: float, dest: PathLike,
                 first_median: Sequence[float] = None) -> Path:
    fig = Figure(figsize=(5.2, 4.0))
    ax = fig.subplots()
    eps = np.asarray(eps)
    ax.fill_between(eps, q10, q90, color="tab:blue", alpha=0.2, lw=0)
    ax.loglog(eps, median, "o-", color="tab:blue", label=f"median, slope {slope:.2f}")
    ref = median[-1] * (eps / eps[-1]) ** gamma
    ax.loglog(eps, ref, "k--", lw=0.8, label=f"eps^{gamma:.3g}")
    if first_median is not None:
        ax.loglog(eps, first_median, "s:", color="tab:orange", label="first-order only")
    ax.set_xlabel("eps")
    ax.set_ylabel("sup error")
    ax.legend(frameon=False)
    return _save(fig, dest)


def plot_scaling_check(eps: np.ndarray, ratios: np.ndarray, name: str, exponent: float,
               dest: PathLike) -> Path:
    fig = Figure(figsize=(5.2, 3.6))
    ax = fig.subplots()
    ax.semilogx(eps, ratios, "o-")
    med = float(np.median(ratios))
    ax.axhline(med, color="k", lw=0.6, ls=":")
    ax.set_xlabel("eps")
    ax.set_ylabel(f"norm / eps^{exponent:.3g}")
    ax.set_title(f"{name}: ratio across eps")
    return _save(fig, dest)


def plot_moments(times: np.ndarray, estimates: np.ndarray, stderr: np.ndarray,
                 exact: np.ndarray, dest: PathLike) -> Path:
    fig = Figure(figsize=(5.2, 3.6))
    ax = fig.subplots()
    ax.errorbar(times, estimates, yerr=3 * stderr, fmt="o", capsize=3, label="Monte Carlo")
    ax.plot(times, exact, "k.--", lw=0.8, label="exact (discretised)")
    ax.set_xlabel("t")
    ax.set_ylabel("E Y(t)^2")
    ax.legend(frameon=False)
    return _save(fig, dest)
