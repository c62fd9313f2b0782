"""Figure rendering for the CLI report paths.

Matplotlib is imported lazily with the Agg backend so headless runs work
and library users who never plot pay nothing. Figures are a convenience
layer over the CSV output, never the only copy of a number.
"""

from __future__ import annotations

import math
import os
import threading

import numpy as np

_META = {"Software": "modalrecon"}

# pyplot's figure registry and the mathtext parser are not thread-safe;
# sweep workers render under this lock (figure time is negligible anyway)
_RENDER_LOCK = threading.Lock()


def _plt():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, dpi=110, metadata=_META)
    import matplotlib.pyplot as plt

    plt.close(fig)
    return path


def _serialized(fn):
    import functools

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with _RENDER_LOCK:
            return fn(*args, **kwargs)

    return wrapper


@_serialized
def energy_figure(path, times, energies, norms):
    plt = _plt()
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    ax1.plot(times, energies, lw=1.2)
    ax1.set_ylabel("energy")
    e0 = energies[0]
    if e0 != 0.0:
        drift = (np.asarray(energies) - e0) / abs(e0)
        ax1.set_title(f"max relative drift {np.abs(drift).max():.2e}")
    ax2.plot(times, norms, lw=1.2, color="tab:orange")
    ax2.set_ylabel("X^sigma norm")
    ax2.set_xlabel("time")
    fig.tight_layout()
    return _save(fig, path)


@_serialized
def contraction_figure(path, profile):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    if profile:
        ax.semilogy(np.arange(1, len(profile) + 1), profile, "o-")
        ax.axhline(1.0, color="crimson", lw=0.8, ls="--")
    ax.set_xlabel("iteration")
    ax.set_ylabel("successive-difference ratio")
    fig.tight_layout()
    return _save(fig, path)


@_serialized
def spectrum_figure(path, eigenvalues):
    plt = _plt()
    vals = np.sort(np.asarray(eigenvalues, dtype=float))[::-1]
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.semilogy(np.arange(1, vals.size + 1), np.maximum(vals, 1e-300), "s-")
    ax.set_xlabel("index")
    ax.set_ylabel("Gramian eigenvalue")
    fig.tight_layout()
    return _save(fig, path)


@_serialized
def analyticity_figure(path, reports):
    """Scaled derivative norms with the fitted decay line, one panel per
    report (global and localized share the figure when both are given)."""
    plt = _plt()
    fig, axes = plt.subplots(1, len(reports), figsize=(5.0 * len(reports), 3.6),
                             squeeze=False)
    for ax, rep in zip(axes[0], reports):
        K = rep.K
        js = np.arange(K + 1)
        lg = np.array([math.lgamma(j + 1) for j in js])
        nu = np.asarray(rep.derivative_norms) * np.exp(-lg)
        pos = nu > 0
        ax.semilogy(js[pos], nu[pos], "o", ms=4)
        if math.isfinite(rep.radius_estimate) and rep.radius_estimate > 0:
            jfit = np.arange(K // 2, K + 1)
            anchor = nu[K // 2] if nu[K // 2] > 0 else 1.0
            ax.semilogy(jfit, anchor * rep.radius_estimate **
                        -(jfit - K // 2.0), "-", lw=1.0)
        label = "localized" if rep.localized else "global"
        ax.set_title(f"{label}: radius {rep.radius_estimate:.3g}, "
                     f"fit {rep.fit_quality:.3f}")
        ax.set_xlabel("derivative order")
        ax.set_ylabel("norm / factorial")
    fig.tight_layout()
    return _save(fig, path)


@_serialized
def sweep_figure(path, values, profiles, label):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for val, prof in zip(values, profiles):
        if prof:
            ax.semilogy(np.arange(1, len(prof) + 1), prof, "o-",
                        label=f"{label}={val:g}")
    ax.axhline(1.0, color="crimson", lw=0.8, ls="--")
    ax.set_xlabel("iteration")
    ax.set_ylabel("successive-difference ratio")
    if values:
        ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


@_serialized
def commutator_figure(path, resolutions, table):
    """table: {s_exponent: [norm per resolution]}"""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for s, vals in table.items():
        ax.plot(resolutions, vals, "o-", label=f"s={s:g}")
    ax.set_xlabel("modes")
    ax.set_ylabel("commutator norm")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)
