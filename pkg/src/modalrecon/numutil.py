"""Shared numeric helpers: oscillatory moments, quadrature weights, cubics.

The oscillatory moments phi_j(theta) = int_0^1 tau^j exp(i theta tau) dtau
are the one primitive behind both the per-mode Duhamel integrals and the
exact piecewise-polynomial assembly of observation matrices.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

# series/recursion split for the oscillatory moments; series needs ~45 terms
# at |theta| = 8, and the forward recursion is stable once |theta| >= jmax
_OSC_SPLIT = 8.0
_OSC_TERMS = 48


def osc_moments(theta, jmax):
    """Moments phi_j(theta) = int_0^1 tau^j e^(i theta tau) dtau, j = 0..jmax.

    Parameters
    ----------
    theta : array_like of float
    jmax : int, at most 8 (forward recursion stability bound)

    Returns
    -------
    complex ndarray of shape (jmax + 1,) + theta.shape
    """
    if jmax > 8:
        raise ValueError("osc_moments: jmax > 8 not supported")
    th = np.asarray(theta, dtype=float)
    out = np.empty((jmax + 1,) + th.shape, dtype=complex)

    small = np.abs(th) < _OSC_SPLIT
    if small.any():
        ts = th[small]
        acc = np.zeros((jmax + 1,) + ts.shape, dtype=complex)
        term = np.ones_like(ts, dtype=complex)  # (i theta)^m / m!
        for m in range(_OSC_TERMS):
            for j in range(jmax + 1):
                acc[j] += term / (m + j + 1)
            term = term * (1j * ts) / (m + 1)
        out[:, small] = acc
    if (~small).any():
        tb = th[~small]
        eith = np.exp(1j * tb)
        acc = np.empty((jmax + 1,) + tb.shape, dtype=complex)
        acc[0] = (eith - 1.0) / (1j * tb)
        for j in range(1, jmax + 1):
            acc[j] = (eith - j * acc[j - 1]) / (1j * tb)
        out[:, ~small] = acc
    return out


def simpson_weights(n_nodes, dt):
    """Composite Simpson weights on a uniform grid (3/8 patch for odd panels).

    All weights are strictly positive, so quadratic forms assembled with them
    stay positive semidefinite.
    """
    m = n_nodes - 1
    if m < 0:
        raise ValueError("simpson_weights: need at least one node")
    w = np.zeros(n_nodes)
    if m == 0:
        return w
    if m == 1:
        w[:] = 0.5 * dt
        return w
    if m % 2 == 0:
        w[0] = w[-1] = 1.0
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        return w * (dt / 3.0)
    # odd panel count: Simpson on the first m - 3, then the 3/8 rule
    if m == 3:
        return np.array([3.0, 9.0, 9.0, 3.0]) * (dt / 8.0)
    head = simpson_weights(n_nodes - 3, dt)
    w[: n_nodes - 3] = head
    w[n_nodes - 4 :] += np.array([3.0, 9.0, 9.0, 3.0]) * (dt / 8.0)
    return w


@lru_cache(maxsize=None)
def _panel_rule(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def composite_gauss_nodes(t0, t1, n_min, panel_size=24):
    """Composite Gauss-Legendre rule on [t0, t1] with at least n_min nodes.

    Realized as ceil(n_min / panel_size) equal panels of panel_size nodes
    each; large single-panel rules are avoided because node generation cost
    grows badly with the order.
    """
    panels = max(1, int(np.ceil(n_min / panel_size)))
    x, w = _panel_rule(panel_size)
    h = (t1 - t0) / panels
    starts = t0 + h * np.arange(panels)
    nodes = (starts[:, None] + 0.5 * h * (x + 1.0)[None, :]).ravel()
    weights = np.tile(0.5 * h * w, panels)
    return nodes, weights


# Lagrange-to-monomial matrices for a 4-point stencil whose interval of
# interest is panel d of the stencil (d = 0 left edge, 1 interior, 2 right)
def _stencil_matrix(d, order):
    pts = np.arange(order + 1, dtype=float) - d
    v = np.vander(pts, increasing=True)
    return np.linalg.inv(v)


_CUBIC = [_stencil_matrix(d, 3) for d in range(3)]
_QUAD = [_stencil_matrix(d, 2) for d in range(2)]


def piecewise_cubic_coeffs(y):
    """Per-interval cubic coefficients for uniform samples.

    Parameters
    ----------
    y : ndarray (m + 1, ...) of samples on a uniform grid

    Returns
    -------
    ndarray (m, 4, ...): coefficients c with
    y(t_i + tau dt) ~= sum_j c[i, j] tau^j for tau in [0, 1].
    Falls back to the exact lower-degree interpolant when fewer than four
    samples exist.
    """
    y = np.asarray(y)
    m = y.shape[0] - 1
    coeffs = np.zeros((m, 4) + y.shape[1:], dtype=y.dtype)
    if m < 1:
        raise ValueError("piecewise_cubic_coeffs: need at least two samples")
    if m == 1:
        coeffs[0, 0] = y[0]
        coeffs[0, 1] = y[1] - y[0]
        return coeffs
    if m == 2:
        for i in range(2):
            c = np.einsum("dr,r...->d...", _QUAD[i], y)
            coeffs[i, :3] = c
        return coeffs
    idx = np.clip(np.arange(m) - 1, 0, m - 3)
    windows = y[idx[:, None] + np.arange(4)[None, :]]  # (m, 4, ...)
    coeffs[:] = np.einsum("dr,ir...->id...", _CUBIC[1], windows)
    coeffs[0] = np.einsum("dr,r...->d...", _CUBIC[0], y[:4])
    coeffs[-1] = np.einsum("dr,r...->d...", _CUBIC[2], y[-4:])
    return coeffs


def eval_piecewise(coeffs, tau):
    """Evaluate piecewise polynomial coefficients at one local offset tau."""
    out = coeffs[:, -1].copy()
    for j in range(coeffs.shape[1] - 2, -1, -1):
        out = out * tau + coeffs[:, j]
    return out


def seeded_rng(seed):
    """The package PRNG: PCG64 behind numpy's Generator, seeded explicitly."""
    return np.random.Generator(np.random.PCG64(seed))
