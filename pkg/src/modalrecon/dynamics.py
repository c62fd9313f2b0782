"""Flows of the truncated models: linear, forced, nonlinear, linearized.

The evolution convention everywhere is dU/dt = A U + F(U) with

* wave/plate: F(U) = (0, -f(u)), matching u_tt + (elliptic) u + f(u) = 0,
* nls:        F(u) = -i f(u),    matching i u_t + u_xx = f(u),

so a defocusing f pushes energy back toward zero in both readings. In phasor
coordinates both cases collapse to the same formula: the phasor of F is
-i times the modal coefficients of f evaluated at the current field.

All nonlinear terms are evaluated pointwise on the model grid and projected
back by quadrature; build_model guarantees that projection is alias-free up
to dealias_capacity(model), and the evaluators refuse to run past it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import BlowupError
from .numutil import eval_piecewise, osc_moments, piecewise_cubic_coeffs
from .spectral import (
    State,
    coords_from_phasors,
    dealias_capacity,
    phasor_array,
    phasors,
    state_from_phasors,
)

_CHUNK = 4096  # interval chunk for memory-bounded sweeps over long grids


@dataclass(frozen=True)
class Nonlinearity:
    """Polynomial nonlinearity data.

    coefficients[j] is the coefficient of degree j + 1: for wave/plate these
    define f(u) = sum c_j u^j directly; for nls they define the real
    potential polynomial P(r) = sum p_m r^m and f(u) = P'(|u|^2) u. The
    constant term is structurally zero in both readings (f(0) = 0, P(0) = 0).

    defocusing_gamma, when set, asserts s f(s) >= gamma s^2; the numerical
    check lives in verify_defocusing because the reading of the coefficients
    depends on the model variant.
    """

    coefficients: tuple = ()
    defocusing_gamma: float = None

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coefficients)
        while coeffs and coeffs[-1] == 0.0:
            coeffs = coeffs[:-1]
        object.__setattr__(self, "coefficients", coeffs)
        if self.defocusing_gamma is not None:
            g = float(self.defocusing_gamma)
            if g < 0.0:
                raise ValueError("defocusing_gamma must be nonnegative")
            object.__setattr__(self, "defocusing_gamma", g)

    @property
    def is_zero(self):
        return not self.coefficients

    def degree(self, variant):
        """Polynomial degree of the field map u -> f(u)."""
        if self.is_zero:
            return 0
        if variant == "nls":
            return 2 * len(self.coefficients) - 1
        return len(self.coefficients)

    # padded coefficient arrays for numpy polyval
    @cached_property
    def _f_coeffs(self):
        return np.array((0.0,) + self.coefficients)

    @cached_property
    def _fprime_coeffs(self):
        return npoly.polyder(self._f_coeffs)

    @cached_property
    def _V_coeffs(self):
        return npoly.polyint(self._f_coeffs)

    @cached_property
    def _P_coeffs(self):
        return np.array((0.0,) + self.coefficients)

    @cached_property
    def _Pprime_coeffs(self):
        return npoly.polyder(self._P_coeffs)

    @cached_property
    def _Psecond_coeffs(self):
        return npoly.polyder(self._P_coeffs, 2)

    def f_vals(self, u):
        return npoly.polyval(u, self._f_coeffs)

    def fprime_vals(self, u):
        return npoly.polyval(u, self._fprime_coeffs)

    def V_vals(self, u):
        return npoly.polyval(u, self._V_coeffs)

    def P_vals(self, r):
        return npoly.polyval(r, self._P_coeffs)

    def Pprime_vals(self, r):
        return npoly.polyval(r, self._Pprime_coeffs)

    def Psecond_vals(self, r):
        return npoly.polyval(r, self._Psecond_coeffs)


def verify_defocusing(model, nl, radius=10.0, samples=401):
    """Check s f(s) >= gamma s^2 on a sample grid; raise if violated.

    Interpreted through the model: for nls the scalar section is
    f(s) = P'(s^2) s. No-op when defocusing_gamma is unset.
    """
    if nl.defocusing_gamma is None:
        return
    s = np.linspace(-radius, radius, samples)
    if model.kind.variant == "nls":
        sf = nl.Pprime_vals(s**2) * s**2
    else:
        sf = s * nl.f_vals(s)
    slack = sf - nl.defocusing_gamma * s**2
    tol = -1e-9 * np.maximum(1.0, s**2)
    if (slack < tol).any():
        worst = s[np.argmin(slack)]
        raise ValueError(
            f"nonlinearity violates the defocusing bound near s = {worst:.4g}"
        )


def _check_dealias(model, nl):
    deg = nl.degree(model.kind.variant)
    cap = dealias_capacity(model)
    if deg > cap:
        raise ValueError(
            f"dealiasing grid too small: degree {deg} nonlinearity needs more "
            f"than the current capacity {cap}; raise grid_size"
        )


@dataclass(eq=False)
class Trajectory:
    """States sampled on a uniform time grid.

    coeffs has shape (n_nodes, 2, N) in State coordinate convention.
    """

    model: object
    times: np.ndarray
    coeffs: np.ndarray
    integrator_tag: str
    step_size: float
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (t.shape[0], 2, self.model.n_modes):
            raise ValueError("coeffs shape does not match times/model")
        if t.shape[0] >= 2:
            steps = np.diff(t)
            if np.abs(steps - steps[0]).max() > 1e-9 * max(abs(steps[0]), 1e-300):
                raise ValueError("trajectory time grid must be uniform")
        self.times = t
        self.coeffs = c

    def __len__(self):
        return self.times.shape[0]

    @property
    def duration(self):
        return float(self.times[-1] - self.times[0])

    def state(self, i):
        return State(self.model, self.coeffs[i].copy())

    def final(self):
        return self.state(len(self) - 1)

    def phasor_series(self):
        return phasor_array(self.model, self.coeffs)

    @classmethod
    def from_phasor_series(cls, model, times, zseries, tag, dt):
        return cls(model, np.asarray(times, float),
                   coords_from_phasors(model, zseries), tag, float(dt))


def linear_propagate(model, s, t):
    """exp(tA) s: exact per-mode phase rotation."""
    z = phasors(s) * np.exp(-1j * model.mode_frequencies * t)
    return state_from_phasors(model, z)


def nonlinear_phasor_batch(model, nl, coeffs):
    """Phasors of F evaluated at a batch of states.

    Parameters
    ----------
    coeffs : ndarray (..., 2, N)

    Returns
    -------
    complex ndarray (..., N): -i times the modal coefficients of f.
    """
    if nl.is_zero:
        return np.zeros(coeffs.shape[:-2] + coeffs.shape[-1:], dtype=complex)
    _check_dealias(model, nl)
    table = model.eigenfunction_table
    w = model.weights
    if model.kind.variant == "nls":
        u = (coeffs[..., 0, :] + 1j * coeffs[..., 1, :]) @ table
        fg = nl.Pprime_vals(np.abs(u) ** 2) * u
        return -1j * ((fg * w) @ table.T)
    ug = coeffs[..., 0, :] @ table
    fg = nl.f_vals(ug)
    return -1j * ((fg * w) @ table.T)


def apply_F(model, nl, s):
    """The nonlinear term of dU/dt = A U + F(U), as a State."""
    zf = nonlinear_phasor_batch(model, nl, s.coords[None])[0]
    return state_from_phasors(model, zf)


def apply_DF(model, nl, base, direction):
    """Derivative of F at base applied to direction (real-linear for nls)."""
    frozen = FrozenDerivative(model, nl, base.coords)
    zout = frozen.apply(phasors(direction)[:, None])[:, 0]
    return state_from_phasors(model, zout)


class FrozenDerivative:
    """DF at one frozen base state, applied to batches of phasor columns."""

    def __init__(self, model, nl, base_coords):
        self.model = model
        self.nl = nl
        self.zero = nl.is_zero
        if self.zero:
            return
        _check_dealias(model, nl)
        table = model.eigenfunction_table
        if model.kind.variant == "nls":
            u = (base_coords[0] + 1j * base_coords[1]) @ table
            r = np.abs(u) ** 2
            self._u = u
            self._pp = nl.Pprime_vals(r)
            self._ppp2 = 2.0 * nl.Psecond_vals(r)
        else:
            ug = base_coords[0] @ table
            self._fp = nl.fprime_vals(ug)

    def apply(self, zcols):
        """Phasors of DF(base)[w] for w given as phasor columns (N, C)."""
        if self.zero:
            return np.zeros_like(zcols, dtype=complex)
        model = self.model
        table = model.eigenfunction_table
        w = model.weights
        if model.kind.variant == "nls":
            wg = table.T @ zcols  # (M, C) complex field values
            term = self._pp[:, None] * wg + (
                self._ppp2 * self._u
            )[:, None] * (self._u.conj()[:, None] * wg).real
            return -1j * (table @ (w[:, None] * term))
        # wave/plate: direction field is Re z / mu
        ufield = table.T @ (zcols.real / model.component_scale[:, None])
        term = self._fp[:, None] * ufield
        return -1j * (table @ (w[:, None] * term))


def nonlinear_solve(model, nl, s0, T, dt, store_every=1, norm_ceiling=1e6):
    """Integrate dU/dt = A U + F(U) by Strang splitting.

    The linear half-steps are exact rotations. The wave/plate kick is exact
    (the velocity kick leaves the field component untouched, so f is frozen
    during it). The nls kick integrates the truncated system dz/dt =
    -i P_N(P'(|u|^2) u) by implicit midpoint, iterated to round-off; the
    pointwise phase rotation of split-step folklore is exact only for the
    untruncated grid dynamics and its projection defect would cost an order
    here. Implicit midpoint is symmetric and conserves the quadratic mass
    exactly, so both properties survive at the step level. Second order in
    dt overall. Raises BlowupError when the energy norm passes norm_ceiling.

    store_every thins the stored trajectory; it must divide the step count.
    """
    if T <= 0.0 or dt <= 0.0:
        raise ValueError("T and dt must be positive")
    n_steps = max(1, round(T / dt))
    dt_eff = T / n_steps
    if n_steps % store_every:
        raise ValueError("store_every must divide the number of steps")
    _check_dealias(model, nl)

    mu = model.mode_frequencies
    half = np.exp(-1j * mu * (0.5 * dt_eff))
    table = model.eigenfunction_table
    wq = model.weights
    scale = model.component_scale
    variant = model.kind.variant

    z = phasors(s0).astype(complex)
    n_out = n_steps // store_every
    out = np.empty((n_out + 1, model.n_modes), dtype=complex)
    out[0] = z
    times = np.empty(n_out + 1)
    times[0] = 0.0

    for step in range(1, n_steps + 1):
        z = z * half
        if not nl.is_zero:
            if variant == "nls":

                def rhs(y):
                    ug = y @ table
                    return -1j * (table @ (wq * (nl.Pprime_vals(np.abs(ug) ** 2) * ug)))

                # implicit midpoint: y = z + dt/2 rhs(y), z <- 2y - z
                y = z + (0.5 * dt_eff) * rhs(z)
                for _ in range(12):
                    ynew = z + (0.5 * dt_eff) * rhs(y)
                    delta = np.abs(ynew - y).max()
                    y = ynew
                    if delta <= 1e-15 * max(1.0, np.abs(y).max()):
                        break
                z = 2.0 * y - z
            else:
                ug = (z.real / scale) @ table
                z = z - 1j * dt_eff * (table @ (wq * nl.f_vals(ug)))
        z = z * half
        nrm = math.sqrt(float(np.sum(z.real**2 + z.imag**2)))
        if not np.isfinite(nrm) or nrm > norm_ceiling:
            t_fail = step * dt_eff
            raise BlowupError(
                f"energy norm {nrm:.3e} exceeded ceiling at t = {t_fail:.6g}",
                time_of_failure=t_fail,
                norm_value=nrm,
            )
        if step % store_every == 0:
            j = step // store_every
            out[j] = z
            times[j] = step * dt_eff

    tag = f"strang dt={dt_eff:.12g} store_every={store_every}"
    return Trajectory.from_phasor_series(model, times, out, tag, dt_eff * store_every)


def duhamel_integrate(model, w0, source):
    """Solve dW/dt = A W + H from samples of H, exactly per mode.

    H is given as a Trajectory on a uniform grid; each modal component is
    replaced by its piecewise-cubic interpolant and the oscillatory integrals
    int e^(i mu s) H(s) ds are evaluated in closed form, giving fourth-order
    accuracy in the grid spacing. w0 = None means a zero initial state.
    """
    times = source.times
    n_nodes = times.shape[0]
    mu = model.mode_frequencies
    z0 = np.zeros(model.n_modes, complex) if w0 is None else phasors(w0)
    if n_nodes == 1:
        return Trajectory.from_phasor_series(
            model, times.copy(), z0[None].copy(), "duhamel-pc4", 0.0
        )
    dt = float(times[1] - times[0])
    h = source.phasor_series()  # (n_nodes, N)
    theta = mu * dt
    phi = osc_moments(theta, 3)  # (4, N)

    m = n_nodes - 1
    contrib = np.empty((m, model.n_modes), dtype=complex)
    for i0 in range(0, m, _CHUNK):
        i1 = min(m, i0 + _CHUNK)
        s0 = max(0, i0 - 1)
        s1 = min(n_nodes, i1 + 2)
        coeffs = piecewise_cubic_coeffs(h[s0:s1])[i0 - s0 : i1 - s0]
        tloc = times[i0:i1] - times[0]
        osc = np.exp(1j * np.outer(tloc, mu))
        block = np.einsum("ijn,jn->in", coeffs, phi)
        contrib[i0:i1] = dt * osc * block
    acc = np.cumsum(contrib, axis=0)
    zs = np.empty((n_nodes, model.n_modes), dtype=complex)
    zs[0] = z0
    back = np.exp(-1j * np.outer(times[1:] - times[0], mu))
    zs[1:] = back * (z0[None, :] + acc)
    return Trajectory.from_phasor_series(model, times.copy(), zs, "duhamel-pc4", dt)


def propagate_linearized(
    model,
    nl,
    background,
    threshold,
    z0=None,
    source=None,
    substeps=1,
    record_indices=None,
):
    """Propagate dW/dt = A W + Q_n DF(V(t)) W + S(t) along a background V.

    Strang splitting: exact linear rotation around an affine kick whose
    derivative term is frozen at the midpoint background (second order).
    The background Trajectory fixes the step grid; substeps refines the
    internal stepping, with midpoint values of V and S taken from their
    piecewise-cubic interpolants.

    Parameters
    ----------
    z0 : complex (N, C) phasor columns, or None for a zero start
    source : complex (n_nodes, N) phasor samples of S on the grid, or None
    record_indices : node indices to record (None records every node)

    Returns
    -------
    complex (n_recorded, N, C) array (C = 1 when z0 is None).
    """
    times = background.times
    n_nodes = times.shape[0]
    m = n_nodes - 1
    if m < 1:
        raise ValueError("background must span at least one step")
    dt = float(times[1] - times[0]) / substeps
    mu = model.mode_frequencies
    half = np.exp(-1j * mu * (0.5 * dt))
    qmask = (mu > threshold).astype(float)

    ncols = 1 if z0 is None else z0.shape[1]
    z = np.zeros((model.n_modes, ncols), complex) if z0 is None else z0.astype(complex)

    if record_indices is None:
        record_indices = np.arange(n_nodes)
    else:
        record_indices = np.asarray(record_indices, dtype=int)
        if record_indices.size and (
            record_indices.min() < 0 or record_indices.max() >= n_nodes
        ):
            raise ValueError("record_indices out of range for the background grid")
    rec = np.empty((len(record_indices), model.n_modes, ncols), dtype=complex)
    rec_map = {int(i): j for j, i in enumerate(record_indices)}
    if 0 in rec_map:
        rec[rec_map[0]] = z

    taus = (np.arange(substeps) + 0.5) / substeps
    for i0 in range(0, m, _CHUNK):
        i1 = min(m, i0 + _CHUNK)
        s0 = max(0, i0 - 1)
        s1 = min(n_nodes, i1 + 2)
        bg_c = piecewise_cubic_coeffs(background.coeffs[s0:s1])[i0 - s0 : i1 - s0]
        bg_mid = [eval_piecewise(bg_c, t) for t in taus]  # each (chunk, 2, N)
        if source is not None:
            src_c = piecewise_cubic_coeffs(source[s0:s1])[i0 - s0 : i1 - s0]
            src_mid = [eval_piecewise(src_c, t) for t in taus]
        for i in range(i0, i1):
            for j in range(substeps):
                frozen = FrozenDerivative(model, nl, bg_mid[j][i - i0])
                z = z * half[:, None]
                k1 = qmask[:, None] * frozen.apply(z)
                if source is not None:
                    k1 = k1 + src_mid[j][i - i0][:, None]
                z = z + dt * k1 + (0.5 * dt * dt) * (
                    qmask[:, None] * frozen.apply(k1)
                )
                z = z * half[:, None]
            if (i + 1) in rec_map:
                rec[rec_map[i + 1]] = z
    return rec


def taylor_jet(model, nl, s, K):
    """Scaled time derivatives A_j = D_j / j! of the flow through s.

    D_0 = s and D_(j+1) = A D_j + (d/dt)^j F(U(t)) at t = 0, evaluated by
    truncated power-series composition on the dealiased grid. Working with
    the factorial-scaled coefficients keeps every intermediate in range even
    at K = 40.

    Returns a list of K + 1 States.
    """
    if K < 0:
        raise ValueError("K must be nonnegative")
    if not nl.is_zero:
        _check_dealias(model, nl)
    table = model.eigenfunction_table
    wq = model.weights
    mu = model.mode_frequencies
    variant = model.kind.variant

    if variant == "nls":
        lam = model.eigenvalues
        z = [phasors(s)]
        g = [z[0] @ table]  # complex grid series of u
        coeffs = nl._P_coeffs if not nl.is_zero else np.array([0.0])
        degp = max(len(coeffs) - 1, 0)
        r = []  # series of |u|^2
        rp = [None] * (degp + 1)  # powers of r as series lists
        for j in range(K):
            if not nl.is_zero:
                r.append(
                    sum(g[i] * np.conj(g[j - i]) for i in range(j + 1)).real
                )
                if degp >= 1:
                    rp[1] = r
                for p in range(2, degp):
                    # extend the r^p series to order j
                    val = sum(rp[p - 1][i] * r[j - i] for i in range(j + 1))
                    if rp[p] is None:
                        rp[p] = [val]
                    else:
                        rp[p].append(val)
                # P'(r) series coefficient j
                ppj = np.zeros_like(r[0])
                for mdeg in range(1, degp + 1):
                    cm = mdeg * coeffs[mdeg]
                    if cm == 0.0:
                        continue
                    if mdeg == 1:
                        if j == 0:
                            ppj = ppj + cm
                    else:
                        ppj = ppj + cm * rp[mdeg - 1][j]
                if j == 0:
                    pp = [ppj]
                else:
                    pp.append(ppj)
                fj = sum(pp[i] * g[j - i] for i in range(j + 1))
                Fj = -1j * (table @ (wq * fj))
            else:
                Fj = 0.0
            znew = (-1j * lam * z[j] + Fj) / (j + 1)
            z.append(znew)
            g.append(znew @ table)
        return [state_from_phasors(model, zj) for zj in z]

    # wave/plate: real series in (a, b) coordinates
    a = [s.coords[0].copy()]
    b = [s.coords[1].copy()]
    g = [a[0] @ table]
    coeffs = nl._f_coeffs if not nl.is_zero else np.array([0.0])
    deg = max(len(coeffs) - 1, 0)
    upow = [None] * (deg + 1)
    if deg >= 1:
        upow[1] = g
    out = [State(model, np.vstack([a[0], b[0]]))]
    for j in range(K):
        if not nl.is_zero and deg >= 1:
            for p in range(2, deg + 1):
                val = sum(upow[p - 1][i] * g[j - i] for i in range(j + 1))
                if upow[p] is None:
                    upow[p] = [val]
                else:
                    upow[p].append(val)
            fj = np.zeros_like(g[0])
            for p in range(1, deg + 1):
                if coeffs[p] != 0.0:
                    fj = fj + coeffs[p] * upow[p][j]
            phij = -(table @ (wq * fj))
        else:
            phij = 0.0
        anew = b[j] / (j + 1)
        bnew = (-(mu**2) * a[j] + phij) / (j + 1)
        a.append(anew)
        b.append(bnew)
        g.append(anew @ table)
        out.append(State(model, np.vstack([anew, bnew])))
    return out


def time_derivatives(model, nl, s, K):
    """Unscaled derivatives D_j = (d/dt)^j U at t = 0 through s, j = 0..K."""
    jet = taylor_jet(model, nl, s, K)
    fact = 1.0
    out = []
    for j, st in enumerate(jet):
        if j > 0:
            fact *= j
        out.append(State(model, st.coords * fact))
    return out
