"""Observation operators, observability Gramians, and control-time formulas.

The cutoff profile is stored as a list of polynomial pieces (plateaus and
quintic smoothstep ramps), so every modal matrix entry <e_j, b e_k> is a sum
of closed-form integrals of polynomial times complex exponential. Building B
this way keeps it exact to rounding even for the sharp indicator, where grid
quadrature would be badly wrong near the jump.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numutil import composite_gauss_nodes, osc_moments, simpson_weights
from .spectral import SobolevScale, State, basis_exp_terms, phasors

# quintic smoothstep: C^2, q(0)=0, q(1)=1, q(1-t) = 1-q(t)
_RAMP_UP = np.array([0.0, 0.0, 0.0, 10.0, -15.0, 6.0])
_RAMP_DOWN = np.array([1.0, 0.0, 0.0, -10.0, 15.0, -6.0])

_RANK_THRESHOLD = 1e-12


def _merge_intervals(omega, length, cyclic):
    """Normalize to sorted disjoint intervals, merging touching closures.

    On the circle a pair touching across 0/L is merged by rotation into a
    single interval that may be reported split at the seam; gap logic in
    gcc_time handles the cyclic wrap itself, so here merging at the seam is
    only about not double-counting plateaus, and keeping the two pieces is
    harmless.
    """
    ivs = []
    for pair in omega:
        a, b = float(pair[0]), float(pair[1])
        if not (0.0 <= a < b <= length):
            raise ValueError(
                f"observation interval ({a}, {b}) not inside (0, {length})"
            )
        ivs.append((a, b))
    ivs.sort()
    merged = []
    for a, b in ivs:
        if merged and a < merged[-1][1]:
            raise ValueError("observation intervals must be disjoint")
        if merged and a == merged[-1][1]:
            merged[-1] = (merged[-1][0], b)
        else:
            merged.append((a, b))
    del cyclic  # seam-touching arcs stay split; see docstring
    return merged


def _affine_sub(coeffs, alpha, beta):
    """Coefficients of p(alpha + beta x) from those of p(x)."""
    p = np.polynomial.Polynomial(coeffs)
    q = p(np.polynomial.Polynomial([alpha, beta]))
    return np.atleast_1d(q.coef)


def _clip_piece(xs, h, coeffs, lo, hi):
    """Restrict a polynomial piece to [lo, hi]; None if empty."""
    a = max(xs, lo)
    b = min(xs + h, hi)
    if b - a <= 0.0:
        return None
    if a == xs and b == xs + h:
        return (xs, h, coeffs)
    alpha = (a - xs) / h
    beta = (b - a) / h
    return (a, b - a, _affine_sub(coeffs, alpha, beta))


def _profile_pieces(merged, length, smoothing, cyclic):
    """Pieces (x_start, width, poly-in-local-xi) summing to b_omega."""
    raw = []
    for a, b in merged:
        raw.append((a, b - a, np.array([1.0])))
        if smoothing > 0.0:
            raw.append((a - smoothing, smoothing, _RAMP_UP))
            raw.append((b, smoothing, _RAMP_DOWN))
    pieces = []
    for xs, h, coeffs in raw:
        if cyclic:
            # wrap into [0, L), splitting at the seam
            shift = math.floor(xs / length) * length
            xs -= shift
            first = _clip_piece(xs, h, coeffs, 0.0, length)
            if first is not None:
                pieces.append(first)
            if xs + h > length:
                tail = _clip_piece(xs - length, h, coeffs, 0.0, length)
                if tail is not None:
                    pieces.append(tail)
        else:
            clipped = _clip_piece(xs, h, coeffs, 0.0, length)
            if clipped is not None:
                pieces.append(clipped)
    return pieces


def _eval_pieces(pieces, x):
    out = np.zeros_like(x, dtype=float)
    for xs, h, coeffs in pieces:
        xi = (x - xs) / h
        inside = (xi >= 0.0) & (xi <= 1.0)
        out[inside] += np.polynomial.polynomial.polyval(xi[inside], coeffs)
    return out


@dataclass(eq=False)
class ObservationOperator:
    """Multiplication by the cutoff b_omega, read on one State component."""

    model: object
    omega: tuple
    window: float
    smoothing: float
    cutoff_values: np.ndarray
    modal_matrix: np.ndarray
    component: str
    pieces: list = field(repr=False, default_factory=list)

    @property
    def is_sharp(self):
        return self.smoothing == 0.0


def build_observation(model, omega, window, smoothing=0.0):
    """Cutoff operator for the region omega, observed over [0, window].

    omega is a list of disjoint open subintervals of (0, L); smoothing is
    the width of the C^2 ramp glued outside each interval (0 gives the sharp
    indicator). The modal matrix is assembled from closed-form integrals of
    the polynomial pieces against products of eigenfunctions.
    """
    if window <= 0.0:
        raise ValueError("observation window must be positive")
    if smoothing < 0.0:
        raise ValueError("smoothing width must be nonnegative")
    cyclic = model.kind.boundary == "periodic_circle"
    merged = _merge_intervals(omega, model.length, cyclic)
    pieces = _profile_pieces(merged, model.length, smoothing, cyclic)

    n = model.n_modes
    B = np.zeros((n, n))
    if pieces:
        freqs, coefs, modes = [], [], []
        for k in range(n):
            for wnum, cf in basis_exp_terms(model, k):
                freqs.append(wnum)
                coefs.append(cf)
                modes.append(k)
        freqs = np.array(freqs)
        coefs = np.array(coefs)
        modes = np.array(modes)
        omega_sum = freqs[:, None] + freqs[None, :]
        pair_coef = coefs[:, None] * coefs[None, :]
        acc = np.zeros(omega_sum.shape, dtype=complex)
        for xs, h, pc in pieces:
            moments = osc_moments(omega_sum * h, len(pc) - 1)
            integral = h * np.exp(1j * omega_sum * xs) * np.tensordot(
                pc, moments, axes=(0, 0)
            )
            acc += pair_coef * integral
        np.add.at(B, (modes[:, None], modes[None, :]), acc.real)
    B = 0.5 * (B + B.T)  # enforce exact symmetry against rounding

    if n <= 4096:
        eigs = np.linalg.eigvalsh(B)
        if eigs.min() < -1e-10 * max(eigs.max(), 1.0):
            raise ValueError("modal matrix lost positive semidefiniteness")

    values = _eval_pieces(pieces, model.nodes)
    component = "velocity" if model.kind.second_order else "field"
    return ObservationOperator(
        model=model,
        omega=tuple((float(a), float(b)) for a, b in merged),
        window=float(window),
        smoothing=float(smoothing),
        cutoff_values=values,
        modal_matrix=B,
        component=component,
        pieces=pieces,
    )


def observe(obs, s):
    """Apply C: wave/plate read b times the velocity, nls b times the field."""
    model = obs.model
    B = obs.modal_matrix
    if model.kind.second_order:
        out = np.zeros_like(s.coords)
        out[1] = B @ s.coords[1]
        return State(model, out)
    return State(model, np.stack([B @ s.coords[0], B @ s.coords[1]]))


def observed_output_matrix(obs, scale, zrec):
    """Scaled real coordinates of C applied to recorded phasor columns.

    zrec: complex (..., N, C). Returns a real array whose leading axes match,
    with rows r such that <r_a, r_b> is the X^sigma inner product of the
    observed outputs. Second-order variants output only the velocity row
    block; nls outputs both real and imaginary blocks.
    """
    B = obs.modal_matrix
    root_w = np.sqrt(scale.weights)
    if obs.model.kind.second_order:
        out = np.einsum("nm,...mc->...nc", B, zrec.imag)
        return root_w[:, None] * out
    out = np.einsum("nm,...mc->...nc", B, zrec)
    return np.concatenate(
        [root_w[:, None] * out.real, root_w[:, None] * out.imag], axis=-2
    )


@dataclass(eq=False)
class GramianReport:
    """Observability Gramian on a mode subspace, in X^sigma coordinates."""

    subspace: np.ndarray
    matrix: np.ndarray
    min_eig: float
    max_eig: float
    obs_constant: float
    unobservable: bool
    condition_number: float
    quadrature: str

    def as_dict(self):
        return {
            "subspace": [int(k) for k in self.subspace],
            "min_eig": self.min_eig,
            "max_eig": self.max_eig,
            "obs_constant": self.obs_constant,
            "unobservable": self.unobservable,
            "condition_number": self.condition_number,
            "quadrature": self.quadrature,
        }


def _finalize_gramian(sub, G, quadrature, rank_threshold):
    G = 0.5 * (G + G.T)
    eigs = np.linalg.eigvalsh(G)
    min_eig = float(eigs[0])
    max_eig = float(eigs[-1])
    unobservable = min_eig < rank_threshold * max(max_eig, 0.0) or max_eig <= 0.0
    if unobservable:
        obs_constant = math.inf
        cond = math.inf
    else:
        obs_constant = 1.0 / math.sqrt(min_eig)
        cond = max_eig / min_eig
    return GramianReport(
        subspace=np.asarray(sub),
        matrix=G,
        min_eig=min_eig,
        max_eig=max_eig,
        obs_constant=obs_constant,
        unobservable=unobservable,
        condition_number=cond,
        quadrature=quadrature,
    )


def _canonical_subspace(model, subspace):
    sub = np.unique(np.asarray(list(subspace), dtype=int))
    if sub.size == 0:
        raise ValueError("subspace must be nonempty")
    if sub.min() < 0 or sub.max() >= model.n_modes:
        raise ValueError("subspace indices out of range")
    return sub


def default_time_nodes(window, mu_max):
    """8 quadrature nodes per period of the fastest mode, floored at 48."""
    return max(48, math.ceil(8.0 * window * mu_max / (2.0 * math.pi)))


def gramian(model, obs, scale, subspace, n_time_nodes=None, rank_threshold=_RANK_THRESHOLD):
    """Gramian of C e^{tA} over [0, window] on the given mode subspace.

    Time integration is composite Gauss-Legendre. The matrix is expressed in
    coordinates that make the X^sigma norm euclidean, so min_eig directly
    yields the observability constant 1/sqrt(min_eig).
    """
    sub = _canonical_subspace(model, subspace)
    T = obs.window
    mu = model.mode_frequencies
    mu_sub = mu[sub]
    if n_time_nodes is None:
        n_time_nodes = default_time_nodes(T, float(mu_sub.max()))
    t, tau = composite_gauss_nodes(0.0, T, n_time_nodes)

    root_w = np.sqrt(scale.weights)
    P = root_w[:, None] * obs.modal_matrix[:, sub] / root_w[sub][None, :]
    H = P.T @ P
    S = sub.size
    G = np.empty((2 * S, 2 * S))
    if model.kind.second_order:
        # velocity component of e^{tA}: -sin(mu t) Re z + cos(mu t) Im z
        theta = np.outer(t, mu_sub)
        sn, cs = np.sin(theta), np.cos(theta)
        Sss = (tau[:, None] * sn).T @ sn
        Scc = (tau[:, None] * cs).T @ cs
        Ssc = (tau[:, None] * sn).T @ cs
        G[:S, :S] = H * Sss
        G[S:, S:] = H * Scc
        G[:S, S:] = -H * Ssc
        G[S:, :S] = G[:S, S:].T
    else:
        phase = np.exp(1j * np.outer(t, mu_sub[None, :] - mu_sub[:, None]))
        E = np.tensordot(tau, phase, axes=(0, 0))
        K = H * E
        G[:S, :S] = K.real
        G[S:, S:] = K.real
        G[:S, S:] = -K.imag
        G[S:, :S] = K.imag
    quad = f"gauss-legendre composite, {len(t)} nodes on [0, {T:g}]"
    return _finalize_gramian(sub, G, quad, rank_threshold)


def subspace_phasor_basis(model, scale, sub):
    """Phasor columns of the euclidean X^sigma basis on a subspace: (N, 2S)."""
    root_w = np.sqrt(scale.weights[sub])
    z0 = np.zeros((model.n_modes, 2 * sub.size), dtype=complex)
    for j, k in enumerate(sub):
        z0[k, j] = 1.0 / root_w[j]
        z0[k, sub.size + j] = 1.0j / root_w[j]
    return z0


def linearized_gramian(
    model,
    obs,
    scale,
    nl,
    background,
    n,
    subspace,
    substeps=1,
    quad_stride=1,
    rank_threshold=_RANK_THRESHOLD,
):
    """Gramian of C along the linearized flow dW/dt = A W + Q_n DF(V) W.

    Basis vectors of the subspace (euclidean X^sigma coordinates) are pushed
    through the nonautonomous flow by Strang splitting on the background's
    step grid; the output Gramian is assembled by composite Simpson weights
    on that grid, thinned by quad_stride when the recording would be large.
    """
    from .dynamics import propagate_linearized  # local import, cycle guard

    sub = _canonical_subspace(model, subspace)
    mu = model.mode_frequencies
    if (mu[sub] <= n).any():
        raise ValueError("subspace must lie strictly above the threshold n")
    T = obs.window
    dt = background.step_size
    m_T = round(T / dt)
    if m_T < 2 or m_T >= len(background) or abs(m_T * dt - T) > 1e-8 * max(T, 1.0):
        if abs((len(background) - 1) * dt - T) <= 1e-8 * max(T, 1.0):
            m_T = len(background) - 1
        else:
            raise ValueError("background grid does not cover the observation window")
    if m_T % quad_stride:
        raise ValueError("quad_stride must divide the number of window steps")
    rec_idx = np.arange(0, m_T + 1, quad_stride)

    z0 = subspace_phasor_basis(model, scale, sub)
    rec = propagate_linearized(
        model, nl, background, n, z0=z0, substeps=substeps, record_indices=rec_idx
    )
    Y = observed_output_matrix(obs, scale, rec)  # (Q, rows, 2S)
    tau = simpson_weights(len(rec_idx), dt * quad_stride)
    G = np.einsum("q,qna,qnb->ab", tau, Y, Y)
    quad = (
        f"composite simpson on trajectory grid, {len(rec_idx)} nodes "
        f"(stride {quad_stride}) on [0, {T:g}]"
    )
    return _finalize_gramian(sub, G, quad, rank_threshold)


def gcc_time(length, boundary, omega):
    """Infimal control time for unit-speed rays to meet the closure of omega.

    Closed forms: on the interval the worst ray bounces off the far endpoint
    of the largest uncovered edge gap (time twice the gap), or crosses the
    largest interior gap; on the circle it runs the largest cyclic gap end
    to end.
    """
    if boundary not in ("dirichlet_interval", "periodic_circle"):
        raise ValueError(f"unknown boundary {boundary!r}")
    merged = _merge_intervals(omega, length, boundary == "periodic_circle")
    if not merged:
        raise ValueError("omega must be nonempty")
    starts = [a for a, _ in merged]
    ends = [b for _, b in merged]
    if boundary == "dirichlet_interval":
        best = max(2.0 * starts[0], 2.0 * (length - ends[-1]))
        for i in range(len(merged) - 1):
            best = max(best, starts[i + 1] - ends[i])
        return best
    # circle: cyclic gaps
    best = 0.0
    for i in range(len(merged)):
        nxt = starts[(i + 1) % len(merged)] + (length if i + 1 == len(merged) else 0.0)
        best = max(best, nxt - ends[i])
    return best


def commutator_diagnostic(model, obs, s_exponent, sigma, eps=1.0):
    """Norm of [(A*A)^s, C] as a map X^{sigma+2s} -> X^{sigma+eps}.

    Both operators act blockwise on the observed component, so the norm
    reduces to a single N x N matrix norm. Zero exactly when b_omega is
    constant. Tabulate against N to probe boundedness of the commutator.
    """
    if s_exponent <= 0.0:
        raise ValueError("s_exponent must be positive")
    mu = model.mode_frequencies
    lam2s = mu ** (2.0 * s_exponent)
    K = (lam2s[:, None] - lam2s[None, :]) * obs.modal_matrix
    d_out = (1.0 + mu**2) ** (0.5 * (sigma + eps))
    d_in = (1.0 + mu**2) ** (0.5 * (sigma + 2.0 * s_exponent))
    return float(np.linalg.norm(d_out[:, None] * K / d_in[None, :], 2))
