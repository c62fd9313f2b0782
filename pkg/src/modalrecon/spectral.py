"""Truncated spectral models for conservative 1D semilinear PDEs.

Three variants share one finite-mode skeleton: second-order wave and plate
dynamics and a first-order Schrodinger flow, each posed on an interval with
Dirichlet ends (sine basis; the plate uses the same basis as its hinged
conditions) or on a circle (Fourier basis). Everything downstream works in
the N lowest Laplacian eigenmodes.

Conventions fixed here and relied on package-wide:

* State coordinates are a (2, N) float array. For wave/plate row 0 holds the
  field coefficients a_k and row 1 the velocity coefficients b_k; for nls the
  rows are Re u_k and Im u_k.
* Mode k carries the temporal frequency mu_k: sqrt(lambda_k + beta) for wave,
  sqrt(lambda_k^2 + beta) for plate, lambda_k for nls.
* The phasor coordinates z_k = s_k a_k + i b_k (s_k = mu_k for wave/plate,
  1 for nls) diagonalize the linear flow: exp(tA) multiplies z_k by
  exp(-i mu_k t). At sigma = 0 the norm below is the plain euclidean norm of
  z, i.e. the energy norm (H^1 x L^2 for wave, H^2 x L^2 for plate, L^2 for
  nls).
* The X^sigma norm squares to sum_k (1 + mu_k^2)^sigma |z_k|^2.
* Quadrature nodes are uniform (interior nodes for Dirichlet, the full
  circle otherwise) with trapezoid weights, which makes every integral of a
  product of basis functions exact to rounding, and keeps polynomial
  nonlinearities alias-free up to the capacity reported by
  dealias_capacity().
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VARIANTS = ("wave", "plate", "nls")
BOUNDARIES = ("dirichlet_interval", "periodic_circle")

_ORTHONORMALITY_TOL = 1e-10


@dataclass(frozen=True)
class ModelKind:
    """Which equation and which spatial geometry."""

    variant: str
    boundary: str

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.boundary not in BOUNDARIES:
            raise ValueError(
                f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}"
            )

    @property
    def second_order(self):
        return self.variant in ("wave", "plate")


@dataclass(frozen=True, eq=False)
class ModelOperator:
    """Immutable truncated model: spectrum, grid, and eigenfunction table.

    Arrays are read-only; instances compare and hash by identity so they can
    key caches and be shared across threads.
    """

    kind: ModelKind
    length: float
    beta: float
    n_modes: int
    eigenvalues: np.ndarray  # (N,) Laplacian eigenvalues, nondecreasing
    mode_frequencies: np.ndarray  # (N,) temporal frequencies mu_k
    nodes: np.ndarray  # (M,) quadrature nodes
    weights: np.ndarray  # (M,) quadrature weights
    eigenfunction_table: np.ndarray  # (N, M) basis values at the nodes
    component_scale: np.ndarray = field(repr=False, default=None)

    @property
    def grid_size(self):
        return self.nodes.shape[0]


def _circle_harmonics(n_modes):
    # mode 0 is the constant; then (cos, sin) pairs per harmonic
    return (np.arange(n_modes) + 1) // 2


def build_model(kind, length, beta, n_modes, grid_size):
    """Construct a ModelOperator.

    Parameters
    ----------
    kind : ModelKind
    length : float, domain length L > 0
    beta : float >= 0, zeroth-order shift; must be > 0 for wave/plate on the
        circle so every mode frequency is positive
    n_modes : int >= 1
    grid_size : int >= 4 * n_modes
    """
    if not isinstance(kind, ModelKind):
        kind = ModelKind(*kind)
    if not (length > 0.0):
        raise ValueError("length must be positive")
    if beta < 0.0:
        raise ValueError("beta must be nonnegative")
    if n_modes < 1:
        raise ValueError("n_modes must be at least 1")
    if grid_size < 4 * n_modes:
        raise ValueError(f"grid_size must be at least 4 * n_modes = {4 * n_modes}")
    if (
        kind.boundary == "periodic_circle"
        and kind.variant in ("wave", "plate")
        and beta == 0.0
    ):
        raise ValueError(
            "beta must be positive for wave/plate on the circle "
            "(the constant mode would have zero frequency)"
        )

    L = float(length)
    if kind.boundary == "dirichlet_interval":
        k = np.arange(1, n_modes + 1)
        lam = (k * np.pi / L) ** 2
        h = L / (grid_size + 1)
        nodes = h * np.arange(1, grid_size + 1)
        weights = np.full(grid_size, h)
        table = np.sqrt(2.0 / L) * np.sin(np.outer(k * np.pi / L, nodes))
    else:
        m = _circle_harmonics(n_modes)
        lam = (2.0 * np.pi * m / L) ** 2
        h = L / grid_size
        nodes = h * np.arange(grid_size)
        weights = np.full(grid_size, h)
        table = np.empty((n_modes, grid_size))
        table[0] = 1.0 / np.sqrt(L)
        for j in range(1, n_modes):
            arg = 2.0 * np.pi * m[j] * nodes / L
            vals = np.cos(arg) if j % 2 == 1 else np.sin(arg)
            table[j] = np.sqrt(2.0 / L) * vals

    if kind.variant == "wave":
        mu = np.sqrt(lam + beta)
    elif kind.variant == "plate":
        mu = np.sqrt(lam**2 + beta)
    else:
        mu = lam.copy()

    scale = np.ones(n_modes) if kind.variant == "nls" else mu.copy()

    gram = (table * weights) @ table.T
    err = np.abs(gram - np.eye(n_modes)).max()
    if err > _ORTHONORMALITY_TOL:
        raise ValueError(
            f"grid_size {grid_size} leaves the basis non-orthonormal "
            f"under quadrature (error {err:.2e})"
        )

    for arr in (lam, mu, nodes, weights, table, scale):
        arr.setflags(write=False)
    return ModelOperator(
        kind=kind,
        length=L,
        beta=float(beta),
        n_modes=int(n_modes),
        eigenvalues=lam,
        mode_frequencies=mu,
        nodes=nodes,
        weights=weights,
        eigenfunction_table=table,
        component_scale=scale,
    )


def dealias_capacity(model):
    """Largest polynomial degree whose Galerkin projection is alias-free.

    Products of p + 1 basis functions stay exactly integrable as long as
    their top combined harmonic sits below the grid's aliasing limit.
    """
    n = model.n_modes
    m = model.grid_size
    if model.kind.boundary == "dirichlet_interval":
        return (2 * m + 1) // n - 1
    mmax = int(_circle_harmonics(n)[-1])
    if mmax == 0:
        return 10**9
    return (m - 1) // mmax - 1


def basis_exp_terms(model, k):
    """Basis function k as a list of (wavenumber, coefficient) exponentials.

    e_k(x) = sum c exp(i w x); used for exact piecewise-polynomial integrals
    against the basis.
    """
    L = model.length
    if model.kind.boundary == "dirichlet_interval":
        w = (k + 1) * np.pi / L
        c = np.sqrt(2.0 / L) / 2j
        return [(w, c), (-w, -c)]
    if k == 0:
        return [(0.0, 1.0 / np.sqrt(L) + 0j)]
    m = (k + 1) // 2
    w = 2.0 * np.pi * m / L
    amp = np.sqrt(2.0 / L)
    if k % 2 == 1:  # cosine
        return [(w, amp / 2 + 0j), (-w, amp / 2 + 0j)]
    return [(w, amp / 2j), (-w, -amp / 2j)]


@dataclass(eq=False)
class State:
    """One point in the truncated phase space.

    coords has shape (2, N); see the module docstring for the row meaning.
    """

    model: ModelOperator
    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float)
        if c.shape != (2, self.model.n_modes):
            raise ValueError(
                f"coords must have shape (2, {self.model.n_modes}), got {c.shape}"
            )
        self.coords = c

    @classmethod
    def zeros(cls, model):
        return cls(model, np.zeros((2, model.n_modes)))

    @classmethod
    def from_complex(cls, model, u):
        """nls constructor from N complex field coefficients."""
        u = np.asarray(u, dtype=complex)
        return cls(model, np.vstack([u.real, u.imag]))

    @property
    def complex_field(self):
        return self.coords[0] + 1j * self.coords[1]

    def copy(self):
        return State(self.model, self.coords.copy())

    def __add__(self, other):
        self._check(other)
        return State(self.model, self.coords + other.coords)

    def __sub__(self, other):
        self._check(other)
        return State(self.model, self.coords - other.coords)

    def __mul__(self, a):
        return State(self.model, self.coords * float(a))

    __rmul__ = __mul__

    def __neg__(self):
        return State(self.model, -self.coords)

    def _check(self, other):
        if other.model is not self.model:
            raise ValueError("states built over different models")


def phasors(s):
    """Complex phasor coordinates z_k of a State (see module docstring)."""
    return s.model.component_scale * s.coords[0] + 1j * s.coords[1]


def phasor_array(model, coords):
    """Phasors for a stacked coordinate array of shape (..., 2, N)."""
    return model.component_scale * coords[..., 0, :] + 1j * coords[..., 1, :]


def state_from_phasors(model, z):
    # component_scale is mu (positive by construction) or 1, never zero
    return State(model, np.vstack([z.real / model.component_scale, z.imag]))


def coords_from_phasors(model, z):
    """Inverse of phasor_array for shape (..., N) complex arrays."""
    scale = model.component_scale
    a = z.real / scale
    return np.stack([a, z.imag], axis=-2)


@dataclass(frozen=True, eq=False)
class SobolevScale:
    """X^sigma weights over one model: w_k = (1 + mu_k^2)^sigma."""

    model: ModelOperator
    sigma: float
    weights: np.ndarray

    @staticmethod
    def build(model, sigma):
        w = (1.0 + model.mode_frequencies**2) ** float(sigma)
        w.setflags(write=False)
        return SobolevScale(model=model, sigma=float(sigma), weights=w)

    def shifted(self, eps):
        """The same scale with sigma raised by eps."""
        return SobolevScale.build(self.model, self.sigma + eps)


def norm_sigma(scale, s):
    """X^sigma norm of a State."""
    if s.model is not scale.model:
        raise ValueError("state and scale built over different models")
    z = phasors(s)
    return float(np.sqrt(np.sum(scale.weights * (z.real**2 + z.imag**2))))


def phasor_norms(scale, z):
    """X^sigma norms along the last axis of a phasor array (..., N)."""
    return np.sqrt(np.sum(scale.weights * (z.real**2 + z.imag**2), axis=-1))


def low_mask(model, threshold):
    """Boolean mask of modes with mu_k <= threshold."""
    return model.mode_frequencies <= threshold


def project_low(s, threshold):
    """Zero out every mode with frequency above the threshold."""
    mask = low_mask(s.model, threshold)
    return State(s.model, s.coords * mask[None, :])


def project_high(s, threshold):
    """Orthogonal complement of project_low at the same threshold."""
    mask = ~low_mask(s.model, threshold)
    return State(s.model, s.coords * mask[None, :])


def subspace_indices(model, threshold, part):
    """Sorted mode indices of the low (mu <= n) or high (mu > n) subspace."""
    mask = low_mask(model, threshold)
    if part == "high":
        mask = ~mask
    elif part != "low":
        raise ValueError("part must be 'low' or 'high'")
    return np.nonzero(mask)[0]
