"""Scenario files: one TOML document describing a full experiment.

Validation happens at load time and reuses the constructors of the core
modules, so a scenario that loads will also build. Error messages carry the
field path (block.key) of the offending entry.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - python < 3.11
    import tomli as tomllib

from .dynamics import Nonlinearity, verify_defocusing
from .errors import ScenarioError
from .observation import build_observation
from .reconstruction import ReconstructionConfig
from .spectral import ModelKind, SobolevScale, State, build_model, dealias_capacity
from .numutil import seeded_rng

_BLOCKS = ("model", "nonlinearity", "observation", "scale", "reconstruction", "run")


def _require(table, block, key, kinds, label):
    if key not in table:
        raise ScenarioError(f"{block}.{key}: missing required {label}")
    val = table[key]
    if not isinstance(val, kinds):
        raise ScenarioError(f"{block}.{key}: expected {label}, got {type(val).__name__}")
    return val


def _number(table, block, key, default=None):
    if default is not None and key not in table:
        return float(default)
    return float(_require(table, block, key, (int, float), "number"))


def _integer(table, block, key, default=None):
    if default is not None and key not in table:
        return int(default)
    val = _require(table, block, key, int, "integer")
    if isinstance(val, bool):
        raise ScenarioError(f"{block}.{key}: expected integer, got bool")
    return int(val)


@dataclass(eq=False)
class Scenario:
    """Validated experiment description plus builders for the core objects."""

    kind: str
    boundary: str
    length: float
    beta: float
    n_modes: int
    grid_size: int
    coefficients: tuple
    gamma: float  # None when no defocusing check is requested
    omega: tuple
    smoothing: float
    window: float
    sigma: float
    eps: float
    reconstruction: dict
    T_total: float
    dt: float
    seed: int
    output_dir: str
    initial_amplitude: float = 0.1
    initial_decay: float = 0.4
    jet_order: int = 16
    sweep: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)

    def scenario_hash(self):
        """SHA-256 over the canonical JSON of the parsed document."""
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def build_model(self):
        return build_model(
            ModelKind(self.kind, self.boundary),
            self.length, self.beta, self.n_modes, self.grid_size,
        )

    def nonlinearity(self):
        return Nonlinearity(self.coefficients, defocusing_gamma=self.gamma)

    def build_observation(self, model):
        return build_observation(model, self.omega, self.window, self.smoothing)

    def build_scale(self, model):
        return SobolevScale.build(model, self.sigma)

    def recon_config(self):
        return ReconstructionConfig(**self.reconstruction)

    def initial_state(self, model):
        """Seeded random state with exponentially decaying mode profile,
        normalized to initial_amplitude in the scenario's X^sigma norm."""
        rng = seeded_rng(self.seed)
        profile = np.exp(-self.initial_decay * np.arange(model.n_modes))
        coords = profile * rng.standard_normal((2, model.n_modes))
        s = State(model, coords)
        scale = self.build_scale(model)
        from .spectral import norm_sigma

        nrm = norm_sigma(scale, s)
        if nrm > 0.0:
            s = s * (self.initial_amplitude / nrm)
        return s


def _validate(sc):
    try:
        model = sc.build_model()
    except (ValueError, TypeError) as e:
        raise ScenarioError(f"model: {e}") from e
    try:
        nl = sc.nonlinearity()
    except (ValueError, TypeError) as e:
        raise ScenarioError(f"nonlinearity: {e}") from e
    cap = dealias_capacity(model)
    deg = nl.degree(sc.kind)
    if deg > cap:
        raise ScenarioError(
            f"nonlinearity.coefficients: degree {deg} exceeds the grid's "
            f"dealiased capacity {cap}; raise model.grid_size"
        )
    if sc.gamma is not None:
        try:
            verify_defocusing(model, nl)
        except ValueError as e:
            raise ScenarioError(f"nonlinearity.gamma: {e}") from e
    try:
        sc.build_observation(model)
    except (ValueError, TypeError) as e:
        raise ScenarioError(f"observation: {e}") from e
    if not sc.sigma >= 0.0:
        raise ScenarioError("scale.sigma: must be nonnegative")
    if not sc.eps > 0.0:
        raise ScenarioError("scale.eps: must be positive")
    try:
        cfg = sc.recon_config()
    except (ValueError, TypeError) as e:
        raise ScenarioError(f"reconstruction: {e}") from e
    if abs(cfg.sigma - sc.sigma) > 1e-12:
        raise ScenarioError(
            "reconstruction.sigma: must equal scale.sigma "
            f"({cfg.sigma!r} vs {sc.sigma!r})"
        )
    if cfg.ball_radius < sc.initial_amplitude:
        raise ScenarioError(
            "reconstruction.ball_radius: must be at least run.initial_amplitude "
            "(the low part must start inside the ball)"
        )
    if not np.any(model.mode_frequencies > cfg.threshold_n):
        raise ScenarioError(
            "reconstruction.threshold_n: no modes above the threshold; "
            "lower it or raise model.n_modes"
        )
    if sc.T_total < sc.window - 1e-12:
        raise ScenarioError("run.T_total: must be at least observation.window")
    n_steps = round(sc.T_total / sc.dt)
    if n_steps < 1 or abs(sc.T_total - n_steps * sc.dt) > 1e-9 * sc.T_total:
        raise ScenarioError("run.dt: must divide run.T_total")
    if sc.seed < 0:
        raise ScenarioError("run.seed: must be nonnegative")
    if sc.jet_order < 8:
        raise ScenarioError("run.jet_order: must be at least 8")
    for key, values in sc.sweep.items():
        if key not in ("reconstruction.threshold_n", "reconstruction.substeps",
                       "run.seed", "run.dt", "scale.sigma"):
            raise ScenarioError(f"sweep.{key}: unsupported sweep parameter")
        if not isinstance(values, list) or not values:
            raise ScenarioError(f"sweep.{key}: expected a nonempty list")


def load_scenario(path):
    """Parse and validate a scenario TOML file."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError as e:
        raise ScenarioError(f"{path}: {e.strerror}") from e
    except tomllib.TOMLDecodeError as e:
        raise ScenarioError(f"{path}: parse error: {e}") from e

    for block in _BLOCKS:
        if block not in doc:
            raise ScenarioError(f"{block}: missing required block")
        if not isinstance(doc[block], dict):
            raise ScenarioError(f"{block}: expected a table")
    known = set(_BLOCKS) | {"sweep"}
    for block in doc:
        if block not in known:
            raise ScenarioError(f"{block}: unknown block")

    m, n, o = doc["model"], doc["nonlinearity"], doc["observation"]
    sca, rec, run = doc["scale"], doc["reconstruction"], doc["run"]

    coeffs = n.get("coefficients", [])
    if not isinstance(coeffs, list) or not all(
        isinstance(c, (int, float)) and not isinstance(c, bool) for c in coeffs
    ):
        raise ScenarioError("nonlinearity.coefficients: expected a list of numbers")
    gamma = None
    if "gamma" in n:
        gamma = _number(n, "nonlinearity", "gamma")

    omega_raw = _require(o, "observation", "omega", list, "list of [a, b] pairs")
    omega = []
    for i, pair in enumerate(omega_raw):
        if (not isinstance(pair, list) or len(pair) != 2
                or not all(isinstance(x, (int, float)) for x in pair)):
            raise ScenarioError(
                f"observation.omega[{i}]: expected a two-number [a, b] pair"
            )
        omega.append((float(pair[0]), float(pair[1])))

    rec_known = {
        "threshold_n", "sigma", "ball_radius", "max_iters", "fix_tol",
        "gramian_nodes", "variant", "substeps", "quad_stride",
        "refresh_steps", "outer_passes",
    }
    for key in rec:
        if key not in rec_known:
            raise ScenarioError(f"reconstruction.{key}: unknown field")
    rec_dict = {
        "threshold_n": _number(rec, "reconstruction", "threshold_n"),
        "sigma": _number(rec, "reconstruction", "sigma"),
        "ball_radius": _number(rec, "reconstruction", "ball_radius"),
        "max_iters": _integer(rec, "reconstruction", "max_iters", 12),
        "fix_tol": _number(rec, "reconstruction", "fix_tol", 1e-10),
        "gramian_nodes": _integer(rec, "reconstruction", "gramian_nodes", 0),
        "variant": rec.get("variant", "plain"),
        "substeps": _integer(rec, "reconstruction", "substeps", 1),
        "quad_stride": _integer(rec, "reconstruction", "quad_stride", 1),
        "refresh_steps": _integer(rec, "reconstruction", "refresh_steps", 0),
        "outer_passes": _integer(rec, "reconstruction", "outer_passes", 2),
    }
    if not isinstance(rec_dict["variant"], str):
        raise ScenarioError("reconstruction.variant: expected a string")

    sweep = doc.get("sweep", {})

    sc = Scenario(
        kind=str(_require(m, "model", "kind", str, "string")),
        boundary=str(_require(m, "model", "boundary", str, "string")),
        length=_number(m, "model", "length"),
        beta=_number(m, "model", "beta", 0.0) if "beta" in m else 0.0,
        n_modes=_integer(m, "model", "n_modes"),
        grid_size=_integer(m, "model", "grid_size"),
        coefficients=tuple(float(c) for c in coeffs),
        gamma=gamma,
        omega=tuple(omega),
        smoothing=_number(o, "observation", "smoothing", 0.0) if "smoothing" in o else 0.0,
        window=_number(o, "observation", "window"),
        sigma=_number(sca, "scale", "sigma"),
        eps=_number(sca, "scale", "eps"),
        reconstruction=rec_dict,
        T_total=_number(run, "run", "T_total"),
        dt=_number(run, "run", "dt"),
        seed=_integer(run, "run", "seed"),
        output_dir=str(run.get("output_dir", "out")),
        initial_amplitude=_number(run, "run", "initial_amplitude", 0.1),
        initial_decay=_number(run, "run", "initial_decay", 0.4),
        jet_order=_integer(run, "run", "jet_order", 16),
        sweep=dict(sweep),
        raw=doc,
    )
    _validate(sc)
    return sc


def apply_override(scenario, dotted_key, value):
    """Return a re-validated copy of the scenario with one field replaced.

    Supports the dotted keys allowed in sweep blocks. The raw document is
    updated in step so the derived scenario hash distinguishes sweep points.
    """
    raw = json.loads(json.dumps(scenario.raw))
    block, key = dotted_key.split(".", 1)
    raw.setdefault(block, {})[key] = value

    updates = {"raw": raw}
    if dotted_key == "reconstruction.threshold_n":
        updates["reconstruction"] = dict(scenario.reconstruction, threshold_n=float(value))
    elif dotted_key == "reconstruction.substeps":
        updates["reconstruction"] = dict(scenario.reconstruction, substeps=int(value))
    elif dotted_key == "run.seed":
        updates["seed"] = int(value)
    elif dotted_key == "run.dt":
        updates["dt"] = float(value)
    elif dotted_key == "scale.sigma":
        updates["sigma"] = float(value)
        updates["reconstruction"] = dict(scenario.reconstruction, sigma=float(value))
        raw.setdefault("reconstruction", {})["sigma"] = value
    else:
        raise ScenarioError(f"sweep.{dotted_key}: unsupported sweep parameter")

    fields = {
        name: getattr(scenario, name)
        for name in (
            "kind", "boundary", "length", "beta", "n_modes", "grid_size",
            "coefficients", "gamma", "omega", "smoothing", "window",
            "sigma", "eps", "reconstruction", "T_total", "dt", "seed",
            "output_dir", "initial_amplitude", "initial_decay", "jet_order",
        )
    }
    fields["sweep"] = {}
    fields.update(updates)
    out = Scenario(**fields)
    _validate(out)
    return out
