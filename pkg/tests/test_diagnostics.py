import json
import math

import numpy as np
import pytest

from modalrecon.diagnostics import (
    analyticity_radius,
    determining_modes_experiment,
    energy,
    find_stationary,
    fit_radius,
    stationarity_residual,
)
from modalrecon.dynamics import Nonlinearity
from modalrecon.errors import UnobservableError
from modalrecon.observation import build_observation
from modalrecon.reconstruction import ReconstructionConfig
from modalrecon.spectral import (
    SobolevScale,
    State,
    norm_sigma,
    phasors,
    state_from_phasors,
)

from conftest import rng

CUBIC = Nonlinearity((0.0, 0.0, 1.0))
FOCUSING = Nonlinearity((0.0, 0.0, -1.0))


def decayed_state(model, sigma, seed, amp):
    sc = SobolevScale.build(model, sigma)
    c = rng(seed).standard_normal((2, model.n_modes))
    c *= np.exp(-0.4 * np.arange(model.n_modes))[None, :]
    s = State(model, c)
    return (amp / norm_sigma(sc, s)) * s


# ---------------------------------------------------------------------------
# radius fitting


@pytest.mark.parametrize("rho", [0.25, 0.5, 1.0])
def test_fit_radius_manufactured_pole(rho):
    # nu_j = ||D_j||/j! = rho^-j is the exact Cauchy-Hadamard profile
    K = 24
    j = np.arange(K + 1)
    nu = rho ** (-j.astype(float))
    got, quality = fit_radius(nu, K)
    assert got == pytest.approx(rho, rel=1e-10)
    assert quality > 0.999


@pytest.mark.parametrize("rho", [0.25, 0.5, 1.0])
def test_fit_radius_with_polynomial_prefactor(rho):
    # a (j+1) prefactor does not shift a pole; the fit absorbs it within 10%
    K = 24
    j = np.arange(K + 1)
    nu = (j + 1.0) * rho ** (-j.astype(float))
    got, _ = fit_radius(nu, K)
    assert abs(got - rho) / rho < 0.10


def test_fit_radius_sentinel_for_entire_sequence():
    # single linear mode: nu_j = m^j / j! decays through the floor
    K = 24
    j = np.arange(K + 1)
    nu = 3.0**j / np.array([math.factorial(int(k)) for k in j])
    got, _ = fit_radius(nu, K)
    assert got == math.inf


def test_analyticity_radius_linear_mode_is_entire(wave_pi):
    z = np.zeros(wave_pi.n_modes, dtype=complex)
    z[2] = 1.0
    rep = analyticity_radius(wave_pi, Nonlinearity(), state_from_phasors(wave_pi, z), 0.6, 24)
    assert rep.radius_estimate == math.inf
    assert not rep.localized
    assert np.isfinite(rep.derivative_norms).all()


def test_analyticity_radius_requires_deep_jet(wave_pi):
    with pytest.raises(ValueError):
        analyticity_radius(wave_pi, CUBIC, State.zeros(wave_pi), 0.6, 7)


def test_analyticity_radius_cubic_stable_across_K(wave_pi):
    s = decayed_state(wave_pi, 0.6, 5, 2.0)
    estimates = {}
    for K in (16, 24, 32):
        rep = analyticity_radius(wave_pi, CUBIC, s, 0.6, K)
        assert math.isfinite(rep.radius_estimate)
        assert rep.radius_estimate > 0.0
        assert np.isfinite(rep.derivative_norms).all()
        if rep.fit_quality > 0.9:
            assert rep.radius_estimate > 0.0
        estimates[K] = rep.radius_estimate
    mid = float(np.median(list(estimates.values())))
    for v in estimates.values():
        assert abs(v - mid) / mid < 0.20


def test_analyticity_radius_localized_variant(wave_pi):
    obs = build_observation(
        wave_pi, [(0.3 * np.pi, 0.7 * np.pi)], window=1.0, smoothing=0.2
    )
    s = decayed_state(wave_pi, 0.6, 6, 2.0)
    rep = analyticity_radius(wave_pi, CUBIC, s, 0.6, 24, cutoff=obs)
    assert rep.localized
    assert rep.radius_estimate > 0.0
    d = rep.as_dict()
    json.dumps(d)
    assert d["localized"] is True
    assert d["K"] == 24


# ---------------------------------------------------------------------------
# energy and stationarity


def test_energy_zero_state(wave_pi, nls_circle):
    assert energy(wave_pi, CUBIC, State.zeros(wave_pi)) == 0.0
    assert energy(nls_circle, Nonlinearity((0.0, 0.5)), State.zeros(nls_circle)) == 0.0


def test_energy_linear_closed_form(wave_pi):
    s = State(wave_pi, rng(7).standard_normal((2, wave_pi.n_modes)))
    a, b = s.coords
    want = 0.5 * np.sum((wave_pi.mode_frequencies * a) ** 2) + 0.5 * np.sum(b**2)
    assert energy(wave_pi, Nonlinearity(), s) == pytest.approx(want, rel=1e-13)


def test_energy_nls_single_mode(nls_circle):
    z = np.zeros(nls_circle.n_modes, dtype=complex)
    z[3] = 0.8  # harmonic m=2, lambda = 4
    s = state_from_phasors(nls_circle, z)
    assert energy(nls_circle, Nonlinearity(), s) == pytest.approx(
        0.5 * 4.0 * 0.64, rel=1e-13
    )


def test_energy_defocusing_nonnegative(wave_pi, nls_circle):
    for seed in range(30):
        sw = State(wave_pi, 2.0 * rng(100 + seed).standard_normal((2, wave_pi.n_modes)))
        assert energy(wave_pi, CUBIC, sw) >= 0.0
        sn = State(
            nls_circle, 2.0 * rng(200 + seed).standard_normal((2, nls_circle.n_modes))
        )
        assert energy(nls_circle, Nonlinearity((0.0, 0.5)), sn) >= 0.0


def test_stationarity_residual_zero_state(wave_pi, nls_circle):
    assert stationarity_residual(wave_pi, CUBIC, State.zeros(wave_pi)) == 0.0
    assert stationarity_residual(nls_circle, CUBIC, State.zeros(nls_circle)) == 0.0


def test_stationarity_residual_counts_velocity(wave_pi):
    coords = np.zeros((2, wave_pi.n_modes))
    coords[1, 4] = 0.7
    s = State(wave_pi, coords)
    assert stationarity_residual(wave_pi, Nonlinearity(), s) == pytest.approx(0.7)


def test_newton_finds_wave_stationary_state(wave_pi):
    coords = np.zeros((2, wave_pi.n_modes))
    coords[0, 0] = 3.0
    s = find_stationary(wave_pi, FOCUSING, State(wave_pi, coords))
    assert stationarity_residual(wave_pi, FOCUSING, s) < 1e-10
    assert np.abs(s.coords[0]).max() > 0.5  # nontrivial branch, not the origin
    assert np.abs(s.coords[1]).max() == 0.0


def test_newton_finds_nls_stationary_state(nls_circle):
    nl = Nonlinearity((0.0, -0.5))
    z0 = np.zeros(nls_circle.n_modes, dtype=complex)
    z0[1] = 1.3
    s = find_stationary(nls_circle, nl, state_from_phasors(nls_circle, z0))
    assert stationarity_residual(nls_circle, nl, s) < 1e-10
    assert np.abs(phasors(s)).max() > 0.5


def test_defocusing_circle_only_zero_stationary(wave_circle):
    # 20 random small starts; every Newton limit that satisfies the residual
    # test is the origin
    for seed in range(20):
        coords = 0.3 * rng(seed).standard_normal((2, wave_circle.n_modes))
        s = find_stationary(wave_circle, CUBIC, State(wave_circle, coords))
        assert stationarity_residual(wave_circle, CUBIC, s) < 1e-10
        assert np.abs(s.coords).max() < 1e-8


# ---------------------------------------------------------------------------
# determining-modes experiments


def experiment_setup(model):
    obs = build_observation(
        model, [(0.3 * np.pi, 0.7 * np.pi)], window=2.2, smoothing=0.2
    )
    sc = SobolevScale.build(model, 0.6)
    return obs, sc


def test_determining_modes_linear(wave_pi):
    obs, sc = experiment_setup(wave_pi)
    u0 = decayed_state(wave_pi, 0.6, 8, 0.5)
    cfg = ReconstructionConfig(threshold_n=13.0, sigma=0.6, ball_radius=5.0)
    rep = determining_modes_experiment(
        wave_pi, obs, Nonlinearity(), sc, u0, 2.2, 2.2 / 600, cfg, truth_refine=2
    )
    assert rep.converged
    assert rep.high_error <= 1e-8
    assert rep.low_error <= 1e-10
    assert rep.total_error <= rep.low_error + rep.high_error + 1e-12
    assert rep.window == pytest.approx(2.2)
    assert rep.gramian_condition >= 1.0
    json.dumps(rep.as_dict())


def test_determining_modes_cubic_and_threshold_monotonicity(wave_pi):
    obs, sc = experiment_setup(wave_pi)
    u0 = decayed_state(wave_pi, 0.6, 9, 0.1)
    errs = {}
    for thr in (9.5, 13.0):
        cfg = ReconstructionConfig(threshold_n=thr, sigma=0.6, ball_radius=1.0)
        rep = determining_modes_experiment(
            wave_pi, obs, CUBIC, sc, u0, 2.2, 2.2 / 1100, cfg, truth_refine=4
        )
        assert rep.converged
        assert all(r < 1.0 for r in rep.contraction_profile)
        assert rep.total_error <= rep.low_error + rep.high_error + 1e-12
        errs[thr] = rep.high_error
    assert errs[13.0] <= 1e-6
    assert errs[13.0] <= 3.0 * errs[9.5]


def test_determining_modes_rejects_bad_grid(wave_pi):
    obs, sc = experiment_setup(wave_pi)
    cfg = ReconstructionConfig(threshold_n=13.0, sigma=0.6, ball_radius=1.0)
    with pytest.raises(ValueError):
        determining_modes_experiment(
            wave_pi, obs, CUBIC, sc, State.zeros(wave_pi), 1.0, 0.3, cfg
        )


def test_determining_modes_unobservable_raises(wave_pi):
    obs = build_observation(wave_pi, [], window=2.2)
    sc = SobolevScale.build(wave_pi, 0.6)
    u0 = decayed_state(wave_pi, 0.6, 10, 0.1)
    cfg = ReconstructionConfig(threshold_n=13.0, sigma=0.6, ball_radius=1.0)
    with pytest.raises(UnobservableError):
        determining_modes_experiment(
            wave_pi, obs, CUBIC, sc, u0, 2.2, 2.2 / 600, cfg, truth_refine=2
        )
