"""Acceptance battery: ten criteria, one test and one pass/fail line each.

Each test prints its measured numbers so a failing gate shows the margin,
not just the verdict. Model sizes follow the stated experiments; everything
runs from fixed seeds.
"""

import math
import time

import numpy as np
import pytest

from modalrecon.diagnostics import analyticity_radius, fit_radius
from modalrecon.dynamics import (
    Nonlinearity,
    Trajectory,
    linear_propagate,
    nonlinear_solve,
)
from modalrecon.observation import build_observation, gcc_time, gramian
from modalrecon.reconstruction import (
    ObservationRecord,
    ObservationSolver,
    ReconstructionConfig,
    reconstruct_high,
    solve_observation_problem,
)
from modalrecon.persist import read_csv_columns
from modalrecon.runner import run as run_subcommand
from modalrecon.scenario import load_scenario
from modalrecon.spectral import (
    ModelKind,
    SobolevScale,
    State,
    build_model,
    low_mask,
    norm_sigma,
    phasor_norms,
    phasors,
    state_from_phasors,
    subspace_indices,
)

from conftest import rng
from test_observation import gcc_ray_oracle, random_disjoint_intervals
from test_scenario_cli import edited, render

CUBIC = Nonlinearity((0.0, 0.0, 1.0))
OMEGA_MID = [(0.3 * np.pi, 0.7 * np.pi)]


@pytest.fixture(scope="module")
def wave32():
    return build_model(ModelKind("wave", "dirichlet_interval"), np.pi, 0.0, 32, 128)


@pytest.fixture(scope="module")
def plate16():
    return build_model(ModelKind("plate", "dirichlet_interval"), np.pi, 0.0, 16, 96)


@pytest.fixture(scope="module")
def nls17():
    return build_model(ModelKind("nls", "periodic_circle"), 2 * np.pi, 0.0, 17, 96)


def flat_state(model, sigma, seed, amp, decay=0.1):
    sc = SobolevScale.build(model, sigma)
    c = rng(seed).standard_normal((2, model.n_modes))
    c *= np.exp(-decay * np.arange(model.n_modes))[None, :]
    s = State(model, c)
    return (amp / norm_sigma(sc, s)) * s


def simulate_split(model, nl, omega, T, seed, n_nodes=3000, refine=4):
    sc = SobolevScale.build(model, 0.6)
    obs = build_observation(model, omega, window=T, smoothing=0.2)
    s0 = flat_state(model, 0.6, seed, 0.1)
    truth = nonlinear_solve(model, nl, s0, T, T / (n_nodes * refine), store_every=refine)
    record = ObservationRecord.from_trajectory(obs, truth)
    return {"model": model, "obs": obs, "scale": sc, "truth": truth, "record": record}


def reconstruct_at(setup, nl, threshold, variant="plain", substeps=1):
    model, truth, sc = setup["model"], setup["truth"], setup["scale"]
    z = truth.phasor_series()
    lo = low_mask(model, threshold)
    u_low = Trajectory.from_phasor_series(
        model, truth.times.copy(), z * lo[None, :], "low", truth.step_size
    )
    cfg = ReconstructionConfig(
        threshold_n=threshold, sigma=0.6, ball_radius=1.0,
        variant=variant, substeps=substeps,
    )
    res = reconstruct_high(
        model, setup["obs"], nl, sc, u_low, setup["record"], cfg
    )
    err = phasor_norms(
        sc, res.high_trajectory.phasor_series() - z * (~lo)[None, :]
    ).max()
    return res, float(err / phasor_norms(sc, z).max())


@pytest.fixture(scope="module")
def wave32_experiment(wave32):
    gcc = gcc_time(np.pi, "dirichlet_interval", OMEGA_MID)
    return simulate_split(wave32, CUBIC, OMEGA_MID, 1.5 * gcc, seed=42)


# ---------------------------------------------------------------------------


def test_criterion_01_spectral_exactness():
    t0 = time.perf_counter()
    worst_eig, worst_gram = 0.0, 0.0
    for length, n in ((np.pi, 32), (2.7, 24)):
        model = build_model(
            ModelKind("wave", "dirichlet_interval"), length, 0.0, n, 4 * n
        )
        k = np.arange(1, n + 1)
        want = (k * np.pi / length) ** 2
        worst_eig = max(worst_eig, np.abs(model.eigenvalues / want - 1.0).max())
        table = model.eigenfunction_table
        gram = table @ (model.weights[:, None] * table.T)
        worst_gram = max(worst_gram, np.abs(gram - np.eye(n)).max())
    elapsed = time.perf_counter() - t0
    print(
        f"[criterion 1] eigenvalue rel err {worst_eig:.2e}, "
        f"gram dev {worst_gram:.2e}, runtime {elapsed:.3f}s"
    )
    assert worst_eig <= 1e-12
    assert worst_gram <= 1e-10
    assert elapsed < 1.0


def test_criterion_02_conservative_propagation(wave32, plate16, nls17):
    circle9 = build_model(ModelKind("wave", "periodic_circle"), 2 * np.pi, 1.0, 9, 64)
    models = [wave32, plate16, nls17, circle9]
    sigmas = (0.0, 0.6, 1.0)
    g = rng(201)
    worst = 0.0
    for trial in range(100):
        model = models[trial % 4]
        sigma = sigmas[trial % 3]
        sc = SobolevScale.build(model, sigma)
        s = State(model, g.standard_normal((2, model.n_modes)))
        t = 10.0 * g.random()
        ratio = norm_sigma(sc, linear_propagate(model, s, t)) / norm_sigma(sc, s)
        worst = max(worst, abs(ratio - 1.0))
    print(f"[criterion 2] worst norm ratio deviation {worst:.2e} over 100 draws")
    assert worst <= 1e-12


def test_criterion_03_gramian_closed_form():
    model = build_model(ModelKind("wave", "dirichlet_interval"), np.pi, 0.0, 8, 48)
    obs_full = build_observation(model, [(0.0, np.pi)], window=2 * np.pi)
    sc0 = SobolevScale.build(model, 0.0)
    worst_closed = 0.0
    for k in (0, 3, 7):
        rep = gramian(model, obs_full, sc0, [k])
        worst_closed = max(
            worst_closed, np.abs(rep.matrix - np.pi * np.eye(2)).max()
        )
        # independent check: 1e4-node trapezoid on the exact mode rotation
        mu = model.mode_frequencies[k]
        t = np.linspace(0.0, 2 * np.pi, 10001)
        ya, yb = -np.sin(mu * t), np.cos(mu * t)
        oracle = np.array(
            [
                [np.trapezoid(ya * ya, t), np.trapezoid(ya * yb, t)],
                [np.trapezoid(yb * ya, t), np.trapezoid(yb * yb, t)],
            ]
        )
        worst_closed = max(worst_closed, np.abs(rep.matrix - oracle).max())

    obs = build_observation(model, [(0.8, 2.2)], window=2.2, smoothing=0.2)
    sc = SobolevScale.build(model, 0.6)
    sub = [3, 4, 5, 6, 7]
    rep = gramian(model, obs, sc, sub)
    w = sc.weights[sub]
    g = rng(202)
    margin = math.inf
    for _ in range(100):
        z = g.standard_normal(len(sub)) + 1j * g.standard_normal(len(sub))
        c = np.concatenate([np.sqrt(w) * z.real, np.sqrt(w) * z.imag])
        lhs = float(c @ c)
        q = float(c @ rep.matrix @ c)
        assert lhs <= rep.obs_constant**2 * q * (1.0 + 1e-9)
        margin = min(margin, rep.obs_constant**2 * q / lhs)
    print(
        f"[criterion 3] closed-form dev {worst_closed:.2e}, "
        f"tightest inequality margin {margin:.6f}"
    )
    assert worst_closed <= 1e-8


def test_criterion_04_gcc_ray_oracle():
    a, b, L = 0.4 * np.pi, 0.8 * np.pi, np.pi
    assert gcc_time(L, "dirichlet_interval", [(a, b)]) == pytest.approx(
        2 * max(a, L - b), abs=1e-12
    )
    ell = 2 * np.pi / 3
    assert gcc_time(2 * np.pi, "periodic_circle", [(0.7, 0.7 + ell)]) == pytest.approx(
        2 * np.pi - ell, abs=1e-12
    )
    worst = 0.0
    n_checked = 0
    for boundary, length, seed in (
        ("dirichlet_interval", np.pi, 150),
        ("periodic_circle", 2 * np.pi, 151),
    ):
        g = rng(seed)
        for _ in range(12):
            omega = random_disjoint_intervals(g, length, int(g.integers(1, 4)))
            got = gcc_time(length, boundary, omega)
            want = gcc_ray_oracle(length, boundary, omega)
            worst = max(worst, abs(got - want))
            n_checked += 1
    print(f"[criterion 4] worst oracle deviation {worst:.2e} over {n_checked} configs")
    assert worst <= 1e-6


def test_criterion_05_linear_reconstruction(wave32):
    T = 1.5 * gcc_time(np.pi, "dirichlet_interval", OMEGA_MID)
    obs = build_observation(wave32, OMEGA_MID, window=T, smoothing=0.2)
    sc = SobolevScale.build(wave32, 0.6)
    sub = subspace_indices(wave32, 26.0, "high")
    times = np.linspace(0.0, T, 1001)
    worst = 0.0
    cond = math.nan
    for seed in (210, 211, 212, 213, 214):
        g = rng(seed)
        z0 = np.zeros(wave32.n_modes, dtype=complex)
        z0[sub] = g.standard_normal(len(sub)) + 1j * g.standard_normal(len(sub))
        w_true = state_from_phasors(wave32, z0)
        z = z0[None, :] * np.exp(-1j * np.outer(times, wave32.mode_frequencies))
        truth = Trajectory.from_phasor_series(wave32, times, z, "linear", times[1])
        record = ObservationRecord.from_trajectory(obs, truth)
        got = solve_observation_problem(wave32, obs, sc, None, record, sub)
        cond = got.info["gramian_report"].condition_number
        assert cond <= 1e8
        err = norm_sigma(sc, got.info["initial_state"] - w_true)
        worst = max(worst, err / norm_sigma(sc, w_true))

    # perturbing the target by an annihilated component moves nothing
    solver = ObservationSolver(wave32, obs, sc, sub, times)
    base = solver.solve(record.values)
    pert = rng(215).standard_normal(record.values.shape)
    ann = solver.annihilate_range(pert[:, 1, :] * np.sqrt(sc.weights))
    shifted = record.values.copy()
    shifted[:, 1, :] += ann / np.sqrt(sc.weights)
    moved = solver.solve(shifted)
    drift = np.abs(moved.coeffs - base.coeffs).max() / np.abs(base.coeffs).max()
    print(
        f"[criterion 5] worst recovery rel err {worst:.2e} "
        f"(condition {cond:.2e}), invariance drift {drift:.2e}"
    )
    assert worst <= 1e-8
    assert drift <= 1e-10


def test_criterion_06_nonlinear_reconstruction(wave32_experiment, plate16, nls17):
    budgets = []

    t0 = time.perf_counter()
    res, err = reconstruct_at(wave32_experiment, CUBIC, 29.5)
    budgets.append(("wave N=32", res, err, time.perf_counter() - t0))

    gcc = gcc_time(np.pi, "dirichlet_interval", OMEGA_MID)
    t0 = time.perf_counter()
    setup = simulate_split(plate16, CUBIC, OMEGA_MID, 1.5 * gcc, seed=42)
    res, err = reconstruct_at(setup, CUBIC, 183.0)
    budgets.append(("plate N=16", res, err, time.perf_counter() - t0))

    arc = [(0.0, 2 * np.pi / 3)]
    gcc_n = gcc_time(2 * np.pi, "periodic_circle", arc)
    nl_nls = Nonlinearity((0.0, 0.5))
    t0 = time.perf_counter()
    setup = simulate_split(nls17, nl_nls, arc, 1.5 * gcc_n, seed=42)
    res, err = reconstruct_at(setup, nl_nls, 45.0, variant="linearized", substeps=2)
    budgets.append(("nls N=17 linearized", res, err, time.perf_counter() - t0))

    for tag, res, err, wall in budgets:
        print(
            f"[criterion 6] {tag}: converged={res.converged} "
            f"iters={res.iterations} max ratio="
            f"{max(res.contraction_estimates, default=0.0):.2e} "
            f"rel high err={err:.2e} wall={wall:.1f}s"
        )
        assert res.converged
        assert all(r < 1.0 for r in res.contraction_estimates)
        assert err <= 1e-6
        assert wall < 300.0


def test_criterion_07_contraction_decreases_with_threshold(wave32_experiment):
    firsts = []
    for thr in (23.5, 26.5, 29.5):
        res, _ = reconstruct_at(wave32_experiment, CUBIC, thr)
        assert res.converged
        firsts.append(res.contraction_estimates[0])
    print(
        "[criterion 7] first-iteration contraction by threshold: "
        + ", ".join(f"{v:.3e}" for v in firsts)
    )
    assert firsts[0] > firsts[1] > firsts[2]


def test_criterion_08_analyticity_diagnostics(wave32):
    K = 24
    j = np.arange(K + 1, dtype=float)
    worst_pole = 0.0
    for rho in (0.25, 0.5, 1.0):
        got, _ = fit_radius(rho ** (-j), K)
        worst_pole = max(worst_pole, abs(got - rho) / rho)
    assert worst_pole <= 0.10

    z = np.zeros(wave32.n_modes, dtype=complex)
    z[2] = 1.0
    sentinel = analyticity_radius(
        wave32, Nonlinearity(), state_from_phasors(wave32, z), 0.6, K
    ).radius_estimate
    assert sentinel == math.inf

    wave16 = build_model(ModelKind("wave", "dirichlet_interval"), np.pi, 0.0, 16, 96)
    s = flat_state(wave16, 0.6, 5, 2.0, decay=0.4)
    radii = [
        analyticity_radius(wave16, CUBIC, s, 0.6, k).radius_estimate
        for k in (16, 24, 32)
    ]
    mid = float(np.median(radii))
    spread = max(abs(v - mid) / mid for v in radii)
    print(
        f"[criterion 8] pole rel err {worst_pole:.2e}, sentinel inf, "
        f"cubic radii {[round(v, 4) for v in radii]} spread {spread:.1%}"
    )
    assert all(math.isfinite(v) and v > 0.0 for v in radii)
    assert spread < 0.20


def test_criterion_09_integrator_quality(nls17):
    wave16 = build_model(ModelKind("wave", "dirichlet_interval"), np.pi, 0.0, 16, 96)
    sc = SobolevScale.build(wave16, 0.6)
    s0 = flat_state(wave16, 0.6, 11, 0.5, decay=0.4)
    T = 1.0
    ref = nonlinear_solve(wave16, CUBIC, s0, T, T / 8192, store_every=8192)
    zref = ref.phasor_series()[-1]
    ns = np.array([32, 64, 128, 256])
    errs = []
    for n in ns:
        tr = nonlinear_solve(wave16, CUBIC, s0, T, T / n, store_every=int(n))
        errs.append(
            float(phasor_norms(sc, (tr.phasor_series()[-1] - zref)[None, :])[0])
        )
    slope = float(np.polyfit(np.log(T / ns), np.log(errs), 1)[0])

    from modalrecon.diagnostics import energy

    T2 = 2 * np.pi
    steps = 6280  # dt = 1.0005e-3
    traj = nonlinear_solve(wave16, CUBIC, s0, T2, T2 / steps, store_every=40)
    energies = np.array(
        [energy(wave16, CUBIC, traj.state(i)) for i in range(len(traj))]
    )
    drift = float(np.abs(energies - energies[0]).max() / abs(energies[0]))

    nl_nls = Nonlinearity((0.0, 0.5))
    zn = flat_state(nls17, 0.0, 12, 0.3, decay=0.2)
    tn = nonlinear_solve(nls17, nl_nls, zn, 2.0, 1e-3)
    mass = np.sum(np.abs(tn.phasor_series()) ** 2, axis=1)
    step_jump = float(np.abs(np.diff(mass)).max() / mass[0])

    print(
        f"[criterion 9] strang slope {slope:.4f}, energy drift {drift:.2e}, "
        f"mass jump per step {step_jump:.2e}"
    )
    assert 1.9 <= slope <= 2.1
    assert drift <= 1e-6
    assert step_jump <= 1e-10


def test_criterion_10_determinism(tmp_path):
    doc = edited()
    doc["sweep"] = {'"reconstruction.threshold_n"': "[5.5, 6.5]"}
    path = tmp_path / "det.toml"
    path.write_text(render(doc))
    sc = load_scenario(str(path))

    tables = {}
    for tag, threads in (("a", 1), ("b", 1), ("c", 4)):
        out = str(tmp_path / f"run_{tag}")
        manifest = run_subcommand("sweep", sc, out_dir=out, threads=threads,
                                  figures=False)
        assert not manifest.failed
        with open(f"{out}/sweep_table.csv", "rb") as fh:
            tables[tag] = fh.read()
    same_bytes = tables["a"] == tables["b"]
    for idx in (0, 1):
        pa = (tmp_path / "run_a" / f"point_{idx:03d}" / "reconstruct_report.json")
        pb = (tmp_path / "run_b" / f"point_{idx:03d}" / "reconstruct_report.json")
        same_bytes = same_bytes and pa.read_bytes() == pb.read_bytes()

    _, _, data_a = read_csv_columns(str(tmp_path / "run_a" / "sweep_table.csv"))
    _, _, data_c = read_csv_columns(str(tmp_path / "run_c" / "sweep_table.csv"))
    thread_dev = float(np.nanmax(np.abs(data_a - data_c)))

    outs = []
    for tag in ("p", "q"):
        out = str(tmp_path / tag)
        run_subcommand("simulate", sc, out_dir=out, figures=False)
        with open(f"{out}/simulate_trajectory.csv", "rb") as fh:
            outs.append(fh.read())
    same_bytes = same_bytes and outs[0] == outs[1]

    print(
        f"[criterion 10] single-thread byte-identical: {same_bytes}, "
        f"4-thread metric deviation {thread_dev:.2e}"
    )
    assert same_bytes
    assert thread_dev <= 1e-12
