"""Experiment orchestration: one subcommand on one scenario, one manifest.

Drivers only combine library calls and write files; no numerics live here.
A numerical failure (unobservable configuration, diverging iteration,
blow-up) still produces its report file and a manifest with status
"failed"; the CLI turns that status into exit code 3.

Sweep fans points out to a thread pool. Each point is a full child run
writing exclusively inside its own subdirectory (manifest included); the
coordinator alone writes the combined table and the top-level manifest, and
aggregation order is fixed by the point index, not completion order.
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .diagnostics import analyticity_radius, determining_modes_experiment, energy
from .dynamics import nonlinear_solve
from .errors import BlowupError, ReconstructionError, ScenarioError, UnobservableError
from .observation import build_observation, commutator_diagnostic, gcc_time, gramian
from .persist import write_report, write_series_csv, write_trajectory_csv
from .scenario import apply_override
from .spectral import ModelKind, build_model, phasor_norms

SUBCOMMANDS = (
    "simulate", "gramian", "gcc", "reconstruct", "analyticity", "sweep",
    "commutator",
)

_NUMERICAL_ERRORS = (UnobservableError, ReconstructionError, BlowupError)


@dataclass(eq=False)
class RunManifest:
    scenario_hash: str
    artifact_version: str
    subcommand: str
    started: str
    finished: str
    outputs: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    @property
    def failed(self):
        return self.summary.get("status") == "failed"

    def as_dict(self):
        return {
            "scenario_hash": self.scenario_hash,
            "artifact_version": self.artifact_version,
            "subcommand": self.subcommand,
            "started": self.started,
            "finished": self.finished,
            "outputs": dict(self.outputs),
            "summary": dict(self.summary),
        }


def _now():
    return datetime.now(timezone.utc).isoformat()


def run(subcommand, scenario, out_dir=None, threads=1, figures=True,
        verbose=False):
    """Execute one subcommand and return its manifest.

    Files land in out_dir (default: the scenario's output_dir). The
    manifest is also written there as manifest.json.
    """
    if subcommand not in SUBCOMMANDS:
        raise ValueError(f"unknown subcommand {subcommand!r}")
    out = os.path.abspath(out_dir if out_dir is not None else scenario.output_dir)
    os.makedirs(out, exist_ok=True)
    started = _now()
    driver = globals()[f"_drive_{subcommand}"]
    try:
        outputs, summary = driver(scenario, out, threads=threads,
                                  figures=figures, verbose=verbose)
    except _NUMERICAL_ERRORS as e:
        # the failure report is still written, per the exit-code contract
        rpath = os.path.join(out, f"{subcommand}_failure.json")
        write_report(rpath, _failure_payload(e), scenario.scenario_hash())
        outputs = {"report": rpath}
        summary = {"status": "failed", "error": str(e),
                   "error_type": type(e).__name__}
    conds = summary.pop("_condition_numbers", ())
    summary.setdefault("status", "ok")
    manifest = RunManifest(
        scenario_hash=scenario.scenario_hash(),
        artifact_version=__version__,
        subcommand=subcommand,
        started=started,
        finished=_now(),
        outputs=outputs,
        summary=summary,
    )
    mpath = os.path.join(out, "manifest.json")
    write_report(mpath, manifest.as_dict(), scenario.scenario_hash(), conds)
    manifest.outputs["manifest"] = mpath
    return manifest


def _store_stride(n_steps, max_rows=2000):
    stride = max(1, -(-n_steps // max_rows))
    while n_steps % stride:
        stride += 1
    return stride


def _drive_simulate(sc, out, threads, figures, verbose):
    model = sc.build_model()
    nl = sc.nonlinearity()
    scale = sc.build_scale(model)
    u0 = sc.initial_state(model)
    n_steps = round(sc.T_total / sc.dt)
    stride = _store_stride(n_steps)
    traj = nonlinear_solve(model, nl, u0, sc.T_total, sc.dt, store_every=stride)
    energies = np.array([energy(model, nl, traj.state(i))
                         for i in range(len(traj))])
    norms = phasor_norms(scale, traj.phasor_series())
    shash = sc.scenario_hash()
    tpath = os.path.join(out, "simulate_trajectory.csv")
    spath = os.path.join(out, "simulate_series.csv")
    write_trajectory_csv(tpath, model, traj, shash)
    write_series_csv(spath, [("time", traj.times), ("energy", energies),
                             ("norm_sigma", norms)], shash)
    outputs = {"trajectory": tpath, "series": spath}
    if figures:
        from .figures import energy_figure

        outputs["energy_figure"] = energy_figure(
            os.path.join(out, "simulate_energy.png"), traj.times, energies, norms)
    e0 = energies[0]
    drift = float(np.abs(energies - e0).max() / max(abs(e0), 1e-300))
    summary = {
        "steps": n_steps,
        "final_energy": float(energies[-1]),
        "energy_drift": drift,
        "final_norm": float(norms[-1]),
    }
    if verbose:
        print(f"simulate: {n_steps} steps, energy drift {drift:.3e}")
    return outputs, summary


def _drive_gramian(sc, out, threads, figures, verbose):
    model = sc.build_model()
    obs = sc.build_observation(model)
    scale = sc.build_scale(model)
    cfg = sc.recon_config()
    sub = np.where(model.mode_frequencies > cfg.threshold_n)[0]
    nodes = cfg.gramian_nodes if cfg.gramian_nodes > 0 else None
    report = gramian(model, obs, scale, sub, n_time_nodes=nodes)
    shash = sc.scenario_hash()
    rpath = os.path.join(out, "gramian_report.json")
    write_report(rpath, report.as_dict(), shash, [report.condition_number])
    outputs = {"report": rpath}
    if figures:
        from .figures import spectrum_figure

        eigs = np.linalg.eigvalsh(report.matrix)
        outputs["spectrum_figure"] = spectrum_figure(
            os.path.join(out, "gramian_spectrum.png"), eigs)
    summary = {
        "min_eig": report.min_eig,
        "max_eig": report.max_eig,
        "obs_constant": report.obs_constant,
        "condition_number": report.condition_number,
        "unobservable": bool(report.unobservable),
        "_condition_numbers": [report.condition_number],
    }
    if verbose:
        print(f"gramian: min eig {report.min_eig:.6e}, "
              f"condition {report.condition_number:.3e}")
    return outputs, summary


def _drive_gcc(sc, out, threads, figures, verbose):
    t_star = gcc_time(sc.length, sc.boundary, sc.omega)
    print(f"gcc_time = {t_star:.12g}")
    shash = sc.scenario_hash()
    rpath = os.path.join(out, "gcc_report.json")
    payload = {
        "gcc_time": t_star,
        "window": sc.window,
        "window_over_gcc": sc.window / t_star if t_star > 0 else math.inf,
        "omega": [list(p) for p in sc.omega],
        "length": sc.length,
        "boundary": sc.boundary,
    }
    write_report(rpath, payload, shash)
    summary = {k: payload[k] for k in ("gcc_time", "window", "window_over_gcc")}
    return {"report": rpath}, summary


def _failure_payload(exc):
    doc = {"status": "failed", "error_type": type(exc).__name__,
           "error": str(exc)}
    if isinstance(exc, UnobservableError) and exc.report is not None:
        doc["gramian"] = exc.report.as_dict()
    if isinstance(exc, ReconstructionError) and exc.result is not None:
        res = exc.result
        doc["iterations"] = res.iterations
        doc["contraction_profile"] = list(res.contraction_estimates)
        doc["residual_observation"] = res.residual_observation
    if isinstance(exc, BlowupError):
        doc["time_of_failure"] = exc.time_of_failure
        doc["norm_value"] = exc.norm_value
    return doc


def _drive_reconstruct(sc, out, threads, figures, verbose):
    model = sc.build_model()
    obs = sc.build_observation(model)
    nl = sc.nonlinearity()
    scale = sc.build_scale(model)
    cfg = sc.recon_config()
    u0 = sc.initial_state(model)
    shash = sc.scenario_hash()
    rpath = os.path.join(out, "reconstruct_report.json")
    try:
        report = determining_modes_experiment(
            model, obs, nl, scale, u0, sc.T_total, sc.dt, cfg)
    except _NUMERICAL_ERRORS as e:
        write_report(rpath, _failure_payload(e), shash)
        if verbose:
            print(f"reconstruct: failed ({type(e).__name__}: {e})")
        return {"report": rpath}, {
            "status": "failed", "error": str(e),
            "error_type": type(e).__name__,
        }
    conds = [report.gramian_condition]
    write_report(rpath, report.as_dict(), shash, conds)
    outputs = {"report": rpath}
    if figures:
        from .figures import contraction_figure

        outputs["contraction_figure"] = contraction_figure(
            os.path.join(out, "reconstruct_contraction.png"),
            report.contraction_profile)
    final_ratio = (report.contraction_profile[-1]
                   if report.contraction_profile else math.nan)
    summary = {
        "threshold_n": report.threshold_n,
        "iterations": report.iterations,
        "converged": bool(report.converged),
        "final_ratio": final_ratio,
        "low_error": report.low_error,
        "high_error": report.high_error,
        "total_error": report.total_error,
        "gramian_condition": report.gramian_condition,
        "_condition_numbers": conds,
    }
    if verbose:
        print(f"reconstruct: {report.iterations} iterations, "
              f"high error {report.high_error:.3e}")
    return outputs, summary


def _drive_analyticity(sc, out, threads, figures, verbose):
    model = sc.build_model()
    obs = sc.build_observation(model)
    nl = sc.nonlinearity()
    u0 = sc.initial_state(model)
    rep_g = analyticity_radius(model, nl, u0, sc.sigma, sc.jet_order)
    rep_l = analyticity_radius(model, nl, u0, sc.sigma, sc.jet_order,
                               cutoff=obs)
    shash = sc.scenario_hash()
    rpath = os.path.join(out, "analyticity_report.json")
    write_report(rpath, {"global": rep_g.as_dict(), "localized": rep_l.as_dict()},
                 shash)
    outputs = {"report": rpath}
    if figures:
        from .figures import analyticity_figure

        outputs["fit_figure"] = analyticity_figure(
            os.path.join(out, "analyticity_fit.png"), [rep_g, rep_l])
    summary = {
        "radius_global": rep_g.radius_estimate,
        "radius_localized": rep_l.radius_estimate,
        "fit_quality_global": rep_g.fit_quality,
        "fit_quality_localized": rep_l.fit_quality,
    }
    if verbose:
        print(f"analyticity: global {rep_g.radius_estimate:.4g}, "
              f"localized {rep_l.radius_estimate:.4g}")
    return outputs, summary


def _drive_sweep(sc, out, threads, figures, verbose):
    if not sc.sweep:
        raise ScenarioError("sweep: block is empty; nothing to run")
    keys = sorted(sc.sweep)
    grids = [sc.sweep[k] for k in keys]
    combos = list(itertools.product(*grids))

    def one_point(args):
        idx, combo = args
        sub = sc
        for key, val in zip(keys, combo):
            sub = apply_override(sub, key, val)
        subdir = os.path.join(out, f"point_{idx:03d}")
        manifest = run("reconstruct", sub, out_dir=subdir, threads=1,
                       figures=figures, verbose=False)
        return idx, combo, manifest

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one_point, enumerate(combos)))
    else:
        results = [one_point(item) for item in enumerate(combos)]
    results.sort(key=lambda r: r[0])

    short = [k.split(".")[-1] for k in keys]
    cols = {name: [] for name in
            ["point"] + short + ["iterations", "converged", "final_ratio",
                                 "low_error", "high_error", "total_error",
                                 "gramian_condition", "ok"]}
    profiles = []
    conds = []
    n_failed = 0
    for idx, combo, manifest in results:
        s = manifest.summary
        failed = manifest.failed
        n_failed += failed
        cols["point"].append(idx)
        for name, val in zip(short, combo):
            cols[name].append(float(val))
        cols["iterations"].append(s.get("iterations", math.nan))
        cols["converged"].append(float(s.get("converged", False)))
        cols["final_ratio"].append(s.get("final_ratio", math.nan))
        cols["low_error"].append(s.get("low_error", math.nan))
        cols["high_error"].append(s.get("high_error", math.nan))
        cols["total_error"].append(s.get("total_error", math.nan))
        cols["gramian_condition"].append(s.get("gramian_condition", math.nan))
        cols["ok"].append(0.0 if failed else 1.0)
        if not failed:
            conds.append(s.get("gramian_condition", math.nan))
        if verbose:
            tagvals = ", ".join(f"{n}={v:g}" for n, v in zip(short, combo))
            state = "failed" if failed else f"{s.get('iterations')} iters"
            print(f"sweep point {idx}: {tagvals} -> {state}")

    shash = sc.scenario_hash()
    tpath = os.path.join(out, "sweep_table.csv")
    write_series_csv(tpath, list(cols.items()), shash, conds)
    outputs = {"table": tpath}
    for idx, _, manifest in results:
        outputs[f"point_{idx:03d}"] = manifest.outputs["manifest"]
    if figures and len(keys) == 1:
        from .figures import sweep_figure

        profiles = []
        for idx, combo, manifest in results:
            rep_path = manifest.outputs.get("report")
            prof = []
            if rep_path and not manifest.failed:
                import json as _json

                with open(rep_path, encoding="utf-8") as fh:
                    prof = _json.load(fh).get("contraction_profile", [])
            profiles.append(prof)
        outputs["contraction_figure"] = sweep_figure(
            os.path.join(out, "sweep_contraction.png"),
            [c[0] for _, c, _ in results], profiles, short[0])
    summary = {
        "points": len(combos),
        "failed_points": int(n_failed),
        "_condition_numbers": conds,
    }
    if n_failed:
        summary["status"] = "failed"
        summary["error"] = f"{n_failed} of {len(combos)} sweep points failed"
    return outputs, summary


def _drive_commutator(sc, out, threads, figures, verbose):
    kind = ModelKind(sc.kind, sc.boundary)
    n_full = sc.n_modes
    resolutions = sorted({max(4, n_full // 4), max(4, n_full // 2),
                          max(4, (3 * n_full) // 4), n_full})
    exponents = (0.5, 1.0)
    table = {s: [] for s in exponents}
    for ni in resolutions:
        gi = max(4 * ni, round(sc.grid_size * ni / n_full))
        model_i = build_model(kind, sc.length, sc.beta, ni, gi)
        obs_i = build_observation(model_i, sc.omega, sc.window, sc.smoothing)
        for s in exponents:
            table[s].append(commutator_diagnostic(model_i, obs_i, s, sc.sigma,
                                                  eps=sc.eps))
    shash = sc.scenario_hash()
    tpath = os.path.join(out, "commutator_table.csv")
    cols = [("n_modes", [float(n) for n in resolutions])]
    for s in exponents:
        cols.append((f"norm_s{s:g}".replace(".", "p"), table[s]))
    write_series_csv(tpath, cols, shash)
    outputs = {"table": tpath}
    if figures:
        from .figures import commutator_figure

        outputs["growth_figure"] = commutator_figure(
            os.path.join(out, "commutator_growth.png"), resolutions, table)
    summary = {f"norm_s{s:g}_at_full".replace(".", "p"): table[s][-1]
               for s in exponents}
    if verbose:
        for s in exponents:
            print(f"commutator s={s:g}: {table[s][-1]:.6e} at N={n_full}")
    return outputs, summary
