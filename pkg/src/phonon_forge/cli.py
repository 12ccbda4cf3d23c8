"""Command-line front end: ``phonon-forge <run-kind> --config FILE``."""
from __future__ import annotations

import argparse
import logging
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import __version__
from . import singlemode as sm
from .cache import DecompositionCache
from .cavity import (decay_rates, decompose, exact_population_trace, partition, revival_time, walled_array)
from .config import RUN_KINDS, ConfigError, ExperimentConfig, config_hash, load
from .crystal import build_coupling_matrix, time_in_seconds
from .output import RunWriter
from .twomode import TwoModeParams, phase_diagram, run, single_mode_consistency, spectrum

log = logging.getLogger("phonon_forge")

EXIT_OK, EXIT_CONFIG, EXIT_PHYSICS = 0, 2, 3


class StageError(RuntimeError):
    def __init__(self, stage, exc):
        super().__init__(f"{stage}: {type(exc).__name__}: {exc}")


def _map(fn, tasks, jobs):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, tasks))
    return [fn(t) for t in tasks]


# ---------------------------------------------------------------- cavity

def _design_cell(task):
    cfg, w, tw, cache_dir, cache_on = task
    base = cfg.array.spec()
    spec = walled_array(base, cfg.array.cavity_center, cfg.cavity.n_s, w, tw)
    part = partition(spec, cfg.array.cavity_center, cfg.cavity.n_s, w)
    cache = DecompositionCache(cache_dir, cache_on)
    modes = cache.get_or_compute(spec, part, lambda: decompose(build_coupling_matrix(spec), part))
    rep = decay_rates(modes, cfg.cavity.window)
    w0 = cfg.array.omega0
    rows = [{"mode": r["mode"], "mode_rank": i, "w": w, "omega_ot": tw / w0, **{k: r[k] for k in
             ("omega", "kappa", "gbar2", "rho", "window", "in_band")}} for i, r in enumerate(rep.rows())]
    walls = modes.omega_c[modes.wall_mode_flags].tolist()
    return rows, {"w": w, "omega_ot": tw / w0, "wall_mode_omega": walls,
                  "cache_hit": cache.hits > 0}


def run_cavity_design(cfg: ExperimentConfig, out: RunWriter, jobs, cache_dir, cache_on, timings):
    tasks = [(cfg, w, tw, cache_dir, cache_on) for tw in cfg.cavity.tweezers for w in cfg.cavity.walls]
    t0 = time.perf_counter()
    results = _map(_design_cell, tasks, jobs)
    timings["decompose_and_rates"] = time.perf_counter() - t0
    rows = [r for res in results for r in res[0]]
    cols = ["mode", "mode_rank", "w", "omega_ot", "omega", "kappa", "gbar2", "rho", "window", "in_band"]
    out.csv("decay_rates.csv", cols, rows)
    out.json("summary.json", {"run": "cavity-design", "n_s": cfg.cavity.n_s, "configurations": [r[1] for r in results]})
    if cfg.figures:
        from . import plotting
        plotting.decay_vs_wall(rows, out.path("decay_rates.png"))


def run_decay_verify(cfg: ExperimentConfig, out: RunWriter, jobs, cache_dir, cache_on, timings):
    base = cfg.array.spec()
    w0 = cfg.array.omega0
    cache = DecompositionCache(cache_dir, cache_on)
    rows = []
    for i, tw in enumerate(cfg.cavity.tweezers):
        for w in cfg.cavity.walls:
            t0 = time.perf_counter()
            spec = walled_array(base, cfg.array.cavity_center, cfg.cavity.n_s, w, tw)
            part = partition(spec, cfg.array.cavity_center, cfg.cavity.n_s, w)
            A = build_coupling_matrix(spec)
            modes = cache.get_or_compute(spec, part, lambda: decompose(A, part))
            rep = decay_rates(modes, cfg.cavity.window)
            j = cfg.decay_verify.mode
            if j >= len(rep.modes):
                raise ValueError(f"decay_verify.mode={j} but the cavity has {len(rep.modes)} modes")
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                trace = exact_population_trace(A, part, int(rep.modes[j]), cfg.decay_verify.t_max,
                                               n_samples=cfg.decay_verify.samples, modes=modes)
            kappa = float(rep.kappa[j])
            name = f"trace_w{w}_ot{i}.csv"
            out.csv(name, ["t", "population", "golden_rule"],
                    zip(trace.t.tolist(), trace.population.tolist(), np.exp(-kappa * trace.t).tolist()))
            rev = trace.first_revival()
            resid = trace.log_residual(kappa)
            rows.append({"omega_ot": tw / w0, "w": w, "mode": int(rep.modes[j]), "omega": float(rep.omega[j]),
                         "kappa_golden": kappa, "kappa_fit": trace.kappa_fit, "log_residual": resid,
                         "fit_residual": trace.fit_residual, "non_markovian": bool(resid > 0.2),
                         "t_revival_estimate": revival_time(part), "t_first_revival": np.nan if rev is None else rev,
                         "trace_file": name})
            timings[f"trace_{name}"] = time.perf_counter() - t0
            if cfg.figures:
                from . import plotting
                plotting.population_trace(trace.t, trace.population, kappa, out.path(name.replace(".csv", ".png")))
    out.csv("decay_verify.csv", list(rows[0]), rows)
    out.json("summary.json", {"run": "decay-verify", "rows": rows})


# ---------------------------------------------------------------- single mode

def run_single_mode(cfg: ExperimentConfig, out: RunWriter, jobs, cache_dir, cache_on, timings):
    c = cfg.singlemode
    mode = sm.CavityModeParams(c.omega, c.kappa, c.n_th)
    t0 = time.perf_counter()
    reports = sm.threshold_scan(c.eta_omega, mode, c.gamma, c.delta_b)
    timings["sweep"] = time.perf_counter() - t0
    rows = [r.row() for r in reports]
    out.csv("sweep.csv", ["eta_omega", "s", "mean_n", "g2", "gain_over_kappa", "linewidth", "mean_n_field"], rows)

    curves = []
    for x in c.lineshape_eta_omega:
        r = sm.steady_report(sm.DriveParams.from_eta_omega(x, c.gamma, c.delta_b), mode)
        curves.append((x, r))
    span = 4 * max(r.linewidth for _, r in curves)
    nu = np.linspace(c.omega - span, c.omega + span, 401)
    ls_rows = []
    for x, r in curves:
        S = sm.lineshape(mode, r.linewidth, r.mean_n, nu)
        S = S / S.max()
        ls_rows += [(x, float(v), float(s)) for v, s in zip(nu, S)]
    out.csv("lineshape.csv", ["eta_omega", "nu", "S_normalized"], ls_rows)

    summary = {"run": "single-mode", "omega": c.omega, "kappa": c.kappa, "n_th": c.n_th, "gamma": c.gamma,
               "delta_b": c.delta_b,
               "threshold_small_signal": sm.threshold_small_signal(mode, c.gamma, c.delta_b),
               "threshold_crossover_10nth": sm.threshold_crossover(mode, c.gamma, c.delta_b),
               "lineshape_fwhm": {f"{x:g}": r.linewidth for x, r in curves}}
    if c.evolve_eta_omega is not None:
        t0 = time.perf_counter()
        drive = sm.DriveParams.from_eta_omega(c.evolve_eta_omega, c.gamma, c.delta_b)
        traj = sm.evolve_distribution(sm.NumberDistribution.vacuum(10), drive, mode, c.evolve_t_max / c.kappa,
                                      dt=0.05 / c.kappa)
        timings["evolve"] = time.perf_counter() - t0
        out.csv("evolve.csv", ["t", "mean_n"], zip(traj.t.tolist(), traj.mean.tolist()))
        t90 = traj.time_to_fraction(0.9)
        summary["evolve"] = {"eta_omega": c.evolve_eta_omega, "steady_mean_n": traj.target_mean,
                             "t90": t90, "t90_over_kappa_inv": None if t90 is None else t90 * c.kappa,
                             "t99_over_kappa_inv": (traj.time_to_fraction(0.99) or np.nan) * c.kappa,
                             "t90_seconds": None if t90 is None else time_in_seconds(t90, cfg.array.omega0)}
    out.json("summary.json", summary)
    if cfg.figures:
        from . import plotting
        plotting.single_mode_sweep(rows, out.path("sweep.png"))


# ---------------------------------------------------------------- two mode

def _two_mode_params(cfg: ExperimentConfig) -> TwoModeParams:
    c = cfg.twomode
    return TwoModeParams(omega=c.omega, kappa=c.kappa, n_th=c.n_th, eta=(1.0, c.eta_ratio), delta=c.delta,
                         gamma=c.gamma, coupling_factor=c.coupling_factor)


def _trajectory_cell(task):
    params, x, e_com, e_br, kw = task
    rec = run(e_com, e_br, params.with_eta_omega(x), **kw)
    return x, e_com, e_br, rec


def run_two_mode(cfg: ExperimentConfig, out: RunWriter, jobs, cache_dir, cache_on, timings):
    c = cfg.twomode
    params = _two_mode_params(cfg)
    kw = {"t_max": c.t_max, "rtol": c.rtol}
    tasks = [(params, x, e1, e2, kw) for x in c.eta_omega for e1 in c.E_com0 for e2 in c.E_br0]
    t0 = time.perf_counter()
    results = _map(_trajectory_cell, tasks, jobs)
    timings["trajectories"] = time.perf_counter() - t0
    final, spec_rows = [], []
    for i, (x, e1, e2, rec) in enumerate(results):
        name = f"trajectory_{i:03d}.csv"
        step = 4
        E, n = rec.energy[:, ::step], rec.mean_n[:, ::step]
        out.csv(name, ["t", "E_COM", "E_BR", "n_COM", "n_BR", "sigma_z"],
                zip(rec.t[::step].tolist(), E[0].tolist(), E[1].tolist(), n[0].tolist(), n[1].tolist(),
                    rec.sigma_z[::step].tolist()))
        g2 = rec.g2()
        f = rec.frequencies()
        nf = rec.n_final
        final.append({"eta_omega": x, "E_COM0": e1, "E_BR0": e2, "n_COM_s": float(nf[0]), "n_BR_s": float(nf[1]),
                      "g2_COM": g2[0], "g2_BR": g2[1], "f_COM": f[0], "f_BR": f[1], "class": rec.classification,
                      "converged": rec.converged, "trajectory_file": name})
        sel = rec.t >= rec.t[-1] - rec.settle_window
        dt = rec.t[1] - rec.t[0]
        for q, label in enumerate(params.names):
            fr, amp = spectrum(rec.X[q, sel], dt)
            keep = fr <= 2 * max(params.omega)
            spec_rows += [(float(a), float(b), label, i) for a, b in zip(fr[keep], amp[keep])]
        if cfg.figures:
            from . import plotting
            plotting.energy_trajectory(rec.t, rec.energy, out.path(name.replace(".csv", ".png")))
    out.csv("final_states.csv", list(final[0]), final)
    out.csv("spectrum.csv", ["freq", "amplitude", "mode", "cell"], spec_rows)
    summary = {"run": "two-mode", "params": params.to_dict(), "cells": final}
    if c.onsets:
        summary["onsets"] = _onsets(params)
    out.json("summary.json", summary)


def _onsets(params):
    out = {}
    for q in (0, 1):
        r = single_mode_consistency(params, q)
        out[r.mode] = {"single_mode": r.single_mode, "moment_equations": r.moment_equations}
    return out


def run_phase_diagram(cfg: ExperimentConfig, out: RunWriter, jobs, cache_dir, cache_on, timings):
    c = cfg.twomode
    params = _two_mode_params(cfg)
    if len(c.E_br0) != 1:
        raise ConfigError("twomode.E_BR0", "phase-diagram keeps E_BR0 fixed; give one value")
    t0 = time.perf_counter()
    pd = phase_diagram(params, c.eta_omega, c.E_com0, c.E_br0[0], jobs=jobs, t_max=c.t_max, rtol=c.rtol)
    timings["phase_diagram"] = time.perf_counter() - t0
    rows = list(pd.rows())
    out.csv("phase_diagram.csv", ["eta_omega", "E_COM0", "n_COM_s", "n_BR_s", "class", "converged"], rows)
    classes = {}
    for r in rows:
        classes[r["class"]] = classes.get(r["class"], 0) + 1
    summary = {"run": "phase-diagram", "params": params.to_dict(), "E_BR0": c.E_br0[0], "class_counts": classes,
               "failed_cells": {f"{k[0]},{k[1]}": v for k, v in pd.errors.items()}}
    if c.onsets:
        summary["onsets"] = _onsets(params)
    out.json("summary.json", summary)
    if cfg.figures:
        from . import plotting
        plotting.phase_map(pd.eta_omega, pd.E_com0, pd.n_com, pd.n_br, out.path("phase_diagram.png"))


PIPELINES = {"cavity-design": ("cavity", run_cavity_design), "decay-verify": ("cavity", run_decay_verify),
             "single-mode": ("singlemode", run_single_mode), "two-mode": ("twomode", run_two_mode),
             "phase-diagram": ("twomode", run_phase_diagram)}


def execute(run_kind: str, config_path, *, jobs: int = 1, no_cache: bool = False, out_dir=None,
            figures: bool = False, cache_dir=None) -> dict:
    """Run one pipeline; returns the manifest.  Raises ConfigError or StageError."""
    cfg = load(config_path, run_kind)
    if figures:
        cfg = replace(cfg, figures=True)
    out_dir = out_dir or cfg.out
    cache_on = cfg.cache and not no_cache
    cache_dir = cache_dir or cfg.cache_dir
    chash = config_hash({**cfg.raw, "run": run_kind})
    writer = RunWriter(out_dir, cfg.array.omega0, chash, __version__)
    timings: dict = {}
    stage, fn = PIPELINES[run_kind]
    t0 = time.perf_counter()
    try:
        fn(cfg, writer, jobs, cache_dir, cache_on, timings)
    except ConfigError:
        writer.abort()
        raise
    except Exception as exc:
        writer.abort()
        raise StageError(stage, exc) from exc
    timings["total"] = time.perf_counter() - t0
    manifest = {"run": run_kind, "config_hash": chash, "artifact_version": __version__,
                "omega0_rad_s": cfg.array.omega0, "wall_clock_s": timings, "cache_enabled": cache_on}
    writer.commit(manifest)
    return {**manifest, "files": sorted(writer.files)}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phonon-forge",
                                description="Tweezer-defined phonon cavities and phonon lasing in ion crystals.")
    p.add_argument("run_kind", choices=RUN_KINDS)
    p.add_argument("--config", required=True, help="TOML experiment file")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps (default 1)")
    p.add_argument("--no-cache", action="store_true", help="recompute eigen-decompositions")
    p.add_argument("--cache-dir", default=None, help="decomposition cache location")
    p.add_argument("--out", default=None, help="output directory (overrides the config)")
    p.add_argument("--figures", action="store_true", help="also render PNG figures next to the CSV files")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        manifest = execute(args.run_kind, args.config, jobs=args.jobs, no_cache=args.no_cache, out_dir=args.out,
                           figures=args.figures, cache_dir=args.cache_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"physics error in {exc}", file=sys.stderr)
        return EXIT_PHYSICS
    print(f"{args.run_kind}: wrote {len(manifest['files'])} files to {args.out or 'configured output directory'} "
          f"(config {manifest['config_hash']}, {manifest['wall_clock_s']['total']:.1f} s)")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
