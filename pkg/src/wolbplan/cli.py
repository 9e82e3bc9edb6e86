"""Config-driven command line for planning and simulation experiments.

Every run writes a manifest (the fully resolved config plus library
versions) alongside its CSV/JSON outputs, so results are replayable from
the output directory alone.  Exit codes: 0 success, 1 config error,
2 solver failure, 3 validation failure.
"""

from __future__ import annotations

import csv
import json
import platform
import sys
import time
from pathlib import Path

import click
import numpy as np
import yaml

from . import __version__, rates
from .domain import build_grid, eval_K, load_K_csv
from .dynamics import check_hypothesis_H, propagate
from .params import BioParams, ParameterError, theta
from .pde import PdeConfig, SolverError, diffusion_limit_sweep, simulate_pde
from .planner import Budget, solve
from .presets import resolve_config
from .reference import cost_full, simulate_two_species
from .validation import run_validation

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_VALIDATION = 3

_FLOAT_FMT = "%.12g"


def _fmt(value) -> str:
    if isinstance(value, float):
        return _FLOAT_FMT % value
    return str(value)


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _load_config(config_path, preset, output, seed):
    overrides = {}
    if config_path is not None:
        with open(config_path) as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise KeyError("config file must hold a mapping")
        overrides = loaded
    cfg = resolve_config(preset, overrides)
    if output is not None:
        cfg["output"] = str(output)
    if seed is not None:
        cfg["seed"] = int(seed)
    cfg.setdefault("output", "runs/latest")
    return cfg


def _build_problem(cfg):
    params = BioParams(**cfg["params"])
    gcfg = cfg["grid"]
    grid = build_grid(gcfg["dim"], gcfg["extents"], gcfg["resolution"])
    lcfg = cfg["landscape"]
    if lcfg.get("table_csv"):
        K = load_K_csv(lcfg["table_csv"], grid, lcfg.get("K0"))
    else:
        K = eval_K(lcfg["kind"], lcfg["K0"], grid)
    budget = Budget(**cfg["budget"])
    return params, grid, K, budget


def _write_manifest(outdir: Path, cfg, extra=None):
    manifest = {
        "config": cfg,
        "versions": {
            "wolbplan": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }
    if extra:
        manifest.update(extra)
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)


def _common_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(exists=True),
                      default=None, help="YAML config file")(fn)
    fn = click.option("--output", type=click.Path(), default=None,
                      help="output directory")(fn)
    fn = click.option("--preset", default=None, help="named experiment preset")(fn)
    fn = click.option("--seed", type=int, default=None, help="random seed")(fn)
    fn = click.option("--threads", type=int, default=1,
                      help="worker threads for batched kernels")(fn)
    return fn


def _enter(config_path, preset, output, seed, threads):
    try:
        cfg = _load_config(config_path, preset, output, seed)
    except (KeyError, ValueError, ParameterError, yaml.YAMLError, OSError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    if threads and threads > 1:
        try:
            import numba

            numba.set_num_threads(threads)
        except Exception:
            pass
    outdir = Path(cfg["output"])
    outdir.mkdir(parents=True, exist_ok=True)
    return cfg, outdir


@click.group()
@click.version_option(version=__version__)
def main():
    """Optimal mosquito-release planning experiments."""


def _plan_case(params, grid, K, budget, outdir: Path, tag: str):
    start = time.perf_counter()
    plan = solve(K, grid, budget, params)
    wall = time.perf_counter() - start
    pT_half = propagate(plan.p0_star.values, budget.T / 2.0, params).pT
    header = (["x", "K", "p0", "u0", "pT_half", "pT"] if grid.dim == 1
              else ["x", "y", "K", "p0", "u0", "pT_half", "pT"])
    rows = []
    for i in range(grid.n_cells):
        rows.append([
            *[float(c) for c in grid.centers[i]], float(K.samples[i]),
            float(plan.p0_star.values[i]), float(plan.u0_star.values[i]),
            float(pT_half[i]), float(plan.pT[i]),
        ])
    _write_csv(outdir / f"plan_{tag}.csv", header, rows)
    plan.to_json(outdir / f"plan_{tag}.json", K, grid)
    summary = {
        "case": tag,
        "cost": plan.cost,
        "lambda_star": plan.lambda_star,
        "regime": plan.regime,
        "budget_used": plan.budget_used,
        "theta": theta(params),
        "kkt_max_residuals": {k: v for k, v in plan.kkt.items() if k != "cases"},
        "wall_time_seconds": round(wall, 3),
    }
    if plan.regime == "saturated":
        summary["notice"] = plan.diagnostics.get("note")
    return summary


@main.command("plan")
@_common_options
def plan_cmd(config_path, output, preset, seed, threads):
    """Solve the optimal single-release plan (all preset cases)."""
    cfg, outdir = _enter(config_path, preset, output, seed, threads)
    try:
        params, grid, K, budget = _build_problem(cfg)
        cases = cfg.get("cases") or [{"C": budget.C, "T": budget.T}]
        summaries = []
        for case in cases:
            b = Budget(C=case.get("C", budget.C), M=case.get("M", budget.M),
                       T=case.get("T", budget.T))
            tag = f"C{b.C:g}_T{b.T:g}"
            summaries.append(_plan_case(params, grid, K, b, outdir, tag))
        with open(outdir / "summary.json", "w") as fh:
            json.dump(summaries, fh, indent=2)
        _write_manifest(outdir, cfg)
    except (ParameterError, KeyError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except (SolverError, ValueError, RuntimeError) as exc:
        click.echo(f"solver failure: {exc}", err=True)
        sys.exit(EXIT_SOLVER)
    click.echo(f"wrote {len(summaries)} plan(s) to {outdir}")


@main.command("simulate-pde")
@_common_options
def simulate_pde_cmd(config_path, output, preset, seed, threads):
    """Plan at D=0, then simulate the release under diffusion."""
    cfg, outdir = _enter(config_path, preset, output, seed, threads)
    try:
        params, grid, K, budget = _build_problem(cfg)
        pcfg = cfg["pde"]
        config = PdeConfig(D=pcfg["D"], dt=pcfg["dt"], scheme=pcfg["scheme"],
                           psi_variant=pcfg["psi_variant"])
        plan = solve(K, grid, budget, params)
        p0 = rates.G_inverse(plan.u0_star.values / K.samples, params)
        snaps = list(np.linspace(0.0, budget.T, 11))
        start = time.perf_counter()
        run = simulate_pde(p0, K, grid, budget.T, config, params,
                           snapshot_times=snaps)
        wall = time.perf_counter() - start
        rows = []
        for j, t in enumerate(run.times):
            for i in range(grid.n_cells):
                rows.append([float(t), i, float(run.snapshots[j, i])])
        _write_csv(outdir / "trajectory.csv", ["t", "cell_index", "p"], rows)
        with open(outdir / "summary.json", "w") as fh:
            json.dump({
                "cost": run.cost, "plan_cost_D0": plan.cost,
                "D": config.D, "dt": config.dt, "scheme": config.scheme,
                "theta": theta(params), "wall_time_seconds": round(wall, 3),
            }, fh, indent=2)
        _write_manifest(outdir, cfg)
    except (ParameterError, KeyError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except (SolverError, ValueError, RuntimeError) as exc:
        click.echo(f"solver failure: {exc}", err=True)
        sys.exit(EXIT_SOLVER)
    click.echo(f"wrote trajectory to {outdir}")


@main.command("limit-sweep")
@_common_options
def limit_sweep_cmd(config_path, output, preset, seed, threads):
    """Vanishing-diffusion convergence study."""
    cfg, outdir = _enter(config_path, preset, output, seed, threads)
    try:
        params, grid, K, budget = _build_problem(cfg)
        D_list = cfg["sweep"]["D_list"]
        start = time.perf_counter()
        rows = diffusion_limit_sweep(K, grid, budget, params, D_list,
                                     dt=cfg["pde"]["dt"],
                                     psi_variant=cfg["pde"]["psi_variant"])
        wall = time.perf_counter() - start
        _write_csv(
            outdir / "sweep.csv",
            ["D", "cost", "cost_reoptimized", "l1_distance_to_D0_plan"],
            [[r["D"], r["cost_plan0"], r.get("cost_reopt", ""),
              r.get("l1_distance", "")] for r in rows],
        )
        with open(outdir / "summary.json", "w") as fh:
            json.dump({"rows": rows, "wall_time_seconds": round(wall, 3)},
                      fh, indent=2)
        _write_manifest(outdir, cfg)
    except (ParameterError, KeyError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except (SolverError, ValueError, RuntimeError) as exc:
        click.echo(f"solver failure: {exc}", err=True)
        sys.exit(EXIT_SOLVER)
    click.echo(f"wrote sweep to {outdir}")


@main.command("two-species")
@_common_options
def two_species_cmd(config_path, output, preset, seed, threads):
    """Simulate the full wild/infected competition model for a planned release."""
    cfg, outdir = _enter(config_path, preset, output, seed, threads)
    try:
        params, grid, K, budget = _build_problem(cfg)
        eps = cfg["two_species"]["epsilon"]
        plan = solve(K, grid, budget, params)
        start = time.perf_counter()
        traj = simulate_two_species(plan.u0_star.values, K, grid, budget.T,
                                    eps, params,
                                    n_snapshots=cfg["two_species"]["n_snapshots"])
        wall = time.perf_counter() - start
        rows = []
        prop = traj.proportion
        for j, t in enumerate(traj.times):
            for i in range(grid.n_cells):
                rows.append([float(t), i, float(traj.n1[j, i]),
                             float(traj.n2[j, i]), float(prop[j, i])])
        _write_csv(outdir / "trajectory.csv",
                   ["t", "cell_index", "n1", "n2", "p"], rows)
        with open(outdir / "summary.json", "w") as fh:
            json.dump({
                "epsilon": eps,
                "cost_full": cost_full(traj.n1[-1], traj.n2[-1], K, grid,
                                       params, eps),
                "plan_cost_reduced": plan.cost,
                "wall_time_seconds": round(wall, 3),
            }, fh, indent=2)
        _write_manifest(outdir, cfg)
    except (ParameterError, KeyError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except (SolverError, ValueError, RuntimeError) as exc:
        click.echo(f"solver failure: {exc}", err=True)
        sys.exit(EXIT_SOLVER)
    click.echo(f"wrote two-species trajectory to {outdir}")


def hypothesis_sweep(s_h_values, b2_0_values, samples_per_cell, T_list, seed,
                     n_grid=256, n_steps=1000, T_mode="relative"):
    """Random (d1, d2) draws per (s_h, b2_0) cell, classified by the sign test.

    Sampling uses a counter-based generator keyed by (seed, cell, sample),
    so any subset of cells can be reproduced independently.  The sign test
    depends on the horizon; with ``T_mode='relative'`` the entries of
    ``T_list`` are multiples of each draw's own regime threshold T0, which
    probes the transition where violations concentrate.
    """
    if samples_per_cell < 100:
        raise ValueError("samples_per_cell must be at least 100")
    if T_mode not in ("relative", "absolute"):
        raise ValueError("T_mode must be 'relative' or 'absolute'")
    from .params import compute_T0

    rows = []
    for ci, (sh, b2) in enumerate(
        [(sh, b2) for sh in s_h_values for b2 in b2_0_values]
    ):
        if b2 <= 1.0 - sh:
            continue  # the unstable threshold would exceed 1 for every draw
        for si in range(samples_per_cell):
            rng = np.random.Generator(
                np.random.Philox(key=[seed, (ci << 32) + si])
            )
            params = None
            for _ in range(1000):
                d1, d2 = np.sort(rng.uniform(0.0, b2, 2))
                if d1 <= 0.0:
                    continue
                try:
                    params = BioParams(b1_0=1.0, b2_0=b2, d1=d1, d2=d2, s_h=sh)
                    break
                except ParameterError:
                    continue
            if params is None:
                continue
            if T_mode == "relative":
                T0 = compute_T0(params)
                horizons = [r * T0 for r in T_list]
            else:
                horizons = list(T_list)
            holds = all(
                check_hypothesis_H(
                    params, T, n_grid=n_grid,
                    n_steps=max(n_steps, int(T * 150)),
                )["holds"]
                for T in horizons
            )
            rows.append([sh, b2, float(params.d1), float(params.d2),
                         theta(params), holds])
    return rows


@main.command("hypothesis-sweep")
@_common_options
def hypothesis_sweep_cmd(config_path, output, preset, seed, threads):
    """Sample the parameter space and classify the unimodality hypothesis."""
    cfg, outdir = _enter(config_path, preset, output, seed, threads)
    try:
        sw = cfg["sweep"]
        start = time.perf_counter()
        rows = hypothesis_sweep(
            sw["s_h_values"], sw["b2_0_values"], sw["samples_per_cell"],
            sw["T_list"], cfg["seed"], n_grid=sw["n_grid"],
            n_steps=sw["n_steps"], T_mode=sw.get("T_mode", "relative"),
        )
        wall = time.perf_counter() - start
        _write_csv(outdir / "hypothesis.csv",
                   ["s_h", "b2_0", "d1", "d2", "theta", "holds"], rows)
        frac = {}
        for sh, b2, *_rest, holds in rows:
            key = f"s_h={sh:g},b2_0={b2:g}"
            tot, good = frac.get(key, (0, 0))
            frac[key] = (tot + 1, good + bool(holds))
        with open(outdir / "summary.json", "w") as fh:
            json.dump({
                "fraction_holds": {k: g / t for k, (t, g) in frac.items()},
                "n_rows": len(rows),
                "wall_time_seconds": round(wall, 3),
            }, fh, indent=2)
        _write_manifest(outdir, cfg)
    except (ParameterError, KeyError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except (ValueError, RuntimeError) as exc:
        click.echo(f"solver failure: {exc}", err=True)
        sys.exit(EXIT_SOLVER)
    click.echo(f"wrote {len(rows)} hypothesis samples to {outdir}")


@main.command("validate")
@_common_options
def validate_cmd(config_path, output, preset, seed, threads):
    """Run the desk-scale acceptance checks and emit a report."""
    cfg, outdir = _enter(config_path, preset, output, seed, threads)
    report = run_validation(fast=True)
    with open(outdir / "validation.json", "w") as fh:
        json.dump(report, fh, indent=2)
    _write_manifest(outdir, cfg)
    for check in report["checks"]:
        click.echo(f"[{check['status']:7s}] {check['name']}: {check['detail']}")
    if not report["passed"]:
        click.echo("validation failed", err=True)
        sys.exit(EXIT_VALIDATION)
    click.echo("all validation checks passed")


if __name__ == "__main__":
    main()
