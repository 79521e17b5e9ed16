"""Command-line front end: ``hsxdiff {equilibrium,evolve,sweep,stability}``.

Exit codes: 0 success, 1 solver failure, 2 configuration or usage error.
A run writes its CSV files first and ``manifest.json`` last; when the
configuration is invalid nothing is written.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, default_config, load_config
from .discretization import Semidiscretization
from .entropy import EntropyDomainError, InversionError
from .grid import Grid1D, SystemState
from .io import write_columns, write_csv, write_manifest, write_state_csv, atomic_write_text
from .model import ParameterError, compute_coefficients
from .stability import StabilityError, assemble_linearization, leading_eigenvalue_sweep, spectrum, stability_verdict
from .stationary import (
    NewtonDivergence,
    StationarityError,
    SweepRecord,
    equilibrium_pointparticle,
    fit_loglog_slope,
    solve_entropy_stationary,
    sweep,
)
from .timestepper import (
    IntegrationError,
    RegularizedStepConfig,
    integrate_mol,
    integrate_regularized,
    stationarity_threshold,
)

log = logging.getLogger("hsxdiff")

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2

SOLVER_ERRORS = (
    NewtonDivergence,
    StationarityError,
    IntegrationError,
    StabilityError,
    InversionError,
    EntropyDomainError,
    ParameterError,
    np.linalg.LinAlgError,
)


class Outputs:
    """Tracks files written by one command so a failed run can remove them."""

    def __init__(self, root: Path):
        self.root = root
        self.paths = []

    def add(self, path) -> Path:
        self.paths.append(Path(path))
        return Path(path)

    def discard(self):
        for p in self.paths:
            try:
                p.unlink()
            except FileNotFoundError:
                pass
        self.paths.clear()


# --------------------------------------------------------------------------
# plot scripts
# --------------------------------------------------------------------------

_PLOT_HEAD = '''"""Plot script written by hsxdiff; run it next to the CSV files it reads."""
import numpy as np
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt


def load(name):
    return np.genfromtxt(name, delimiter=",", names=True)

'''

PLOT_PROFILE = _PLOT_HEAD + '''
d = load("{csv}")
fig, ax = plt.subplots(figsize=(6, 4))
ax.plot(d["x"], d["r"], "r-", label="r")
ax.plot(d["x"], d["b"], "b-", label="b")
ax.set_xlabel("x")
ax.set_ylabel("density")
ax.legend()
fig.tight_layout()
fig.savefig("{png}", dpi=150)
'''

PLOT_TRAJECTORY = _PLOT_HEAD + '''
d = load("trajectory.csv")
fig, axes = plt.subplots(1, 2, figsize=(10, 4))
axes[0].plot(d["t"], d["entropy"] - d["entropy"][-1] + 1e-300)
axes[0].set_yscale("log")
axes[0].set_xlabel("t")
axes[0].set_ylabel("E(t) - E(final)")
axes[1].plot(d["t"], np.maximum(d["dissipation"], 1e-300))
axes[1].set_yscale("log")
axes[1].set_xlabel("t")
axes[1].set_ylabel("dissipation")
fig.tight_layout()
fig.savefig("trajectory.png", dpi=150)
'''

PLOT_SWEEP = _PLOT_HEAD + '''
d = load("sweep.csv")
ok = d["ok"] > 0
x = d["value"][ok]
fig, axes = plt.subplots(1, 2, figsize=(10, 4))
for ax, kind in zip(axes, ("abs", "rel")):
    ax.plot(x, d[kind + "_err_r"][ok], "ro-", label="r")
    ax.plot(x, d[kind + "_err_b"][ok], "bs-", label="b")
    ax.set_xlabel("{axis}")
    ax.set_ylabel(kind + ". L2 error")
    ax.legend()
    if {loglog}:
        ax.set_xscale("log")
        ax.set_yscale("log")
fig.tight_layout()
fig.savefig("sweep.png", dpi=150)
'''

PLOT_SPECTRUM = _PLOT_HEAD + '''
d = load("spectrum.csv")
fig, ax = plt.subplots(figsize=(6, 4))
ax.plot(d["real"], d["imag"], "k.")
ax.set_xscale("symlog")
ax.set_xlabel("Re lambda")
ax.set_ylabel("Im lambda")
fig.tight_layout()
fig.savefig("spectrum.png", dpi=150)
'''

PLOT_LEADING = _PLOT_HEAD + '''
d = load("leading_eigenvalues.csv")
fig, ax = plt.subplots(figsize=(6, 4))
ax.loglog(d["eps"], d["gap"], "ko-")
ax.set_xlabel("eps")
ax.set_ylabel("|lambda(B + C) - lambda(B)|")
fig.tight_layout()
fig.savefig("leading_eigenvalues.png", dpi=150)
'''


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _grid(cfg: RunConfig) -> Grid1D:
    return Grid1D.for_params(cfg.params, cfg.get("grid", "n_cells"))


def cmd_equilibrium(cfg: RunConfig, out: Path, outs: Outputs, args) -> dict:
    params = cfg.params
    coeffs = compute_coefficients(params)
    eq = cfg.sections["equilibrium"]
    stat = solve_entropy_stationary(params, coeffs, eq["tol"], grid=_grid(cfg), max_iter=eq["max_iter"])
    outs.add(write_state_csv(out / "equilibrium_profile.csv", stat.state(), params))
    outs.add(write_csv(out / "newton_history.csv", ["iteration", "residual"], enumerate(stat.history)))
    outs.add(atomic_write_text(out / "plot_equilibrium.py", PLOT_PROFILE.format(csv="equilibrium_profile.csv", png="equilibrium.png")))
    print(
        f"Newton converged in {stat.iterations} iterations, residual {stat.residual_norm:.3e}; "
        f"masses {stat.mass_r:.12g} / {stat.mass_b:.12g}"
    )
    return {
        "iterations": stat.iterations,
        "residual_norm": stat.residual_norm,
        "chi_r": stat.chi_r,
        "chi_b": stat.chi_b,
        "mass_r": stat.mass_r,
        "mass_b": stat.mass_b,
        "tolerances": {"newton_tol": eq["tol"], "max_iter": eq["max_iter"]},
    }


def _initial_state(cfg: RunConfig) -> SystemState:
    params = cfg.params
    grid = _grid(cfg)
    if cfg.get("evolve", "initial") == "pointparticle":
        return equilibrium_pointparticle(params, grid)
    return SystemState.uniform(grid, params.N_r / params.length, params.N_b / params.length)


def _trajectory_rows(traj):
    for t, st, rep in zip(traj.times, traj.states, traj.reports):
        yield (t, st.mass_r, st.mass_b, rep.value, rep.dissipation, rep.d0, rep.potential_bound)


def cmd_evolve(cfg: RunConfig, out: Path, outs: Outputs, args) -> dict:
    params = cfg.params
    coeffs = compute_coefficients(params)
    ev = cfg.sections["evolve"]
    stepper = args.stepper or ev["stepper"]
    state0 = _initial_state(cfg)
    result = {"stepper": stepper}
    if stepper == "mol":
        traj = integrate_mol(
            state0,
            ev["t_end"],
            params,
            coeffs,
            rtol=ev["rtol"],
            atol=ev["atol"],
            stop_when_stationary=ev["stop_when_stationary"],
            form=ev["form"],
        )
        rhs_norm = traj.final_rhs_norm
        result["tolerances"] = {"rtol": ev["rtol"], "atol": ev["atol"], "form": ev["form"]}
    else:
        step_cfg = RegularizedStepConfig(ev["tau"], mass_conserving=ev["mass_conserving"])
        traj = integrate_regularized(state0, ev["n_steps"], step_cfg, params, coeffs)
        infos = traj.stats.pop("steps_info")
        rows = []
        for k, info in enumerate(infos, start=1):
            rows.append(
                (
                    k,
                    traj.times[k],
                    info.entropy_prev,
                    info.entropy_new,
                    info.dissipation,
                    info.regularization,
                    info.d0,
                    info.potential_bound,
                    info.residual,
                    info.inequality_gap,
                    info.lower_bound_gap,
                    info.slack,
                    info.inequality_gap >= -info.slack and info.lower_bound_gap >= -info.slack,
                )
            )
        header = [
            "step", "t", "entropy_prev", "entropy_new", "tau_Q", "tau2_R", "tau_D0", "tau_C",
            "newton_residual", "gap", "lower_bound_gap", "slack", "holds",
        ]
        outs.add(write_csv(out / "entropy_balance.csv", header, rows))
        semi = Semidiscretization(state0.grid, params, coeffs, form="gradient")
        rhs_norm = float(np.max(np.abs(semi.rhs_packed(traj.final.pack()))))
        result["inequality_holds_every_step"] = all(r[-1] for r in rows)
        result["tolerances"] = {"tau": ev["tau"], "mass_conserving": ev["mass_conserving"]}
    header = ["t", "mass_r", "mass_b", "entropy", "dissipation", "d0", "potential_bound"]
    outs.add(write_csv(out / "trajectory.csv", header, _trajectory_rows(traj)))
    outs.add(write_state_csv(out / "final_profile.csv", traj.final, params))
    every = ev["snapshot_every"]
    if every > 0:
        for k in range(0, len(traj.states), every):
            outs.add(write_state_csv(out / "snapshots" / f"profile_{k:06d}.csv", traj.states[k], params))
    outs.add(atomic_write_text(out / "plot_trajectory.py", PLOT_TRAJECTORY))
    outs.add(atomic_write_text(out / "plot_final.py", PLOT_PROFILE.format(csv="final_profile.csv", png="final.png")))
    E = traj.entropies()
    result.update(
        stationary=bool(rhs_norm <= stationarity_threshold(params)),
        final_rhs_norm=rhs_norm,
        t_final=traj.times[-1],
        accepted_steps=len(traj.times) - 1,
        max_mass_drift=traj.max_mass_drift(),
        max_entropy_increase=float(np.max(np.diff(E))) if E.size > 1 else 0.0,
        stats={k: v for k, v in traj.stats.items() if not isinstance(v, list)},
    )
    print(
        f"{stepper}: t={result['t_final']:.6g} after {result['accepted_steps']} steps, "
        f"max|rhs|={rhs_norm:.3e}, stationary={result['stationary']}, mass drift {result['max_mass_drift']:.2e}"
    )
    return result


def cmd_sweep(cfg: RunConfig, out: Path, outs: Outputs, args) -> dict:
    sw = cfg.sections["sweep"]
    axis = sw["axis"]
    records = sweep(
        cfg.params,
        axis,
        sw["values"],
        n_cells=cfg.get("grid", "n_cells"),
        newton_tol=sw["newton_tol"],
        jobs=args.jobs,
        t_max=sw["t_max"],
    )
    header = list(SweepRecord.__dataclass_fields__)
    outs.add(write_csv(out / "sweep.csv", header, ([getattr(r, k) for k in header] for r in records)))
    outs.add(atomic_write_text(out / "plot_sweep.py", PLOT_SWEEP.format(axis=axis, loglog=axis == "epsilon")))
    ok = [r for r in records if r.ok]
    for r in records:
        status = "ok" if r.ok else f"FAILED ({r.message})"
        print(f"{axis}={r.value:.6g}: abs_err_r={r.abs_err_r:.4e} rel_err_r={r.rel_err_r:.4e} {status}")
    result = {"axis": axis, "n_points": len(records), "n_failed": len(records) - len(ok)}
    if axis == "epsilon" and len(ok) >= 2:
        try:
            slope_r = fit_loglog_slope([r.value for r in ok], [r.abs_err_r for r in ok])
            slope_b = fit_loglog_slope([r.value for r in ok], [r.abs_err_b for r in ok])
            result.update(slope_abs_err_r=slope_r, slope_abs_err_b=slope_b)
            print(f"log-log slope of abs error: r {slope_r:.3f}, b {slope_b:.3f}")
        except ValueError as exc:
            print(f"slope fit skipped: {exc}")
    if not ok:
        raise StationarityError("every sweep point failed")
    return result


def cmd_stability(cfg: RunConfig, out: Path, outs: Outputs, args) -> dict:
    params = cfg.params
    coeffs = compute_coefficients(params)
    st = cfg.sections["stability"]
    eq = cfg.sections["equilibrium"]
    stat = solve_entropy_stationary(params, coeffs, eq["tol"], grid=_grid(cfg), max_iter=eq["max_iter"])
    ops = assemble_linearization(stat, params, coeffs, perturbation=st["perturbation"])
    res = spectrum(ops, k=st["count"])
    full = spectrum(ops)
    rows = [(i, v.real, v.imag) for i, v in enumerate(full.eigenvalues)]
    outs.add(write_csv(out / "spectrum.csv", ["index", "real", "imag"], rows))
    outs.add(atomic_write_text(out / "plot_spectrum.py", PLOT_SPECTRUM))
    result = {
        "leading": res.leading,
        "null_eigenvalues": [complex(v).real for v in res.null],
        "null_ok": res.null_ok,
        "stable": res.stable and res.null_ok,
        "max_imag": res.max_imag,
        "C_construction": ops.meta["C"],
        "top": [complex(v).real for v in res.nonzero],
    }
    verdict = stability_verdict(res)
    if st["perturbation"]:
        pert = spectrum(ops, perturbed=True)
        rows = [(i, v.real, v.imag) for i, v in enumerate(pert.eigenvalues)]
        outs.add(write_csv(out / "spectrum_perturbed.csv", ["index", "real", "imag"], rows))
        result.update(leading_perturbed=pert.leading, stable_perturbed=pert.stable and pert.null_ok)
        print(f"perturbed pencil: {stability_verdict(pert)}")
    if st["eps_values"]:
        table = leading_eigenvalue_sweep(params, st["eps_values"], cfg.get("grid", "n_cells"), jobs=args.jobs)
        outs.add(write_csv(out / "leading_eigenvalues.csv", ["eps", "lambda", "lambda_perturbed", "gap"], table))
        outs.add(atomic_write_text(out / "plot_leading_eigenvalues.py", PLOT_LEADING))
        if len(table) >= 2 and all(row[3] > 0 for row in table):
            result["gap_slope"] = fit_loglog_slope([row[0] for row in table], [row[3] for row in table])
            print(f"log-log slope of the eigenvalue gap: {result['gap_slope']:.3f}")
    print(verdict)
    return result


COMMANDS = {
    "equilibrium": cmd_equilibrium,
    "evolve": cmd_evolve,
    "sweep": cmd_sweep,
    "stability": cmd_stability,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI configuration file (defaults are used without one)")
    common.add_argument("--out", type=Path, default=Path("hsxdiff-out"), help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("--stepper", choices=("mol", "regularized"), help="time stepper for evolve")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="hsxdiff", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "equilibrium": "stationary state by constrained entropy minimization",
        "evolve": "time integration (method of lines or regularized implicit Euler)",
        "sweep": "compare both stationary routes along a theta_r or epsilon sweep",
        "stability": "spectrum of the linearization at the stationary state",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config) if args.config else default_config()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out
    outs = Outputs(out)
    started = time.time()
    t0 = time.perf_counter()
    try:
        out.mkdir(parents=True, exist_ok=True)
        result = COMMANDS[args.command](cfg, out, outs, args)
    except SOLVER_ERRORS as exc:
        outs.discard()
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except BaseException:
        outs.discard()
        raise
    manifest = {
        "command": args.command,
        "version": __version__,
        "config": cfg.echo(),
        "config_source": cfg.source,
        "config_sha256": cfg.sha256,
        "jobs": args.jobs,
        "timing": {"started_unix": started, "wall_seconds": time.perf_counter() - t0},
        "result": result,
    }
    write_manifest(out, manifest, outs.paths)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
