"""Command-line entry point.

Subcommands:

    structure build|negative|renorm-dim|extend
    kernels decompose|verify
    simulate
    jacobian-check
    gradient-check
    feller-test
    invariance-test
    global-test

Uniform flags: ``--config FILE`` (key=value sections), ``--set section.key=v``
(repeatable overrides), ``--seed``, ``--out`` (else $TORUSFLOW_OUT, else
./runs), ``--profile demo|full`` (demo shrinks the solver/experiment sizes
to laptop scale; full uses the documented defaults unchanged).

Every run writes its artifacts into one directory named
``<command>-<config hash>-s<seed>`` together with ``results.ndjson`` (one
criterion per line: name, value, stderr, threshold, pass), figures, and
``manifest.json`` listing every output with its checksum.  The exit status
is 0 exactly when all checks the subcommand ran have passed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import ensemble as en
from . import fields as fd
from . import gridio
from . import harness as hn
from . import kernels as kn
from . import noise as nz
from . import plots
from . import solver as sv
from . import structure as st
from .config import ConfigError, RunConfig, RunManifest, parse_config

DEMO_PROFILE = {
    "solver.N": "16",
    "solver.nu": "0.25",
    "solver.dt": "0.0078125",      # = 0.5/(0.25*16^2), the stability bound
    "solver.T": "0.5",
    "experiment.n_paths": "200",
    "experiment.t": "0.25",
    "experiment.stokes_steps": "4000",
    "experiment.stokes_paths": "16",
    "experiment.burn_in": "800",
    "kernels.points_per_unit": "128",
    "kernels.n_levels": "6",
}


class Runner:
    """Shared plumbing: output directory, result rows, manifest."""

    def __init__(self, command: str, cfg: RunConfig, seed: int, out_root: Path):
        self.command = command
        self.cfg = cfg
        self.seed = seed
        self.dir = out_root / f"{command.replace(' ', '-')}-{cfg.hash}-s{seed}"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.results = self.dir / "results.ndjson"
        self.results.unlink(missing_ok=True)
        self.rows: list[dict] = []
        self.manifest = RunManifest(command=command, config_hash=cfg.hash,
                                    seed=seed).start()

    def record(self, name: str, value, threshold=None, passed=True,
               stderr=None, **extra) -> bool:
        row = {"name": name, "value": value, "stderr": stderr,
               "threshold": threshold, "pass": bool(passed)}
        row.update(extra)
        self.rows.append(row)
        gridio.append_ndjson(self.results, row)
        mark = "PASS" if passed else "FAIL"
        se = f" +- {stderr:.3g}" if stderr is not None else ""
        thr = f" (threshold {threshold})" if threshold is not None else ""
        print(f"  [{mark}] {name}: {value}{se}{thr}")
        return bool(passed)

    def path(self, name: str) -> Path:
        return self.dir / name

    def finish(self) -> int:
        (self.dir / "config.txt").write_text(self.cfg.canonical_text())
        for p in sorted(self.dir.iterdir()):
            if p.name != "manifest.json" and p.is_file():
                self.manifest.add_output(p)
        self.manifest.write(self.dir / "manifest.json")
        ok = all(r["pass"] for r in self.rows)
        print(f"{self.command}: {'all checks passed' if ok else 'FAILURES'} "
              f"-> {self.dir}")
        return 0 if ok else 1


# ---------------------------------------------------------------------------
# structure subcommands
# ---------------------------------------------------------------------------

def _basis_json(basis, spec, limit_degree=None):
    entries = []
    for e in basis.entries:
        if limit_degree is not None and e.degree >= limit_degree:
            continue
        entries.append({"symbol": st.format_symbol(e.symbol),
                        "degree": str(e.degree), "level": e.level,
                        "tag": e.tag, "shape": st.shape_of(e.symbol)})
    return entries


def run_structure(sub: str, run: Runner, args) -> int:
    cfg = run.cfg
    spec = cfg.structure_spec()
    basis_cut, feeder_cut = cfg.structure_cuts()

    basis = st.build_structure(spec, basis_cut=basis_cut, feeder_cut=feeder_cut)
    neg = st.negative_sector(basis)
    shapes = sorted({st.shape_of(s) for s, _ in neg})

    if sub in ("build", "negative"):
        table = run.path(f"structure_{sub}.txt")
        with open(table, "w") as fh:
            fh.write(f"# d={spec.d} alpha={spec.alpha} gamma_cut={spec.gamma_cut} "
                     f"basis_cut={basis.basis_cut} feeder_cut={basis.feeder_cut}\n")
            fh.write(f"# entries={len(basis.entries)} negative={len(neg)} "
                     f"shapes={len(shapes)} stabilized_level={basis.stabilized_level}\n")
            rows = neg if sub == "negative" else [(e.symbol, e.degree)
                                                  for e in basis.entries]
            for sym, deg in rows:
                entry = basis.entry(sym)
                fh.write(f"{st.format_symbol(sym)}\t{deg}\t{entry.level}\t{entry.tag}\n")
        doc = {
            "spec": {"d": spec.d, "alpha": str(spec.alpha),
                     "kappa": str(spec.kappa), "gamma_cut": str(spec.gamma_cut)},
            "counts": {"entries": len(basis.entries), "negative": len(neg),
                       "shapes": len(shapes)},
            "stabilized_level": basis.stabilized_level,
            "negative_stabilized_level": basis.negative_stabilized_level,
            "shapes": shapes,
            "growth_report": basis.growth_report,
            "negative_sector": _basis_json(basis, spec, limit_degree=Fraction(0))
            + [{"symbol": "1", "degree": "0", "level": 0, "tag": "P", "shape": "1"}],
        }
        run.path(f"structure_{sub}.json").write_text(
            json.dumps(doc, indent=1, sort_keys=True))
        expected = {3: 9, 2: 3}.get(spec.d)
        run.record("negative_shape_count", len(shapes), threshold=expected,
                   passed=(expected is None or len(shapes) == expected))
        run.record("negative_sector_size", len(neg))
        for sh in shapes:
            print(f"    shape: {sh}")
    elif sub == "renorm-dim":
        dim = st.renorm_dimension(spec)
        expected = {3: 177228, 2: 16}.get(spec.d)
        doc = {"d": spec.d, "alpha": str(spec.alpha), "dimension": dim,
               "families": list(st.RenormVector.family_names(spec))}
        run.path("renorm_dim.json").write_text(json.dumps(doc, indent=1))
        run.record("renorm_dimension", dim, threshold=expected,
                   passed=(expected is None or dim == expected))
    elif sub == "extend":
        ext = st.extend_with_shifts(basis)
        plain = {e.symbol for e in basis.entries}
        news = [e for e in ext.entries if e.symbol not in plain]
        bad = [e for e in news if e.degree <= 0]
        doc = {"original_entries": len(basis.entries),
               "extended_entries": len(ext.entries),
               "new_symbols": len(news),
               "new_sample": [{"symbol": st.format_symbol(e.symbol),
                               "degree": str(e.degree)} for e in news[:20]]}
        run.path("structure_extend.json").write_text(json.dumps(doc, indent=1))
        run.record("extension_conservative",
                   int(len(plain - {e.symbol for e in ext.entries})),
                   threshold=0, passed=not (plain - {e.symbol for e in ext.entries}))
        run.record("hatted_strictly_positive", len(bad), threshold=0,
                   passed=not bad)
    return run.finish()


# ---------------------------------------------------------------------------
# kernels subcommands
# ---------------------------------------------------------------------------

def run_kernels(sub: str, run: Runner, args) -> int:
    cfg = run.cfg
    kc = cfg.values["kernels"]
    stack = kn.leray_kernel_stack(d=kc["d"], points_per_unit=kc["points_per_unit"],
                                  n_levels=kc["n_levels"],
                                  moment_order=kc["moment_order"])
    grid = stack.grid
    pts = np.stack(np.meshgrid(*grid.axes(), indexing="ij"), axis=-1)
    samples = kn.leray_component(pts, 0, 0)

    if sub == "decompose":
        levels = np.stack(stack.levels)
        gridio.write_grid(run.path("leray_levels.grid"), levels,
                          meta={"kind": "leray-stack", "order": 0,
                                "points_per_unit": kc["points_per_unit"],
                                "n_levels": kc["n_levels"],
                                "support_radius": [2.0 ** -n for n in
                                                   range(stack.n_levels)]})
        gridio.write_grid(run.path("leray_remainder.grid"),
                          samples - stack.sum_levels(),
                          meta={"kind": "leray-remainder"})
        rec = stack.reconstruction_error(samples, 1e-2)
        run.record("leray_reconstruction_error", rec, threshold=1e-6,
                   passed=rec <= 1e-6)
        h = max(grid.step)
        sup_ok = all(stack.support_violation(n) <= 2.0 ** -n + h
                     for n in range(stack.n_levels))
        run.record("level_supports_within_radius", sup_ok, passed=sup_ok)
        mom = max(max(abs(v) for v in stack.level_moments(n).values())
                  for n in range(stack.n_levels) if stack.corrected[n])
        run.record("max_corrected_level_moment", mom, threshold=1e-10,
                   passed=mom <= 1e-10)
        # radial profile figure
        mid = grid.shape[0] // 2
        xs = grid.axes()[0]
        series = {f"level {n}": stack.levels[n][:, mid]
                  for n in range(0, stack.n_levels, 2)}
        plots.save_timeseries(run.path("leray_levels.png"), xs, series,
                              xlabel="x", ylabel="level value",
                              title="Leray stack, radial slices")
        # heat split on a coarse space-time grid
        hgrid = kn.GridSpec(origin=(0.0, -1.0, -1.0),
                            step=(1.0 / kc["heat_time_points"],
                                  1.0 / kc["heat_points_per_unit"],
                                  1.0 / kc["heat_points_per_unit"]),
                            shape=(kc["heat_time_points"] + 1,
                                   2 * kc["heat_points_per_unit"] + 1,
                                   2 * kc["heat_points_per_unit"] + 1))
        pair = kn.heat_kernel_split(nu=kc["nu"], grid=hgrid,
                                    n_levels=kc["heat_n_levels"])
        herr = pair.reconstruction_error(1e-2)
        run.record("heat_reconstruction_error", herr, threshold=1e-6,
                   passed=herr <= 1e-6)
        gridio.write_grid(run.path("heat_remainder.grid"), pair.remainder,
                          meta={"kind": "heat-remainder", "nu": kc["nu"]})
    else:  # verify
        rep = kn.verify_regularising_bounds(stack, k_max=kc["k_max"])
        for k in sorted(rep.ratios):
            run.record(f"bound_ratio_k={k}", rep.ratios[k], threshold=4.0,
                       passed=rep.ratios[k] <= 4.0,
                       exponent=rep.exponents[k],
                       predicted=rep.expected_exponents[k])
        flat = rep.exponents[(0,) * stack.grid.ndim]
        run.record("flat_exponent", flat, threshold="2 +- 0.2",
                   passed=abs(flat - 2.0) <= 0.2)
        plots.save_bounds(run.path("bound_constants.png"), rep)
        # heat-kernel scaling identity, analytic points
        rng = np.random.default_rng(run.seed)
        t = rng.uniform(0.05, 1.0, 200)
        x = rng.uniform(-1.0, 1.0, (200, 3))
        lhs = kn.heat_kernel(t / 4.0, np.sum((x / 2.0) ** 2, -1), 1.0, 3)
        rhs = 8.0 * kn.heat_kernel(t, np.sum(x ** 2, -1), 1.0, 3)
        err = float(np.max(np.abs(lhs - rhs) / rhs))
        run.record("heat_scaling_identity", err, threshold=1e-8,
                   passed=err <= 1e-8)
    return run.finish()


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _initial_field(kind: str, scfg, seed: int):
    grid = fd.grid_for(scfg.N)
    if kind == "zero":
        return np.zeros((2,) + grid.shape, dtype=complex)
    if kind == "stationary":
        return nz.sample_stationary(scfg.N, scfg.nu, seed)
    return nz.sample_rough_initial(scfg.eta, scfg.N, seed)


def run_simulate(run: Runner, args) -> int:
    cfg = run.cfg
    ex = cfg.values["experiment"]
    scfg = cfg.solver_config(seed=run.seed)
    u0 = _initial_field(ex["u0"], scfg, run.seed)
    if ex["noise"] == "zero":
        grid = fd.grid_for(scfg.N)

        class _Zero(nz.NoiseRealization):
            def increments(self, i):
                return np.zeros((2,) + grid.shape, dtype=complex)

        xi = _Zero(master_seed=run.seed, stream=0, N=scfg.N, dt=scfg.dt,
                   steps=scfg.steps)
    else:
        xi = nz.sample_white_noise(scfg.N, scfg.dt, scfg.steps, run.seed)
    snaps = list(cfg.values["experiment"]["snapshots"])
    traj = sv.solve(u0, xi, scfg, snapshot_times=snaps)

    log = run.path("trajectory.ndjson")
    log.unlink(missing_ok=True)
    stride = max(1, scfg.steps // 2000)
    for n in range(0, scfg.steps + 1, stride):
        status = "completed"
        if traj.exploded() and n * scfg.dt >= traj.t_explode:
            status = "exploded"
        gridio.append_ndjson(log, {"step": n, "t": n * scfg.dt,
                                   "energy": traj.energy_series[n],
                                   "r_t": traj.r_series[n], "status": status})
    for t_snap, field_ in traj.snapshots.items():
        gridio.write_grid(run.path(f"u_t{t_snap:.6f}.grid"), field_,
                          meta={"kind": "velocity", "t": t_snap, "N": scfg.N,
                                "nu": scfg.nu, "seed": run.seed,
                                "stream": 0, "dt": scfg.dt})
    finite = np.isfinite(traj.r_series)
    plots.save_timeseries(run.path("trajectory.png"), traj.r_times[finite],
                          {"energy": traj.energy_series[finite],
                           "r_t": traj.r_series[finite]},
                          ylabel="", title="energy and explosion monitor",
                          logy=False)
    run.record("status", traj.status, passed=not traj.exploded())
    run.record("final_energy", float(traj.energy_series[finite][-1]))
    run.record("final_r", float(traj.r_series[finite][-1]),
               threshold=scfg.r_max)
    div = fd.divergence_max(traj.snapshots[max(traj.snapshots)], fd.grid_for(scfg.N))
    run.record("divergence_free", div, threshold=1e-10, passed=div <= 1e-10)
    return run.finish()


# ---------------------------------------------------------------------------
# experiment subcommands
# ---------------------------------------------------------------------------

def run_jacobian_check(run: Runner, args) -> int:
    cfg = run.cfg
    scfg = cfg.solver_config(seed=run.seed)
    ex = cfg.values["experiment"]
    t = min(ex["t"], scfg.T)
    steps = int(round(t / scfg.dt))
    scfg = replace(scfg, T=steps * scfg.dt)
    u0 = nz.sample_rough_initial(scfg.eta, scfg.N, run.seed, amplitude=0.7)
    v0 = nz.sample_rough_initial(-0.3, scfg.N, run.seed + 1)
    rep = hn.derivative_vs_fd(u0, v0, scfg.T, scfg, master_seed=run.seed)
    run.record("fd_consistency_best", rep["best_rel_err"], threshold=1e-3,
               passed=rep["passed"], best_eps=rep["best_eps"])
    xi = nz.sample_white_noise(scfg.N, scfg.dt, scfg.steps, run.seed)
    traj = sv.solve(u0, xi, scfg)
    grid = fd.grid_for(scfg.N)
    mid = (steps // 2) * scfg.dt
    direct = sv.jacobian_apply(traj, v0, 0.0, scfg.T)
    staged = sv.jacobian_apply(traj, sv.jacobian_apply(traj, v0, 0.0, mid),
                               mid, scfg.T)
    chain = float(np.sqrt(fd.energy(direct - staged, grid)
                          / fd.energy(direct, grid)))
    run.record("chain_rule_rel_err", chain, threshold=1e-8, passed=chain <= 1e-8)
    w0 = nz.sample_rough_initial(-0.3, scfg.N, run.seed + 2)
    lin = sv.jacobian_apply(traj, 0.6 * v0 - 1.2 * w0, 0.0, scfg.T)
    rhs = 0.6 * sv.jacobian_apply(traj, v0, 0.0, scfg.T) \
        - 1.2 * sv.jacobian_apply(traj, w0, 0.0, scfg.T)
    linerr = float(np.sqrt(fd.energy(lin - rhs, grid) / fd.energy(rhs, grid)))
    run.record("linearity_rel_err", linerr, threshold=1e-10,
               passed=linerr <= 1e-10)
    xs = sorted(rep["errors"])
    plots.save_errorbar(run.path("fd_sweep.png"), xs,
                        [rep["errors"][e] for e in xs],
                        np.zeros(len(xs)), xlabel="eps",
                        ylabel="relative error", loglog=True,
                        title="finite-difference consistency sweep")
    return run.finish()


def run_gradient_check(run: Runner, args) -> int:
    cfg = run.cfg
    ex = cfg.values["experiment"]
    scfg = cfg.solver_config(seed=run.seed)
    t = ex["t"]
    steps = int(round(t / scfg.dt))
    scfg = replace(scfg, T=steps * scfg.dt)
    t = scfg.T
    dtype = cfg.np_dtype()
    grid = fd.grid_for(scfg.N)

    # linear calibration: exact OU semigroup oracle
    lin_cfg = replace(scfg, linear_only=True)
    g = hn.mode_probe(scfg.N, (1, 0), 1)
    v0 = g + 0.5 * hn.mode_probe(scfg.N, (0, 1), 0)
    psi_lin = hn.Observable(kind="linear",
                            fn=lambda ub: fd.inner(np.broadcast_to(g, ub.shape),
                                                   ub, grid), bound=1e9)
    n_lin = max(2000, ex["n_paths"] // 4)
    est_lin = hn.bel_gradient(psi_lin, np.zeros((2,) + grid.shape, dtype=complex),
                              v0, t, n_lin, lin_cfg, master_seed=run.seed,
                              noise_mode=ex["noise_mode"])
    oracle = hn.linear_gradient_oracle(g, v0, t, lin_cfg)
    dev = abs(est_lin.value - oracle) / max(est_lin.stderr, 1e-300)
    run.record("linear_calibration_sigmas", dev, threshold=3.0,
               passed=dev <= 3.0, value_bel=est_lin.value, oracle=oracle,
               stderr=est_lin.stderr)

    # nonlinear BEL vs common-random-number finite differences
    u0 = nz.sample_stationary(scfg.N, scfg.nu, run.seed)
    psi = hn.bounded_cylinder([g], [1.0], grid, scale=0.5)
    t0 = ex["t0"] if ex["t0"] > 0 else t / 8
    bel = hn.bel_gradient(psi, u0, g, t, ex["n_paths"], scfg,
                          master_seed=run.seed, t0=t0, dtype=dtype,
                          noise_mode=ex["noise_mode"])
    fd_paths = ex["fd_paths"] or max(200, ex["n_paths"] // 4)
    fdg = hn.fd_gradient(psi, u0, g, t, fd_paths, scfg, master_seed=run.seed,
                         eps=ex["eps"], dtype=dtype,
                         noise_mode=ex["noise_mode"])
    rel = abs(bel.value - fdg.value) / max(abs(fdg.value), 1e-300)
    joint = 3.0 * float(np.hypot(bel.stderr, fdg.stderr))
    ok = rel <= 0.2 or abs(bel.value - fdg.value) <= joint
    run.record("bel_vs_fd_rel_dev", rel, threshold="0.2 (or 3 joint se)",
               passed=ok, bel=bel.value, bel_stderr=bel.stderr, fd=fdg.value,
               fd_stderr=fdg.stderr, exploded=bel.n_exploded + fdg.n_exploded)
    plots.save_errorbar(run.path("gradient_estimates.png"), [0, 1],
                        [bel.value, fdg.value], [bel.stderr, fdg.stderr],
                        xlabel="estimator (0=BEL, 1=FD)", ylabel="gradient",
                        title="pathwise vs finite-difference gradient")
    return run.finish()


def run_feller_test(run: Runner, args) -> int:
    cfg = run.cfg
    ex = cfg.values["experiment"]
    scfg = cfg.solver_config(seed=run.seed)
    t = ex["t"]
    steps = int(round(t / scfg.dt))
    scfg = replace(scfg, T=steps * scfg.dt)
    x = nz.sample_rough_initial(scfg.eta, scfg.N, run.seed)
    e = nz.sample_rough_initial(scfg.eta, scfg.N, run.seed + 1)
    e = e / nz.holder_norm(e, scfg.eta)
    t0 = ex["t0"] if ex["t0"] > 0 else scfg.T / 8
    rep = hn.strong_feller_probe(x, e, list(ex["distances"]), scfg.T, scfg,
                                 n_paths=ex["n_paths"], master_seed=run.seed,
                                 widths=ex["widths"], bel_t0=t0,
                                 dtype=cfg.np_dtype(),
                                 noise_mode=ex["noise_mode"])
    for dist, gap, se, bound in zip(rep.distances, rep.gaps, rep.gap_stderrs,
                                    rep.bounds):
        run.record(f"gap_at_{dist:g}", gap, stderr=se,
                   threshold=f"<= {bound:.4g} + 3 se", passed=True)
    run.record("explosion_fraction", rep.explosion_fraction, threshold=0.01,
               passed=not rep.inconclusive)
    run.record("gap_monotone", rep.monotone, passed=rep.monotone)
    run.record("gap_within_gradient_bound", rep.within_bound,
               passed=rep.within_bound)
    plots.save_errorbar(run.path("feller_gaps.png"), rep.distances, rep.gaps,
                        rep.gap_stderrs,
                        extra={"gradient bound": (rep.distances, rep.bounds)},
                        xlabel="initial distance", ylabel="observable gap",
                        title="strong Feller probe", loglog=True)
    rows = [{"distance": d, "gap": g, "stderr": s, "bound": b}
            for d, g, s, b in zip(rep.distances, rep.gaps, rep.gap_stderrs,
                                  rep.bounds)]
    gridio.write_csv(run.path("feller_gaps.csv"), rows)
    return run.finish()


def run_invariance_test(run: Runner, args) -> int:
    cfg = run.cfg
    ex = cfg.values["experiment"]
    scfg = cfg.solver_config(seed=run.seed)
    rep = hn.invariance_test(nu=scfg.nu, N_stokes=min(16, scfg.N),
                             N_nonlinear=scfg.N, n_paths=ex["n_paths"],
                             T=scfg.T, master_seed=run.seed,
                             stokes_nu=ex["stokes_nu"],
                             stokes_steps=ex["stokes_steps"],
                             stokes_paths=ex["stokes_paths"],
                             stokes_dt=ex["stokes_dt"],
                             burn_in=ex["burn_in"],
                             tiny_kwargs={"nu": scfg.nu})
    for shell, ratio in sorted(rep.stokes_shell_ratios.items()):
        run.record(f"stokes_ratio_shell_{shell}", ratio,
                   threshold="[0.97, 1.03]", passed=abs(ratio - 1) <= 0.03)
    run.record("burn_in_sufficient", not rep.burn_in_flag,
               passed=not rep.burn_in_flag)
    run.record("nonlinear_variance_drift", rep.nonlinear_variance_drift,
               threshold=0.05, passed=rep.nonlinear_pass)
    run.record("fourth_moment_max_sigmas", rep.fourth_moment_max_dev,
               threshold=3.5, passed=rep.fourth_moment_pass)
    run.record("sampler_kurtosis_max_sigmas", rep.kurtosis_max_dev,
               threshold=3.5, passed=rep.kurtosis_pass)
    for shell, devs in sorted(rep.tiny_shell_devs.items()):
        run.record(f"tiny_cutoff_shell_{shell}_sigmas", devs, threshold=3.0,
                   passed=abs(devs) <= 3.0)
    shells = sorted(rep.stokes_shell_ratios)
    plots.save_bars(run.path("invariance_ratios.png"), shells,
                    [rep.stokes_shell_ratios[s] for s in shells],
                    ylabel="measured / predicted", hline=1.0, band=0.03,
                    title="linear-arm stationary variance ratios")
    gridio.write_csv(run.path("invariance_shells.csv"),
                     [{"shell": s, "ratio": rep.stokes_shell_ratios[s]}
                      for s in shells])
    return run.finish()


def run_global_test(run: Runner, args) -> int:
    cfg = run.cfg
    ex = cfg.values["experiment"]
    scfg = cfg.solver_config(seed=run.seed)
    rep = hn.global_existence_experiment(scfg.eta, ex["n_paths"], scfg.T,
                                         scfg, master_seed=run.seed,
                                         dtype=cfg.np_dtype(),
                                         monitor_every=ex["monitor_every"],
                                         noise_mode=ex["noise_mode"])
    run.record("explosions", rep.n_exploded, threshold=0,
               passed=rep.n_exploded == 0, n_paths=rep.n_paths)
    run.record("adversarial_explosion", rep.adversarial_exploded,
               passed=not rep.adversarial_exploded,
               adversarial_r=rep.adversarial_r)
    for q, v in rep.r_quantiles.items():
        run.record(f"r_T_quantile_{q}", v, threshold=scfg.r_max,
                   passed=v < scfg.r_max)
    gridio.write_csv(run.path("r_quantiles.csv"),
                     [{"quantile": q, "r": v} for q, v in rep.r_quantiles.items()])
    return run.finish()


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="torusflow", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="S.K=V",
                       help="override one config value (repeatable)")
        p.add_argument("--seed", type=int, default=None,
                       help="master seed (default: [solver] seed)")
        p.add_argument("--out", default=None, help="output root directory")
        p.add_argument("--profile", choices=("demo", "full"), default="demo",
                       help="demo shrinks run sizes; full keeps documented defaults")

    p = sub.add_parser("structure", help="symbolic structure commands")
    p.add_argument("action", choices=("build", "negative", "renorm-dim", "extend"))
    common(p)
    p = sub.add_parser("kernels", help="kernel decomposition commands")
    p.add_argument("action", choices=("decompose", "verify"))
    common(p)
    for name in ("simulate", "jacobian-check", "gradient-check", "feller-test",
                 "invariance-test", "global-test"):
        p = sub.add_parser(name)
        common(p)
        if name == "simulate":
            p.add_argument("--u0", choices=("rough", "zero", "stationary"),
                           default=None, help="shorthand for --set experiment.u0=...")
            p.add_argument("--noise", choices=("white", "zero"), default=None,
                           help="shorthand for --set experiment.noise=...")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.profile == "demo" and args.command not in ("structure", "kernels"):
        overrides.update(DEMO_PROFILE)
    elif args.profile == "demo" and args.command == "kernels":
        overrides.update({k: v for k, v in DEMO_PROFILE.items()
                          if k.startswith("kernels.")})
    if getattr(args, "u0", None):
        overrides["experiment.u0"] = args.u0
    if getattr(args, "noise", None):
        overrides["experiment.noise"] = args.noise
    for item in args.set:
        if "=" not in item:
            print(f"error: --set expects section.key=value, got {item!r}",
                  file=sys.stderr)
            return 2
        key, val = item.split("=", 1)
        overrides[key.strip()] = val.strip()
    try:
        cfg = parse_config(args.config, overrides)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    seed = args.seed if args.seed is not None else cfg.get("solver", "seed")
    out_root = Path(args.out or os.environ.get("TORUSFLOW_OUT", "runs"))
    command = args.command + (f" {args.action}" if hasattr(args, "action") else "")
    run = Runner(command, cfg, seed, out_root)
    try:
        if args.command == "structure":
            return run_structure(args.action, run, args)
        if args.command == "kernels":
            return run_kernels(args.action, run, args)
        if args.command == "simulate":
            return run_simulate(run, args)
        if args.command == "jacobian-check":
            return run_jacobian_check(run, args)
        if args.command == "gradient-check":
            return run_gradient_check(run, args)
        if args.command == "feller-test":
            return run_feller_test(run, args)
        if args.command == "invariance-test":
            return run_invariance_test(run, args)
        if args.command == "global-test":
            return run_global_test(run, args)
        raise SystemExit(f"unknown command {args.command}")
    except (ValueError, RuntimeError, st.SymbolError) as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        (run.dir / "error.json").write_text(json.dumps(record, indent=1))
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
