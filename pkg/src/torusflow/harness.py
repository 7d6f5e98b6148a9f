"""Markov-semigroup experiments on the Galerkin flow: Monte-Carlo transition
estimates, the control construction behind gradient identities, pathwise
gradient estimation, the strong-Feller continuity probe, invariance of the
Gaussian measure and the global-existence ensemble.

All estimates report batch-mean standard errors and carry their seeds;
cemetery (exploded) paths contribute observable value zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .ensemble import ou_mode_statistics, run_ensemble
from .fields import ModeGrid, energy, grid_for, inner, sup_norm
from .kernels import smoothstep
from .noise import (
    NoiseRealization,
    Shift,
    holder_norm,
    ou_stationary_variance,
    sample_rough_initial,
    sample_stationary,
    sample_white_noise,
)
from .solver import CEMETERY, SolverConfig, Trajectory, jacobian_apply, solve

__all__ = [
    "Observable",
    "mode_probe",
    "smoothed_indicator",
    "bounded_cylinder",
    "MCEstimate",
    "GradientEstimate",
    "estimate_semigroup",
    "nested_semigroup",
    "build_control",
    "control_residual",
    "bel_gradient",
    "fd_gradient",
    "derivative_vs_fd",
    "FellerReport",
    "strong_feller_probe",
    "InvarianceReport",
    "invariance_test",
    "GlobalReport",
    "global_existence_experiment",
]

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# observables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Observable:
    """Bounded measurable functional of the velocity field.

    ``fn`` maps a batch of mode boxes (n, d, 2N+1, N+1) to values with
    |value| <= bound; the cemetery state is handled by the estimators, which
    assign value zero to exploded paths.
    """

    kind: str
    fn: Callable[[np.ndarray], np.ndarray]
    bound: float
    label: str = ""

    def __call__(self, u_batch: np.ndarray) -> np.ndarray:
        out = np.asarray(self.fn(u_batch), dtype=np.float64)
        return np.clip(out, -self.bound, self.bound)


def mode_probe(N: int, k: tuple[int, int] = (1, 0), component: int = 0,
               imag: bool = False) -> np.ndarray:
    """Unit-energy probe field supported on one +/-k mode pair; its L2
    pairing with a field extracts (a fixed phase of) that mode."""
    grid = grid_for(N)
    g = np.zeros((2,) + grid.shape, dtype=complex)
    kx, ky = k
    amp = 0.5j if imag else 0.5
    if ky >= 0:
        g[component, N + kx, ky] = amp
        if ky == 0:
            g[component, N - kx, 0] = np.conj(amp)
    else:
        g[component, N - kx, -ky] = np.conj(amp)
    e = float(energy(g, grid))
    return g / np.sqrt(e)


def _projection(g: np.ndarray, grid: ModeGrid) -> Callable[[np.ndarray], np.ndarray]:
    def proj(u_batch):
        return inner(np.broadcast_to(g, u_batch.shape), u_batch, grid)
    return proj


def smoothed_indicator(g: np.ndarray, center: float, width: float,
                       grid: ModeGrid) -> Observable:
    """Smooth bump 1_{|<u,g> - center| < width} with C^infinity shoulders."""
    proj = _projection(g, grid)

    def fn(u_batch):
        p = proj(u_batch)
        return smoothstep(2.0 * (1.0 - np.abs(p - center) / width))

    return Observable(kind="smoothed-indicator", fn=fn, bound=1.0,
                      label=f"ind(c={center:.3g},w={width:.3g})")


def bounded_cylinder(probes: Sequence[np.ndarray], weights: Sequence[float],
                     grid: ModeGrid, scale: float = 1.0) -> Observable:
    """tanh of a finite linear combination of mode projections."""
    probes = [np.asarray(p) for p in probes]
    weights = list(weights)

    def fn(u_batch):
        acc = np.zeros(u_batch.shape[0])
        for g, w in zip(probes, weights):
            acc += w * inner(np.broadcast_to(g, u_batch.shape), u_batch, grid)
        return np.tanh(acc / scale)

    return Observable(kind="bounded-cylinder", fn=fn, bound=1.0,
                      label=f"tanh({len(probes)} probes)")


# ---------------------------------------------------------------------------
# Monte-Carlo estimates
# ---------------------------------------------------------------------------

@dataclass
class MCEstimate:
    value: float
    stderr: float
    n_paths: int
    n_exploded: int = 0
    batch_means: Optional[np.ndarray] = None

    def agrees_with(self, other: "MCEstimate", sigmas: float = 3.0) -> bool:
        joint = np.hypot(self.stderr, other.stderr)
        return abs(self.value - other.value) <= sigmas * max(joint, 1e-300)


def _batch_stats(values: np.ndarray, n_batches: int = 20) -> MCEstimate:
    n = len(values)
    nb = min(n_batches, n)
    means = np.array([m.mean() for m in np.array_split(values, nb)])
    stderr = float(np.std(means, ddof=1) / np.sqrt(nb)) if nb > 1 else 0.0
    return MCEstimate(value=float(values.mean()), stderr=stderr, n_paths=n,
                      batch_means=means)


def estimate_semigroup(psi: Observable, u0: np.ndarray, t: float,
                       n_paths: int, cfg: SolverConfig, master_seed: int,
                       stream_base: int = 0, dtype=np.complex128,
                       **ensemble_kw) -> MCEstimate:
    """Monte-Carlo transition estimate E[psi(u_t(u0))] over fresh streams.

    Exploded paths contribute psi(cemetery) = 0.  t = 0 returns psi(u0)
    exactly.
    """
    if t > cfg.T + 1e-12:
        raise ValueError("t exceeds the configured horizon")
    if t <= 0:
        vals = psi(u0[None])
        return MCEstimate(value=float(vals[0]), stderr=0.0, n_paths=1)
    run_cfg = replace(cfg, T=t)
    res = run_ensemble(run_cfg, lambda p: u0, n_paths, master_seed,
                       stream_base=stream_base, dtype=dtype, **ensemble_kw)
    vals = psi(res.final_u)
    vals[res.exploded] = 0.0
    est = _batch_stats(vals)
    est.n_exploded = int(res.exploded.sum())
    return est


def nested_semigroup(psi: Observable, u0: np.ndarray, t: float, s: float,
                     n_outer: int, n_inner: int, cfg: SolverConfig,
                     master_seed: int) -> MCEstimate:
    """E[(P_s psi)(u_t)] by nested Monte Carlo (Chapman-Kolmogorov check)."""
    outer_cfg = replace(cfg, T=t)
    res = run_ensemble(outer_cfg, lambda p: u0, n_outer, master_seed)
    inner_vals = np.empty(n_outer)
    for p in range(n_outer):
        if res.exploded[p]:
            inner_vals[p] = 0.0
            continue
        est = estimate_semigroup(psi, res.final_u[p], s, n_inner, cfg,
                                 master_seed, stream_base=10_000 * (p + 1))
        inner_vals[p] = est.value
    return _batch_stats(inner_vals)


# ---------------------------------------------------------------------------
# the control construction (gradient identity)
# ---------------------------------------------------------------------------

def build_control(traj: Trajectory, v0: np.ndarray, t: float) -> Shift:
    """The adapted shift h(s) = -J_{0,s} v0 / t on [0, t].

    By the chain rule of the discrete flow, the Duhamel integral
    sum_s J_{s,t} h(s) ds collapses to -J_{0,t} v0, so perturbing the noise
    by h cancels the initial-value derivative exactly; h(s) only involves
    the path up to time s (it is adapted by construction).
    """
    if traj.exploded() and traj.t_explode <= t:
        raise ValueError("trajectory explodes before the control horizon")
    steps = int(round(t / traj.cfg.dt))
    _, path = jacobian_apply(traj, v0, 0.0, t, store_path=True)
    samples = np.stack(path[:steps])
    samples *= -1.0 / t
    return Shift(samples=samples, dt=traj.cfg.dt)


def control_residual(traj: Trajectory, h: Shift, v0: np.ndarray,
                     t: float) -> float:
    """Relative defect || sum_s J_{s,t} h(s) ds + J_{0,t} v0 || / ||J_{0,t} v0||,
    with the integral evaluated by the inhomogeneous linearized flow."""
    target = jacobian_apply(traj, v0, 0.0, t)
    duhamel = jacobian_apply(traj, np.zeros_like(v0), 0.0, t,
                             source=h.samples)
    grid = grid_for(traj.cfg.N)
    num = float(np.sqrt(energy(duhamel + target, grid)))
    den = float(np.sqrt(energy(target, grid)))
    return num / den


# ---------------------------------------------------------------------------
# gradient estimators
# ---------------------------------------------------------------------------

@dataclass
class GradientEstimate:
    value: float
    stderr: float
    n_paths: int
    method: str
    n_exploded: int = 0


def bel_gradient_multi(psis: Sequence[Observable], u0: np.ndarray,
                       v0: np.ndarray, t: float, n_paths: int,
                       cfg: SolverConfig, master_seed: int,
                       t0: Optional[float] = None, stream_base: int = 0,
                       dtype=np.complex128, center: bool = True,
                       noise_mode: str = "per-path"):
    """Pathwise gradients d/de P_t psi(u0 + e v0) at e = 0 for several
    observables from one ensemble, by the integration-by-parts estimator

        E[ psi(u_t) (1/t0) int_0^{t0} <J_{0,s} v0, dW_s> ],

    valid for any window t0 <= t by the tower property; the pairing uses the
    same orthonormal normalization as the stored increments.  ``center``
    subtracts the sample mean of psi before multiplying by the weight (the
    weight integral has mean zero, so this changes nothing in expectation
    and removes most of the variance of bounded observables).

    Returns (estimates, ensemble result).
    """
    run_cfg = replace(cfg, T=t)
    t0 = t if t0 is None else t0
    bel_steps = int(round(t0 / cfg.dt))
    res = run_ensemble(run_cfg, lambda p: u0, n_paths, master_seed,
                       stream_base=stream_base, dtype=dtype,
                       bel_direction=v0, bel_steps=bel_steps,
                       noise_mode=noise_mode)
    out = []
    for psi in psis:
        pv = psi(res.final_u)
        pv[res.exploded] = 0.0
        if center:
            pv = pv - pv.mean()
        vals = pv * res.bel_weight
        vals[res.exploded] = 0.0
        est = _batch_stats(vals)
        out.append(GradientEstimate(value=est.value, stderr=est.stderr,
                                    n_paths=n_paths, method="BEL",
                                    n_exploded=int(res.exploded.sum())))
    return out, res


def bel_gradient(psi: Observable, u0: np.ndarray, v0: np.ndarray, t: float,
                 n_paths: int, cfg: SolverConfig, master_seed: int,
                 t0: Optional[float] = None, stream_base: int = 0,
                 dtype=np.complex128, center: bool = True,
                 noise_mode: str = "per-path") -> GradientEstimate:
    """Single-observable wrapper around ``bel_gradient_multi``."""
    ests, _ = bel_gradient_multi([psi], u0, v0, t, n_paths, cfg, master_seed,
                                 t0=t0, stream_base=stream_base, dtype=dtype,
                                 center=center, noise_mode=noise_mode)
    return ests[0]


def fd_gradient(psi: Observable, u0: np.ndarray, v0: np.ndarray, t: float,
                n_paths: int, cfg: SolverConfig, master_seed: int,
                eps: float = 1e-2, stream_base: int = 0,
                dtype=np.complex128, noise_mode: str = "per-path") -> GradientEstimate:
    """Common-random-number finite difference (psi(u_t^eps) - psi(u_t))/eps."""
    run_cfg = replace(cfg, T=t)
    res = run_ensemble(run_cfg, lambda p: u0, n_paths, master_seed,
                       stream_base=stream_base, dtype=dtype,
                       fd_direction=v0, fd_eps=eps, noise_mode=noise_mode)
    base = psi(res.final_u)
    pert = psi(res.final_u_eps)
    vals = (pert - base) / eps
    vals[res.exploded] = 0.0
    est = _batch_stats(vals)
    return GradientEstimate(value=est.value, stderr=est.stderr,
                            n_paths=n_paths, method="finite-difference",
                            n_exploded=int(res.exploded.sum()))


def linear_gradient_oracle(psi_probe: np.ndarray, v0: np.ndarray, t: float,
                           cfg: SolverConfig) -> float:
    """Closed-form gradient of u -> <u_t, g> for the linear (nu-only)
    dynamics: <e^{nu Lap t} v0, g>."""
    grid = grid_for(cfg.N)
    flow = np.exp(-cfg.nu * grid.k_sq * t) * v0
    return float(inner(flow, psi_probe, grid))


def derivative_vs_fd(u0: np.ndarray, v0: np.ndarray, t: float,
                     cfg: SolverConfig, master_seed: int,
                     eps_list: Sequence[float] = (1e-3, 1e-4, 1e-5, 1e-6, 1e-7),
                     ) -> dict:
    """Sweep finite-difference step sizes against the linearized flow."""
    run_cfg = replace(cfg, T=t)
    xi = sample_white_noise(cfg.N, cfg.dt, run_cfg.steps, master_seed,
                            stream=cfg.stream)
    traj = solve(u0, xi, run_cfg)
    if traj.exploded():
        raise RuntimeError("reference trajectory exploded")
    jv = jacobian_apply(traj, v0, 0.0, t)
    grid = grid_for(cfg.N)
    scale = float(np.sqrt(energy(jv, grid)))
    errs = {}
    for eps in eps_list:
        pert = solve(u0 + eps * v0, xi, run_cfg)
        if pert.exploded():
            errs[eps] = np.inf
            continue
        fdiff = (pert.final - traj.final) / eps
        errs[eps] = float(np.sqrt(energy(fdiff - jv, grid))) / scale
    best = min(errs, key=errs.get)
    return {"errors": errs, "best_eps": best, "best_rel_err": errs[best],
            "passed": errs[best] <= 1e-3}


# ---------------------------------------------------------------------------
# strong Feller probe
# ---------------------------------------------------------------------------

@dataclass
class FellerReport:
    distances: list[float]
    gaps: list[float]
    gap_stderrs: list[float]
    bounds: list[float]
    bound_stderrs: list[float]
    explosion_fraction: float
    monotone: bool
    within_bound: bool
    inconclusive: bool
    per_observable: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return (not self.inconclusive) and self.monotone and self.within_bound


def strong_feller_probe(x: np.ndarray, direction: np.ndarray,
                        distances: Sequence[float], t: float,
                        cfg: SolverConfig, n_paths: int, master_seed: int,
                        widths: Sequence[float] = (3.0, 1.5, 0.75),
                        bel_t0: Optional[float] = None,
                        dtype=np.complex64,
                        noise_mode: str = "block") -> FellerReport:
    """Continuity probe: transition-probability gaps against initial-value
    separation, with a pathwise-gradient bound.

    For each distance delta, y = x + delta * direction (direction normalized
    by the caller in the eta-norm).  All arms share noise streams, so the
    gap estimator is the paired mean of psi(u^x) - psi(u^y).  Each arm also
    co-integrates the linearized flow along ``direction``, giving directional
    derivative estimates for every observable from the same paths; the probe
    passes when the observable gaps decrease along delta within error bars
    and each gap is below max(|grad at x|, |grad at y|) * delta plus three
    joint standard errors.
    """
    grid = grid_for(cfg.N)

    # pilot run to center the observables where u_t actually lives
    pilot_cfg = replace(cfg, T=t)
    pilot = run_ensemble(pilot_cfg, lambda p: x, min(400, n_paths), master_seed,
                         stream_base=900_000, dtype=dtype, noise_mode=noise_mode)
    g = mode_probe(cfg.N, (1, 0), component=1)
    pilot_proj = inner(np.broadcast_to(g, pilot.final_u.shape),
                       pilot.final_u, grid)
    center = float(np.median(pilot_proj))
    spread = float(np.std(pilot_proj))
    family = [smoothed_indicator(g, center, float(w) * spread, grid)
              for w in widths]

    def arm(point, base):
        ests, res = bel_gradient_multi(family, point, direction, t, n_paths,
                                       cfg, master_seed, t0=bel_t0,
                                       stream_base=base, dtype=dtype,
                                       noise_mode=noise_mode)
        return ests, res

    grads_x, arm_x = arm(x, 0)
    explosions = int(arm_x.exploded.sum())
    gaps, gap_ses, bounds, bound_ses = [], [], [], []
    per_obs = {o.label: [] for o in family}

    for delta in distances:
        y = x + delta * direction
        grads_y, arm_y = arm(y, 0)   # same streams: common random numbers
        explosions += int(arm_y.exploded.sum())
        best_gap, best_se = 0.0, 0.0
        bound_val, bound_se = 0.0, 0.0
        for o, gx, gy in zip(family, grads_x, grads_y):
            vx = o(arm_x.final_u)
            vx[arm_x.exploded] = 0.0
            vy = o(arm_y.final_u)
            vy[arm_y.exploded] = 0.0
            diff = _batch_stats(vx - vy)
            per_obs[o.label].append((delta, abs(diff.value), diff.stderr))
            if abs(diff.value) > best_gap:
                best_gap, best_se = abs(diff.value), diff.stderr
            cand = max(abs(gx.value), abs(gy.value)) * delta
            if cand > bound_val:
                bound_val = cand
                bound_se = max(gx.stderr, gy.stderr) * delta
        gaps.append(best_gap)
        gap_ses.append(best_se)
        bounds.append(bound_val)
        bound_ses.append(bound_se)

    total_paths = n_paths * (1 + len(distances))
    frac = explosions / total_paths
    order = np.argsort(distances)[::-1]
    gs = [gaps[i] for i in order]
    ses = [gap_ses[i] for i in order]
    monotone = all(gs[i + 1] <= gs[i] + 3.0 * np.hypot(ses[i], ses[i + 1])
                   for i in range(len(gs) - 1))
    within = all(gaps[i] <= bounds[i] + 3.0 * np.hypot(gap_ses[i], bound_ses[i])
                 for i in range(len(gaps)))
    return FellerReport(distances=list(distances), gaps=gaps,
                        gap_stderrs=gap_ses, bounds=bounds,
                        bound_stderrs=bound_ses, explosion_fraction=frac,
                        monotone=monotone, within_bound=within,
                        inconclusive=frac > 0.01, per_observable=per_obs)


# ---------------------------------------------------------------------------
# invariance of the Gaussian measure
# ---------------------------------------------------------------------------

@dataclass
class InvarianceReport:
    stokes_shell_ratios: dict
    stokes_pass: bool
    burn_in_flag: bool
    nonlinear_variance_drift: float
    nonlinear_pass: bool
    fourth_moment_max_dev: float
    fourth_moment_pass: bool
    kurtosis_max_dev: float
    kurtosis_pass: bool
    tiny_shell_devs: dict = field(default_factory=dict)
    tiny_pass: bool = True

    @property
    def passed(self) -> bool:
        return (self.stokes_pass and self.nonlinear_pass
                and self.fourth_moment_pass and self.kurtosis_pass
                and self.tiny_pass)


def tiny_cutoff_longrun(nu: float = 0.25, N: int = 2, dt: float = 0.05,
                        T: float = 4000.0, n_paths: int = 4,
                        master_seed: int = 0, burn_frac: float = 0.05) -> dict:
    """Brute-force long-run time averages of the full nonlinear system at a
    tiny cutoff, per wavenumber shell, against the Gaussian prediction.

    Returns {shell: (ratio, stderr)} where stderr accounts for the OU
    decorrelation time per shell.
    """
    grid = grid_for(N)
    steps = int(round(T / dt))
    cfg = SolverConfig(nu=nu, N=N, dt=T / steps, T=T, seed=master_seed)
    burn = int(steps * burn_frac)
    acc = np.zeros((2,) + grid.shape)
    count = 0

    def hook(n, u_batch):
        nonlocal count
        if n > burn:
            acc[:] += np.sum(u_batch.real ** 2 + u_batch.imag ** 2, axis=0)
            count += 1

    res = run_ensemble(cfg, lambda p: sample_stationary(N, nu, master_seed,
                                                        stream=p),
                       n_paths, master_seed, step_hook=hook,
                       monitor_every=max(1, steps // 50))
    if res.exploded.any():
        raise RuntimeError("tiny-cutoff run exploded")
    meas = acc / (count * n_paths) * grid.weight
    V = ou_stationary_variance(grid, nu)
    kx, ky = grid.kx, grid.ky
    ksq = np.where(grid.k_sq == 0, 1.0, grid.k_sq)
    target = np.stack([(1 - kx * kx / ksq), (1 - ky * ky / ksq)]) \
        * V * grid.weight
    out = {}
    for s in (1, 2, 4, 5, 8):
        mask = np.abs(grid.k_sq - s) < 0.5
        tgt = float(np.sum(target[:, mask]))
        if tgt <= 0:
            continue
        ratio = float(np.sum(meas[:, mask])) / tgt
        tau = 1.0 / (2.0 * nu * s)
        dof = float(np.sum(mask)) * 1.0  # one Leray dof per mode
        n_eff = n_paths * (T * (1 - burn_frac)) / tau * dof
        out[s] = (ratio, np.sqrt(2.0 / n_eff))
    return out


def invariance_test(nu: float = 0.25, N_stokes: int = 16, N_nonlinear: int = 32,
                    n_paths: int = 400, T: float = 1.0, master_seed: int = 0,
                    stokes_nu: float = 1.0,
                    stokes_steps: int = 4000, stokes_paths: int = 24,
                    stokes_dt: float = 0.01, burn_in: int = 800,
                    low_mode_cut: int = 2, ratio_tol: float = 0.03,
                    drift_tol: float = 0.05,
                    tiny_kwargs: Optional[dict] = None) -> InvarianceReport:
    """Invariance checks of the Gaussian measure at fixed cutoff.

    (i) Stokes: long-run per-mode second moments of the linear equation
    against the closed form, aggregated per wavenumber shell; a first-half /
    second-half trend test flags insufficient burn-in.  The linear arm runs
    at its own viscosity (default 1) purely to shorten decorrelation times.
    (ii) Full dynamics: start n_paths at exact Gaussian samples, integrate to
    T, and compare low-mode variances and fourth moments before and after.
    (iii) Optional tiny-cutoff brute-force long run (see
    ``tiny_cutoff_longrun``), skipped when ``tiny_kwargs`` is None.
    """
    # ---- Stokes -----------------------------------------------------------
    grid = grid_for(N_stokes)
    half = (stokes_steps - burn_in) // 2
    m_a, _ = ou_mode_statistics(N_stokes, stokes_nu, stokes_dt, burn_in + half,
                                stokes_paths, master_seed, burn_in=burn_in)
    m_all, _ = ou_mode_statistics(N_stokes, stokes_nu, stokes_dt, stokes_steps,
                                  stokes_paths, master_seed, burn_in=burn_in)
    V = ou_stationary_variance(grid, stokes_nu)
    kx, ky = grid.kx, grid.ky
    ksq = np.where(grid.k_sq == 0, 1.0, grid.k_sq)
    target = np.stack([(1 - kx * kx / ksq), (1 - ky * ky / ksq)]) \
        * V * grid.weight
    meas = m_all * grid.weight
    shells = {}
    for s in (1, 2, 4, 5, 8):
        mask = np.abs(grid.k_sq - s) < 0.5
        tgt = float(np.sum(target[:, mask]))
        if tgt > 0:
            shells[s] = float(np.sum(meas[:, mask])) / tgt
    stokes_pass = all(abs(r - 1.0) <= ratio_tol for r in shells.values())
    # burn-in trend: first-half average vs full average per shell
    meas_a = m_a * grid.weight
    trend = max(abs(float(np.sum(meas_a[:, np.abs(grid.k_sq - s) < 0.5]))
                    / float(np.sum(meas[:, np.abs(grid.k_sq - s) < 0.5])) - 1.0)
                for s in shells)
    burn_in_flag = trend > 3.0 * ratio_tol

    # ---- nonlinear --------------------------------------------------------
    gridN = grid_for(N_nonlinear)
    dt = 0.5 / (nu * N_nonlinear ** 2)
    steps = int(round(T / dt))
    cfg = SolverConfig(nu=nu, N=N_nonlinear, dt=T / steps, T=T,
                       seed=master_seed)
    u0s = np.stack([sample_stationary(N_nonlinear, nu, master_seed, stream=p)
                    for p in range(n_paths)])
    res = run_ensemble(cfg, lambda p: u0s[p], n_paths, master_seed,
                       stream_base=10_000)
    ok = ~res.exploded
    low = (np.abs(gridN.kx) <= low_mode_cut) & (gridN.ky <= low_mode_cut) \
        & (gridN.k_sq > 0)
    mask = np.broadcast_to(low, (2,) + gridN.shape)

    def mode_moments(fields):
        m2 = fields.real ** 2 + fields.imag ** 2
        sel = m2[:, mask]
        return sel  # (paths, n_low_modes)

    m2_0 = mode_moments(u0s[ok])
    m2_T = mode_moments(res.final_u[ok])
    var_drift = abs(np.sum(np.mean(m2_T, axis=0))
                    / np.sum(np.mean(m2_0, axis=0)) - 1.0)
    nonlinear_pass = var_drift <= drift_tol

    # fourth moments, mode by mode, two-sample z-test
    q0, qT = m2_0 ** 2, m2_T ** 2
    mu0, muT = q0.mean(axis=0), qT.mean(axis=0)
    se = np.sqrt(q0.var(axis=0, ddof=1) / q0.shape[0]
                 + qT.var(axis=0, ddof=1) / qT.shape[0])
    fourth_dev = float(np.max(np.abs(muT - mu0) / np.where(se > 0, se, 1.0)))
    fourth_pass = fourth_dev <= 3.5  # a handful of modes, allow one near-miss

    # Gaussianity of the sampler: complex modes have |z|^4 / |z|^2 ^2 = 2
    ratio = mu0 / np.maximum(m2_0.mean(axis=0) ** 2, 1e-300)
    kurt_se = np.sqrt(q0.var(axis=0, ddof=1) / q0.shape[0]) \
        / np.maximum(m2_0.mean(axis=0) ** 2, 1e-300)
    kurt_dev = float(np.max(np.abs(ratio - 2.0) / np.where(kurt_se > 0, kurt_se, 1.0)))
    kurt_pass = kurt_dev <= 3.5

    tiny_devs, tiny_pass = {}, True
    if tiny_kwargs is not None:
        tiny = tiny_cutoff_longrun(master_seed=master_seed, **tiny_kwargs)
        for s, (ratio, se) in tiny.items():
            tiny_devs[s] = (ratio - 1.0) / se
        tiny_pass = all(abs(d) <= 3.0 for d in tiny_devs.values())

    return InvarianceReport(stokes_shell_ratios=shells, stokes_pass=stokes_pass,
                            burn_in_flag=burn_in_flag,
                            nonlinear_variance_drift=float(var_drift),
                            nonlinear_pass=nonlinear_pass,
                            fourth_moment_max_dev=fourth_dev,
                            fourth_moment_pass=fourth_pass,
                            kurtosis_max_dev=kurt_dev, kurtosis_pass=kurt_pass,
                            tiny_shell_devs=tiny_devs, tiny_pass=tiny_pass)


# ---------------------------------------------------------------------------
# global existence ensemble
# ---------------------------------------------------------------------------

@dataclass
class GlobalReport:
    n_paths: int
    n_exploded: int
    explosion_fraction: float
    r_quantiles: dict
    adversarial_exploded: bool
    adversarial_r: float

    @property
    def passed(self) -> bool:
        return self.n_exploded == 0 and not self.adversarial_exploded


def global_existence_experiment(eta: float, n_paths: int, T: float,
                                cfg: SolverConfig, master_seed: int,
                                adversarial_amplitude: float = 3.0,
                                dtype=np.complex64,
                                monitor_every: int = 8,
                                noise_mode: str = "block") -> GlobalReport:
    """Explosion census over rough initial data plus one fixed adversarial
    start with boosted amplitude."""
    run_cfg = replace(cfg, T=T, eta=eta)

    def u0_fn(p):
        return sample_rough_initial(eta, cfg.N, master_seed, stream=p)

    res = run_ensemble(run_cfg, u0_fn, n_paths, master_seed,
                       stream_base=0, dtype=dtype, monitor_every=monitor_every,
                       noise_mode=noise_mode)
    finite_r = res.r_final[np.isfinite(res.r_final)]
    qs = {q: float(np.quantile(finite_r, q)) if len(finite_r) else np.inf
          for q in (0.5, 0.9, 0.99, 1.0)}
    adv = sample_rough_initial(eta, cfg.N, master_seed, stream=99_999,
                               amplitude=adversarial_amplitude)
    adv_res = run_ensemble(run_cfg, lambda p: adv, 1, master_seed,
                           stream_base=777_000, dtype=dtype,
                           monitor_every=monitor_every, noise_mode=noise_mode)
    return GlobalReport(n_paths=n_paths, n_exploded=int(res.exploded.sum()),
                        explosion_fraction=float(res.exploded.mean()),
                        r_quantiles=qs,
                        adversarial_exploded=bool(adv_res.exploded[0]),
                        adversarial_r=float(adv_res.r_final[0]))
