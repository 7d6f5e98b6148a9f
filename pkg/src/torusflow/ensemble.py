"""Batched Monte-Carlo driver for the split-system solver.

Paths are independent by construction: path p draws its increments from the
stream (master_seed, stream_base + p), the same lineage the single-path
solver uses, so any ensemble member can be replayed exactly with ``solve``.
Batches only amortize transform costs; no arithmetic crosses path
boundaries, and reductions happen in path order, so results do not depend on
the batch size beyond floating-point layout of the FFT library.

Optional per-path extras:

* a linearized companion J driven along the path (direction v0), with the
  pathwise pairing sum_{n dt < t0} <J_n, dW_n> / t0 accumulated for
  gradient estimation;
* a common-noise twin started from u0 + eps v0 for finite differences;
* running explosion monitoring at a configurable cadence; exploded paths
  freeze (fields zeroed, flag set) and report the crossing time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .fields import energy, enforce_hermitian, from_physical, grid_for, to_physical
from .noise import _draw_increment, _ou_factors, ou_step, rng_for, wick_constant
from .solver import SolverConfig, _linear_factors

__all__ = ["EnsembleResult", "run_ensemble", "ou_mode_statistics"]

TWO_PI = 2.0 * np.pi


@dataclass
class EnsembleResult:
    final_u: np.ndarray              # (n_paths, d, 2N+1, N+1)
    exploded: np.ndarray             # (n_paths,) bool
    explode_time: np.ndarray         # (n_paths,) nan when completed
    r_final: np.ndarray              # (n_paths,)
    bel_weight: Optional[np.ndarray] = None
    final_u_eps: Optional[np.ndarray] = None

    @property
    def n_paths(self) -> int:
        return self.final_u.shape[0]


def _pairing(f: np.ndarray, dw: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Pathwise <f, dW> in the orthonormal-noise normalization."""
    s = np.sum(weight * (f.real.astype(np.float64) * dw.real
                         + f.imag.astype(np.float64) * dw.imag),
               axis=(-3, -2, -1))
    return TWO_PI * s


def _batch_monitor(v: np.ndarray, t: float, grid, beta_v: float, rho: float) -> np.ndarray:
    v_phys = to_physical(v, grid)
    vmax = np.max(np.abs(v_phys), axis=(-3, -2, -1))
    best = t ** rho * vmax
    M = grid.M
    hstep = TWO_PI / M
    lag = 1
    while lag <= M // 2:
        for ax in (-2, -1):
            diff = np.max(np.abs(np.roll(v_phys, lag, axis=ax) - v_phys),
                          axis=(-3, -2, -1))
            best = np.maximum(best, diff / (lag * hstep) ** beta_v)
        lag *= 4
    return best


def run_ensemble(cfg: SolverConfig,
                 u0_fn: Callable[[int], np.ndarray],
                 n_paths: int,
                 master_seed: int,
                 stream_base: int = 0,
                 dtype=np.complex128,
                 batch: int = 16,
                 monitor_every: int = 8,
                 bel_direction: Optional[np.ndarray] = None,
                 bel_steps: int = 0,
                 fd_direction: Optional[np.ndarray] = None,
                 fd_eps: float = 0.0,
                 step_hook: Optional[Callable[[int, np.ndarray], None]] = None,
                 noise_mode: str = "per-path",
                 ) -> EnsembleResult:
    """Run n_paths independent trajectories of the split system.

    ``u0_fn(p)`` supplies the initial field of path p.  ``step_hook`` is
    called as hook(step_index, u_batch) after every step on every batch (for
    time statistics); it must not mutate its argument.

    ``noise_mode``: "per-path" draws each path's increments from its own
    stream (master_seed, stream_base + p, step) - any member can then be
    replayed exactly by the single-path solver.  "block" draws one array per
    (batch, step) and slices it across the batch: the paths are still
    independent and identically distributed and runs remain reproducible for
    a fixed (seed, n_paths, batch), but member-level replay requires the
    same batch layout.  Block mode removes most generator overhead and is
    used by the large Monte-Carlo experiments.
    """
    grid = grid_for(cfg.N)
    d = cfg.d
    box = grid.component_shape(d)
    factors = _linear_factors(grid, cfg.nu, cfg.dt)
    ou = _ou_factors(grid, cfg.nu, cfg.dt)
    wick_c = wick_constant(cfg.N, cfg.nu, None, d) if cfg.wick_enabled else None
    real_dtype = np.float32 if dtype == np.complex64 else np.float64
    decay = factors[0].astype(real_dtype)
    phi1dt = (cfg.dt * factors[1]).astype(real_dtype)
    ou_decay = ou[0].astype(real_dtype)
    ou_gain = (ou[1] / TWO_PI).astype(real_dtype)
    kx = grid.kx.astype(real_dtype)
    ky = grid.ky.astype(real_dtype)
    k_sq_safe = np.where(grid.k_sq == 0.0, 1.0, grid.k_sq).astype(real_dtype)
    minus_i = np.dtype(dtype).type(-1j)
    two = real_dtype(2.0)
    N = grid.N

    def div_project(t00, t01, t11):
        f = np.stack([kx * t00 + ky * t01, kx * t01 + ky * t11], axis=-3)
        f *= minus_i
        dot = (kx * f[..., 0, :, :] + ky * f[..., 1, :, :]) / k_sq_safe
        f[..., 0, :, :] -= kx * dot
        f[..., 1, :, :] -= ky * dot
        f[..., :, N, 0] = 0.0
        return f

    def leray_cast(f):
        # in place: callers hand over freshly drawn increments
        dot = (kx * f[..., 0, :, :] + ky * f[..., 1, :, :]) / k_sq_safe
        f[..., 0, :, :] -= kx * dot
        f[..., 1, :, :] -= ky * dot
        f[..., :, N, 0] = 0.0
        return f

    final_u = np.empty((n_paths,) + box, dtype=dtype)
    final_eps = np.empty_like(final_u) if fd_direction is not None else None
    weights = np.zeros(n_paths) if bel_direction is not None else None
    exploded = np.zeros(n_paths, dtype=bool)
    explode_time = np.full(n_paths, np.nan)
    r_final = np.zeros(n_paths)

    def quad_rhs(w):
        w_phys = to_physical(w, grid)
        t00 = from_physical(w_phys[..., 0, :, :] ** 2, grid, out_dtype=dtype)
        t01 = from_physical(w_phys[..., 0, :, :] * w_phys[..., 1, :, :], grid,
                            out_dtype=dtype)
        t11 = from_physical(w_phys[..., 1, :, :] ** 2, grid, out_dtype=dtype)
        if wick_c is not None:
            t00[..., N, 0] -= wick_c[0, 0]
            t01[..., N, 0] -= wick_c[0, 1]
            t11[..., N, 0] -= wick_c[1, 1]
        return div_project(t00, t01, t11), w_phys

    for lo in range(0, n_paths, batch):
        hi = min(lo + batch, n_paths)
        B = hi - lo
        paths = np.arange(lo, hi)
        v = np.stack([u0_fn(int(p)) for p in paths]).astype(dtype)
        z = np.zeros_like(v)
        J = None
        if bel_direction is not None:
            J = np.broadcast_to(bel_direction.astype(dtype), (B,) + box).copy()
        v_eps = None
        if fd_direction is not None:
            v_eps = v + np.dtype(dtype).type(fd_eps) * fd_direction.astype(dtype)
        alive = np.ones(B, dtype=bool)
        r_run = np.zeros(B)
        w_acc = np.zeros(B)
        incr = np.empty((B,) + box, dtype=dtype)

        scale = real_dtype(np.sqrt(cfg.dt / 2.0))
        for n in range(cfg.steps):
            if noise_mode == "block":
                rng = rng_for(master_seed, stream_base + lo, n)
                raw = rng.standard_normal((B, d, 2 * N + 1, N + 1, 2),
                                          dtype=real_dtype)
                incr = raw.view(dtype)[..., 0]
                incr *= scale
                enforce_hermitian(incr, grid)
            else:
                for b, p in enumerate(paths):
                    incr[b] = _draw_increment(master_seed, stream_base + int(p), n,
                                              cfg.N, d, cfg.dt, dtype)
            if J is not None and n < bel_steps:
                w_acc += _pairing(J, incr, grid.weight) / (bel_steps * cfg.dt)

            if cfg.linear_only:
                rhs, w_phys = None, None
            else:
                rhs, w_phys = quad_rhs(v + z)
            if J is not None and cfg.linear_only:
                J *= decay
            elif J is not None:
                j_phys = to_physical(J, grid)
                s00 = from_physical(two * w_phys[..., 0, :, :] * j_phys[..., 0, :, :],
                                    grid, out_dtype=dtype)
                s01 = from_physical(w_phys[..., 0, :, :] * j_phys[..., 1, :, :]
                                    + j_phys[..., 0, :, :] * w_phys[..., 1, :, :],
                                    grid, out_dtype=dtype)
                s11 = from_physical(two * w_phys[..., 1, :, :] * j_phys[..., 1, :, :],
                                    grid, out_dtype=dtype)
                J *= decay
                dbj = div_project(s00, s01, s11)
                dbj *= phi1dt
                J += dbj
            if v_eps is not None:
                if cfg.linear_only:
                    v_eps *= decay
                else:
                    rhs_eps, _ = quad_rhs(v_eps + z)
                    v_eps *= decay
                    rhs_eps *= phi1dt
                    v_eps += rhs_eps
            v *= decay
            if rhs is not None:
                rhs *= phi1dt
                v += rhs
            z *= ou_decay
            zin = leray_cast(incr)
            zin *= ou_gain
            z += zin

            if step_hook is not None:
                step_hook(n + 1, v + z)

            check = (n + 1) % monitor_every == 0 or n + 1 == cfg.steps
            if check and alive.any():
                t_now = (n + 1) * cfg.dt
                e_now = energy(v + z, grid)
                r_now = _batch_monitor(v, t_now, grid, cfg.beta_v, cfg.rho)
                r_run = np.maximum(r_run, np.where(alive, r_now, r_run))
                blown = alive & (~np.isfinite(e_now) | (r_run >= cfg.r_max)
                                 | ~np.isfinite(r_now))
                if blown.any():
                    alive &= ~blown
                    explode_time[paths[blown]] = t_now
                    v[blown] = 0.0
                    z[blown] = 0.0
                    if J is not None:
                        J[blown] = 0.0
                    if v_eps is not None:
                        v_eps[blown] = 0.0

        u_out = v + z
        u_out[~alive] = 0.0  # the cemetery carries no field data
        final_u[lo:hi] = u_out
        exploded[lo:hi] = ~alive
        r_final[lo:hi] = np.where(alive, r_run, np.inf)
        if weights is not None:
            weights[lo:hi] = np.where(alive, w_acc, 0.0)
        if final_eps is not None:
            eps_out = v_eps + z
            eps_out[~alive] = 0.0
            final_eps[lo:hi] = eps_out
    return EnsembleResult(final_u=final_u, exploded=exploded,
                          explode_time=explode_time, r_final=r_final,
                          bel_weight=weights, final_u_eps=final_eps)


def ou_mode_statistics(N: int, nu: float, dt: float, steps: int,
                       n_paths: int, master_seed: int, stream_base: int = 0,
                       burn_in: int = 0) -> tuple[np.ndarray, int]:
    """Time-and-ensemble averaged per-mode second moments |z_hat|^2 of the
    pure stochastic heat equation (no transforms involved).

    Returns (mean of |z|^2 over paths and retained steps, sample count).
    """
    grid = grid_for(N)
    ou = _ou_factors(grid, nu, dt)
    acc = np.zeros((2,) + grid.shape)
    count = 0
    for p in range(n_paths):
        z = np.zeros((2,) + grid.shape, dtype=np.complex128)
        for n in range(steps):
            incr = _draw_increment(master_seed, stream_base + p, n, N, 2, dt,
                                   np.complex128)
            z = ou_step(z, incr, ou[0], ou[1], grid)
            if n >= burn_in:
                acc += z.real ** 2 + z.imag ** 2
                count += 1
    return acc / max(count, 1), count
