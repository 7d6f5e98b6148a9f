"""Pseudo-spectral Galerkin solver for the split stochastic Navier-Stokes
system on the 2-torus.

The unknown is split as u = z + v: z solves the Leray-projected stochastic
heat equation (integrated mode-exactly in law by the noise module) and the
remainder v solves

    dv/dt = nu Lap v - P div((v+z) (x) (v+z))        v(0) = u0,

stepped by exponential Euler (the integrating factor is exact on the linear
part, the quadratic term is evaluated at the left point with exact
dealiasing).  With the Wick flag the quadratic tensor is centered by the
cutoff covariance; on the torus that counterterm is spatially constant, so
P div annihilates it and trajectories agree bitwise with the uncentered
ones - the solver-level shadow of the renormalization maps acting by
multiples of the unit symbol.

The convention z(0) = 0 puts all rough initial data into v, matching an
initial-value class of negative regularity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .fields import (
    ModeGrid,
    divergence_max,
    energy,
    from_physical,
    grid_for,
    leray_project,
    sup_norm,
    to_physical,
)
from .noise import NoiseRealization, _ou_factors, ou_step, wick_constant

__all__ = [
    "STABILITY_C",
    "CEMETERY",
    "SolverConfig",
    "Trajectory",
    "nonlinearity",
    "step_v",
    "solve",
    "jacobian_apply",
    "explosion_radius",
    "monitor_norm",
]

STABILITY_C = 0.5
CEMETERY = "cemetery"  # absorbing state marker for exploded trajectories


@dataclass(frozen=True)
class SolverConfig:
    """Run parameters; dt must satisfy dt <= c/(nu N^2) with c = 0.5 for the
    explicit quadratic substep (the linear part is unconditionally stable)."""

    nu: float = 1.0
    N: int = 64
    dt: float = 1e-4
    T: float = 1.0
    eta: float = -0.4
    dealias: str = "2/3"
    r_max: float = 1e6
    wick_enabled: bool = False
    linear_only: bool = False
    seed: int = 0
    stream: int = 0
    d: int = 2
    # explosion-monitor proxy parameters
    beta_v: float = 0.5
    rho: float = 0.25

    def __post_init__(self):
        if self.d != 2:
            raise ValueError("the numerical solver is two-dimensional")
        if self.dealias != "2/3":
            raise ValueError("only the exact-padding 2/3 dealiasing rule is implemented")
        if self.dt <= 0 or self.T < 0:
            raise ValueError("need dt > 0 and T >= 0")
        if self.dt > self.max_stable_dt * (1 + 1e-12):
            raise ValueError(
                f"dt={self.dt} violates the stability bound "
                f"c/(nu N^2) = {self.max_stable_dt:.6g} (c={STABILITY_C})")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-8 * max(1.0, steps):
            raise ValueError(f"T={self.T} is not a multiple of dt={self.dt}")

    @property
    def max_stable_dt(self) -> float:
        return STABILITY_C / (self.nu * self.N ** 2)

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def gamma_eta_window(self) -> dict:
        """Exponent window of the abstract fixed point, recorded only as
        metadata (it constrains the continuum construction, not the scheme)."""
        return {"eta": self.eta, "eta_range": (-1.0, 0.0),
                "gamma_range": ("|alpha+2|", "eta-alpha")}


@dataclass
class Trajectory:
    """Solution record: snapshots, monitor series and explosion status."""

    cfg: SolverConfig
    u0: np.ndarray
    xi: NoiseRealization
    snapshot_times: list[float]
    snapshots: dict[float, np.ndarray]
    r_times: np.ndarray
    r_series: np.ndarray
    energy_series: np.ndarray
    status: str = "completed"
    t_explode: Optional[float] = None
    t_offset: float = 0.0

    def exploded(self) -> bool:
        return self.status == "exploded"

    def u_at(self, t: float):
        """Snapshot at time t, or the cemetery marker past the explosion."""
        if self.exploded() and t >= self.t_explode:
            return CEMETERY
        for s, u in self.snapshots.items():
            if abs(s - t) <= 1e-9:
                return u
        raise KeyError(f"no snapshot stored at t={t}")

    @property
    def final(self):
        return self.u_at(self.snapshot_times[-1])

    def r_at_end(self) -> float:
        return float(self.r_series[-1]) if len(self.r_series) else 0.0


# ---------------------------------------------------------------------------
# spatial operators
# ---------------------------------------------------------------------------

def _quad_tensor_hat(w_phys: np.ndarray, grid: ModeGrid, dtype) -> tuple:
    """Spectral coefficients of the symmetric tensor w_i w_j (three entries)."""
    t00 = from_physical(w_phys[..., 0, :, :] ** 2, grid, out_dtype=dtype)
    t01 = from_physical(w_phys[..., 0, :, :] * w_phys[..., 1, :, :], grid, out_dtype=dtype)
    t11 = from_physical(w_phys[..., 1, :, :] ** 2, grid, out_dtype=dtype)
    return t00, t01, t11


def _projected_divergence(t00, t01, t11, grid: ModeGrid) -> np.ndarray:
    """-P[i k_j T_ij] for a symmetric spectral tensor."""
    kx, ky = grid.kx, grid.ky
    f = np.stack([kx * t00 + ky * t01, kx * t01 + ky * t11], axis=-3)
    f *= -1j
    return leray_project(f, grid)


def nonlinearity(u: np.ndarray, grid: Optional[ModeGrid] = None,
                 wick_c: Optional[np.ndarray] = None) -> np.ndarray:
    """B(u) = -P div(u (x) u), the advection term of the mean-free dynamics.

    Products are computed by collocation on the padded grid, so the
    convolution is exact on the retained modes; for divergence-free u this
    equals -P[(u.grad) u] identically.  ``wick_c`` subtracts a constant
    tensor from u (x) u first; being constant it only touches the zero mode,
    which the divergence then annihilates.
    """
    if grid is None:
        grid = grid_for((u.shape[-2] - 1) // 2)
    w_phys = to_physical(u, grid)
    t00, t01, t11 = _quad_tensor_hat(w_phys, grid, u.dtype)
    if wick_c is not None:
        N = grid.N
        t00[..., N, 0] -= wick_c[0, 0]
        t01[..., N, 0] -= wick_c[0, 1]
        t11[..., N, 0] -= wick_c[1, 1]
    return _projected_divergence(t00, t01, t11, grid)


def _linear_factors(grid: ModeGrid, nu: float, dt: float):
    lam = nu * grid.k_sq * dt
    decay = np.exp(-lam)
    lam_safe = np.where(lam == 0.0, 1.0, lam)
    phi1 = np.where(lam == 0.0, 1.0, -np.expm1(-lam) / lam_safe)
    return decay, phi1


def step_v(v: np.ndarray, z: np.ndarray, cfg: SolverConfig,
           grid: Optional[ModeGrid] = None,
           factors=None, wick_c: Optional[np.ndarray] = None) -> np.ndarray:
    """One exponential-Euler step of the remainder equation."""
    if grid is None:
        grid = grid_for(cfg.N)
    if factors is None:
        factors = _linear_factors(grid, cfg.nu, cfg.dt)
    decay, phi1 = factors
    if cfg.linear_only:
        return decay * v
    if wick_c is None and cfg.wick_enabled:
        wick_c = wick_constant(cfg.N, cfg.nu, None, cfg.d)
    b = nonlinearity(v + z, grid, wick_c=wick_c)
    return decay * v + (cfg.dt * phi1) * b


def monitor_norm(v: np.ndarray, t: float, grid: ModeGrid,
                 beta_v: float = 0.5, rho: float = 0.25,
                 v_phys: Optional[np.ndarray] = None) -> float:
    """Instantaneous explosion-monitor proxy max(|v|_{C^beta}, t^rho |v|_inf).

    The Holder part uses first differences over dyadic lags of the
    collocation grid; both parts are adapted, finite for finite fields and
    diverge exactly when the field blows up.
    """
    if v_phys is None:
        v_phys = to_physical(v, grid)
    vmax = float(np.max(np.abs(v_phys)))
    best = t ** rho * vmax
    M = grid.M
    hstep = 2.0 * np.pi / M
    lag = 1
    while lag <= M // 2:
        for ax in (-2, -1):
            diff = float(np.max(np.abs(np.roll(v_phys, lag, axis=ax) - v_phys)))
            best = max(best, diff / (lag * hstep) ** beta_v)
        lag *= 2
    return best


def solve(u0: np.ndarray, xi: NoiseRealization, cfg: SolverConfig,
          snapshot_times: Optional[list[float]] = None,
          t_offset: float = 0.0,
          forcing: Optional[np.ndarray] = None) -> Trajectory:
    """Integrate u = z + v on [0, T] from u0 (all of it placed in v).

    ``snapshot_times`` selects which u(t) fields are retained (0 and T
    always are).  ``t_offset`` shifts the absolute time used by the monitor
    (restart replays).  ``forcing`` is an optional constant-in-time
    deterministic drift added to the z-equation (used by shift-equivalence
    checks).  Crossing the monitor threshold or losing finiteness sends the
    trajectory to the cemetery state at that time.
    """
    grid = grid_for(cfg.N)
    if divergence_max(u0, grid) > 1e-8 * max(1.0, float(np.max(np.abs(u0)))):
        raise ValueError("initial field is not divergence-free")
    if xi.N != cfg.N or abs(xi.dt - cfg.dt) > 1e-15 or xi.steps < cfg.steps:
        raise ValueError("noise realization does not match the configuration")

    factors = _linear_factors(grid, cfg.nu, cfg.dt)
    ou = _ou_factors(grid, cfg.nu, cfg.dt)
    wick_c = wick_constant(cfg.N, cfg.nu, None, cfg.d) if cfg.wick_enabled else None

    wanted = sorted(set([0.0, cfg.T] + list(snapshot_times or [])))
    snap_steps = {int(round(t / cfg.dt)): t for t in wanted}

    v = u0.astype(np.complex128).copy()
    z = np.zeros_like(v)
    snapshots: dict[float, np.ndarray] = {}
    r_vals = np.empty(cfg.steps + 1)
    e_vals = np.empty(cfg.steps + 1)
    running = 0.0
    status, t_explode = "completed", None

    for n in range(cfg.steps + 1):
        t = n * cfg.dt
        u = v + z
        e = float(energy(u, grid))
        if not math.isfinite(e):
            status, t_explode = "exploded", t
            r_vals[n:] = np.inf
            e_vals[n:] = np.inf
            break
        running = max(running, monitor_norm(v, t_offset + t, grid,
                                            cfg.beta_v, cfg.rho))
        r_vals[n] = running
        e_vals[n] = e
        if running >= cfg.r_max:
            status, t_explode = "exploded", t
            r_vals[n:] = np.inf
            break
        if n in snap_steps:
            snapshots[snap_steps[n]] = u.copy()
        if n == cfg.steps:
            break
        v = step_v(v, z, cfg, grid, factors, wick_c)
        incr = xi.increments(n)
        if forcing is not None:
            incr = incr + forcing * (2.0 * np.pi * cfg.dt)
        z = ou_step(z, incr, ou[0], ou[1], grid)

    times = np.arange(cfg.steps + 1) * cfg.dt
    return Trajectory(cfg=cfg, u0=u0, xi=xi,
                      snapshot_times=[t for t in wanted
                                      if status == "completed" or t <= (t_explode or 0)],
                      snapshots=snapshots, r_times=times, r_series=r_vals,
                      energy_series=e_vals, status=status,
                      t_explode=t_explode, t_offset=t_offset)


def jacobian_apply(traj: Trajectory, v0: np.ndarray, s: float, t: float,
                   store_path: bool = False,
                   source: Optional[np.ndarray] = None):
    """J_{s,t} v0: the derivative flow of the solution map along traj.

    Integrates dJ/dt = nu Lap J - P div(u (x) J + J (x) u) with the same
    stepping as the forward map, replaying u from the trajectory's noise, so
    the result is the exact derivative of the discrete flow.  Returns the
    field at time t, or (field, per-step J path) when ``store_path``.

    With ``source`` (per-step fields h_n, shape (steps, d, box)), each step
    propagates J + h_n dt instead of J, which integrates the inhomogeneous
    linearized equation by the discrete Duhamel formula; starting from
    v0 = 0 this yields sum_n J_{s_n, t} h_n dt.
    """
    cfg = traj.cfg
    if traj.exploded() and traj.t_explode <= t:
        raise ValueError("trajectory explodes before the requested time")
    i0, i1 = int(round(s / cfg.dt)), int(round(t / cfg.dt))
    if not (0 <= i0 <= i1 <= cfg.steps):
        raise ValueError(f"need 0 <= s <= t <= T, got s={s}, t={t}")

    grid = grid_for(cfg.N)
    factors = _linear_factors(grid, cfg.nu, cfg.dt)
    ou = _ou_factors(grid, cfg.nu, cfg.dt)
    wick_c = wick_constant(cfg.N, cfg.nu, None, cfg.d) if cfg.wick_enabled else None
    decay, phi1 = factors

    v = traj.u0.astype(np.complex128).copy()
    z = np.zeros_like(v)
    J = None
    path = [] if store_path else None
    for n in range(i1 + 1):
        u = v + z
        if n == i0:
            J = v0.astype(np.complex128).copy()
        if J is not None and path is not None:
            path.append(J.copy())
        if n == i1:
            break
        if J is not None and source is not None:
            J = J + source[n - i0] * cfg.dt
        if J is not None and cfg.linear_only:
            J = decay * J
        elif J is not None:
            u_phys = to_physical(u, grid)
            j_phys = to_physical(J, grid)
            s00 = from_physical(2.0 * u_phys[0] * j_phys[0], grid)
            s01 = from_physical(u_phys[0] * j_phys[1] + j_phys[0] * u_phys[1], grid)
            s11 = from_physical(2.0 * u_phys[1] * j_phys[1], grid)
            dbj = _projected_divergence(s00, s01, s11, grid)
            J = decay * J + (cfg.dt * phi1) * dbj
        v = step_v(v, z, cfg, grid, factors, wick_c)
        z = ou_step(z, xi_incr(traj.xi, n), ou[0], ou[1], grid)
    if store_path:
        return J, path
    return J


def xi_incr(xi: NoiseRealization, n: int) -> np.ndarray:
    return xi.increments(n)


def explosion_radius(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """The running-max monitor series (times, values); +inf past blow-up."""
    return traj.r_times, traj.r_series
