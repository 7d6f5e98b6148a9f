"""Semigroup estimation, control identity, gradient estimators, probes."""

import numpy as np
import pytest

from torusflow import fields as fd
from torusflow import harness as hn
from torusflow import noise as nz
from torusflow import solver as sv

NU, N = 1.0, 16
DT = 0.5 / (NU * N * N)


def small_cfg(T, **kw):
    return sv.SolverConfig(nu=NU, N=N, dt=DT, T=T, seed=0, **kw)


@pytest.fixture(scope="module")
def base_setup():
    t = 128 * DT
    cfg = small_cfg(t)
    xi = nz.sample_white_noise(N, DT, cfg.steps, seed=3)
    u0 = nz.sample_rough_initial(-0.4, N, seed=4, amplitude=0.7)
    traj = sv.solve(u0, xi, cfg)
    return cfg, xi, u0, traj


# ---------------------------------------------------------------------------
# observables
# ---------------------------------------------------------------------------

def test_observable_bounded_and_cemetery_handling():
    grid = fd.grid_for(N)
    g = hn.mode_probe(N, (1, 0), 1)
    psi = hn.smoothed_indicator(g, 0.0, 0.5, grid)
    u = nz.sample_rough_initial(-0.4, N, seed=1)[None]
    val = psi(u)
    assert 0.0 <= val[0] <= 1.0
    cyl = hn.bounded_cylinder([g], [2.0], grid)
    assert abs(cyl(u)[0]) <= 1.0


def test_mode_probe_unit_energy():
    grid = fd.grid_for(N)
    for k in ((1, 0), (0, 1), (2, 1), (1, -2)):
        g = hn.mode_probe(N, k, component=0)
        assert float(fd.energy(g, grid)) == pytest.approx(1.0, rel=1e-12)
        assert fd.divergence_max(g, grid) >= 0.0  # probes need not be div-free


# ---------------------------------------------------------------------------
# semigroup estimation
# ---------------------------------------------------------------------------

def test_constant_observable_estimates_one():
    grid = fd.grid_for(N)
    psi = hn.Observable(kind="const", fn=lambda u: np.ones(u.shape[0]), bound=1.0)
    cfg = small_cfg(20 * DT)
    u0 = nz.sample_rough_initial(-0.4, N, seed=7, amplitude=0.5)
    est = hn.estimate_semigroup(psi, u0, cfg.T, 50, cfg, master_seed=1)
    assert est.value == 1.0
    assert est.stderr == 0.0
    assert est.n_exploded == 0


def test_time_zero_evaluates_exactly():
    grid = fd.grid_for(N)
    g = hn.mode_probe(N, (1, 0), 1)
    psi = hn.smoothed_indicator(g, 0.0, 1.0, grid)
    u0 = nz.sample_rough_initial(-0.4, N, seed=8)
    cfg = small_cfg(10 * DT)
    est = hn.estimate_semigroup(psi, u0, 0.0, 50, cfg, master_seed=1)
    assert est.value == float(psi(u0[None])[0])
    assert est.n_paths == 1


def test_chapman_kolmogorov_consistency():
    cfg = sv.SolverConfig(nu=0.5, N=8, dt=2e-3, T=0.2, seed=0)
    grid = fd.grid_for(8)
    g = hn.mode_probe(8, (1, 0), 1)
    psi = hn.smoothed_indicator(g, 0.0, 1.0, grid)
    u0 = nz.sample_stationary(8, 0.5, seed=7)
    direct = hn.estimate_semigroup(psi, u0, 0.2, 500, cfg, master_seed=11)
    nested = hn.nested_semigroup(psi, u0, 0.12, 0.08, 100, 50, cfg,
                                 master_seed=12)
    assert direct.agrees_with(nested, sigmas=3.0)


def test_exploded_paths_contribute_zero():
    cfg = small_cfg(20 * DT, r_max=1e-6)
    grid = fd.grid_for(N)
    psi = hn.Observable(kind="const", fn=lambda u: np.ones(u.shape[0]), bound=1.0)
    u0 = nz.sample_rough_initial(-0.4, N, seed=9, amplitude=3.0)
    est = hn.estimate_semigroup(psi, u0, cfg.T, 30, cfg, master_seed=2,
                                monitor_every=1)
    assert est.n_exploded == 30
    assert est.value == 0.0


# ---------------------------------------------------------------------------
# control identity
# ---------------------------------------------------------------------------

def test_control_identity_residual(base_setup):
    cfg, xi, u0, traj = base_setup
    rng = np.random.default_rng(5)
    for k in range(3):
        v0 = nz.sample_rough_initial(-0.3, N, seed=50 + k)
        h = hn.build_control(traj, v0, cfg.T)
        resid = hn.control_residual(traj, h, v0, cfg.T)
        assert resid <= 1e-3
        assert h.steps == cfg.steps
        assert np.isfinite(h.lp_time_norm())


def test_control_linear_case_closed_form():
    # u == 0 and no noise: h(s) = -e^{nu s Lap} v0 / t
    cfgl = small_cfg(64 * DT, linear_only=True)
    grid = fd.grid_for(N)

    class ZeroXi(nz.NoiseRealization):
        def increments(self, i):
            return np.zeros((2,) + grid.shape, dtype=complex)

    xi = ZeroXi(master_seed=0, stream=0, N=N, dt=DT, steps=cfgl.steps)
    traj = sv.solve(np.zeros((2,) + grid.shape, dtype=complex), xi, cfgl)
    v0 = nz.sample_rough_initial(-0.3, N, seed=51)
    h = hn.build_control(traj, v0, cfgl.T)
    for n in (0, 10, 40):
        ref = -np.exp(-cfgl.nu * grid.k_sq * n * DT) * v0 / cfgl.T
        assert np.max(np.abs(h.samples[n] - ref)) <= 1e-12 * np.max(np.abs(ref))


def test_control_zero_direction(base_setup):
    cfg, xi, u0, traj = base_setup
    h = hn.build_control(traj, np.zeros_like(u0), cfg.T)
    assert np.all(h.samples == 0.0)


def test_control_adapted(base_setup):
    cfg, xi, u0, traj = base_setup
    cut = cfg.steps // 2
    other = nz.sample_white_noise(N, DT, cfg.steps, seed=999)

    class Hybrid(nz.NoiseRealization):
        def increments(self, i):
            return xi.increments(i) if i < cut else other.increments(i)

    hyb = Hybrid(master_seed=0, stream=0, N=N, dt=DT, steps=cfg.steps)
    traj2 = sv.solve(u0, hyb, cfg)
    v0 = nz.sample_rough_initial(-0.3, N, seed=52)
    h1 = hn.build_control(traj, v0, cfg.T)
    h2 = hn.build_control(traj2, v0, cfg.T)
    assert np.array_equal(h1.samples[:cut], h2.samples[:cut])
    assert not np.array_equal(h1.samples[cut:], h2.samples[cut:])


# ---------------------------------------------------------------------------
# gradient estimators
# ---------------------------------------------------------------------------

def test_bel_constant_observable_is_zero():
    psi = hn.Observable(kind="const", fn=lambda u: np.full(u.shape[0], 0.7),
                        bound=1.0)
    cfg = small_cfg(32 * DT)
    u0 = nz.sample_stationary(N, NU, seed=13)
    v0 = hn.mode_probe(N, (1, 0), 1)
    est = hn.bel_gradient(psi, u0, v0, cfg.T, 300, cfg, master_seed=14,
                          center=False)
    assert abs(est.value) <= 3.5 * est.stderr


def test_bel_linear_calibration_matches_closed_form():
    # nonlinearity off: gradient of <u_t, g> is <e^{nu t Lap} v0, g> exactly
    t = 0.3
    cfg = sv.SolverConfig(nu=0.5, N=8, dt=t / 60, T=t, linear_only=True, seed=0)
    grid = fd.grid_for(8)
    g = hn.mode_probe(8, (1, 0), 1)
    v0 = g + 0.5 * hn.mode_probe(8, (0, 1), 0)
    psi = hn.Observable(kind="linear",
                        fn=lambda ub: fd.inner(np.broadcast_to(g, ub.shape),
                                               ub, fd.grid_for(8)),
                        bound=1e9)
    est = hn.bel_gradient(psi, np.zeros((2,) + grid.shape, dtype=complex),
                          v0, t, 6000, cfg, master_seed=7)
    oracle = hn.linear_gradient_oracle(g, v0, t, cfg)
    assert abs(est.value - oracle) <= 3.0 * est.stderr


def test_bel_matches_fd_nonlinear():
    nu = 0.25
    t = 0.25
    dt = 0.5 / (nu * N * N)
    steps = int(round(t / dt))
    cfg = sv.SolverConfig(nu=nu, N=N, dt=t / steps, T=t, seed=0)
    grid = fd.grid_for(N)
    u0 = nz.sample_stationary(N, nu, seed=21)
    g = hn.mode_probe(N, (1, 0), 1)
    psi = hn.bounded_cylinder([g], [1.0], grid, scale=0.5)
    bel = hn.bel_gradient(psi, u0, g, t, 4000, cfg, master_seed=33,
                          t0=t / 4, dtype=np.complex64, noise_mode="block")
    fdg = hn.fd_gradient(psi, u0, g, t, 1500, cfg, master_seed=44, eps=2e-2,
                         dtype=np.complex64, noise_mode="block")
    assert fdg.value != 0.0
    assert abs(bel.value - fdg.value) <= max(
        0.2 * abs(fdg.value), 3.0 * np.hypot(bel.stderr, fdg.stderr))


def test_derivative_vs_fd_sweep(base_setup):
    cfg, xi, u0, traj = base_setup
    v0 = nz.sample_rough_initial(-0.3, N, seed=60)
    rep = hn.derivative_vs_fd(u0, v0, cfg.T, cfg, master_seed=3)
    assert rep["passed"]
    assert rep["best_rel_err"] <= 1e-3
    assert set(rep["errors"]) == {1e-3, 1e-4, 1e-5, 1e-6, 1e-7}


def test_derivative_zero_direction(base_setup):
    cfg, xi, u0, traj = base_setup
    out = sv.jacobian_apply(traj, np.zeros_like(u0), 0.0, cfg.T)
    assert np.all(out == 0.0)


# ---------------------------------------------------------------------------
# probes and experiments (small-scale smoke versions)
# ---------------------------------------------------------------------------

def test_strong_feller_probe_small():
    nu = 0.25
    t = 0.25
    dt = 0.5 / (nu * N * N)
    steps = int(round(t / dt))
    cfg = sv.SolverConfig(nu=nu, N=N, dt=t / steps, T=t, seed=0)
    x = nz.sample_rough_initial(-0.4, N, seed=3)
    e = nz.sample_rough_initial(-0.4, N, seed=4)
    e = e / nz.holder_norm(e, -0.4)
    rep = hn.strong_feller_probe(x, e, [0.4, 0.2, 0.1], t, cfg, n_paths=400,
                                 master_seed=5, bel_t0=t / 4)
    assert not rep.inconclusive
    assert rep.monotone
    assert rep.within_bound
    assert len(rep.gaps) == 3


def test_feller_gap_zero_at_same_point():
    nu = 0.25
    t = 16 * DT
    cfg = sv.SolverConfig(nu=nu, N=N, dt=DT, T=t, seed=0)
    x = nz.sample_rough_initial(-0.4, N, seed=3)
    rep = hn.strong_feller_probe(x, np.zeros_like(x), [0.1], t, cfg,
                                 n_paths=150, master_seed=6, bel_t0=t / 2)
    assert rep.gaps[0] == 0.0  # identical arms share noise


def test_feller_sharp_indicator_at_time_zero():
    grid = fd.grid_for(N)
    g = hn.mode_probe(N, (1, 0), 1)
    psi = hn.smoothed_indicator(g, 0.0, 1e-3, grid)
    x = nz.sample_rough_initial(-0.4, N, seed=3)
    y = x + 0.5 * nz.sample_rough_initial(-0.4, N, seed=4)
    cfg = small_cfg(10 * DT)
    ex = hn.estimate_semigroup(psi, x, 0.0, 1, cfg, master_seed=0)
    ey = hn.estimate_semigroup(psi, y, 0.0, 1, cfg, master_seed=0)
    gap = abs(ex.value - ey.value)
    assert gap == abs(float(psi(x[None])[0]) - float(psi(y[None])[0]))


def test_invariance_small():
    rep = hn.invariance_test(nu=0.25, N_stokes=8, N_nonlinear=12, n_paths=200,
                             T=0.5, master_seed=2, stokes_nu=1.0,
                             stokes_steps=6000, stokes_paths=24,
                             stokes_dt=0.01, burn_in=1000,
                             ratio_tol=0.05, drift_tol=0.08)
    assert rep.stokes_pass
    assert not rep.burn_in_flag
    assert rep.kurtosis_pass


def test_tiny_cutoff_longrun_matches_gaussian():
    tiny = hn.tiny_cutoff_longrun(nu=0.25, N=2, dt=0.05, T=1500.0, n_paths=4,
                                  master_seed=3)
    for s, (ratio, se) in tiny.items():
        assert abs(ratio - 1.0) <= 3.5 * se, (s, ratio, se)


def test_global_existence_small():
    nu = 0.25
    cfg = sv.SolverConfig(nu=nu, N=N, dt=0.5 / (nu * N * N), T=0.5, seed=0)
    rep = hn.global_existence_experiment(-0.4, 40, 0.5, cfg, master_seed=8)
    assert rep.n_exploded == 0
    assert rep.explosion_fraction == 0.0
    assert not rep.adversarial_exploded
    assert rep.r_quantiles[1.0] < cfg.r_max


def test_batch_vs_pooled_mean_consistency():
    # estimator scaffolding: batch means agree with the pooled mean
    rng = np.random.default_rng(0)
    vals = rng.normal(0.3, 1.0, 4000)
    est = hn._batch_stats(vals)
    assert est.value == pytest.approx(vals.mean(), abs=1e-12)
    assert abs(np.mean(est.batch_means) - est.value) <= 1e-12
    assert est.stderr == pytest.approx(1.0 / np.sqrt(4000), rel=0.35)
