"""White noise, shifts, stochastic convolution, Wick products, rough norms."""

import numpy as np
import pytest

from torusflow import fields as fd
from torusflow import noise as nz

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# white-noise increments
# ---------------------------------------------------------------------------

def test_regeneration_is_bit_exact():
    xi = nz.sample_white_noise(N=4, dt=1e-2, steps=10, seed=123)
    a = xi.increments(3)
    b = xi.increments(3)
    assert np.array_equal(a, b)
    xi2 = nz.sample_white_noise(N=4, dt=1e-2, steps=10, seed=123)
    assert np.array_equal(xi2.increments(3), a)


def test_streams_differ():
    xi0 = nz.sample_white_noise(N=4, dt=1e-2, steps=4, seed=1, stream=0)
    xi1 = nz.sample_white_noise(N=4, dt=1e-2, steps=4, seed=1, stream=1)
    assert not np.array_equal(xi0.increments(0), xi1.increments(0))


def test_increment_variance_matches_dt():
    # 1e5 step draws at a small cutoff; per-mode variance must be dt to 3 se
    N, dt, n = 2, 0.05, 100_000
    xi = nz.sample_white_noise(N, dt, n, seed=2024)
    grid = fd.grid_for(N)
    acc = np.zeros((2,) + grid.shape)
    acc2 = np.zeros((2,) + grid.shape)
    for i in range(n):
        w = xi.increments(i)
        m2 = w.real ** 2 + w.imag ** 2
        acc += m2
        acc2 += m2 ** 2
    mean = acc / n
    se = np.sqrt(np.maximum(acc2 / n - mean ** 2, 0.0) / n)
    live = mean > 0  # mirrored/zero entries excluded
    dev = np.abs(mean[live] - dt) / se[live]
    assert np.max(dev) <= 3.0
    assert np.all(mean[~live] == 0.0)


def test_cross_mode_independence():
    N, dt, n = 3, 0.1, 40_000
    xi = nz.sample_white_noise(N, dt, n, seed=77)
    rng = np.random.default_rng(0)
    idx = [(rng.integers(2), rng.integers(2 * N + 1), rng.integers(1, N + 1))
           for _ in range(12)]
    vals = np.empty((n, len(idx)), dtype=complex)
    for i in range(n):
        w = xi.increments(i)
        for j, ix in enumerate(idx):
            vals[i, j] = w[ix]
    for a in range(len(idx)):
        for b in range(a + 1, len(idx)):
            if idx[a] == idx[b]:
                continue
            cov = np.mean(vals[:, a] * np.conj(vals[:, b]))
            se = dt / np.sqrt(n)
            assert abs(cov) <= 3.0 * se


def test_hermitian_row_and_zero_mode():
    xi = nz.sample_white_noise(N=5, dt=0.01, steps=1, seed=3)
    w = xi.increments(0)
    N = 5
    assert np.allclose(w[..., :N, 0], np.conj(w[..., N + 1:, 0][..., ::-1]))
    assert np.all(w[..., N, 0] == 0.0)


# ---------------------------------------------------------------------------
# shifts
# ---------------------------------------------------------------------------

def _smooth_shift(N, steps, dt, seed, scale=1.0):
    grid = fd.grid_for(N)
    rng = nz.rng_for(seed, 5)
    raw = rng.standard_normal((steps, 2) + grid.shape + (2,))
    h = (raw[..., 0] + 1j * raw[..., 1]) * np.exp(-grid.k_sq) * scale
    for i in range(steps):
        h[i] = fd.leray_project(h[i], grid)
        fd.enforce_hermitian(h[i], grid)
    return nz.Shift(samples=h, dt=dt)


def test_zero_shift_is_identity():
    xi = nz.sample_white_noise(N=3, dt=0.01, steps=5, seed=4)
    h = nz.Shift(samples=np.zeros((5, 2, 7, 4), dtype=complex), dt=0.01)
    xis = nz.apply_shift(xi, h)
    for i in range(5):
        assert np.array_equal(xis.increments(i), xi.increments(i))


def test_shift_action_additive_exactly():
    N, steps, dt = 3, 6, 0.02
    xi = nz.sample_white_noise(N, dt, steps, seed=9)
    h = _smooth_shift(N, steps, dt, seed=10)
    g = _smooth_shift(N, steps, dt, seed=11)
    lhs = nz.apply_shift(nz.apply_shift(xi, h), g)
    rhs = nz.apply_shift(xi, h + g)
    for i in range(steps):
        assert np.array_equal(lhs.increments(i), rhs.increments(i))


def test_shift_lp_norm_finite():
    h = _smooth_shift(4, 8, 0.01, seed=12)
    assert 0 < h.lp_time_norm() < np.inf
    assert h.p == 8


def test_tail_slicing_matches():
    xi = nz.sample_white_noise(N=3, dt=0.01, steps=8, seed=13)
    tail = xi.tail(3)
    assert tail.steps == 5
    for i in range(5):
        assert np.array_equal(tail.increments(i), xi.increments(3 + i))


# ---------------------------------------------------------------------------
# stochastic convolution
# ---------------------------------------------------------------------------

def test_ou_matches_stationary_oracle():
    # ensemble second moments at a late time vs the closed form, aggregated
    # per |k|^2 shell plus a fixed subset checked mode by mode at 3 se
    N, nu, dt, steps, n_paths = 8, 1.0, 0.02, 300, 400
    grid = fd.grid_for(N)
    finals = np.empty((n_paths, 2) + grid.shape, dtype=complex)
    for p in range(n_paths):
        xi = nz.sample_white_noise(N, dt, steps, seed=555, stream=p)
        path = nz.stochastic_convolution(xi, nu)
        finals[p] = path.z[-1]
    m2 = np.mean(finals.real ** 2 + finals.imag ** 2, axis=0)
    se = np.std(finals.real ** 2 + finals.imag ** 2, axis=0) / np.sqrt(n_paths)
    V = nz.ou_stationary_variance(grid, nu)
    relax = -np.expm1(-2.0 * nu * grid.k_sq * steps * dt)
    kx, ky = grid.kx, grid.ky
    ksq = np.where(grid.k_sq == 0, 1.0, grid.k_sq)
    target = np.stack([(1 - kx * kx / ksq), (1 - ky * ky / ksq)]) * V * relax
    live = target > 1e-12
    # subset: all modes with |k|_inf <= 2
    sub = np.zeros_like(live)
    sub[:, N - 2:N + 3, :3] = True
    dev = np.abs(m2 - target) / np.where(se > 0, se, 1.0)
    assert np.max(dev[live & sub]) <= 3.0
    # aggregate over shells: ratio near one
    shells = {}
    for s in (1, 2, 4, 5):
        mask = live & (np.abs(grid.k_sq - s) < 0.5)
        shells[s] = float(np.sum(m2[:, mask[0, :, :]]) /
                          np.sum(target[:, mask[0, :, :]]))
    for s, ratio in shells.items():
        assert abs(ratio - 1.0) <= 0.05, (s, ratio)


def test_ou_variance_scales_inverse_nu():
    grid = fd.grid_for(4)
    v1 = nz.ou_stationary_variance(grid, 1.0)
    v4 = nz.ou_stationary_variance(grid, 4.0)
    live = grid.k_sq > 0
    assert np.allclose(v1[live] / v4[live], 4.0)


def test_zero_noise_zero_start_stays_zero():
    class ZeroXi(nz.NoiseRealization):
        def increments(self, i):
            g = fd.grid_for(self.N)
            return np.zeros((2,) + g.shape, dtype=complex)

    xi = ZeroXi(master_seed=0, stream=0, N=4, dt=0.01, steps=20)
    path = nz.stochastic_convolution(xi, 1.0)
    assert np.all(path.z == 0.0)


def test_path_divergence_free():
    xi = nz.sample_white_noise(6, 0.01, 50, seed=21)
    path = nz.stochastic_convolution(xi, 0.7)
    grid = fd.grid_for(6)
    for i in (1, 25, 50):
        assert fd.divergence_max(path.z[i], grid) <= 1e-12 * max(
            1.0, float(np.max(np.abs(path.z[i]))))


# ---------------------------------------------------------------------------
# Wick products
# ---------------------------------------------------------------------------

def test_wick_constant_frozen_example():
    # stationary, d=2, nu=1, N=1: brute-force mode sum gives 1.5/(2 pi)^2 I
    c = nz.wick_constant(1, 1.0, None)
    expected = 1.5 / (TWO_PI ** 2)
    assert np.allclose(c, expected * np.eye(2), atol=1e-15)
    # independent Monte-Carlo oracle
    acc = np.zeros((2, 2))
    n = 4000
    for p in range(n):
        z = nz.sample_stationary(1, 1.0, seed=9091, stream=p)
        phys = fd.to_physical(z, fd.grid_for(1))
        acc += np.mean(phys[:, None] * phys[None, :], axis=(-2, -1)) / n
    assert np.allclose(acc, c, atol=4e-3)


def test_wick_constant_zero_at_time_zero():
    assert np.allclose(nz.wick_constant(8, 1.0, 0.0), 0.0)


def test_wick_constant_monotone_in_cutoff():
    prev = np.zeros((2, 2))
    for N in (1, 2, 4, 8):
        c = nz.wick_constant(N, 1.0, None)
        assert c[0, 0] >= prev[0, 0] - 1e-15
        assert c[1, 1] >= prev[1, 1] - 1e-15
        prev = c


def test_wick_pair_centered():
    N, nu, dt, steps = 4, 1.0, 0.05, 60
    n_paths = 600
    acc = None
    for p in range(n_paths):
        xi = nz.sample_white_noise(N, dt, steps, seed=31, stream=p)
        path = nz.stochastic_convolution(xi, nu)
        w = nz.wick_pair(path, steps)
        acc = w if acc is None else acc + w
    mean = acc / n_paths
    c = nz.wick_constant(N, nu, steps * dt)
    scale = np.sqrt(np.trace(c) ** 2 / n_paths)
    assert np.max(np.abs(np.mean(mean, axis=(-2, -1)))) <= 4.0 * scale


def test_wick_pair_zero_path_at_time_zero():
    xi = nz.sample_white_noise(3, 0.01, 4, seed=1)
    path = nz.stochastic_convolution(xi, 1.0)
    w = nz.wick_pair(path, 0)   # z(0) = 0 and c(0) = 0
    assert np.allclose(w, 0.0)


def test_wick_pair_requires_provenance():
    with pytest.raises(TypeError):
        nz.wick_pair(np.zeros((2, 7, 4)), 0)
    xi = nz.sample_white_noise(3, 0.01, 4, seed=1)
    path = nz.stochastic_convolution(xi, 1.0, z0=nz.sample_rough_initial(-0.3, 3, 5))
    with pytest.raises(ValueError):
        nz.wick_pair(path, 2)


# ---------------------------------------------------------------------------
# rough norms and rough initial data
# ---------------------------------------------------------------------------

def test_holder_norm_single_mode_ratio():
    # a unit mode e^{ikx} has negative-exponent block norm ~ |k|^alpha (high
    # frequencies are small in distributional norms); ratio to the closed
    # form stays within one block window
    grid = fd.grid_for(32)
    alpha = -0.5
    norms = {}
    for k in (2, 4, 8, 16):
        u = np.zeros((2,) + grid.shape, dtype=complex)
        u[0, 32 + k, 0] = 0.5
        u[0, 32 - k, 0] = 0.5
        norms[k] = nz.holder_norm(u, alpha, grid)
    for k in (2, 4, 8, 16):
        ratio = norms[k] / (float(k) ** alpha)
        assert 0.5 <= ratio <= 2.0, (k, ratio)


def test_holder_norm_zero_field():
    grid = fd.grid_for(8)
    assert nz.holder_norm(np.zeros((2,) + grid.shape, dtype=complex), -0.4, grid) == 0.0


def test_holder_norm_positive_exponent():
    grid = fd.grid_for(16)
    u = np.zeros((2,) + grid.shape, dtype=complex)
    u[0, 17, 0] = 0.5
    u[0, 15, 0] = 0.5   # cos(x), Lipschitz with constant 1
    n = nz.holder_norm(u, 0.5, grid)
    assert 0.3 <= n <= 3.0


def test_white_noise_sample_slope():
    # spatial white noise has block sups growing ~ 2^{j d/2}: fitted Holder
    # exponent near -1 in d=2, drifting nowhere as N grows
    slopes = []
    for N in (16, 32, 64):
        grid = fd.grid_for(N)
        rng = nz.rng_for(404, N)
        raw = rng.standard_normal((2,) + grid.shape + (2,))
        w = raw[..., 0] + 1j * raw[..., 1]
        fd.enforce_hermitian(w, grid)
        slopes.append(nz.holder_slope(w, grid))
    for s in slopes:
        assert s == pytest.approx(-1.0, abs=0.25)


def test_rough_initial_slope_tracks_eta():
    for eta in (-0.4, -0.25):
        s = nz.holder_slope(nz.sample_rough_initial(eta, 64, seed=11))
        assert s == pytest.approx(eta, abs=0.15)


def test_rough_initial_divergence_free_and_seeded():
    u = nz.sample_rough_initial(-0.4, 32, seed=1)
    grid = fd.grid_for(32)
    assert fd.divergence_max(u, grid) <= 1e-12 * float(np.max(np.abs(u)))
    v = nz.sample_rough_initial(-0.4, 32, seed=2)
    # independent seeds decorrelate: normalized inner product near zero
    corr = fd.inner(u, v, grid) / np.sqrt(fd.energy(u, grid) * fd.energy(v, grid))
    assert abs(corr) <= 0.15
    assert np.array_equal(u, nz.sample_rough_initial(-0.4, 32, seed=1))


def test_rough_initial_rejects_bad_eta():
    with pytest.raises(ValueError):
        nz.sample_rough_initial(0.2, 16, seed=0)
