"""Scaling arithmetic and dyadic kernel decompositions."""

import numpy as np
import pytest
import scipy.signal
from hypothesis import given, settings
from hypothesis import strategies as hyp

from torusflow import kernels as kn

PARABOLIC3 = (2, 1, 1, 1)
RNG = np.random.default_rng(2024)


# ---------------------------------------------------------------------------
# scaled distance and index weights
# ---------------------------------------------------------------------------

def test_scaled_distance_zero_iff_equal():
    z = np.array([0.3, -0.2, 0.5, 0.1])
    assert kn.scaled_distance(z, z, PARABOLIC3) == 0.0
    zp = z + np.array([1e-3, 0, 0, 0])
    assert kn.scaled_distance(z, zp, PARABOLIC3) > 0


def test_scaled_distance_time_weight():
    z = np.zeros(4)
    zp = np.array([4.0, 0, 0, 0])
    assert kn.scaled_distance(z, zp, PARABOLIC3) == pytest.approx(2.0)


def test_scaled_distance_symmetric_and_triangle():
    # |a+b|^{1/s} <= |a|^{1/s} + |b|^{1/s} for s >= 1, so the triangle
    # inequality holds with constant one; brute-force over random triples
    pts = RNG.uniform(-2, 2, size=(200, 3, 4))
    for x, y, z in pts:
        dxz = kn.scaled_distance(x, z, PARABOLIC3)
        dxy = kn.scaled_distance(x, y, PARABOLIC3)
        dyz = kn.scaled_distance(y, z, PARABOLIC3)
        assert dxy == pytest.approx(kn.scaled_distance(y, x, PARABOLIC3))
        assert dxz <= dxy + dyz + 1e-12


def test_index_weight_examples():
    assert kn.index_weight((0, 0, 0, 0), PARABOLIC3) == 0
    assert kn.index_weight((1, 0, 0, 0), PARABOLIC3) == 2
    assert kn.index_weight((1, 2, 0, 1), PARABOLIC3) == 5


@given(hyp.tuples(*[hyp.integers(0, 5)] * 4), hyp.tuples(*[hyp.integers(0, 5)] * 4))
@settings(max_examples=60, deadline=None)
def test_index_weight_additive(k1, k2):
    ksum = tuple(a + b for a, b in zip(k1, k2))
    assert kn.index_weight(ksum, PARABOLIC3) == \
        kn.index_weight(k1, PARABOLIC3) + kn.index_weight(k2, PARABOLIC3)


def test_index_weight_rejects_negative():
    with pytest.raises(ValueError):
        kn.index_weight((1, -1, 0, 0), PARABOLIC3)


# ---------------------------------------------------------------------------
# Leray symbol
# ---------------------------------------------------------------------------

def test_leray_symbol_axis_mode():
    m = kn.leray_symbol(np.array([1.0, 0.0]), 2)
    assert np.allclose(m, [[0, 0], [0, 1]])


def test_leray_symbol_zero_mode_identity():
    assert np.allclose(kn.leray_symbol(np.zeros(2), 2), np.eye(2))


def test_leray_symbol_projector_identities():
    for d in (2, 3):
        for _ in range(50):
            k = RNG.integers(-8, 9, size=d).astype(float)
            if not k.any():
                continue
            m = kn.leray_symbol(k, d)
            assert np.allclose(m @ k, 0.0, atol=1e-14)
            assert np.allclose(m @ m, m, atol=1e-14)
            assert np.allclose(m, m.T, atol=1e-15)


# ---------------------------------------------------------------------------
# heat kernel
# ---------------------------------------------------------------------------

def test_heat_scaling_identity_d3():
    t = RNG.uniform(0.05, 1.0, 100)
    x = RNG.uniform(-1.0, 1.0, (100, 3))
    lhs = kn.heat_kernel(t / 4.0, np.sum((x / 2.0) ** 2, -1), 1.0, 3)
    rhs = 8.0 * kn.heat_kernel(t, np.sum(x ** 2, -1), 1.0, 3)
    assert np.max(np.abs(lhs - rhs) / rhs) <= 1e-8


def test_heat_scaling_identity_trivial_delta():
    t = RNG.uniform(0.05, 1.0, 10)
    x2 = RNG.uniform(0.0, 1.0, 10)
    assert np.array_equal(kn.heat_kernel(t, x2, 1.0, 2),
                          1.0 * kn.heat_kernel(t, x2, 1.0, 2))


def test_heat_kernel_vanishes_for_negative_time():
    assert kn.heat_kernel(-0.5, 0.3, 1.0, 2) == 0.0
    assert kn.heat_kernel(0.0, 0.0, 1.0, 2) == 0.0


# ---------------------------------------------------------------------------
# dyadic stacks
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def leray_stack():
    return kn.leray_kernel_stack(d=2, points_per_unit=128, n_levels=6)


@pytest.fixture(scope="module")
def leray_samples(leray_stack):
    grid = leray_stack.grid
    pts = np.stack(np.meshgrid(*grid.axes(), indexing="ij"), axis=-1)
    return kn.leray_component(pts, 0, 0)


def test_levels_supported_in_shrinking_balls(leray_stack):
    h = max(leray_stack.grid.step)
    for n in range(leray_stack.n_levels):
        assert leray_stack.support_violation(n) <= 2.0 ** (-n) + h


def test_moments_vanish_on_corrected_levels(leray_stack):
    for n in range(leray_stack.n_levels):
        if not leray_stack.corrected[n]:
            continue
        moments = leray_stack.level_moments(n)
        scale = max(1.0, np.max(np.abs(leray_stack.levels[n])))
        for m, v in moments.items():
            assert abs(v) <= 1e-10 * scale, (n, m, v)


def test_reconstruction_error_small(leray_stack, leray_samples):
    assert leray_stack.reconstruction_error(leray_samples, 1e-2) <= 1e-6


def test_partition_band_matches_kernel(leray_stack, leray_samples):
    # on the annulus where the partition of unity sums to one, the level sum
    # differs from the kernel only by the small moment corrections
    rel = leray_stack.singular_part_error(leray_samples, 2.0 ** -4, 0.25)
    assert rel <= 5e-2


def test_zero_kernel_decomposes_to_zero():
    grid = kn.GridSpec.centered(1.0, 32, 2)
    dk = kn.dyadic_decompose(np.zeros(grid.shape), grid, 3, order=0)
    assert all(np.all(lv == 0) for lv in dk.levels)
    rep = kn.verify_regularising_bounds(dk, k_max=0)
    assert rep.passed


def test_regularising_bounds_stable(leray_stack):
    rep = kn.verify_regularising_bounds(leray_stack, k_max=2)
    assert rep.passed
    for k, ratio in rep.ratios.items():
        assert ratio <= 4.0, (k, ratio)
    # 0-regularising growth exponent d + |k| for the flat sup
    assert rep.exponents[(0, 0)] == pytest.approx(2.0, abs=0.2)


def test_bound_report_exponent_prediction(leray_stack):
    rep = kn.verify_regularising_bounds(leray_stack, k_max=1)
    for k in rep.exponents:
        assert rep.exponents[k] == pytest.approx(rep.expected_exponents[k], abs=0.2)


# ---------------------------------------------------------------------------
# heat split
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def heat_pair():
    grid = kn.GridSpec(origin=(0.0, -1.0, -1.0),
                       step=(1 / 128, 1 / 64, 1 / 64),
                       shape=(129, 129, 129))
    return kn.heat_kernel_split(nu=1.0, grid=grid, n_levels=3)


def test_heat_split_reconstruction(heat_pair):
    assert heat_pair.reconstruction_error(1e-2) <= 1e-6


def test_heat_split_supports(heat_pair):
    for n in range(heat_pair.stack.n_levels):
        h = max(heat_pair.stack.grid.step)
        assert heat_pair.stack.support_violation(n) <= 2.0 ** (-n) + h


def test_heat_split_moments(heat_pair):
    for n in range(heat_pair.stack.n_levels):
        if heat_pair.stack.corrected[n]:
            scale = max(1.0, float(np.max(np.abs(heat_pair.stack.levels[n]))))
            for m, v in heat_pair.stack.level_moments(n).items():
                assert abs(v) <= 1e-10 * scale


def test_heat_split_remainder_smooth(heat_pair):
    # bounded grid derivatives away from the unresolved core; ceilings frozen
    # from a reference run (the moment-transfer bump carries the kernel's
    # order-one mass moment, so the time derivative is steep but bounded)
    grid = heat_pair.stack.grid
    rad = heat_pair.stack.metric_radius()
    outside = rad >= 0.25
    R = heat_pair.remainder
    assert np.max(np.abs(R[outside])) <= 3.0
    ceilings = (250.0, 30.0, 30.0)
    for ax in range(3):
        g = np.gradient(R, grid.step[ax], axis=ax)
        assert np.all(np.isfinite(g))
        assert np.max(np.abs(g[outside])) <= ceilings[ax]


def test_heat_split_rejects_unresolvable_levels():
    grid = kn.GridSpec(origin=(0.0, -1.0), step=(1 / 16, 1 / 16), shape=(17, 33))
    with pytest.raises(ValueError):
        kn.heat_kernel_split(nu=1.0, grid=grid, n_levels=4)


def test_heat_stack_bound_exponent_reported(heat_pair):
    rep = kn.verify_regularising_bounds(heat_pair.stack, k_max=0)
    # 2-regularising stacks do not satisfy the 0-regularising bound; the
    # report is informational and must simply produce a finite fit
    assert np.isfinite(rep.exponents[(0, 0, 0)])


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _small_heat_pair():
    grid = kn.GridSpec(origin=(0.0, -1.0, -1.0),
                       step=(1 / 32, 1 / 32, 1 / 32),
                       shape=(17, 65, 65))
    return kn.heat_kernel_split(nu=1.0, grid=grid, n_levels=2)


def test_convolve_with_dirac_stack_is_identity():
    kp = _small_heat_pair()
    sgrid = kn.GridSpec.centered(1.0, 32, 2)
    delta = np.zeros(sgrid.shape)
    delta[sgrid.shape[0] // 2, sgrid.shape[1] // 2] = 1.0 / sgrid.cell_volume
    dirac = kn.DyadicKernel(grid=sgrid, weights=(1, 1), order=0,
                            levels=[delta], corrected=[True])
    out = kn.convolve_KP(kp, dirac)
    ref = kp.stack.sum_levels()
    assert np.max(np.abs(out - ref)) <= 1e-8 * max(1.0, np.max(np.abs(ref)))


def test_convolve_matches_direct_convolution():
    kp = _small_heat_pair()
    pbar = kn.leray_kernel_stack(d=2, points_per_unit=32, n_levels=3)
    out = kn.convolve_KP(kp, pbar)
    ker = pbar.sum_levels() * pbar.grid.cell_volume
    slab = kp.stack.sum_levels()[5]
    direct = scipy.signal.convolve(slab, ker, mode="same", method="direct")
    assert np.max(np.abs(out[5] - direct)) <= 1e-6 * max(1.0, np.max(np.abs(direct)))


def test_convolve_zero_kernel_gives_zero():
    kp = _small_heat_pair()
    for lv in kp.stack.levels:
        lv[...] = 0.0
    pbar = kn.leray_kernel_stack(d=2, points_per_unit=32, n_levels=2)
    out = kn.convolve_KP(kp, pbar)
    assert np.all(out == 0.0)


def test_convolve_grid_mismatch_rejected():
    kp = _small_heat_pair()
    pbar = kn.leray_kernel_stack(d=2, points_per_unit=24, n_levels=2)
    with pytest.raises(ValueError):
        kn.convolve_KP(kp, pbar)
