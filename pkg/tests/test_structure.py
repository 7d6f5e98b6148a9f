"""Symbolic layer: degrees, the set recursion, renormalization, shifts."""

import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hyp

from torusflow import structure as st
from torusflow.structure import (
    GradedBasis,
    RenormVector,
    Scaling,
    StructureSpec,
    SymbolError,
    apply_renorm,
    build_structure,
    classify_renorm,
    degree,
    extend_with_shifts,
    format_symbol,
    int_k,
    int_p,
    negative_sector,
    one,
    parse_symbol,
    poly,
    prod,
    renorm_dimension,
    sector_of,
    shape_of,
    xi,
    xi_hat,
)

SPEC3 = StructureSpec.default(3)
SPEC2 = StructureSpec.default(2)
A3 = SPEC3.alpha


def edge(i, i1, noise=None):
    """Composite edge I0^{i,i1}(I(Xi_i1))."""
    return int_p(i, i1, (), int_k((), xi(i1 if noise is None else noise)))


def dotted(i, i1, i2, child):
    """Composite edge I0^{i,i1}(I{e_{i2}}(child)), d inferred from spec3."""
    ek = (0,) + tuple(1 if m == i2 else 0 for m in range(3))
    return int_p(i, i1, (), int_k(ek, child))


# ---------------------------------------------------------------------------
# degree rules: oracle is an independent recursive evaluator on node tuples
# ---------------------------------------------------------------------------

def oracle_degree(sym, spec):
    node = st.node_of(sym)
    kind = node[0]
    w = spec.scaling.weights
    if kind == st.ONE:
        return Fraction(0)
    if kind == st.POLY:
        return Fraction(sum(a * b for a, b in zip(w, node[1])))
    if kind == st.XI:
        return spec.alpha
    if kind == st.XIHAT:
        return -spec.kappa
    if kind == st.INTK:
        return oracle_degree(node[2], spec) + 2 - sum(a * b for a, b in zip(w, node[1]))
    if kind == st.INTP:
        return oracle_degree(node[4], spec) - sum(node[3])
    return sum((oracle_degree(c, spec) for c in node[1]), Fraction(0))


def test_degree_unit():
    assert degree(one(), SPEC3) == 0


def test_degree_edge_is_alpha_plus_two():
    assert degree(edge(0, 1), SPEC3) == A3 + 2 == Fraction(-11, 20)


def test_degree_product_and_dotted():
    b = prod([edge(0, 1), edge(1, 2)])
    assert degree(b, SPEC3) == 2 * A3 + 4 == Fraction(-11, 10)
    d = dotted(0, 0, 1, b)
    assert degree(d, SPEC3) == 2 * A3 + 5 == Fraction(-1, 10)


def test_degree_matches_oracle_on_random_trees():
    rng = random.Random(7)

    def rand_sym(depth):
        r = rng.random()
        if depth == 0 or r < 0.25:
            return rng.choice([one(), xi(rng.randrange(3)),
                               poly(tuple(rng.randrange(2) for _ in range(4)))])
        if r < 0.5:
            return int_k(tuple(rng.randrange(2) for _ in range(4)), rand_sym(depth - 1))
        if r < 0.75:
            return int_p(rng.randrange(3), rng.randrange(3),
                         tuple(rng.randrange(2) for _ in range(3)), rand_sym(depth - 1))
        return prod([rand_sym(depth - 1), rand_sym(depth - 1)])

    for _ in range(200):
        s = rand_sym(3)
        assert degree(s, SPEC3) == oracle_degree(s, SPEC3)


def test_degree_additivity_on_products():
    rng = random.Random(3)
    factors = [edge(i, i1) for i in range(3) for i1 in range(3)]
    for _ in range(50):
        a, b = rng.choice(factors), rng.choice(factors)
        assert degree(prod([a, b]), SPEC3) == degree(a, SPEC3) + degree(b, SPEC3)


def test_degree_rejects_malformed_nodes():
    bad = (st.PROD, (one(),))  # single-factor product
    with pytest.raises(SymbolError):
        degree(bad, SPEC3)


def test_float_parameters_rejected():
    with pytest.raises(TypeError):
        StructureSpec(Scaling(2, 3), -2.55)


def test_alpha_window_enforced():
    with pytest.raises(ValueError):
        StructureSpec(Scaling(2, 3), Fraction(-5, 2))
    with pytest.raises(ValueError):
        StructureSpec(Scaling(2, 2), Fraction(-19, 10))


# ---------------------------------------------------------------------------
# canonical form
# ---------------------------------------------------------------------------

def test_product_commutative_and_flattening():
    a, b, c = edge(0, 0), edge(1, 1), edge(2, 2)
    assert prod([a, b]) == prod([b, a])
    assert prod([prod([a, b]), c]) == prod([a, prod([b, c])])
    assert prod([a, one()]) == a
    assert prod([one(), one()]) == one()


def test_product_merges_polynomials():
    x1 = poly((0, 1, 0, 0))
    x2 = poly((0, 0, 1, 0))
    assert prod([x1, x2]) == poly((0, 1, 1, 0))
    mixed = prod([x1, edge(0, 0), x2])
    node = st.node_of(mixed)
    polys = [c for c in node[1] if st.kind_of(c) == st.POLY]
    assert polys == [poly((0, 1, 1, 0))]


def test_zero_multi_index_normalizes():
    assert int_k((0, 0, 0, 0), xi(0)) == int_k((), xi(0))
    assert poly((0, 0, 0, 0)) == one()


def test_format_parse_roundtrip():
    rng = random.Random(11)
    pool = [one(), xi(0), xi_hat(2), poly((1, 0, 2, 0)),
            edge(0, 1), dotted(2, 1, 0, prod([edge(1, 0), edge(0, 2)]))]
    for _ in range(100):
        s = rng.choice(pool)
        if rng.random() < 0.5:
            t = rng.choice(pool)
            if {s, t} != {one()}:
                s = prod([s, t])
        assert parse_symbol(format_symbol(s)) == s


@given(hyp.lists(hyp.sampled_from(range(3)), min_size=2, max_size=4))
@settings(max_examples=50, deadline=None)
def test_product_order_independence(idx):
    factors = [edge(i, (i + 1) % 3) for i in idx]
    rng = random.Random(sum(idx))
    shuffled = factors[:]
    rng.shuffle(shuffled)
    assert prod(factors) == prod(shuffled)


# ---------------------------------------------------------------------------
# the recursion
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def basis3():
    return build_structure(SPEC3)


@pytest.fixture(scope="module")
def basis2():
    return build_structure(SPEC2)


def test_negative_sector_d3_has_nine_shapes(basis3):
    neg = negative_sector(basis3)
    shapes = {shape_of(s) for s, _ in neg}
    assert len(shapes) == 9
    assert "1" in shapes
    assert "I0(I(Xi))" in shapes
    assert "I0(I(Xi))*I0(I(Xi))" in shapes
    assert "I'(I0(I(Xi))*I0(I(Xi)))" in shapes  # the plain heat-integrated pair


def test_negative_sector_d3_degrees(basis3):
    degs = sorted({d for _, d in negative_sector(basis3)})
    a = A3
    assert degs == sorted({Fraction(0), a + 2, 2 * a + 4, 2 * a + 5,
                           3 * a + 7, 4 * a + 10})


def test_negative_sector_d2_has_three_shapes(basis2):
    neg = negative_sector(basis2)
    shapes = sorted({shape_of(s) for s, _ in neg})
    assert shapes == ["1", "I0(I(Xi))", "I0(I(Xi))*I0(I(Xi))"]
    # 1 unit + 4 single edges + 10 unordered pairs of edges
    assert len(neg) == 15


def test_negative_sector_sorted_ascending(basis3):
    degs = [d for _, d in negative_sector(basis3)]
    assert degs == sorted(degs)
    assert degs[-1] == 0  # the adjoined unit


def test_max_levels_zero_gives_polynomials_only():
    b = build_structure(SPEC3, max_levels=0)
    assert all(st.kind_of(e.symbol) in (st.ONE, st.POLY) for e in b.entries)


def test_levels_monotone():
    prev = set()
    for m in range(0, 7):
        b = build_structure(SPEC3, max_levels=m)
        cur = {e.symbol for e in b.entries}
        assert prev <= cur
        prev = cur


def test_negative_sector_stable_under_extra_levels(basis3):
    ref = set(s for s, _ in negative_sector(basis3))
    for extra in (5, 6, 8):
        b = build_structure(SPEC3, max_levels=extra)
        got = set(s for s, _ in negative_sector(b))
        if extra >= 5:
            assert got == ref
    assert basis3.negative_stabilized_level == 5


def test_d2_full_slice_stabilizes(basis2):
    assert basis2.stabilized
    b_more = build_structure(SPEC2, max_levels=SPEC2.max_levels + 2)
    assert {e.symbol for e in b_more.entries} == {e.symbol for e in basis2.entries}


def test_growth_guard_reports_when_unstable():
    b = build_structure(SPEC3, max_levels=3)
    assert not b.stabilized
    assert any("still growing" in line for line in b.growth_report)


def test_no_hats_without_extension(basis3):
    assert all(not st._contains_hat(e.symbol) for e in basis3.entries)


def test_symbols_unique(basis3):
    syms = [e.symbol for e in basis3.entries]
    assert len(syms) == len(set(syms))


def test_levels_recorded(basis3):
    by_shape = {}
    for e in basis3.entries:
        by_shape.setdefault(shape_of(e.symbol), set()).add(e.level)
    # the deepest negative tree needs five levels of the recursion
    deep = "I0(I'(I0(I'(I0(I(Xi))*I0(I(Xi))))*I0(I(Xi))))*I0(I(Xi))"
    assert by_shape[deep] == {5}
    assert by_shape["I0(I(Xi))"] == {1}


# ---------------------------------------------------------------------------
# renormalization group
# ---------------------------------------------------------------------------

def test_renorm_dimension_values():
    assert renorm_dimension(SPEC3) == 3 ** 4 + 3 * 3 ** 10 == 177228
    assert renorm_dimension(SPEC2) == 2 ** 4 == 16
    spec1 = StructureSpec(Scaling(2, 1), Fraction(-51, 20))
    assert renorm_dimension(spec1) == 1 + 3  # all index tuples collapse


def test_renorm_vector_key_count_matches_dimension():
    rng = np.random.default_rng(1)
    for spec in (SPEC3, SPEC2):
        g = RenormVector.random(spec, rng)
        assert g.key_count() == renorm_dimension(spec)


def test_apply_renorm_on_quadratic_tree():
    g = RenormVector.zeros(SPEC3)
    g.families["C1"][0, 1, 2, 0] = 3
    g.den = 2
    tau = prod([edge(0, 1), edge(2, 0)])
    out = apply_renorm(g, tau)
    assert out[tau] == 1
    assert out[one()] == Fraction(-3, 2)


def test_apply_renorm_zero_is_identity(basis3):
    g = RenormVector.zeros(SPEC3)
    for e in basis3.entries[:200]:
        assert apply_renorm(g, e.symbol) == {e.symbol: Fraction(1)}


def test_renorm_group_law_random(basis3):
    rng = np.random.default_rng(42)
    random.seed(9)
    targets = [s for s, _ in negative_sector(basis3)]
    sample = random.sample(targets, 80)
    for _ in range(5):
        g = RenormVector.random(SPEC3, rng, den=int(rng.integers(1, 13)))
        h = RenormVector.random(SPEC3, rng, den=int(rng.integers(1, 13)))
        gh = g + h
        for s in sample:
            assert apply_renorm(g, apply_renorm(h, s)) == apply_renorm(gh, s)


def test_renorm_locality(basis3):
    rng = np.random.default_rng(5)
    g = RenormVector.random(SPEC3, rng)
    random.seed(2)
    for s, _ in random.sample(negative_sector(basis3), 300):
        out = apply_renorm(g, s)
        out[s] = out.get(s, Fraction(0)) - 1
        assert set(k for k, v in out.items() if v) <= {one()}


def test_renorm_families_partition_negative_sector(basis3):
    counts = {}
    for s, _ in negative_sector(basis3):
        hit = classify_renorm(s, SPEC3)
        counts[hit[0] if hit else None] = counts.get(hit[0] if hit else None, 0) + 1
    assert counts["C1"] == 45  # unordered pairs of nine edges
    assert {shape_of(s) for s, _ in negative_sector(basis3)
            if (classify_renorm(s, SPEC3) or ("", 0))[0] == "C2"} == {
        "I0(I'(I0(I(Xi))*I0(I(Xi))))*I0(I'(I0(I(Xi))*I0(I(Xi))))"}


def test_renorm_fixes_everything_in_2d_but_quadratic(basis2):
    rng = np.random.default_rng(8)
    g = RenormVector.random(SPEC2, rng)
    for s, _ in negative_sector(basis2):
        hit = classify_renorm(s, SPEC2)
        if shape_of(s) == "I0(I(Xi))*I0(I(Xi))":
            assert hit is not None and hit[0] == "C1"
        else:
            assert hit is None
            assert apply_renorm(g, s) == {s: Fraction(1)}


def test_apply_renorm_rejects_symbols_outside_basis(basis3):
    g = RenormVector.zeros(SPEC3)
    stranger = int_k((), int_k((), xi(0)))
    with pytest.raises(SymbolError):
        apply_renorm(g, stranger, basis=basis3)


# ---------------------------------------------------------------------------
# shift extension
# ---------------------------------------------------------------------------

def test_xihat_degree_rule():
    assert degree(xi_hat(0), SPEC3) == -SPEC3.kappa
    hat_edge = int_p(0, 1, (), int_k((), xi_hat(1)))
    assert degree(hat_edge, SPEC3) == 2 - SPEC3.kappa


@pytest.fixture(scope="module")
def ext2(basis2):
    return extend_with_shifts(basis2)


def test_extension_conservative(basis2, ext2):
    plain = {e.symbol for e in ext2.entries if not st._contains_hat(e.symbol)}
    assert plain == {e.symbol for e in basis2.entries}
    for e in basis2.entries:
        assert ext2.entry(e.symbol).degree == e.degree


def test_extension_new_symbols_strictly_positive(ext2, basis2):
    original = {e.symbol for e in basis2.entries}
    news = [e for e in ext2.entries if e.symbol not in original]
    assert news, "extension should add hatted symbols below the 2D cutoff"
    for e in news:
        assert st._contains_hat(e.symbol)
        assert e.degree > 0
        base = st.unhat(e.symbol)
        gap = -SPEC2.alpha - SPEC2.kappa
        assert e.degree == degree(base, SPEC2) + st.hat_substitutions(e.symbol) * gap
        assert e.degree > degree(base, SPEC2)


def test_extension_zero_substitutions_is_identity(ext2, basis2):
    for e in basis2.entries[:50]:
        assert st.unhat(e.symbol) == e.symbol
        assert ext2.entry(e.symbol).degree == e.degree


def test_extension_of_extension_is_noop(ext2):
    assert extend_with_shifts(ext2) is ext2


def test_extension_d3_preserves_negative_sector(basis3):
    ext = extend_with_shifts(basis3)
    assert set(negative_sector(ext)) == set(negative_sector(basis3))


def test_kappa_guard_raises_on_fabricated_floor():
    deep = int_k((), xi(0))
    fake = GradedBasis(
        spec=SPEC2,
        entries=[st.BasisEntry(deep, Fraction(-3), 1, "W^{1,1}")],
        basis_cut=SPEC2.gamma_cut, feeder_cut=Fraction(1))
    with pytest.raises(SymbolError):
        extend_with_shifts(fake)


def test_renorm_fixes_hatted_symbols(ext2):
    rng = np.random.default_rng(13)
    g = RenormVector.random(SPEC2, rng)
    for e in ext2.entries:
        if st._contains_hat(e.symbol):
            assert apply_renorm(g, e.symbol) == {e.symbol: Fraction(1)}


# ---------------------------------------------------------------------------
# sectors
# ---------------------------------------------------------------------------

def test_sector_classification():
    info = sector_of(edge(0, 1), SPEC3)
    assert info.tag == "solution"
    assert info.min_degree == A3 + 2
    assert sector_of(poly((0, 1, 0, 0)), SPEC3).tag == "polynomial"
    pr = prod([edge(0, 0), edge(1, 1)])
    info = sector_of(pr, SPEC3)
    assert info.tag == "product"
    assert info.min_degree == 2 * A3 + 5
    assert st.jacobian_sector_floor(SPEC3) == A3 + 3
