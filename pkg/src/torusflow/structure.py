"""Symbolic side of the toolkit: trees, parabolic degrees, graded basis,
renormalization-group action and the shift-extended alphabet.

Symbols are trees over the alphabet

    1, X^k, Xi_i, XiHat_i, I{k}(.), I0^{i,j}{k}(.), products

where ``I`` integrates against the (k-th derivative of the) heat kernel and
``I0`` against the Leray kernel.  The composite edges used by the model-space
recursion are ``I0^{i,i1}(I(.))`` and ``I0^{i,i1}(I{e_l}(.))``.

Degrees are exact ``Fraction`` values; they drive set membership, so no
floating point is allowed anywhere in this module.

Symbols are hash-consed into a process-global table and handled as opaque
integer ids.  Products are stored flattened with children sorted by id, so
identical multisets of factors always intern to the same id.
"""

from __future__ import annotations

import bisect
import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, NamedTuple, Optional

__all__ = [
    "Scaling",
    "StructureSpec",
    "GradedBasis",
    "BasisEntry",
    "RenormVector",
    "one",
    "poly",
    "xi",
    "xi_hat",
    "int_k",
    "int_p",
    "prod",
    "kind_of",
    "node_of",
    "degree",
    "shape_of",
    "format_symbol",
    "parse_symbol",
    "build_structure",
    "negative_sector",
    "renorm_dimension",
    "classify_renorm",
    "apply_renorm",
    "extend_with_shifts",
    "sector_of",
]

# node kind tags
ONE, POLY, XI, XIHAT, INTK, INTP, PROD = range(7)

_KIND_NAMES = {ONE: "1", POLY: "X", XI: "Xi", XIHAT: "XiHat",
               INTK: "I", INTP: "I0", PROD: "*"}


class SymbolError(ValueError):
    """Raised for malformed or non-canonical symbol input."""


# ---------------------------------------------------------------------------
# hash-consed symbol store
# ---------------------------------------------------------------------------

_NODES: list[tuple] = []
_IDS: dict[tuple, int] = {}


def _intern(node: tuple) -> int:
    sid = _IDS.get(node)
    if sid is None:
        sid = len(_NODES)
        _NODES.append(node)
        _IDS[node] = sid
    return sid


def node_of(sym: int) -> tuple:
    """Return the stored node tuple of a symbol id."""
    return _NODES[sym]


def kind_of(sym: int) -> int:
    return _NODES[sym][0]


_ONE_ID = _intern((ONE,))


def one() -> int:
    return _ONE_ID


def poly(k: tuple[int, ...]) -> int:
    """X^k with k a space-time multi-index (time component first)."""
    k = tuple(int(v) for v in k)
    if any(v < 0 for v in k):
        raise SymbolError(f"negative multi-index entry in {k}")
    if not any(k):
        return _ONE_ID
    return _intern((POLY, k))


def xi(i: int) -> int:
    """Noise symbol for component i (0-based)."""
    return _intern((XI, int(i)))


def xi_hat(i: int) -> int:
    """Shift-noise symbol for component i (0-based); only valid in extended structures."""
    return _intern((XIHAT, int(i)))


def _norm_mi(k) -> tuple[int, ...]:
    k = tuple(int(v) for v in k)
    if any(v < 0 for v in k):
        raise SymbolError(f"negative multi-index entry in {k}")
    return k if any(k) else ()


def int_k(k: tuple[int, ...], child: int) -> int:
    """Integration against the k-th space-time derivative of the heat kernel."""
    return _intern((INTK, _norm_mi(k), child))


def int_p(i: int, j: int, k: tuple[int, ...], child: int) -> int:
    """Integration against the k-th space derivative of the Leray kernel, component pair (i, j)."""
    return _intern((INTP, int(i), int(j), _norm_mi(k), child))


def prod(children: Iterable[int]) -> int:
    """Commutative product; flattens nested products, merges polynomial
    factors (X^k X^l = X^{k+l}) and drops unit factors."""
    flat: list[int] = []
    poly_k: Optional[list[int]] = None
    for c in children:
        node = _NODES[c]
        kind = node[0]
        if kind == ONE:
            continue
        if kind == PROD:
            for cc in node[1]:
                nn = _NODES[cc]
                if nn[0] == POLY:
                    poly_k = _merge_poly(poly_k, nn[1])
                else:
                    flat.append(cc)
        elif kind == POLY:
            poly_k = _merge_poly(poly_k, node[1])
        else:
            flat.append(c)
    if poly_k is not None:
        flat.append(poly(tuple(poly_k)))
    if not flat:
        return _ONE_ID
    if len(flat) == 1:
        return flat[0]
    # factor order: interned id; consistent within a process, and formatting
    # re-sorts children textually so emitted output is process-independent
    flat.sort()
    return _intern((PROD, tuple(flat)))


def _merge_poly(acc: Optional[list[int]], k: tuple[int, ...]) -> list[int]:
    if acc is None:
        return list(k)
    if len(acc) < len(k):
        acc = acc + [0] * (len(k) - len(acc))
    for m, v in enumerate(k):
        acc[m] += v
    return acc


def _prod2(a: int, b: int) -> int:
    """Two-factor product for the builder hot loop.

    Inputs must be canonical non-unit, non-product symbols with at most one
    polynomial among them (the builder call sites guarantee this)."""
    if a > b:
        a, b = b, a
    return _intern((PROD, (a, b)))


def validate_canonical(sym: int) -> None:
    """Reject ids whose stored node violates canonical form (defensive; the
    constructors above cannot produce these, but hand-built tuples can)."""
    node = _NODES[sym]
    kind = node[0]
    if kind == POLY and not any(node[1]):
        raise SymbolError("polynomial with zero multi-index must be the unit symbol")
    if kind == PROD:
        ch = node[1]
        if len(ch) < 2:
            raise SymbolError("product must have at least two factors")
        if list(ch) != sorted(ch):
            raise SymbolError("product factors not in canonical order")
        if sum(1 for c in ch if _NODES[c][0] == POLY) > 1:
            raise SymbolError("product carries an unmerged polynomial factor")
        for c in ch:
            if _NODES[c][0] in (PROD, ONE):
                raise SymbolError("product contains nested product or unit factor")
            validate_canonical(c)
    elif kind == INTK:
        validate_canonical(node[2])
    elif kind == INTP:
        validate_canonical(node[4])


# ---------------------------------------------------------------------------
# scaling and structure parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Scaling:
    """Parabolic scaling (s0, 1, ..., 1) of R^{d+1}."""

    s0: int = 2
    d: int = 3

    def __post_init__(self):
        if self.s0 < 1:
            raise ValueError("time weight s0 must be >= 1")
        if self.d not in (1, 2, 3):
            raise ValueError("spatial dimension must be 1, 2 or 3")

    @property
    def weights(self) -> tuple[int, ...]:
        return (self.s0,) + (1,) * self.d

    @property
    def total(self) -> int:
        """Scaling dimension |s| = s0 + d."""
        return self.s0 + self.d


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x)
    raise TypeError(f"exact rational required, got {type(x).__name__} (floats are not allowed)")


@dataclass(frozen=True)
class StructureSpec:
    """Parameters of one graded structure: dimension, noise degree alpha,
    shift degree -kappa, construction cutoff and level cap."""

    scaling: Scaling
    alpha: Fraction
    kappa: Fraction = Fraction(1, 100)
    gamma_cut: Fraction = Fraction(2)
    max_levels: int = 8

    def __post_init__(self):
        object.__setattr__(self, "alpha", _as_fraction(self.alpha))
        object.__setattr__(self, "kappa", _as_fraction(self.kappa))
        object.__setattr__(self, "gamma_cut", _as_fraction(self.gamma_cut))
        self.validate()

    @property
    def d(self) -> int:
        return self.scaling.d

    def validate(self) -> None:
        d = self.scaling.d
        if d == 3:
            if not (Fraction(-13, 5) < self.alpha < Fraction(-5, 2)):
                raise ValueError(
                    f"alpha={self.alpha} outside (-13/5, -5/2) required for d=3")
        elif d == 2:
            if not (Fraction(-21, 10) < self.alpha < Fraction(-2)):
                raise ValueError(
                    f"alpha={self.alpha} outside (-21/10, -2) required for d=2")
        if not (0 < self.kappa < 1):
            raise ValueError("kappa must lie in (0, 1); shift positivity is "
                             "verified structurally when extending")
        if self.gamma_cut <= 0:
            raise ValueError("gamma_cut must be positive (the basis always "
                             "carries the unit symbol of degree 0)")
        if self.max_levels < 0:
            raise ValueError("max_levels must be non-negative")

    @classmethod
    def default(cls, d: int) -> "StructureSpec":
        if d == 3:
            return cls(Scaling(2, 3), Fraction(-51, 20))
        if d == 2:
            return cls(Scaling(2, 2), Fraction(-201, 100))
        raise ValueError("defaults exist for d=2 and d=3 only")


# ---------------------------------------------------------------------------
# degrees
# ---------------------------------------------------------------------------

def _index_weight(k: tuple[int, ...], weights: tuple[int, ...]) -> int:
    return sum(w * v for w, v in zip(weights, k))


def degree(sym, spec: StructureSpec, _cache: Optional[dict] = None) -> Fraction:
    """Exact parabolic degree of a canonical symbol.

    |1| = 0,  |X^k| = |k|_s,  |Xi| = alpha,  |XiHat| = -kappa,
    |I{k}(t)| = |t| + 2 - |k|_s,  |I0{k}(t)| = |t| - |k|_s,  products add.
    """
    if not isinstance(sym, int):
        sym = _intern(tuple(sym))
    validate_canonical(sym)
    cache = spec_degree_cache(spec) if _cache is None else _cache
    return _degree_rec(sym, spec, cache)


_DEGREE_CACHES: dict[tuple, dict[int, Fraction]] = {}


def spec_degree_cache(spec: StructureSpec) -> dict[int, Fraction]:
    key = (spec.scaling.s0, spec.scaling.d, spec.alpha, spec.kappa)
    cache = _DEGREE_CACHES.get(key)
    if cache is None:
        cache = _DEGREE_CACHES[key] = {_ONE_ID: Fraction(0)}
    return cache


def _degree_rec(sym: int, spec: StructureSpec, cache: dict) -> Fraction:
    val = cache.get(sym)
    if val is not None:
        return val
    node = _NODES[sym]
    kind = node[0]
    if kind == POLY:
        val = Fraction(_index_weight(node[1], spec.scaling.weights))
    elif kind == XI:
        val = spec.alpha
    elif kind == XIHAT:
        val = -spec.kappa
    elif kind == INTK:
        val = _degree_rec(node[2], spec, cache) + 2 - _index_weight(node[1], spec.scaling.weights)
    elif kind == INTP:
        val = _degree_rec(node[4], spec, cache) - sum(node[3])
    elif kind == PROD:
        val = sum((_degree_rec(c, spec, cache) for c in node[1]), Fraction(0))
    else:
        val = Fraction(0)
    cache[sym] = val
    return val


# ---------------------------------------------------------------------------
# formatting / parsing (the CLI's symbol grammar)
# ---------------------------------------------------------------------------

def format_symbol(sym: int) -> str:
    """Canonical text form.  Grammar (indices printed 1-based):

        sym  := "1" | "Xi_" i | "XiHat_" i | "X^(" ints ")"
              | "I(" sym ")" | "I{" ints "}(" sym ")"
              | "I0^{" i "," j "}(" sym ")" | "I0^{" i "," j "}{" ints "}(" sym ")"
              | "(" sym " " sym ... ")"
    """
    node = _NODES[sym]
    kind = node[0]
    if kind == ONE:
        return "1"
    if kind == XI:
        return f"Xi_{node[1] + 1}"
    if kind == XIHAT:
        return f"XiHat_{node[1] + 1}"
    if kind == POLY:
        return "X^(" + ",".join(str(v) for v in node[1]) + ")"
    if kind == INTK:
        body = format_symbol(node[2])
        if any(node[1]):
            return "I{" + ",".join(str(v) for v in node[1]) + "}(" + body + ")"
        return f"I({body})"
    if kind == INTP:
        body = format_symbol(node[4])
        head = f"I0^{{{node[1] + 1},{node[2] + 1}}}"
        if any(node[3]):
            head += "{" + ",".join(str(v) for v in node[3]) + "}"
        return f"{head}({body})"
    return "(" + " ".join(sorted(format_symbol(c) for c in node[1])) + ")"


_SHAPES: dict[int, str] = {}


def shape_of(sym: int) -> str:
    """Index-erased tree shape; primes mark derivative counts on edges."""
    out = _SHAPES.get(sym)
    if out is not None:
        return out
    node = _NODES[sym]
    kind = node[0]
    if kind == ONE:
        out = "1"
    elif kind == XI:
        out = "Xi"
    elif kind == XIHAT:
        out = "XiHat"
    elif kind == POLY:
        out = "X"
    elif kind == INTK:
        out = "I" + "'" * sum(node[1]) + "(" + shape_of(node[2]) + ")"
    elif kind == INTP:
        out = "I0" + "'" * sum(node[3]) + "(" + shape_of(node[4]) + ")"
    else:
        out = "*".join(sorted(shape_of(c) for c in node[1]))
    _SHAPES[sym] = out
    return out


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, msg: str):
        raise SymbolError(f"{msg} at position {self.pos} in {self.text!r}")

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def eat(self, tok: str):
        if not self.text.startswith(tok, self.pos):
            self.error(f"expected {tok!r}")
        self.pos += len(tok)

    def skip_ws(self):
        while self.peek() == " ":
            self.pos += 1

    def int_list(self, closer: str) -> tuple[int, ...]:
        vals = []
        while True:
            start = self.pos
            while self.peek().isdigit():
                self.pos += 1
            if start == self.pos:
                self.error("expected integer")
            vals.append(int(self.text[start:self.pos]))
            if self.peek() == ",":
                self.pos += 1
                continue
            self.eat(closer)
            return tuple(vals)

    def symbol(self) -> int:
        self.skip_ws()
        t = self.text
        p = self.pos
        if t.startswith("1", p):
            self.pos += 1
            return one()
        if t.startswith("XiHat_", p):
            self.pos += 6
            return xi_hat(self._index() - 1)
        if t.startswith("Xi_", p):
            self.pos += 3
            return xi(self._index() - 1)
        if t.startswith("X^(", p):
            self.pos += 3
            return poly(self.int_list(")"))
        if t.startswith("I0^{", p):
            self.pos += 4
            ij = self.int_list("}")
            if len(ij) != 2:
                self.error("I0 needs two superscript indices")
            k: tuple[int, ...] = ()
            if self.peek() == "{":
                self.pos += 1
                k = self.int_list("}")
            self.eat("(")
            child = self.symbol()
            self.eat(")")
            return int_p(ij[0] - 1, ij[1] - 1, k, child)
        if t.startswith("I{", p):
            self.pos += 2
            k = self.int_list("}")
            self.eat("(")
            child = self.symbol()
            self.eat(")")
            return int_k(k, child)
        if t.startswith("I(", p):
            self.pos += 2
            child = self.symbol()
            self.eat(")")
            return int_k((), child)
        if t.startswith("(", p):
            self.pos += 1
            children = []
            while True:
                children.append(self.symbol())
                self.skip_ws()
                if self.peek() == ")":
                    self.pos += 1
                    break
            if len(children) < 2:
                self.error("product needs at least two factors")
            return prod(children)
        self.error("unrecognized symbol")

    def _index(self) -> int:
        start = self.pos
        while self.peek().isdigit():
            self.pos += 1
        if start == self.pos:
            self.error("expected index")
        return int(self.text[start:self.pos])


def parse_symbol(text: str) -> int:
    p = _Parser(text.strip())
    sym = p.symbol()
    p.skip_ws()
    if p.pos != len(p.text):
        p.error("trailing input")
    return sym


# ---------------------------------------------------------------------------
# the model-space recursion
# ---------------------------------------------------------------------------

class BasisEntry(NamedTuple):
    symbol: int
    degree: Fraction
    level: int
    tag: str


@dataclass
class GradedBasis:
    """Finite degree-graded symbol set produced by the recursive builder."""

    spec: StructureSpec
    entries: list[BasisEntry]
    hatted: bool = False
    basis_cut: Fraction = Fraction(0)
    feeder_cut: Fraction = Fraction(0)
    stabilized_level: Optional[int] = None
    negative_stabilized_level: Optional[int] = None
    growth_report: list[str] = field(default_factory=list)
    w_sets: dict = field(default_factory=dict)
    p_sets: dict = field(default_factory=dict)
    u_set: frozenset = frozenset()

    def __post_init__(self):
        self._by_symbol = {e.symbol: e for e in self.entries}

    def __contains__(self, sym: int) -> bool:
        return sym in self._by_symbol

    def entry(self, sym: int) -> BasisEntry:
        return self._by_symbol[sym]

    @property
    def stabilized(self) -> bool:
        return self.stabilized_level is not None

    def degrees(self) -> list[Fraction]:
        return sorted({e.degree for e in self.entries})


def _noise_atoms(d: int, hatted: bool) -> list[tuple[int, int, bool]]:
    """Composite edges I0^{i,i1}(I(XiBar_i1)) as (first index, id, hat flag)."""
    atoms = []
    for i in range(d):
        for i1 in range(d):
            atoms.append((i, int_p(i, i1, (), int_k((), xi(i1))), False))
            if hatted:
                atoms.append((i, int_p(i, i1, (), int_k((), xi_hat(i1))), True))
    return atoms


def default_basis_cut(spec: StructureSpec) -> Fraction:
    """Admission cutoff for the enumerated W/U slice.

    d=2: the full slice below gamma_cut is small and stabilizes, so the
    spec cutoff is used as is.  d=3: the lossless slice below gamma_cut=2
    explodes (>10^7 decorated symbols by level 5, growing ~100x per level),
    so the default enumerates the strictly negative sector only; every
    degree < 0 symbol is still produced exactly.
    """
    return spec.gamma_cut if spec.d == 2 else Fraction(0)


def default_feeder_cut(spec: StructureSpec, basis_cut: Fraction) -> Fraction:
    """Building-block retention cutoff (lossless for the given basis_cut).

    A retained block enters later symbols through at most one product with a
    partner of degree >= alpha + 2 and otherwise through integrations that
    only raise degree, so blocks of degree >= basis_cut - (alpha + 2) cannot
    contribute a basis symbol below basis_cut.
    """
    return basis_cut - (spec.alpha + 2)


def build_structure(spec: StructureSpec, *, hatted: bool = False,
                    basis_cut: Optional[Fraction] = None,
                    feeder_cut: Optional[Fraction] = None,
                    max_levels: Optional[int] = None,
                    candidate_budget: int = 5_000_000) -> GradedBasis:
    """Run the level recursion W_n / P_n / U_n and return the graded basis.

    The exact recursion is

        W_n = W_{n-1} u (patterns over P_{n-1} and the noise edges)
        P_n = {X^k} u {I0^{i,i1}(I{e_{i2}}(tau)) : tau in W_{n-1}^{i1,i2}}
        U_n = {I{e_{i2}}(tau) : tau in W_{n-1}^{i1,i2}}

    with all sets cumulative and degree-pruned.  ``basis_cut`` prunes the
    reported W/U slice, ``feeder_cut`` prunes what may be integrated or
    multiplied further (see ``default_feeder_cut``; the default is lossless
    for the default basis_cut).  Candidate products are counted before they
    are formed; if a level would exceed ``candidate_budget`` the build
    aborts with a sizing error instead of thrashing.
    """
    import gc

    d = spec.d
    alpha = spec.alpha
    cut = spec.gamma_cut
    levels = spec.max_levels if max_levels is None else max_levels
    gc_was_on = gc.isenabled()
    if gc_was_on:
        gc.disable()  # the hot loops allocate heavily and create no cycles
    try:
        return _build_structure_inner(spec, hatted, basis_cut, feeder_cut,
                                      levels, candidate_budget)
    finally:
        if gc_was_on:
            gc.enable()


def _build_structure_inner(spec, hatted, basis_cut, feeder_cut, levels,
                           candidate_budget) -> GradedBasis:
    d = spec.d
    alpha = spec.alpha
    cut = spec.gamma_cut
    if basis_cut is None:
        basis_cut = default_basis_cut(spec)
    basis_cut = min(_as_fraction(basis_cut), cut)
    if feeder_cut is None:
        feeder_cut = default_feeder_cut(spec, basis_cut)
    feeder_cut = _as_fraction(feeder_cut)
    w_feeder_cut = feeder_cut - 1

    # degrees inside the builder are exact integers scaled by the common
    # denominator of alpha, kappa and the cutoffs; this keeps the hot loops
    # in int arithmetic without giving up exactness
    import math
    den = math.lcm(alpha.denominator, spec.kappa.denominator, cut.denominator,
                   basis_cut.denominator, feeder_cut.denominator)
    ialpha = int(alpha * den)
    ikappa = int(spec.kappa * den)
    icut = int(cut * den)
    ibasis_cut = int(basis_cut * den)
    ifeeder_cut = int(feeder_cut * den)
    iw_feeder_cut = int(w_feeder_cut * den)
    wts = spec.scaling.weights
    idegs: dict[int, int] = {_ONE_ID: 0}

    def ideg(sym: int) -> int:
        v = idegs.get(sym)
        if v is None:
            node = _NODES[sym]
            kind = node[0]
            if kind == POLY:
                v = _index_weight(node[1], wts) * den
            elif kind == XI:
                v = ialpha
            elif kind == XIHAT:
                v = -ikappa
            elif kind == INTK:
                v = ideg(node[2]) + (2 - _index_weight(node[1], wts)) * den
            elif kind == INTP:
                v = ideg(node[4]) - sum(node[3]) * den
            else:
                v = sum(ideg(c) for c in node[1])
            idegs[sym] = v
        return v

    atoms = _noise_atoms(d, hatted)
    atoms_by_first: dict[int, list[tuple[int, int, bool]]] = {i: [] for i in range(d)}
    for i, a, hat in atoms:
        atoms_by_first[i].append(((2 * den - ikappa) if hat else (ialpha + 2 * den), a, hat))

    # ambient polynomial sector below the cutoff
    polys: list[int] = [one()]
    max_total = int(cut) + 1
    for k in itertools.product(*(range(max_total // w + 1) for w in wts)):
        if any(k) and _index_weight(k, wts) * den < icut:
            polys.append(poly(k))

    # sym -> (first level, first tag, construction ordinal)
    reg: dict[int, tuple[int, str, int]] = {}

    def register(sym: int, level: int, tag: str):
        if sym not in reg:
            reg[sym] = (level, tag, len(reg))

    for s in polys:
        register(s, 0, "P")

    pairs = [(i, j) for i in range(d) for j in range(i, d)]  # W^{ij} = W^{ji}
    w_sets: dict[tuple[int, int], set[int]] = {p: set() for p in pairs}
    u_set: set[int] = set()
    # P-set element: (scaled int degree, id, has_hat), kept degree-sorted
    p_all: dict[int, list[tuple[int, int, bool]]] = {i: [] for i in range(d)}
    p_ids: dict[int, set[int]] = {i: set() for i in range(d)}
    p_fresh: dict[int, list[tuple[int, int, bool]]] = {i: [] for i in range(d)}
    poly_fresh = False
    w_fresh_feed: dict[tuple[int, int], list[tuple[Fraction, int, bool]]] = {p: [] for p in pairs}
    w_fresh_uint: dict[tuple[int, int], list[tuple[Fraction, int, bool]]] = {p: [] for p in pairs}

    growth: list[str] = []
    stabilized_level: Optional[int] = None
    neg_stable_level: Optional[int] = None
    last_new_degrees: list[int] = []

    def w_admit(dv: int, sym: int, level: int, tag: tuple[int, int],
                hat: bool, new_w, new_feed, new_uint):
        if dv >= ibasis_cut:
            return
        wset = w_sets[tag]
        if sym in wset or sym in new_w[tag]:
            return
        new_w[tag].add(sym)
        register(sym, level, f"W^{{{tag[0] + 1},{tag[1] + 1}}}")
        if dv < iw_feeder_cut:
            new_feed[tag].append((dv, sym, hat))
        if dv + den < ibasis_cut:
            new_uint[tag].append((dv, sym, hat))
        last_new_degrees.append(dv)

    for n in range(1, levels + 1):
        new_w: dict[tuple[int, int], set[int]] = {p: set() for p in pairs}
        new_feed: dict[tuple[int, int], list] = {p: [] for p in pairs}
        new_uint: dict[tuple[int, int], list] = {p: [] for p in pairs}
        new_p: dict[int, list[tuple[Fraction, int, bool]]] = {i: [] for i in range(d)}
        new_u: list[int] = []

        # ---- candidate budget estimate for this level --------------------
        est = 0
        for (i, j) in pairs:
            for side, other in (((i, j), (j, i)) if i != j else ((i, j),)):
                lst = p_all[other]
                for dp, _p, _h in p_fresh[side]:
                    est += bisect.bisect_left(lst, (ibasis_cut - dp,))
                est += (len(atoms) // d) * len(p_fresh[side])
        if est > candidate_budget:
            raise SymbolError(
                f"level {n} would enumerate ~{est} admissible candidate "
                f"products (budget {candidate_budget}); lower basis_cut or "
                "feeder_cut, or raise candidate_budget explicitly")

        # ---- W_n from P_{n-1} --------------------------------------------
        for (i, j) in pairs:
            adm = lambda dv, sym, hat: w_admit(dv, sym, n, (i, j), hat,
                                               new_w, new_feed, new_uint)
            ai = atoms_by_first[i]
            aj = atoms_by_first[j]
            if n == 1:
                adm(0, one(), False)
                for da, a, ha in ai:
                    adm(da, a, ha)
                for db, b, hb in aj:
                    adm(db, b, hb)
                for da, a, ha in ai:
                    for db, b, hb in aj:
                        dv = da + db
                        if dv < ibasis_cut:
                            adm(dv, _prod2(a, b), ha or hb)
            if poly_fresh and n > 1:
                # polynomials joined P at the previous level: fire the
                # poly-involving patterns once
                for s in polys:
                    dv = ideg(s)
                    adm(dv, s, False)
                    if s == _ONE_ID:
                        continue
                    for da, a, ha in ai + (aj if i != j else []):
                        dv2 = da + dv
                        if dv2 < ibasis_cut:
                            adm(dv2, _prod2(a, s), ha)
                    for s2 in polys:
                        if s2 == _ONE_ID:
                            continue
                        dv2 = dv + ideg(s2)
                        if dv2 < ibasis_cut:
                            adm(dv2, prod([s, s2]), False)
            # fresh integrated blocks: singletons, atom / polynomial /
            # all-block products (fresh x fresh pairs are covered because
            # p_all already contains the fresh entries)
            sides = ((i, j), (j, i)) if i != j else ((i, j),)
            for side, other in sides:
                lst = p_all[other]
                for dp, p, hp in p_fresh[side]:
                    adm(dp, p, hp)
                    for da, a, ha in atoms_by_first[other]:
                        dv = dp + da
                        if dv < ibasis_cut:
                            adm(dv, _prod2(a, p), hp or ha)
                    hi = bisect.bisect_left(lst, (ibasis_cut - dp,))
                    for dq, q, hq in lst[:hi]:
                        dv = dp + dq
                        if dv >= ibasis_cut:
                            continue
                        adm(dv, _prod2(p, q), hp or hq)
                    for s in polys:
                        if s == _ONE_ID:
                            continue
                        dv = dp + ideg(s)
                        if dv < ibasis_cut:
                            adm(dv, _prod2(p, s), hp)

        # ---- P_n and U_n from W_{n-1} (fresh feed of the previous level) --
        if n == 1:
            for i in range(d):
                p_ids[i].update(polys)
            poly_fresh = True
        else:
            poly_fresh = False
        for (i1, i2), feed in w_fresh_feed.items():
            for dtau, tau, htau in feed:
                if _NODES[tau][0] in (ONE, POLY):
                    continue  # integration maps annihilate polynomials
                orients = ((i1, i2), (i2, i1)) if i1 != i2 else ((i1, i2),)
                for (a, b) in orients:
                    ek = (0,) + tuple(1 if m == b else 0 for m in range(d))
                    dv = dtau + den
                    if dv >= ifeeder_cut:
                        continue
                    inner = int_k(ek, tau)
                    for i in range(d):
                        s = int_p(i, a, (), inner)
                        if s not in p_ids[i]:
                            p_ids[i].add(s)
                            new_p[i].append((dv, s, htau))
                            register(s, n, f"P^{i + 1}")
        for (i1, i2), pend in w_fresh_uint.items():
            for dtau, tau, htau in pend:
                if _NODES[tau][0] in (ONE, POLY):
                    continue
                for b in ((i1, i2) if i1 != i2 else (i1,)):
                    ek = (0,) + tuple(1 if m == b else 0 for m in range(d))
                    dv = dtau + den
                    if dv >= ibasis_cut:
                        continue
                    s = int_k(ek, tau)
                    if s not in u_set:
                        u_set.add(s)
                        new_u.append(s)
                        register(s, n, "U")
                        last_new_degrees.append(dv)

        # ---- commit level n ----------------------------------------------
        grew = False
        for (i, j) in pairs:
            if new_w[(i, j)]:
                grew = True
                w_sets[(i, j)].update(new_w[(i, j)])
            w_fresh_feed[(i, j)] = new_feed[(i, j)]
            w_fresh_uint[(i, j)] = new_uint[(i, j)]
        for i in range(d):
            if new_p[i]:
                p_fresh[i] = new_p[i]
                p_all[i].extend(new_p[i])
                p_all[i].sort(key=lambda t: t[0])
            else:
                p_fresh[i] = []
        if new_u:
            grew = True
        fresh_blocks = any(p_fresh[i] for i in range(d)) or \
            any(w_fresh_feed[p] for p in pairs) or any(w_fresh_uint[p] for p in pairs) or poly_fresh
        if grew:
            stabilized_level = None
            if any(dv < 0 for dv in last_new_degrees):
                neg_stable_level = None
            elif neg_stable_level is None:
                neg_stable_level = n - 1
            count = sum(len(w) for w in w_sets.values()) + len(u_set)
            tops = sorted(set(last_new_degrees))
            shown = [str(Fraction(x, den)) for x in tops[:6]]
            growth.append(
                f"level {n}: admitted slice grew to {count} W/U symbols; "
                f"new degrees {', '.join(shown)}"
                + (" ..." if len(tops) > 6 else ""))
            last_new_degrees = []
        else:
            if stabilized_level is None:
                stabilized_level = n - 1
            if neg_stable_level is None:
                neg_stable_level = n - 1
            if not fresh_blocks:
                break  # nothing can change at any later level

    all_syms: set[int] = set()
    for wset in w_sets.values():
        all_syms.update(wset)
    all_syms.update(u_set)
    all_syms.difference_update(polys)
    # degree-ascending, ties broken by first-construction order (the builder
    # iterates deterministically, so this is stable across runs)
    order = sorted(itertools.chain(polys, all_syms),
                   key=lambda s: (ideg(s), reg[s][2]))
    entries = [BasisEntry(s, Fraction(ideg(s), den), reg[s][0], reg[s][1])
               for s in order]

    if stabilized_level is None:
        growth.append(
            f"admitted slice still growing at max_levels={levels}; "
            "raise max_levels to check stabilization")

    return GradedBasis(
        spec=spec, entries=entries, hatted=hatted,
        basis_cut=basis_cut, feeder_cut=feeder_cut,
        stabilized_level=stabilized_level,
        negative_stabilized_level=neg_stable_level,
        growth_report=growth,
        w_sets={k: frozenset(v) for k, v in w_sets.items()},
        p_sets={i: frozenset(p_ids[i]) for i in range(d)},
        u_set=frozenset(u_set),
    )


def negative_sector(basis: GradedBasis) -> list[tuple[int, Fraction]]:
    """All strictly negative-degree symbols plus the unit, degree-ascending."""
    out = [(e.symbol, e.degree) for e in basis.entries if e.degree < 0]
    out.append((one(), Fraction(0)))
    return out


# ---------------------------------------------------------------------------
# renormalization group
# ---------------------------------------------------------------------------

def _quartic_active(spec: StructureSpec) -> bool:
    # the two four-noise families are renormalized exactly when their trees
    # have negative degree, i.e. 4*alpha + 10 < 0
    return 4 * spec.alpha + 10 < 0


def renorm_dimension(spec: StructureSpec) -> int:
    """Number of renormalization constants: one 4-index family, plus three
    10-index families whenever the four-noise trees are subcritical."""
    d = spec.d
    n = d ** 4
    if _quartic_active(spec):
        n += 3 * d ** 10
    return n


class RenormVector:
    """Exact rational constant vector g = (C1, C2, C3, C4).

    Values are stored as int64 numerators over one shared denominator, which
    keeps 100-vector sweeps over ~10^5 basis symbols exact and fast; the
    public accessor returns ``Fraction``.
    """

    _FAMILY_RANK = {"C1": 4, "C2": 10, "C3": 10, "C4": 10}

    def __init__(self, spec: StructureSpec, numerators: dict, denominator: int = 1):
        import numpy as np

        self.spec = spec
        self.den = int(denominator)
        if self.den <= 0:
            raise ValueError("denominator must be positive")
        d = spec.d
        self.families = {}
        for fam in self.family_names(spec):
            shape = (d,) * self._FAMILY_RANK[fam]
            arr = numerators.get(fam)
            if arr is None:
                arr = np.zeros(shape, dtype=np.int64)
            else:
                arr = np.asarray(arr, dtype=np.int64).reshape(shape)
            self.families[fam] = arr

    @staticmethod
    def family_names(spec: StructureSpec) -> tuple[str, ...]:
        return ("C1", "C2", "C3", "C4") if _quartic_active(spec) else ("C1",)

    @classmethod
    def zeros(cls, spec: StructureSpec) -> "RenormVector":
        return cls(spec, {})

    @classmethod
    def random(cls, spec: StructureSpec, rng, lo: int = -9, hi: int = 9,
               den: int = 12) -> "RenormVector":
        import numpy as np

        d = spec.d
        nums = {}
        for fam in cls.family_names(spec):
            shape = (d,) * cls._FAMILY_RANK[fam]
            nums[fam] = rng.integers(lo, hi + 1, size=shape, dtype=np.int64)
        return cls(spec, nums, den)

    def key_count(self) -> int:
        return sum(arr.size for arr in self.families.values())

    def value(self, family: str, idx: tuple[int, ...]) -> Fraction:
        return Fraction(int(self.families[family][idx]), self.den)

    def __add__(self, other: "RenormVector") -> "RenormVector":
        if self.spec is not other.spec and self.spec != other.spec:
            raise ValueError("renorm vectors built for different specs")
        import math

        den = self.den * other.den // math.gcd(self.den, other.den)
        a = den // self.den
        b = den // other.den
        nums = {fam: self.families[fam] * a + other.families[fam] * b
                for fam in self.families}
        return RenormVector(self.spec, nums, den)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RenormVector):
            return NotImplemented
        import numpy as np

        return all(np.array_equal(self.families[f] * other.den,
                                  other.families[f] * self.den)
                   for f in self.families)


def _atom_indices(sym: int) -> Optional[tuple[int, int]]:
    """(i, i1) of a tied composite edge I0^{i,i1}(I(Xi_i1)); None otherwise."""
    node = _NODES[sym]
    if node[0] != INTP or any(node[3]):
        return None
    inner = _NODES[node[4]]
    if inner[0] != INTK or any(inner[1]):
        return None
    noise = _NODES[inner[2]]
    if noise[0] != XI or noise[1] != node[2]:
        return None
    return (node[1], node[2])


def _dotted_pair_indices(sym: int) -> Optional[tuple[int, ...]]:
    """(i, i1, i2, a, b) of I0^{i,i1}(I{e_{i2}}(Xi-pair tree)); None otherwise."""
    node = _NODES[sym]
    if node[0] != INTP or any(node[3]):
        return None
    inner = _NODES[node[4]]
    if inner[0] != INTK or not inner[1] or inner[1][0] != 0 or sum(inner[1]) != 1:
        return None
    i2 = inner[1].index(1) - 1
    body = _NODES[inner[2]]
    if body[0] != PROD or len(body[1]) != 2:
        return None
    f1 = _atom_indices(body[1][0])
    f2 = _atom_indices(body[1][1])
    if f1 is None or f2 is None:
        return None
    i, i1 = node[1], node[2]
    # the two noise edges must sit on the (i1, i2) branches of the wrapper
    if {f1[0], f2[0]} != {i1, i2} and not (i1 == i2 and f1[0] == f2[0] == i1):
        return None
    if f1[0] == i1:
        a, b = f1[1], f2[1]
    else:
        a, b = f2[1], f1[1]
    return (i, i1, i2, a, b)


def _dotted_mixed_indices(sym: int) -> Optional[tuple[tuple[int, ...], int]]:
    """Wrapper data of I0^{i,i1}(I{e_l}(dotted-pair * atom)).

    Returns ((i, i1, l, inner 5-tuple, atom pair), family tag 3 or 4).
    """
    node = _NODES[sym]
    if node[0] != INTP or any(node[3]):
        return None
    inner = _NODES[node[4]]
    if inner[0] != INTK or not inner[1] or inner[1][0] != 0 or sum(inner[1]) != 1:
        return None
    l = inner[1].index(1) - 1
    body = _NODES[inner[2]]
    if body[0] != PROD or len(body[1]) != 2:
        return None
    c1, c2 = body[1]
    dp = _dotted_pair_indices(c1)
    at = _atom_indices(c2)
    if dp is None or at is None:
        dp = _dotted_pair_indices(c2)
        at = _atom_indices(c1)
    if dp is None or at is None:
        return None
    i, i1 = node[1], node[2]
    if {dp[0], at[0]} != {i1, l} and not (i1 == l and dp[0] == at[0] == i1):
        return None
    # the inner noise edge's first index is tied to the complementary wrapper
    # slot, so only its noise component stays in the key
    fam = 3 if dp[0] == i1 else 4
    return ((i, i1, l) + dp[1:] + (at[1],), fam)


def classify_renorm(sym: int, spec: StructureSpec) -> Optional[tuple[str, tuple[int, ...]]]:
    """Map a symbol to its renormalization constant (family name, index tuple).

    Only the quadratic two-noise product and, when subcritical, the two
    four-noise trees receive a counterterm; everything else is fixed.
    """
    node = _NODES[sym]
    if node[0] != PROD or len(node[1]) != 2:
        return None
    x, y = node[1]
    ax, ay = _atom_indices(x), _atom_indices(y)
    if ax is not None and ay is not None:
        return ("C1", ax + ay)
    if not _quartic_active(spec):
        return None
    dx, dy = _dotted_pair_indices(x), _dotted_pair_indices(y)
    if dx is not None and dy is not None:
        return ("C2", dx + dy)
    for first, second in ((x, y), (y, x)):
        m = _dotted_mixed_indices(first)
        a = _atom_indices(second)
        if m is not None and a is not None:
            idx, fam = m
            return (f"C{fam}", idx + a)
    return None


def apply_renorm(g: RenormVector, x, basis: Optional[GradedBasis] = None) -> dict[int, Fraction]:
    """Linear action M_g on a symbol or a {symbol: coefficient} combination.

    M_g tau = tau - C(tau) 1 on the renormalized families, identity elsewhere.
    """
    if isinstance(x, int):
        x = {x: Fraction(1)}
    out: dict[int, Fraction] = {}
    spec = g.spec
    for sym, coef in x.items():
        coef = _as_fraction(coef)
        if basis is not None and sym not in basis:
            raise SymbolError(f"symbol {format_symbol(sym)} not in the built basis")
        out[sym] = out.get(sym, Fraction(0)) + coef
        hit = classify_renorm(sym, spec)
        if hit is not None:
            fam, idx = hit
            c = g.value(fam, idx)
            if c:
                u = one()
                out[u] = out.get(u, Fraction(0)) - coef * c
    return {s: c for s, c in out.items() if c}


# ---------------------------------------------------------------------------
# shift extension
# ---------------------------------------------------------------------------

def extend_with_shifts(basis: GradedBasis) -> GradedBasis:
    """Rebuild with the doubled noise alphabet {Xi, XiHat}.

    Every original symbol persists with its degree; each genuinely new symbol
    differs from an original only by Xi -> XiHat substitutions and must have
    strictly positive degree (the structure is only usable for shifts when
    kappa is small enough for that to hold).
    """
    if basis.hatted:
        return basis
    spec = basis.spec
    # each substitution Xi -> XiHat raises the degree by exactly -alpha-kappa,
    # so the least hatted degree is min_{noise-bearing tau} deg(tau) plus one
    # substitution gap; demand it strictly positive
    gap = -spec.alpha - spec.kappa
    noise_floor = min((e.degree for e in basis.entries
                       if _noise_count(e.symbol) > 0), default=None)
    if noise_floor is not None and noise_floor + gap <= 0:
        raise SymbolError(
            f"kappa={spec.kappa} too large: a single substitution lifts the "
            f"degree floor {noise_floor} only to {noise_floor + gap} <= 0")
    ext = build_structure(spec, hatted=True,
                          basis_cut=basis.basis_cut,
                          feeder_cut=basis.feeder_cut,
                          max_levels=spec.max_levels)
    original = {e.symbol for e in basis.entries}
    missing = [e for e in basis.entries if e.symbol not in ext]
    if missing:
        raise SymbolError(
            f"extension lost {len(missing)} original symbols; first: "
            f"{format_symbol(missing[0].symbol)}")
    for e in ext.entries:
        if e.symbol in original:
            if basis.entry(e.symbol).degree != e.degree:
                raise SymbolError("extension changed the degree of an original symbol")
        elif _contains_hat(e.symbol):
            if e.degree <= 0:
                raise SymbolError(
                    f"kappa={spec.kappa} too large: hatted symbol "
                    f"{format_symbol(e.symbol)} has degree {e.degree} <= 0")
            base = unhat(e.symbol)
            expected = (degree(base, spec)
                        + hat_substitutions(e.symbol) * (-spec.alpha - spec.kappa))
            if e.degree != expected:
                raise SymbolError("hatted degree does not match the substitution rule")
    return ext


def _noise_count(sym: int) -> int:
    node = _NODES[sym]
    kind = node[0]
    if kind in (XI, XIHAT):
        return 1
    if kind == INTK:
        return _noise_count(node[2])
    if kind == INTP:
        return _noise_count(node[4])
    if kind == PROD:
        return sum(_noise_count(c) for c in node[1])
    return 0


def _contains_hat(sym: int) -> bool:
    node = _NODES[sym]
    kind = node[0]
    if kind == XIHAT:
        return True
    if kind == INTK:
        return _contains_hat(node[2])
    if kind == INTP:
        return _contains_hat(node[4])
    if kind == PROD:
        return any(_contains_hat(c) for c in node[1])
    return False


def hat_substitutions(sym: int) -> int:
    """Number of XiHat leaves in a symbol."""
    node = _NODES[sym]
    kind = node[0]
    if kind == XIHAT:
        return 1
    if kind == INTK:
        return hat_substitutions(node[2])
    if kind == INTP:
        return hat_substitutions(node[4])
    if kind == PROD:
        return sum(hat_substitutions(c) for c in node[1])
    return 0


def unhat(sym: int) -> int:
    """Replace every XiHat_i by Xi_i (the original of a shifted symbol)."""
    node = _NODES[sym]
    kind = node[0]
    if kind == XIHAT:
        return xi(node[1])
    if kind == INTK:
        return int_k(node[1], unhat(node[2]))
    if kind == INTP:
        return int_p(node[1], node[2], node[3], unhat(node[4]))
    if kind == PROD:
        return prod([unhat(c) for c in node[1]])
    return sym


# ---------------------------------------------------------------------------
# sectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SectorInfo:
    tag: str
    min_degree: Optional[Fraction]


def sector_of(sym: int, spec: StructureSpec) -> SectorInfo:
    """Coarse sector classification with the minimal non-polynomial degree of
    the sector the symbol generates: polynomials, single-integration solution
    symbols (floor alpha + 2), and quadratic product symbols (floor
    2 alpha + 5)."""
    kind = _NODES[sym][0]
    a = spec.alpha
    if kind in (ONE, POLY):
        return SectorInfo("polynomial", None)
    if kind == PROD:
        return SectorInfo("product", 2 * a + 5)
    if kind in (XI, XIHAT):
        return SectorInfo("solution", a if kind == XI else -spec.kappa)
    return SectorInfo("solution", a + 2)


def jacobian_sector_floor(spec: StructureSpec) -> Fraction:
    """Minimal non-polynomial degree of the linearized-flow sector, alpha + 3."""
    return spec.alpha + 3
