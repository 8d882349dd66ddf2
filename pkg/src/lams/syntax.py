"""Core syntax: types, terms, and finite probability distributions.

Terms are kept in a canonical form: sums are flattened and sorted under a
total alpha-invariant order (AC normal form, duplicates kept as a multiset),
and products are right-nested lists.  Scalars are double-precision complex
numbers compared with a 1e-9 componentwise tolerance.
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass
from typing import Iterable, Iterator, Union

TOL = 1e-9


class LamsError(Exception):
    """Base class for all errors raised by this package."""


class SumNotOne(LamsError):
    """Probabilities of a distribution do not add up to one."""


def scalar_eq(a: complex, b: complex, tol: float = TOL) -> bool:
    """Componentwise tolerance comparison of two complex scalars."""
    a, b = complex(a), complex(b)
    return abs(a.real - b.real) <= tol and abs(a.imag - b.imag) <= tol


def _check_finite(c: complex) -> complex:
    c = complex(c)
    if not cmath.isfinite(c):
        raise LamsError(f"non-finite scalar {c!r}")
    return c


# ---------------------------------------------------------------------------
# Types.
#
# Qubit types: B | S(q) | q * q, with B^n right-nested.  General types embed
# qubit types and add first-order arrows and further S layers.  S over a
# qubit type is always represented inside the qubit layer, so there is a
# single representation for every type.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QB:
    """The single-qubit base type."""

    def __repr__(self) -> str:
        return "QB()"


@dataclass(frozen=True)
class QS:
    inner: "QType"


@dataclass(frozen=True)
class QProd:
    left: "QType"
    right: "QType"


QType = Union[QB, QS, QProd]


@dataclass(frozen=True)
class TQ:
    """A qubit type used as a general type."""

    q: QType


@dataclass(frozen=True)
class TArrow:
    param: QType
    result: "Type"


@dataclass(frozen=True)
class TS:
    """S applied to a non-qubit type (arrows and their lifts)."""

    inner: "Type"


Type = Union[TQ, TArrow, TS]

B = TQ(QB())


def bn(n: int) -> QType:
    """The qubit type B^n as a right-nested product, n >= 1."""
    if n < 1:
        raise ValueError("B^n needs n >= 1")
    q: QType = QB()
    for _ in range(n - 1):
        q = QProd(QB(), q)
    return q


def t_s(a: Type) -> Type:
    """Prepend one S, staying inside the qubit layer when possible."""
    if isinstance(a, TQ):
        return TQ(QS(a.q))
    return TS(a)


def lift(a: Type, k: int) -> Type:
    for _ in range(k):
        a = t_s(a)
    return a


def split_s(a: Type) -> tuple[int, Type]:
    """Strip all leading S constructors; returns (count, core)."""
    n = 0
    while True:
        if isinstance(a, TS):
            a = a.inner
            n += 1
        elif isinstance(a, TQ) and isinstance(a.q, QS):
            a = TQ(a.q.inner)
            n += 1
        else:
            return n, a


def strip_one_s(a: Type) -> Type | None:
    if isinstance(a, TS):
        return a.inner
    if isinstance(a, TQ) and isinstance(a.q, QS):
        return TQ(a.q.inner)
    return None


def is_s_headed(a: Type) -> bool:
    return strip_one_s(a) is not None


def qtype_of(a: Type) -> QType | None:
    return a.q if isinstance(a, TQ) else None


def bn_arity(q: QType) -> int | None:
    """n if q is B^n (right-nested product of B), else None."""
    n = 0
    while isinstance(q, QProd):
        if not isinstance(q.left, QB):
            return None
        n += 1
        q = q.right
    if isinstance(q, QB):
        return n + 1
    return None


def is_btype(a: Type) -> bool:
    """Membership in the duplicable (non-superposed) types: B^n and arrows."""
    if isinstance(a, TArrow):
        return True
    return isinstance(a, TQ) and bn_arity(a.q) is not None


def canonical_qtype(q: QType) -> QType:
    """Right-nest products of qubit types."""
    if isinstance(q, QB):
        return q
    if isinstance(q, QS):
        return QS(canonical_qtype(q.inner))
    factors: list[QType] = []

    def walk(p: QType) -> None:
        if isinstance(p, QProd):
            walk(p.left)
            walk(p.right)
        else:
            factors.append(canonical_qtype(p))

    walk(q)
    out = factors[-1]
    for f in reversed(factors[:-1]):
        out = QProd(f, out)
    return out


def canonical_type(a: Type) -> Type:
    if isinstance(a, TQ):
        return TQ(canonical_qtype(a.q))
    if isinstance(a, TArrow):
        return TArrow(canonical_qtype(a.param), canonical_type(a.result))
    inner = canonical_type(a.inner)
    return t_s(inner)


# ---------------------------------------------------------------------------
# Terms.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Lam:
    name: str
    annot: QType
    body: "Term"


@dataclass(frozen=True)
class App:
    fn: "Term"
    arg: "Term"


@dataclass(frozen=True)
class Ket:
    bit: int


@dataclass(frozen=True)
class IfTe:
    """The conditional as a function: (if? t r) selects t on |1>, r on |0>."""

    then_: "Term"
    else_: "Term"


@dataclass(frozen=True)
class Prod:
    left: "Term"
    right: "Term"


@dataclass(frozen=True)
class Head:
    body: "Term"


@dataclass(frozen=True)
class Tail:
    body: "Term"


@dataclass(frozen=True)
class Meas:
    j: int
    body: "Term"


@dataclass(frozen=True)
class CastR:
    body: "Term"


@dataclass(frozen=True)
class CastL:
    body: "Term"


@dataclass(frozen=True)
class Zero:
    """The null vector annotated with A; its type is S A."""

    annot: Type


@dataclass(frozen=True)
class Scale:
    coeff: complex
    body: "Term"

    def __post_init__(self) -> None:
        object.__setattr__(self, "coeff", _check_finite(self.coeff))


@dataclass(frozen=True)
class Sum:
    """Flattened multiset of summands, sorted under the canonical order."""

    terms: tuple["Term", ...]


Term = Union[
    Var, Lam, App, Ket, IfTe, Prod, Head, Tail, Meas, CastR, CastL, Zero, Scale, Sum
]

KET0 = Ket(0)
KET1 = Ket(1)

_TAG_ORDER = (Var, Lam, App, Ket, IfTe, Prod, Head, Tail, Meas, CastR, CastL, Zero, Scale, Sum)
_TAG_INDEX = {cls: i for i, cls in enumerate(_TAG_ORDER)}


def _type_key(a: Type) -> tuple:
    if isinstance(a, TQ):
        return ("q", _qtype_key(a.q))
    if isinstance(a, TArrow):
        return ("->", _qtype_key(a.param), _type_key(a.result))
    return ("S", _type_key(a.inner))


def _qtype_key(q: QType) -> tuple:
    if isinstance(q, QB):
        return ("B",)
    if isinstance(q, QS):
        return ("S", _qtype_key(q.inner))
    return ("x", _qtype_key(q.left), _qtype_key(q.right))


def term_key(t: Term, binders: dict[str, int] | None = None, depth: int = 0) -> tuple:
    """Total, alpha-invariant sort key (bound variables by binder depth)."""
    if binders is None:
        binders = {}
    tag = _TAG_INDEX[type(t)]
    match t:
        case Var(name):
            if name in binders:
                return (tag, 0, depth - binders[name])
            return (tag, 1, name)
        case Lam(name, annot, body):
            inner = dict(binders)
            inner[name] = depth
            return (tag, _qtype_key(annot), term_key(body, inner, depth + 1))
        case App(fn, arg):
            return (tag, term_key(fn, binders, depth), term_key(arg, binders, depth))
        case Ket(bit):
            return (tag, bit)
        case IfTe(a, b):
            return (tag, term_key(a, binders, depth), term_key(b, binders, depth))
        case Prod(l, r):
            return (tag, term_key(l, binders, depth), term_key(r, binders, depth))
        case Head(b) | Tail(b) | CastR(b) | CastL(b):
            return (tag, term_key(b, binders, depth))
        case Meas(j, b):
            return (tag, j, term_key(b, binders, depth))
        case Zero(annot):
            return (tag, _type_key(annot))
        case Scale(c, b):
            return (tag, (c.real, c.imag), term_key(b, binders, depth))
        case Sum(ts):
            return (tag, tuple(term_key(x, binders, depth) for x in ts))
    raise TypeError(f"unknown term {t!r}")


def mk_sum(terms: Iterable[Term]) -> Term:
    """Flatten, sort, and collapse singleton sums."""
    flat: list[Term] = []
    for t in terms:
        if isinstance(t, Sum):
            flat.extend(t.terms)
        else:
            flat.append(t)
    if not flat:
        raise LamsError("empty sum")
    if len(flat) == 1:
        return flat[0]
    flat.sort(key=term_key)
    return Sum(tuple(flat))


def mk_prod(terms: Iterable[Term]) -> Term:
    """Right-nest a nonempty list of product factors."""
    factors = list(terms)
    if not factors:
        raise LamsError("empty product")
    out = factors[-1]
    for f in reversed(factors[:-1]):
        out = Prod(f, out)
    return out


def prod_factors(t: Term) -> list[Term]:
    out = []
    while isinstance(t, Prod):
        out.append(t.left)
        t = t.right
    out.append(t)
    return out


def canonicalize(t: Term) -> Term:
    """AC normal form: flatten/sort sums, right-nest products, recursively."""
    match t:
        case Var() | Ket():
            return t
        case Zero(annot):
            return Zero(canonical_type(annot))
        case Lam(name, annot, body):
            return Lam(name, canonical_qtype(annot), canonicalize(body))
        case App(fn, arg):
            return App(canonicalize(fn), canonicalize(arg))
        case IfTe(a, b):
            return IfTe(canonicalize(a), canonicalize(b))
        case Prod():
            factors = [canonicalize(f) for f in prod_factors(t)]
            flat: list[Term] = []
            for f in factors:
                flat.extend(prod_factors(f))
            return mk_prod(flat)
        case Head(b):
            return Head(canonicalize(b))
        case Tail(b):
            return Tail(canonicalize(b))
        case Meas(j, b):
            return Meas(j, canonicalize(b))
        case CastR(b):
            return CastR(canonicalize(b))
        case CastL(b):
            return CastL(canonicalize(b))
        case Scale(c, b):
            return Scale(c, canonicalize(b))
        case Sum(ts):
            return mk_sum(canonicalize(x) for x in ts)
    raise TypeError(f"unknown term {t!r}")


def canonicalize_sum(t: Term) -> Term:
    """Spec name for the AC normalizer."""
    return canonicalize(t)


def subterms(t: Term) -> Iterator[Term]:
    yield t
    for c in children(t):
        yield from subterms(c)


def children(t: Term) -> tuple[Term, ...]:
    match t:
        case Var() | Ket() | Zero():
            return ()
        case Lam(_, _, body):
            return (body,)
        case App(fn, arg):
            return (fn, arg)
        case IfTe(a, b):
            return (a, b)
        case Prod(l, r):
            return (l, r)
        case Head(b) | Tail(b) | CastR(b) | CastL(b) | Scale(_, b) | Meas(_, b):
            return (b,)
        case Sum(ts):
            return ts
    raise TypeError(f"unknown term {t!r}")


def replace_child(t: Term, i: int, new: Term) -> Term:
    match t:
        case Lam(name, annot, _):
            return Lam(name, annot, new)
        case App(fn, arg):
            return App(new, arg) if i == 0 else App(fn, new)
        case IfTe(a, b):
            return IfTe(new, b) if i == 0 else IfTe(a, new)
        case Prod(l, r):
            return Prod(new, r) if i == 0 else Prod(l, new)
        case Head(_):
            return Head(new)
        case Tail(_):
            return Tail(new)
        case Meas(j, _):
            return Meas(j, new)
        case CastR(_):
            return CastR(new)
        case CastL(_):
            return CastL(new)
        case Scale(c, _):
            return Scale(c, new)
        case Sum(ts):
            return Sum(ts[:i] + (new,) + ts[i + 1 :])
    raise TypeError(f"cannot replace child of {t!r}")


def free_vars(t: Term) -> frozenset[str]:
    match t:
        case Var(name):
            return frozenset({name})
        case Lam(name, _, body):
            return free_vars(body) - {name}
        case _:
            out: frozenset[str] = frozenset()
            for c in children(t):
                out |= free_vars(c)
            return out


def is_closed(t: Term) -> bool:
    return not free_vars(t)


def is_basis_term(t: Term) -> bool:
    """Membership in the basis-term set: duplicable canonical terms."""
    match t:
        case Var() | Lam() | Ket() | IfTe():
            return True
        case Prod(l, r):
            return is_basis_term(l) and is_basis_term(r)
        case _:
            return False


def is_value(t: Term) -> bool:
    match t:
        case _ if is_basis_term(t):
            return True
        case Sum(ts):
            return all(is_value(x) for x in ts)
        case Zero():
            return True
        case Scale(_, b):
            return is_value(b)
        case Prod(l, r):
            return is_value(l) and is_value(r)
        case _:
            return False


def substitute(t: Term, x: str, r: Term) -> Term:
    """Capture-avoiding substitution of a closed term r for x; canonical result."""
    if not is_closed(r):
        raise LamsError("substitute expects a closed replacement term")

    def go(t: Term) -> Term:
        match t:
            case Var(name):
                return r if name == x else t
            case Lam(name, annot, body):
                if name == x:
                    return t
                return Lam(name, annot, go(body))
            case _:
                out = t
                for i, c in enumerate(children(t)):
                    out = replace_child(out, i, go(c))
                return out

    return canonicalize(go(t))


# ---------------------------------------------------------------------------
# Alpha/AC equality with scalar tolerance.
# ---------------------------------------------------------------------------


def term_eq(t: Term, u: Term, tol: float = TOL) -> bool:
    """Alpha-equivalence modulo AC with componentwise scalar tolerance."""
    return _alpha_eq(canonicalize(t), canonicalize(u), {}, {}, 0, tol)


def _alpha_eq(t: Term, u: Term, bt: dict, bu: dict, depth: int, tol: float) -> bool:
    if type(t) is not type(u):
        return False
    match t, u:
        case Var(a), Var(b):
            if a in bt or b in bu:
                return bt.get(a) == bu.get(b)
            return a == b
        case Lam(a, qa, ba), Lam(b, qb, bb):
            if qa != qb:
                return False
            nbt, nbu = dict(bt), dict(bu)
            nbt[a] = depth
            nbu[b] = depth
            return _alpha_eq(ba, bb, nbt, nbu, depth + 1, tol)
        case Ket(a), Ket(b):
            return a == b
        case Zero(a), Zero(b):
            return a == b
        case Scale(ca, ba), Scale(cb, bb):
            return scalar_eq(ca, cb, tol) and _alpha_eq(ba, bb, bt, bu, depth, tol)
        case Meas(ja, ba), Meas(jb, bb):
            return ja == jb and _alpha_eq(ba, bb, bt, bu, depth, tol)
        case Sum(ta), Sum(tb):
            if len(ta) != len(tb):
                return False
            # positional first; fall back to multiset matching for scalar
            # perturbations that flip the sort order
            if all(_alpha_eq(a, b, bt, bu, depth, tol) for a, b in zip(ta, tb)):
                return True
            return _match_multiset(list(ta), list(tb), bt, bu, depth, tol)
        case _:
            ct, cu = children(t), children(u)
            if len(ct) != len(cu):
                return False
            return all(_alpha_eq(a, b, bt, bu, depth, tol) for a, b in zip(ct, cu))


def _match_multiset(ta: list, tb: list, bt, bu, depth, tol) -> bool:
    if not ta:
        return not tb
    a = ta[0]
    for i, b in enumerate(tb):
        if _alpha_eq(a, b, bt, bu, depth, tol):
            if _match_multiset(ta[1:], tb[:i] + tb[i + 1 :], bt, bu, depth, tol):
                return True
    return False


# ---------------------------------------------------------------------------
# Finite probability distributions.
# ---------------------------------------------------------------------------

PROB_TOL = 1e-9


class Dist:
    """Finite probability distribution with the identification laws built in:
    equal payloads merge, zero-probability entries drop, and the singleton
    distribution is interconvertible with its payload.
    """

    __slots__ = ("entries",)

    def __init__(self, entries: dict):
        self.entries = dict(entries)

    @staticmethod
    def singleton(payload) -> "Dist":
        return Dist({payload: 1.0})

    @staticmethod
    def make(pairs: Iterable[tuple[float, object]], *, tol: float = PROB_TOL) -> "Dist":
        """Normalize a raw list of (probability, payload) pairs."""
        total = 0.0
        merged: dict = {}
        for p, payload in pairs:
            if p < -tol:
                raise SumNotOne(f"negative probability {p}")
            total += p
            if p <= tol:
                continue
            merged[payload] = merged.get(payload, 0.0) + p
        if abs(total - 1.0) > tol:
            raise SumNotOne(f"probabilities sum to {total}, not 1")
        if not merged:
            raise SumNotOne("empty distribution")
        return Dist(merged)

    def items(self):
        return self.entries.items()

    def payloads(self):
        return self.entries.keys()

    def map(self, f) -> "Dist":
        return Dist.make((p, f(t)) for t, p in self.entries.items())

    def bind(self, f) -> "Dist":
        """Monadic bind: f maps payloads to Dists; probabilities multiply."""
        pairs = []
        for t, p in self.entries.items():
            for u, q in f(t).entries.items():
                pairs.append((p * q, u))
        return Dist.make(pairs)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries.items())

    def __repr__(self) -> str:
        inner = ", ".join(f"{p:.6g}: {t!r}" for t, p in self.entries.items())
        return f"Dist({{{inner}}})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dist):
            return NotImplemented
        return self.entries == other.entries

    def __hash__(self):
        return hash(frozenset(self.entries.items()))


def dist_normalize(pairs: Iterable[tuple[float, Term]], *, tol: float = PROB_TOL) -> Dist:
    """Distribution over terms with canonical keys; merges alpha/AC-equal payloads."""
    canon: list[tuple[float, Term]] = [(p, canonicalize(t)) for p, t in pairs]
    merged: list[tuple[float, Term]] = []
    for p, t in canon:
        for i, (q, u) in enumerate(merged):
            if t == u or term_eq(t, u):
                merged[i] = (q + p, u)
                break
        else:
            merged.append((p, t))
    return Dist.make(((p, t) for p, t in merged), tol=tol)


def dist_eq(a: Dist, b: Dist, tol: float = TOL) -> bool:
    """Distribution equality: termEq payloads, probabilities within tol."""
    if len(a) != len(b):
        return False
    remaining = list(b.items())
    for t, p in a.items():
        for i, (u, q) in enumerate(remaining):
            if abs(p - q) <= tol and term_eq(t, u, tol):
                remaining.pop(i)
                break
        else:
            return False
    return not remaining
