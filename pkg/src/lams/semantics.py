"""Concrete denotational evaluator.

Types denote sets: B is the two-point set, products are pairs, arrows are
function spaces, and S A is the set of formal finite complex linear
combinations over the denotation of A (layers are never auto-flattened, so
S S A and S A stay distinct).  Typing derivations denote Kleisli arrows of
the finite-distribution monad; measurement is the one construct producing a
genuinely probabilistic result.
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Union

from .printer import print_term
from .syntax import (
    Dist,
    LamsError,
    QB,
    QProd,
    QS,
    QType,
    Scale,
    Sum,
    TArrow,
    TQ,
    TS,
    Term,
    Type,
    bn_arity,
    split_s,
)
from .typecheck import (
    Context,
    Derivation,
    RULE_AX,
    RULE_AX0,
    RULE_AXK0,
    RULE_AXK1,
    RULE_ARROW_E,
    RULE_ARROW_ES,
    RULE_ARROW_I,
    RULE_CAST_L,
    RULE_CAST_R,
    RULE_IF,
    RULE_PAR,
    RULE_PROD_EL,
    RULE_PROD_ER,
    RULE_PROD_I,
    RULE_SCALE,
    RULE_SE,
    RULE_SI,
    RULE_SUM,
    semantic_derivation,
)


class DomainMismatch(LamsError):
    pass


class DepthMismatch(LamsError):
    pass


class KeyNotVec(LamsError):
    pass


COEFF_DROP = 1e-12
PROBE_SEED = 0xC0FFEE


# ---------------------------------------------------------------------------
# Semantic values.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SBit:
    bit: int


@dataclass(frozen=True)
class SPair:
    left: "SemValue"
    right: "SemValue"


@dataclass(frozen=True)
class SUnit:
    """The unit suffix left over when all qubits are measured."""


@dataclass(frozen=True)
class SFun:
    """A function value; applying it yields a distribution (Kleisli)."""

    fingerprint: tuple
    apply: Callable[["SemValue"], "SemDist"] = field(compare=False, hash=False, repr=False)


class SVec:
    """Formal finite linear combination with canonical, exact-merged keys."""

    __slots__ = ("entries",)

    def __init__(self, entries: tuple):
        self.entries = entries  # sorted tuple of (SemValue, complex)

    def items(self):
        return self.entries

    def keys(self):
        return tuple(k for k, _ in self.entries)

    def __bool__(self) -> bool:
        return bool(self.entries)

    def __eq__(self, other):
        return isinstance(other, SVec) and self.entries == other.entries

    def __hash__(self):
        return hash(self.entries)

    def __repr__(self):
        inner = ", ".join(f"{k!r}: {c:.6g}" for k, c in self.entries)
        return f"Vec{{{inner}}}"


SemValue = Union[SBit, SPair, SUnit, SFun, SVec]
SemDist = Dist  # payloads are SemValues


def _sem_key(v: SemValue) -> tuple:
    match v:
        case SBit(b):
            return (0, b)
        case SPair(l, r):
            return (1, _sem_key(l), _sem_key(r))
        case SUnit():
            return (2,)
        case SVec(entries=e):
            return (3, tuple((_sem_key(k), (c.real, c.imag)) for k, c in e))
        case SFun(fingerprint=f):
            return (4, f)
    raise TypeError(f"unknown semantic value {v!r}")


def svec(pairs: Iterable[tuple[SemValue, complex]]) -> SVec:
    """Canonical combination: exact-equal keys merged, tiny coefficients dropped."""
    merged: dict = {}
    for k, c in pairs:
        merged[k] = merged.get(k, 0j) + complex(c)
    kept = [(k, c) for k, c in merged.items() if abs(c) > COEFF_DROP]
    kept.sort(key=lambda kc: _sem_key(kc[0]))
    return SVec(tuple(kept))


VEC_ZERO = svec(())


# ---------------------------------------------------------------------------
# Type interpretation.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoolSet:
    n: int = 1


@dataclass(frozen=True)
class ProdDom:
    left: "SemDomain"
    right: "SemDomain"


@dataclass(frozen=True)
class FunDom:
    param: "SemDomain"
    result: "SemDomain"


@dataclass(frozen=True)
class SpanDom:
    inner: "SemDomain"


SemDomain = Union[BoolSet, ProdDom, FunDom, SpanDom]


def interpret_type(a: Type) -> SemDomain:
    match a:
        case TQ(q):
            return _interpret_q(q)
        case TArrow(param, result):
            return FunDom(_interpret_q(param), interpret_type(result))
        case TS(inner):
            return SpanDom(interpret_type(inner))
    raise TypeError(f"unknown type {a!r}")


def _interpret_q(q: QType) -> SemDomain:
    match q:
        case QB():
            return BoolSet(1)
        case QS(inner):
            return SpanDom(_interpret_q(inner))
        case QProd(l, r):
            return ProdDom(_interpret_q(l), _interpret_q(r))
    raise TypeError(f"unknown qubit type {q!r}")


# ---------------------------------------------------------------------------
# The monad structure and vector operations.
# ---------------------------------------------------------------------------


def eta_embed(v: SemValue) -> SVec:
    """Unit of the span monad: the point combination."""
    return svec([(v, 1)])


def mu_flatten(v: SVec) -> SVec:
    """Multiplication of the span monad: one layer of combinations folded in."""
    pairs: list[tuple[SemValue, complex]] = []
    for k, c in v.items():
        if not isinstance(k, SVec):
            raise KeyNotVec(f"mu needs combination-valued keys, got {k!r}")
        pairs.extend((ik, c * ic) for ik, ic in k.items())
    return svec(pairs)


def bilinear_pair(a: SVec, b: SVec) -> SVec:
    """Formal tensor: Vec{(x,y): a_x * b_y}."""
    return svec(
        ((SPair(ka, kb), ca * cb) for ka, ca in a.items() for kb, cb in b.items())
    )


def vec_add(vs: Iterable[SVec]) -> SVec:
    pairs: list[tuple[SemValue, complex]] = []
    for v in vs:
        if not isinstance(v, SVec):
            raise DomainMismatch(f"expected a combination, got {v!r}")
        pairs.extend(v.items())
    return svec(pairs)


def vec_scale(c: complex, v: SVec) -> SVec:
    if not isinstance(v, SVec):
        raise DomainMismatch(f"expected a combination, got {v!r}")
    return svec(((k, c * cv) for k, cv in v.items()))


def deep_sum(a: SemValue, b: SemValue, m: int) -> SVec:
    """Pairwise addition pushed through m layers of combinations (the
    structural map of the nested-span sum); m = 1 is plain vector addition."""
    if m < 1:
        raise DepthMismatch("depth must be >= 1")
    if not isinstance(a, SVec) or not isinstance(b, SVec):
        raise DepthMismatch(f"expected combinations at depth {m}")
    if m == 1:
        return vec_add([a, b])
    return svec(
        (
            (deep_sum(ka, kb, m - 1), ca * cb)
            for ka, ca in a.items()
            for kb, cb in b.items()
        )
    )


def deep_scale(s: complex, v: SemValue, m: int) -> SVec:
    """Scalar action on the innermost combination layer; outer layers are
    traversed functorially (keys rewritten, outer coefficients unchanged)."""
    if m < 1:
        raise DepthMismatch("depth must be >= 1")
    if not isinstance(v, SVec):
        raise DepthMismatch(f"expected a combination at depth {m}")
    if m == 1:
        return vec_scale(s, v)
    return svec(((deep_scale(s, k, m - 1), c) for k, c in v.items()))


# -- distribution plumbing ----------------------------------------------------


def dpoint(v: SemValue) -> SemDist:
    return Dist.singleton(v)


def dbind(d: SemDist, f: Callable[[SemValue], SemDist]) -> SemDist:
    return d.bind(f)


def dmap(d: SemDist, f: Callable[[SemValue], SemValue]) -> SemDist:
    return d.map(f)


def dmerge(weighted: Iterable[tuple[float, SemDist]]) -> SemDist:
    pairs = []
    for p, d in weighted:
        pairs.extend((p * q, v) for v, q in d.items())
    return Dist.make(pairs)


def vec_commute_dist(pairs: list[tuple[SemDist, complex]]) -> SemDist:
    """Distributive law: a combination whose keys are distribution-valued
    becomes a distribution over combinations (joint product of outcomes)."""
    if not pairs:
        return dpoint(VEC_ZERO)
    outcome_lists = [list(d.items()) for d, _ in pairs]
    out = []
    for combo in itertools.product(*outcome_lists):
        prob = 1.0
        entries = []
        for (value, p), (_, coeff) in zip(combo, pairs):
            prob *= p
            entries.append((value, coeff))
        out.append((prob, svec(entries)))
    return Dist.make(out)


# ---------------------------------------------------------------------------
# Measurement pipeline: Norm, P_k, factorize, and the projective arrow.
# ---------------------------------------------------------------------------


def ket_value(bits: tuple[int, ...]) -> SemValue:
    if not bits:
        return SUnit()
    if len(bits) == 1:
        return SBit(bits[0])
    return SPair(SBit(bits[0]), ket_value(bits[1:]))


def value_bits(v: SemValue) -> tuple[int, ...]:
    match v:
        case SBit(b):
            return (b,)
        case SPair(SBit(b), rest):
            return (b,) + value_bits(rest)
    raise DomainMismatch(f"not a ket tuple: {v!r}")


def sem_norm(v: SVec, n: int) -> SVec:
    """v / ||v||, with the all-zeros ket for the null vector."""
    norm2 = sum(abs(c) ** 2 for _, c in v.items())
    if norm2 <= COEFF_DROP:
        return eta_embed(ket_value((0,) * n))
    norm = math.sqrt(norm2)
    return vec_scale(1 / norm, v)


def sem_projector_pk(j: int, k: int, v: SVec) -> SVec:
    """Keep the summands whose first j bits spell k."""
    kbits = tuple((k >> (j - 1 - i)) & 1 for i in range(j))
    return SVec(tuple((key, c) for key, c in v.items() if value_bits(key)[:j] == kbits))


def sem_factorize(j: int, v: SVec, n: int) -> tuple[SemValue, SemValue]:
    """Split off a common j-bit prefix; all-zeros fallback otherwise."""
    prefixes = {value_bits(key)[:j] for key, _ in v.items()}
    if len(prefixes) != 1:
        return ket_value((0,) * j), (
            eta_embed(ket_value((0,) * (n - j))) if j < n else SUnit()
        )
    prefix = next(iter(prefixes))
    if j == n:
        return ket_value(prefix), SUnit()
    suffix = svec(((ket_value(value_bits(key)[j:]), c) for key, c in v.items()))
    return ket_value(prefix), suffix


def _assemble_outcome(bits: tuple[int, ...], suffix: SemValue) -> SemValue:
    """Right-nest the measured bits onto the suffix combination, mirroring
    the list shape of B^j x S B^(n-j); a full measurement has no suffix."""
    if isinstance(suffix, SUnit):
        return ket_value(bits)
    out = suffix
    for b in reversed(bits):
        out = SPair(SBit(b), out)
    return out


def sem_measure(j: int, v: SVec, n: int) -> SemDist:
    """The projective arrow: distribution over |k> bits with the normalized
    suffix combination attached."""
    normed = sem_norm(v, n)
    outcomes = []
    for k in range(2 ** j):
        projected = sem_projector_pk(j, k, normed)
        pk = sum(abs(c) ** 2 for _, c in projected.items())
        if pk <= COEFF_DROP:
            continue
        prefix, suffix = sem_factorize(j, sem_norm(projected, n), n)
        outcomes.append((pk, _assemble_outcome(value_bits(prefix), suffix)))
    total = sum(p for p, _ in outcomes)
    return Dist.make((p / total, payload) for p, payload in outcomes)


# ---------------------------------------------------------------------------
# Derivation evaluation.
# ---------------------------------------------------------------------------

Env = dict[str, SemValue]


def _env_fingerprint(env: Env) -> tuple:
    return tuple(sorted((x, _sem_key(v)) for x, v in env.items()))


def if_arrow(tval: SemValue, rval: SemValue) -> SFun:
    """The conditional's function value: |1> selects the first component."""
    fingerprint = ("if-const", _sem_key(tval), _sem_key(rval))

    def apply(b: SemValue) -> SemDist:
        match b:
            case SBit(1):
                return dpoint(tval)
            case SBit(0):
                return dpoint(rval)
        raise DomainMismatch(f"conditional applied to {b!r}")

    return SFun(fingerprint, apply)


def eval_derivation(d: Derivation, env: Env | None = None) -> SemDist:
    """The arrow denoted by a typing derivation, applied to an environment."""
    env = env or {}
    match d.rule:
        case "Ax":
            x = d.term.name  # type: ignore[union-attr]
            if x not in env:
                raise DomainMismatch(f"environment misses {x}")
            return dpoint(env[x])
        case "Ax0":
            return dpoint(VEC_ZERO)
        case "Ax|0>":
            return dpoint(SBit(0))
        case "Ax|1>":
            return dpoint(SBit(1))
        case "SI":
            return dmap(eval_derivation(d.premises[0], env), eta_embed)
        case "αI":
            coeff = d.term.coeff  # type: ignore[union-attr]
            return dmap(
                eval_derivation(d.premises[0], env), lambda v: vec_scale(coeff, v)
            )
        case "+I":
            branch_dists = [eval_derivation(p, env) for p in d.premises]
            out = branch_dists[0]
            for nxt in branch_dists[1:]:
                out = dbind(out, lambda acc: dmap(nxt, lambda v: vec_add([acc, v])))
            return out
        case "SE":
            k, core = split_s(d.premises[0].type_)
            n = bn_arity(core.q)  # premise is S^k B^n by construction
            j = d.term.j  # type: ignore[union-attr]

            def measure(v: SemValue) -> SemDist:
                for _ in range(k - 1):
                    v = mu_flatten(v)
                return sem_measure(j, v, n)

            return dbind(eval_derivation(d.premises[0], env), measure)
        case "If":
            then_d, else_d = d.premises
            fingerprint = (
                "if",
                print_term(d.term),  # type: ignore[arg-type]
                _env_fingerprint(env),
            )

            def apply_if(b: SemValue) -> SemDist:
                match b:
                    case SBit(1):
                        return eval_derivation(then_d, env)
                    case SBit(0):
                        return eval_derivation(else_d, env)
                raise DomainMismatch(f"conditional applied to {b!r}")

            return dpoint(SFun(fingerprint, apply_if))
        case "⇒I":
            body_d = d.premises[0]
            name = d.term.name  # type: ignore[union-attr]
            fingerprint = (
                "lam",
                print_term(d.term),  # type: ignore[arg-type]
                _env_fingerprint(env),
            )

            def apply_lam(v: SemValue) -> SemDist:
                inner = dict(env)
                inner[name] = v
                return eval_derivation(body_d, inner)

            return dpoint(SFun(fingerprint, apply_lam))
        case "⇒E":
            arg_d, fn_d = d.premises
            return dbind(
                eval_derivation(fn_d, env),
                lambda f: dbind(eval_derivation(arg_d, env), _apply_fun(f)),
            )
        case "⇒ES":
            arg_d, fn_d = d.premises

            def applied(fv: SemValue, av: SemValue) -> SemDist:
                if not isinstance(fv, SVec) or not isinstance(av, SVec):
                    raise DomainMismatch("superposed application needs combinations")
                tensored = bilinear_pair(av, fv)
                keyed = [
                    (_apply_fun(key.right)(key.left), c) for key, c in tensored.items()
                ]
                return vec_commute_dist(keyed)

            return dbind(
                eval_derivation(fn_d, env),
                lambda f: dbind(eval_derivation(arg_d, env), lambda a: applied(f, a)),
            )
        case "×I":
            l_d, r_d = d.premises
            return dbind(
                eval_derivation(l_d, env),
                lambda lv: dmap(eval_derivation(r_d, env), lambda rv: SPair(lv, rv)),
            )
        case "×Er":
            return dmap(eval_derivation(d.premises[0], env), _pair_left)
        case "×El":
            return dmap(eval_derivation(d.premises[0], env), _pair_right)
        case "⇑r":
            return dmap(eval_derivation(d.premises[0], env), _cast(True))
        case "⇑l":
            return dmap(eval_derivation(d.premises[0], env), _cast(False))
        case "∥":
            dist: Dist = d.term  # type: ignore[assignment]
            return dmerge(
                (p, eval_derivation(prem, env))
                for prem, (_, p) in zip(d.premises, dist.items())
            )
    raise LamsError(f"unknown derivation rule {d.rule}")


def _apply_fun(f: SemValue) -> Callable[[SemValue], SemDist]:
    if not isinstance(f, SFun):
        raise DomainMismatch(f"cannot apply {f!r}")
    return f.apply


def _pair_left(v: SemValue) -> SemValue:
    if not isinstance(v, SPair):
        raise DomainMismatch(f"not a pair: {v!r}")
    return v.left


def _pair_right(v: SemValue) -> SemValue:
    if not isinstance(v, SPair):
        raise DomainMismatch(f"not a pair: {v!r}")
    return v.right


def _cast(right: bool) -> Callable[[SemValue], SemValue]:
    def go(v: SemValue) -> SemValue:
        if not isinstance(v, SVec):
            raise DomainMismatch("cast needs a combination")
        outer = []
        for key, c in v.items():
            if not isinstance(key, SPair):
                raise DomainMismatch("cast needs pair keys")
            if right:
                if not isinstance(key.left, SVec):
                    raise DomainMismatch("cast_r needs a combination on the left")
                inner = bilinear_pair(key.left, eta_embed(key.right))
            else:
                if not isinstance(key.right, SVec):
                    raise DomainMismatch("cast_l needs a combination on the right")
                inner = bilinear_pair(eta_embed(key.left), key.right)
            outer.append((inner, c))
        return mu_flatten(svec(outer))

    return go


# ---------------------------------------------------------------------------
# Term-level evaluation and extensional equality.
# ---------------------------------------------------------------------------


def eval_closed(t: Term, a: Type | None = None) -> SemDist:
    """Denotation of a closed term at type a (minimal type by default)."""
    return eval_derivation(semantic_derivation({}, t, a), {})


def eval_dist(d: Dist, a: Type) -> SemDist:
    """Denotation of a distribution over closed terms at a common type."""
    return dmerge((p, eval_closed(t, a)) for t, p in d.items())


def probe_values(q: QType, cap: int = 16) -> list[SemValue]:
    """Deterministic probe set for comparing functions on a parameter type:
    every basis point, eta-embedded, plus seeded pseudorandom combinations."""
    match q:
        case QB():
            return [SBit(0), SBit(1)]
        case QProd(l, r):
            probes = [
                SPair(a, b)
                for a in probe_values(l, cap)
                for b in probe_values(r, cap)
            ]
            return probes[:cap]
        case QS(inner):
            base = probe_values(inner, cap)
            out: list[SemValue] = [eta_embed(b) for b in base]
            rng = random.Random(PROBE_SEED)
            for _ in range(8):
                out.append(
                    svec(
                        (b, complex(rng.uniform(-1, 1), rng.uniform(-1, 1)))
                        for b in base
                    )
                )
            return out[:cap]
    raise TypeError(f"unknown qubit type {q!r}")


def sem_eq(a, b, at_type: Type, tol: float = 1e-9) -> bool:
    """Extensional equality at a type; functions are compared by probing."""
    if isinstance(a, Dist) or isinstance(b, Dist):
        if not isinstance(a, Dist):
            a = dpoint(a)
        if not isinstance(b, Dist):
            b = dpoint(b)
        return _dist_eq(a, b, at_type, tol)
    return _value_eq(a, b, at_type, tol)


def _dist_eq(a: SemDist, b: SemDist, at_type: Type, tol: float) -> bool:
    remaining = list(b.items())
    for v, p in a.items():
        for i, (w, q) in enumerate(remaining):
            if abs(p - q) <= tol and _value_eq(v, w, at_type, tol):
                remaining.pop(i)
                break
        else:
            return False
    return not remaining


def _value_eq(a: SemValue, b: SemValue, at_type: Type, tol: float) -> bool:
    k, core = split_s(at_type)
    if k > 0:
        return _vec_eq(a, b, k, core, tol)
    match core:
        case TQ(QB()):
            return a == b
        case TQ(QProd(lq, rq)):
            return (
                isinstance(a, SPair)
                and isinstance(b, SPair)
                and _value_eq(a.left, b.left, TQ(lq), tol)
                and _value_eq(a.right, b.right, TQ(rq), tol)
            )
        case TArrow(param, result):
            if not isinstance(a, SFun) or not isinstance(b, SFun):
                return False
            if a.fingerprint == b.fingerprint:
                return True
            for probe in probe_values(param):
                if not _dist_eq(a.apply(probe), b.apply(probe), result, tol):
                    return False
            return True
    raise TypeError(f"unknown type {at_type!r}")


def _flatten(v: SemValue, k: int) -> SVec:
    """Collapse a k-deep stack of combination layers into a single layer
    over the S-free core.

    Comparisons of S-typed values work modulo this collapse: the nested-span
    model assigns operationally interconvertible terms denotations that
    differ only in where coefficients sit among the layers (see the decision
    notes), so layer placement cannot be observable equality.
    """
    if not isinstance(v, SVec):
        raise DomainMismatch(f"expected a combination, got {v!r}")
    for _ in range(k - 1):
        v = mu_flatten(v)
    return v


def _vec_eq(a: SemValue, b: SemValue, k: int, core: Type, tol: float) -> bool:
    if not isinstance(a, SVec) or not isinstance(b, SVec):
        return False
    fa = _classes(_flatten(a, k), core, tol)
    fb = _classes(_flatten(b, k), core, tol)
    return _match_entries(fa, fb, core, tol)


def _classes(v: SVec, core: Type, tol: float) -> list[tuple[SemValue, complex]]:
    """Merge coefficients of keys that are equal at the core type (function
    keys may be extensionally equal without being structurally equal)."""
    out: list[tuple[SemValue, complex]] = []
    for key, c in v.items():
        for i, (rep, acc) in enumerate(out):
            if _value_eq(key, rep, core, tol):
                out[i] = (rep, acc + c)
                break
        else:
            out.append((key, c))
    return out


def _match_entries(ea, eb, core: Type, tol: float) -> bool:
    ea = [(k, c) for k, c in ea if abs(c) > tol]
    eb = [(k, c) for k, c in eb if abs(c) > tol]
    if len(ea) != len(eb):
        return False
    if not ea:
        return True
    (ka, ca), rest = ea[0], ea[1:]
    for i, (kb, cb) in enumerate(eb):
        if abs(ca - cb) <= tol and _value_eq(ka, kb, core, tol):
            if _match_entries(rest, eb[:i] + eb[i + 1 :], core, tol):
                return True
    return False
