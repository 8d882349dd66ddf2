"""Small-step reduction: one deterministic step t -> Dist[Term].

The step relation applies exactly one rule at one position.  The position
is chosen rule-major: rules are scanned in a fixed priority order
(vector-space cleanup, then linear distribution, beta, conditionals, lists,
casts, projection), and each rule fires at its leftmost-outermost legal
position.  Probabilities are internalized: measurement is the only rule
producing a multi-branch distribution, and normalize is a pure function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Union

from .syntax import (
    App,
    CastL,
    CastR,
    Dist,
    Head,
    IfTe,
    Ket,
    Lam,
    LamsError,
    Meas,
    Prod,
    QProd,
    QS,
    Scale,
    Sum,
    Tail,
    TArrow,
    TQ,
    Term,
    Type,
    Var,
    Zero,
    bn_arity,
    canonicalize,
    children,
    dist_normalize,
    is_basis_term,
    is_closed,
    is_value,
    mk_prod,
    mk_sum,
    prod_factors,
    replace_child,
    split_s,
    strip_one_s,
    substitute,
    term_eq,
)
from .typecheck import Context, TypingError, check_type, infer_type


class StuckIllTyped(LamsError):
    """A type-conditioned guard hit an untypable closed subterm."""


class NotAKetSum(LamsError):
    """Projection applied to a term that is not a scaled sum of ket lists."""


class FuelExhausted(LamsError):
    def __init__(self, partial: list[tuple[float, Term]], steps: int):
        super().__init__(f"fuel exhausted after {steps} steps")
        self.partial = partial
        self.steps = steps


Path = tuple[int, ...]


@dataclass(frozen=True)
class Stepped:
    dist: Dist
    rule: str
    position: Path


@dataclass(frozen=True)
class NormalForm:
    term: Term


StepResult = Union[Stepped, NormalForm]


class TypeOracle:
    """Memoized minimal types and derivability for closed subterms."""

    def __init__(self) -> None:
        self._types: dict[Term, Type | TypingError] = {}
        self._derivable: dict[tuple[Term, Type], bool] = {}

    def min_type(self, t: Term) -> Type:
        cached = self._types.get(t)
        if cached is None:
            try:
                cached, _ = infer_type({}, t, _canon=False)
            except TypingError as e:
                cached = e
            self._types[t] = cached
        if isinstance(cached, TypingError):
            raise StuckIllTyped(str(cached))
        return cached

    def typable(self, t: Term) -> bool:
        try:
            self.min_type(t)
            return True
        except StuckIllTyped:
            return False

    def derivable(self, t: Term, a: Type) -> bool:
        key = (t, a)
        if key not in self._derivable:
            try:
                check_type({}, t, a)
                self._derivable[key] = True
            except TypingError:
                self._derivable[key] = False
        return self._derivable[key]


# ---------------------------------------------------------------------------
# Rule matchers.  Each returns a replacement Term, a Dist of replacement
# terms, or None when the rule does not apply at this subterm.
# ---------------------------------------------------------------------------

RuleResult = Union[Term, Dist, None]
Matcher = Callable[[Term, TypeOracle], RuleResult]

_ONE = complex(1)
_ZEROC = complex(0)


def _rule_neut(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, Sum):
        for i, x in enumerate(t.terms):
            if isinstance(x, Zero):
                rest = t.terms[:i] + t.terms[i + 1 :]
                return mk_sum(rest)
    return None


def _rule_unit(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, Scale) and t.coeff == _ONE:
        return t.body
    return None


def _rule_zero_alpha(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, Scale) and t.coeff == _ZEROC:
        ty = oracle.min_type(t.body)
        from .syntax import is_btype

        if is_btype(ty):
            return Zero(ty)
        below = strip_one_s(ty)
        if below is not None:
            return Zero(below)
    return None


def _rule_zero(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, Scale) and isinstance(t.body, Zero):
        return t.body
    return None


def _rule_prod_scal(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, Scale) and isinstance(t.body, Scale):
        return Scale(t.coeff * t.body.coeff, t.body.body)
    return None


def _rule_dist_alpha(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, Scale) and isinstance(t.body, Sum):
        return mk_sum(Scale(t.coeff, x) for x in t.body.terms)
    return None


def _sum_pairs(t: Term) -> Iterator[tuple[int, int, Term, Term]]:
    if isinstance(t, Sum):
        n = len(t.terms)
        for i in range(n):
            for j in range(i + 1, n):
                yield i, j, t.terms[i], t.terms[j]


def _replace_pair(t: Sum, i: int, j: int, merged: Term) -> Term:
    rest = [x for k, x in enumerate(t.terms) if k not in (i, j)]
    return mk_sum(rest + [merged])


def _rule_fact(t: Term, oracle: TypeOracle) -> RuleResult:
    for i, j, a, b in _sum_pairs(t):
        if isinstance(a, Scale) and isinstance(b, Scale) and term_eq(a.body, b.body):
            return _replace_pair(t, i, j, Scale(a.coeff + b.coeff, a.body))
    return None


def _rule_fact1(t: Term, oracle: TypeOracle) -> RuleResult:
    for i, j, a, b in _sum_pairs(t):
        if isinstance(a, Scale) and not isinstance(b, Scale) and term_eq(a.body, b):
            return _replace_pair(t, i, j, Scale(a.coeff + 1, a.body))
        if isinstance(b, Scale) and not isinstance(a, Scale) and term_eq(b.body, a):
            return _replace_pair(t, i, j, Scale(b.coeff + 1, b.body))
    return None


def _rule_fact2(t: Term, oracle: TypeOracle) -> RuleResult:
    for i, j, a, b in _sum_pairs(t):
        if not isinstance(a, Scale) and not isinstance(b, Scale) and term_eq(a, b):
            return _replace_pair(t, i, j, Scale(2, a))
    return None


def _lin_guard(fn: Term, arg: Term, oracle: TypeOracle) -> Optional[TArrow]:
    """Linear distribution applies when the function has an arrow minimal
    type and the argument does not fit the parameter exactly (for basis
    parameters that is every sum/scale/zero argument)."""
    ty = oracle.min_type(fn)
    if not isinstance(ty, TArrow):
        return None
    if oracle.derivable(arg, TQ(ty.param)):
        return None
    return ty


def _rule_lin_r(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, App) and isinstance(t.arg, Sum):
        if _lin_guard(t.fn, t.arg, oracle) is not None:
            return mk_sum(App(t.fn, x) for x in t.arg.terms)
    return None


def _rule_lin_r_alpha(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, App) and isinstance(t.arg, Scale):
        if _lin_guard(t.fn, t.arg, oracle) is not None:
            return Scale(t.arg.coeff, App(t.fn, t.arg.body))
    return None


def _rule_lin_r_zero(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, App) and isinstance(t.arg, Zero):
        arrow = _lin_guard(t.fn, t.arg, oracle)
        if arrow is not None:
            return Zero(arrow.result)
    return None


def _rule_lin_l(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, App) and isinstance(t.fn, Sum):
        return mk_sum(App(x, t.arg) for x in t.fn.terms)
    return None


def _rule_lin_l_alpha(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, App) and isinstance(t.fn, Scale):
        return Scale(t.fn.coeff, App(t.fn.body, t.arg))
    return None


def _rule_lin_l_zero(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, App) and isinstance(t.fn, Zero):
        annot = t.fn.annot
        if isinstance(annot, TArrow):
            return Zero(annot.result)
    return None


def _rule_beta_b(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, App) and isinstance(t.fn, Lam):
        n = bn_arity(t.fn.annot)
        if n is not None and is_basis_term(t.arg) and oracle.derivable(
            t.arg, TQ(t.fn.annot)
        ):
            return substitute(t.fn.body, t.fn.name, t.arg)
    return None


def _rule_beta_n(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, App) and isinstance(t.fn, Lam):
        if bn_arity(t.fn.annot) is None and oracle.derivable(t.arg, TQ(t.fn.annot)):
            return substitute(t.fn.body, t.fn.name, t.arg)
    return None


def _rule_if1(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, App) and isinstance(t.fn, IfTe) and t.arg == Ket(1):
        return t.fn.then_
    return None


def _rule_if0(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, App) and isinstance(t.fn, IfTe) and t.arg == Ket(0):
        return t.fn.else_
    return None


def _rule_head(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, Head) and isinstance(t.body, Prod):
        h = t.body.left
        if is_basis_term(h) and not isinstance(h, Prod):
            return h
    return None


def _rule_tail(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, Tail) and isinstance(t.body, Prod):
        h = t.body.left
        if is_basis_term(h) and not isinstance(h, Prod):
            return t.body.right
    return None


# -- casts ------------------------------------------------------------------


def _rule_cast_neut_r(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, CastR) and isinstance(t.body, Prod) and is_basis_term(t.body.left):
        return t.body
    return None


def _rule_cast_neut_l(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, CastL) and isinstance(t.body, Prod) and is_basis_term(t.body.right):
        return t.body
    return None


def _rule_dist_sum_r(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, CastR) and isinstance(t.body, Prod) and isinstance(t.body.left, Sum):
        u = t.body.right
        return mk_sum(CastR(Prod(r, u)) for r in t.body.left.terms)
    return None


def _rule_dist_sum_l(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, CastL) and isinstance(t.body, Prod) and isinstance(t.body.right, Sum):
        u = t.body.left
        return mk_sum(CastL(Prod(u, r)) for r in t.body.right.terms)
    return None


def _rule_dist_scal_r(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, CastR) and isinstance(t.body, Prod) and isinstance(t.body.left, Scale):
        s = t.body.left
        return Scale(s.coeff, CastR(Prod(s.body, t.body.right)))
    return None


def _rule_dist_scal_l(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, CastL) and isinstance(t.body, Prod) and isinstance(t.body.right, Scale):
        s = t.body.right
        return Scale(s.coeff, CastL(Prod(t.body.left, s.body)))
    return None


def _rule_dist_zero_r(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, CastR) and isinstance(t.body, Prod) and isinstance(t.body.left, Zero):
        phi = t.body.left.annot
        uty = oracle.min_type(t.body.right)
        if isinstance(phi, TQ) and isinstance(uty, TQ):
            return Zero(TQ(QProd(phi.q, uty.q)))
    return None


def _rule_dist_zero_l(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, CastL) and isinstance(t.body, Prod) and isinstance(t.body.right, Zero):
        phi = t.body.right.annot
        uty = oracle.min_type(t.body.left)
        if isinstance(phi, TQ) and isinstance(uty, TQ):
            return Zero(TQ(QProd(uty.q, phi.q)))
    return None


def _rule_cast_sum(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, (CastR, CastL)) and isinstance(t.body, Sum):
        wrap = CastR if isinstance(t, CastR) else CastL
        return mk_sum(wrap(x) for x in t.body.terms)
    return None


def _rule_cast_scal(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, (CastR, CastL)) and isinstance(t.body, Scale):
        wrap = CastR if isinstance(t, CastR) else CastL
        return Scale(t.body.coeff, wrap(t.body.body))
    return None


def _rule_cast_zero_r(t: Term, oracle: TypeOracle) -> RuleResult:
    # zero-annotation casts collapse in one type-preserving step:
    # castR zero(S Psi x Phi) -> zero(Psi x Phi)
    if isinstance(t, CastR) and isinstance(t.body, Zero):
        annot = t.body.annot
        if isinstance(annot, TQ) and isinstance(annot.q, QProd) and isinstance(annot.q.left, QS):
            return Zero(TQ(QProd(annot.q.left.inner, annot.q.right)))
    return None


def _rule_cast_zero_l(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, CastL) and isinstance(t.body, Zero):
        annot = t.body.annot
        if isinstance(annot, TQ) and isinstance(annot.q, QProd) and isinstance(annot.q.right, QS):
            return Zero(TQ(QProd(annot.q.left, annot.q.right.inner)))
    return None


# -- projection ---------------------------------------------------------------


def _ket_bits(t: Term) -> Optional[tuple[int, ...]]:
    factors = prod_factors(t)
    if all(isinstance(f, Ket) for f in factors):
        return tuple(f.bit for f in factors)
    return None


def _ket_summands(t: Term) -> Optional[list[tuple[complex, tuple[int, ...]]]]:
    """Decompose a canonical [alpha.]ket-product sum; None if out of shape."""
    summands = t.terms if isinstance(t, Sum) else (t,)
    out: list[tuple[complex, tuple[int, ...]]] = []
    for s in summands:
        coeff = _ONE
        if isinstance(s, Scale):
            coeff, s = s.coeff, s.body
        bits = _ket_bits(s)
        if bits is None:
            return None
        out.append((coeff, bits))
    if len({len(b) for _, b in out}) != 1:
        return None
    return out


def _ket_term(bits: tuple[int, ...]) -> Term:
    return mk_prod([Ket(b) for b in bits])


DROP_TOL = 1e-12


def measure_project(j: int, t: Term) -> Dist:
    """Projective measurement of the first j qubits of a canonical ket sum.

    Returns the distribution over |k> x |phi_k| payloads with the Born
    probabilities; outcomes below DROP_TOL are dropped and the rest
    renormalized.
    """
    summands = _ket_summands(t)
    if summands is None:
        raise NotAKetSum(f"projection needs a sum of scaled ket lists, got {t!r}")
    n = len(summands[0][1])
    if not 1 <= j <= n:
        raise LamsError(f"cannot measure {j} of {n} qubits")
    total = sum(abs(c) ** 2 for c, _ in summands)
    if total <= DROP_TOL:
        raise LamsError("zero-norm ket sum reached the projection rule")
    outcomes: list[tuple[float, Term]] = []
    for k in range(2 ** j):
        kbits = tuple((k >> (j - 1 - i)) & 1 for i in range(j))
        block = [(c, bits) for c, bits in summands if bits[:j] == kbits]
        weight = sum(abs(c) ** 2 for c, _ in block)
        p = weight / total
        if p <= DROP_TOL:
            continue
        if j == n:
            outcomes.append((p, _ket_term(kbits)))
            continue
        norm = math.sqrt(weight)
        parts = []
        for c, bits in block:
            beta = c / norm
            suffix = _ket_term(bits[j:])
            parts.append(suffix if abs(beta - 1) <= DROP_TOL else Scale(beta, suffix))
        phi = mk_sum(parts)
        outcomes.append((p, mk_prod([Ket(b) for b in kbits] + [phi])))
    scale = sum(p for p, _ in outcomes)
    return dist_normalize((p / scale, term) for p, term in outcomes)


def _rule_proj_z(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, Meas) and isinstance(t.body, Zero):
        _, core = split_s(t.body.annot)
        n = bn_arity(core.q) if isinstance(core, TQ) else None
        if n is not None:
            return _ket_term((0,) * n)
    return None


def _rule_proj(t: Term, oracle: TypeOracle) -> RuleResult:
    if isinstance(t, Meas):
        summands = _ket_summands(t.body)
        if summands is not None:
            return measure_project(t.j, t.body)
    return None


RULES: tuple[tuple[str, Matcher], ...] = (
    ("lin_r", _rule_lin_r),
    ("lin_r^α", _rule_lin_r_alpha),
    ("lin_r^0", _rule_lin_r_zero),
    ("lin_l", _rule_lin_l),
    ("lin_l^α", _rule_lin_l_alpha),
    ("lin_l^0", _rule_lin_l_zero),
    ("β_b", _rule_beta_b),
    ("β_n", _rule_beta_n),
    ("if₁", _rule_if1),
    ("if₀", _rule_if0),
    ("head", _rule_head),
    ("tail", _rule_tail),
    ("neut", _rule_neut),
    ("unit", _rule_unit),
    ("zero_α", _rule_zero_alpha),
    ("zero", _rule_zero),
    ("prod", _rule_prod_scal),
    ("dist^α", _rule_dist_alpha),
    ("fact", _rule_fact),
    ("fact¹", _rule_fact1),
    ("fact²", _rule_fact2),
    ("cast_zero_r", _rule_cast_zero_r),
    ("cast_zero_l", _rule_cast_zero_l),
    ("dist_zero_r", _rule_dist_zero_r),
    ("dist_zero_l", _rule_dist_zero_l),
    ("cast_neut_r", _rule_cast_neut_r),
    ("cast_neut_l", _rule_cast_neut_l),
    ("dist_sum_r", _rule_dist_sum_r),
    ("dist_sum_l", _rule_dist_sum_l),
    ("dist_scal_r", _rule_dist_scal_r),
    ("dist_scal_l", _rule_dist_scal_l),
    ("cast_sum", _rule_cast_sum),
    ("cast_scal", _rule_cast_scal),
    ("proj_z", _rule_proj_z),
    ("proj", _rule_proj),
)

RULE_NAMES = tuple(name for name, _ in RULES)


# ---------------------------------------------------------------------------
# Contexts and the step function.
# ---------------------------------------------------------------------------


def _arg_position_legal(fn: Term, arg: Term, oracle: TypeOracle) -> bool:
    """Whether an application argument may be reduced in place.

    Basis-parameter abstractions and the conditional evaluate their argument
    (call-by-base); value arguments are left to the root-level beta/linear
    rules.  Other parameters are call-by-name and the argument is only
    touched when it cannot yet be typed at the parameter.
    """
    if is_value(arg):
        return False
    if isinstance(fn, IfTe):
        return True
    if isinstance(fn, Lam):
        if bn_arity(fn.annot) is not None:
            return True
        return not oracle.derivable(arg, TQ(fn.annot))
    return False


def legal_positions(t: Term, oracle: TypeOracle) -> list[tuple[Path, Term]]:
    """Subterm positions reachable by the contextual rules, preorder."""
    out: list[tuple[Path, Term]] = []

    def walk(u: Term, path: Path) -> None:
        out.append((path, u))
        match u:
            case Lam() | IfTe():
                return  # no reduction under binders or in branch position
            case App(fn, arg):
                walk(fn, path + (0,))
                if _arg_position_legal(fn, arg, oracle):
                    walk(arg, path + (1,))
            case _:
                for i, c in enumerate(children(u)):
                    walk(c, path + (i,))

    walk(t, ())
    return out


def _subterm_at(t: Term, path: Path) -> Term:
    for i in path:
        t = children(t)[i]
    return t


def _replace_at(t: Term, path: Path, new: Term) -> Term:
    if not path:
        return new
    i = path[0]
    return replace_child(t, i, _replace_at(children(t)[i], path[1:], new))


def candidates(t: Term, oracle: TypeOracle | None = None) -> list[tuple[str, Path]]:
    """All (rule, position) pairs applicable to t, priority-ordered."""
    oracle = oracle or TypeOracle()
    positions = legal_positions(t, oracle)
    out = []
    for name, matcher in RULES:
        for path, sub in positions:
            if matcher(sub, oracle) is not None:
                out.append((name, path))
    return out


def apply_rule(t: Term, rule: str, path: Path, oracle: TypeOracle | None = None) -> Dist:
    oracle = oracle or TypeOracle()
    matcher = dict(RULES)[rule]
    sub = _subterm_at(t, path)
    result = matcher(sub, oracle)
    if result is None:
        raise LamsError(f"rule {rule} does not apply at {path}")
    if isinstance(result, Dist):
        return result.map(lambda branch: canonicalize(_replace_at(t, path, branch)))
    return Dist.singleton(canonicalize(_replace_at(t, path, result)))


def step(t: Term, oracle: TypeOracle | None = None) -> StepResult:
    """One deterministic step at the highest-priority rule's leftmost
    position; NormalForm if nothing applies."""
    oracle = oracle or TypeOracle()
    t = canonicalize(t)
    positions = legal_positions(t, oracle)
    for name, matcher in RULES:
        for path, sub in positions:
            result = matcher(sub, oracle)
            if result is None:
                continue
            if isinstance(result, Dist):
                dist = result.map(lambda branch: canonicalize(_replace_at(t, path, branch)))
            else:
                dist = Dist.singleton(canonicalize(_replace_at(t, path, result)))
            return Stepped(dist, name, path)
    return NormalForm(t)


StepFn = Callable[[Term, TypeOracle], StepResult]


def _run(
    t: Term,
    fuel: int,
    stepper: StepFn,
    trace: list[tuple[str, Path, Dist]] | None = None,
) -> Dist:
    if fuel <= 0:
        raise LamsError("fuel must be positive")
    if not is_closed(t):
        raise LamsError("normalize expects a closed term")
    infer_type({}, t)  # reject ill-typed input up front
    oracle = TypeOracle()
    t = canonicalize(t)
    pending: list[tuple[float, Term]] = [(1.0, t)]
    done: list[tuple[float, Term]] = []
    steps = 0
    while pending:
        p, u = pending.pop(0)
        res = stepper(u, oracle)
        if isinstance(res, NormalForm):
            done.append((p, res.term))
            continue
        steps += 1
        if steps > fuel:
            raise FuelExhausted(done + [(p, u)] + pending, steps)
        branches = [(p * q, v) for v, q in res.dist.items()]
        pending = branches + pending
        if trace is not None:
            snapshot = dist_normalize(done + pending)
            trace.append((res.rule, res.position, snapshot))
    return dist_normalize(done)


def normalize(t: Term, fuel: int = 100_000) -> Dist:
    """Fully reduce a closed well-typed term to a distribution over values."""
    return _run(t, fuel, step)


def trace_reduction(t: Term, fuel: int = 100_000) -> list[tuple[str, Path, Dist]]:
    """Every reduction step as (rule name, position, distribution so far)."""
    trace: list[tuple[str, Path, Dist]] = []
    _run(t, fuel, step, trace)
    return trace


def make_random_stepper(seed: int) -> StepFn:
    """A strategy that picks uniformly among all applicable (rule, position)
    pairs; used by the confluence sampler."""
    import random

    rng = random.Random(seed)

    def stepper(t: Term, oracle: TypeOracle) -> StepResult:
        t = canonicalize(t)
        cands = candidates(t, oracle)
        if not cands:
            return NormalForm(t)
        rule, path = rng.choice(cands)
        return Stepped(apply_rule(t, rule, path, oracle), rule, path)

    return stepper


def normalize_with(t: Term, stepper: StepFn, fuel: int = 100_000) -> Dist:
    return _run(t, fuel, stepper)
