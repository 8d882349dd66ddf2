"""Seeded generator of closed well-typed terms.

Generation runs the typing rules backwards from a requested type, with a
node budget.  Linear (non-basis) binders only receive bodies that consume
the bound variable exactly once; basis binders share a plain context.  The
top level validates every candidate against the typechecker and retries, so
the generator is total and its output always typechecks.
"""

from __future__ import annotations

import random
from collections import Counter

from .syntax import (
    App,
    CastL,
    CastR,
    Head,
    IfTe,
    Ket,
    Lam,
    Meas,
    Prod,
    QB,
    QProd,
    QS,
    QType,
    Scale,
    Sum,
    Tail,
    TArrow,
    TQ,
    Term,
    Type,
    Var,
    Zero,
    bn,
    bn_arity,
    canonicalize,
    is_btype,
    is_s_headed,
    lift,
    mk_prod,
    mk_sum,
    split_s,
    strip_one_s,
    subterms,
    t_s,
)
from .typecheck import Derivation, TypingError, check_type, infer_type

_MAX_ATTEMPTS = 40


class _GenFail(Exception):
    pass


def term_size(t: Term) -> int:
    return sum(1 for _ in subterms(t))


def _random_scalar(rng: random.Random) -> complex:
    mag = rng.choice([0.5, 1.0, 2.0, rng.uniform(0.2, 2.0)])
    if rng.random() < 0.25:
        return complex(rng.uniform(-1, 1), rng.uniform(-1, 1))
    return complex(mag if rng.random() < 0.8 else -mag)


def _random_bn(rng: random.Random, max_n: int = 3) -> QType:
    return bn(rng.randint(1, max_n))


def _random_qtype(rng: random.Random, depth: int = 2) -> QType:
    roll = rng.random()
    if depth <= 0 or roll < 0.5:
        return _random_bn(rng)
    if roll < 0.75:
        return QS(_random_qtype(rng, depth - 1))
    return QProd(_random_qtype(rng, depth - 1), _random_qtype(rng, depth - 1))


def _random_target(rng: random.Random, *, measurement: bool) -> Type:
    roll = rng.random()
    if measurement and roll < 0.1:
        n = rng.randint(2, 3)
        j = rng.randint(1, n - 1)
        from .typecheck import meas_result_type

        return meas_result_type(j, n)
    if roll < 0.55:
        return lift(TQ(_random_qtype(rng)), rng.randint(0, 1))
    if roll < 0.8:
        return TQ(QS(_random_qtype(rng, 1)))
    param = _random_bn(rng) if rng.random() < 0.7 else QS(_random_bn(rng))
    result = TQ(_random_qtype(rng, 1))
    if not is_btype(TQ(param)):
        # linear parameters need a consumable result type
        result = t_s(TQ(param)) if rng.random() < 0.7 else TQ(param)
    return TArrow(param, result)


def _ket_product(rng: random.Random, n: int) -> Term:
    return mk_prod([Ket(rng.randint(0, 1)) for _ in range(n)])


class _Gen:
    def __init__(self, rng: random.Random, measurement: bool):
        self.rng = rng
        self.measurement = measurement
        self.fresh = 0

    def var(self) -> str:
        self.fresh += 1
        return f"x{self.fresh}"

    # ctx maps names to basis qubit types only
    def gen(self, ctx: dict[str, QType], target: Type, budget: int) -> Term:
        rng = self.rng
        if budget <= 1:
            return self.leaf(ctx, target)
        n = bn_arity(target.q) if isinstance(target, TQ) else None
        if n is not None:
            return self.gen_bn(ctx, n, budget)
        if is_s_headed(target):
            return self.gen_span(ctx, target, budget)
        if isinstance(target, TArrow):
            return self.gen_arrow(ctx, target, budget)
        if isinstance(target, TQ) and isinstance(target.q, QProd):
            return self.gen_pair(ctx, target.q, budget)
        return self.leaf(ctx, target)

    def leaf(self, ctx: dict[str, QType], target: Type) -> Term:
        rng = self.rng
        n = bn_arity(target.q) if isinstance(target, TQ) else None
        if n is not None:
            matching = [x for x, q in ctx.items() if q == target.q]
            if matching and rng.random() < 0.5:
                return Var(rng.choice(matching))
            return _ket_product(rng, n)
        below = strip_one_s(target)
        if below is not None:
            if rng.random() < 0.3:
                return Zero(below)
            return self.leaf(ctx, below)
        if isinstance(target, TArrow):
            return self.mk_lambda(ctx, target, 2)
        if isinstance(target, TQ) and isinstance(target.q, QProd):
            return Prod(
                self.leaf(ctx, TQ(target.q.left)), self.leaf(ctx, TQ(target.q.right))
            )
        raise _GenFail(f"no leaf for {target!r}")

    def gen_bn(self, ctx: dict[str, QType], n: int, budget: int) -> Term:
        rng = self.rng
        choices = ["leaf", "prod", "app", "if"]
        if n == 1:
            choices.append("head")
        choices.append("tail")
        if self.measurement:
            choices.append("meas_all")
        match rng.choice(choices):
            case "meas_all":
                # full measurement: B^n is the result of measuring n of n
                return Meas(n, self.gen(ctx, t_s(TQ(bn(n))), budget - 1))
            case "prod" if n >= 2:
                split = rng.randint(1, n - 1)
                lb = budget // 2
                return Prod(
                    self.gen(ctx, TQ(bn(split)), lb),
                    self.gen(ctx, TQ(bn(n - split)), budget - lb),
                )
            case "head" if n == 1:
                m = rng.randint(2, 3)
                return Head(self.gen(ctx, TQ(bn(m)), budget - 1))
            case "tail":
                return Tail(self.gen(ctx, TQ(bn(n + 1)), budget - 1))
            case "app":
                return self.gen_exact_app(ctx, TQ(bn(n)), budget)
            case "if":
                cond = self.gen(ctx, TQ(QB()), max(2, budget // 3))
                a = self.gen(ctx, TQ(bn(n)), budget // 3)
                b = self.gen(ctx, TQ(bn(n)), budget // 3)
                return App(IfTe(a, b), cond)
            case _:
                return self.leaf(ctx, TQ(bn(n)))

    def gen_span(self, ctx: dict[str, QType], target: Type, budget: int) -> Term:
        rng = self.rng
        below = strip_one_s(target)
        assert below is not None
        options = ["zero", "sum", "scale", "embed", "app_es"]
        q = target.q if isinstance(target, TQ) else None
        if isinstance(q, QS) and isinstance(q.inner, QProd):
            options += ["castR", "castL"]
        if self.measurement and self._meas_shape(target) is not None:
            options.append("meas")
        match rng.choice(options):
            case "zero":
                return Zero(below)
            case "sum":
                k = rng.randint(2, 3)
                parts = [self.gen(ctx, target, max(1, budget // k)) for _ in range(k)]
                return mk_sum(parts)
            case "scale":
                return Scale(_random_scalar(rng), self.gen(ctx, target, budget - 1))
            case "embed":
                return self.gen(ctx, below, budget)
            case "castR":
                inner = q.inner  # type: ignore[union-attr]
                prem = TQ(QS(QProd(QS(inner.left), inner.right)))
                return CastR(self.gen(ctx, prem, budget - 1))
            case "castL":
                inner = q.inner  # type: ignore[union-attr]
                prem = TQ(QS(QProd(inner.left, QS(inner.right))))
                return CastL(self.gen(ctx, prem, budget - 1))
            case "meas":
                j, m = self._meas_shape(target)  # type: ignore[misc]
                return Meas(j, self.gen(ctx, t_s(TQ(bn(m))), budget - 1))
            case _:
                # superposed application: basis-parameter function applied to
                # a genuinely superposed argument
                param = _random_bn(self.rng, 2)
                fn = self.mk_lambda(ctx, TArrow(param, below), budget // 2)
                arg = self.gen_superposed(ctx, param, budget - budget // 2)
                return App(fn, arg)

    def gen_superposed(self, ctx: dict[str, QType], param: QType, budget: int) -> Term:
        """An argument of type S(param) that is not typable at param."""
        rng = self.rng
        n = bn_arity(param) or 1
        roll = rng.random()
        if roll < 0.2:
            return Zero(TQ(param))
        if roll < 0.6:
            return mk_sum(
                [_ket_product(rng, n), Scale(_random_scalar(rng), _ket_product(rng, n))]
            )
        return Scale(_random_scalar(rng), self.gen(ctx, TQ(param), max(1, budget - 2)))

    def _meas_shape(self, target: Type) -> tuple[int, int] | None:
        """(j, n) when target is B^j x S B^(n-j), the measurement result."""
        if not isinstance(target, TQ):
            return None
        q = target.q
        j = 0
        while isinstance(q, QProd) and isinstance(q.left, QB):
            j += 1
            q = q.right
        if j == 0 or not isinstance(q, QS):
            return None
        rest = bn_arity(q.inner)
        if rest is None:
            return None
        return j, j + rest

    def gen_pair(self, ctx: dict[str, QType], q: QProd, budget: int) -> Term:
        lb = budget // 2
        return Prod(
            self.gen(ctx, TQ(q.left), lb), self.gen(ctx, TQ(q.right), budget - lb)
        )

    def gen_arrow(self, ctx: dict[str, QType], target: TArrow, budget: int) -> Term:
        rng = self.rng
        if isinstance(target.param, QB) and rng.random() < 0.4:
            a = self.gen(ctx, target.result, budget // 2)
            b = self.gen(ctx, target.result, budget - budget // 2)
            return IfTe(a, b)
        return self.mk_lambda(ctx, target, budget)

    def mk_lambda(self, ctx: dict[str, QType], target: TArrow, budget: int) -> Term:
        x = self.var()
        if is_btype(TQ(target.param)):
            inner = dict(ctx)
            inner[x] = target.param
            return Lam(x, target.param, self.gen(inner, target.result, budget - 1))
        body = self.linear_body(ctx, x, target.param, target.result, budget - 1)
        if body is None:
            raise _GenFail(f"no linear body for {target!r}")
        return Lam(x, target.param, body)

    def linear_body(
        self, ctx: dict[str, QType], x: str, param: QType, result: Type, budget: int
    ) -> Term | None:
        """A body of the result type using the linear variable exactly once."""
        rng = self.rng
        pk, pcore = split_s(TQ(param))
        rk, rcore = split_s(result)
        use = Var(x)
        if rcore == pcore and rk >= pk:
            if rk > pk and rng.random() < 0.5 and budget > 2:
                roll = rng.random()
                if roll < 0.4:
                    return Scale(_random_scalar(rng), use)
                return mk_sum([use, Zero(strip_one_s(result))])
            return use
        n = bn_arity(pcore.q) if isinstance(pcore, TQ) else None
        if self.measurement and n is not None and pk >= 1:
            shape = self._meas_shape(result) or (None, None)
            from .typecheck import meas_result_type

            for j in range(1, n + 1):
                if meas_result_type(j, n) == result:
                    return Meas(j, use)
        return None

    def gen_exact_app(self, ctx: dict[str, QType], target: Type, budget: int) -> Term:
        param = _random_bn(self.rng, 2)
        fn = self.mk_lambda(ctx, TArrow(param, target), budget // 2)
        arg = self.gen(ctx, TQ(param), budget - budget // 2)
        return App(fn, arg)


def gen_typed_term(
    seed: int, size: int, *, measurement: bool = True
) -> tuple[Term, Type]:
    """Deterministic closed well-typed term of at most roughly `size` nodes,
    together with its minimal type."""
    rng = random.Random(seed)
    for _ in range(_MAX_ATTEMPTS):
        gen = _Gen(rng, measurement)
        target = _random_target(rng, measurement=measurement)
        try:
            t = canonicalize(gen.gen({}, target, size))
        except (_GenFail, RecursionError):
            continue
        if not measurement and any(isinstance(s, Meas) for s in subterms(t)):
            continue
        try:
            ty, _ = infer_type({}, t)
            check_type({}, t, ty)
        except TypingError:
            continue
        return t, ty
    fallback = Ket(rng.randint(0, 1))
    return fallback, infer_type({}, fallback)[0]


def derivation_rules(d: Derivation) -> Counter:
    """Multiset of typing-rule tags used in a derivation."""
    out: Counter = Counter([d.rule])
    for p in d.premises:
        out.update(derivation_rules(p))
    return out


def rule_coverage(samples: int, size: int = 14, seed: int = 0) -> tuple[Counter, int]:
    """Rule tags reached across generated terms; stops early when every
    term-level typing rule has been seen."""
    from .typecheck import ALL_RULES

    goal = set(ALL_RULES) - {"∥"}  # distributions are not term syntax
    seen: Counter = Counter()
    used = 0
    for i in range(samples):
        used += 1
        t, ty = gen_typed_term(seed + i, size)
        seen.update(derivation_rules(check_type({}, t, ty)))
        if goal <= set(seen):
            break
    return seen, used
