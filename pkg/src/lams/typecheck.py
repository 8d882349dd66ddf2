"""Typechecking: minimal-type inference with linearity accounting, and
construction of canonical typing derivations (S-introductions pushed to the
root wherever the derivation-tree rewrite system allows).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Union

from .syntax import (
    App,
    B,
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
    QB,
    QProd,
    QS,
    QType,
    Scale,
    Sum,
    Tail,
    TArrow,
    TQ,
    TS,
    Term,
    Type,
    Var,
    Zero,
    bn,
    bn_arity,
    canonical_qtype,
    canonical_type,
    canonicalize,
    is_btype,
    is_s_headed,
    lift,
    split_s,
    strip_one_s,
    t_s,
)


class TypingError(LamsError):
    pass


class TypeMismatch(TypingError):
    pass


class LinearityViolation(TypingError):
    pass


class ArityError(TypingError):
    pass


class NotQubitType(TypingError):
    pass


class NoJoin(TypingError):
    pass


class NotLiftable(TypingError):
    pass


Context = dict[str, Type]


def classify(a: Type) -> set[str]:
    """Classification tags: Basis (duplicable), Qubit, General."""
    tags = {"General"}
    if is_btype(a):
        tags.add("Basis")
    if isinstance(a, TQ):
        tags.add("Qubit")
    return tags


def join_types(a: Type, b: Type) -> Type:
    """Least common type reachable from both by prepending S."""
    a, b = canonical_type(a), canonical_type(b)
    pa, core_a = split_s(a)
    pb, core_b = split_s(b)
    if core_a != core_b:
        raise NoJoin(f"no common lift of {a!r} and {b!r}")
    return lift(core_a, max(pa, pb))


def _liftable_to(frm: Type, to: Type) -> bool:
    """Whether `to` = S^k `frm` for some k >= 0."""
    k_to, core_to = split_s(to)
    k_frm, core_frm = split_s(frm)
    return core_to == core_frm and k_to >= k_frm


# ---------------------------------------------------------------------------
# Inference: minimal type plus usage multiset.
# ---------------------------------------------------------------------------


def _linear(ctx_type: Type) -> bool:
    return not is_btype(ctx_type)


def infer_type(ctx: Context, t: Term, *, _canon: bool = True) -> tuple[Type, Counter]:
    """Minimal derivable type and variable-usage multiset.

    Raises LinearityViolation if a linear (non-basis-typed) variable of ctx
    is not used exactly once, or a lambda binds a linear variable that is
    not used exactly once in its body.
    """
    if _canon:
        t = canonicalize(t)
        ctx = {x: canonical_type(a) for x, a in ctx.items()}
    ty, usage = _infer(ctx, t)
    for x, a in ctx.items():
        if _linear(a) and usage[x] != 1:
            raise LinearityViolation(f"linear variable {x} used {usage[x]} times")
    return ty, usage


def _infer(ctx: Context, t: Term) -> tuple[Type, Counter]:
    match t:
        case Var(name):
            if name not in ctx:
                raise TypeMismatch(f"unbound variable {name}")
            return ctx[name], Counter({name: 1})

        case Ket():
            return B, Counter()

        case Zero(annot):
            return t_s(annot), Counter()

        case Lam(name, annot, body):
            inner = dict(ctx)
            inner[name] = TQ(annot)
            bty, usage = _infer(inner, body)
            if _linear(TQ(annot)) and usage[name] != 1:
                raise LinearityViolation(
                    f"linear parameter {name} used {usage[name]} times"
                )
            usage = usage.copy()
            del usage[name]
            return TArrow(annot, bty), usage

        case IfTe(a, b):
            ta, ua = _infer(ctx, a)
            tb, ub = _infer(ctx, b)
            joined = join_types(ta, tb)
            usage = Counter()
            for x in set(ua) | set(ub):
                if x in ctx and _linear(ctx[x]):
                    if ua[x] != ub[x]:
                        raise LinearityViolation(
                            f"linear variable {x} used unevenly across branches"
                        )
                    usage[x] = ua[x]
                else:
                    usage[x] = max(ua[x], ub[x])
            return TArrow(QB(), joined), usage

        case Sum(ts):
            tys, usages = zip(*(_infer(ctx, x) for x in ts))
            joined = tys[0]
            for ty in tys[1:]:
                joined = join_types(joined, ty)
            if not is_s_headed(joined):
                joined = t_s(joined)
            usage = Counter()
            for u in usages:
                usage.update(u)
            return joined, usage

        case Scale(_, b):
            ty, usage = _infer(ctx, b)
            if not is_s_headed(ty):
                ty = t_s(ty)
            return ty, usage

        case App(fn, arg):
            _, uf = _infer(ctx, fn)
            _, ua = _infer(ctx, arg)
            usage = uf + ua
            mode, arrow = app_mode(ctx, fn, arg)
            if mode == "E":
                return arrow.result, usage
            return t_s(arrow.result), usage

        case Prod(l, r):
            tl, ul = _infer(ctx, l)
            tr, ur = _infer(ctx, r)
            ql, qr = _as_qubit(tl), _as_qubit(tr)
            return TQ(QProd(ql, qr)), ul + ur

        case Head(b):
            ty, usage = _infer(ctx, b)
            _bn_of(ty, "head")
            return B, usage

        case Tail(b):
            ty, usage = _infer(ctx, b)
            n = _bn_of(ty, "tail")
            return TQ(bn(n - 1)), usage

        case Meas(j, b):
            ty, usage = _infer(ctx, b)
            k, core = split_s(ty)
            n = bn_arity(core.q) if isinstance(core, TQ) else None
            if n is None:
                raise TypeMismatch(f"measurement needs S^k B^n, got {ty!r}")
            if not 1 <= j <= n:
                raise ArityError(f"cannot measure {j} of {n} qubits")
            return meas_result_type(j, n), usage

        case CastR(b):
            _, usage = _infer(ctx, b)
            prem = cast_premise(ctx, b, right=True)
            inner = prem.q.inner  # S(SΨ × Φ) -> SΨ × Φ
            return TQ(QS(QProd(inner.left.inner, inner.right))), usage

        case CastL(b):
            _, usage = _infer(ctx, b)
            prem = cast_premise(ctx, b, right=False)
            inner = prem.q.inner
            return TQ(QS(QProd(inner.left, inner.right.inner))), usage

    raise TypeMismatch(f"cannot type {t!r}")


def meas_result_type(j: int, n: int) -> Type:
    """B^j x S B^(n-j) as a right-nested product; B^n when j = n."""
    if j == n:
        return TQ(bn(n))
    q: QType = QS(bn(n - j))
    for _ in range(j):
        q = QProd(QB(), q)
    return TQ(q)


def _as_qubit(a: Type) -> QType:
    if isinstance(a, TQ):
        return a.q
    raise NotQubitType(f"{a!r} is not a qubit type")


def _bn_of(ty: Type, what: str) -> int:
    n = bn_arity(ty.q) if isinstance(ty, TQ) else None
    if n is None:
        raise TypeMismatch(f"{what} needs a basis-qubit list, got {ty!r}")
    if n < 2:
        raise ArityError(f"{what} needs at least two qubits")
    return n


def app_mode(ctx: Context, fn: Term, arg: Term) -> tuple[str, TArrow]:
    """Decide exact vs superposed application; exact is preferred.

    Returns ("E", arrow) when the argument fits the parameter exactly (the
    result is arrow.result) or ("ES", arrow) when both sides lift by one S
    (the result is S arrow.result).
    """
    tf, _ = _infer(ctx, fn)
    ta, _ = _infer(ctx, arg)
    arrow = tf if isinstance(tf, TArrow) else strip_one_s(tf)
    if not isinstance(arrow, TArrow):
        raise TypeMismatch(f"cannot apply a term of type {tf!r}")
    param = TQ(arrow.param)
    if isinstance(tf, TArrow):
        if _liftable_to(ta, param) or _Deriver(ctx).derivable(arg, param):
            return "E", arrow
    if _liftable_to(ta, t_s(param)) or _Deriver(ctx).derivable(arg, t_s(param)):
        return "ES", arrow
    raise TypeMismatch(f"argument type {ta!r} does not fit parameter {arrow.param!r}")


def cast_premise(ctx: Context, b: Term, *, right: bool) -> TQ:
    """The premise type S(SΨ×Φ) (resp. S(Ψ×SΦ)) for a cast of b.

    When the relevant component of b's minimal product type is already
    S-headed, the premise is one root lift away.  Otherwise the S has to be
    inserted inside the product, which is only derivable for literal
    product/sum structure (an inner S-intro on the component).
    """
    ty, _ = _infer(ctx, b)
    shape = "S(SΨ×Φ)" if right else "S(Ψ×SΦ)"
    d, core = split_s(ty)
    if d > 1 or not isinstance(core, TQ) or not isinstance(core.q, QProd):
        raise TypeMismatch(f"cast needs {shape}, got {ty!r}")
    side = core.q.left if right else core.q.right
    if isinstance(side, QS):
        return t_s(core)  # type: ignore[return-value]
    if right:
        cand = TQ(QS(QProd(QS(core.q.left), core.q.right)))
    else:
        cand = TQ(QS(QProd(core.q.left, QS(core.q.right))))
    if _Deriver(ctx).derivable(b, cand):
        return cand
    raise TypeMismatch(f"cast needs {shape}, got {ty!r}")


# ---------------------------------------------------------------------------
# Derivations.
# ---------------------------------------------------------------------------

RULE_AX = "Ax"
RULE_AX0 = "Ax0"
RULE_AXK0 = "Ax|0>"
RULE_AXK1 = "Ax|1>"
RULE_SCALE = "αI"
RULE_SUM = "+I"
RULE_SI = "SI"
RULE_SE = "SE"
RULE_IF = "If"
RULE_ARROW_I = "⇒I"
RULE_ARROW_E = "⇒E"
RULE_ARROW_ES = "⇒ES"
RULE_PROD_I = "×I"
RULE_PROD_ER = "×Er"
RULE_PROD_EL = "×El"
RULE_CAST_R = "⇑r"
RULE_CAST_L = "⇑l"
RULE_PAR = "∥"

ALL_RULES = (
    RULE_AX, RULE_AX0, RULE_AXK0, RULE_AXK1, RULE_SCALE, RULE_SUM, RULE_SI,
    RULE_SE, RULE_IF, RULE_ARROW_I, RULE_ARROW_E, RULE_ARROW_ES, RULE_PROD_I,
    RULE_PROD_ER, RULE_PROD_EL, RULE_CAST_R, RULE_CAST_L, RULE_PAR,
)


@dataclass(frozen=True)
class Derivation:
    """A typing derivation node; conclusion is (ctx, term, type)."""

    rule: str
    ctx: tuple[tuple[str, Type], ...]
    term: Union[Term, Dist]
    type_: Type
    premises: tuple["Derivation", ...] = ()

    def conclusion(self) -> tuple[dict[str, Type], Union[Term, Dist], Type]:
        return dict(self.ctx), self.term, self.type_


def _frozen_ctx(ctx: Context) -> tuple[tuple[str, Type], ...]:
    return tuple(sorted(ctx.items()))


class _Deriver:
    """Builds canonical derivations: S-intro nodes appear only where forced
    by a premise type, otherwise they sit at the root.

    With strip=False the sum/scale rules keep their premises at the node's
    own conclusion type instead of re-deriving at the least lifted one; the
    evaluator uses this mode (see semantic_derivation).
    """

    def __init__(self, ctx: Context, strip: bool = True):
        self.ctx = ctx
        self.strip = strip
        self._memo: dict[tuple[Term, Type], Optional[Derivation]] = {}

    def derive(self, t: Term, target: Type) -> Derivation:
        d = self._try(t, target)
        if d is None:
            raise NotLiftable(f"cannot derive type {target!r} for {t!r}")
        return d

    def derivable(self, t: Term, target: Type) -> bool:
        return self._try(t, target) is not None

    def _try(self, t: Term, target: Type) -> Optional[Derivation]:
        key = (t, target)
        if key in self._memo:
            return self._memo[key]
        self._memo[key] = None  # cut off ill-founded recursion
        try:
            d = self._build(t, target)
        except TypingError:
            d = None
        self._memo[key] = d
        return d

    def _node(self, rule: str, t, ty: Type, prem: tuple[Derivation, ...] = ()) -> Derivation:
        return Derivation(rule, _frozen_ctx(self.ctx), t, ty, prem)

    def _root_lift(self, d: Derivation, target: Type) -> Optional[Derivation]:
        """Append root S-intros to reach target, if reachable."""
        cur = d
        ty = d.type_
        while ty != target:
            if not _liftable_to(ty, target):
                return None
            ty = t_s(ty)
            cur = self._node(RULE_SI, d.term, ty, (cur,))
        return cur

    def _with_binding(self, name: str, a: Type) -> "_Deriver":
        inner = dict(self.ctx)
        inner[name] = a
        return _Deriver(inner, self.strip)

    def _build(self, t: Term, target: Type) -> Optional[Derivation]:
        match t:
            case Var(name):
                if name not in self.ctx:
                    return None
                base = self._node(RULE_AX, t, self.ctx[name])
                return self._root_lift(base, target)

            case Ket(b):
                base = self._node(RULE_AXK1 if b else RULE_AXK0, t, B)
                return self._root_lift(base, target)

            case Zero(annot):
                base = self._node(RULE_AX0, t, t_s(annot))
                return self._root_lift(base, target)

            case Lam(name, annot, body):
                k, core = split_s(target)
                if not isinstance(core, TArrow) or core.param != annot:
                    return None
                sub = self._with_binding(name, TQ(annot))
                db = sub._try(body, core.result)
                if db is None:
                    return None
                base = self._node(RULE_ARROW_I, t, core, (db,))
                return self._root_lift(base, target)

            case IfTe(a, b):
                k, core = split_s(target)
                if not isinstance(core, TArrow) or not isinstance(core.param, QB):
                    return None
                da = self._try(a, core.result)
                db = self._try(b, core.result)
                if da is None or db is None:
                    return None
                base = self._node(RULE_IF, t, core, (da, db))
                return self._root_lift(base, target)

            case Sum(ts):
                if not is_s_headed(target):
                    return None
                # canonical: build the sum at the least S-headed type the
                # summands admit, then lift at the root
                t0 = target
                while self.strip:
                    below = strip_one_s(t0)
                    if below is None or not is_s_headed(below):
                        break
                    if all(self.derivable(x, below) for x in ts):
                        t0 = below
                    else:
                        break
                prems = []
                for x in ts:
                    dx = self._try(x, t0)
                    if dx is None:
                        return None
                    prems.append(dx)
                base = self._node(RULE_SUM, t, t0, tuple(prems))
                return self._root_lift(base, target)

            case Scale(_, b):
                if not is_s_headed(target):
                    return None
                t0 = target
                while self.strip:
                    below = strip_one_s(t0)
                    if below is None or not is_s_headed(below):
                        break
                    if self.derivable(b, below):
                        t0 = below
                    else:
                        break
                db = self._try(b, t0)
                if db is None:
                    return None
                base = self._node(RULE_SCALE, t, t0, (db,))
                return self._root_lift(base, target)

            case App(fn, arg):
                try:
                    mode, arrow = app_mode(self.ctx, fn, arg)
                except TypingError:
                    return None
                if mode == "E":
                    df = self._try(fn, arrow)
                    da = self._try(arg, TQ(arrow.param))
                    if df is None or da is None:
                        return None
                    base = self._node(RULE_ARROW_E, t, arrow.result, (da, df))
                else:
                    df = self._try(fn, _s_arrow(arrow))
                    da = self._try(arg, t_s(TQ(arrow.param)))
                    if df is None or da is None:
                        return None
                    base = self._node(RULE_ARROW_ES, t, t_s(arrow.result), (da, df))
                return self._root_lift(base, target)

            case Prod(l, r):
                k, core = split_s(target)
                if not isinstance(core, TQ) or not isinstance(core.q, QProd):
                    return None
                dl = self._try(l, TQ(core.q.left))
                dr = self._try(r, TQ(core.q.right))
                if dl is None or dr is None:
                    return None
                base = self._node(RULE_PROD_I, t, core, (dl, dr))
                return self._root_lift(base, target)

            case Head(b):
                try:
                    ty, _ = _infer(self.ctx, b)
                    n = _bn_of(ty, "head")
                except TypingError:
                    return None
                db = self._try(b, TQ(bn(n)))
                if db is None:
                    return None
                base = self._node(RULE_PROD_ER, t, B, (db,))
                return self._root_lift(base, target)

            case Tail(b):
                try:
                    ty, _ = _infer(self.ctx, b)
                    n = _bn_of(ty, "tail")
                except TypingError:
                    return None
                db = self._try(b, TQ(bn(n)))
                if db is None:
                    return None
                base = self._node(RULE_PROD_EL, t, TQ(bn(n - 1)), (db,))
                return self._root_lift(base, target)

            case Meas(j, b):
                try:
                    ty, _ = _infer(self.ctx, b)
                except TypingError:
                    return None
                k, core = split_s(ty)
                n = bn_arity(core.q) if isinstance(core, TQ) else None
                if n is None or not 1 <= j <= n:
                    return None
                k = max(k, 1)
                db = self._try(b, lift(TQ(bn(n)), k))
                if db is None:
                    return None
                base = self._node(RULE_SE, t, meas_result_type(j, n), (db,))
                return self._root_lift(base, target)

            case CastR(b):
                try:
                    prem = cast_premise(self.ctx, b, right=True)
                except TypingError:
                    return None
                db = self._try(b, prem)
                if db is None:
                    return None
                inner = prem.q.inner
                concl = TQ(QS(QProd(inner.left.inner, inner.right)))
                base = self._node(RULE_CAST_R, t, concl, (db,))
                return self._root_lift(base, target)

            case CastL(b):
                try:
                    prem = cast_premise(self.ctx, b, right=False)
                except TypingError:
                    return None
                db = self._try(b, prem)
                if db is None:
                    return None
                inner = prem.q.inner
                concl = TQ(QS(QProd(inner.left, inner.right.inner)))
                base = self._node(RULE_CAST_L, t, concl, (db,))
                return self._root_lift(base, target)

        return None


def _s_arrow(arrow: TArrow) -> Type:
    return TS(arrow)


def check_type(ctx: Context, t: Term, a: Type) -> Derivation:
    """Canonical derivation of ctx ⊢ t : a, or a TypingError."""
    t = canonicalize(t)
    a = canonical_type(a)
    ctx = {x: canonical_type(ty) for x, ty in ctx.items()}
    infer_type(ctx, t)  # linearity and well-formedness first
    return _Deriver(ctx).derive(t, a)


def derivable(ctx: Context, t: Term, a: Type) -> bool:
    try:
        check_type(ctx, t, a)
        return True
    except TypingError:
        return False


def semantic_derivation(ctx: Context, t: Term, a: Type | None = None) -> Derivation:
    """Derivation used by the evaluator: sums and scales are typed at the
    enclosing type rather than re-minimalized, which keeps every rewrite
    step denotation-preserving (see the decisions notes on S^2 types).
    """
    t = canonicalize(t)
    ctx = {x: canonical_type(ty) for x, ty in ctx.items()}
    if a is None:
        a, _ = infer_type(ctx, t)
    else:
        a = canonical_type(a)
        infer_type(ctx, t)
    return _Deriver(ctx, strip=False).derive(t, a)


def derive_dist(ctx: Context, d: Dist, a: Type) -> Derivation:
    """Derivation of a probability distribution via the ∥ rule."""
    prems = tuple(check_type(ctx, t, a) for t, _ in d.items())
    return Derivation(RULE_PAR, _frozen_ctx(ctx), d, canonical_type(a), prems)


def si_wrap(d: Derivation) -> Derivation:
    """Lift a derivation's conclusion by one root S-intro."""
    return Derivation(RULE_SI, d.ctx, d.term, t_s(d.type_), (d,))


def canonicity_redexes(d: Derivation) -> list[str]:
    """Derivation-tree rewrite redexes still present (empty = canonical).

    The four commuting patterns push S-intros to the root: scale over a
    liftable premise, sum with all premises lifted, superposed application
    with both premises lifted, and a distribution with all branches lifted.
    """
    found: list[str] = []

    def liftable_premise(p: Derivation) -> bool:
        return p.rule == RULE_SI and is_s_headed(p.premises[0].type_)

    def walk(node: Derivation) -> None:
        if node.rule == RULE_SCALE and liftable_premise(node.premises[0]):
            found.append("scale-over-lift")
        if node.rule == RULE_SUM and all(liftable_premise(p) for p in node.premises):
            found.append("sum-over-lifts")
        if node.rule == RULE_ARROW_ES and all(p.rule == RULE_SI for p in node.premises):
            found.append("app-over-lifts")
        if node.rule == RULE_PAR and node.premises and all(
            liftable_premise(p) for p in node.premises
        ):
            found.append("par-over-lifts")
        for p in node.premises:
            walk(p)

    walk(d)
    return found
