"""Deterministic pretty-printing of terms, types, and distributions.

The printer is the inverse of the parser up to term_eq: canonical forms in,
canonical text out, and parse_term(print_term(t)) == t up to alpha/AC and
scalar tolerance.
"""

from __future__ import annotations

import json

from .syntax import (
    App,
    CastL,
    CastR,
    Dist,
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
    TS,
    Term,
    Type,
    Var,
    Zero,
    prod_factors,
    term_key,
)


def fmt_scalar(c: complex) -> str:
    """Scalar literal: bare for simple nonnegative reals, parenthesized otherwise."""
    re_, im = c.real, c.imag
    if im == 0:
        s = f"{re_:.10g}"
        return s if re_ >= 0 else f"({s})"
    if re_ == 0:
        return f"({im:.10g}*i)" if im >= 0 else f"(-{abs(im):.10g}*i)"
    sign = "+" if im >= 0 else "-"
    return f"({re_:.10g}{sign}{abs(im):.10g}*i)"


def print_qtype(q: QType) -> str:
    return print_type(TQ(q))


def print_type(a: Type) -> str:
    match a:
        case TQ(q):
            return _print_q(q)
        case TArrow(param, result):
            return f"{_print_q(param)} => {print_type(result)}"
        case TS(inner):
            return f"S({print_type(inner)})"
    raise TypeError(f"unknown type {a!r}")


def _print_q(q: QType) -> str:
    match q:
        case QB():
            return "B"
        case QS(inner):
            return f"S({_print_q(inner)})"
        case QProd():
            factors = []
            cur: QType = q
            while isinstance(cur, QProd):
                factors.append(cur.left)
                cur = cur.right
            factors.append(cur)
            return " * ".join(_print_q_run(factors))
    raise TypeError(f"unknown qubit type {q!r}")


def _print_q_run(factors: list[QType]) -> list[str]:
    """Collapse consecutive B factors into B^n chunks."""
    out: list[str] = []
    run = 0
    for f in factors:
        if isinstance(f, QB):
            run += 1
            continue
        if run:
            out.append("B" if run == 1 else f"B^{run}")
            run = 0
        out.append(f"({_print_q(f)})" if isinstance(f, QProd) else _print_q(f))
    if run:
        out.append("B" if run == 1 else f"B^{run}")
    return out


# precedence levels, loosest binding to tightest
_LAM, _SUM, _SCALE, _PREFIX, _PROD, _APP, _ATOM = range(7)


def _prec(t: Term) -> int:
    match t:
        case Var() | Ket() | Zero():
            return _ATOM
        case Prod():
            return _ATOM if _ket_string(t) is not None else _PROD
        case App() | IfTe():
            return _APP
        case Head() | Tail() | CastR() | CastL() | Meas():
            return _PREFIX
        case Scale():
            return _SCALE
        case Sum():
            return _SUM
        case Lam():
            return _LAM
    raise TypeError(f"unknown term {t!r}")


def print_term(t: Term) -> str:
    return _pt(t, _LAM)


def _pt(t: Term, min_level: int) -> str:
    """Print t for a position requiring at least `min_level` binding."""
    s = _render(t)
    return f"({s})" if _prec(t) < min_level else s


def _ket_string(t: Term) -> str | None:
    factors = prod_factors(t)
    if all(isinstance(f, Ket) for f in factors):
        return "|" + "".join(str(f.bit) for f in factors) + ">"
    return None


def _render(t: Term) -> str:
    match t:
        case Var(name):
            return name
        case Ket(bit):
            return f"|{bit}>"
        case Lam(name, annot, body):
            return f"\\{name}:{print_qtype(annot)}. {_pt(body, _LAM)}"
        case App(fn, arg):
            return f"{_pt(fn, _APP)} {_pt(arg, _ATOM)}"
        case IfTe(a, b):
            return f"if? {_pt(a, _ATOM)} {_pt(b, _ATOM)}"
        case Prod():
            ket = _ket_string(t)
            if ket is not None:
                return ket
            return " * ".join(_pt(f, _APP) for f in prod_factors(t))
        case Head(b):
            return f"head {_pt(b, _PREFIX)}"
        case Tail(b):
            return f"tail {_pt(b, _PREFIX)}"
        case CastR(b):
            return f"castR {_pt(b, _PREFIX)}"
        case CastL(b):
            return f"castL {_pt(b, _PREFIX)}"
        case Meas(j, b):
            return f"meas {j} {_pt(b, _PREFIX)}"
        case Zero(annot):
            return f"zero({print_type(annot)})"
        case Scale(c, b):
            return f"{fmt_scalar(c)}.{_pt(b, _PREFIX)}"
        case Sum(ts):
            parts = [_pt(ts[0], _SCALE)]
            for x in ts[1:]:
                if isinstance(x, Scale) and x.coeff.imag == 0 and x.coeff.real < 0:
                    parts.append(f"- {_pt(Scale(-x.coeff, x.body), _SCALE)}")
                else:
                    parts.append(f"+ {_pt(x, _SCALE)}")
            return " ".join(parts)
    raise TypeError(f"unknown term {t!r}")


def print_dist(d: Dist) -> str:
    """Distribution rendering: `[ p: t || q: u ]`, descending probability."""
    items = sorted(d.items(), key=lambda kv: (-kv[1], term_key(kv[0])))
    if len(items) == 1:
        return print_term(items[0][0])
    inner = " || ".join(f"{p:.6g}: {print_term(t)}" for t, p in items)
    return f"[ {inner} ]"


def dist_to_json(d: Dist) -> dict:
    items = sorted(d.items(), key=lambda kv: (-kv[1], term_key(kv[0])))
    return {"branches": [{"p": p, "term": print_term(t)} for t, p in items]}


def term_to_json(t: Term) -> dict:
    return {"term": print_term(t)}


def type_to_json(a: Type) -> dict:
    return {"type": print_type(a)}


def json_dumps(obj: dict) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)
