"""Concrete textual syntax: tokenizer and recursive-descent parser.

Grammar sketch (loosest to tightest):

    term    := lambda | 'if' term 'then' term 'else' term | sum
    lambda  := '\\' IDENT ':' qtype '.' term
    sum     := ['-'] scaled (('+' | '-') scaled)*
    scaled  := scalar '.' scaled | prefix
    prefix  := ('head'|'tail'|'castR'|'castL') prefix | 'meas' INT prefix
             | product
    product := app ('*' app)*          (right-nested)
    app     := atom atom*              (left-nested)
    atom    := IDENT | KET | 'zero' '(' type ')' | 'if?' atom atom
             | '(' term ')'

Scalars are decimal numbers, 'sqrt(...)', 'i', combined with + - * / and
parentheses.  Ket strings |b1...bn> abbreviate right-nested products; the
characters '+' and '-' inside a ket expand to the Hadamard-basis states.

Source files hold `def name = term;` bindings plus an optional
`main = term;`; definitions are expanded as macros before typechecking.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .syntax import (
    App,
    CastL,
    CastR,
    IfTe,
    Head,
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
    Term,
    Type,
    Var,
    Zero,
    canonical_type,
    canonicalize,
    free_vars,
    mk_prod,
    mk_sum,
    t_s,
)


class ParseError(LamsError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col


class UnknownIdentifier(ParseError):
    pass


class NonQubitParam(ParseError):
    pass


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+|//[^\n]*)
  | (?P<ket>\|[01+\-]+>)
  | (?P<num>\d+\.\d+|\d+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_']*\??)
  | (?P<op>=>|\|\||[\\:.()*+\-=;^/\[\]])
    """,
    re.VERBOSE,
)

_KEYWORDS = {
    "if", "then", "else", "if?", "head", "tail", "meas", "castR", "castL",
    "zero", "sqrt", "def", "main", "i",
}

_SQRT_HALF = 1 / math.sqrt(2)
_KET_CHAR = {
    "0": Ket(0),
    "1": Ket(1),
    "+": mk_sum([Scale(_SQRT_HALF, Ket(0)), Scale(_SQRT_HALF, Ket(1))]),
    "-": mk_sum([Scale(_SQRT_HALF, Ket(0)), Scale(-_SQRT_HALF, Ket(1))]),
}


@dataclass(frozen=True)
class Token:
    kind: str  # ket | num | name | op | eof
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    pos = 0
    line, col = 1, 1
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup or "ws"
        lexeme = m.group()
        if kind != "ws":
            tokens.append(Token(kind, lexeme, line, col))
        newlines = lexeme.count("\n")
        if newlines:
            line += newlines
            col = len(lexeme) - lexeme.rfind("\n")
        else:
            col += len(lexeme)
        pos = m.end()
    tokens.append(Token("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.pos = 0

    # -- token utilities ---------------------------------------------------

    def peek(self, ahead: int = 0) -> Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.peek()
        self.pos += 1
        return tok

    def at(self, text: str) -> bool:
        return self.peek().text == text and self.peek().kind in ("op", "name")

    def expect(self, text: str) -> Token:
        tok = self.peek()
        if tok.text != text:
            raise ParseError(f"expected {text!r}, found {tok.text or 'end of input'!r}", tok.line, tok.col)
        return self.next()

    def error(self, msg: str) -> ParseError:
        tok = self.peek()
        return ParseError(msg + f" (found {tok.text or 'end of input'!r})", tok.line, tok.col)

    # -- terms --------------------------------------------------------------

    def term(self) -> Term:
        if self.at("\\"):
            self.next()
            name = self.ident()
            self.expect(":")
            annot = self.qtype()
            self.expect(".")
            body = self.term()
            return Lam(name, annot, body)
        if self.at("if"):
            self.next()
            cond = self.term_no_sugar()
            self.expect("then")
            then_ = self.term_no_sugar()
            self.expect("else")
            else_ = self.term()
            return App(IfTe(then_, else_), cond)
        return self.sum()

    def term_no_sugar(self) -> Term:
        # sub-term of if/then/else; stops at the keywords
        return self.sum()

    def sum(self) -> Term:
        parts: list[Term] = []
        negate = False
        if self.at("-"):
            self.next()
            negate = True
        parts.append(self._signed(self.scaled(), negate))
        while self.at("+") or self.at("-"):
            neg = self.next().text == "-"
            parts.append(self._signed(self.scaled(), neg))
        if len(parts) == 1:
            return parts[0]
        return mk_sum(parts)

    @staticmethod
    def _signed(t: Term, negate: bool) -> Term:
        if not negate:
            return t
        if isinstance(t, Scale):
            return Scale(-t.coeff, t.body)
        return Scale(-1, t)

    def scaled(self) -> Term:
        save = self.pos
        coeff = self._try_scalar()
        if coeff is not None and self.at("."):
            self.next()
            return Scale(coeff, self.scaled())
        self.pos = save
        return self.prefix()

    def prefix(self) -> Term:
        tok = self.peek()
        if tok.text in ("head", "tail", "castR", "castL"):
            self.next()
            body = self.prefix()
            return {"head": Head, "tail": Tail, "castR": CastR, "castL": CastL}[tok.text](body)
        if tok.text == "meas":
            self.next()
            jtok = self.peek()
            if jtok.kind != "num" or "." in jtok.text:
                raise self.error("expected a qubit count after meas")
            self.next()
            return Meas(int(jtok.text), self.prefix())
        return self.product()

    def product(self) -> Term:
        factors = [self.app()]
        while self.at("*"):
            self.next()
            factors.append(self.app())
        return mk_prod(factors)

    def app(self) -> Term:
        t = self.atom()
        while self._at_atom():
            t = App(t, self.atom())
        return t

    def _at_atom(self) -> bool:
        tok = self.peek()
        if tok.kind == "ket":
            return True
        if tok.text == "(":
            return True
        if tok.kind == "name":
            return tok.text not in _KEYWORDS or tok.text in ("if?", "zero")
        return False

    def atom(self) -> Term:
        tok = self.peek()
        if tok.kind == "ket":
            self.next()
            return mk_prod([_KET_CHAR[c] for c in tok.text[1:-1]])
        if tok.text == "zero":
            self.next()
            self.expect("(")
            annot = self.type()
            self.expect(")")
            return Zero(annot)
        if tok.text == "if?":
            self.next()
            then_ = self.atom()
            else_ = self.atom()
            return IfTe(then_, else_)
        if tok.text == "(":
            self.next()
            t = self.term()
            self.expect(")")
            return t
        if tok.kind == "name" and tok.text not in _KEYWORDS:
            self.next()
            return Var(tok.text)
        raise self.error("expected a term")

    def ident(self) -> str:
        tok = self.peek()
        if tok.kind != "name" or tok.text in _KEYWORDS:
            raise self.error("expected an identifier")
        self.next()
        return tok.text

    # -- scalars ------------------------------------------------------------

    def _try_scalar(self) -> complex | None:
        save = self.pos
        try:
            return self.scalar_expr()
        except ParseError:
            self.pos = save
            return None

    def scalar_expr(self) -> complex:
        value = self.scalar_term()
        while self.peek().text in ("+", "-") and self._scalar_continues():
            op = self.next().text
            rhs = self.scalar_term()
            value = value + rhs if op == "+" else value - rhs
        return value

    def _scalar_continues(self) -> bool:
        nxt = self.peek(1)
        return nxt.kind == "num" or nxt.text in ("sqrt", "i", "(", "-")

    def scalar_term(self) -> complex:
        value = self.scalar_factor()
        while self.peek().text in ("*", "/"):
            # `2 * |0>` is a product of terms, not a scalar product
            nxt = self.peek(1)
            if not (nxt.kind == "num" or nxt.text in ("sqrt", "i", "(", "-")):
                break
            op = self.next().text
            rhs = self.scalar_factor()
            value = value * rhs if op == "*" else value / rhs
        return value

    def scalar_factor(self) -> complex:
        tok = self.peek()
        if tok.text == "-":
            self.next()
            return -self.scalar_factor()
        if tok.kind == "num":
            self.next()
            return complex(float(tok.text))
        if tok.text == "sqrt":
            self.next()
            self.expect("(")
            inner = self.scalar_expr()
            self.expect(")")
            if inner.imag != 0 or inner.real < 0:
                raise self.error("sqrt of a negative or complex scalar")
            return complex(math.sqrt(inner.real))
        if tok.text == "i":
            self.next()
            return 1j
        if tok.text == "(":
            self.next()
            inner = self.scalar_expr()
            self.expect(")")
            return inner
        raise self.error("expected a scalar")

    # -- types --------------------------------------------------------------

    def type(self) -> Type:
        left = self.prod_type()
        if self.at("=>"):
            tok = self.peek()
            self.next()
            result = self.type()
            if not isinstance(left, TQ):
                raise NonQubitParam("arrow parameter must be a qubit type", tok.line, tok.col)
            return TArrow(left.q, result)
        return left

    def qtype(self) -> QType:
        tok = self.peek()
        ty = self.type()
        if not isinstance(ty, TQ):
            raise NonQubitParam("expected a qubit type", tok.line, tok.col)
        return ty.q

    def prod_type(self) -> Type:
        factors = [self.atom_type()]
        while self.at("*"):
            tok = self.peek()
            self.next()
            factors.append(self.atom_type())
        if len(factors) == 1:
            return factors[0]
        qs: list[QType] = []
        for f in factors:
            if not isinstance(f, TQ):
                raise NonQubitParam("product components must be qubit types", tok.line, tok.col)
            qs.append(f.q)
        out = qs[-1]
        for q in reversed(qs[:-1]):
            out = QProd(q, out)
        return TQ(out)

    def atom_type(self) -> Type:
        tok = self.peek()
        if tok.text == "B":
            self.next()
            if self.at("^"):
                self.next()
                ntok = self.peek()
                if ntok.kind != "num" or "." in ntok.text or int(ntok.text) < 1:
                    raise self.error("expected a positive arity after B^")
                self.next()
                n = int(ntok.text)
                q: QType = QB()
                for _ in range(n - 1):
                    q = QProd(QB(), q)
                return TQ(q)
            return TQ(QB())
        if tok.text == "S":
            self.next()
            self.expect("(")
            inner = self.type()
            self.expect(")")
            return t_s(inner)
        if tok.text == "(":
            self.next()
            inner = self.type()
            self.expect(")")
            return inner
        raise self.error("expected a type")

    # -- programs -----------------------------------------------------------

    def program(self) -> tuple[list[tuple[str, Term]], Term | None]:
        defs: list[tuple[str, Term]] = []
        main: Term | None = None
        while self.peek().kind != "eof":
            if self.at("def"):
                self.next()
                name = self.ident()
                self.expect("=")
                body = self.term()
                self.expect(";")
                defs.append((name, body))
            elif self.at("main"):
                self.next()
                self.expect("=")
                main = self.term()
                self.expect(";")
            else:
                raise self.error("expected 'def' or 'main'")
        return defs, main


def parse_term(text: str, defs: dict[str, Term] | None = None) -> Term:
    """Parse a closed term; definitions expand as macros."""
    p = _Parser(text)
    t = p.term()
    tok = p.peek()
    if tok.kind != "eof":
        raise ParseError(f"trailing input {tok.text!r}", tok.line, tok.col)
    t = _expand(t, defs or {})
    unbound = free_vars(t)
    if unbound:
        raise UnknownIdentifier(f"unbound identifiers: {', '.join(sorted(unbound))}", 0, 0)
    return canonicalize(t)


def parse_type(text: str) -> Type:
    p = _Parser(text)
    ty = p.type()
    tok = p.peek()
    if tok.kind != "eof":
        raise ParseError(f"trailing input {tok.text!r}", tok.line, tok.col)
    return canonical_type(ty)


def _expand(t: Term, defs: dict[str, Term]) -> Term:
    match t:
        case Var(name) if name in defs:
            return defs[name]
        case Lam(name, annot, body):
            scoped = {k: v for k, v in defs.items() if k != name}
            return Lam(name, annot, _expand(body, scoped))
        case _:
            from .syntax import children, replace_child

            out = t
            for i, c in enumerate(children(t)):
                out = replace_child(out, i, _expand(c, defs))
            return out


@dataclass(frozen=True)
class SourceProgram:
    defs: tuple[tuple[str, Term], ...]
    main: Term | None


def parse_program(text: str) -> SourceProgram:
    """Parse a .lams source: `def name = term;` entries plus optional main.

    Later definitions may reference earlier ones; every definition must be
    closed after expansion.
    """
    p = _Parser(text)
    raw_defs, raw_main = p.program()
    env: dict[str, Term] = {}
    out: list[tuple[str, Term]] = []
    for name, body in raw_defs:
        if name in env:
            raise UnknownIdentifier(f"duplicate definition {name}", 0, 0)
        body = _expand(body, env)
        unbound = free_vars(body)
        if unbound:
            raise UnknownIdentifier(
                f"def {name}: unbound identifiers: {', '.join(sorted(unbound))}", 0, 0
            )
        body = canonicalize(body)
        env[name] = body
        out.append((name, body))
    main = None
    if raw_main is not None:
        main = _expand(raw_main, env)
        unbound = free_vars(main)
        if unbound:
            raise UnknownIdentifier(
                f"main: unbound identifiers: {', '.join(sorted(unbound))}", 0, 0
            )
        main = canonicalize(main)
    return SourceProgram(tuple(out), main)
