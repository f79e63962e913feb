"""Terms, games and formulas of constructive differential game logic.

The module holds the immutable ASTs, a recursive-descent parser for the
concrete syntax, a pretty-printer whose output reparses to the same tree,
and the desugaring of derived connectives into the core constructors.

Concrete syntax at a glance::

    terms     1  3/4  0.25  x  x'  f+g  f-g  f*g  f / g  -f  f^2
              min(f,g)  max(f,g)  sqrt(f)  (f)'  (f,g)
    games     ?phi  x := f  x := *  {x'=f, y'=g & psi}
              a ++ b   a && b   a; b   a*   a^d   a^x   {a}
    formulas  f <= g  f < g  f = g  f != g  f > g  f >= g
              <a>phi  [a]phi  true  false  !phi  phi & psi  phi | psi
              phi -> psi  phi <-> psi  \\forall x phi  \\exists x phi

``++`` is Angelic choice and ``&&`` is Demonic choice; ``^x`` is Demonic
repetition.  The unicode forms (``∪ ∩ × ≤ ≥ ≠ ∧ ∨ → ↔ ¬ ∀ ∃ ⟨ ⟩``) are
accepted as well.  A fraction literal is written without spaces (``1/3``);
``1 / 3`` is a division term.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Union


# ---------------------------------------------------------------- terms

@dataclass(frozen=True)
class RealLit:
    value: Fraction

    def __post_init__(self):
        if not isinstance(self.value, Fraction):
            object.__setattr__(self, "value", Fraction(self.value))


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class PrimedVar:
    name: str


@dataclass(frozen=True)
class Plus:
    left: "Term"
    right: "Term"


@dataclass(frozen=True)
class Times:
    left: "Term"
    right: "Term"


@dataclass(frozen=True)
class Div:
    # the divisor is assumed nonzero; proofs carry that obligation
    left: "Term"
    right: "Term"


@dataclass(frozen=True)
class Min:
    left: "Term"
    right: "Term"


@dataclass(frozen=True)
class Max:
    left: "Term"
    right: "Term"


@dataclass(frozen=True)
class Neg:
    arg: "Term"


@dataclass(frozen=True)
class Differential:
    arg: "Term"


@dataclass(frozen=True)
class Tuple:
    items: tuple

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))


@dataclass(frozen=True)
class Sqrt:
    arg: "Term"


Term = Union[RealLit, Var, PrimedVar, Plus, Times, Div, Min, Max, Neg,
             Differential, Tuple, Sqrt]
TERM_TYPES = (RealLit, Var, PrimedVar, Plus, Times, Div, Min, Max, Neg,
              Differential, Tuple, Sqrt)


# ---------------------------------------------------------------- games

@dataclass(frozen=True)
class Test:
    cond: "Formula"


@dataclass(frozen=True)
class Assign:
    var: str          # may be primed, e.g. "x'"
    term: Term


@dataclass(frozen=True)
class AssignAny:
    var: str


@dataclass(frozen=True)
class ODE:
    eqs: tuple        # ((var, rhs), ...)
    domain: "Formula"

    def __post_init__(self):
        object.__setattr__(self, "eqs", tuple((v, t) for v, t in self.eqs))
        names = [v for v, _ in self.eqs]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate ODE variable in {names}")
        if not names:
            raise ValueError("ODE needs at least one equation")

    @property
    def vars(self) -> tuple:
        return tuple(v for v, _ in self.eqs)


@dataclass(frozen=True)
class Choice:
    left: "Game"
    right: "Game"


@dataclass(frozen=True)
class Seq:
    left: "Game"
    right: "Game"


@dataclass(frozen=True)
class Repeat:
    body: "Game"


@dataclass(frozen=True)
class Dual:
    body: "Game"


# sugar
@dataclass(frozen=True)
class DChoice:
    left: "Game"
    right: "Game"


@dataclass(frozen=True)
class DRepeat:
    body: "Game"


Game = Union[Test, Assign, AssignAny, ODE, Choice, Seq, Repeat, Dual,
             DChoice, DRepeat]
GAME_TYPES = (Test, Assign, AssignAny, ODE, Choice, Seq, Repeat, Dual,
              DChoice, DRepeat)


# ------------------------------------------------------------- formulas

RELATIONS = ("<=", "<", "=", "!=", ">", ">=")


@dataclass(frozen=True)
class Cmp:
    left: Term
    rel: str
    right: Term

    def __post_init__(self):
        if self.rel not in RELATIONS:
            raise ValueError(f"unknown relation {self.rel!r}")


@dataclass(frozen=True)
class Diamond:
    game: Game
    post: "Formula"


@dataclass(frozen=True)
class Box:
    game: Game
    post: "Formula"


# sugar
@dataclass(frozen=True)
class Verum:
    pass


@dataclass(frozen=True)
class Falsum:
    pass


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Implies:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Iff:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Not:
    arg: "Formula"


@dataclass(frozen=True)
class Forall:
    var: str
    body: "Formula"


@dataclass(frozen=True)
class Exists:
    var: str
    body: "Formula"


Formula = Union[Cmp, Diamond, Box, Verum, Falsum, And, Or, Implies, Iff,
                Not, Forall, Exists]
FORMULA_TYPES = (Cmp, Diamond, Box, Verum, Falsum, And, Or, Implies, Iff,
                 Not, Forall, Exists)
SUGAR_TYPES = (Verum, Falsum, And, Or, Implies, Iff, Not, Forall, Exists,
               DChoice, DRepeat)

TT = Cmp(RealLit(Fraction(1)), ">", RealLit(Fraction(0)))
FF = Cmp(RealLit(Fraction(0)), ">", RealLit(Fraction(1)))


def lit(q) -> RealLit:
    return RealLit(Fraction(q))


def is_primed(name: str) -> bool:
    return name.endswith("'")


def prime(name: str) -> str:
    return name + "'"


def unprime(name: str) -> str:
    return name[:-1] if name.endswith("'") else name


# ------------------------------------------------------------- desugar

def desugar(e):
    """Rewrite derived connectives into the core constructors."""
    if isinstance(e, TERM_TYPES):
        return e
    match e:
        case Verum():
            return TT
        case Falsum():
            return FF
        case Cmp():
            return e
        case Diamond(g, p):
            return Diamond(desugar(g), desugar(p))
        case Box(g, p):
            return Box(desugar(g), desugar(p))
        case And(a, b):
            return Diamond(Test(desugar(a)), desugar(b))
        case Or(a, b):
            return Diamond(Choice(Test(desugar(a)), Test(desugar(b))), TT)
        case Implies(a, b):
            return Box(Test(desugar(a)), desugar(b))
        case Not(a):
            return Box(Test(desugar(a)), FF)
        case Iff(a, b):
            return desugar(And(Implies(a, b), Implies(b, a)))
        case Forall(x, b):
            return Box(AssignAny(x), desugar(b))
        case Exists(x, b):
            return Diamond(AssignAny(x), desugar(b))
        case Test(c):
            return Test(desugar(c))
        case Assign() | AssignAny():
            return e
        case ODE(eqs, dom):
            return ODE(eqs, desugar(dom))
        case Choice(a, b):
            return Choice(desugar(a), desugar(b))
        case Seq(a, b):
            return Seq(desugar(a), desugar(b))
        case Repeat(a):
            return Repeat(desugar(a))
        case Dual(a):
            return Dual(desugar(a))
        case DChoice(a, b):
            return Dual(Choice(Dual(desugar(a)), Dual(desugar(b))))
        case DRepeat(a):
            return Dual(Repeat(Dual(desugar(a))))
    raise TypeError(f"not an expression: {e!r}")


def contains_sugar(e) -> bool:
    return any(isinstance(n, SUGAR_TYPES) for n in walk(e))


def walk(e):
    """Yield every node of an expression, parents first."""
    stack = [e]
    while stack:
        n = stack.pop()
        yield n
        stack.extend(reversed(children(n)))


def children(n) -> list:
    match n:
        case RealLit() | Var() | PrimedVar() | AssignAny() | Verum() | Falsum():
            return []
        case Neg(a) | Sqrt(a) | Differential(a):
            return [a]
        case Tuple(items):
            return list(items)
        case Plus(a, b) | Times(a, b) | Div(a, b) | Min(a, b) | Max(a, b):
            return [a, b]
        case Test(c):
            return [c]
        case Assign(_, t):
            return [t]
        case ODE(eqs, dom):
            return [t for _, t in eqs] + [dom]
        case Choice(a, b) | Seq(a, b) | DChoice(a, b):
            return [a, b]
        case Repeat(a) | Dual(a) | DRepeat(a):
            return [a]
        case Cmp(a, _, b):
            return [a, b]
        case Diamond(g, p) | Box(g, p):
            return [g, p]
        case And(a, b) | Or(a, b) | Implies(a, b) | Iff(a, b):
            return [a, b]
        case Not(a):
            return [a]
        case Forall(_, b) | Exists(_, b):
            return [b]
    raise TypeError(f"not an expression: {n!r}")


def resugar(f):
    """Best-effort inverse of desugar, for human-facing output only."""
    match f:
        case Cmp():
            if f == TT:
                return Verum()
            if f == FF:
                return Falsum()
            return f
        case Diamond(Test(a), b):
            return And(resugar(a), resugar(b))
        case Diamond(Choice(Test(a), Test(b)), post) if post == TT:
            return Or(resugar(a), resugar(b))
        case Box(Test(a), post) if post == FF:
            return Not(resugar(a))
        case Box(Test(a), b):
            return Implies(resugar(a), resugar(b))
        case Box(AssignAny(x), b):
            return Forall(x, resugar(b))
        case Diamond(AssignAny(x), b):
            return Exists(x, resugar(b))
        case Diamond(g, p):
            return Diamond(_resugar_game(g), resugar(p))
        case Box(g, p):
            return Box(_resugar_game(g), resugar(p))
    if isinstance(f, GAME_TYPES):
        return _resugar_game(f)
    return f


def _resugar_game(g):
    match g:
        case Test(c):
            return Test(resugar(c))
        case ODE(eqs, dom):
            return ODE(eqs, resugar(dom))
        case Choice(a, b):
            return Choice(_resugar_game(a), _resugar_game(b))
        case Seq(a, b):
            return Seq(_resugar_game(a), _resugar_game(b))
        case Repeat(a):
            return Repeat(_resugar_game(a))
        case Dual(a):
            return Dual(_resugar_game(a))
    return g


# -------------------------------------------------------------- printer

def _fmt_lit(q: Fraction) -> str:
    if q.denominator == 1:
        return str(q.numerator)
    return f"{q.numerator}/{q.denominator}"


def pretty(e) -> str:
    if isinstance(e, TERM_TYPES):
        return _pt(e, 0)
    if isinstance(e, GAME_TYPES):
        return _pg(e, 0)
    if isinstance(e, FORMULA_TYPES):
        return _pf(e, 0)
    raise TypeError(f"not an expression: {e!r}")


# term levels: 0 sum, 1 product, 2 unary, 3 atom
def _pt(t, need: int) -> str:
    match t:
        case RealLit(q):
            s = _fmt_lit(q)
            # a negative literal prints like a unary minus
            return f"({s})" if q < 0 and need > 2 else s
        case Var(x):
            return x
        case PrimedVar(x):
            return x + "'"
        case Plus(a, Neg(b)):
            s = f"{_pt(a, 0)}-{_pt(b, 1)}"
            return f"({s})" if need > 0 else s
        case Plus(a, b):
            s = f"{_pt(a, 0)}+{_pt(b, 1)}"
            return f"({s})" if need > 0 else s
        case Times(a, b):
            s = f"{_pt(a, 1)}*{_pt(b, 2)}"
            return f"({s})" if need > 1 else s
        case Div(a, b):
            s = f"{_pt(a, 1)} / {_pt(b, 2)}"
            return f"({s})" if need > 1 else s
        case Neg(RealLit(_) as a):
            s = f"-({_pt(a, 0)})"
            return f"({s})" if need > 2 else s
        case Neg(a):
            s = "-" + _pt(a, 2)
            return f"({s})" if need > 2 else s
        case Min(a, b):
            return f"min({_pt(a, 0)},{_pt(b, 0)})"
        case Max(a, b):
            return f"max({_pt(a, 0)},{_pt(b, 0)})"
        case Sqrt(a):
            return f"sqrt({_pt(a, 0)})"
        case Differential(a):
            return f"({_pt(a, 0)})'"
        case Tuple(items):
            if len(items) == 1:
                return f"({_pt(items[0], 0)},)"
            return "(" + ",".join(_pt(i, 0) for i in items) + ")"
    raise TypeError(f"not a term: {t!r}")


# game levels: 0 choice, 1 seq, 2 postfix, 3 primary
def _pg(g, need: int) -> str:
    match g:
        case Test(c):
            s = "?" + _pf(c, 0)
            return "{" + s + "}" if need > 2 else s
        case Assign(x, t):
            s = f"{x} := {_pt(t, 0)}"
            return "{" + s + "}" if need > 2 else s
        case AssignAny(x):
            s = f"{x} := *"
            return "{" + s + "}" if need > 2 else s
        case ODE(eqs, dom):
            body = ", ".join(f"{x}'={_pt(t, 0)}" for x, t in eqs)
            if not isinstance(dom, Verum):
                body += " & " + _pf(dom, 0)
            return "{" + body + "}"
        case Choice(a, b):
            s = f"{_pg(a, 0)} ++ {_pg(b, 1)}"
            return "{" + s + "}" if need > 0 else s
        case DChoice(a, b):
            s = f"{_pg(a, 0)} && {_pg(b, 1)}"
            return "{" + s + "}" if need > 0 else s
        case Seq(a, b):
            s = f"{_pg(a, 1)}; {_pg(b, 2)}"
            return "{" + s + "}" if need > 1 else s
        case Repeat(a):
            return _pg(a, 3) + "*"
        case Dual(a):
            return _pg(a, 3) + "^d"
        case DRepeat(a):
            return _pg(a, 3) + "^x"
    raise TypeError(f"not a game: {g!r}")


# formula levels: 0 iff, 1 implies, 2 or, 3 and, 4 unary
def _pf(f, need: int) -> str:
    match f:
        case Cmp(a, r, b):
            return f"{_pt(a, 0)}{r}{_pt(b, 0)}"
        case Verum():
            return "true"
        case Falsum():
            return "false"
        case Diamond(g, p):
            return f"<{_pg(g, 0)}>{_pf(p, 4)}"
        case Box(g, p):
            return f"[{_pg(g, 0)}]{_pf(p, 4)}"
        case Not(a):
            return "!" + _pf(a, 4)
        case Forall(x, b):
            return f"\\forall {x} {_pf(b, 4)}"
        case Exists(x, b):
            return f"\\exists {x} {_pf(b, 4)}"
        case And(a, b):
            s = f"{_pf(a, 3)} & {_pf(b, 4)}"
            return f"({s})" if need > 3 else s
        case Or(a, b):
            s = f"{_pf(a, 2)} | {_pf(b, 3)}"
            return f"({s})" if need > 2 else s
        case Implies(a, b):
            s = f"{_pf(a, 2)} -> {_pf(b, 1)}"
            return f"({s})" if need > 1 else s
        case Iff(a, b):
            s = f"{_pf(a, 0)} <-> {_pf(b, 1)}"
            return f"({s})" if need > 0 else s
    raise TypeError(f"not a formula: {f!r}")


# --------------------------------------------------------------- lexer

class ParseError(Exception):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {msg}")
        self.msg, self.line, self.col = msg, line, col


_UNICODE = {
    "≤": "<=", "≥": ">=", "≠": "!=", "∧": "&", "∨": "|", "→": "->",
    "↔": "<->", "¬": "!", "∀": "\\forall", "∃": "\\exists", "⟨": "<",
    "⟩": ">", "∪": "++", "∩": "&&", "×": "^x", "·": "*",
}
_OPS = ["<->", "->", "<=", ">=", "!=", ":=", "++", "&&", "\\forall",
        "\\exists", "<", ">", "=", "&", "|", "!", "(", ")", "{", "}", "[",
        "]", ",", ";", "?", "*", "+", "-", "/", "^", "'"]
_INT = re.compile(r"\d+")
_NUM = re.compile(r"\d+(?:\.\d+)?(?:/\d+)?")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
KEYWORDS = {"const", "term", "game", "formula", "true", "false", "min",
            "max", "sqrt", "forall", "exists"}


@dataclass(frozen=True)
class Tok:
    kind: str       # num ident op eof
    text: str
    line: int
    col: int


def tokenize(text: str) -> list:
    toks = []
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            i, line, col = i + 1, line + 1, 1
            continue
        if c.isspace():
            i, col = i + 1, col + 1
            continue
        if text.startswith("//", i):
            while i < n and text[i] != "\n":
                i += 1
            continue
        if c in _UNICODE:
            toks.append(Tok("op", _UNICODE[c], line, col))
            i, col = i + 1, col + 1
            continue
        after_pow = bool(toks) and toks[-1].text == "^"
        m = (_INT if after_pow else _NUM).match(text, i)
        if m:
            toks.append(Tok("num", m.group(), line, col))
            i, col = m.end(), col + len(m.group())
            continue
        m = _IDENT.match(text, i)
        if m:
            toks.append(Tok("ident", m.group(), line, col))
            i, col = m.end(), col + len(m.group())
            continue
        for op in _OPS:
            if text.startswith(op, i):
                toks.append(Tok("op", op, line, col))
                i, col = i + len(op), col + len(op)
                break
        else:
            raise ParseError(f"unexpected character {c!r}", line, col)
    toks.append(Tok("eof", "", line, col))
    return toks


def parse_number(text: str) -> Fraction:
    return Fraction(text)


# -------------------------------------------------------------- parser

class _Backtrack(Exception):
    pass


class Parser:
    """Recursive-descent parser over a token list.

    ``env`` maps declared names to ``(category, value)`` where category is
    one of ``const``, ``term``, ``game``, ``formula``.  Declared terms and
    valued constants are expanded in place.
    """

    def __init__(self, text: str, env: dict | None = None):
        self.toks = tokenize(text)
        self.i = 0
        self.env = env if env is not None else {}

    # token helpers
    @property
    def tok(self) -> Tok:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, text: str) -> bool:
        t = self.tok
        return t.kind in ("op", "ident") and t.text == text

    def eat(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Tok:
        if not self.at(text):
            self.fail(f"expected {text!r}")
        t = self.tok
        self.i += 1
        return t

    def fail(self, msg: str | None = None):
        t = self.tok
        found = "end of input" if t.kind == "eof" else repr(t.text)
        raise ParseError(msg + f", found {found}" if msg else
                         f"unexpected {found}", t.line, t.col)

    def ident(self) -> str:
        t = self.tok
        if t.kind != "ident" or t.text in KEYWORDS:
            self.fail("expected identifier")
        self.i += 1
        return t.text

    def end(self):
        if self.tok.kind != "eof":
            self.fail("trailing input")

    def _lookup(self, name: str, want: str):
        entry = self.env.get(name)
        if entry is None:
            return None
        cat, val = entry
        if cat == "const":
            cat = "term"
        if cat != want:
            t = self.toks[self.i - 1]
            raise ParseError(f"{name!r} is a {entry[0]}, not a {want}",
                             t.line, t.col)
        return val

    # ---- terms
    def term(self):
        t = self.product()
        while True:
            if self.at("+"):
                self.i += 1
                t = Plus(t, self.product())
            elif self.at("-") and self._starts_factor(1):
                self.i += 1
                t = Plus(t, Neg(self.product()))
            else:
                return t

    def product(self):
        t = self.unary()
        while True:
            if self.at("*") and self._starts_factor(1):
                self.i += 1
                t = Times(t, self.unary())
            elif self.at("/"):
                self.i += 1
                t = Div(t, self.unary())
            else:
                return t

    def _starts_factor(self, k: int) -> bool:
        t = self.peek(k)
        if t.kind == "num":
            return True
        if t.kind == "ident":
            return t.text not in KEYWORDS or t.text in ("min", "max", "sqrt")
        return t.text in ("(", "-")

    def unary(self):
        if self.at("-"):
            self.i += 1
            if self.tok.kind == "num" and not self.peek().text == "^":
                q = parse_number(self.tok.text)
                self.i += 1
                return RealLit(-q)
            return Neg(self.unary())
        return self.power()

    def power(self):
        t = self.atom()
        while self.at("^") and self.peek().kind == "num":
            self.i += 1
            n = self.tok.text
            if not n.isdigit() or int(n) < 1:
                self.fail("exponent must be a positive integer")
            self.i += 1
            base = t
            for _ in range(int(n) - 1):
                t = Times(t, base)
        return t

    def atom(self):
        t = self.tok
        if t.kind == "num":
            self.i += 1
            return RealLit(parse_number(t.text))
        if t.kind == "ident" and t.text in ("min", "max"):
            self.i += 1
            self.expect("(")
            a = self.term()
            self.expect(",")
            b = self.term()
            self.expect(")")
            return Min(a, b) if t.text == "min" else Max(a, b)
        if t.kind == "ident" and t.text == "sqrt":
            self.i += 1
            self.expect("(")
            a = self.term()
            self.expect(")")
            return Sqrt(a)
        if t.kind == "ident" and t.text not in KEYWORDS:
            self.i += 1
            if self.at("'"):
                self.i += 1
                return PrimedVar(t.text)
            val = self._lookup(t.text, "term")
            return val if val is not None else Var(t.text)
        if self.at("("):
            self.i += 1
            first = self.term()
            if self.at(","):
                items = [first]
                while self.eat(","):
                    if self.at(")"):
                        break
                    items.append(self.term())
                self.expect(")")
                return Tuple(tuple(items))
            self.expect(")")
            if self.at("'"):
                self.i += 1
                return Differential(first)
            return first
        self.fail("expected a term")

    # ---- games
    def game(self):
        g = self.seq()
        while True:
            if self.eat("++"):
                g = Choice(g, self.seq())
            elif self.eat("&&"):
                g = DChoice(g, self.seq())
            else:
                return g

    def seq(self):
        g = self.postfix()
        while self.eat(";"):
            g = Seq(g, self.postfix())
        return g

    def postfix(self):
        g = self.gprimary()
        while True:
            if self.at("*"):
                self.i += 1
                g = Repeat(g)
            elif self.at("^") and self.peek().text in ("d", "x"):
                self.i += 1
                g = Dual(g) if self.tok.text == "d" else DRepeat(g)
                self.i += 1
            else:
                return g

    def gprimary(self):
        if self.eat("?"):
            return Test(self.formula())
        if self.at("{"):
            if (self.peek().kind == "ident" and self.peek(2).text == "'"
                    and self.peek(3).text == "="):
                return self.ode()
            self.i += 1
            g = self.game()
            self.expect("}")
            return g
        if self.tok.kind == "ident" and self.tok.text not in KEYWORDS:
            name = self.ident()
            if self.at("'") and self.peek().text == ":=":
                self.i += 2
                return Assign(name + "'", self.term())
            if self.eat(":="):
                if self.at("*") and not self._starts_factor(1):
                    self.i += 1
                    return AssignAny(name)
                return Assign(name, self.term())
            val = self._lookup(name, "game")
            if val is None:
                self.i -= 1
                self.fail(f"unknown game {name!r}")
            return val
        self.fail("expected a game")

    def ode(self):
        self.expect("{")
        eqs = []
        while True:
            x = self.ident()
            self.expect("'")
            self.expect("=")
            eqs.append((x, self.term()))
            if not self.eat(","):
                break
        dom = self.formula() if self.eat("&") else Verum()
        self.expect("}")
        try:
            return ODE(tuple(eqs), dom)
        except ValueError as err:
            t = self.toks[self.i - 1]
            raise ParseError(str(err), t.line, t.col) from None

    # ---- formulas
    def formula(self):
        f = self.implication()
        while self.eat("<->"):
            f = Iff(f, self.implication())
        return f

    def implication(self):
        f = self.disjunction()
        if self.eat("->"):
            return Implies(f, self.implication())
        return f

    def disjunction(self):
        f = self.conjunction()
        while self.eat("|"):
            f = Or(f, self.conjunction())
        return f

    def conjunction(self):
        f = self.funary()
        while self.eat("&"):
            f = And(f, self.funary())
        return f

    def funary(self):
        if self.eat("!"):
            return Not(self.funary())
        if self.at("\\forall") or self.at("forall"):
            self.i += 1
            x = self.ident()
            return Forall(x, self.funary())
        if self.at("\\exists") or self.at("exists"):
            self.i += 1
            x = self.ident()
            return Exists(x, self.funary())
        if self.eat("<"):
            g = self.game()
            self.expect(">")
            return Diamond(g, self.funary())
        if self.eat("["):
            g = self.game()
            self.expect("]")
            return Box(g, self.funary())
        return self.fatom()

    def fatom(self):
        if self.eat("true"):
            return Verum()
        if self.eat("false"):
            return Falsum()
        if self.at("("):
            save = self.i
            try:
                self.i += 1
                f = self.formula()
                self.expect(")")
                return f
            except ParseError:
                self.i = save
        t = self.tok
        if (t.kind == "ident" and t.text not in KEYWORDS
                and self.env.get(t.text, ("",))[0] == "formula"):
            self.i += 1
            return self.env[t.text][1]
        if (t.kind == "ident" and self.env.get(t.text, ("",))[0] == "game"):
            self.fail(f"{t.text!r} is a game, not a formula")
        left = self.term()
        r = self.tok.text if self.tok.kind == "op" else ""
        if r not in RELATIONS:
            self.fail("expected a comparison operator")
        self.i += 1
        return Cmp(left, r, self.term())


def parse(text: str, category: str = "formula", env: dict | None = None):
    """Parse ``text`` as a term, game or formula."""
    p = Parser(text, env)
    if category == "term":
        e = p.term()
    elif category == "game":
        e = p.game()
    elif category == "formula":
        e = p.formula()
    else:
        raise ValueError(f"unknown category {category!r}")
    p.end()
    return e


# ---------------------------------------------------------- .cdgl files

@dataclass
class Module:
    """Named declarations from a ``.cdgl`` file, in source order."""
    consts: dict
    terms: dict
    games: dict
    formulas: dict
    env: dict

    def lookup(self, name: str):
        if name not in self.env:
            raise KeyError(f"no declaration named {name!r}")
        return self.env[name]


def parse_module(text: str, base_env: dict | None = None) -> Module:
    p = Parser(text, dict(base_env or {}))
    mod = Module({}, {}, {}, {}, p.env)
    decl_kw = ("const", "term", "game", "formula")
    while p.tok.kind != "eof":
        kw = p.tok.text
        if kw not in decl_kw or p.tok.kind != "ident":
            p.fail("expected a declaration (const, term, game, formula)")
        p.i += 1
        name = p.ident()
        if name in p.env:
            p.i -= 1
            p.fail(f"{name!r} is already declared")
        if kw == "const":
            val = None
            if p.eat("="):
                val = p.term()
                mod.consts[name] = val
                p.env[name] = ("const", val)
            else:
                mod.consts[name] = None
            continue
        p.expect("=")
        if kw == "term":
            val = p.term()
            mod.terms[name] = val
        elif kw == "game":
            val = p.game()
            mod.games[name] = val
        else:
            val = p.formula()
            mod.formulas[name] = val
        p.env[name] = (kw, val)
        if p.tok.kind != "eof" and p.tok.text not in decl_kw:
            p.fail("expected end of declaration")
    return mod


def format_module(mod: Module) -> str:
    lines = []
    for name, val in mod.consts.items():
        lines.append(f"const {name}" + ("" if val is None else f" = {pretty(val)}"))
    for kind, table in (("term", mod.terms), ("game", mod.games),
                        ("formula", mod.formulas)):
        for name, val in table.items():
            lines.append(f"{kind} {name} = {pretty(val)}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------- core-form constructors
#
# These build the desugared shapes directly, for use by the checker.

def c_and(a, b):
    return Diamond(Test(a), b)


def c_or(a, b):
    return Diamond(Choice(Test(a), Test(b)), TT)


def c_implies(a, b):
    return Box(Test(a), b)


def c_not(a):
    return Box(Test(a), FF)


def c_forall(x: str, a):
    return Box(AssignAny(x), a)


def c_exists(x: str, a):
    return Diamond(AssignAny(x), a)


def c_all(fs):
    fs = list(fs)
    if not fs:
        return TT
    out = fs[-1]
    for f in reversed(fs[:-1]):
        out = c_and(f, out)
    return out


def c_any(fs):
    fs = list(fs)
    if not fs:
        return FF
    out = fs[-1]
    for f in reversed(fs[:-1]):
        out = c_or(f, out)
    return out


def match_and(f):
    if isinstance(f, Diamond) and isinstance(f.game, Test):
        return f.game.cond, f.post
    return None


def match_or(f):
    if (isinstance(f, Diamond) and f.post == TT and isinstance(f.game, Choice)
            and isinstance(f.game.left, Test) and isinstance(f.game.right, Test)):
        return f.game.left.cond, f.game.right.cond
    return None


def conjuncts(f) -> list:
    m = match_and(f)
    if m is None:
        return [f]
    return conjuncts(m[0]) + conjuncts(m[1])
