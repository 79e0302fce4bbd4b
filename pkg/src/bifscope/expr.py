"""Rational expressions in ``z`` and the parameter ``lambda``.

Grammar (precedence high to low)::

    atom    := number | 'z' | 'lambda' | 'c' | '(' expr ')'
    power   := atom ('^' unary)?          right-associative
    unary   := '-' unary | power
    term    := unary (('*' | '/') unary)*
    expr    := term (('+' | '-') term)*

Numbers are decimal literals with an optional exponent and an optional
``i`` suffix (``2``, ``1.5e-3``, ``2i``).  Exponents must fold to a
nonnegative integer constant.  There is no implicit multiplication.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import (
    EvaluationPole,
    ExprSyntaxError,
    NonIntegerExponent,
    NotRationalInZ,
    UnknownIdentifier,
)

MAX_EXPONENT = 4096


class Expr:
    __slots__ = ()


@dataclass(frozen=True)
class Const(Expr):
    value: complex


@dataclass(frozen=True)
class Var(Expr):
    name: str  # "z" or "lambda"


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exp: int

    def __post_init__(self):
        if not isinstance(self.exp, int) or self.exp < 0:
            raise ValueError("Pow exponent must be a nonnegative int")


Z = Var("z")
LAMBDA = Var("lambda")

_IDENTIFIERS = {"z": Z, "lambda": LAMBDA, "c": LAMBDA}

# ---------------------------------------------------------------------------
# tokenizer

_NUMBER = re.compile(r"(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?(i)?")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")


@dataclass(frozen=True)
class Token:
    kind: str  # "num", "ident", "op", "end"
    text: str
    pos: int
    value: complex = 0j


def tokenize(source: str) -> list[Token]:
    tokens = []
    i = 0
    n = len(source)
    while i < n:
        ch = source[i]
        if ch.isspace():
            i += 1
            continue
        if ch in "+-*/^()":
            tokens.append(Token("op", ch, i))
            i += 1
            continue
        m = _NUMBER.match(source, i)
        if m and (ch.isdigit() or ch == "."):
            mag = float(m.group(1) + (m.group(2) or ""))
            if not math.isfinite(mag):
                raise ExprSyntaxError("numeric literal out of range", i)
            value = complex(0.0, mag) if m.group(3) else complex(mag, 0.0)
            end = m.end()
            if end < n and (source[end].isalnum() or source[end] == "_"):
                raise ExprSyntaxError("malformed numeric literal", end, "operator")
            tokens.append(Token("num", m.group(0), i, value))
            i = end
            continue
        m = _IDENT.match(source, i)
        if m:
            tokens.append(Token("ident", m.group(0), i))
            i = m.end()
            continue
        raise ExprSyntaxError(f"unexpected character {ch!r}", i)
    tokens.append(Token("end", "", n))
    return tokens


# ---------------------------------------------------------------------------
# Pratt parser

_INFIX = {"+": (10, Add), "-": (10, Sub), "*": (20, Mul), "/": (20, Div)}
_UNARY_BP = 30
_POW_BP = 40


class _Parser:
    def __init__(self, source):
        self.tokens = tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def parse(self):
        e = self.expr(0)
        tok = self.peek()
        if tok.kind != "end":
            raise ExprSyntaxError(f"unexpected {tok.text!r}", tok.pos, "operator or end of input")
        return e

    def expr(self, min_bp):
        left = self.nud(self.next())
        while True:
            tok = self.peek()
            if tok.kind != "op" or tok.text in "()":
                if tok.kind in ("num", "ident"):
                    raise ExprSyntaxError("missing operator", tok.pos, "operator")
                return left
            if tok.text == "^":
                if _POW_BP < min_bp:
                    return left
                self.next()
                start = self.peek().pos
                exp_ast = self.expr(_UNARY_BP)
                left = Pow(left, _fold_exponent(exp_ast, start))
                continue
            bp, node = _INFIX[tok.text]
            if bp < min_bp:
                return left
            self.next()
            right = self.expr(bp + 1)
            left = node(left, right)

    def nud(self, tok):
        if tok.kind == "num":
            return Const(tok.value)
        if tok.kind == "ident":
            try:
                return _IDENTIFIERS[tok.text]
            except KeyError:
                raise UnknownIdentifier(f"unknown identifier {tok.text!r}", tok.pos,
                                        "z, lambda or c") from None
        if tok.kind == "op" and tok.text == "-":
            return Neg(self.expr(_UNARY_BP))
        if tok.kind == "op" and tok.text == "(":
            inner = self.expr(0)
            close = self.next()
            if close.kind != "op" or close.text != ")":
                raise ExprSyntaxError("unbalanced parenthesis", close.pos, "')'")
            return inner
        what = "end of input" if tok.kind == "end" else repr(tok.text)
        raise ExprSyntaxError(f"unexpected {what}", tok.pos, "expression")


def _fold_exponent(e, pos):
    if _has_var(e):
        raise NonIntegerExponent("exponent must be a constant", pos, "nonnegative integer")
    try:
        v = evaluate(e, 0j, 0j)
    except EvaluationPole:
        raise NonIntegerExponent("exponent is not finite", pos, "nonnegative integer") from None
    if not (math.isfinite(v.real) and v.imag == 0 and v.real == int(v.real) and v.real >= 0):
        raise NonIntegerExponent("exponent must be a nonnegative integer", pos,
                                 "nonnegative integer")
    k = int(v.real)
    if k > MAX_EXPONENT:
        raise NonIntegerExponent(f"exponent larger than {MAX_EXPONENT}", pos)
    return k


def _has_var(e):
    if isinstance(e, Var):
        return True
    if isinstance(e, Const):
        return False
    if isinstance(e, Neg):
        return _has_var(e.arg)
    if isinstance(e, Pow):
        return _has_var(e.base)
    return _has_var(e.left) or _has_var(e.right)


def parse(source: str) -> Expr:
    """Parse ``source`` into an AST.

    Raises ``ExprSyntaxError`` (or its subclasses ``NonIntegerExponent`` and
    ``UnknownIdentifier``) carrying the offending character offset.
    """
    if not isinstance(source, str):
        raise TypeError("expression source must be str")
    return _Parser(source).parse()


# ---------------------------------------------------------------------------
# evaluation


def _ipow(x, k):
    result = None
    base = x
    while k:
        if k & 1:
            result = base if result is None else result * base
        k >>= 1
        if k:
            base = base * base
    return 1.0 + 0j if result is None else result


def _is_zero(v):
    val = getattr(v, "value", v)
    if isinstance(val, np.ndarray):
        return bool(np.any(val == 0))
    return val == 0


def evaluate(e: Expr, z, lam):
    """Evaluate ``e`` at ``(z, lam)``.

    Works for Python complex numbers, numpy arrays and ``Jet`` objects; the
    arithmetic order follows the tree.  Division by an exact zero raises
    ``EvaluationPole``.
    """
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return z if e.name == "z" else lam
    if isinstance(e, Neg):
        return -evaluate(e.arg, z, lam)
    if isinstance(e, Pow):
        return _ipow(evaluate(e.base, z, lam), e.exp)
    a = evaluate(e.left, z, lam)
    b = evaluate(e.right, z, lam)
    if isinstance(e, Add):
        return a + b
    if isinstance(e, Sub):
        return a - b
    if isinstance(e, Mul):
        return a * b
    if _is_zero(b):
        raise EvaluationPole("division by zero")
    return a / b


eval_expr = evaluate


# ---------------------------------------------------------------------------
# printing

_PREC = {Add: 1, Sub: 1, Mul: 2, Div: 2, Neg: 3, Pow: 4}
_SYM = {Add: " + ", Sub: " - ", Mul: "*", Div: "/"}


def _prec(e):
    return _PREC.get(type(e), 5)


def _fmt_const(v: complex):
    if v.imag == 0:
        return repr(float(v.real))
    if v.real == 0 and v.imag >= 0:
        return repr(float(v.imag)) + "i"
    # not produced by the parser; printed as an explicit sum
    return f"({v.real!r} + {v.imag!r}i)" if v.imag >= 0 else f"({v.real!r} - {-v.imag!r}i)"


def to_source(e: Expr) -> str:
    """Render ``e`` with the minimal parentheses that reparse to the same tree."""
    def wrap(sub, need):
        s = to_source(sub)
        return f"({s})" if _prec(sub) < need else s

    if isinstance(e, Const):
        return _fmt_const(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return "-" + wrap(e.arg, 4)
    if isinstance(e, Pow):
        return f"{wrap(e.base, 5)}^{e.exp}"
    p = _prec(e)
    return wrap(e.left, p) + _SYM[type(e)] + wrap(e.right, p + 1)


# ---------------------------------------------------------------------------
# rational normal form


@dataclass(frozen=True)
class RationalForm:
    """``num/den`` with ``num[k, j]`` the coefficient of ``z**k * lambda**j``."""

    num: np.ndarray
    den: np.ndarray

    @property
    def deg_z(self):
        return max(self.num.shape[0], self.den.shape[0]) - 1

    def __call__(self, z, lam):
        return _bivar_eval(self.num, z, lam) / _bivar_eval(self.den, z, lam)


def _bivar_eval(c, z, lam):
    acc = 0j
    for k in range(c.shape[0] - 1, -1, -1):
        row = 0j
        for j in range(c.shape[1] - 1, -1, -1):
            row = row * lam + c[k, j]
        acc = acc * z + row
    return acc


def _to_sympy(e, zs, ls):
    import sympy as sp

    if isinstance(e, Const):
        re_ = sp.Rational(repr(float(e.value.real)))
        im_ = sp.Rational(repr(float(e.value.imag)))
        return re_ + sp.I * im_
    if isinstance(e, Var):
        return zs if e.name == "z" else ls
    raise TypeError(e)


def _rational_pair(e, zs, ls, dom):
    """Syntactic (num, den) as sympy Polys, following the tree shape."""
    import sympy as sp

    if isinstance(e, (Const, Var)):
        return sp.Poly(_to_sympy(e, zs, ls), zs, ls, domain=dom), sp.Poly(1, zs, ls, domain=dom)
    if isinstance(e, Neg):
        n, d = _rational_pair(e.arg, zs, ls, dom)
        return -n, d
    if isinstance(e, Pow):
        n, d = _rational_pair(e.base, zs, ls, dom)
        return n ** e.exp, d ** e.exp
    if not isinstance(e, (Add, Sub, Mul, Div)):
        raise NotRationalInZ(f"unsupported node {type(e).__name__}")
    a, b = _rational_pair(e.left, zs, ls, dom)
    c, d = _rational_pair(e.right, zs, ls, dom)
    if isinstance(e, Mul):
        return a * c, b * d
    if isinstance(e, Div):
        if c.is_zero:
            raise NotRationalInZ("division by the zero polynomial")
        return a * d, b * c
    if b == d:
        return (a + c if isinstance(e, Add) else a - c), b
    return (a * d + c * b if isinstance(e, Add) else a * d - c * b), b * d


def _poly_to_array(p, zs, ls):
    deg_z = max(p.degree(zs), 0)
    deg_l = max(p.degree(ls), 0)
    out = np.zeros((deg_z + 1, deg_l + 1), dtype=complex)
    for (k, j), coef in p.terms():
        out[k, j] = complex(coef)
    return out


def to_rational(e: Expr) -> RationalForm:
    """Exact normal form ``P/Q`` with the common factor removed.

    Literals are converted to exact Gaussian rationals through their
    shortest decimal representation, so the gcd is computed exactly.
    """
    import sympy as sp

    zs, ls = sp.symbols("z lam")
    num, den = _rational_pair(e, zs, ls, "QQ_I")
    if num.is_zero:
        return RationalForm(np.zeros((1, 1), complex), np.ones((1, 1), complex))
    g = sp.gcd(num, den)
    if g.total_degree() > 0:
        num = sp.quo(num, g)
        den = sp.quo(den, g)
    return RationalForm(_poly_to_array(num, zs, ls), _poly_to_array(den, zs, ls))


def depends_on(e: Expr, name: str) -> bool:
    if isinstance(e, Var):
        return e.name == name
    if isinstance(e, Const):
        return False
    if isinstance(e, Neg):
        return depends_on(e.arg, name)
    if isinstance(e, Pow):
        return depends_on(e.base, name)
    return depends_on(e.left, name) or depends_on(e.right, name)
