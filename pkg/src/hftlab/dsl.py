"""Model files: parsing, symbolic differentiation and evaluation of parametric matrices.

A model file declares one or more Hermitian matrix families of a single real
parameter ``lambda``. Only the upper triangle is written; the lower triangle is
implied by conjugation, so a parsed model cannot describe a non-Hermitian
matrix::

    # two-level system with a constant coupling
    matrix H {
        dim = 2;
        [1,1] = lambda;
        [1,2] = 0.5;
        [2,2] = -lambda;
    }

Entries are scalar expressions built from decimal numbers, the imaginary unit
``i``, ``lambda``, the operators ``+ - * / ^`` (integer exponents only) and the
functions ``sin cos exp sqrt ln``.
"""

from __future__ import annotations

import cmath
import functools
import re
from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "Expr",
    "Const",
    "Param",
    "Neg",
    "BinOp",
    "Pow",
    "Call",
    "FUNCTIONS",
    "ModelError",
    "ModelSyntaxError",
    "EvaluationError",
    "MatrixSpec",
    "ModelDefinition",
    "parse_model",
    "parse_expr",
    "differentiate",
    "evaluate",
    "evaluate_matrix",
    "evaluate_derivative",
    "evaluate_second_derivative",
]

FUNCTIONS = ("sin", "cos", "exp", "sqrt", "ln")

_DIAG_IMAG_TOL = 1e-12


class ModelError(Exception):
    """Invalid model definition or failed model evaluation."""


class ModelSyntaxError(ModelError):
    """Malformed model text. Always carries a 1-based line and column."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.message = message
        self.line = line
        self.column = column


class EvaluationError(ModelError):
    """Expression or matrix could not be evaluated at the requested lambda."""


# ---------------------------------------------------------------------------
# Expression tree


class Expr:
    """Base class of expression nodes. Nodes are immutable and hashable."""

    __slots__ = ()

    @property
    def children(self) -> tuple[Expr, ...]:
        return ()

    def __call__(self, lam: float) -> complex:
        return evaluate(self, lam)


@dataclass(frozen=True)
class Const(Expr):
    value: complex


@dataclass(frozen=True)
class Param(Expr):
    pass


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr

    @property
    def children(self):
        return (self.arg,)


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    def __post_init__(self):
        if self.op not in "+-*/" or len(self.op) != 1:
            raise ValueError(f"unknown binary operator {self.op!r}")

    @property
    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int

    def __post_init__(self):
        if not isinstance(self.exponent, int) or isinstance(self.exponent, bool):
            raise TypeError("exponent must be an integer constant")

    @property
    def children(self):
        return (self.base,)


@dataclass(frozen=True)
class Call(Expr):
    func: str
    arg: Expr

    def __post_init__(self):
        if self.func not in FUNCTIONS:
            raise ValueError(f"unknown function {self.func!r}")

    @property
    def children(self):
        return (self.arg,)


ZERO = Const(0j)
ONE = Const(1 + 0j)
LAMBDA = Param()


def evaluate(e: Expr, lam: float) -> complex:
    """Evaluate ``e`` at the real parameter value ``lam``.

    Raises:
        EvaluationError: division by zero, logarithm of zero, overflow.
    """
    try:
        return _eval(e, complex(lam))
    except (ZeroDivisionError, OverflowError, ValueError) as exc:
        raise EvaluationError(f"cannot evaluate at lambda={lam!r}: {exc}") from None


def _eval(e: Expr, lam: complex) -> complex:
    match e:
        case Const(value):
            return value
        case Param():
            return lam
        case Neg(arg):
            return -_eval(arg, lam)
        case BinOp(op, left, right):
            a, b = _eval(left, lam), _eval(right, lam)
            if op == "+":
                return a + b
            if op == "-":
                return a - b
            if op == "*":
                return a * b
            return a / b
        case Pow(base, n):
            b = _eval(base, lam)
            if n < 0:
                return 1 / (b ** -n)
            return b**n
        case Call(func, arg):
            x = _eval(arg, lam)
            if func == "ln":
                if x == 0:
                    raise ValueError("logarithm of zero")
                return cmath.log(x)
            return getattr(cmath, func)(x)
    raise TypeError(f"not an expression node: {e!r}")


# Constructors with the trivial algebraic identities folded in. They keep
# derivative trees small; correctness never depends on them.


def _add(a: Expr, b: Expr) -> Expr:
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return BinOp("+", a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    if b == ZERO:
        return a
    if a == ZERO:
        return _neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    return BinOp("-", a, b)


def _mul(a: Expr, b: Expr) -> Expr:
    if a == ZERO or b == ZERO:
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return BinOp("*", a, b)


def _div(a: Expr, b: Expr) -> Expr:
    if a == ZERO:
        return ZERO
    if b == ONE:
        return a
    return BinOp("/", a, b)


def _neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


@functools.lru_cache(maxsize=4096)
def differentiate(e: Expr) -> Expr:
    """Return the derivative of ``e`` with respect to lambda."""
    match e:
        case Const():
            return ZERO
        case Param():
            return ONE
        case Neg(arg):
            return _neg(differentiate(arg))
        case BinOp("+", u, v):
            return _add(differentiate(u), differentiate(v))
        case BinOp("-", u, v):
            return _sub(differentiate(u), differentiate(v))
        case BinOp("*", u, v):
            return _add(_mul(differentiate(u), v), _mul(u, differentiate(v)))
        case BinOp("/", u, v):
            # (u'v - uv') / v^2
            num = _sub(_mul(differentiate(u), v), _mul(u, differentiate(v)))
            return _div(num, Pow(v, 2))
        case Pow(u, n):
            if n == 0:
                return ZERO
            inner = ONE if n == 1 else (u if n == 2 else Pow(u, n - 1))
            return _mul(_mul(Const(complex(n)), inner), differentiate(u))
        case Call(func, u):
            du = differentiate(u)
            if du == ZERO:
                return ZERO
            if func == "sin":
                outer = Call("cos", u)
            elif func == "cos":
                outer = _neg(Call("sin", u))
            elif func == "exp":
                outer = e
            elif func == "sqrt":
                outer = _div(ONE, _mul(Const(2 + 0j), e))
            else:  # ln
                outer = _div(ONE, u)
            return _mul(outer, du)
    raise TypeError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# Model definitions


@dataclass(frozen=True)
class MatrixSpec:
    """One named matrix family: upper-triangle entries, 1-based ``(row, col, expr)``."""

    name: str
    dim: int
    entries: tuple[tuple[int, int, Expr], ...]

    def __post_init__(self):
        if self.dim < 1:
            raise ModelError(f"matrix {self.name}: dimension must be positive")
        seen = set()
        for row, col, _ in self.entries:
            if not 1 <= row <= col <= self.dim:
                raise ModelError(f"matrix {self.name}: bad entry index [{row},{col}]")
            if (row, col) in seen:
                raise ModelError(f"matrix {self.name}: duplicate entry [{row},{col}]")
            seen.add((row, col))


@dataclass(frozen=True)
class ModelDefinition:
    """A set of matrix families sharing one dimension. ``H`` is mandatory."""

    dimension: int
    matrices: Mapping[str, MatrixSpec]

    def __post_init__(self):
        if "H" not in self.matrices:
            raise ModelError('model must define matrix "H"')
        for spec in self.matrices.values():
            if spec.dim != self.dimension:
                raise ModelError(
                    f"matrix {spec.name} has dim {spec.dim}, expected {self.dimension}"
                )

    def __contains__(self, name: str) -> bool:
        return name in self.matrices

    def spec(self, name: str) -> MatrixSpec:
        try:
            return self.matrices[name]
        except KeyError:
            raise ModelError(f"model has no matrix named {name!r}") from None


def _fill(spec: MatrixSpec, exprs, lam: float) -> NDArray[np.complex128]:
    n = spec.dim
    out = np.zeros((n, n), dtype=complex)
    for (row, col, _), e in zip(spec.entries, exprs):
        value = evaluate(e, lam)
        i, j = row - 1, col - 1
        if i == j:
            if abs(value.imag) > _DIAG_IMAG_TOL * (1 + abs(value.real)):
                raise EvaluationError(
                    f"matrix {spec.name}: diagonal entry [{row},{col}] is not real "
                    f"at lambda={lam!r} (value {value})"
                )
            out[i, i] = value.real
        else:
            out[i, j] = value
            out[j, i] = value.conjugate()
    return out


def evaluate_matrix(m: ModelDefinition, name: str, lam: float) -> NDArray[np.complex128]:
    """Dense Hermitian matrix ``name`` at ``lam``; unspecified entries are zero."""
    spec = m.spec(name)
    return _fill(spec, (e for _, _, e in spec.entries), lam)


def evaluate_derivative(m: ModelDefinition, name: str, lam: float) -> NDArray[np.complex128]:
    """Entrywise symbolic derivative of matrix ``name`` evaluated at ``lam``."""
    spec = m.spec(name)
    return _fill(spec, (differentiate(e) for _, _, e in spec.entries), lam)


def evaluate_second_derivative(
    m: ModelDefinition, name: str, lam: float
) -> NDArray[np.complex128]:
    spec = m.spec(name)
    return _fill(spec, (differentiate(differentiate(e)) for _, _, e in spec.entries), lam)


# ---------------------------------------------------------------------------
# Parser

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\f\v]+)
  | (?P<newline>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[{}\[\](),;=+\-*/^])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # "number", "ident", "punct", "eof"
    text: str
    line: int
    column: int


def _tokenize(text: str) -> Iterator[_Token]:
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        column = pos - line_start + 1
        if match is None:
            raise ModelSyntaxError(f"unexpected character {text[pos]!r}", line, column)
        kind = match.lastgroup
        if kind == "newline":
            line += 1
            line_start = match.end()
        elif kind not in ("ws", "comment"):
            yield _Token(kind, match.group(), line, column)
        pos = match.end()
    yield _Token("eof", "", line, pos - line_start + 1)


class _Parser:
    def __init__(self, text: str):
        self.tokens = list(_tokenize(text))
        self.pos = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.pos]

    def error(self, message: str, tok: _Token | None = None) -> ModelSyntaxError:
        tok = tok or self.tok
        return ModelSyntaxError(message, tok.line, tok.column)

    def advance(self) -> _Token:
        tok = self.tok
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def at(self, text: str) -> bool:
        return self.tok.kind in ("punct", "ident") and self.tok.text == text

    def expect(self, text: str) -> _Token:
        if not self.at(text):
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")
        return self.advance()

    def integer(self, what: str) -> tuple[int, _Token]:
        tok = self.tok
        if tok.kind != "number" or not tok.text.isdigit():
            raise self.error(f"expected integer {what}")
        self.advance()
        return int(tok.text), tok

    # file := decl+
    def model(self) -> ModelDefinition:
        matrices: dict[str, MatrixSpec] = {}
        first: _Token | None = None
        while self.tok.kind != "eof":
            start = self.tok
            spec = self.decl()
            if spec.name in matrices:
                raise self.error(f"matrix {spec.name!r} declared twice", start)
            if first is None:
                first = start
            elif spec.dim != next(iter(matrices.values())).dim:
                raise self.error(
                    f"matrix {spec.name!r} has dim {spec.dim}, "
                    f"but earlier matrices have dim {next(iter(matrices.values())).dim}",
                    start,
                )
            matrices[spec.name] = spec
        if not matrices:
            raise self.error("empty model: expected at least one matrix declaration")
        if "H" not in matrices:
            raise self.error('missing matrix "H"', first)
        return ModelDefinition(next(iter(matrices.values())).dim, matrices)

    # decl := "matrix" IDENT "{" "dim" "=" INT ";" entry* "}"
    def decl(self) -> MatrixSpec:
        self.expect("matrix")
        name_tok = self.tok
        if name_tok.kind != "ident" or name_tok.text in ("i", "lambda", "matrix", "dim"):
            raise self.error("expected matrix name")
        self.advance()
        self.expect("{")
        self.expect("dim")
        self.expect("=")
        dim, dim_tok = self.integer("dimension")
        if dim < 1:
            raise self.error("dimension must be positive", dim_tok)
        self.expect(";")
        entries = []
        seen = set()
        while not self.at("}"):
            bracket = self.expect("[")
            row, row_tok = self.integer("row index")
            self.expect(",")
            col, col_tok = self.integer("column index")
            self.expect("]")
            if row > col:
                raise self.error(
                    f"row > col in entry [{row},{col}]: only the upper triangle is written",
                    bracket,
                )
            for value, tok in ((row, row_tok), (col, col_tok)):
                if not 1 <= value <= dim:
                    raise self.error(f"index {value} out of bounds for dim {dim}", tok)
            if (row, col) in seen:
                raise self.error(f"duplicate entry [{row},{col}]", bracket)
            seen.add((row, col))
            self.expect("=")
            e = self.expr()
            self.expect(";")
            entries.append((row, col, e))
        self.expect("}")
        return MatrixSpec(name_tok.text, dim, tuple(entries))

    # expr := term (("+"|"-") term)*
    def expr(self) -> Expr:
        e = self.term()
        while self.at("+") or self.at("-"):
            op = self.advance().text
            e = _fold(BinOp(op, e, self.term()))
        return e

    # term := factor (("*"|"/") factor)*
    def term(self) -> Expr:
        e = self.factor()
        while self.at("*") or self.at("/"):
            op = self.advance().text
            e = _fold(BinOp(op, e, self.factor()))
        return e

    # factor := "-" factor | base ("^" ["-"] INT)?
    def factor(self) -> Expr:
        if self.at("-"):
            self.advance()
            return _fold(Neg(self.factor()))
        e = self.base()
        if self.at("^"):
            self.advance()
            sign = 1
            if self.at("-"):
                self.advance()
                sign = -1
            n, _ = self.integer("exponent")
            e = _fold(Pow(e, sign * n))
        return e

    # base := NUMBER | "i" | "lambda" | IDENT "(" expr ")" | "(" expr ")"
    def base(self) -> Expr:
        tok = self.tok
        if tok.kind == "number":
            self.advance()
            return Const(complex(float(tok.text)))
        if tok.kind == "ident":
            self.advance()
            if tok.text == "i":
                return Const(1j)
            if tok.text == "lambda":
                return LAMBDA
            if not self.at("("):
                raise self.error(f"unknown identifier {tok.text!r}", tok)
            if tok.text not in FUNCTIONS:
                raise self.error(
                    f"unknown function {tok.text!r} (allowed: {', '.join(FUNCTIONS)})", tok
                )
            self.expect("(")
            arg = self.expr()
            self.expect(")")
            return _fold(Call(tok.text, arg))
        if self.at("("):
            self.advance()
            e = self.expr()
            self.expect(")")
            return e
        raise self.error(f"expected expression, found {tok.text or 'end of input'!r}")


def _fold(e: Expr) -> Expr:
    """Collapse a node whose children are all constants into a single constant."""
    if e.children and all(isinstance(c, Const) for c in e.children):
        try:
            return Const(_eval(e, 0j))
        except (ZeroDivisionError, OverflowError, ValueError):
            return e
    return e


def parse_model(text: str) -> ModelDefinition:
    """Parse model text into a :class:`ModelDefinition`.

    Raises:
        ModelSyntaxError: with the line and column of the offending token.
    """
    return _Parser(text).model()


def parse_expr(text: str) -> Expr:
    """Parse a single entry expression (handy for tests and the REPL)."""
    p = _Parser(text)
    e = p.expr()
    if p.tok.kind != "eof":
        raise p.error(f"unexpected {p.tok.text!r} after expression")
    return e
