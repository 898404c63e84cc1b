"""Arithmetic expression parser and evaluator for plant nonlinearities.

Plant files define each component of the nonlinearity phi(x, u) as a text
expression over the state variables ``x1..xn``, inputs ``u1..um`` and (for
time signals such as disturbances) ``t``.  The grammar supports ``+ - * /``,
``^`` with an integer exponent, unary minus and the functions sin, cos, exp,
abs and sqrt.  Precedence is ``^`` > unary minus > ``* /`` > ``+ -`` with
left associativity among equals.

Parsed expressions are immutable.  Evaluation is delegated to the active
kernel backend after flattening the AST to a postfix program.
"""

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from . import kernels
from .errors import DimensionError, DomainError, ExprSyntaxError, UnknownVariableError

FUNCTIONS = ("sin", "cos", "exp", "abs", "sqrt")

_FN_OPCODE = {
    "sin": kernels.OP_SIN,
    "cos": kernels.OP_COS,
    "exp": kernels.OP_EXP,
    "abs": kernels.OP_ABS,
    "sqrt": kernels.OP_SQRT,
}
_BIN_OPCODE = {
    "+": kernels.OP_ADD,
    "-": kernels.OP_SUB,
    "*": kernels.OP_MUL,
    "/": kernels.OP_DIV,
}


# --- AST -------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    slot: int
    name: str


@dataclass(frozen=True)
class Neg:
    operand: object


@dataclass(frozen=True)
class Call:
    fn: str
    operand: object


@dataclass(frozen=True)
class Pow:
    base: object
    exponent: int


@dataclass(frozen=True)
class Bin:
    op: str
    left: object
    right: object


def unparse(node) -> str:
    """Render an AST back to parseable text (liberal parenthesisation)."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"-({unparse(node.operand)})"
    if isinstance(node, Call):
        return f"{node.fn}({unparse(node.operand)})"
    if isinstance(node, Pow):
        if isinstance(node.base, (Num, Var, Call)):
            base = unparse(node.base)
        else:
            base = f"({unparse(node.base)})"
        return f"{base}^{node.exponent}"
    if isinstance(node, Bin):
        return f"({unparse(node.left)}){node.op}({unparse(node.right)})"
    raise TypeError(f"not an AST node: {node!r}")


# --- tokenizer -------------------------------------------------------------

_OPERATORS = set("+-*/^()")


def _tokenize(text):
    """Yield (kind, value, position) triples; kinds: num, ident, op."""
    tokens = []
    i = 0
    ln = len(text)
    while i < ln:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in _OPERATORS:
            tokens.append(("op", ch, i))
            i += 1
            continue
        if ch.isdigit() or ch == ".":
            j = i
            seen_dot = False
            seen_exp = False
            while j < ln:
                c = text[j]
                if c.isdigit():
                    j += 1
                elif c == "." and not seen_dot and not seen_exp:
                    seen_dot = True
                    j += 1
                elif c in "eE" and not seen_exp and j > i:
                    # exponent only counts when followed by digits or sign+digits
                    k = j + 1
                    if k < ln and text[k] in "+-":
                        k += 1
                    if k < ln and text[k].isdigit():
                        seen_exp = True
                        j = k
                    else:
                        break
                else:
                    break
            tokens.append(("num", text[i:j], i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < ln and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("ident", text[i:j], i))
            i = j
            continue
        raise ExprSyntaxError(f"unexpected character {ch!r}", i)
    tokens.append(("end", "", ln))
    return tokens


# --- parser ----------------------------------------------------------------

class _Parser:
    def __init__(self, text, varmap):
        self.text = text
        self.varmap = varmap
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op):
        kind, val, at = self.peek()
        if kind != "op" or val != op:
            raise ExprSyntaxError(f"expected {op!r}", at)
        return self.advance()

    def parse(self):
        node = self.expression()
        kind, val, at = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected trailing input {val!r}", at)
        return node

    def expression(self):
        node = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.advance()
                node = Bin(val, node, self.term())
            else:
                return node

    def term(self):
        node = self.factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.advance()
                node = Bin(val, node, self.factor())
            else:
                return node

    def factor(self):
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.advance()
            return Neg(self.factor())
        return self.power()

    def power(self):
        node = self.atom()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val == "^":
                self.advance()
                node = Pow(node, self.int_exponent())
            else:
                return node

    def int_exponent(self):
        sign = 1
        kind, val, at = self.peek()
        if kind == "op" and val == "-":
            self.advance()
            sign = -1
            kind, val, at = self.peek()
        if kind != "num" or any(c in val for c in ".eE"):
            raise ExprSyntaxError("exponent must be an integer literal", at)
        self.advance()
        return sign * int(val)

    def atom(self):
        kind, val, at = self.advance()
        if kind == "num":
            return Num(float(val))
        if kind == "op" and val == "(":
            node = self.expression()
            self.expect_op(")")
            return node
        if kind == "ident":
            nkind, nval, _ = self.peek()
            if nkind == "op" and nval == "(":
                if val not in FUNCTIONS:
                    raise UnknownVariableError(
                        f"unknown function {val!r} at position {at}; "
                        f"available: {', '.join(FUNCTIONS)}"
                    )
                self.advance()
                pkind, pval, pat = self.peek()
                if pkind == "op" and pval == ")":
                    raise ExprSyntaxError(f"{val} takes exactly one argument", pat)
                node = self.expression()
                self.expect_op(")")
                return Call(val, node)
            if val in self.varmap:
                return Var(self.varmap[val], val)
            raise UnknownVariableError(
                f"unknown variable {val!r} at position {at}; "
                f"declared: {', '.join(self.varmap) or '(none)'}"
            )
        raise ExprSyntaxError(f"unexpected token {val!r}", at)


# --- compiled program ------------------------------------------------------

def _flatten(node, code, arg):
    if isinstance(node, Num):
        code.append(kernels.OP_CONST)
        arg.append(node.value)
    elif isinstance(node, Var):
        code.append(kernels.OP_VAR)
        arg.append(float(node.slot))
    elif isinstance(node, Neg):
        _flatten(node.operand, code, arg)
        code.append(kernels.OP_NEG)
        arg.append(0.0)
    elif isinstance(node, Call):
        _flatten(node.operand, code, arg)
        code.append(_FN_OPCODE[node.fn])
        arg.append(0.0)
    elif isinstance(node, Pow):
        _flatten(node.base, code, arg)
        code.append(kernels.OP_POWI)
        arg.append(float(node.exponent))
    elif isinstance(node, Bin):
        _flatten(node.left, code, arg)
        _flatten(node.right, code, arg)
        code.append(_BIN_OPCODE[node.op])
        arg.append(0.0)
    else:
        raise TypeError(f"not an AST node: {node!r}")


def _stack_depth(code):
    depth = peak = 0
    for op in code:
        if op in (kernels.OP_CONST, kernels.OP_VAR):
            depth += 1
        elif op in (kernels.OP_ADD, kernels.OP_SUB, kernels.OP_MUL, kernels.OP_DIV):
            depth -= 1
        peak = max(peak, depth)
    return peak


@dataclass(frozen=True)
class Expression:
    """Immutable parsed expression over n state, m input variables (and
    optionally time).  Variable slots: x_i -> i-1, u_j -> n+j-1, t -> n+m."""

    ast: object
    n: int
    m: int
    has_time: bool = False
    _program: tuple = dataclass_field(default=None, repr=False, compare=False)

    @property
    def nvars(self):
        return self.n + self.m + (1 if self.has_time else 0)

    def program(self):
        """Postfix (code, arg) int32/float64 arrays for the kernel backends."""
        if self._program is None:
            code, arg = [], []
            _flatten(self.ast, code, arg)
            if _stack_depth(code) > kernels.MAX_STACK:
                raise DimensionError("expression nests deeper than the kernel stack")
            prog = (np.asarray(code, dtype=np.int32), np.asarray(arg, dtype=np.float64))
            object.__setattr__(self, "_program", prog)
        return self._program

    def to_text(self):
        return unparse(self.ast)

    def eval(self, x=(), u=(), t=None):
        vals = _varvals(self, x, u, t)
        out = kernels.eval_program(*self.program(), vals)
        if not np.isfinite(out):
            raise DomainError(f"non-finite value from {self.to_text()!r}")
        return out

    def eval_batch(self, points):
        """Evaluate over points of shape (npts, nvars); no finiteness check."""
        pts = np.ascontiguousarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != self.nvars:
            raise DimensionError(
                f"expected points of shape (npts, {self.nvars}), got {pts.shape}"
            )
        return kernels.eval_program_batch(*self.program(), pts)


def _varvals(expr, x, u, t):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if x.shape[0] != expr.n or u.shape[0] != expr.m:
        raise DimensionError(
            f"expression expects dim(x)={expr.n}, dim(u)={expr.m}; "
            f"got {x.shape[0]}, {u.shape[0]}"
        )
    parts = [x, u]
    if expr.has_time:
        parts.append(np.asarray([0.0 if t is None else float(t)]))
    return np.concatenate(parts) if parts else np.empty(0)


def parse(text: str, n: int, m: int = 0) -> Expression:
    """Parse an expression over x1..xn and u1..um."""
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 0)
    varmap = {f"x{i + 1}": i for i in range(n)}
    varmap.update({f"u{j + 1}": n + j for j in range(m)})
    ast = _Parser(text, varmap).parse()
    return Expression(ast=ast, n=n, m=m)


def parse_time(text: str) -> Expression:
    """Parse an expression in the single variable t (time signals)."""
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 0)
    ast = _Parser(text, {"t": 0}).parse()
    return Expression(ast=ast, n=0, m=0, has_time=True)


# --- vector fields ---------------------------------------------------------

@dataclass(frozen=True)
class VectorField:
    """phi(x, u): R^n x R^m -> R^n, one Expression per component."""

    components: tuple
    n: int
    m: int = 0

    def __post_init__(self):
        if len(self.components) != self.n:
            raise DimensionError(
                f"vector field needs {self.n} components, got {len(self.components)}"
            )
        for c in self.components:
            if c.n != self.n or c.m != self.m or c.has_time:
                raise DimensionError("component variable layout does not match field")

    @property
    def out_dim(self):
        return self.n

    def eval(self, x, u=()):
        out = np.empty(self.n)
        for i, comp in enumerate(self.components):
            try:
                out[i] = comp.eval(x, u)
            except DomainError as err:
                raise DomainError(str(err), component=i) from None
        return out

    def eval_batch(self, X, u_fixed=None):
        """Evaluate all components over X of shape (npts, n); returns
        (npts, n).  Non-finite entries are passed through unchecked."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        if self.m:
            u = np.zeros(self.m) if u_fixed is None else np.asarray(u_fixed, float)
            pts = np.hstack([X, np.broadcast_to(u, (X.shape[0], self.m))])
        else:
            pts = X
        out = np.empty((X.shape[0], self.n))
        for i, comp in enumerate(self.components):
            out[:, i] = comp.eval_batch(pts)
        return out

    def kernel_parts(self):
        """Packed programs plus identity conjugation, for the RK4 kernel."""
        codes, args, offs = pack_programs([c.program() for c in self.components])
        eye = np.eye(self.n)
        return codes, args, offs, eye, eye


def field_from_strings(texts, n, m=0):
    return VectorField(tuple(parse(s, n, m) for s in texts), n=n, m=m)


def zero_field(n):
    return field_from_strings(["0"] * n, n)


def add_fields(a: VectorField, b: VectorField) -> VectorField:
    """Componentwise sum of two plain vector fields (AST-level addition)."""
    if not (isinstance(a, VectorField) and isinstance(b, VectorField)):
        raise DimensionError("add_fields needs plain (untransformed) fields")
    if a.n != b.n or a.m != b.m:
        raise DimensionError("field dimensions differ")
    comps = tuple(
        Expression(ast=Bin("+", ca.ast, cb.ast), n=a.n, m=a.m)
        for ca, cb in zip(a.components, b.components)
    )
    return VectorField(comps, n=a.n, m=a.m)


def pack_programs(programs):
    """Concatenate (code, arg) pairs into flat arrays with offsets."""
    if not programs:
        return (np.empty(0, np.int32), np.empty(0, np.float64),
                np.zeros(1, np.int32))
    codes = np.concatenate([p[0] for p in programs])
    args = np.concatenate([p[1] for p in programs])
    offs = np.zeros(len(programs) + 1, dtype=np.int32)
    offs[1:] = np.cumsum([p[0].shape[0] for p in programs])
    return codes.astype(np.int32), args.astype(np.float64), offs


# --- numeric differentiation ------------------------------------------------

def default_steps(x, base=1e-5):
    """Per-coordinate central-difference step: base * max(1, |x_i|)."""
    x = np.asarray(x, dtype=np.float64)
    return base * np.maximum(1.0, np.abs(x))


def jacobian(field, x, u=(), h=None):
    """Central-difference Jacobian d phi / dx at x; entry error O(h^2).

    ``field`` may be a VectorField or any object with ``eval_batch`` and
    ``n``/``out_dim`` attributes (e.g. a coordinate-transformed field).
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    n = field.n
    if x.shape[0] != n:
        raise DimensionError(f"expected dim(x)={n}, got {x.shape[0]}")
    steps = default_steps(x) if h is None else np.full(n, float(h))
    probes = np.repeat(x[None, :], 2 * n, axis=0)
    for i in range(n):
        probes[2 * i, i] += steps[i]
        probes[2 * i + 1, i] -= steps[i]
    vals = field.eval_batch(probes, u_fixed=u if len(np.atleast_1d(u)) else None)
    if not np.isfinite(vals).all():
        bad = np.argwhere(~np.isfinite(vals))[0]
        raise DomainError(
            f"probe point outside expression domain (coordinate {bad[0] // 2})",
            component=int(bad[1]),
        )
    out_dim = vals.shape[1]
    J = np.empty((out_dim, n))
    for i in range(n):
        J[:, i] = (vals[2 * i] - vals[2 * i + 1]) / (2.0 * steps[i])
    return J


def jacobian_batch(field, X, u_fixed=None, base=1e-5):
    """Central-difference Jacobians at every row of X: (npts, out, n)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    npts, n = X.shape
    steps = base * np.maximum(1.0, np.abs(X))
    probes = np.empty((2 * n, npts, n))
    for i in range(n):
        probes[2 * i] = X
        probes[2 * i, :, i] += steps[:, i]
        probes[2 * i + 1] = X
        probes[2 * i + 1, :, i] -= steps[:, i]
    vals = field.eval_batch(probes.reshape(2 * n * npts, n), u_fixed=u_fixed)
    if not np.isfinite(vals).all():
        raise DomainError("probe point outside expression domain")
    out_dim = vals.shape[1]
    vals = vals.reshape(2 * n, npts, out_dim)
    J = np.empty((npts, out_dim, n))
    for i in range(n):
        J[:, :, i] = (vals[2 * i] - vals[2 * i + 1]) / (2.0 * steps[:, i])[:, None]
    return J
