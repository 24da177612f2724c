"""Arithmetic expressions with forward-mode automatic differentiation.

Scalar potentials U(x1, ..., xd) and radial interaction profiles phi(u)
arrive as text in config files. This module parses them into small ASTs
and evaluates values, gradients, and Hessian quadratic forms exactly
with dual numbers. Evaluation broadcasts over numpy arrays, so a parsed
expression applies to a whole batch of states in one pass.

Grammar, with standard precedence (``^`` is right associative and binds
tighter than unary minus)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | IDENT | IDENT '(' expr (',' expr)* ')' | '(' expr ')'

Known functions: exp, log, sin, cos, sqrt, abs, min, max, smoothstep.
``smoothstep(a, b, u)`` is the cubic Hermite clamp: 0 for u on the a
side, 1 on the b side, 3t^2 - 2t^3 in between.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Expression",
    "DualVector",
    "parse",
    "render",
    "eval_value",
    "eval_gradient",
    "hessian_quadratic_form",
    "ExprError",
    "ExprSyntaxError",
    "ExprNameError",
    "ExprArityError",
    "ExprDomainError",
]


class ExprError(ValueError):
    """Base class for expression parsing and evaluation errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, offset, expected, found):
        self.offset = offset
        self.expected = tuple(expected)
        self.found = found
        super().__init__(
            "syntax error at offset %d: expected %s, found %r"
            % (offset, " or ".join(self.expected), found)
        )


class ExprNameError(ExprError):
    def __init__(self, name, offset, dim):
        self.name = name
        self.offset = offset
        super().__init__(
            "unknown identifier %r at offset %d (variables are x1..x%d%s)"
            % (name, offset, dim, " or u" if dim == 1 else "")
        )


class ExprArityError(ExprError):
    def __init__(self, name, offset, expected, got):
        self.name = name
        self.offset = offset
        super().__init__(
            "%s() takes %s argument(s), got %d at offset %d"
            % (name, expected, got, offset)
        )


class ExprDomainError(ExprError):
    def __init__(self, message, source_fragment):
        self.source_fragment = source_fragment
        super().__init__("%s in %r" % (message, source_fragment))


# arity per function; smoothstep is the 3-argument Hermite clamp
_FUNCTION_ARITY = {
    "exp": 1,
    "log": 1,
    "sin": 1,
    "cos": 1,
    "sqrt": 1,
    "abs": 1,
    "min": 2,
    "max": 2,
    "smoothstep": 3,
}


# ---------------------------------------------------------------------------
# dual numbers


class Dual:
    """First-order dual: value plus a vector of partial derivatives.

    ``val`` may be a scalar or an array (batch evaluation); ``grad`` has
    shape (d,) + shape(val).
    """

    __slots__ = ("val", "grad")

    def __init__(self, val, grad):
        self.val = val
        self.grad = grad

    def _coerce(self, other):
        if isinstance(other, Dual):
            return other
        return Dual(other, np.zeros_like(self.grad))

    def __add__(self, other):
        o = self._coerce(other)
        return Dual(self.val + o.val, self.grad + o.grad)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        return Dual(self.val - o.val, self.grad - o.grad)

    def __rsub__(self, other):
        o = self._coerce(other)
        return Dual(o.val - self.val, o.grad - self.grad)

    def __mul__(self, other):
        o = self._coerce(other)
        return Dual(self.val * o.val, self.grad * o.val + o.grad * self.val)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        q = self.val / o.val
        return Dual(q, (self.grad - o.grad * q) / o.val)

    def __rtruediv__(self, other):
        return self._coerce(other).__truediv__(self)

    def __neg__(self):
        return Dual(-self.val, -self.grad)


class Jet2:
    """Second-order jet along one direction: (f, f'h, h^T f'' h)."""

    __slots__ = ("val", "d1", "d2")

    def __init__(self, val, d1, d2):
        self.val = val
        self.d1 = d1
        self.d2 = d2

    def _coerce(self, other):
        if isinstance(other, Jet2):
            return other
        zero = np.zeros_like(np.asarray(self.d1, dtype=float))
        return Jet2(other, zero, zero.copy())

    def __add__(self, other):
        o = self._coerce(other)
        return Jet2(self.val + o.val, self.d1 + o.d1, self.d2 + o.d2)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        return Jet2(self.val - o.val, self.d1 - o.d1, self.d2 - o.d2)

    def __rsub__(self, other):
        o = self._coerce(other)
        return Jet2(o.val - self.val, o.d1 - self.d1, o.d2 - self.d2)

    def __mul__(self, other):
        o = self._coerce(other)
        return Jet2(
            self.val * o.val,
            self.d1 * o.val + self.val * o.d1,
            self.d2 * o.val + 2.0 * self.d1 * o.d1 + self.val * o.d2,
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        q = self.val / o.val
        q1 = (self.d1 - q * o.d1) / o.val
        q2 = (self.d2 - 2.0 * q1 * o.d1 - q * o.d2) / o.val
        return Jet2(q, q1, q2)

    def __rtruediv__(self, other):
        return self._coerce(other).__truediv__(self)

    def __neg__(self):
        return Jet2(-self.val, -self.d1, -self.d2)


def _value_of(x):
    return x.val if isinstance(x, (Dual, Jet2)) else x


def _check_domain(ok, message, node):
    if not np.all(ok):
        raise ExprDomainError(message, node.source)


def _exp(x):
    if isinstance(x, Dual):
        v = np.exp(x.val)
        return Dual(v, x.grad * v)
    if isinstance(x, Jet2):
        v = np.exp(x.val)
        return Jet2(v, x.d1 * v, v * (x.d1 * x.d1 + x.d2))
    return np.exp(x)


def _log(x, node):
    v = _value_of(x)
    _check_domain(np.asarray(v) > 0, "log of non-positive value", node)
    if isinstance(x, Dual):
        return Dual(np.log(x.val), x.grad / x.val)
    if isinstance(x, Jet2):
        d1 = x.d1 / x.val
        return Jet2(np.log(x.val), d1, x.d2 / x.val - d1 * d1)
    return np.log(x)


def _sin(x):
    if isinstance(x, Dual):
        return Dual(np.sin(x.val), x.grad * np.cos(x.val))
    if isinstance(x, Jet2):
        s, c = np.sin(x.val), np.cos(x.val)
        return Jet2(s, x.d1 * c, x.d2 * c - x.d1 * x.d1 * s)
    return np.sin(x)


def _cos(x):
    if isinstance(x, Dual):
        return Dual(np.cos(x.val), -x.grad * np.sin(x.val))
    if isinstance(x, Jet2):
        s, c = np.sin(x.val), np.cos(x.val)
        return Jet2(c, -x.d1 * s, -x.d2 * s - x.d1 * x.d1 * c)
    return np.cos(x)


def _sqrt(x, node):
    v = _value_of(x)
    _check_domain(np.asarray(v) >= 0, "sqrt of negative value", node)
    if isinstance(x, Dual):
        r = np.sqrt(x.val)
        return Dual(r, x.grad / (2.0 * r))
    if isinstance(x, Jet2):
        r = np.sqrt(x.val)
        d1 = x.d1 / (2.0 * r)
        return Jet2(r, d1, (x.d2 - 2.0 * d1 * d1) / (2.0 * r))
    return np.sqrt(x)


def _abs(x):
    # subgradient 0 at the kink
    if isinstance(x, Dual):
        s = np.sign(x.val)
        return Dual(np.abs(x.val), x.grad * s)
    if isinstance(x, Jet2):
        s = np.sign(x.val)
        return Jet2(np.abs(x.val), x.d1 * s, x.d2 * s)
    return np.abs(x)


def _pick(cond, a, b):
    """Branch select that works for scalars, arrays, duals and jets."""
    if isinstance(a, Dual) or isinstance(b, Dual):
        a = a if isinstance(a, Dual) else Dual(a, np.zeros_like(b.grad))
        b = b if isinstance(b, Dual) else Dual(b, np.zeros_like(a.grad))
        return Dual(np.where(cond, a.val, b.val), np.where(cond, a.grad, b.grad))
    if isinstance(a, Jet2) or isinstance(b, Jet2):
        ref = a if isinstance(a, Jet2) else b
        a = a if isinstance(a, Jet2) else ref._coerce(a)
        b = b if isinstance(b, Jet2) else ref._coerce(b)
        return Jet2(
            np.where(cond, a.val, b.val),
            np.where(cond, a.d1, b.d1),
            np.where(cond, a.d2, b.d2),
        )
    return np.where(cond, a, b)


def _min(a, b):
    return _pick(_value_of(a) <= _value_of(b), a, b)


def _max(a, b):
    return _pick(_value_of(a) >= _value_of(b), a, b)


def _smoothstep(a, b, u, node):
    width = _value_of(b) - _value_of(a)
    _check_domain(np.asarray(width) != 0, "smoothstep with equal edges", node)
    t = _max(_min((u - a) / (b - a), 1.0), 0.0)
    return t * t * (3.0 - 2.0 * t)


def _int_pow(x, n, node):
    if n == 0:
        one = np.ones_like(np.asarray(_value_of(x), dtype=float))
        return one
    if n < 0:
        _check_domain(np.asarray(_value_of(x)) != 0, "zero raised to a negative power", node)
        return 1.0 / _int_pow(x, -n, node)
    # exponentiation by squaring keeps dual arithmetic exact
    result = None
    base = x
    while n:
        if n & 1:
            result = base if result is None else result * base
        n >>= 1
        if n:
            base = base * base
    return result


def _general_pow(x, p, node):
    v = _value_of(x)
    _check_domain(np.asarray(v) > 0, "non-integer power of non-positive base", node)
    return _exp(_log(x, node) * p)


# ---------------------------------------------------------------------------
# AST


class _Node:
    __slots__ = ("source",)


class _Num(_Node):
    __slots__ = ("value",)

    def __init__(self, value, source):
        self.value = value
        self.source = source

    def eval(self, values):
        return self.value

    def render(self):
        return repr(self.value)


class _Var(_Node):
    __slots__ = ("index", "name")

    def __init__(self, index, name, source):
        self.index = index
        self.name = name
        self.source = source

    def eval(self, values):
        return values[self.index]

    def render(self):
        return self.name


class _Neg(_Node):
    __slots__ = ("arg",)

    def __init__(self, arg, source):
        self.arg = arg
        self.source = source

    def eval(self, values):
        return -self.arg.eval(values)

    def render(self):
        return "(-%s)" % self.arg.render()


class _Bin(_Node):
    __slots__ = ("op", "left", "right")

    def __init__(self, op, left, right, source):
        self.op = op
        self.left = left
        self.right = right
        self.source = source

    def eval(self, values):
        a = self.left.eval(values)
        b = self.right.eval(values)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if self.op == "/":
            _check_domain(np.asarray(_value_of(b)) != 0, "division by zero", self)
            return a / b
        # '^' with a literal (possibly negated) integer exponent stays exact;
        # everything else goes through exp/log and needs a positive base
        n = _literal_int(self.right)
        if n is not None:
            return _int_pow(a, n, self)
        return _general_pow(a, b, self)

    def render(self):
        return "(%s %s %s)" % (self.left.render(), self.op, self.right.render())


class _Call(_Node):
    __slots__ = ("name", "args")

    def __init__(self, name, args, source):
        self.name = name
        self.args = args
        self.source = source

    def eval(self, values):
        a = [arg.eval(values) for arg in self.args]
        name = self.name
        if name == "exp":
            return _exp(a[0])
        if name == "log":
            return _log(a[0], self)
        if name == "sin":
            return _sin(a[0])
        if name == "cos":
            return _cos(a[0])
        if name == "sqrt":
            return _sqrt(a[0], self)
        if name == "abs":
            return _abs(a[0])
        if name == "min":
            return _min(a[0], a[1])
        if name == "max":
            return _max(a[0], a[1])
        return _smoothstep(a[0], a[1], a[2], self)

    def render(self):
        return "%s(%s)" % (self.name, ", ".join(arg.render() for arg in self.args))


def _literal_int(node):
    if isinstance(node, _Num):
        v = node.value
        if float(v).is_integer() and abs(v) < 2**31:
            return int(v)
        return None
    if isinstance(node, _Neg):
        n = _literal_int(node.arg)
        return None if n is None else -n
    return None


@dataclass(frozen=True)
class Expression:
    """A parsed expression over ``dim`` variables."""

    root: _Node
    dim: int
    source: str

    def __call__(self, x):
        return eval_value(self, x)


@dataclass(frozen=True)
class DualVector:
    """Value of an expression together with its gradient."""

    value: float
    partials: np.ndarray


# ---------------------------------------------------------------------------
# tokenizer / parser

_OPERATORS = set("+-*/^(),")


def _tokenize(source):
    tokens = []
    i, n = 0, len(source)
    while i < n:
        c = source[i]
        if c.isspace():
            i += 1
            continue
        if c in _OPERATORS:
            tokens.append((c, c, i))
            i += 1
            continue
        if c.isdigit() or c == ".":
            j = i
            while j < n and (source[j].isdigit() or source[j] == "."):
                j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    j = k
                    while j < n and source[j].isdigit():
                        j += 1
            text = source[i:j]
            try:
                value = float(text)
            except ValueError:
                raise ExprSyntaxError(i, ("number",), text) from None
            tokens.append(("num", value, i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(("ident", source[i:j], i))
            i = j
            continue
        raise ExprSyntaxError(i, ("expression",), c)
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, source, dim):
        self.source = source
        self.dim = dim
        self.tokens = _tokenize(source)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind):
        tok = self.peek()
        if tok[0] != kind:
            raise ExprSyntaxError(tok[2], (repr(kind),), tok[1] or "end of input")
        return self.advance()

    def span(self, start):
        end = self.peek()[2]
        return self.source[start:end].strip()

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ExprSyntaxError(tok[2], ("operator", "end of input"), tok[1])
        return node

    def expr(self):
        start = self.peek()[2]
        node = self.term()
        while self.peek()[0] in ("+", "-"):
            op = self.advance()[0]
            right = self.term()
            node = _Bin(op, node, right, self.span(start))
        return node

    def term(self):
        start = self.peek()[2]
        node = self.unary()
        while self.peek()[0] in ("*", "/"):
            op = self.advance()[0]
            right = self.unary()
            node = _Bin(op, node, right, self.span(start))
        return node

    def unary(self):
        tok = self.peek()
        if tok[0] == "-":
            self.advance()
            node = self.unary()
            return _Neg(node, self.span(tok[2]))
        return self.power()

    def power(self):
        start = self.peek()[2]
        node = self.atom()
        if self.peek()[0] == "^":
            self.advance()
            exponent = self.unary()  # right associative
            node = _Bin("^", node, exponent, self.span(start))
        return node

    def atom(self):
        tok = self.peek()
        if tok[0] == "num":
            self.advance()
            return _Num(tok[1], self.span(tok[2]))
        if tok[0] == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        if tok[0] == "ident":
            self.advance()
            name = tok[1]
            if self.peek()[0] == "(":
                self.advance()
                args = [self.expr()]
                while self.peek()[0] == ",":
                    self.advance()
                    args.append(self.expr())
                self.expect(")")
                if name not in _FUNCTION_ARITY:
                    raise ExprNameError(name, tok[2], self.dim)
                if len(args) != _FUNCTION_ARITY[name]:
                    raise ExprArityError(name, tok[2], _FUNCTION_ARITY[name], len(args))
                return _Call(name, args, self.span(tok[2]))
            return self.variable(name, tok[2])
        raise ExprSyntaxError(
            tok[2], ("number", "variable", "'('", "'-'"), tok[1] or "end of input"
        )

    def variable(self, name, offset):
        if name == "u" and self.dim == 1:
            return _Var(0, "u", name)
        if name.startswith("x") and name[1:].isdigit():
            index = int(name[1:]) - 1
            if 0 <= index < self.dim:
                return _Var(index, name, name)
        raise ExprNameError(name, offset, self.dim)


def parse(source, dim):
    """Parse ``source`` into an Expression over variables x1..x{dim}.

    For dim == 1 the name ``u`` is accepted as an alias for x1, which is
    how radial profiles are written. Raises ExprSyntaxError with the
    byte offset on malformed input.
    """
    if dim < 1:
        raise ValueError("dim must be a positive integer")
    root = _Parser(source, dim).parse()
    return Expression(root, dim, source)


def render(expression):
    """Serialize back to parseable text (fully parenthesized)."""
    return expression.root.render()


# ---------------------------------------------------------------------------
# evaluation entry points


def _split_point(expression, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != expression.dim:
        raise ValueError(
            "point has dimension %d, expression expects %d" % (x.shape[-1], expression.dim)
        )
    return [x[..., i] for i in range(expression.dim)]


def eval_value(expression, x):
    """Evaluate at a point (d,) or batch (..., d)."""
    coords = _split_point(expression, x)
    out = expression.root.eval(coords)
    if np.ndim(out) == 0 and np.ndim(coords[0]) > 0:
        out = np.broadcast_to(out, np.shape(coords[0])).copy()
    return out


def eval_gradient(expression, x):
    """Value and exact gradient at ``x``; batches over leading axes."""
    coords = _split_point(expression, x)
    d = expression.dim
    shape = np.shape(coords[0])
    seeds = []
    for i in range(d):
        grad = np.zeros((d,) + shape)
        grad[i] = 1.0
        seeds.append(Dual(coords[i], grad))
    out = expression.root.eval(seeds)
    if not isinstance(out, Dual):  # constant expression
        out = Dual(np.broadcast_to(np.asarray(out, dtype=float), shape).copy(),
                   np.zeros((d,) + shape))
    value = out.val
    partials = np.moveaxis(np.broadcast_to(out.grad, (d,) + shape), 0, -1)
    if shape == ():
        return DualVector(float(value), partials.astype(float))
    return DualVector(np.broadcast_to(value, shape).copy(), partials.copy())


def hessian_quadratic_form(expression, x, h):
    """Exact h^T (Hess e)(x) h via a second-order directional jet.

    ``h`` must be a unit vector (within 1e-9); batches over leading axes
    of ``x`` with a fixed direction.
    """
    h = np.asarray(h, dtype=float)
    if abs(np.linalg.norm(h) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    coords = _split_point(expression, x)
    shape = np.shape(coords[0])
    zero = np.zeros(shape) if shape else 0.0
    seeds = [
        Jet2(coords[i], np.full(shape, h[i]) if shape else float(h[i]),
             zero.copy() if shape else 0.0)
        for i in range(expression.dim)
    ]
    out = expression.root.eval(seeds)
    if not isinstance(out, Jet2):
        return np.zeros(shape) if shape else 0.0
    return out.d2 if shape else float(out.d2)


def directional_derivative(expression, x, h):
    """Exact (grad e)(x) . h, batched over leading axes of ``x``."""
    h = np.asarray(h, dtype=float)
    coords = _split_point(expression, x)
    shape = np.shape(coords[0])
    zero = np.zeros(shape) if shape else 0.0
    seeds = [
        Jet2(coords[i], np.full(shape, h[i]) if shape else float(h[i]),
             zero.copy() if shape else 0.0)
        for i in range(expression.dim)
    ]
    out = expression.root.eval(seeds)
    if not isinstance(out, Jet2):
        return np.zeros(shape) if shape else 0.0
    return out.d1 if shape else float(out.d1)
