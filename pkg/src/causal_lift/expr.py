"""Closed-form expression DSL for constitutive laws.

Expressions are trees of plain tuples, e.g. ``("mul", ("sgn", ("var", "f")),
("pow", ("var", "f"), 4))`` for ``sgn(f)*f^4``.  The grammar is closed
(constants, one free variable, + - * /, integer powers, sgn, exp, unary
minus) so that evaluation is total on finite inputs apart from division by
zero, and so that laws can be compiled to a small stack program for the
simulation kernels.
"""

from __future__ import annotations

import math

from .errors import BracketError, EvalDomainError, ExprSyntaxError, MonotonicityError

FUNCTIONS = ("sgn", "exp")

# Stack-machine opcodes, mirrored by the compiled kernel in _kernels/_core.pyx.
OP_CONST = 0  # push consts[arg]
OP_VAR = 1  # push the free variable
OP_ADD = 2
OP_SUB = 3
OP_MUL = 4
OP_DIV = 5
OP_POW = 6  # integer exponent in arg
OP_SGN = 7
OP_EXP = 8
OP_NEG = 9


# --- parsing -----------------------------------------------------------------


def _tokenize(text):
    tokens = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c.isdigit() or c == ".":
            j = i
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            try:
                value = float(text[i:j])
            except ValueError:
                raise ExprSyntaxError(f"bad number {text[i:j]!r}", i) from None
            tokens.append(("num", value, i))
            i = j
        elif c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("name", text[i:j], i))
            i = j
        elif c in "+-*/^()":
            tokens.append((c, c, i))
            i += 1
        else:
            raise ExprSyntaxError(f"unexpected character {c!r}", i)
    tokens.append(("end", None, n))
    return tokens


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def take(self, kind=None):
        tok = self.tokens[self.pos]
        if kind is not None and tok[0] != kind:
            raise ExprSyntaxError(f"expected {kind!r}, found {tok[1]!r}", tok[2])
        self.pos += 1
        return tok

    def expr(self):
        node = self.term()
        while self.peek()[0] in "+-":
            op = self.take()[0]
            rhs = self.term()
            node = ("add" if op == "+" else "sub", node, rhs)
        return node

    def term(self):
        node = self.factor()
        while self.peek()[0] in "*/":
            op = self.take()[0]
            rhs = self.factor()
            node = ("mul" if op == "*" else "div", node, rhs)
        return node

    def factor(self):
        if self.peek()[0] == "-":
            self.take()
            return ("neg", self.factor())
        if self.peek()[0] == "+":
            self.take()
            return self.factor()
        return self.power()

    def power(self):
        node = self.atom()
        if self.peek()[0] == "^":
            self.take()
            tok = self.take("num")
            exponent = tok[1]
            if exponent != int(exponent) or exponent < 0:
                raise ExprSyntaxError("exponent must be a non-negative integer", tok[2])
            node = ("pow", node, int(exponent))
        return node

    def atom(self):
        kind, value, col = self.peek()
        if kind == "num":
            self.take()
            return ("const", value)
        if kind == "name":
            self.take()
            if self.peek()[0] == "(":
                if value not in FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function {value!r}", col)
                self.take("(")
                inner = self.expr()
                self.take(")")
                return (value, inner)
            return ("var", value)
        if kind == "(":
            self.take()
            inner = self.expr()
            self.take(")")
            return inner
        raise ExprSyntaxError(f"unexpected token {value!r}", col)


def parse_expr(text):
    """Parse expression text into a tuple tree."""
    parser = _Parser(_tokenize(text))
    node = parser.expr()
    parser.take("end")
    return node


# --- printing ----------------------------------------------------------------

_PRECEDENCE = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}


def _fmt(node, parent_prec, right_side):
    kind = node[0]
    if kind == "const":
        v = node[1]
        if v == int(v) and abs(v) < 1e16:
            text = repr(int(v))
        else:
            text = repr(v)
        return f"({text})" if v < 0 and parent_prec > 1 else text
    if kind == "var":
        return node[1]
    if kind in FUNCTIONS:
        return f"{kind}({_fmt(node[1], 0, False)})"
    prec = _PRECEDENCE[kind]
    if kind == "neg":
        inner = _fmt(node[1], prec, False)
        text = f"-{inner}"
    elif kind == "pow":
        base = _fmt(node[1], prec + 1, False)
        text = f"{base}^{node[2]}"
    else:
        symbol = {"add": "+", "sub": "-", "mul": "*", "div": "/"}[kind]
        lhs = _fmt(node[1], prec, False)
        rhs = _fmt(node[2], prec + (kind in ("sub", "div")), True)
        text = f"{lhs}{symbol}{rhs}"
    needs_parens = prec < parent_prec or (prec == parent_prec and right_side)
    return f"({text})" if needs_parens else text


def format_expr(node):
    """Render a tree back to parseable text (round-trips through parse_expr)."""
    return _fmt(node, 0, False)


# --- analysis ----------------------------------------------------------------


def free_vars(node):
    kind = node[0]
    if kind == "const":
        return set()
    if kind == "var":
        return {node[1]}
    if kind == "pow":
        return free_vars(node[1])
    out = set()
    for child in node[1:]:
        out |= free_vars(child)
    return out


def eval_expr(node, x):
    """Evaluate with every variable bound to the scalar ``x``.

    sgn(0) is 0; exp overflow saturates to +inf; division by zero raises
    EvalDomainError.
    """
    kind = node[0]
    if kind == "const":
        return node[1]
    if kind == "var":
        return x
    if kind == "add":
        return eval_expr(node[1], x) + eval_expr(node[2], x)
    if kind == "sub":
        return eval_expr(node[1], x) - eval_expr(node[2], x)
    if kind == "mul":
        return eval_expr(node[1], x) * eval_expr(node[2], x)
    if kind == "div":
        denom = eval_expr(node[2], x)
        if denom == 0.0:
            raise EvalDomainError("division by zero")
        return eval_expr(node[1], x) / denom
    if kind == "pow":
        base = eval_expr(node[1], x)
        try:
            return base ** node[2]
        except OverflowError:
            return math.inf if base > 0 or node[2] % 2 == 0 else -math.inf
    if kind == "sgn":
        v = eval_expr(node[1], x)
        return float((v > 0) - (v < 0))
    if kind == "exp":
        try:
            return math.exp(eval_expr(node[1], x))
        except OverflowError:
            return math.inf
    if kind == "neg":
        return -eval_expr(node[1], x)
    raise ValueError(f"unknown node kind {kind!r}")


def derivative(node):
    """Symbolic derivative with respect to the free variable (sgn' taken as 0)."""
    kind = node[0]
    if kind == "const":
        return ("const", 0.0)
    if kind == "var":
        return ("const", 1.0)
    if kind == "add":
        return ("add", derivative(node[1]), derivative(node[2]))
    if kind == "sub":
        return ("sub", derivative(node[1]), derivative(node[2]))
    if kind == "mul":
        a, b = node[1], node[2]
        return ("add", ("mul", derivative(a), b), ("mul", a, derivative(b)))
    if kind == "div":
        a, b = node[1], node[2]
        num = ("sub", ("mul", derivative(a), b), ("mul", a, derivative(b)))
        return ("div", num, ("pow", b, 2))
    if kind == "pow":
        a, k = node[1], node[2]
        if k == 0:
            return ("const", 0.0)
        return ("mul", ("mul", ("const", float(k)), ("pow", a, k - 1)), derivative(a))
    if kind == "sgn":
        return ("const", 0.0)
    if kind == "exp":
        return ("mul", node, derivative(node[1]))
    if kind == "neg":
        return ("neg", derivative(node[1]))
    raise ValueError(f"unknown node kind {kind!r}")


def _is_const(node, value=None):
    return node[0] == "const" and (value is None or node[1] == value)


def constant_fold(node):
    """Fold constants and trivial algebraic identities (x*0, x*1, x+0, x^1).

    Used for structural comparison and linearity detection only, never for
    evaluation, so identities that differ on NaN inputs are acceptable.
    """
    kind = node[0]
    if kind in ("const", "var"):
        return node
    if kind == "pow":
        child = constant_fold(node[1])
        if child[0] == "const":
            return ("const", float(child[1] ** node[2]))
        if node[2] == 0:
            return ("const", 1.0)
        if node[2] == 1:
            return child
        return ("pow", child, node[2])
    children = tuple(constant_fold(c) for c in node[1:])
    if all(c[0] == "const" for c in children):
        try:
            return ("const", float(eval_expr((kind, *children), 0.0)))
        except EvalDomainError:
            pass
    a = children[0]
    b = children[1] if len(children) > 1 else None
    if kind == "mul":
        if _is_const(a, 0.0) or _is_const(b, 0.0):
            return ("const", 0.0)
        if _is_const(a, 1.0):
            return b
        if _is_const(b, 1.0):
            return a
    elif kind == "add":
        if _is_const(a, 0.0):
            return b
        if _is_const(b, 0.0):
            return a
    elif kind == "sub":
        if _is_const(b, 0.0):
            return a
        if _is_const(a, 0.0):
            return constant_fold(("neg", b))
    elif kind == "div":
        if _is_const(b, 1.0):
            return a
        if _is_const(a, 0.0) and not _is_const(b, 0.0):
            return ("const", 0.0)
    elif kind == "neg":
        if a[0] == "neg":
            return a[1]
        if a[0] == "const":
            return ("const", -a[1])
    return (kind, *children)


def normalize(node):
    """Canonical form for structural comparison: folded constants, sorted
    commutative operands."""
    node = constant_fold(node)
    kind = node[0]
    if kind in ("const", "var"):
        return node
    if kind == "pow":
        return ("pow", normalize(node[1]), node[2])
    children = tuple(normalize(c) for c in node[1:])
    if kind in ("add", "mul"):
        children = tuple(sorted(children, key=repr))
    return (kind, *children)


def is_linear(node):
    """True when the expression is exactly c*x (zero intercept, constant slope)."""
    d = normalize(derivative(node))
    if d[0] != "const":
        return False
    try:
        return eval_expr(node, 0.0) == 0.0
    except EvalDomainError:
        return False


def slope_at(node, x):
    """Derivative value at a point (None on domain error)."""
    try:
        return eval_expr(derivative(node), x)
    except EvalDomainError:
        return None


# --- compilation -------------------------------------------------------------


def compile_rpn(node):
    """Compile to (ops, args, consts, stack_need) for the stack-machine kernels."""
    ops, args, consts = [], [], []

    def emit(n):
        kind = n[0]
        if kind == "const":
            ops.append(OP_CONST)
            args.append(len(consts))
            consts.append(float(n[1]))
        elif kind == "var":
            ops.append(OP_VAR)
            args.append(0)
        elif kind == "pow":
            emit(n[1])
            ops.append(OP_POW)
            args.append(int(n[2]))
        else:
            for child in n[1:]:
                emit(child)
            code = {
                "add": OP_ADD,
                "sub": OP_SUB,
                "mul": OP_MUL,
                "div": OP_DIV,
                "sgn": OP_SGN,
                "exp": OP_EXP,
                "neg": OP_NEG,
            }[kind]
            ops.append(code)
            args.append(0)

    emit(node)
    depth = need = 0
    for op in ops:
        if op in (OP_CONST, OP_VAR):
            depth += 1
        elif op in (OP_ADD, OP_SUB, OP_MUL, OP_DIV):
            depth -= 1
        need = max(need, depth)
    return ops, args, consts, need


# --- numeric inversion ---------------------------------------------------------

MONOTONE_GRID = 17


def check_monotone(node, lo, hi, points=MONOTONE_GRID):
    """Raise MonotonicityError if secant slopes flip sign on a grid over [lo, hi]."""
    xs = [lo + (hi - lo) * i / (points - 1) for i in range(points)]
    ys = [eval_expr(node, x) for x in xs]
    direction = 0
    for a, b in zip(ys, ys[1:]):
        if b == a:
            continue
        step = 1 if b > a else -1
        if direction == 0:
            direction = step
        elif step != direction:
            raise MonotonicityError(
                f"law is not monotone on [{lo!r}, {hi!r}]"
            )
    return direction


def invert_monotone(node, y, lo, hi, tol=1e-10, max_iter=200):
    """Solve law(x) = y on [lo, hi] by bisection.

    The law must be strictly monotone on the bracket (checked on a grid) and
    the bracket must enclose the target value.
    """
    if not (hi > lo):
        raise BracketError(f"empty bracket [{lo!r}, {hi!r}]")
    direction = check_monotone(node, lo, hi)
    f_lo = eval_expr(node, lo) - y
    f_hi = eval_expr(node, hi) - y
    if abs(f_lo) <= tol:
        return lo
    if abs(f_hi) <= tol:
        return hi
    if f_lo * f_hi > 0:
        raise BracketError(f"bracket [{lo!r}, {hi!r}] does not enclose target {y!r}")
    if direction == 0:
        raise MonotonicityError("law is constant on the bracket")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = eval_expr(node, mid) - y
        if abs(f_mid) <= tol:
            return mid
        if (f_mid > 0) == (f_hi > 0):
            hi, f_hi = mid, f_mid
        else:
            lo, f_lo = mid, f_mid
    return 0.5 * (lo + hi)
