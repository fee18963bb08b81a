"""Pure-Python reference backend.

Mirrors the compiled kernel operation-for-operation (same arithmetic order,
same overflow conventions) so that results are bit-identical between the
two backends.
"""

import math

import numpy as np

NAME = "pure"

BISECT_TOL = 1e-10
BISECT_MAX_ITER = 200
BRACKET_START = 1.0
BRACKET_LIMIT = 1e12

_INF = float("inf")
_NAN = float("nan")


def _pow(base, k):
    # match C pow(): overflow saturates instead of raising
    try:
        return math.pow(base, float(k))
    except OverflowError:
        return math.copysign(_INF, base) if k % 2 else _INF
    except ValueError:
        return _NAN


def _exp(v):
    try:
        return math.exp(v)
    except OverflowError:
        return _INF


def _rpn(prog, law, x):
    ops, args, consts, lo, hi = (
        prog.law_ops,
        prog.law_arg,
        prog.law_const,
        prog.law_ptr[law],
        prog.law_ptr[law + 1],
    )
    stack = []
    for i in range(lo, hi):
        op = ops[i]
        if op == 0:
            stack.append(float(consts[args[i]]))
        elif op == 1:
            stack.append(float(x))
        elif op == 2:
            v = stack.pop()
            stack[-1] = stack[-1] + v
        elif op == 3:
            v = stack.pop()
            stack[-1] = stack[-1] - v
        elif op == 4:
            v = stack.pop()
            stack[-1] = stack[-1] * v
        elif op == 5:
            v = stack.pop()
            stack[-1] = stack[-1] / v if v != 0.0 else _NAN
        elif op == 6:
            stack[-1] = _pow(stack[-1], args[i])
        elif op == 7:
            v = stack[-1]
            stack[-1] = float((v > 0) - (v < 0))
        elif op == 8:
            stack[-1] = _exp(stack[-1])
        else:
            stack[-1] = -stack[-1]
    return stack[0]


def _solve(prog, law, y):
    w = BRACKET_START
    f_lo = _rpn(prog, law, -w) - y
    f_hi = _rpn(prog, law, w) - y
    while f_lo * f_hi > 0.0 and w < BRACKET_LIMIT:
        w *= 2.0
        f_lo = _rpn(prog, law, -w) - y
        f_hi = _rpn(prog, law, w) - y
    if abs(f_lo) <= BISECT_TOL:
        return -w
    if abs(f_hi) <= BISECT_TOL:
        return w
    if not (f_lo * f_hi < 0.0):
        return _NAN
    lo, hi = -w, w
    for _ in range(BISECT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        f_mid = _rpn(prog, law, mid) - y
        if abs(f_mid) <= BISECT_TOL:
            return mid
        if (f_mid > 0.0) == (f_hi > 0.0):
            hi, f_hi = mid, f_mid
        else:
            lo, f_lo = mid, f_mid
    return 0.5 * (lo + hi)


def eval_plan(prog, x, u, regs):
    """Execute the instruction list into ``regs`` (a Python list or 1-D array)."""
    n = prog.n_states
    for i in range(n):
        regs[i] = float(x[i])
    for i in range(prog.n_inputs):
        regs[n + i] = float(u[i])
    op, dst, a, b = prog.op, prog.dst, prog.a, prog.b
    for i in range(len(op)):
        code = op[i]
        if code == 0:
            regs[dst[i]] = regs[a[i]]
        elif code == 1:
            regs[dst[i]] = _rpn(prog, a[i], regs[b[i]])
        elif code == 2:
            regs[dst[i]] = _solve(prog, a[i], regs[b[i]])
        else:
            acc = 0.0
            off = b[i]
            for j in range(a[i]):
                acc += prog.lin_coef[off + j] * regs[prog.lin_src[off + j]]
            regs[dst[i]] = acc
    return 0


def _derivs(prog, regs, out):
    nd = len(prog.deriv_src)
    for i in range(nd):
        out[i] = regs[prog.deriv_src[i]]
    for j in range(len(prog.quad_src)):
        out[nd + j] = regs[prog.quad_src[j]]


def integrate_plan(prog, x0, u_grid, dt, X, REC):
    """Classical fixed-step RK4 with zero-order-hold inputs.

    ``X`` is (n_steps+1, n_dyn+n_quad); ``REC`` is (n_steps+1, n_reg) and
    receives the register table evaluated at each grid point with that
    step's held input.  Returns -1 on success or the index of the first
    step whose end state is non-finite.
    """
    n_steps = X.shape[0] - 1
    n_dyn = len(prog.deriv_src)
    n_all = n_dyn + len(prog.quad_src)
    regs = [0.0] * prog.n_reg
    x = [float(v) for v in x0]
    k1 = [0.0] * n_all
    k2 = [0.0] * n_all
    k3 = [0.0] * n_all
    k4 = [0.0] * n_all
    xs = [0.0] * n_dyn
    X[0, :] = x
    for step in range(n_steps):
        u = u_grid[step]
        eval_plan(prog, x, u, regs)
        REC[step, :] = regs
        _derivs(prog, regs, k1)
        for i in range(n_dyn):
            xs[i] = x[i] + 0.5 * dt * k1[i]
        eval_plan(prog, xs, u, regs)
        _derivs(prog, regs, k2)
        for i in range(n_dyn):
            xs[i] = x[i] + 0.5 * dt * k2[i]
        eval_plan(prog, xs, u, regs)
        _derivs(prog, regs, k3)
        for i in range(n_dyn):
            xs[i] = x[i] + dt * k3[i]
        eval_plan(prog, xs, u, regs)
        _derivs(prog, regs, k4)
        ok = True
        for i in range(n_all):
            v = x[i] + (dt / 6.0) * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i])
            if not math.isfinite(v):
                ok = False
            x[i] = v
        X[step + 1, :] = x
        if not ok:
            return step
    eval_plan(prog, x, u_grid[n_steps], regs)
    REC[n_steps, :] = regs
    return -1


def eval_plan_batch(prog, X_rows, U_rows, out):
    """Register tables for many (x, u) rows; used to recompute observables."""
    regs = [0.0] * prog.n_reg
    for i in range(X_rows.shape[0]):
        eval_plan(prog, X_rows[i], U_rows[i], regs)
        out[i, :] = regs
    return 0


def _as_contig(arr, dtype):
    return np.ascontiguousarray(arr, dtype=dtype)
