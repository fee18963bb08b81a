# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel backend.

Executes the same instruction encoding as the pure backend (see package
docstring) with identical arithmetic order and overflow conventions, so
results are bit-identical between backends.
"""

import numpy as np

from libc.math cimport exp as c_exp, fabs, isfinite, pow as c_pow

NAME = "compiled"

BISECT_TOL = 1e-10
BISECT_MAX_ITER = 200
BRACKET_START = 1.0
BRACKET_LIMIT = 1e12

cdef double D_NAN = float("nan")
cdef double D_TOL = 1e-10
cdef int I_MAXIT = 200
cdef double D_W0 = 1.0
cdef double D_WMAX = 1e12


cdef double _rpn(const int[::1] law_ops, const int[::1] law_arg,
                 const double[::1] law_const, int lo, int hi,
                 double x, double* stack) noexcept nogil:
    cdef int i, op
    cdef int sp = 0
    cdef double v
    for i in range(lo, hi):
        op = law_ops[i]
        if op == 0:
            stack[sp] = law_const[law_arg[i]]
            sp += 1
        elif op == 1:
            stack[sp] = x
            sp += 1
        elif op == 2:
            sp -= 1
            stack[sp - 1] = stack[sp - 1] + stack[sp]
        elif op == 3:
            sp -= 1
            stack[sp - 1] = stack[sp - 1] - stack[sp]
        elif op == 4:
            sp -= 1
            stack[sp - 1] = stack[sp - 1] * stack[sp]
        elif op == 5:
            sp -= 1
            if stack[sp] == 0.0:
                stack[sp - 1] = D_NAN
            else:
                stack[sp - 1] = stack[sp - 1] / stack[sp]
        elif op == 6:
            stack[sp - 1] = c_pow(stack[sp - 1], <double> law_arg[i])
        elif op == 7:
            v = stack[sp - 1]
            stack[sp - 1] = <double> ((v > 0.0) - (v < 0.0))
        elif op == 8:
            stack[sp - 1] = c_exp(stack[sp - 1])
        else:
            stack[sp - 1] = -stack[sp - 1]
    return stack[0]


cdef double _solve(const int[::1] law_ops, const int[::1] law_arg,
                   const double[::1] law_const, int lo, int hi,
                   double y, double* stack) noexcept nogil:
    cdef double w = D_W0
    cdef double f_lo = _rpn(law_ops, law_arg, law_const, lo, hi, -w, stack) - y
    cdef double f_hi = _rpn(law_ops, law_arg, law_const, lo, hi, w, stack) - y
    cdef double a, b, mid, f_mid
    cdef int it
    while f_lo * f_hi > 0.0 and w < D_WMAX:
        w *= 2.0
        f_lo = _rpn(law_ops, law_arg, law_const, lo, hi, -w, stack) - y
        f_hi = _rpn(law_ops, law_arg, law_const, lo, hi, w, stack) - y
    if fabs(f_lo) <= D_TOL:
        return -w
    if fabs(f_hi) <= D_TOL:
        return w
    if not (f_lo * f_hi < 0.0):
        return D_NAN
    a = -w
    b = w
    for it in range(I_MAXIT):
        mid = 0.5 * (a + b)
        f_mid = _rpn(law_ops, law_arg, law_const, lo, hi, mid, stack) - y
        if fabs(f_mid) <= D_TOL:
            return mid
        if (f_mid > 0.0) == (f_hi > 0.0):
            b = mid
            f_hi = f_mid
        else:
            a = mid
            f_lo = f_mid
    return 0.5 * (a + b)


cdef void _eval(const int[::1] op, const int[::1] dst, const int[::1] aarg,
                const int[::1] barg,
                const double[::1] lin_coef, const int[::1] lin_src,
                const int[::1] law_ops, const int[::1] law_arg,
                const double[::1] law_const, const int[::1] law_ptr,
                int n_states, int n_inputs,
                const double* x, const double* u,
                double* regs, double* stack) noexcept nogil:
    cdef int i, j, code, law, off
    cdef double acc
    for i in range(n_states):
        regs[i] = x[i]
    for i in range(n_inputs):
        regs[n_states + i] = u[i]
    for i in range(op.shape[0]):
        code = op[i]
        if code == 0:
            regs[dst[i]] = regs[aarg[i]]
        elif code == 1:
            law = aarg[i]
            regs[dst[i]] = _rpn(law_ops, law_arg, law_const,
                                law_ptr[law], law_ptr[law + 1], regs[barg[i]], stack)
        elif code == 2:
            law = aarg[i]
            regs[dst[i]] = _solve(law_ops, law_arg, law_const,
                                  law_ptr[law], law_ptr[law + 1], regs[barg[i]], stack)
        else:
            acc = 0.0
            off = barg[i]
            for j in range(aarg[i]):
                acc += lin_coef[off + j] * regs[lin_src[off + j]]
            regs[dst[i]] = acc


def eval_plan(prog, x, u, regs):
    """Execute the instruction list into regs (1-D float64 array)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    u = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[::1] xv = x
    cdef double[::1] uv = u if u.shape[0] else np.zeros(1)
    cdef double[::1] rv = regs
    stack_arr = np.zeros(_stack_need(prog))
    cdef double[::1] sv = stack_arr
    cdef const int[::1] op = prog.op
    cdef const int[::1] dst = prog.dst
    cdef const int[::1] a = prog.a
    cdef const int[::1] b = prog.b
    cdef const double[::1] lin_coef = prog.lin_coef
    cdef const int[::1] lin_src = prog.lin_src
    cdef const int[::1] law_ops = prog.law_ops
    cdef const int[::1] law_arg = prog.law_arg
    cdef const double[::1] law_const = prog.law_const
    cdef const int[::1] law_ptr = prog.law_ptr
    cdef int n_states = prog.n_states
    cdef int n_inputs = prog.n_inputs
    _eval(op, dst, a, b, lin_coef, lin_src, law_ops, law_arg, law_const, law_ptr,
          n_states, n_inputs,
          &xv[0] if xv.shape[0] else NULL,
          &uv[0], &rv[0], &sv[0] if sv.shape[0] else NULL)
    return 0


def _stack_need(prog):
    # worst-case RPN stack depth: every op pushes at most one slot
    return max(16, prog.law_ops.shape[0] + 1)


def integrate_plan(prog, x0, u_grid, dt_in, X, REC):
    """Classical fixed-step RK4 with zero-order-hold inputs; mirrors pure.py."""
    cdef const int[::1] op = prog.op
    cdef const int[::1] dst = prog.dst
    cdef const int[::1] a = prog.a
    cdef const int[::1] b = prog.b
    cdef const double[::1] lin_coef = prog.lin_coef
    cdef const int[::1] lin_src = prog.lin_src
    cdef const int[::1] law_ops = prog.law_ops
    cdef const int[::1] law_arg = prog.law_arg
    cdef const double[::1] law_const = prog.law_const
    cdef const int[::1] law_ptr = prog.law_ptr
    cdef const int[::1] deriv_src = prog.deriv_src
    cdef const int[::1] quad_src = prog.quad_src
    cdef int n_states = prog.n_states
    cdef int n_inputs = prog.n_inputs
    cdef int n_reg = prog.n_reg
    cdef double dt = dt_in

    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    u_grid = np.ascontiguousarray(u_grid, dtype=np.float64)
    cdef double[:, ::1] Xv = X
    cdef double[:, ::1] RECv = REC
    cdef const double[:, ::1] Uv = u_grid

    cdef int n_steps = Xv.shape[0] - 1
    cdef int n_dyn = deriv_src.shape[0]
    cdef int n_quad = quad_src.shape[0]
    cdef int n_all = n_dyn + n_quad

    regs_arr = np.zeros(n_reg)
    stack_arr = np.zeros(_stack_need(prog))
    work = np.zeros(5 * n_all + n_dyn + max(n_all, 1))
    cdef double[::1] regs = regs_arr
    cdef double[::1] stackv = stack_arr
    cdef double[::1] workv = work
    cdef double* rg = &regs[0]
    cdef double* st = &stackv[0] if stackv.shape[0] else NULL
    cdef double* x = &workv[0]
    cdef double* k1 = x + n_all
    cdef double* k2 = k1 + n_all
    cdef double* k3 = k2 + n_all
    cdef double* k4 = k3 + n_all
    cdef double* xs = k4 + n_all

    cdef int i, step
    cdef bint ok
    cdef double v
    cdef const double* u
    for i in range(n_all):
        x[i] = x0[i]
        Xv[0, i] = x[i]
    for step in range(n_steps):
        u = &Uv[step, 0] if Uv.shape[1] else NULL
        _eval(op, dst, a, b, lin_coef, lin_src, law_ops, law_arg, law_const, law_ptr,
              n_states, n_inputs, x, u, rg, st)
        for i in range(n_reg):
            RECv[step, i] = rg[i]
        for i in range(n_dyn):
            k1[i] = rg[deriv_src[i]]
        for i in range(n_quad):
            k1[n_dyn + i] = rg[quad_src[i]]
        for i in range(n_dyn):
            xs[i] = x[i] + 0.5 * dt * k1[i]
        _eval(op, dst, a, b, lin_coef, lin_src, law_ops, law_arg, law_const, law_ptr,
              n_states, n_inputs, xs, u, rg, st)
        for i in range(n_dyn):
            k2[i] = rg[deriv_src[i]]
        for i in range(n_quad):
            k2[n_dyn + i] = rg[quad_src[i]]
        for i in range(n_dyn):
            xs[i] = x[i] + 0.5 * dt * k2[i]
        _eval(op, dst, a, b, lin_coef, lin_src, law_ops, law_arg, law_const, law_ptr,
              n_states, n_inputs, xs, u, rg, st)
        for i in range(n_dyn):
            k3[i] = rg[deriv_src[i]]
        for i in range(n_quad):
            k3[n_dyn + i] = rg[quad_src[i]]
        for i in range(n_dyn):
            xs[i] = x[i] + dt * k3[i]
        _eval(op, dst, a, b, lin_coef, lin_src, law_ops, law_arg, law_const, law_ptr,
              n_states, n_inputs, xs, u, rg, st)
        for i in range(n_dyn):
            k4[i] = rg[deriv_src[i]]
        for i in range(n_quad):
            k4[n_dyn + i] = rg[quad_src[i]]
        ok = True
        for i in range(n_all):
            v = x[i] + (dt / 6.0) * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i])
            if not isfinite(v):
                ok = False
            x[i] = v
            Xv[step + 1, i] = v
        if not ok:
            return step
    u = &Uv[n_steps, 0] if Uv.shape[1] else NULL
    _eval(op, dst, a, b, lin_coef, lin_src, law_ops, law_arg, law_const, law_ptr,
          n_states, n_inputs, x, u, rg, st)
    for i in range(n_reg):
        RECv[n_steps, i] = rg[i]
    return -1


def eval_plan_batch(prog, X_rows, U_rows, out):
    """Register tables for many (x, u) rows."""
    cdef const int[::1] op = prog.op
    cdef const int[::1] dst = prog.dst
    cdef const int[::1] a = prog.a
    cdef const int[::1] b = prog.b
    cdef const double[::1] lin_coef = prog.lin_coef
    cdef const int[::1] lin_src = prog.lin_src
    cdef const int[::1] law_ops = prog.law_ops
    cdef const int[::1] law_arg = prog.law_arg
    cdef const double[::1] law_const = prog.law_const
    cdef const int[::1] law_ptr = prog.law_ptr
    cdef int n_states = prog.n_states
    cdef int n_inputs = prog.n_inputs
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X_rows, dtype=np.float64)
    cdef const double[:, ::1] Uv = np.ascontiguousarray(U_rows, dtype=np.float64)
    cdef double[:, ::1] outv = out
    regs_arr = np.zeros(prog.n_reg)
    stack_arr = np.zeros(_stack_need(prog))
    cdef double[::1] regs = regs_arr
    cdef double[::1] stackv = stack_arr
    cdef double* st = &stackv[0] if stackv.shape[0] else NULL
    cdef int i, j
    for i in range(Xv.shape[0]):
        _eval(op, dst, a, b, lin_coef, lin_src, law_ops, law_arg, law_const, law_ptr,
              n_states, n_inputs,
              &Xv[i, 0] if Xv.shape[1] else NULL,
              &Uv[i, 0] if Uv.shape[1] else NULL,
              &regs[0], st)
        for j in range(prog.n_reg):
            outv[i, j] = regs[j]
    return 0
