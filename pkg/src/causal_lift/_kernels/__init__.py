"""Simulation kernel backends.

The plan compiler in :mod:`causal_lift.simulate` lowers a causal evaluation
order to flat instruction arrays; the backends here execute them.  The
compiled Cython backend is preferred; the pure-Python backend implements
bit-identical semantics and is selected when the extension is unavailable
or when ``CAUSAL_LIFT_PURE`` is set in the environment.

Instruction encoding (arrays ``op, dst, a, b``):

    0 COPY  regs[dst] = regs[a]
    1 LAW   regs[dst] = rpn(law a, regs[b])
    2 INV   regs[dst] = solve rpn(law a, z) == regs[b] by expanding bisection
    3 LIN   regs[dst] = sum(lin_coef[b+i] * regs[lin_src[b+i]] for i < a)

Law programs are RPN opcode/arg/const arrays sliced by ``law_ptr``; the RPN
opcodes are those of :mod:`causal_lift.expr`.  Division by zero and failed
bisection brackets produce NaN, which the integrator reports as divergence.
"""

import os

from . import pure

if os.environ.get("CAUSAL_LIFT_PURE"):
    _impl = pure
else:
    try:
        from . import _core as _impl
    except ImportError:
        _impl = pure


def active_backend():
    """The backend module used by default ('compiled' or 'pure')."""
    return _impl


def backend_name():
    return _impl.NAME


def get_backend(name=None):
    if name in (None, "default"):
        return _impl
    if name == "pure":
        return pure
    if name == "compiled":
        from . import _core

        return _core
    raise ValueError(f"unknown backend {name!r}")
