"""Ground-truth simulation: exogenous signals, ODE derivation, RK4 integration.

The causal evaluation order from :mod:`causal_lift.causality` is lowered to
flat instruction arrays (see ``_kernels``) and integrated with classical
fixed-step RK4 under zero-order-hold inputs.  Alongside the model states,
the integrator carries quadrature states: exact running integrals of the
anticausal auxiliary variables, which the integrated-observable lifting
scheme uses as replacement observables.  Each trajectory records, at every
grid point, all auxiliary-variable outputs and every law-element input, so
datasets for any lifting scheme can be assembled from one simulation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import expr as _expr
from ._kernels import active_backend, get_backend
from .causality import CausalAssignment, assign_causality, classify_observables
from .errors import ConfigError, DivergenceError, SchemaMismatchError
from .netmodel import NetworkModel

SIGNAL_KINDS = ("square", "random", "sine", "zero")


@dataclass(frozen=True)
class InputSignal:
    """Deterministic exogenous input u(t).

    kind 'square': amplitude * sign of the half-period of (t + phase);
    'sine': amplitude * sin(2*pi*(t+phase)/period); 'random': piecewise
    constant, levels uniform in [-amplitude, amplitude] held for ``hold``
    seconds, reproducible from the seed; 'zero': all zeros.  Square and
    sine drive all channels identically; random channels are independent.
    """

    kind: str
    amplitude: float = 1.0
    period: float = 2.0
    hold: float = 1.0
    phase: float = 0.0
    seed: int = 0
    channels: int = 1
    duration: float | None = None

    def __post_init__(self):
        if self.kind not in SIGNAL_KINDS:
            raise ConfigError(f"unknown signal kind {self.kind!r}")
        if self.kind in ("square", "sine") and not self.period > 0:
            raise ConfigError("signal period must be > 0")
        if self.kind == "random" and not self.hold > 0:
            raise ConfigError("signal hold time must be > 0")
        if self.phase < 0:
            raise ConfigError("signal phase must be >= 0")

    def values(self, times) -> np.ndarray:
        """Sample u on a time grid; shape (len(times), channels)."""
        times = np.asarray(times, dtype=float)
        shifted = times + self.phase
        out = np.zeros((times.size, self.channels))
        if self.kind == "zero":
            return out
        if self.kind == "square":
            wave = np.where(np.mod(shifted, self.period) < 0.5 * self.period, 1.0, -1.0)
            out[:] = (self.amplitude * wave)[:, None]
        elif self.kind == "sine":
            out[:] = (self.amplitude * np.sin(2.0 * np.pi * shifted / self.period))[:, None]
        else:  # random
            index = np.floor(shifted / self.hold).astype(np.int64)
            n_levels = int(index.max()) + 1 if index.size else 1
            for ch in range(self.channels):
                rng = np.random.default_rng([self.seed, ch])
                levels = rng.uniform(-self.amplitude, self.amplitude, n_levels)
                out[:, ch] = levels[index]
        return out

    def sample(self, t: float) -> np.ndarray:
        return self.values([t])[0]


def generate_signal(spec: dict, seed: int | None = None) -> InputSignal:
    """Build an InputSignal from a plain spec dict (kind plus parameters)."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind is None:
        raise ConfigError("signal spec needs a 'kind'")
    if seed is not None:
        spec["seed"] = int(seed)
    try:
        return InputSignal(kind=kind, **spec)
    except TypeError as exc:
        raise ConfigError(f"bad signal spec: {exc}") from exc


@dataclass(frozen=True)
class Trajectory:
    """Sampled ground truth on a uniform grid.

    X holds the model states (order = state_order), Q the quadrature
    states (running integrals of anticausal auxiliary outputs), H every
    auxiliary-variable output, EIN every law-element input, U the held
    input of each step.  All share the grid length.
    """

    times: np.ndarray
    X: np.ndarray
    H: np.ndarray
    U: np.ndarray
    Q: np.ndarray
    EIN: np.ndarray
    dt: float
    state_labels: tuple
    aux_labels: tuple  # element ids, lexicographic
    quad_labels: tuple  # 'int_<elem>'
    ein_labels: tuple  # 'in_<elem>'
    ode: "CompiledOde" = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        rows = {self.times.shape[0], self.X.shape[0], self.H.shape[0],
                self.U.shape[0], self.Q.shape[0], self.EIN.shape[0]}
        if len(rows) != 1:
            raise SchemaMismatchError("trajectory arrays disagree on grid length")

    @property
    def n_rows(self):
        return self.times.shape[0]

    def aux_column(self, elem_id):
        return self.H[:, self.aux_labels.index(elem_id)]

    def quad_column(self, elem_id):
        return self.Q[:, self.quad_labels.index(f"int_{elem_id}")]

    def ein_column(self, elem_id):
        return self.EIN[:, self.ein_labels.index(f"in_{elem_id}")]

    def with_arrays(self, **arrays):
        return replace(self, **arrays)


class _Program:
    """Flat instruction arrays consumed by the kernel backends."""

    __slots__ = (
        "op", "dst", "a", "b", "lin_coef", "lin_src",
        "law_ops", "law_arg", "law_const", "law_ptr",
        "n_states", "n_inputs", "n_reg", "deriv_src", "quad_src",
    )

    def __init__(self, **kw):
        for key, value in kw.items():
            setattr(self, key, value)


def _compile_program(model, assignment, quad_ids):
    reg = {}
    for sym in model.state_order:
        reg[f"x.{sym}"] = len(reg)
    for ch in range(model.n_inputs):
        reg[f"u.{ch}"] = len(reg)
    for step in assignment.steps:
        reg[step.target] = len(reg)

    laws = {}
    law_ops, law_arg, law_const, law_ptr = [], [], [], [0]

    def law_index(elem_id, direction):
        key = (elem_id, direction)
        if key not in laws:
            element = model.elements[elem_id]
            expr_obj = element.law if direction == "law" else element.inverse
            ops, args, consts, _ = _expr.compile_rpn(expr_obj.ast)
            laws[key] = len(law_ptr) - 1
            shift = len(law_const)
            law_ops.extend(ops)
            law_arg.extend(
                arg + shift if op == _expr.OP_CONST else arg
                for op, arg in zip(ops, args)
            )
            law_const.extend(consts)
            law_ptr.append(len(law_ops))
        return laws[key]

    op, dst, a, b, lin_coef, lin_src = [], [], [], [], [], []
    for step in assignment.steps:
        if step.op == "copy":
            op.append(0)
            a.append(reg[step.source])
            b.append(0)
        elif step.op in ("law", "invert"):
            op.append(1 if step.op == "law" else 2)
            a.append(law_index(step.element, step.direction))
            b.append(reg[step.source])
        else:
            op.append(3)
            a.append(len(step.terms))
            b.append(len(lin_coef))
            for coef, var in step.terms:
                lin_coef.append(float(coef))
                lin_src.append(reg[var])
        dst.append(reg[step.target])

    deriv_src = [reg[assignment.state_reads[sym]] for sym in model.state_order]
    quad_src = [reg[assignment.output_var[elem]] for elem in quad_ids]

    def i32(xs):
        return np.asarray(xs, dtype=np.int32)

    def f64(xs):
        return np.asarray(xs, dtype=np.float64)

    program = _Program(
        op=i32(op), dst=i32(dst), a=i32(a), b=i32(b),
        lin_coef=f64(lin_coef), lin_src=i32(lin_src),
        law_ops=i32(law_ops), law_arg=i32(law_arg),
        law_const=f64(law_const), law_ptr=i32(law_ptr),
        n_states=len(model.state_order), n_inputs=model.n_inputs,
        n_reg=len(reg), deriv_src=i32(deriv_src), quad_src=i32(quad_src),
    )
    return program, reg


class CompiledOde:
    """Executable causal plan: a pure map (t, x, u) -> dx/dt plus recording
    metadata for trajectories."""

    def __init__(self, model, assignment, quad_ids, backend=None):
        self.model = model
        self.assignment = assignment
        self.quad_ids = tuple(quad_ids)
        self.backend = get_backend(backend) if backend else active_backend()
        self.program, self.reg = _compile_program(model, assignment, self.quad_ids)
        plan_aux = classify_observables(model, assignment).aux
        self.aux_ids = plan_aux
        lawful = sorted(e.id for e in model.elements.values() if not e.is_source)
        self.ein_ids = tuple(lawful)
        self._aux_reg = np.asarray(
            [self.reg[assignment.output_var[e]] for e in self.aux_ids], dtype=np.intp
        )
        self._ein_reg = np.asarray(
            [self.reg[assignment.input_var[e]] for e in self.ein_ids], dtype=np.intp
        )

    @property
    def n(self):
        return len(self.model.state_order)

    @property
    def r(self):
        return self.model.n_inputs

    def eval_vars(self, x, u):
        """All plan variables (the register table) at one point."""
        regs = np.zeros(self.program.n_reg)
        self.backend.eval_plan(self.program, np.asarray(x, float), np.asarray(u, float), regs)
        return regs

    def eval_vars_batch(self, X, U):
        X = np.ascontiguousarray(X, dtype=float)
        U = np.ascontiguousarray(U, dtype=float)
        out = np.zeros((X.shape[0], self.program.n_reg))
        self.backend.eval_plan_batch(self.program, X, U, out)
        return out

    def __call__(self, t, x, u):
        regs = self.eval_vars(x, u)
        return regs[self.program.deriv_src.astype(np.intp)]

    def aux_from_regs(self, regs):
        return regs[..., self._aux_reg]

    def ein_from_regs(self, regs):
        return regs[..., self._ein_reg]


def derive_ode(model: NetworkModel, assignment: CausalAssignment | None = None,
               quadratures=None, backend=None) -> CompiledOde:
    """Lower a model + causal assignment to an executable ODE.

    ``quadratures`` selects which auxiliary outputs get running-integral
    states (default: all anticausal ones).
    """
    if assignment is None:
        assignment = assign_causality(model)
    if quadratures is None:
        quadratures = classify_observables(model, assignment).anticausal
    return CompiledOde(model, assignment, quadratures, backend=backend)


def integrate(ode: CompiledOde, x0, signal: InputSignal, t_final: float,
              dt: float) -> Trajectory:
    """Fixed-step RK4 with the input held constant within each step.

    Auxiliary variables and element inputs are recorded at every grid point
    (evaluated with that step's held input); quadrature states are advanced
    by the same RK4 stages as the model states.
    """
    if not dt > 0:
        raise ConfigError("dt must be > 0")
    n_steps = int(round(t_final / dt))
    if n_steps < 1 or abs(n_steps * dt - t_final) > 1e-9 * max(1.0, abs(t_final)):
        raise ConfigError(f"dt={dt!r} does not divide t_final={t_final!r}")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (ode.n,):
        raise SchemaMismatchError(f"x0 must have shape ({ode.n},), got {x0.shape}")
    if signal.channels < ode.r:
        raise SchemaMismatchError(
            f"signal provides {signal.channels} channels, model needs {ode.r}"
        )
    times = np.arange(n_steps + 1) * dt
    u_grid = np.ascontiguousarray(signal.values(times)[:, : max(ode.r, 1)])
    if ode.r == 0:
        u_grid = np.zeros((n_steps + 1, 0))
    n_all = ode.n + len(ode.quad_ids)
    X = np.zeros((n_steps + 1, n_all))
    REC = np.zeros((n_steps + 1, ode.program.n_reg))
    x_full = np.concatenate([x0, np.zeros(len(ode.quad_ids))])
    status = ode.backend.integrate_plan(ode.program, x_full, u_grid, dt, X, REC)
    if status >= 0:
        bad_time = (status + 1) * dt
        raise DivergenceError(
            f"non-finite state at t={bad_time:.6g} (step {status + 1})", bad_time
        )
    return Trajectory(
        times=times,
        X=X[:, : ode.n],
        H=REC[:, ode._aux_reg],
        U=u_grid,
        Q=X[:, ode.n:],
        EIN=REC[:, ode._ein_reg],
        dt=dt,
        state_labels=tuple(ode.model.state_order),
        aux_labels=ode.aux_ids,
        quad_labels=tuple(f"int_{e}" for e in ode.quad_ids),
        ein_labels=tuple(f"in_{e}" for e in ode.ein_ids),
        ode=ode,
    )


def simulate_model(model, x0, signal, t_final, dt, backend=None):
    """Convenience wrapper: assign causality, derive the ODE, integrate."""
    ode = derive_ode(model, backend=backend)
    return integrate(ode, x0, signal, t_final, dt)


def refine_dt(model, dt):
    """Shrink dt so augmented storage elements are resolved: dt <= value/10.

    The value of an augmented element is the slope denominator of its linear
    law (mass or capacitance); integer-divide so the refined dt still divides
    the original grid.
    """
    limit = dt
    for elem in model.elements.values():
        if elem.augmented:
            slope = elem.law.slope_at(0.0)
            value = 1.0 / slope if slope else None
            if value and value > 0:
                limit = min(limit, value / 10.0)
    if limit >= dt:
        return dt
    factor = int(np.ceil(dt / limit))
    return dt / factor


def export_trajectory_csv(traj: Trajectory, path):
    """Write t, states, auxiliary variables, inputs with indexed headers."""
    header = ["t"]
    header += [f"x{i}" for i in range(traj.X.shape[1])]
    header += [f"eta{i}" for i in range(traj.H.shape[1])]
    header += [f"u{i}" for i in range(traj.U.shape[1])]
    data = np.column_stack([traj.times, traj.X, traj.H, traj.U])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in data:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_trajectory_csv(path):
    """Read back an exported trajectory as (times, X, H, U) arrays."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [[float(v) for v in line.strip().split(",")] for line in fh if line.strip()]
    data = np.asarray(rows) if rows else np.zeros((0, len(header)))
    # headers are ordered t, x*, eta*, u*
    n_x = len([h for h in header if h[0] == "x"])
    n_eta = len([h for h in header if h.startswith("eta")])
    times = data[:, 0]
    X = data[:, 1 : 1 + n_x]
    H = data[:, 1 + n_x : 1 + n_x + n_eta]
    U = data[:, 1 + n_x + n_eta :]
    return times, X, H, U
