"""Causal analysis of network models.

Assigns integral causality (storage elements integrate their inputs),
derives an acyclic evaluation order for all junction variables, classifies
auxiliary variables (outputs of nonlinear elements) as causal or anticausal
by tracing which base signals can reach them, and implements the two
remedies for anticausal observables:

* physical augmentation — add a small linear inertia (loop) or capacitance
  (node) at the resistor's junction so the resistor output is re-routed
  through the new state;
* integrated observables — replace an anticausal observable by its time
  integral, whose derivative is the observable itself and therefore causal.

Variable naming: ``x.<sym>`` states, ``u.<ch>`` input channels,
``f@<junction>`` / ``e@<junction>`` common junction variables,
``e.<elem>`` / ``f.<elem>`` per-element port variables.
"""

from __future__ import annotations

import heapq
import warnings
from dataclasses import dataclass, replace

from .errors import (
    AlgebraicLoopError,
    AugmentationError,
    CausalConflictError,
    DirectDriveWarning,
    ModelValidationError,
    NotIntegralCausalityError,
)
from .expr import check_monotone
from .netmodel import ConstitutiveExpr, Element, Junction, NetworkModel, _validate

# Grid half-width used for the compile-time monotonicity check of laws that
# must be inverted numerically during simulation.
MONOTONE_CHECK_SPAN = 4.0


@dataclass(frozen=True)
class Step:
    """One assignment in the causal evaluation order."""

    target: str
    op: str  # 'law' | 'invert' | 'balance' | 'copy'
    element: str | None = None
    direction: str | None = None  # which stored expression: 'law' or 'inverse'
    numeric: bool = False  # True when the stored expression must be bisected
    source: str | None = None
    terms: tuple = ()  # balance: ((coefficient, var), ...)

    def inputs(self):
        if self.op == "balance":
            return [v for _, v in self.terms]
        return [self.source]

    def render(self):
        if self.op == "balance":
            parts = []
            for coef, var in self.terms:
                sign = "-" if coef < 0 else ("+" if parts else "")
                mag = abs(coef)
                parts.append(f"{sign}{'' if mag == 1 else f'{mag}*'}{var}")
            return f"{self.target} = {' '.join(parts)}"
        if self.op == "copy":
            return f"{self.target} = {self.source}"
        tag = {"law": "", "invert": "^-1"}[self.op]
        suffix = "~bisect" if self.numeric else ""
        return f"{self.target} = {self.element}.{self.direction}{tag}{suffix}({self.source})"


@dataclass(frozen=True)
class CausalAssignment:
    """Integral-causality roles plus a topologically ordered evaluation plan."""

    model: NetworkModel
    roles: dict  # element id -> output variable kind: 'effort' | 'flow'
    steps: tuple  # Steps in evaluation order
    state_reads: dict  # state symbol -> variable holding its derivative
    output_var: dict  # element id -> its output variable
    input_var: dict  # element id -> its input variable
    deps: dict  # variable -> frozenset of base variables (x.*, u.*)

    def base_deps(self, var):
        return self.deps.get(var, frozenset({var} if var.startswith(("x.", "u.")) else ()))


@dataclass(frozen=True)
class ObservablePlan:
    """States plus auxiliary variables split by causality."""

    model: NetworkModel
    assignment: CausalAssignment
    aux: tuple  # nonlinear element ids, lexicographic
    causal: tuple
    anticausal: tuple
    source_paths: dict  # anticausal elem id -> tuple of variable paths from inputs

    @property
    def states(self):
        return self.model.state_order

    @property
    def retained_aux(self):
        return self.aux

    @property
    def extra_states(self):
        return ()


@dataclass(frozen=True)
class AugmentationParams:
    """Added storage element for physical augmentation."""

    kind: str  # 'inertial' | 'capacitive'
    value: float  # mass or capacitance, > 0
    junction: str | None = None  # defaults to the resistor's own junction

    def __post_init__(self):
        if self.kind not in ("inertial", "capacitive"):
            raise AugmentationError(f"bad augmentation kind {self.kind!r}")
        if not (self.value > 0):
            raise AugmentationError("augmentation value must be > 0")


@dataclass(frozen=True)
class Il2Plan:
    """Integrated-observable lifting plan."""

    model: NetworkModel
    base: ObservablePlan
    dropped: tuple  # anticausal aux removed from the observable set
    new_states: tuple  # (integral state symbol, aux elem id) pairs appended
    collisions: tuple  # (aux elem id, existing state symbol) — integral already a state

    @property
    def assignment(self):
        return self.base.assignment

    @property
    def states(self):
        return self.model.state_order

    @property
    def extra_states(self):
        return self.new_states

    @property
    def retained_aux(self):
        return tuple(a for a in self.base.aux if a not in self.dropped)


# --- causal assignment ----------------------------------------------------------


class _Port:
    __slots__ = ("id", "sides", "signs")

    def __init__(self, pid, sides, signs):
        self.id = pid
        self.sides = sides  # two of ('elem', id) / ('junc', id)
        self.signs = signs  # junction id -> sign in that junction's balance


def _build_ports(model):
    ports = {}
    for elem_id, (junction_id, sign) in model.element_junction.items():
        ports[elem_id] = _Port(
            elem_id, (("elem", elem_id), ("junc", junction_id)), {junction_id: sign}
        )
    for (ja, sa), (jb, sb) in model.junction_edges():
        a, b = sorted([(ja, sa), (jb, sb)])
        pid = f"{a[0]}~{b[0]}"
        ports[pid] = _Port(pid, (("junc", a[0]), ("junc", b[0])), {a[0]: a[1], b[0]: b[1]})
    by_junction = {j: [] for j in model.junctions}
    for port in ports.values():
        for kind, owner in port.sides:
            if kind == "junc":
                by_junction[owner].append(port.id)
    return ports, by_junction


def _side_of(port, junction_id):
    for index, (kind, owner) in enumerate(port.sides):
        if kind == "junc" and owner == junction_id:
            return index
    raise KeyError(junction_id)


def _is_decider(port, orientation, junction_id, junction_kind):
    """A port decides a loop's flow when the junction side provides the effort;
    it decides a node's effort when the member side provides the effort."""
    junction_side = _side_of(port, junction_id)
    if junction_kind == "loop":
        return orientation == junction_side
    return orientation == 1 - junction_side


def _decider_orientation(port, junction_id, junction_kind, decide):
    junction_side = _side_of(port, junction_id)
    if junction_kind == "loop":
        return junction_side if decide else 1 - junction_side
    return (1 - junction_side) if decide else junction_side


def _member_of(port, junction_id):
    for kind, owner in port.sides:
        if kind == "elem" or owner != junction_id:
            return (kind, owner)
    raise KeyError(junction_id)


def assign_causality(model: NetworkModel) -> CausalAssignment:
    """Assign integral causality and derive the acyclic evaluation order.

    Raises NotIntegralCausalityError when a storage element would have to
    differentiate, CausalConflictError when a junction variable is decided
    by two members (or by none), and AlgebraicLoopError when the resulting
    evaluation order is cyclic.
    """
    ports, by_junction = _build_ports(model)
    orient: dict = {pid: None for pid in ports}

    # mandated element orientations (side index that provides the effort)
    for elem in model.elements.values():
        if elem.is_resistive:
            continue
        port = ports[elem.id]
        provides_effort = elem.kind in ("capacitive", "effort-source")
        orient[port.id] = 0 if provides_effort else 1  # sides[0] is the element side

    def deciders_of(junction_id):
        kind = model.junctions[junction_id].kind
        return [
            pid
            for pid in by_junction[junction_id]
            if orient[pid] is not None and _is_decider(ports[pid], orient[pid], junction_id, kind)
        ]

    def classify_collision(junction_id, decider_ids):
        members = [_member_of(ports[pid], junction_id) for pid in decider_ids]
        labels = [owner for _, owner in members]
        storages = [
            owner
            for kind, owner in members
            if kind == "elem" and model.elements[owner].is_storage
        ]
        variable = "flow" if model.junctions[junction_id].kind == "loop" else "effort"
        message = (
            f"members {sorted(labels)} all decide the {variable} of junction {junction_id!r}"
        )
        if storages and len(storages) < len(members):
            raise NotIntegralCausalityError(
                f"not integral causality: storage element {sorted(storages)[0]!r} "
                f"would differentiate ({message})"
            )
        raise CausalConflictError(message)

    junction_ids = sorted(model.junctions)
    while True:
        changed = False
        stuck = None
        for junction_id in junction_ids:
            kind = model.junctions[junction_id].kind
            decided = deciders_of(junction_id)
            undecided = [pid for pid in by_junction[junction_id] if orient[pid] is None]
            if len(decided) > 1:
                classify_collision(junction_id, decided)
            if len(decided) == 1:
                for pid in undecided:
                    orient[pid] = _decider_orientation(ports[pid], junction_id, kind, False)
                    changed = True
            elif undecided:
                if len(undecided) == 1:
                    orient[undecided[0]] = _decider_orientation(
                        ports[undecided[0]], junction_id, kind, True
                    )
                    changed = True
                elif stuck is None:
                    stuck = (junction_id, undecided)
            else:
                variable = "flow" if kind == "loop" else "effort"
                raise CausalConflictError(
                    f"no member can decide the {variable} of junction {junction_id!r}"
                )
        if changed:
            continue
        if stuck is None:
            break
        # tie-break: lexicographically smallest resistor first, then junction ports
        junction_id, undecided = stuck
        kind = model.junctions[junction_id].kind
        element_ports = sorted(p for p in undecided if ports[p].sides[0][0] == "elem")
        choice = element_ports[0] if element_ports else sorted(undecided)[0]
        orient[choice] = _decider_orientation(ports[choice], junction_id, kind, True)

    # final sanity pass
    for junction_id in junction_ids:
        decided = deciders_of(junction_id)
        if len(decided) != 1:
            classify_collision(junction_id, decided)

    return _build_plan(model, ports, by_junction, orient)


def _build_plan(model, ports, by_junction, orient):
    # group same-kind junctions connected by a port: they share the common variable
    group = {j: j for j in model.junctions}

    def find(j):
        while group[j] != j:
            group[j] = group[group[j]]
            j = group[j]
        return j

    for (ja, _), (jb, _) in model.junction_edges():
        if model.junctions[ja].kind == model.junctions[jb].kind:
            ra, rb = sorted((find(ja), find(jb)))
            group[rb] = ra

    def common_var(junction_id):
        kind = model.junctions[junction_id].kind
        return ("f@" if kind == "loop" else "e@") + find(junction_id)

    def port_vars(port):
        """(effort var, flow var) of a port."""
        kinds = [s[0] for s in port.sides]
        if kinds[0] == "elem":
            elem_id = port.sides[0][1]
            junction_id = port.sides[1][1]
            if model.junctions[junction_id].kind == "loop":
                return (f"e.{elem_id}", common_var(junction_id))
            return (common_var(junction_id), f"f.{elem_id}")
        ja, jb = port.sides[0][1], port.sides[1][1]
        ka, kb = model.junctions[ja].kind, model.junctions[jb].kind
        if ka == kb:
            if ka == "loop":
                return (f"e~{port.id}", common_var(ja))
            return (common_var(ja), f"f~{port.id}")
        loop_id, node_id = (ja, jb) if ka == "loop" else (jb, ja)
        return (common_var(node_id), common_var(loop_id))

    steps = []
    roles = {}
    output_var = {}
    input_var = {}

    def law_step(elem, direction_needed, target, source):
        """direction_needed: 'forward' (input->output matches stored law) or
        'inverse' (effort->flow)."""
        if direction_needed == "forward":
            stored, numeric = ("law", False) if elem.law is not None else ("inverse", True)
        else:
            stored, numeric = ("inverse", False) if elem.inverse is not None else ("law", True)
        expr = elem.law if stored == "law" else elem.inverse
        if numeric:
            check_monotone(expr.ast, -MONOTONE_CHECK_SPAN, MONOTONE_CHECK_SPAN)
        return Step(
            target=target,
            op="law" if not numeric else "invert",
            element=elem.id,
            direction=stored,
            numeric=numeric,
            source=source,
        )

    for elem in model.elements.values():
        port = ports[elem.id]
        junction_id = port.sides[1][1]
        effort_var, flow_var = port_vars(port)
        provides_effort = orient[port.id] == 0
        roles[elem.id] = "effort" if provides_effort else "flow"
        out_var, in_var = (effort_var, flow_var) if provides_effort else (flow_var, effort_var)
        output_var[elem.id] = out_var
        input_var[elem.id] = in_var
        if elem.kind == "inertial":
            steps.append(
                Step(target=out_var, op="law", element=elem.id, direction="law",
                     source=f"x.{elem.state}")
            )
        elif elem.kind == "capacitive":
            steps.append(
                Step(target=out_var, op="law", element=elem.id, direction="law",
                     source=f"x.{elem.state}")
            )
        elif elem.is_source:
            steps.append(Step(target=out_var, op="copy", element=elem.id,
                              source=f"u.{elem.channel}"))
        else:  # resistive: forward law is flow->effort
            direction = "forward" if provides_effort else "inverse"
            steps.append(law_step(elem, direction, out_var, in_var))

    for junction_id, junction in model.junctions.items():
        decider = None
        for pid in by_junction[junction_id]:
            if _is_decider(ports[pid], orient[pid], junction_id, junction.kind):
                decider = pid
        terms = []
        sign_d = ports[decider].signs[junction_id]
        for pid in by_junction[junction_id]:
            if pid == decider:
                continue
            effort_var, flow_var = port_vars(ports[pid])
            var = effort_var if junction.kind == "loop" else flow_var
            sign = ports[pid].signs[junction_id]
            terms.append((-sign / sign_d, var))
        effort_var, flow_var = port_vars(ports[decider])
        target = effort_var if junction.kind == "loop" else flow_var
        steps.append(Step(target=target, op="balance", terms=tuple(terms)))

    steps = _toposort(steps)

    state_reads = {}
    for elem in model.storage:
        state_reads[elem.state] = input_var[elem.id]

    deps = {}
    for step in steps:
        out = set()
        for var in step.inputs():
            if var.startswith(("x.", "u.")):
                out.add(var)
            else:
                out |= deps[var]
        deps[step.target] = frozenset(out)

    return CausalAssignment(
        model=model,
        roles=roles,
        steps=tuple(steps),
        state_reads=state_reads,
        output_var=output_var,
        input_var=input_var,
        deps=deps,
    )


def _toposort(steps):
    by_target = {s.target: s for s in steps}
    dependents = {t: [] for t in by_target}
    missing = {}
    for step in steps:
        count = 0
        for var in step.inputs():
            if var in by_target:
                dependents[var].append(step.target)
                count += 1
        missing[step.target] = count
    ready = sorted(t for t, c in missing.items() if c == 0)
    heapq.heapify(ready)
    ordered = []
    while ready:
        target = heapq.heappop(ready)
        ordered.append(by_target[target])
        for nxt in dependents[target]:
            missing[nxt] -= 1
            if missing[nxt] == 0:
                heapq.heappush(ready, nxt)
    if len(ordered) != len(steps):
        cycle = sorted(t for t, c in missing.items() if c > 0)
        raise AlgebraicLoopError(f"algebraic loop among variables {cycle}")
    return ordered


# --- observable classification ---------------------------------------------------


def classify_observables(model: NetworkModel, assignment: CausalAssignment) -> ObservablePlan:
    """Split auxiliary variables (nonlinear element outputs) by causality.

    An auxiliary variable is anticausal exactly when an input channel appears
    in its dependency set; storage-element outputs depend only on their state
    and are therefore always causal.
    """
    aux = tuple(
        sorted(
            e.id
            for e in model.elements.values()
            if not e.is_source and not e.linear
        )
    )
    causal, anticausal = [], []
    paths = {}
    for elem_id in aux:
        var = assignment.output_var[elem_id]
        offending = {d for d in assignment.deps[var] if d.startswith("u.")}
        if offending:
            anticausal.append(elem_id)
            paths[elem_id] = tuple(
                _trace_path(assignment, var, base) for base in sorted(offending)
            )
        else:
            causal.append(elem_id)
    return ObservablePlan(
        model=model,
        assignment=assignment,
        aux=aux,
        causal=tuple(causal),
        anticausal=tuple(anticausal),
        source_paths=paths,
    )


def _trace_path(assignment, var, base):
    """Shortest chain of variables from an input channel to ``var``."""
    by_target = {s.target: s for s in assignment.steps}
    frontier = [(var, (var,))]
    seen = {var}
    while frontier:
        nxt = []
        for current, path in frontier:
            step = by_target.get(current)
            if step is None:
                continue
            for upstream in step.inputs():
                if upstream == base:
                    return (base,) + path
                if upstream not in seen and base in assignment.base_deps(upstream):
                    seen.add(upstream)
                    nxt.append((upstream, (upstream,) + path))
        frontier = nxt
    return (base, var)


# --- physical augmentation (add a small storage element) -------------------------


def default_augmentation(model: NetworkModel, resistor_id: str,
                         ratio: float = 20.0) -> AugmentationParams:
    """Pick the added element size so its breakpoint frequency sits ``ratio``
    times above the largest breakpoint of the origin-linearized model.

    Falls back to 1e-2 (model units) whenever a needed slope is zero,
    missing, or non-finite.
    """
    junction_id, _ = model.element_junction[resistor_id]
    kind = "inertial" if model.junctions[junction_id].kind == "loop" else "capacitive"
    fallback = AugmentationParams(kind=kind, value=1e-2, junction=junction_id)

    resistor = model.elements[resistor_id]
    if resistor.law is not None:
        r_slope = resistor.law.slope_at(0.0)  # d effort / d flow
    else:
        inv_slope = resistor.inverse.slope_at(0.0)
        r_slope = None if not inv_slope else 1.0 / inv_slope
    if r_slope is None or not abs(r_slope) > 0 or r_slope != r_slope:
        return fallback
    r_slope = abs(r_slope)

    breakpoints = []
    for elem in model.storage:
        slope = elem.law.slope_at(0.0)
        if slope is None or not abs(slope) > 0:
            return fallback
        slope = abs(slope)
        # inertial: f = law(p), pole near law'(0) * R; capacitive: e = law(q), pole near law'(0) / R
        breakpoints.append(slope * r_slope if elem.kind == "inertial" else slope / r_slope)
    if not breakpoints:
        return fallback
    target = ratio * max(breakpoints)
    value = r_slope / target if kind == "inertial" else 1.0 / (target * r_slope)
    if not (value > 0 and value < float("inf")):
        return fallback
    return AugmentationParams(kind=kind, value=value, junction=junction_id)


def apply_al2(model: NetworkModel, resistor_id: str,
              params: AugmentationParams) -> NetworkModel:
    """Augment the model with a small linear storage element at the resistor's
    junction so the resistor output becomes causal.

    If the resistor output is directly driven by a source (its input depends
    on inputs only), no augmentation helps; a DirectDriveWarning is issued and
    the model is returned unchanged so the caller can simply omit the
    observable.
    """
    if resistor_id not in model.elements or not model.elements[resistor_id].is_resistive:
        raise AugmentationError(f"{resistor_id!r} is not a resistive element")
    assignment = assign_causality(model)
    plan = classify_observables(model, assignment)
    in_deps = assignment.base_deps(assignment.input_var[resistor_id])
    if in_deps and all(d.startswith("u.") for d in in_deps):
        warnings.warn(
            f"resistor {resistor_id!r} is directly driven by a source; omit its "
            "observable from the lifted model instead of augmenting",
            DirectDriveWarning,
            stacklevel=2,
        )
        return model
    if resistor_id not in plan.anticausal:
        raise AugmentationError(f"resistor {resistor_id!r} output is already causal")

    junction_id, _ = model.element_junction[resistor_id]
    junction = model.junctions[junction_id]
    needed = "inertial" if junction.kind == "loop" else "capacitive"
    if params.kind != needed:
        raise AugmentationError(
            f"junction {junction_id!r} is a {junction.kind}; needs a {needed} element, "
            f"got {params.kind!r}"
        )
    if params.junction is not None and params.junction != junction_id:
        raise AugmentationError(
            f"augmentation must attach at the resistor's junction {junction_id!r}"
        )

    new_id = f"{resistor_id}_aug"
    state = ("p_" if needed == "inertial" else "q_") + new_id
    if new_id in model.elements or new_id in model.junctions:
        raise AugmentationError(f"id {new_id!r} already taken")
    if state in model.state_order:
        raise AugmentationError(f"state symbol {state!r} already taken")

    law = ConstitutiveExpr.parse(f"{state}/{params.value!r}")
    elements = dict(model.elements)
    elements[new_id] = Element(id=new_id, kind=needed, law=law, augmented=True)
    junctions = dict(model.junctions)
    junctions[junction_id] = Junction(
        id=junction_id, kind=junction.kind, members=junction.members + ((-1, new_id),)
    )
    augmented = NetworkModel(
        name=f"{model.name}+{new_id}",
        elements=elements,
        junctions=junctions,
        state_order=model.state_order + (state,),
        zero_order=False,
    )
    _validate(augmented)
    return augmented


# --- integrated observables -------------------------------------------------------


def apply_il2(model: NetworkModel, plan: ObservablePlan) -> Il2Plan:
    """Replace every anticausal observable with its time integral.

    When the integral coincides with an existing state (detected by symbolic
    comparison of the observable with the state derivatives), the observable
    is simply dropped and nothing is appended.
    """
    inline = _InlineCache(plan.assignment)
    state_trees = {
        sym: inline.tree(var) for sym, var in plan.assignment.state_reads.items()
    }
    dropped, new_states, collisions = [], [], []
    for elem_id in plan.anticausal:
        dropped.append(elem_id)
        out_tree = inline.tree(plan.assignment.output_var[elem_id])
        match = next((sym for sym, tree in state_trees.items() if tree == out_tree), None)
        if match is not None:
            collisions.append((elem_id, match))
        else:
            new_states.append((f"int_{elem_id}", elem_id))
    return Il2Plan(
        model=model,
        base=plan,
        dropped=tuple(dropped),
        new_states=tuple(new_states),
        collisions=tuple(collisions),
    )


class _InlineCache:
    """Canonical inlined expression trees for evaluation-plan variables."""

    def __init__(self, assignment):
        self.by_target = {s.target: s for s in assignment.steps}
        self.memo = {}

    def tree(self, var):
        if var in self.memo:
            return self.memo[var]
        step = self.by_target.get(var)
        if step is None:
            result = ("base", var)
        elif step.op == "copy":
            result = self.tree(step.source)
        elif step.op == "balance":
            terms = tuple(sorted((coef, self.tree(v)) for coef, v in step.terms))
            result = terms[0][1] if len(terms) == 1 and terms[0][0] == 1.0 else ("bal", terms)
        else:
            result = (
                "law",
                step.element,
                step.direction,
                step.numeric,
                self.tree(step.source),
            )
        self.memo[var] = result
        return result


# --- reporting ---------------------------------------------------------------------


def plan_summary(plan: ObservablePlan) -> dict:
    """JSON-friendly causality report."""
    assignment = plan.assignment
    return {
        "model": plan.model.name,
        "states": list(plan.model.state_order),
        "roles": {
            elem: {
                "output": assignment.roles[elem],
                "output_var": assignment.output_var[elem],
                "input_var": assignment.input_var[elem],
            }
            for elem in sorted(assignment.roles)
        },
        "evaluation_order": [step.render() for step in assignment.steps],
        "auxiliary": list(plan.aux),
        "causal": list(plan.causal),
        "anticausal": [
            {
                "element": elem,
                "paths": [" -> ".join(path) for path in plan.source_paths[elem]],
            }
            for elem in plan.anticausal
        ],
    }


def describe_plan(plan: ObservablePlan) -> str:
    info = plan_summary(plan)
    lines = [f"model: {info['model']}", f"states: {', '.join(info['states']) or '(none)'}"]
    lines.append("element roles:")
    for elem, role in info["roles"].items():
        lines.append(f"  {elem}: outputs {role['output']} ({role['output_var']}), "
                     f"reads {role['input_var']}")
    lines.append("evaluation order:")
    for rendered in info["evaluation_order"]:
        lines.append(f"  {rendered}")
    lines.append(f"auxiliary variables: {', '.join(info['auxiliary']) or '(none)'}")
    lines.append(f"  causal: {', '.join(info['causal']) or '(none)'}")
    if info["anticausal"]:
        lines.append("  anticausal:")
        for entry in info["anticausal"]:
            lines.append(f"    {entry['element']}:")
            for path in entry["paths"]:
                lines.append(f"      {path}")
    else:
        lines.append("  anticausal: (none)")
    return "\n".join(lines)
