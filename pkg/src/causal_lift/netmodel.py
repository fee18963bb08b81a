"""Lumped-parameter network models and their constitutive laws.

A model is a set of elements (inertial, capacitive, resistive, sources)
attached to loop/node junctions.  Loop junctions share a common flow and
balance efforts to zero; node junctions share a common effort and balance
flows.  Element behaviour is a one-variable constitutive law from the
expression DSL in :mod:`causal_lift.expr`.

Model file grammar (line oriented, ``#`` starts a comment):

    [elements]
    <id> <inertial|capacitive|resistive> law="<expr>" [inverse="<expr>"] [augmented=true]
    [sources]
    <id> <effort-source|flow-source> channel=<int>
    [junctions]
    <id> <loop|node> members=<[+|-]id,[+|-]id,...>
    [states]
    <symbol> <symbol> ...

Storage laws map the state symbol (their single free variable) to the
element output; resistive ``law`` maps flow to effort and ``inverse`` maps
effort to flow (at least one must be given — the missing direction is
obtained numerically by bisection when causality demands it).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

from . import expr as _expr
from .errors import ModelSyntaxError, ModelValidationError

ELEMENT_KINDS = ("inertial", "capacitive", "resistive")
SOURCE_KINDS = ("effort-source", "flow-source")
STORAGE_KINDS = ("inertial", "capacitive")


@dataclass(frozen=True)
class ConstitutiveExpr:
    """A one-variable expression tree plus its free symbol."""

    ast: tuple
    var: str

    @classmethod
    def parse(cls, text):
        ast = _expr.parse_expr(text)
        symbols = sorted(_expr.free_vars(ast))
        if len(symbols) != 1:
            raise ModelValidationError(
                f"law {text!r} must use exactly one variable, found {symbols or 'none'}"
            )
        _reject_zero_denominators(ast, text)
        return cls(ast=ast, var=symbols[0])

    @property
    def text(self):
        return _expr.format_expr(self.ast)

    def __call__(self, x):
        return _expr.eval_expr(self.ast, x)

    @property
    def linear(self):
        return _expr.is_linear(self.ast)

    def slope_at(self, x):
        return _expr.slope_at(self.ast, x)


def _reject_zero_denominators(ast, text):
    kind = ast[0]
    if kind == "div":
        denom = _expr.constant_fold(ast[2])
        if denom[0] == "const" and denom[1] == 0.0:
            raise ModelValidationError(f"law {text!r} divides by a constant zero")
    if kind in ("const", "var"):
        return
    children = ast[1:-1] if kind == "pow" else ast[1:]
    for child in children:
        _reject_zero_denominators(child, text)


def eval_law(law: ConstitutiveExpr, x: float) -> float:
    """Evaluate a constitutive law at a point."""
    return law(x)


def invert_law(law: ConstitutiveExpr, y: float, bracket, tol: float = 1e-10) -> float:
    """Solve law(x) = y on the bracket by bisection (law must be monotone there)."""
    lo, hi = bracket
    return _expr.invert_monotone(law.ast, y, lo, hi, tol=tol, max_iter=200)


@dataclass(frozen=True)
class Element:
    id: str
    kind: str
    law: ConstitutiveExpr | None = None
    inverse: ConstitutiveExpr | None = None
    channel: int | None = None
    augmented: bool = False

    @property
    def is_storage(self):
        return self.kind in STORAGE_KINDS

    @property
    def is_source(self):
        return self.kind in SOURCE_KINDS

    @property
    def is_resistive(self):
        return self.kind == "resistive"

    @property
    def state(self):
        return self.law.var if self.is_storage else None

    @property
    def linear(self):
        """True when the (forward or inverse) law is exactly c*x."""
        if self.is_source:
            return True
        law = self.law if self.law is not None else self.inverse
        return law.linear


@dataclass(frozen=True)
class Junction:
    id: str
    kind: str  # 'loop' (common flow, efforts balance) | 'node' (dual)
    members: tuple  # ((sign, member_id), ...)


@dataclass(frozen=True)
class NetworkModel:
    name: str
    elements: dict
    junctions: dict
    state_order: tuple
    zero_order: bool = False
    element_junction: dict = field(default_factory=dict)  # elem id -> (junction id, sign)

    @property
    def sources(self):
        return [e for e in self.elements.values() if e.is_source]

    @property
    def storage(self):
        return [e for e in self.elements.values() if e.is_storage]

    @property
    def n_inputs(self):
        channels = [e.channel for e in self.sources]
        return max(channels) + 1 if channels else 0

    @property
    def state_element(self):
        """state symbol -> storage element"""
        return {e.state: e for e in self.storage}

    def junction_edges(self):
        """Mutual junction-junction ports as ((ja, sign_a), (jb, sign_b)) pairs."""
        edges = []
        seen = set()
        for junction in self.junctions.values():
            for sign, ref in junction.members:
                if ref in self.junctions and (ref, junction.id) not in seen:
                    seen.add((junction.id, ref))
                    other_sign = next(
                        s for s, r in self.junctions[ref].members if r == junction.id
                    )
                    edges.append(((junction.id, sign), (ref, other_sign)))
        return edges

    def with_laws(self, overrides):
        """New model with element laws replaced.

        ``overrides`` maps element id to {'law': text} and/or {'inverse': text}.
        Passing an explicit None removes that direction.
        """
        elements = dict(self.elements)
        for elem_id, fields in overrides.items():
            if elem_id not in elements:
                raise ModelValidationError(f"law override for unknown element {elem_id!r}")
            elem = elements[elem_id]
            updates = {}
            for key in ("law", "inverse"):
                if key in fields:
                    text = fields[key]
                    updates[key] = None if text is None else ConstitutiveExpr.parse(text)
            elements[elem_id] = replace(elem, **updates)
        model = replace(self, elements=elements)
        _validate(model)
        return model


# --- parsing -------------------------------------------------------------------

_ATTR_RE = re.compile(r'(\w+)=("([^"]*)"|\S+)')


def _split_fields(body, line_no):
    """Split a declaration line into leading words and key=value attributes."""
    attr_start = body.find("=")
    words_part = body
    attrs = {}
    first_attr = re.search(r"\S+=", body)
    if first_attr:
        # back up to the start of the key
        key_start = first_attr.start()
        words_part = body[:key_start]
        for match in _ATTR_RE.finditer(body[key_start:]):
            key = match.group(1)
            value = match.group(3) if match.group(3) is not None else match.group(2)
            if key in attrs:
                raise ModelSyntaxError(f"duplicate attribute {key!r}", line_no)
            attrs[key] = value
        stripped = _ATTR_RE.sub("", body[key_start:]).strip()
        if stripped:
            raise ModelSyntaxError(f"unparseable text {stripped!r}", line_no)
    return words_part.split(), attrs


def _strip_comment(line):
    out = []
    in_quote = False
    for ch in line:
        if ch == '"':
            in_quote = not in_quote
        if ch == "#" and not in_quote:
            break
        out.append(ch)
    return "".join(out)


def parse_model(text: str, name: str = "model") -> NetworkModel:
    """Parse model-file text into a validated NetworkModel."""
    elements: dict = {}
    junctions: dict = {}
    states: list = []
    saw_states = False
    section = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("["):
            if line not in ("[elements]", "[junctions]", "[sources]", "[states]"):
                raise ModelSyntaxError(f"unknown section {line!r}", line_no)
            section = line[1:-1]
            if section == "states":
                saw_states = True
            continue
        if section is None:
            raise ModelSyntaxError("declaration before any section header", line_no)
        if section == "states":
            states.extend(s for s in re.split(r"[,\s]+", line) if s)
            continue
        words, attrs = _split_fields(line, line_no)
        if len(words) != 2:
            raise ModelSyntaxError(
                f"expected '<id> <kind> key=value...', got {line!r}", line_no
            )
        ident, kind = words
        if ident in elements or ident in junctions:
            raise ModelSyntaxError(f"duplicate id {ident!r}", line_no)
        if section == "elements":
            if kind not in ELEMENT_KINDS:
                raise ModelSyntaxError(f"unknown element kind {kind!r}", line_no)
            try:
                law = ConstitutiveExpr.parse(attrs["law"]) if "law" in attrs else None
                inverse = (
                    ConstitutiveExpr.parse(attrs["inverse"]) if "inverse" in attrs else None
                )
            except ModelValidationError:
                raise
            except Exception as exc:
                raise ModelSyntaxError(f"bad law: {exc}", line_no) from exc
            augmented = attrs.get("augmented", "false").lower() in ("true", "1", "yes")
            elements[ident] = Element(
                id=ident, kind=kind, law=law, inverse=inverse, augmented=augmented
            )
        elif section == "sources":
            if kind not in SOURCE_KINDS:
                raise ModelSyntaxError(f"unknown source kind {kind!r}", line_no)
            if "channel" not in attrs:
                raise ModelSyntaxError(f"source {ident!r} needs channel=<int>", line_no)
            try:
                channel = int(attrs["channel"])
            except ValueError:
                raise ModelSyntaxError(f"bad channel {attrs['channel']!r}", line_no) from None
            elements[ident] = Element(id=ident, kind=kind, channel=channel)
        elif section == "junctions":
            if kind not in ("loop", "node"):
                raise ModelSyntaxError(f"unknown junction kind {kind!r}", line_no)
            if "members" not in attrs:
                raise ModelSyntaxError(f"junction {ident!r} needs members=...", line_no)
            members = []
            for token in attrs["members"].split(","):
                token = token.strip()
                if not token:
                    continue
                sign = 1
                if token[0] in "+-":
                    sign = 1 if token[0] == "+" else -1
                    token = token[1:]
                if not token:
                    raise ModelSyntaxError("empty member id", line_no)
                members.append((sign, token))
            junctions[ident] = Junction(id=ident, kind=kind, members=tuple(members))

    model = NetworkModel(
        name=name,
        elements=elements,
        junctions=junctions,
        state_order=tuple(states),
        zero_order=saw_states and not states,
    )
    _validate(model)
    return model


def _validate(model: NetworkModel) -> None:
    if not any(not e.is_source for e in model.elements.values()):
        raise ModelValidationError("no elements")
    membership: dict = {}
    for junction in model.junctions.values():
        if len(junction.members) < 2:
            raise ModelValidationError(f"junction {junction.id!r} needs at least 2 members")
        for sign, ref in junction.members:
            if ref not in model.elements and ref not in model.junctions:
                raise ModelValidationError(
                    f"junction {junction.id!r} references unknown member {ref!r}"
                )
            if ref in model.elements:
                if ref in membership:
                    raise ModelValidationError(
                        f"element {ref!r} attached to more than one junction"
                    )
                membership[ref] = (junction.id, sign)
    for elem in model.elements.values():
        if elem.id not in membership:
            raise ModelValidationError(f"dangling port: element {elem.id!r} not in any junction")
    model.element_junction.clear()
    model.element_junction.update(membership)

    for elem in model.elements.values():
        if elem.is_storage and elem.law is None:
            raise ModelValidationError(f"storage element {elem.id!r} needs a law")
        if elem.is_resistive and elem.law is None and elem.inverse is None:
            raise ModelValidationError(
                f"resistive element {elem.id!r} needs law= and/or inverse="
            )
        if elem.is_source and (elem.channel is None or elem.channel < 0):
            raise ModelValidationError(f"source {elem.id!r} needs a channel >= 0")

    channels = sorted({e.channel for e in model.sources})
    if channels and channels != list(range(channels[-1] + 1)):
        raise ModelValidationError(f"source channels must be contiguous from 0, got {channels}")

    # junction graph must pair mutual references and form a tree
    refs = {
        (j.id, ref)
        for j in model.junctions.values()
        for _, ref in j.members
        if ref in model.junctions
    }
    for a, b in refs:
        if (b, a) not in refs:
            raise ModelValidationError(
                f"junction {a!r} lists {b!r} but not vice versa (ports are declared on both sides)"
            )
        if sum(1 for s, r in model.junctions[a].members if r == b) > 1:
            raise ModelValidationError(f"junctions {a!r} and {b!r} joined by more than one port")
    n_junctions = len(model.junctions)
    n_edges = len(refs) // 2
    if n_junctions:
        if n_edges != n_junctions - 1 or not _junctions_connected(model):
            raise ModelValidationError("junction graph must be a connected tree")

    # states: declared symbols must match storage laws one-to-one
    state_syms = [e.state for e in model.storage]
    if len(set(state_syms)) != len(state_syms):
        raise ModelValidationError("storage elements share a state symbol")
    declared = model.state_order
    if model.storage:
        if not declared:
            raise ModelValidationError("[states] section must list all storage state symbols")
        if sorted(declared) != sorted(state_syms):
            raise ModelValidationError(
                f"law references wrong variable: [states] lists {list(declared)}, "
                f"storage laws use {sorted(state_syms)}"
            )
    elif declared:
        raise ModelValidationError("[states] lists symbols but the model has no storage elements")
    elif not model.zero_order:
        raise ModelValidationError(
            "model has no storage elements; declare an empty [states] section "
            "to flag a zero-order model"
        )


def _junctions_connected(model):
    ids = list(model.junctions)
    adjacency = {j: set() for j in ids}
    for (a, _), (b, _) in model.junction_edges():
        adjacency[a].add(b)
        adjacency[b].add(a)
    seen = {ids[0]}
    stack = [ids[0]]
    while stack:
        for nxt in adjacency[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return len(seen) == len(ids)


def format_model(model: NetworkModel) -> str:
    """Render a model back to file text; parse(format(m)) is structurally m."""
    lines = []
    plain = [e for e in model.elements.values() if not e.is_source]
    if plain:
        lines.append("[elements]")
        for elem in plain:
            parts = [elem.id, elem.kind]
            if elem.law is not None:
                parts.append(f'law="{elem.law.text}"')
            if elem.inverse is not None:
                parts.append(f'inverse="{elem.inverse.text}"')
            if elem.augmented:
                parts.append("augmented=true")
            lines.append(" ".join(parts))
    sources = model.sources
    if sources:
        lines.append("[sources]")
        for elem in sources:
            lines.append(f"{elem.id} {elem.kind} channel={elem.channel}")
    if model.junctions:
        lines.append("[junctions]")
        for junction in model.junctions.values():
            members = ",".join(
                ("+" if sign > 0 else "-") + ref for sign, ref in junction.members
            )
            lines.append(f"{junction.id} {junction.kind} members={members}")
    lines.append("[states]")
    if model.state_order:
        lines.append(" ".join(model.state_order))
    return "\n".join(lines) + "\n"
