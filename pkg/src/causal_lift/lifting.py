"""Lifted snapshot datasets.

Assembles (phi_t, u_t, phi_{t+1}) snapshot pairs from simulated
trajectories under a configurable observable basis:

* ``dfl-aux`` — the measured quantities themselves (states plus auxiliary
  variables, plus integral states under an integrated-observable plan);
* ``monomial(d)`` — per-variable powers v, v^2, ..., v^d, no cross terms
  (the raw column doubles as the first power);
* ``fourier(k)`` — sin/cos of each variable affinely mapped onto [-pi, pi]
  using training-set extrema;
* ``composite`` — concatenation without duplicate columns.

Also provides measurement-noise injection in two modes (``measured``:
independent noise on state and auxiliary channels; ``synthetic``: noise on
states only, observables recomputed from the noisy states), the linear
input-feedthrough filter for anticausal columns, and the measured view of
a physically augmented model taken from the original system's trajectory.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .causality import AugmentationParams, Il2Plan, ObservablePlan
from .errors import ConfigError, SchemaMismatchError, UnderdeterminedError
from .simulate import Trajectory

BASIS_KINDS = ("dfl-aux", "monomial", "fourier", "composite")


@dataclass(frozen=True)
class Basis:
    kind: str
    degree: int = 0
    target: str = "state-only"  # 'state-only' | 'state-and-aux'
    parts: tuple = ()

    def __post_init__(self):
        if self.kind not in BASIS_KINDS:
            raise ConfigError(f"unknown basis kind {self.kind!r}")
        if self.kind in ("monomial", "fourier") and self.degree < 1:
            raise ConfigError(f"{self.kind} basis needs degree >= 1")
        if self.target not in ("state-only", "state-and-aux"):
            raise ConfigError(f"unknown basis target {self.target!r}")

    @classmethod
    def dfl_aux(cls):
        return cls(kind="dfl-aux")

    @classmethod
    def monomial(cls, degree, target="state-only"):
        return cls(kind="monomial", degree=degree, target=target)

    @classmethod
    def fourier(cls, degree, target="state-only"):
        return cls(kind="fourier", degree=degree, target=target)

    @classmethod
    def composite(cls, parts):
        return cls(kind="composite", parts=tuple(parts))

    def describe(self):
        if self.kind == "composite":
            return "+".join(p.describe() for p in self.parts)
        if self.kind == "dfl-aux":
            return "dfl-aux"
        return f"{self.kind}({self.degree},{self.target})"


@dataclass(frozen=True)
class NoiseSpec:
    """Zero-mean Gaussian measurement noise, seed-deterministic.

    measured: i.i.d. noise added independently to state and auxiliary
    channels (and integral/input-side channels) before basis application.
    synthetic: noise added to states only; auxiliary variables and basis
    functions are then computed from the noisy states.
    """

    sigma: float = 0.0
    seed: int = 0
    mode: str = "measured"

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigError("noise sigma must be >= 0")
        if self.mode not in ("measured", "synthetic"):
            raise ConfigError(f"unknown noise mode {self.mode!r}")


@dataclass(frozen=True)
class FeedthroughFilter:
    """Constant matrix D subtracting the fitted input component from
    anticausal columns: phi* = phi - D u."""

    D: np.ndarray  # (n_anticausal, r)
    columns: tuple  # labels of the affected columns
    residuals: tuple = ()

    @property
    def empty(self):
        return self.D.size == 0


@dataclass
class LiftedDataset:
    """Snapshot pairs with stable column labels and full provenance."""

    Phi: np.ndarray
    U: np.ndarray
    Phi_next: np.ndarray
    U_next: np.ndarray
    labels: tuple
    input_labels: tuple
    dt: float
    plan: object
    basis: Basis
    n_state_cols: int
    anticausal_idx: tuple
    scalings: dict = field(default_factory=dict)
    noise: NoiseSpec | None = None
    feedthrough: FeedthroughFilter | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def n_inputs(self):
        return self.U.shape[1]

    def lift(self, raw_rows, u_rows):
        """Lift raw measurement rows with this dataset's basis and filter."""
        raw_rows = np.atleast_2d(np.asarray(raw_rows, dtype=float))
        u_rows = np.atleast_2d(np.asarray(u_rows, dtype=float))
        lifted, _ = _apply_basis(raw_rows, self.labels[: raw_rows.shape[1]],
                                 self.basis, self.n_state_cols, self.scalings)
        if self.feedthrough is not None and not self.feedthrough.empty:
            idx = list(self.anticausal_idx)
            lifted[:, idx] = lifted[:, idx] - u_rows @ self.feedthrough.D.T
        return lifted

    def with_feedthrough(self, filt: FeedthroughFilter):
        if filt.empty:
            return replace(self, feedthrough=filt)
        idx = list(self.anticausal_idx)
        Phi = self.Phi.copy()
        Phi_next = self.Phi_next.copy()
        Phi[:, idx] -= self.U @ filt.D.T
        Phi_next[:, idx] -= self.U_next @ filt.D.T
        prov = dict(self.provenance)
        prov["feedthrough"] = [list(map(float, row)) for row in filt.D]
        return replace(self, Phi=Phi, Phi_next=Phi_next, feedthrough=filt, provenance=prov)

    def export(self, directory):
        """Write phi.csv / u.csv / phi_next.csv plus a JSON label sidecar."""
        from pathlib import Path

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        _write_csv(directory / "phi.csv", self.labels, self.Phi)
        _write_csv(directory / "u.csv", self.input_labels, self.U)
        _write_csv(directory / "phi_next.csv", self.labels, self.Phi_next)
        sidecar = {
            "columns": list(self.labels),
            "inputs": list(self.input_labels),
            "dt": self.dt,
            "n_state_cols": self.n_state_cols,
            "anticausal_columns": [self.labels[i] for i in self.anticausal_idx],
            "provenance": self.provenance,
        }
        (directory / "columns.json").write_text(
            json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


def _write_csv(path, header, data):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(str(h) for h in header) + "\n")
        for row in np.atleast_2d(data):
            if data.size:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


# --- raw measurement assembly --------------------------------------------------


def raw_matrix(traj: Trajectory, plan, columns="all"):
    """Raw measured columns for a plan: states, integral states, auxiliaries.

    ``columns`` selects the auxiliary set: 'all' keeps every retained
    auxiliary (for an integrated-observable plan those are causal by
    construction), 'causal' drops anticausal ones, 'states' keeps none.
    Returns (matrix, labels, n_state_cols).
    """
    if columns not in ("all", "causal", "states"):
        raise ConfigError(f"unknown column mode {columns!r}")
    cols = [traj.X]
    labels = list(plan.states)
    for sym, aux_elem in plan.extra_states:
        cols.append(traj.quad_column(aux_elem)[:, None])
        labels.append(sym)
    n_state_cols = len(labels)
    if columns == "states":
        aux_ids = ()
    elif columns == "causal" and not isinstance(plan, Il2Plan):
        aux_ids = tuple(a for a in plan.retained_aux if a not in plan.anticausal)
    else:
        aux_ids = plan.retained_aux
    for elem in aux_ids:
        cols.append(traj.aux_column(elem)[:, None])
        labels.append(elem)
    matrix = np.hstack(cols) if cols else np.zeros((traj.n_rows, 0))
    return matrix, tuple(labels), n_state_cols


def _basis_atoms(basis):
    if basis.kind == "composite":
        atoms = []
        for part in basis.parts:
            atoms.extend(_basis_atoms(part))
        return atoms
    return [basis]


def _apply_basis(raw, labels, basis, n_state_cols, scalings):
    """Append basis columns to the raw ones; fills ``scalings`` on first use."""
    out = [raw]
    out_labels = list(labels)
    for atom in _basis_atoms(basis):
        if atom.kind == "dfl-aux":
            continue
        upto = n_state_cols if atom.target == "state-only" else raw.shape[1]
        for j in range(upto):
            label = labels[j]
            v = raw[:, j]
            if atom.kind == "monomial":
                for k in range(2, atom.degree + 1):
                    name = f"{label}^{k}"
                    if name in out_labels:
                        continue
                    out.append((v ** k)[:, None])
                    out_labels.append(name)
            else:  # fourier
                key = f"fourier:{label}"
                if key not in scalings:
                    lo, hi = float(v.min()), float(v.max())
                    scalings[key] = (lo, hi)
                lo, hi = scalings[key]
                span = hi - lo
                theta = (
                    np.zeros_like(v)
                    if span <= 0
                    else -np.pi + 2.0 * np.pi * (v - lo) / span
                )
                for k in range(1, atom.degree + 1):
                    for fn, tag in ((np.sin, "sin"), (np.cos, "cos")):
                        name = f"{tag}{k}({label})"
                        if name in out_labels:
                            continue
                        out.append(fn(k * theta)[:, None])
                        out_labels.append(name)
    return np.hstack(out), tuple(out_labels)


# --- noise -----------------------------------------------------------------------


def apply_noise(trajectories, noise: NoiseSpec):
    """Perturb trajectories per the noise spec; identity when sigma == 0."""
    if noise.sigma == 0.0:
        return list(trajectories)
    out = []
    for index, traj in enumerate(trajectories):
        rng = np.random.default_rng([noise.seed, index])
        noisy_x = traj.X + noise.sigma * rng.standard_normal(traj.X.shape)
        if noise.mode == "measured":
            noisy_h = traj.H + noise.sigma * rng.standard_normal(traj.H.shape)
            noisy_q = traj.Q + noise.sigma * rng.standard_normal(traj.Q.shape)
            noisy_ein = traj.EIN + noise.sigma * rng.standard_normal(traj.EIN.shape)
        else:
            if traj.ode is None:
                raise SchemaMismatchError(
                    "synthetic noise needs the trajectory's compiled plan to "
                    "recompute observables"
                )
            regs = traj.ode.eval_vars_batch(noisy_x, traj.U)
            noisy_h = traj.ode.aux_from_regs(regs)
            noisy_ein = traj.ode.ein_from_regs(regs)
            noisy_q = traj.Q  # running integrals are not pointwise-recomputable
        out.append(traj.with_arrays(X=noisy_x, H=noisy_h, Q=noisy_q, EIN=noisy_ein))
    return out


# --- dataset construction ----------------------------------------------------------


def build_dataset(trajectories, basis: Basis, plan,
                  noise: NoiseSpec | None = None,
                  columns: str = "all") -> LiftedDataset:
    """Snapshot pairs from consecutive grid points of each trajectory.

    Pairs never straddle trajectory boundaries.  Under an integrated-
    observable plan the integral states are taken from the simulator's
    quadrature columns and anticausal columns are absent; under a plain
    observable plan ``columns`` selects whether anticausal auxiliary
    columns are kept ('all': they are the whole point of the
    measured-quantities baseline), dropped ('causal'), or whether no
    auxiliary columns appear at all ('states', the synthetic state-basis
    pipelines).
    """
    trajectories = list(trajectories)
    if not trajectories:
        raise SchemaMismatchError("no trajectories")
    dts = {t.dt for t in trajectories}
    schemas = {(t.state_labels, t.aux_labels) for t in trajectories}
    if len(dts) != 1 or len(schemas) != 1:
        raise SchemaMismatchError("trajectories disagree on dt or column schema")
    noise = noise or NoiseSpec()
    noisy = apply_noise(trajectories, noise)

    scalings: dict = {}
    phi_parts, u_parts, phi_next_parts, u_next_parts = [], [], [], []
    labels = None
    n_state_cols = 0
    for traj in noisy:
        raw, raw_labels, n_state_cols = raw_matrix(traj, plan, columns)
        lifted, labels = _apply_basis(raw, raw_labels, basis, n_state_cols, scalings)
        phi_parts.append(lifted[:-1])
        phi_next_parts.append(lifted[1:])
        u_parts.append(traj.U[:-1])
        u_next_parts.append(traj.U[1:])
    Phi = np.vstack(phi_parts)
    U = np.vstack(u_parts)
    Phi_next = np.vstack(phi_next_parts)
    U_next = np.vstack(u_next_parts)

    n_cols = Phi.shape[1] + U.shape[1]
    if Phi.shape[0] < n_cols + 1:
        raise UnderdeterminedError(
            f"{Phi.shape[0]} snapshot pairs for {n_cols} columns; need at least {n_cols + 1}"
        )

    anticausal = getattr(plan, "anticausal", ())
    anticausal_idx = tuple(
        labels.index(e) for e in anticausal if e in labels
    )
    provenance = {
        "basis": basis.describe(),
        "plan": type(plan).__name__,
        "model": plan.model.name,
        "trajectories": len(trajectories),
        "noise": {"sigma": noise.sigma, "mode": noise.mode, "seed": noise.seed},
        "columns": columns,
    }
    return LiftedDataset(
        Phi=Phi,
        U=U,
        Phi_next=Phi_next,
        U_next=U_next,
        labels=labels,
        input_labels=tuple(f"u{ch}" for ch in range(U.shape[1])),
        dt=float(trajectories[0].dt),
        plan=plan,
        basis=basis,
        n_state_cols=n_state_cols,
        anticausal_idx=anticausal_idx,
        scalings=scalings,
        noise=noise,
        provenance=provenance,
    )


# --- input feedthrough filter ---------------------------------------------------------


def fit_feedthrough(dataset: LiftedDataset) -> FeedthroughFilter:
    """Regress each anticausal column on (causal columns, inputs) and keep the
    input coefficients as the feedthrough matrix D."""
    idx = list(dataset.anticausal_idx)
    r = dataset.n_inputs
    if not idx:
        return FeedthroughFilter(D=np.zeros((0, r)), columns=())
    causal_cols = [j for j in range(dataset.Phi.shape[1]) if j not in idx]
    Z = np.hstack([dataset.Phi[:, causal_cols], dataset.U])
    Y = dataset.Phi[:, idx]
    coef, _, rank, _ = np.linalg.lstsq(Z, Y, rcond=None)
    if rank < Z.shape[1]:
        warnings.warn("rank-deficient feedthrough regressor; minimum-norm solution used")
    D = coef[-r:].T if r else np.zeros((len(idx), 0))
    residuals = tuple(
        float(np.linalg.norm(Y[:, k] - Z @ coef[:, k])) for k in range(len(idx))
    )
    return FeedthroughFilter(
        D=D,
        columns=tuple(dataset.labels[j] for j in idx),
        residuals=residuals,
    )


# --- measured view of a physically augmented model -----------------------------------


def augmented_measurement_view(traj: Trajectory, resistor_id: str,
                               params: AugmentationParams,
                               aug_plan: ObservablePlan) -> Trajectory:
    """Re-express an original-system trajectory in augmented-model coordinates.

    The added storage element's state is value times the resistor's original
    output (momentum = mass * flow, or charge = capacitance * effort), and the
    re-routed resistor observable is the resistor's original input variable —
    both directly measurable on the unaugmented plant.
    """
    aug_model = aug_plan.model
    p_star = params.value * traj.aux_column(resistor_id)
    new_sym = aug_model.state_order[-1]
    X = np.column_stack([traj.X, p_star])
    h_cols, h_labels = [], []
    for elem in aug_plan.aux:
        if elem == resistor_id:
            h_cols.append(traj.ein_column(resistor_id))
        else:
            h_cols.append(traj.aux_column(elem))
        h_labels.append(elem)
    H = np.column_stack(h_cols) if h_cols else np.zeros((traj.n_rows, 0))
    return Trajectory(
        times=traj.times,
        X=X,
        H=H,
        U=traj.U,
        Q=np.zeros((traj.n_rows, 0)),
        EIN=np.zeros((traj.n_rows, 0)),
        dt=traj.dt,
        state_labels=tuple(aug_model.state_order),
        aux_labels=tuple(h_labels),
        quad_labels=(),
        ein_labels=(),
        ode=None,
    )
