"""Discrete-time lifted linear model identification and rollout.

Fits phi_{t+1} ~ A [phi_t; u_t] by ordinary least squares (optionally
ridge-stabilized, solved by orthogonal factorization, never by normal
equations) or by classical total least squares on the stacked matrix
[Phi U | Phi'], which is consistent under i.i.d. errors-in-variables.
Rollout is purely linear: predicted lifted states are iterated without
re-lifting, and physical states are read off the leading columns.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateTlsError,
    RolloutDivergenceError,
    SchemaMismatchError,
    UnderdeterminedError,
)
from .lifting import LiftedDataset

TLS_GAP_TOL = 1e-12


@dataclass
class LiftedModel:
    """Partitioned one-step map: rows = lifted dims, columns = lifted dims + inputs."""

    A: np.ndarray
    dt: float
    labels: tuple
    input_labels: tuple
    method: str
    n_state_cols: int
    residual: float | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.A)):
            raise SchemaMismatchError("model matrix has non-finite entries")

    @property
    def n_lifted(self):
        return self.A.shape[0]

    @property
    def n_inputs(self):
        return self.A.shape[1] - self.A.shape[0]

    @property
    def order(self):
        """Regression width: lifted dimensions plus input channels."""
        return self.A.shape[1]

    def blocks(self, n=None):
        """Partition into (A_x, A_eta, B_x) over state rows and (H_x, H_eta, H_u)
        over observable rows, with ``n`` leading state columns."""
        n = self.n_state_cols if n is None else n
        k, r = self.n_lifted, self.n_inputs
        return {
            "A_x": self.A[:n, :n],
            "A_eta": self.A[:n, n:k],
            "B_x": self.A[:n, k:],
            "H_x": self.A[n:, :n],
            "H_eta": self.A[n:, n:k],
            "H_u": self.A[n:, k:],
        }


@dataclass
class Prediction:
    times: np.ndarray
    lifted: np.ndarray
    labels: tuple
    n_state_cols: int

    def column(self, label):
        return self.lifted[:, self.labels.index(label)]

    def state_block(self, names=None):
        if names is None:
            return self.lifted[:, : self.n_state_cols]
        return np.column_stack([self.column(name) for name in names])


def _regression_arrays(dataset: LiftedDataset):
    Z = np.hstack([dataset.Phi, dataset.U])
    Y = dataset.Phi_next
    if Z.shape[0] < Z.shape[1]:
        raise UnderdeterminedError(
            f"{Z.shape[0]} snapshot rows for {Z.shape[1]} regression columns"
        )
    return Z, Y


def fit_ols(dataset: LiftedDataset, ridge: float = 0.0, structure: dict | None = None
            ) -> LiftedModel:
    """Least-squares fit of the lifted one-step map.

    ``ridge`` adds Tikhonov rows; with ridge = 0 a singular regressor falls
    back to the minimum-norm pseudo-inverse solution with a warning.
    ``structure`` optionally pins whole rows (by column label) to known
    connectivity instead of regressing them.
    """
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    Z, Y = _regression_arrays(dataset)
    if ridge > 0:
        Z_fit = np.vstack([Z, np.sqrt(ridge) * np.eye(Z.shape[1])])
        Y_fit = np.vstack([Y, np.zeros((Z.shape[1], Y.shape[1]))])
    else:
        Z_fit, Y_fit = Z, Y
    coef, _, rank, _ = np.linalg.lstsq(Z_fit, Y_fit, rcond=None)
    if ridge == 0 and rank < Z.shape[1]:
        warnings.warn(
            "singular regressor with ridge=0; using minimum-norm pseudo-inverse solution"
        )
    A = coef.T
    if structure:
        label_row = {label: i for i, label in enumerate(dataset.labels)}
        for label, row in structure.items():
            row = np.asarray(row, dtype=float)
            if row.shape != (A.shape[1],):
                raise SchemaMismatchError(
                    f"structure row for {label!r} must have length {A.shape[1]}"
                )
            A[label_row[label]] = row
    residual = float(np.linalg.norm(Z @ A.T - Y))
    return LiftedModel(
        A=A,
        dt=dataset.dt,
        labels=dataset.labels,
        input_labels=dataset.input_labels,
        method="ols",
        n_state_cols=dataset.n_state_cols,
        residual=residual,
        provenance={**dataset.provenance, "ridge": ridge},
    )


def fit_tls(dataset: LiftedDataset) -> LiftedModel:
    """Classical total least squares via the SVD of [Phi U | Phi'].

    Raises DegenerateTlsError when the smallest singular subspace is not
    cleanly separated (gap below 1e-12), which covers rank-deficient data.
    """
    Z, Y = _regression_arrays(dataset)
    m, p = Z.shape[1], Y.shape[1]
    stacked = np.hstack([Z, Y])
    _, s, Vt = np.linalg.svd(stacked, full_matrices=True)
    s_full = np.zeros(m + p)
    s_full[: s.size] = s
    gap = s_full[m - 1] - s_full[m]
    if gap < TLS_GAP_TOL:
        raise DegenerateTlsError(
            f"singular-value gap {gap:.3e} at the TLS partition is below {TLS_GAP_TOL}"
        )
    V = Vt.T
    V12 = V[:m, m:]
    V22 = V[m:, m:]
    try:
        X = -np.linalg.solve(V22.T, V12.T).T
    except np.linalg.LinAlgError as exc:
        raise DegenerateTlsError(f"degenerate TLS subspace: {exc}") from exc
    A = X.T
    residual = float(np.linalg.norm(Z @ X - Y))
    return LiftedModel(
        A=A,
        dt=dataset.dt,
        labels=dataset.labels,
        input_labels=dataset.input_labels,
        method="tls",
        n_state_cols=dataset.n_state_cols,
        residual=residual,
        provenance=dict(dataset.provenance),
    )


def rollout(model: LiftedModel, phi0, inputs) -> Prediction:
    """Iterate phi_{t+1} = A [phi_t; u_t]; purely linear, no re-lifting."""
    phi0 = np.asarray(phi0, dtype=float).ravel()
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if phi0.shape[0] != model.n_lifted:
        raise SchemaMismatchError(
            f"phi0 has {phi0.shape[0]} entries, model lifts {model.n_lifted}"
        )
    if inputs.shape[1] != model.n_inputs:
        raise SchemaMismatchError(
            f"inputs have {inputs.shape[1]} channels, model expects {model.n_inputs}"
        )
    horizon = inputs.shape[0]
    lifted = np.empty((horizon + 1, model.n_lifted))
    lifted[0] = phi0
    for t in range(horizon):
        lifted[t + 1] = model.A @ np.concatenate([lifted[t], inputs[t]])
        if not np.all(np.isfinite(lifted[t + 1])):
            raise RolloutDivergenceError(
                f"non-finite lifted state at step {t + 1}", t + 1
            )
    times = np.arange(horizon + 1) * model.dt
    return Prediction(
        times=times,
        lifted=lifted,
        labels=model.labels,
        n_state_cols=model.n_state_cols,
    )


# --- JSON round trip -----------------------------------------------------------


def save_model(model: LiftedModel, path) -> None:
    payload = {
        "A": [[float(v) for v in row] for row in model.A],
        "dt": model.dt,
        "labels": list(model.labels),
        "input_labels": list(model.input_labels),
        "method": model.method,
        "n_state_cols": model.n_state_cols,
        "residual": model.residual,
        "provenance": model.provenance,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> LiftedModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return LiftedModel(
        A=np.asarray(payload["A"], dtype=float),
        dt=float(payload["dt"]),
        labels=tuple(payload["labels"]),
        input_labels=tuple(payload["input_labels"]),
        method=payload["method"],
        n_state_cols=int(payload["n_state_cols"]),
        residual=payload["residual"],
        provenance=payload.get("provenance", {}),
    )
