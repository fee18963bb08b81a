"""Causality-aware lifting linearization of lumped-parameter nonlinear systems.

Pipeline: parse a network model, assign integral causality, classify
auxiliary observables as causal/anticausal, repair anticausality by
physical augmentation (small inertia/capacitance) or integrated
observables, simulate ground truth, build lifted snapshot datasets under
configurable bases, identify discrete-time lifted linear models by
ordinary or total least squares, and score rollouts against held-out
trajectories.
"""

from ._kernels import backend_name
from .causality import (
    AugmentationParams,
    CausalAssignment,
    Il2Plan,
    ObservablePlan,
    apply_al2,
    apply_il2,
    assign_causality,
    classify_observables,
    default_augmentation,
)
from .netmodel import (
    ConstitutiveExpr,
    Element,
    Junction,
    NetworkModel,
    eval_law,
    format_model,
    invert_law,
    parse_model,
)
from .simulate import (
    CompiledOde,
    InputSignal,
    Trajectory,
    derive_ode,
    generate_signal,
    integrate,
    simulate_model,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentationParams",
    "CausalAssignment",
    "CompiledOde",
    "ConstitutiveExpr",
    "Element",
    "Il2Plan",
    "InputSignal",
    "Junction",
    "NetworkModel",
    "ObservablePlan",
    "Trajectory",
    "apply_al2",
    "apply_il2",
    "assign_causality",
    "backend_name",
    "classify_observables",
    "default_augmentation",
    "derive_ode",
    "eval_law",
    "format_model",
    "generate_signal",
    "integrate",
    "invert_law",
    "parse_model",
    "simulate_model",
]
