"""Operator-splitting integrators for linear port-Hamiltonian DAEs."""

from .phdae_core import (
    PHDAESystem,
    SemiExplicitPHDAE,
    KernelProjector,
    SinusoidalInput,
    ZeroInput,
    validate,
    hamiltonian,
    to_semi_explicit,
    kernel_projector,
    pencil_regular,
    index1_check,
    dissipation_residual,
)

__version__ = "0.1.0"

__all__ = [
    "PHDAESystem",
    "SemiExplicitPHDAE",
    "KernelProjector",
    "SinusoidalInput",
    "ZeroInput",
    "validate",
    "hamiltonian",
    "to_semi_explicit",
    "kernel_projector",
    "pencil_regular",
    "index1_check",
    "dissipation_residual",
]
