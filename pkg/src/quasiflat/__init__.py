"""Exact linearization of configuration-flat, minimally underactuated systems.

A system with ``n`` degrees of freedom, ``n - 1`` inputs and a flat output
that depends on the configuration only is parameterized by flat-output
jets, analysed for admissible integrator-chain lengths ``kappa`` and
linearized by a quasi-static feedback of the state ``(q, v)``. Closed-loop
runs are certified against independently integrated chains.
"""

from .feedback import (
    BranchJumpError,
    FeedbackError,
    FeedbackSingularityError,
    NewtonDivergenceError,
    QuasiStaticFeedback,
    SolverConfig,
)
from .flatmodel import FlatSystem, ParameterizingMap, find_equilibrium, parameterize
from .models import MODELS, gantry_crane, get_model, vtol
from .multijet import JetFunction, JetPoint, MultiIndex, prolong
from .simulate import (
    IOCertificate,
    ReferenceSignal,
    SimulationError,
    Trace,
    certify_io,
    chain_oracle,
    plan_rest_to_rest,
    simulate_closed_loop,
    w_from_reference,
)
from .structure import (
    KappaReport,
    StructureError,
    StructureReport,
    analyze,
    enumerate_kappa,
    full_jacobian,
    kappa_jacobian,
    transform_map,
    verify_structure,
)

__version__ = "0.1.0"

__all__ = [
    "BranchJumpError", "FeedbackError", "FeedbackSingularityError", "NewtonDivergenceError",
    "QuasiStaticFeedback", "SolverConfig",
    "FlatSystem", "ParameterizingMap", "find_equilibrium", "parameterize",
    "MODELS", "gantry_crane", "get_model", "vtol",
    "JetFunction", "JetPoint", "MultiIndex", "prolong",
    "IOCertificate", "ReferenceSignal", "SimulationError", "Trace", "certify_io",
    "chain_oracle", "plan_rest_to_rest", "simulate_closed_loop", "w_from_reference",
    "KappaReport", "StructureError", "StructureReport", "analyze", "enumerate_kappa",
    "full_jacobian", "kappa_jacobian", "transform_map", "verify_structure",
]
