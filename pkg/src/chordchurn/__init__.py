"""Lookup cost of Chord under churn: analytic recursions, maintenance steady
states, a discrete-event simulator and an experiment harness tying them
together."""

from .lookup import (
    CostTable,
    FingerDeathProfile,
    backup_probabilities,
    nochurn_asymptotic,
    nochurn_partial_sum_average,
    scaling_form,
    solve_nochurn,
    solve_with_churn,
)
from .ring import (
    DomainError,
    RingParams,
    at_least_one,
    first_node_conditional,
    interval_pdf,
    ring_distance,
)
from .steady_state import (
    CorrectionOnChange,
    MaintenanceConfig,
    Periodic,
    SolverError,
    SteadyState,
    coc_death_fraction,
    coc_equation_residuals,
    death_profile,
    estimate_churn,
    periodic_death_fraction,
    representative_f,
    solve_coc,
)

__version__ = "0.1.0"

__all__ = [
    "CostTable",
    "FingerDeathProfile",
    "backup_probabilities",
    "nochurn_asymptotic",
    "nochurn_partial_sum_average",
    "scaling_form",
    "solve_nochurn",
    "solve_with_churn",
    "DomainError",
    "RingParams",
    "at_least_one",
    "first_node_conditional",
    "interval_pdf",
    "ring_distance",
    "CorrectionOnChange",
    "MaintenanceConfig",
    "Periodic",
    "SolverError",
    "SteadyState",
    "coc_death_fraction",
    "coc_equation_residuals",
    "death_profile",
    "estimate_churn",
    "periodic_death_fraction",
    "representative_f",
    "solve_coc",
]
