"""Delay-tolerant decentralized SGD: predicting/clipping updates, a
synchronous simulator and convergence-bound calculators."""

from .analysis import (
    BoundInputs,
    BoundReport,
    bound_report,
    consensus_deviation,
    estimate_constants,
    lemma1_bound,
    theorem1_constants,
    theorem1_envelope,
    theorem2_R,
    theorem2_envelope,
)
from .objective import ObjectiveSpec
from .optimizer import VARIANTS, AlgorithmConfig, MetricsTrace, run_experiment
from .topology import (
    MixingMatrix,
    Topology,
    build_clipping_matrix,
    build_mask_matrix,
    build_predicting_matrix,
    effective_delta2,
    second_eigenvalue,
)

__version__ = "0.1.0"

__all__ = [
    "AlgorithmConfig",
    "BoundInputs",
    "BoundReport",
    "MetricsTrace",
    "MixingMatrix",
    "ObjectiveSpec",
    "Topology",
    "VARIANTS",
    "bound_report",
    "build_clipping_matrix",
    "build_mask_matrix",
    "build_predicting_matrix",
    "consensus_deviation",
    "effective_delta2",
    "estimate_constants",
    "lemma1_bound",
    "run_experiment",
    "second_eigenvalue",
    "theorem1_constants",
    "theorem1_envelope",
    "theorem2_R",
    "theorem2_envelope",
]
