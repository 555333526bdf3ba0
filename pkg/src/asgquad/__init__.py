"""Locally adaptive sparse grid quadrature for noisy Monte Carlo models."""

from .grid import (
    DomainError,
    GridNode,
    GridStructureError,
    MultiIndex,
    SparseGrid,
    SurplusCoefficients,
    basis_value_1d,
    children,
    full_sparse_grid_keys,
    load_checkpoint,
    make_index,
    node_position_1d,
    parents,
    save_checkpoint,
    surplus_coefficient_row,
    weight,
    weight_1d,
)
from .driver import (
    ModelEvaluationError,
    RefinementConfig,
    RefinementMode,
    RunReport,
    ancestor_closure,
    indicator,
    refine_loop,
    select_refinement,
)
from .sampling import (
    SampleAccumulator,
    VarianceSchedule,
    propagated_surplus_variance,
    quadrature_noise_variance,
    sample_to_target,
    verify_b,
)

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "GridNode",
    "GridStructureError",
    "ModelEvaluationError",
    "MultiIndex",
    "RefinementConfig",
    "RefinementMode",
    "RunReport",
    "SampleAccumulator",
    "SparseGrid",
    "SurplusCoefficients",
    "VarianceSchedule",
    "ancestor_closure",
    "basis_value_1d",
    "children",
    "full_sparse_grid_keys",
    "indicator",
    "load_checkpoint",
    "make_index",
    "node_position_1d",
    "parents",
    "propagated_surplus_variance",
    "quadrature_noise_variance",
    "refine_loop",
    "sample_to_target",
    "save_checkpoint",
    "select_refinement",
    "surplus_coefficient_row",
    "verify_b",
    "weight",
    "weight_1d",
]
