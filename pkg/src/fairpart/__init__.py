"""Cost-optimal geographical partitions with individual and group fairness."""

from .costmodel import CostModel, FacilitySet, cost, load_cost_matrix, load_facilities
from .errors import (
    ConfigError,
    DataError,
    DimensionMismatch,
    EmptyGroup,
    FairPartError,
    Infeasible,
    NonFinite,
    ParseError,
    UnknownSite,
    ZeroDensity,
)
from .population import (
    DiscretePopulation,
    GroupMixture,
    TruncatedGaussianMixture,
    UniformBox,
    load_population,
    posterior,
    sample_joint,
)
from .partition import PartitionHandle, assign, assign_all_sites, closed_facilities, rasterize
from .report import FairnessReport, compare, evaluate, export_cdf
from .solver import (
    SolverConfig,
    SolverResult,
    WeightMatrix,
    argmin_facility,
    classical_ot_solve,
    dual_objective_estimate,
    effective_score,
    project_v_to_w,
    region_masses,
    run,
)

__version__ = "0.1.0"
