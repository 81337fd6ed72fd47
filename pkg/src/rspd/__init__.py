"""Restarted stochastic primal-dual solvers for convex-concave saddle problems."""

from .algorithms import SOLVERS, SolverConfig, SolverResult, arspd, inner_stage, pdsg, rspd, rspd_sc
from .core import (
    ProblemConstants,
    RunTrace,
    SaddleProblem,
    StageSchedule,
    TraceRecord,
    estimate_constants,
    make_arspd_plan,
    make_leb_schedule,
    make_sc_schedule,
    num_stages,
)
from .data import (
    SparseDataset,
    UniformSampler,
    load_libsvm,
    normalize_rows,
    parse_libsvm,
    serialize_libsvm,
    train_test_split,
)
from .errors import (
    ConfigurationError,
    ContractViolation,
    DegenerateProblemError,
    InvalidAccuracyError,
    NumericalFailure,
    ParseError,
    RspdError,
)
from .geometry import FeasibleSet, project_intersection, project_l1_ball, project_l2_ball, project_simplex
from .problems import AucProblem, DroProblem, SyntheticScProblem, auc_metric, make_synthetic

__version__ = "0.1.0"
