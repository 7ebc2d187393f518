"""Physics-informed GCN-FFNN solvers for nonlinear PDEs on grid graphs."""
from .domain import GridSpec, build_graph, split_inside, split_outside
from .evaluation import MetricReport, evaluate, metrics
from .models import (
    ARCHITECTURES,
    FfnnSpec,
    FusionSpec,
    GcnSpec,
    build_model,
    ffnn_forward,
    fusion_forward,
    gcn_forward,
    init_params,
    param_count,
)
from .optim import LbfgsConfig, lbfgs_minimize
from .problems import PROBLEMS, get_problem
from .training import LossReport, assemble_loss, train_stream, train_two_phase

__version__ = "0.1.0"

__all__ = [
    "ARCHITECTURES",
    "FfnnSpec",
    "FusionSpec",
    "GcnSpec",
    "GridSpec",
    "LbfgsConfig",
    "LossReport",
    "MetricReport",
    "PROBLEMS",
    "assemble_loss",
    "build_graph",
    "build_model",
    "evaluate",
    "ffnn_forward",
    "fusion_forward",
    "gcn_forward",
    "get_problem",
    "init_params",
    "lbfgs_minimize",
    "metrics",
    "param_count",
    "split_inside",
    "split_outside",
    "train_stream",
    "train_two_phase",
]
