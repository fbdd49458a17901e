"""Feature-sparse residual networks trained along a dense-to-sparse path."""

__version__ = "0.1.0"

from .errors import ContractError, DivergenceError, NumericalError, ProxInvariantError
from .prox import ProxParams, hier_prox, group_hier_prox, general_hier_prox, apply_prox_all_features
from .network import ResidualNet, init_net, forward, loss, backward
from .training import TrainConfig, Path, PathCheckpoint, train_dense, train_path, refit_debiased

__all__ = [
    "ContractError",
    "DivergenceError",
    "NumericalError",
    "ProxInvariantError",
    "ProxParams",
    "hier_prox",
    "group_hier_prox",
    "general_hier_prox",
    "apply_prox_all_features",
    "ResidualNet",
    "init_net",
    "forward",
    "loss",
    "backward",
    "TrainConfig",
    "Path",
    "PathCheckpoint",
    "train_dense",
    "train_path",
    "refit_debiased",
]
