"""Over-the-air decentralized federated learning simulator.

Decentralized SGD with gradient tracking and SAGA-style variance reduction,
exchanging models through analog over-the-air superposition on fading
device-to-device channels, plus DSGD/DSGT baselines, a deterministic
experiment harness, and the convergence-bound evaluator.
"""

from ._kernels import BACKEND
from .channel import ChannelBlockRealization, ChannelParams, ScalingFactor
from .harness import (
    DivergenceError,
    ExperimentConfig,
    MetricsRecord,
    RhoFit,
    TheoremBound,
    evaluate_bound,
    fit_rho,
    run_experiment,
)
from .learners import AlgorithmConfig, DeviceState
from .problems import LocalDataset, LogisticProblem, solve_centralized, synthesize
from .scheduler import Schedule, coloring_schedule, naive_schedule
from .topology import MixingMatrix, NetworkGraph, laplacian_mixing, spectral_gap

__version__ = "0.1.0"

__all__ = [
    "AlgorithmConfig",
    "BACKEND",
    "ChannelBlockRealization",
    "ChannelParams",
    "DeviceState",
    "DivergenceError",
    "ExperimentConfig",
    "LocalDataset",
    "LogisticProblem",
    "MetricsRecord",
    "MixingMatrix",
    "NetworkGraph",
    "RhoFit",
    "Schedule",
    "ScalingFactor",
    "TheoremBound",
    "coloring_schedule",
    "evaluate_bound",
    "fit_rho",
    "laplacian_mixing",
    "naive_schedule",
    "run_experiment",
    "solve_centralized",
    "spectral_gap",
    "synthesize",
]
