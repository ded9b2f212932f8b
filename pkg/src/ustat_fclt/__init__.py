"""Degenerate U-statistics: kernels, Hoeffding decompositions, quadruple sums and FCLT experiments."""

from .hoeffding import DecomposedStatistic, DiscreteDistribution, ProductSpace, decompose
from .kernels import SparseKernel, contraction_norm, fractional_kernel, make_kernel, random_kernel
from .simulate import InputFamily, MonteCarloConfig, ProcessPath, ReplicationEnsemble, monte_carlo

__all__ = [
    "DecomposedStatistic",
    "DiscreteDistribution",
    "InputFamily",
    "MonteCarloConfig",
    "ProcessPath",
    "ProductSpace",
    "ReplicationEnsemble",
    "SparseKernel",
    "contraction_norm",
    "decompose",
    "fractional_kernel",
    "make_kernel",
    "monte_carlo",
    "random_kernel",
]
