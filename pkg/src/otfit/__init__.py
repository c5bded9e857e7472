"""Learnable ground costs and entropic Monge map estimators."""

from .measures import DiscreteMeasure
from .costs import ConvexCost, CostModel, CouplingFlow, IcnnParams, squared_euclidean_cost
from .entropic import SinkhornSolution, Coupling, sinkhorn, cost_matrix, sinkhorn_divergence

__all__ = [
    "DiscreteMeasure",
    "ConvexCost",
    "CostModel",
    "CouplingFlow",
    "IcnnParams",
    "squared_euclidean_cost",
    "SinkhornSolution",
    "Coupling",
    "sinkhorn",
    "cost_matrix",
    "sinkhorn_divergence",
]

__version__ = "0.1.0"
