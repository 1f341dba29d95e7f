"""Dynamic edge-exchangeable network model: simulation, inference, evaluation."""

from .errors import DomainError, ParseError
from .generative import Dynamics, ModelParams, simulate
from .temporal_graph import TemporalNetwork, load_temporal_edgelist, write_temporal_edgelist

__all__ = [
    "DomainError",
    "ParseError",
    "Dynamics",
    "ModelParams",
    "simulate",
    "TemporalNetwork",
    "load_temporal_edgelist",
    "write_temporal_edgelist",
]
__version__ = "0.1.0"
