"""Forecasting on graphs from sampled nodes with parallel vertex and spectral GRUs."""

from ._kernels import BACKEND
from .graph import Graph, Spectrum, gft, graph_spectrum, igft
from .model import BaselineGruModel, SgGruModel, estimate_flops, init_baseline, init_model
from .sampling import SamplingPlan, make_plan, select_plan

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Graph", "Spectrum", "gft", "igft", "graph_spectrum", "SamplingPlan",
    "make_plan", "select_plan", "SgGruModel", "BaselineGruModel", "init_model",
    "init_baseline", "estimate_flops", "__version__",
]
