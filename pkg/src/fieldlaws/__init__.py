"""Maximal inequalities and strong laws for random fields on the integer lattice."""

from importlib import metadata as _metadata

try:
    __version__ = _metadata.version("artifact")
except _metadata.PackageNotFoundError:
    __version__ = "0.1.0"

from .blockdecomp import build_partition, block_sums, optimal_c, verify_chain
from .dsequences import DSequence, construct_beta, parse_family, series_sum
from .fieldgen import FieldModel, Margin, enumerate_outcomes, generate, iid
from .lattice import LatticeTable, MultiIndex, RectangleSchedule, prefix_sums, running_weighted_max
from .maximal import check_transfer_moment, check_transfer_prob, fit_constant, markov_bridge
from .slln import logweighted_demo, sup_ratio, trajectory

__all__ = [
    "DSequence", "FieldModel", "LatticeTable", "Margin", "MultiIndex", "RectangleSchedule",
    "block_sums", "build_partition", "check_transfer_moment", "check_transfer_prob",
    "construct_beta", "enumerate_outcomes", "fit_constant", "generate", "iid",
    "logweighted_demo", "markov_bridge", "optimal_c", "parse_family", "prefix_sums",
    "running_weighted_max", "series_sum", "sup_ratio", "trajectory", "verify_chain",
]
