"""Compressed distributed L-Katyusha for horizontal and vertical federated learning."""

from .comm_sim import CostLedger, Fabric
from .compressors import Identity, NaturalDithering, PermKFamily, RandK
from .data_io import Dataset, load_libsvm, parse_libsvm, split_horizontal, split_vertical
from .problems import HorizontalProblem, Problem, ProblemConstants, estimate_constants

__version__ = "0.1.0"
