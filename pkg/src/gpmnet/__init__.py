"""Markov network discovery with generalized precision matrices of score-matching energy models."""

from .energy import EnergyModel, FeatureBasis, build_basis
from .gpm import GpmMatrix, compute_gpm, extract_graph
from .graphs import Dag, UndirectedGraph, hamming
from .penalty import PenaltyConfig, PenaltyKind
from .synthgen import Family, GenSpec, generate
from .train import BasisConfig, FitResult, TrainConfig, fit
from .types import Dataset, Schema, VariableSpec, load_dataset, save_dataset

__version__ = "0.1.0"
