"""Sparse-sensor temperature field reconstruction with quantile uncertainty and
interval Bayesian-network reliability."""

from .artifacts import (Dataset, generate_dataset, load_checkpoint, load_dataset, save_checkpoint,
                        save_dataset)
from .bn import BNGraph, BNNode, brute_force_joint, cpt_for_gate, infer, parallel_interval, series_interval
from .grid import DomainSpec, LayoutSpec, RegionMasks, build_masks, denormalize, load_layout, normalize
from .losses import LossWeights
from .net import NetConfig, TwoStageNet
from .predictor import Reconstruction, metrics, predict_mcqr
from .reliability import IntervalField, ProbInterval, interval_field, normal_prob_intervals
from .solver import SolverConfig, solve_steady
from .stochastic import PowerDistribution, stream
from .trainer import TrainConfig, train

__version__ = "0.1.0"
