"""Multi-kernel MMD statistics and layerwise MMD domain adaptation for small dense nets."""

import logging

__version__ = "0.1.0"

logging.getLogger(__name__).addHandler(logging.NullHandler())

from .data import LabeledDataset, gen_gaussians, gen_moons, read_csv, write_csv
from .diagnostics import MKMMDTest, TwoSampleLogistic, a_distance, permutation_test
from .exceptions import (DanError, DegenerateInputError, InfeasibleDirectionError, InputError,
                         NumericError, ParameterError, ParseError, SolverError)
from .kernels import (KernelFamily, build_family, eval_gaussian, eval_multi, median_heuristic,
                      single_kernel)
from .mmd import (MmdReport, QuadTuple, g_k, make_quads, mmd2_linear, mmd2_quadratic_unbiased,
                  per_kernel_stats)
from .network import (Activation, LayerSpec, Network, Trainability, backward, cross_entropy,
                      forward, load_checkpoint, save_checkpoint, sgd_step)
from .selection import normalize_beta, solve_beta
from .trainer import (AdaptationConfig, AdaptationTask, DANClassifier, Variant,
                      dan_loss_and_grads, evaluate, make_batches, train, update_beta)

__all__ = [
    "AdaptationConfig", "AdaptationTask", "Activation", "DANClassifier", "DanError",
    "DegenerateInputError", "InfeasibleDirectionError", "InputError", "KernelFamily",
    "LabeledDataset", "LayerSpec", "MKMMDTest", "MmdReport", "Network", "NumericError",
    "ParameterError", "ParseError", "QuadTuple", "SolverError", "Trainability",
    "TwoSampleLogistic", "Variant", "a_distance", "backward", "build_family", "cross_entropy",
    "dan_loss_and_grads", "eval_gaussian", "eval_multi", "evaluate", "forward", "g_k",
    "gen_gaussians", "gen_moons", "load_checkpoint", "make_batches", "make_quads",
    "median_heuristic", "mmd2_linear", "mmd2_quadratic_unbiased", "normalize_beta",
    "per_kernel_stats", "permutation_test", "read_csv", "save_checkpoint", "sgd_step",
    "single_kernel", "solve_beta", "train", "update_beta", "write_csv",
]
