"""Noise-robust behavioral cloning via q-log likelihood, with attention maps.

Subpackages:
  qmath       q-deformed logarithm, gradient weights, divergence diagnostic
  policy      diagonal-Gaussian head, standard and deformed losses
  net         numpy conv/dense network, weighted backprop, Adam, TBCW files
  train       epoch loop and NLL scoring
  vbp         original and modified VisualBackProp attention maps
  world       rectangular course and the forward-view raster renderer
  sim         vehicle dynamics, scripted expert, noise injection, rollouts
  dataset_io  trajectory/dataset containers and the TBCD file format
  config      experiment configuration tree (YAML-backed)
  cli         command-line front end (generate/train/sweep/rollout/visualize)
"""

from .policy import DiagonalGaussian, LossBatchResult, bc_loss, nll_loss
from .qmath import gradient_ratio, q_log, q_log_from_log

__all__ = [
    "DiagonalGaussian",
    "LossBatchResult",
    "bc_loss",
    "nll_loss",
    "gradient_ratio",
    "q_log",
    "q_log_from_log",
]

__version__ = "0.1.0"
