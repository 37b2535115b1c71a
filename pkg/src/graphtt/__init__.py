"""Graph-regularized tensor-train completion.

``run_graphtt_opt`` fits a TT model by fiber-wise coordinate descent with
graph-Laplacian smoothness on every core. ``run_graphtt_vi`` is the Bayesian
counterpart: mean-field VI with GIG slice scales that prunes TT ranks.
"""

from .opt import OptConfig, run_baseline_als, run_graphtt_opt
from .tensor import TensorTrain, tt_reconstruct, tt_svd
from .vi import VIConfig, run_graphtt_vi

__version__ = "0.1.0"

__all__ = [
    "OptConfig", "TensorTrain", "VIConfig", "run_baseline_als", "run_graphtt_opt", "run_graphtt_vi",
    "tt_reconstruct", "tt_svd",
]
