"""pgnlab: a desk-scale laboratory for gradient-based transferable attacks.

Builds small trainable classifiers over an in-repo reverse-mode autodiff
engine, implements the sign-step attack family (I/MI/NI/VMI/EMI-FGSM), the
norm-penalized PGN attack with its finite-difference curvature machinery,
and the evaluation harness (transfer matrices, sweeps, timing ablations,
flatness diagnostics).
"""

__version__ = "0.1.0"

from .attacks import (AdvResult, AttackBudget, BaselineParams, PgnParams,
                      dim_transform, emifgsm, ensemble_logits, ifgsm, mifgsm,
                      nifgsm, pgn, regularized_attack, sim_gradient, vmifgsm)
from .data import Dataset, gen_synthetic, load_idx, write_idx
from .engine import Graph, Tensor, eval_loss, grad_input, grad_params
from .errors import (ConsistencyError, FormatError, LengthError, NumericError,
                     PgnLabError, ShapeError, TrainingError, UsageError)
from .flatness import (SurfaceGrid, loss_surface, max_grad_norm_in_ball,
                       surface_to_csv)
from .hvp import (EvalCounter, FdConfig, exact_hvp_oracle, fdm_hvp,
                  full_hessian, pgn_gradient, reg_objective_gradient)
from .models import Classifier, TrainConfig, load, save, train

__all__ = [
    "AdvResult", "AttackBudget", "BaselineParams", "Classifier",
    "ConsistencyError", "Dataset", "EvalCounter", "FdConfig", "FormatError",
    "Graph", "LengthError", "NumericError", "PgnLabError", "PgnParams",
    "ShapeError", "SurfaceGrid", "Tensor", "TrainConfig", "TrainingError",
    "UsageError", "dim_transform", "emifgsm", "ensemble_logits", "eval_loss",
    "exact_hvp_oracle", "fdm_hvp", "full_hessian", "gen_synthetic",
    "grad_input", "grad_params", "ifgsm", "load", "load_idx", "loss_surface",
    "max_grad_norm_in_ball", "mifgsm", "nifgsm", "pgn", "pgn_gradient",
    "reg_objective_gradient", "regularized_attack", "save", "sim_gradient",
    "surface_to_csv", "train", "vmifgsm", "write_idx",
]
