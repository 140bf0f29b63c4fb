"""Hyperreduction: magic points, DEIM/LEHM/LSPG online solvers, xi-weight homogenization."""

from .kernel import HyperKernel
from .magic import (MagicPointError, MagicPoints, deim_indices, reduced_domain, residual_modes,
                    select_magic_points)
from .model import (METHODS, ConditioningWarning, HyperModel, HyperPathResult, HyperStepResult,
                    OnlineAudit, Timings, XiWeights, build_hyper_model, deim_fit, deim_matrix,
                    fit_xi, hyper_homogenize, hyper_newton, hyper_newton_step_deimlike,
                    hyper_newton_step_lspg, lehm_fit, lehm_matrix, run_hyper_path,
                    xi_training_data)
from .nnls import NNLSError, nnls

__all__ = [
    "HyperKernel", "MagicPointError", "MagicPoints", "deim_indices", "reduced_domain",
    "residual_modes", "select_magic_points", "METHODS", "ConditioningWarning", "HyperModel",
    "HyperPathResult", "HyperStepResult", "OnlineAudit", "Timings", "XiWeights",
    "build_hyper_model", "deim_fit", "deim_matrix", "fit_xi", "hyper_homogenize", "hyper_newton",
    "hyper_newton_step_deimlike", "hyper_newton_step_lspg", "lehm_fit", "lehm_matrix",
    "run_hyper_path", "xi_training_data", "NNLSError", "nnls",
]
