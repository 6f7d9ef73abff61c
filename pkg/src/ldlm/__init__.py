"""Variational longitudinal distributed lag models.

Penalized-spline lag models with subject-level random effects (random lag
curves or random intercepts), fit by mean-field variational coordinate
ascent, with model selection via a variational AIC, interval estimation for
the treatment-control difference curve, and a global chi-squared test of
curve differences.
"""

__version__ = "0.1.0"

from .basis import BasisSpec, PenaltySpec, build_basis, build_penalty, subject_basis
from .criteria import SelectionResult, select, vaic
from .data_model import (
    DatasetError,
    DesignMatrices,
    LdlmDataset,
    ModelConfig,
    assemble,
    make_dataset,
    read_csv,
    write_csv,
)
from .inference import (
    Band,
    CurveEstimate,
    DegenerateSmootherError,
    DifferenceCurve,
    ZlsResult,
    difference_curve,
    gamma_band,
    gamma_curve,
    lag_smoothers,
    pointwise_interval,
    simultaneous_band,
    zls_test,
)
from .simstudy import SimConfig, StudyReport, run_power_curve, run_study, simulate_dataset, true_effect
from .vb import NumericalError, VariationalFit, VbState, elbo, fit

__all__ = [
    "BasisSpec",
    "PenaltySpec",
    "build_basis",
    "build_penalty",
    "subject_basis",
    "SelectionResult",
    "select",
    "vaic",
    "DatasetError",
    "DesignMatrices",
    "LdlmDataset",
    "ModelConfig",
    "assemble",
    "make_dataset",
    "read_csv",
    "write_csv",
    "Band",
    "CurveEstimate",
    "DegenerateSmootherError",
    "DifferenceCurve",
    "ZlsResult",
    "difference_curve",
    "gamma_band",
    "gamma_curve",
    "lag_smoothers",
    "pointwise_interval",
    "simultaneous_band",
    "zls_test",
    "SimConfig",
    "StudyReport",
    "run_power_curve",
    "run_study",
    "simulate_dataset",
    "true_effect",
    "NumericalError",
    "VariationalFit",
    "VbState",
    "elbo",
    "fit",
    "__version__",
]
