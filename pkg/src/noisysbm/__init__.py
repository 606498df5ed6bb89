"""Noisy stochastic block model: simulation, variational EM and FDR-controlled graph inference."""
__version__ = "0.1.0"

from .model import (  # noqa: E402
    LatentState,
    ModelParams,
    ObservationMatrix,
    l_value,
    p_value,
    pi0_pi1,
    scenario1_theta,
    validate_theta,
)
from .vem import FitConfig, FitResult, fit, select_q  # noqa: E402
from .mtp import bh, procedure_oracle, procedure_vem, q_values, t_threshold  # noqa: E402
from .sampler import sample_nsbm  # noqa: E402

__all__ = [
    "FitConfig", "FitResult", "LatentState", "ModelParams", "ObservationMatrix",
    "bh", "fit", "l_value", "p_value", "pi0_pi1", "procedure_oracle", "procedure_vem",
    "q_values", "sample_nsbm", "scenario1_theta", "select_q", "t_threshold", "validate_theta",
]
