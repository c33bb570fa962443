"""Inducing schemes, twisted transfer operators and suspension flows on model maps."""

__version__ = "0.1.0"

from towerlab.models import (
    ModelSystem,
    branch_eval,
    birkhoff_roof,
    get_model,
    list_models,
    verify_gibbs_markov,
    verify_skew_contraction,
)

__all__ = [
    "__version__",
    "ModelSystem",
    "branch_eval",
    "birkhoff_roof",
    "get_model",
    "list_models",
    "verify_gibbs_markov",
    "verify_skew_contraction",
]
