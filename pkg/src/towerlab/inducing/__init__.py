"""Inducing construction of the return time R with its empirical bound checks."""

from towerlab.inducing.constants import (
    AmbientSystem,
    InducingConstants,
    D_ratio,
    D_sup,
    ambient_for,
    annulus_index,
    derive_constants,
    least_L,
)
from towerlab.inducing.construction import (
    CellGrid,
    InducingResult,
    PartitionState,
    advance_generation,
    build_inducing,
    initial_state,
    replay_labels,
)
from towerlab.inducing.reports import (
    TailFit,
    collar_census,
    fit_result_tail,
    keyfact_report,
    markov_check,
    ratio_report,
    tail_fit,
)

__all__ = [
    "AmbientSystem", "InducingConstants", "D_ratio", "D_sup", "ambient_for", "annulus_index",
    "derive_constants", "least_L", "CellGrid", "InducingResult", "PartitionState",
    "advance_generation", "build_inducing", "initial_state", "replay_labels", "TailFit",
    "collar_census", "fit_result_tail", "keyfact_report", "markov_check", "ratio_report", "tail_fit",
]
