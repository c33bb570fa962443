from towerlab.semiflow.suspension import (
    OBSERVABLES,
    CorrelationSeries,
    DecayFit,
    Observable,
    SuspensionPoints,
    SuspensionSystem,
    backward_chain,
    correlation_series,
    decay_fit,
    exponential_moment,
    first_return_decomposition,
    flow_step,
    observable,
    sample_invariant,
    suspend,
)
from towerlab.semiflow.distortion import (
    CohomologyFit,
    DistortionResult,
    SkewPoint,
    cohomology_probe,
    distortion_pairs,
    local_product,
    sample_skew_points,
    telescoping_gap,
    temporal_distortion,
    uni_cohomology_consistency,
    unstable_leaf,
    D0,
)

__all__ = [n for n in dir() if not n.startswith("_")]
