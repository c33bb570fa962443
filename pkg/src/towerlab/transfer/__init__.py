"""Transfer operators on collocation grids and the oscillatory cancellation apparatus."""

from towerlab.transfer.grid import CollocationGrid, GridFunction, holder_norms, holder_seminorm
from towerlab.transfer.operators import (
    DEFAULT_EPS,
    EigenData,
    LYReport,
    NormProbe,
    TransferOperator,
    TwistParameter,
    C2_chain,
    C3_ly,
    apply_normalized,
    apply_twisted,
    get_operator,
    hurwitz_zeta,
    lasota_yorke_probe,
    leading_eigendata,
    norm_contraction_probe,
    probe_dictionary,
    random_test_functions,
    twisted_values,
)
from towerlab.transfer.cancellation import (
    TYPE_H1,
    TYPE_H2,
    UNTYPED,
    BallFamily,
    CancellationResult,
    CancellationSetup,
    ConeCheck,
    ConePair,
    ConeRun,
    FedReport,
    UniReport,
    assign_types,
    ball_family,
    bump,
    cancellation_check,
    cancellation_setup,
    chi_cutoff,
    cone_iterate,
    damped_step,
    dpsi,
    fed_probe,
    psi,
    random_cone_pair,
    uni_estimate,
)
