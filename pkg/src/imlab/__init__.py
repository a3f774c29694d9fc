"""imlab: influence matrices for controlled-SWAP brickwork circuits.

The toolkit builds the exact group-algebra matrix-product form of the
influence matrix, classifies its bond growth, and cross-validates temporal
entanglement, stochastic sampling, level statistics, and teleportable
entanglement against brute-force oracles.
"""

from . import errors
from .channels import (
    QuantumChannel,
    causal_break_channel,
    identity_channel,
    is_erase_prepare,
    mixed_channel,
    validate_density_matrix,
)
from .gates import (
    ControlledGateSet,
    ImpurityObservable,
    ProductInitialState,
    conjugate_deform,
    make_gate_set,
    model_a,
    model_b,
    model_c,
    plus_state,
    sigma,
)
from .group_walk import (
    CoveringGrid,
    GroupElement,
    GrowthVerdict,
    ReachableSet,
    build_covering,
    classify_growth,
    distance,
    identity_element,
    inverse,
    multiply,
    project_to_group,
    reachable_set,
    sample_haar,
    snap,
)
from .influence_matrix import (
    TEEProfile,
    TemporalMPS,
    TwoSiteCellState,
    brute_force_observable,
    build_exact_im,
    build_im_topdown,
    check_solvable_state,
    compress,
    contract_with_process,
    grow_im_truncated,
    im_local_tensor,
    temporal_entanglement,
)
from .memory import (
    BipartiteState,
    NegativityHistogram,
    TeleportFamily,
    effective_state,
    negativity,
    negativity_histogram,
    teleport_oracle,
)
from .spectral import (
    SpectrumResult,
    build_floquet_obc,
    lss_report,
    reference_distribution,
    spacing_ratios,
)
from .stochastic import (
    MCEstimate,
    WalkConfig,
    conditional_prob,
    estimate_observable,
    estimate_two_point,
    exact_observable_via_transfer,
    initial_prob,
    snapped_walk_observable,
)

__all__ = [
    "errors",
    "QuantumChannel",
    "causal_break_channel",
    "identity_channel",
    "is_erase_prepare",
    "mixed_channel",
    "validate_density_matrix",
    "TEEProfile",
    "TemporalMPS",
    "TwoSiteCellState",
    "brute_force_observable",
    "build_exact_im",
    "build_im_topdown",
    "check_solvable_state",
    "compress",
    "contract_with_process",
    "grow_im_truncated",
    "im_local_tensor",
    "temporal_entanglement",
    "ControlledGateSet",
    "ImpurityObservable",
    "ProductInitialState",
    "conjugate_deform",
    "make_gate_set",
    "model_a",
    "model_b",
    "model_c",
    "plus_state",
    "sigma",
    "CoveringGrid",
    "GroupElement",
    "GrowthVerdict",
    "ReachableSet",
    "build_covering",
    "classify_growth",
    "distance",
    "identity_element",
    "inverse",
    "multiply",
    "project_to_group",
    "reachable_set",
    "sample_haar",
    "snap",
    "BipartiteState",
    "NegativityHistogram",
    "TeleportFamily",
    "effective_state",
    "negativity",
    "negativity_histogram",
    "teleport_oracle",
    "SpectrumResult",
    "build_floquet_obc",
    "lss_report",
    "reference_distribution",
    "spacing_ratios",
    "MCEstimate",
    "WalkConfig",
    "conditional_prob",
    "estimate_observable",
    "estimate_two_point",
    "exact_observable_via_transfer",
    "initial_prob",
    "snapped_walk_observable",
]

__version__ = "0.1.0"
