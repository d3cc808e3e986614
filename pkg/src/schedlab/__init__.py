"""schedlab: queue- and channel-aware scheduling simulation and decay-rate analysis."""

from .ldp import (
    AllocationMatrix,
    IoptResult,
    IoptSearch,
    PathSample,
    aux_growth,
    compute_iopt,
    is_stabilizable,
    path_cost,
    poisson_rate,
    relative_entropy,
    w_growth,
)
from .model import (
    RandomSource,
    SystemConfig,
    TraceCounters,
    config_from_json,
    config_to_json,
    sample_arrivals,
    sample_channel,
    step_queues,
    reference_config,
    validate_config,
)
from .schedulers import (
    Exp,
    Heterogeneous,
    MaxWeight,
    Policy,
    SelectionScore,
    exp_select,
    het_select,
    mw_select,
    policy_from_json,
    policy_to_json,
    select,
    validate_policy,
)
from .simulator import (
    DecayFit,
    EmpiricalPhi,
    OverflowEstimate,
    RegionMap,
    ReplicationOutput,
    ScaledTrace,
    SimResult,
    SimSpec,
    decision_regions,
    empirical_phi,
    estimate_overflow,
    fit_decay_rate,
    run_replication,
    run_replications,
    run_simulation,
    scaled_trace,
)

__version__ = "0.1.0"
