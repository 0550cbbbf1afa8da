"""Kalman filtering over fading tree-topology sensor networks.

Simulates a linear time-varying plant observed through a tree of wireless
sensors whose packet losses are driven by a (semi-)Markov network state,
and evaluates certificates that guarantee an exponential bound on the
expected estimation-error covariance, both analytically and by Monte Carlo.
"""

from netkf.errors import (
    DimensionError,
    ModelError,
    NetkfError,
    NumericalError,
    ScenarioError,
)
from netkf.kalman import FilterState, StepRecord, kf_step, run_filter
from netkf.linalg import (
    DEFAULT_RANK_TOLERANCE,
    RankTolerance,
    numerical_rank,
    observability_matrix,
    spectral_norm,
    transition_matrix,
)
from netkf.montecarlo import (
    BoundFit,
    DriftProbe,
    MonteCarloResult,
    TrialLog,
    drift_probe,
    fit_bound,
    read_series_csv,
    run_monte_carlo,
)
from netkf.network import (
    ConstantPolicy,
    DirectSuccess,
    DiscreteGain,
    DropoutRealization,
    ExponentialGain,
    FskSuccess,
    LinkModel,
    LognormalGain,
    MarkovNetworkChain,
    PerStatePolicy,
    PointMassGain,
    SaturatedInversePolicy,
    SemiMarkovNetworkChain,
    TableSuccess,
    Topology,
    assemble_observation,
    link_success_prob,
    path_success_prob,
    phi_table,
    sample_dropout_batch,
    sample_dropouts,
    sample_state_path,
)
from netkf.plant import (
    PlantModel,
    SensorSpec,
    Trajectory,
    simulate_plant,
    validate_model,
)
from netkf.scenario import (
    Scenario,
    bundled_scenario_names,
    load_bundled,
    load_scenario,
    scenario_from_dict,
)
from netkf.stability import (
    RankSuccessSet,
    StabilityReport,
    check_markov_certificate,
    check_semi_markov_certificate,
    check_single_sensor_certificate,
    rank_failure_rates,
    rank_failure_rates_mc,
    rank_success_set,
    window_rank_failure_rates,
)

__version__ = "0.1.0"
