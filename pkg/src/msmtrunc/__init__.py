"""Nonparametric multi-state estimation under left truncation and right censoring."""

from .core import (
    CENSORED,
    DataError,
    Dataset,
    EventTable,
    ObservationRecord,
    StateSpace,
    build_event_table,
    ingest_long_format,
    landmark_subset,
    read_long_format,
    risk_set_sizes,
    write_long_format,
)
from .cox import CoxFit, cox_markov_check
from .estimators import (
    CumulativeHazardMatrix,
    NotEstimableError,
    ProbabilityCurve,
    aalen_johansen,
    initial_distribution,
    landmark_aalen_johansen,
    nelson_aalen,
    product_integral,
    state_occupation,
)
from .harness import ExperimentConfig, MetricsRow, Target, run_experiment, true_value_oracle
from .resampling import (
    BootstrapSample,
    ConfidenceInterval,
    DegenerateSampleError,
    efron_bootstrap,
    standardized_quantile_ci,
    wild_bootstrap_nelson_aalen,
    wild_bootstrap_transition_probability,
)
from .simgen import ScenarioConfig, simulate_latent, simulate_study

__version__ = "0.1.0"
