//! Benchmark data-generating processes and the Monte Carlo replication harness.

mod dgp;
mod harness;

pub use dgp::{
    apply_local_perturbation, expit, max_logit_component, overlap_constant, sample_dgp, DgpSpec, OutcomeForm,
    DEFAULT_NOISE_VARIANCE, DIM,
};
pub use harness::{
    dictionary_size, dictionary_size_in, knots_for_n, run_replication, run_replications, EstimateSummary, MetricsRow, MetricsTable,
    ReplicationRecord, SimulationConfig, SimulationResult, DICTIONARY_SCHEDULE, THREADS_ENV,
};
