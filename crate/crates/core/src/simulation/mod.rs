//! Monte Carlo harness: potential-outcome generator, synthetic external
//! estimates and the incompatibility sweep.

mod dgp;
mod sweep;

pub use dgp::{
    dgp_schema, generate_replication, synthetic_manifest, true_effects, DgpConfig,
    ReplicationSeed,
};
pub use sweep::{
    run_manifest_text, run_sweep, write_results, EstimatorSummary, SweepConfig, SweepResult,
    SweepRow, MAX_FAILURE_RATE, RESULTS_HEADER, RUN_MANIFEST_VERSION,
};
