//! Configuration, metrics and run orchestration behind the `pll` CLI.

mod config;
mod metrics;
mod run;

pub use config::{FlipKind, Method, PositiveKind, RunConfig, MAX_QUEUE};
pub use metrics::{
    evaluate, read_csv, EpochMetrics, EvalMetrics, RobustColumns, COMMON_COLUMNS, CSV_COLUMNS,
};
pub use run::{
    cmd_eval, cmd_gen, cmd_train, eval_model, generate, prepare_splits, train_on, GenOutput,
    RunOutcome, RunSummary, Splits,
};

use crate::error::PllError;
use crate::theory::{run_verification, VerifyOptions, VerifyReport};

/// Runs the theory property suites.
pub fn cmd_verify(opts: &VerifyOptions) -> VerifyReport {
    run_verification(opts)
}

/// Process exit status for an error: 1 configuration, 2 runtime, 3
/// verification.
pub fn exit_code(err: &PllError) -> i32 {
    match err {
        PllError::Config(_) | PllError::InvalidArgument(_) | PllError::Parse { .. } => 1,
        PllError::Verification(_) => 3,
        _ => 2,
    }
}
