//! Verification harness: trial lists per condition, cosine scoring, equal
//! error rate, and the leave-one-speaker-out experiment that ties them to the
//! compensation estimators.

mod eer;
mod loso;
mod report;
mod trials;

pub use eer::{compute_eer, Eer};
pub use loso::{compensate_loso, evaluate_conditions, run_loso_experiment, EerReport, FoldReport};
pub use report::{export_report, read_report, write_report, ReportRow};
pub use trials::{build_trials, cosine_score, score_trials, Condition, Trial, TrialList};
