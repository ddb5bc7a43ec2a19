//! Cross-validation, grid search, forward-simulation scoring and reports.

mod cv;
mod metrics;
mod report;
mod simulation;

pub use cv::{
    evaluate_fold, grid_search, run_cv, select_best, CvResult, EmbeddedScenario, FoldOutcome,
    GridOutcome, ScoreModel, Trainer,
};
pub use metrics::{f1_score, mean_std, ConfusionCounts};
pub use report::{
    emit_report, load_report, percent_cell, render_table, Report, REPORT_SCHEMA_VERSION,
};
pub use simulation::{
    aggregate_rankings, explanation_effect, summarize_effects, EffectScore, EffectSummary,
    ForwardSimSession, RankSummary, UtilityResponse,
};
