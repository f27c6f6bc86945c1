//! Experiment orchestration: configuration, scenario construction, the
//! training loop, stepsize search and policy comparison.

mod compare;
mod config;
mod run;
mod scenario;

pub use compare::{
    assemble, compare_policies, evaluate_policy, ranks, spearman, time_to_loss, uniformity_test, write_report,
    CompareOptions, ComparisonReport, ParticipationTest, PolicyReport, TimeToTarget,
};
pub use config::{elapsed_ms, rounds_from_budget, DataSource, ExperimentConfig, StepsizeSpec};
pub use run::{
    grid_search_stepsize, mean_and_se, run_experiment, run_replicates, summarize, GridCandidate,
    GridSearchResult, PolicyCurves, RoundTrace, RunOptions, RunResult, DIVERGENCE_FACTOR,
};
pub use scenario::{Scenario, ScenarioSummary};
