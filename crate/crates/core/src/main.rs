use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use otafl::bound::{bound_curve, write_bound_csv, BoundConstants};
use otafl::design::{min_variance_prescalers, zero_bias_prescalers, PolicyKind};
use otafl::harness::{
    assemble, compare_policies, evaluate_policy, write_report, CompareOptions, ExperimentConfig, Scenario,
    ScenarioSummary, StepsizeSpec,
};
use otafl::ota::PreScalerSet;
use otafl::wireless::Deployment;
use otafl::{OtaError, Result};

#[derive(Parser)]
#[command(name = "otafl", version, about = "Biased over-the-air federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (.json or .toml); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Deployment JSON overriding the configured or sampled one.
    #[arg(long)]
    deployment: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the scenario and write both fixed pre-scaler designs.
    Design(Common),
    /// Evaluate the optimality-error bound over the training horizon.
    Bound {
        #[command(flatten)]
        common: Common,
        /// Design file produced by `otafl design`.
        #[arg(long)]
        design: Option<PathBuf>,
        /// min-variance or zero-bias.
        #[arg(long, default_value = "min-variance")]
        policy: String,
        /// Stepsize; defaults to the configured fixed value or 1/L~.
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Train a single policy.
    Run {
        #[command(flatten)]
        common: Common,
        /// Policy label; defaults to the first configured policy.
        #[arg(long)]
        policy: Option<String>,
    },
    /// Train every configured policy on shared randomness and compare.
    Compare(Common),
}

#[derive(Serialize, Deserialize)]
struct DesignFile {
    scenario: ScenarioSummary,
    deployment: Deployment,
    min_variance: PreScalerSet,
    zero_bias: PreScalerSet,
}

#[derive(Serialize)]
struct BoundReport<'a> {
    policy: &'a str,
    constants: &'a BoundConstants,
    weighted_mu: f64,
    weighted_smoothness: f64,
    stepsize_limit: f64,
    participation: &'a [f64],
    model_bias_actual: f64,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(r) = common.replicates {
        cfg.replicates = r;
    }
    if let Some(d) = &common.deployment {
        cfg.deployment = Some(d.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| OtaError::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| OtaError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn design(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let scenario = Scenario::build(&cfg)?;
    create_dir(&common.out)?;
    let file = DesignFile {
        scenario: scenario.summary(),
        deployment: scenario.deployment.clone(),
        min_variance: min_variance_prescalers(&scenario.deployment, scenario.budget)?,
        zero_bias: zero_bias_prescalers(&scenario.deployment, scenario.budget)?,
    };
    scenario.deployment.save(&common.out.join("deployment.json"))?;
    write_json(&common.out.join("design.json"), &file)
}

fn bound(common: &Common, design: Option<&Path>, policy: &str, eta: Option<f64>) -> Result<()> {
    let cfg = load_config(common)?;
    let scenario = Scenario::build(&cfg)?;
    let kind = PolicyKind::parse(policy)?;
    let set = match design {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| OtaError::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
            let file: DesignFile = serde_json::from_str(&text)?;
            match kind {
                PolicyKind::MinVariance => file.min_variance,
                PolicyKind::ZeroBias => file.zero_bias,
                _ => return Err(OtaError::Config(format!("no fixed design for policy '{policy}'"))),
            }
        }
        None => scenario
            .policy(&kind)?
            .prescalers()
            .cloned()
            .ok_or_else(|| OtaError::Config(format!("no fixed design for policy '{policy}'")))?,
    };
    if set.len() != scenario.num_devices() {
        return Err(OtaError::Config("design and scenario disagree on the device count".into()));
    }
    let p = set.participation.clone();
    let probe = scenario.bound_constants(0.0, None);
    let l_tilde = probe.weighted_smoothness(&p)?;
    let eta = match (eta, &cfg.stepsize) {
        (Some(e), _) => e,
        (None, StepsizeSpec::Fixed { eta }) => *eta,
        (None, _) => 1.0 / l_tilde,
    };
    let w_tilde = scenario.surrogate_minimizer(&p)?;
    let constants = scenario.bound_constants(eta, Some(&w_tilde));
    let rounds: Vec<usize> = (0..=scenario.rounds).step_by(cfg.log_every).collect();
    let rows = bound_curve(&rounds, &constants, &set)?;
    create_dir(&common.out)?;
    write_bound_csv(&common.out.join("bound.csv"), &rows)?;
    let report = BoundReport {
        policy: kind.label(),
        constants: &constants,
        weighted_mu: constants.weighted_mu(&p)?,
        weighted_smoothness: l_tilde,
        stepsize_limit: scenario.stepsize_limit(&p)?,
        participation: &p,
        model_bias_actual: w_tilde.distance(&scenario.w_star),
    };
    write_json(&common.out.join("bound.json"), &report)
}

fn run(common: &Common, policy: Option<&str>) -> Result<()> {
    let cfg = load_config(common)?;
    let kind = match policy {
        Some(label) => PolicyKind::parse(label)?,
        None => cfg.policies[0].clone(),
    };
    let scenario = Scenario::build(&cfg)?;
    let report = evaluate_policy(&scenario, &kind, &CompareOptions::from_scenario(&scenario))?;
    write_report(&common.out, &assemble(&scenario, vec![report]))
}

fn compare(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let scenario = Scenario::build(&cfg)?;
    let report = compare_policies(&scenario, &cfg.policies, &CompareOptions::from_scenario(&scenario))?;
    write_report(&common.out, &report)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Design(c) => design(c),
        Command::Bound {
            common,
            design,
            policy,
            eta,
        } => bound(common, design.as_deref(), policy, *eta),
        Command::Run { common, policy } => run(common, policy.as_deref()),
        Command::Compare(c) => compare(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}
