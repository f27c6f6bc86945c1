use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use super::config::StepsizeSpec;
use super::run::{grid_search_stepsize, run_replicates, summarize, GridSearchResult, PolicyCurves, RunOptions};
use super::scenario::{Scenario, ScenarioSummary};
use crate::design::PolicyKind;
use crate::error::{OtaError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CompareOptions {
    pub replicates: usize,
    pub grid_replicates: usize,
    pub stepsize: StepsizeSpec,
    pub track_accuracy: bool,
}

impl CompareOptions {
    pub fn from_scenario(scenario: &Scenario) -> Self {
        let c = &scenario.config;
        Self {
            replicates: c.replicates,
            grid_replicates: c.grid_replicates,
            stepsize: c.stepsize.clone(),
            track_accuracy: c.track_accuracy,
        }
    }
}

/// Tests on the per-device mean aggregation weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipationTest {
    /// Wald statistic `sum_m (w_m - 1/N)^2 / Var(w_m)` against uniform weights.
    pub uniformity_statistic: f64,
    pub uniformity_dof: usize,
    pub uniformity_p_value: f64,
    /// Spearman correlation between path gain and mean weight.
    pub spearman_rho: f64,
    /// One-sided p-value for a positive correlation.
    pub spearman_p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub kind: PolicyKind,
    pub label: String,
    pub eta: f64,
    pub stepsize_limit: f64,
    pub grid: Option<GridSearchResult>,
    pub expected_participation: Vec<f64>,
    pub participation_test: ParticipationTest,
    pub curves: PolicyCurves,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeToTarget {
    pub policy: String,
    pub reference: String,
    pub target_loss: f64,
    pub policy_ms: Option<f64>,
    pub reference_ms: Option<f64>,
    /// `reference_ms / policy_ms`; above 1 means the policy is faster.
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub scenario: ScenarioSummary,
    /// Device indices by decreasing path gain.
    pub device_order: Vec<usize>,
    pub policies: Vec<PolicyReport>,
    pub time_to_target: Vec<TimeToTarget>,
}

/// Average ranks (ties share the mean rank), 1-based.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with a one-sided p-value for `rho > 0` from
/// the t approximation with `n - 2` degrees of freedom.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(OtaError::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    let n = x.len();
    if n < 3 {
        return Err(OtaError::InvalidInput("Spearman needs at least 3 points".into()));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let mean = (n as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok((0.0, 1.0));
    }
    let rho = sxy / (sxx * syy).sqrt();
    let dof = (n - 2) as f64;
    if rho >= 1.0 {
        return Ok((1.0, 0.0));
    }
    let t = rho * (dof / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| OtaError::InvalidInput(e.to_string()))?;
    Ok((rho, 1.0 - dist.cdf(t)))
}

/// Wald test of `E[w_m] = 1/N` for every device from `samples` i.i.d.
/// rounds. Devices whose weight never varies contribute only if they sit
/// off the target, in which case the statistic is infinite.
pub fn uniformity_test(mean_weight: &[f64], weight_variance: &[f64], samples: usize) -> Result<(f64, usize, f64)> {
    let n = mean_weight.len();
    if n == 0 || weight_variance.len() != n || samples == 0 {
        return Err(OtaError::InvalidInput("uniformity test needs matching, non-empty inputs".into()));
    }
    let target = 1.0 / n as f64;
    let mut stat = 0.0;
    let mut dof = 0;
    for (m, v) in mean_weight.iter().zip(weight_variance) {
        let dev = m - target;
        if *v > 0.0 {
            stat += dev * dev / (v / samples as f64);
            dof += 1;
        } else if dev.abs() > 1e-12 * target {
            stat = f64::INFINITY;
        }
    }
    let p = if stat.is_infinite() {
        0.0
    } else if dof == 0 {
        1.0
    } else {
        let dist = ChiSquared::new(dof as f64).map_err(|e| OtaError::InvalidInput(e.to_string()))?;
        1.0 - dist.cdf(stat)
    };
    Ok((stat, dof, p))
}

/// First logged time at which the mean loss curve reaches `target`.
pub fn time_to_loss(curves: &PolicyCurves, target: f64) -> Option<f64> {
    curves
        .loss_mean
        .iter()
        .position(|&l| l <= target)
        .map(|k| curves.elapsed_ms[k])
}

fn participation_test(scenario: &Scenario, curves: &PolicyCurves) -> Result<ParticipationTest> {
    let samples = curves.replicates * curves.rounds_per_replicate;
    let (stat, dof, p) = uniformity_test(&curves.mean_weight, &curves.weight_variance, samples)?;
    let (rho, sp) = if curves.mean_weight.len() >= 3 {
        spearman(&scenario.deployment.path_gains(), &curves.mean_weight)?
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(ParticipationTest {
        uniformity_statistic: stat,
        uniformity_dof: dof,
        uniformity_p_value: p,
        spearman_rho: rho,
        spearman_p_value: sp,
    })
}

/// Runs every policy on the shared scenario and replicate seeds.
pub fn evaluate_policy(scenario: &Scenario, kind: &PolicyKind, opts: &CompareOptions) -> Result<PolicyReport> {
    let policy = scenario.policy(kind)?;
    let expected = policy.expected_participation();
    let limit = scenario.stepsize_limit(&expected)?;
    let (eta, grid) = match &opts.stepsize {
        StepsizeSpec::Fixed { eta } => {
            if kind.is_static() && !(*eta <= limit) {
                return Err(OtaError::StepsizeOutOfRange { eta: *eta, max: limit });
            }
            (*eta, None)
        }
        spec => {
            let g = grid_search_stepsize(scenario, &policy, &spec.candidates(limit)?, opts.grid_replicates)?;
            info!("{}: best eta {:.4e} (limit {:.4e})", kind.label(), g.best_eta, limit);
            (g.best_eta, Some(g))
        }
    };
    let run_opts = RunOptions {
        track_accuracy: opts.track_accuracy,
        surrogate: None,
        stop_on_divergence: false,
    };
    let runs = run_replicates(scenario, &policy, eta, opts.replicates, &run_opts)?;
    let curves = summarize(&runs)?;
    info!(
        "{}: final loss {:.5} +- {:.5}",
        kind.label(),
        curves.final_loss_mean,
        curves.final_loss_se
    );
    Ok(PolicyReport {
        kind: kind.clone(),
        label: kind.label().to_string(),
        eta,
        stepsize_limit: limit,
        grid,
        expected_participation: expected,
        participation_test: participation_test(scenario, &curves)?,
        curves,
    })
}

pub fn compare_policies(scenario: &Scenario, policies: &[PolicyKind], opts: &CompareOptions) -> Result<ComparisonReport> {
    if policies.is_empty() {
        return Err(OtaError::Config("no policy to compare".into()));
    }
    let reports = policies
        .iter()
        .map(|k| evaluate_policy(scenario, k, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(scenario, reports))
}

/// Builds the report, including time-to-target against vanilla OTA when present.
pub fn assemble(scenario: &Scenario, reports: Vec<PolicyReport>) -> ComparisonReport {
    let mut time_to_target = Vec::new();
    if let Some(reference) = reports.iter().find(|r| r.kind == PolicyKind::VanillaOta) {
        let target = reference.curves.final_loss_mean;
        let reference_ms = time_to_loss(&reference.curves, target);
        for r in reports.iter().filter(|r| r.kind != PolicyKind::VanillaOta) {
            let policy_ms = time_to_loss(&r.curves, target);
            let speedup = match (reference_ms, policy_ms) {
                (Some(a), Some(b)) if b > 0.0 => Some(a / b),
                _ => None,
            };
            time_to_target.push(TimeToTarget {
                policy: r.label.clone(),
                reference: reference.label.clone(),
                target_loss: target,
                policy_ms,
                reference_ms,
                speedup,
            });
        }
    }
    ComparisonReport {
        scenario: scenario.summary(),
        device_order: scenario.deployment.order_by_decreasing_gain(),
        policies: reports,
        time_to_target,
    }
}

#[derive(Serialize)]
struct CurveRow<'a> {
    policy: &'a str,
    round: usize,
    elapsed_ms: f64,
    mean: f64,
    std_error: f64,
}

#[derive(Serialize)]
struct ParticipationRow<'a> {
    rank: usize,
    device: usize,
    distance_m: f64,
    path_gain: f64,
    policy: &'a str,
    transmit_frequency: f64,
    mean_weight: f64,
    expected_participation: f64,
}

#[derive(Serialize)]
struct PolicySummaryJson<'a> {
    policy: &'a str,
    kind: &'a PolicyKind,
    eta: f64,
    stepsize_limit: f64,
    replicates: usize,
    final_loss_mean: f64,
    final_loss_se: f64,
    final_accuracy_mean: Option<f64>,
    final_accuracy_se: Option<f64>,
    diverged_replicates: usize,
    participation_test: &'a ParticipationTest,
    grid: &'a Option<GridSearchResult>,
}

#[derive(Serialize)]
struct SummaryJson<'a> {
    scenario: &'a ScenarioSummary,
    device_order: &'a [usize],
    policies: Vec<PolicySummaryJson<'a>>,
    time_to_target: &'a [TimeToTarget],
}

fn curve_csv(path: &Path, report: &ComparisonReport, accuracy: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in &report.policies {
        let c = &p.curves;
        let (mean, se) = if accuracy {
            (&c.accuracy_mean, &c.accuracy_se)
        } else {
            (&c.loss_mean, &c.loss_se)
        };
        for k in 0..mean.len() {
            w.serialize(CurveRow {
                policy: &p.label,
                round: c.rounds[k],
                elapsed_ms: c.elapsed_ms[k],
                mean: mean[k],
                std_error: se[k],
            })?;
        }
    }
    w.flush().map_err(|e| crate::error::OtaError::io(path, e))
}

/// Writes `loss.csv`, `accuracy.csv`, `participation.csv` and `summary.json`.
pub fn write_report(dir: &Path, report: &ComparisonReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| OtaError::io(dir, e))?;
    curve_csv(&dir.join("loss.csv"), report, false)?;
    curve_csv(&dir.join("accuracy.csv"), report, true)?;

    let path = dir.join("participation.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for p in &report.policies {
        for (rank, &m) in report.device_order.iter().enumerate() {
            w.serialize(ParticipationRow {
                rank: rank + 1,
                device: m,
                distance_m: report.scenario.distances_m[m],
                path_gain: report.scenario.path_gains[m],
                policy: &p.label,
                transmit_frequency: p.curves.transmit_frequency[m],
                mean_weight: p.curves.mean_weight[m],
                expected_participation: p.expected_participation[m],
            })?;
        }
    }
    w.flush().map_err(|e| OtaError::io(&path, e))?;

    let summary = SummaryJson {
        scenario: &report.scenario,
        device_order: &report.device_order,
        policies: report
            .policies
            .iter()
            .map(|p| PolicySummaryJson {
                policy: &p.label,
                kind: &p.kind,
                eta: p.eta,
                stepsize_limit: p.stepsize_limit,
                replicates: p.curves.replicates,
                final_loss_mean: p.curves.final_loss_mean,
                final_loss_se: p.curves.final_loss_se,
                final_accuracy_mean: p.curves.final_accuracy_mean,
                final_accuracy_se: p.curves.final_accuracy_se,
                diverged_replicates: p.curves.diverged_replicates,
                participation_test: &p.participation_test,
                grid: &p.grid,
            })
            .collect(),
        time_to_target: &report.time_to_target,
    };
    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary)?;
    std::fs::write(&path, text).map_err(|e| OtaError::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 2.0]), vec![3.0, 1.0, 2.0]);
        assert_eq!(ranks(&[1.0, 2.0, 2.0, 5.0]), vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn spearman_extremes() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let (rho, p) = spearman(&x, &[10.0, 20.0, 30.0, 40.0, 50.0]).unwrap();
        assert_eq!((rho, p), (1.0, 0.0));
        let (rho, p) = spearman(&x, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap();
        assert!((rho + 1.0).abs() < 1e-12);
        assert!(p > 0.99);
        assert_eq!(spearman(&x, &[1.0; 5]).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn uniformity_handles_degenerate_variance() {
        let (s, dof, p) = uniformity_test(&[0.25; 4], &[0.0; 4], 100).unwrap();
        assert_eq!((s, dof, p), (0.0, 0, 1.0));
        let (s, _, p) = uniformity_test(&[0.3, 0.2, 0.25, 0.25], &[0.0; 4], 100).unwrap();
        assert!(s.is_infinite() && p == 0.0);
        let (s, dof, p) = uniformity_test(&[0.51, 0.49], &[0.01, 0.01], 100).unwrap();
        assert_eq!(dof, 2);
        assert!((s - 2.0).abs() < 1e-9);
        assert!(p > 0.0 && p < 1.0);
    }
}
