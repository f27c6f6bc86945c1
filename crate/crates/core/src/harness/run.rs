use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::elapsed_ms;
use super::scenario::Scenario;
use crate::design::RoundPolicy;
use crate::error::{OtaError, Result};
use crate::model::{vecops, ModelParams};
use crate::rng::Stream;
use crate::wireless::{draw_fading, draw_real_noise};

/// A run is declared diverged once the training loss exceeds this multiple
/// of its initial value.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

#[derive(Debug, Clone, Default)]
pub struct RunOptions<'a> {
    pub track_accuracy: bool,
    /// Also log `||w_t - w~||^2` against this point.
    pub surrogate: Option<&'a ModelParams>,
    /// Stop early (marking the run diverged) instead of running on.
    pub stop_on_divergence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    pub elapsed_ms: f64,
    pub loss: f64,
    pub normalized_accuracy: Option<f64>,
    /// `||w_t - w*||^2`.
    pub distance_sq: f64,
    pub surrogate_distance_sq: Option<f64>,
    /// Transmit indicators of round `t`; absent for the final iterate.
    pub transmitted: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub policy: String,
    pub eta: f64,
    pub replicate: u64,
    pub rounds: usize,
    pub skipped_rounds: usize,
    pub traces: Vec<RoundTrace>,
    pub final_loss: f64,
    pub final_normalized_accuracy: Option<f64>,
    pub final_distance_sq: f64,
    /// Fraction of rounds each device transmitted in.
    pub transmit_frequency: Vec<f64>,
    /// Mean realized aggregation weight of each device.
    pub mean_weight: Vec<f64>,
    /// Per-device sample variance of the realized weight across rounds.
    pub weight_variance: Vec<f64>,
    pub diverged: bool,
}

fn is_diverged(loss: f64, initial: f64) -> bool {
    !loss.is_finite() || loss > DIVERGENCE_FACTOR * initial
}

/// One training run of `rounds` OTA-FL rounds from `w_0 = 0`.
///
/// Each round draws exactly `N` fading coefficients and `d` noise samples
/// from the replicate's streams whatever the policy does with them, so
/// policies compared under one replicate index share their randomness.
pub fn run_experiment(
    scenario: &Scenario,
    policy: &RoundPolicy,
    eta: f64,
    replicate: u64,
    opts: &RunOptions<'_>,
) -> Result<RunResult> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(OtaError::InvalidInput(format!("stepsize must be non-negative, got {eta}")));
    }
    let cfg = &scenario.config;
    let loss_cfg = &scenario.loss;
    let n = scenario.num_devices();
    let dim = scenario.dim();
    let rounds = scenario.rounds;
    let bw = cfg.radio.bandwidth_hz;
    let mut fading_rng = scenario.seeds.replicate(replicate, Stream::Fading);
    let mut noise_rng = scenario.seeds.replicate(replicate, Stream::Noise);
    let mut policy_rng = scenario.seeds.replicate(replicate, Stream::Policy);

    let mut w = ModelParams::zeros(loss_cfg);
    let mut traces = Vec::new();
    let mut transmit_count = vec![0usize; n];
    let mut weight_sum = vec![0.0; n];
    let mut weight_sq_sum = vec![0.0; n];
    let mut skipped = 0;
    let mut initial_loss = f64::NAN;
    let mut diverged = false;
    let mut completed = 0;

    let snapshot = |w: &ModelParams, t: usize, loss: f64, transmitted: Option<Vec<bool>>| -> Result<RoundTrace> {
        let normalized_accuracy = if opts.track_accuracy {
            Some(loss_cfg.test_accuracy(w, &scenario.test)? / scenario.acc_star)
        } else {
            None
        };
        Ok(RoundTrace {
            round: t,
            elapsed_ms: elapsed_ms(t, bw, dim),
            loss,
            normalized_accuracy,
            distance_sq: w.distance(&scenario.w_star).powi(2),
            surrogate_distance_sq: opts.surrogate.map(|s| w.distance(s).powi(2)),
            transmitted,
        })
    };

    for t in 0..rounds {
        let mut gradients = Vec::with_capacity(n);
        let mut loss = 0.0;
        for ds in &scenario.datasets {
            let (l, g) = loss_cfg.local_loss_and_gradient(&w, ds)?;
            loss += l / n as f64;
            gradients.push(g);
        }
        if t == 0 {
            initial_loss = loss;
        }
        if is_diverged(loss, initial_loss) {
            diverged = true;
            if opts.stop_on_divergence {
                debug!("{} eta={eta:e} diverged at round {t}", policy.kind().label());
                break;
            }
        }
        let fading = draw_fading(&scenario.deployment, &mut fading_rng)?;
        let noise = draw_real_noise(dim, cfg.radio.noise_psd_w_per_hz, &mut noise_rng);
        let agg = policy.aggregate(&gradients, &fading, &noise, &mut policy_rng)?;
        let transmitted = match &agg {
            Some(a) => a.transmitted.clone(),
            None => vec![false; n],
        };
        if t % cfg.log_every == 0 {
            traces.push(snapshot(&w, t, loss, Some(transmitted.clone()))?);
        }
        match agg {
            Some(a) => {
                for m in 0..n {
                    if a.transmitted[m] {
                        transmit_count[m] += 1;
                    }
                    weight_sum[m] += a.weights[m];
                    weight_sq_sum[m] += a.weights[m] * a.weights[m];
                }
                vecops::axpy(-eta, &a.estimate, w.as_mut_slice());
            }
            None => skipped += 1,
        }
        completed = t + 1;
    }

    let final_loss = loss_cfg.global_loss(&w, &scenario.datasets)?;
    if !diverged && is_diverged(final_loss, initial_loss) {
        diverged = true;
    }
    let last = if diverged && !final_loss.is_finite() {
        RoundTrace {
            round: completed,
            elapsed_ms: elapsed_ms(completed, bw, dim),
            loss: final_loss,
            normalized_accuracy: None,
            distance_sq: f64::INFINITY,
            surrogate_distance_sq: None,
            transmitted: None,
        }
    } else {
        snapshot(&w, completed, final_loss, None)?
    };
    let r = completed.max(1) as f64;
    let mean_weight: Vec<f64> = weight_sum.iter().map(|s| s / r).collect();
    let weight_variance = weight_sq_sum
        .iter()
        .zip(&mean_weight)
        .map(|(sq, m)| if completed > 1 { (sq - r * m * m).max(0.0) / (r - 1.0) } else { 0.0 })
        .collect();
    let result = RunResult {
        policy: policy.kind().label().to_string(),
        eta,
        replicate,
        rounds: completed,
        skipped_rounds: skipped,
        final_loss,
        final_normalized_accuracy: last.normalized_accuracy,
        final_distance_sq: last.distance_sq,
        transmit_frequency: transmit_count.iter().map(|&c| c as f64 / r).collect(),
        mean_weight,
        weight_variance,
        traces: {
            traces.push(last);
            traces
        },
        diverged,
    };
    Ok(result)
}

/// Runs replicates `0..count` in parallel; results are in replicate order.
pub fn run_replicates(
    scenario: &Scenario,
    policy: &RoundPolicy,
    eta: f64,
    count: usize,
    opts: &RunOptions<'_>,
) -> Result<Vec<RunResult>> {
    (0..count as u64)
        .into_par_iter()
        .map(|r| run_experiment(scenario, policy, eta, r, opts))
        .collect()
}

pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Replicate-averaged curves of one policy at one stepsize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCurves {
    pub policy: String,
    pub eta: f64,
    pub replicates: usize,
    pub rounds: Vec<usize>,
    pub elapsed_ms: Vec<f64>,
    pub loss_mean: Vec<f64>,
    pub loss_se: Vec<f64>,
    pub accuracy_mean: Vec<f64>,
    pub accuracy_se: Vec<f64>,
    pub distance_rms: Vec<f64>,
    pub final_loss_mean: f64,
    pub final_loss_se: f64,
    pub final_accuracy_mean: Option<f64>,
    pub final_accuracy_se: Option<f64>,
    pub transmit_frequency: Vec<f64>,
    pub mean_weight: Vec<f64>,
    /// Per-device variance of the realized weight, pooled over replicates.
    pub weight_variance: Vec<f64>,
    pub rounds_per_replicate: usize,
    pub diverged_replicates: usize,
}

pub fn summarize(runs: &[RunResult]) -> Result<PolicyCurves> {
    let first = runs.first().ok_or_else(|| OtaError::InvalidInput("no runs to summarize".into()))?;
    let logs = first.traces.len();
    if runs.iter().any(|r| r.traces.len() != logs) {
        return Err(OtaError::InvalidInput(
            "replicates logged different numbers of rounds (a run stopped early)".into(),
        ));
    }
    let n = first.transmit_frequency.len();
    let column = |f: &dyn Fn(&RoundTrace) -> f64, k: usize| -> Vec<f64> { runs.iter().map(|r| f(&r.traces[k])).collect() };
    let mut curves = PolicyCurves {
        policy: first.policy.clone(),
        eta: first.eta,
        replicates: runs.len(),
        rounds: first.traces.iter().map(|t| t.round).collect(),
        elapsed_ms: first.traces.iter().map(|t| t.elapsed_ms).collect(),
        loss_mean: Vec::with_capacity(logs),
        loss_se: Vec::with_capacity(logs),
        accuracy_mean: Vec::new(),
        accuracy_se: Vec::new(),
        distance_rms: Vec::with_capacity(logs),
        final_loss_mean: 0.0,
        final_loss_se: 0.0,
        final_accuracy_mean: None,
        final_accuracy_se: None,
        transmit_frequency: vec![0.0; n],
        mean_weight: vec![0.0; n],
        weight_variance: vec![0.0; n],
        rounds_per_replicate: first.rounds,
        diverged_replicates: runs.iter().filter(|r| r.diverged).count(),
    };
    let track_acc = first.traces.iter().all(|t| t.normalized_accuracy.is_some());
    for k in 0..logs {
        let (m, se) = mean_and_se(&column(&|t| t.loss, k));
        curves.loss_mean.push(m);
        curves.loss_se.push(se);
        let (d, _) = mean_and_se(&column(&|t| t.distance_sq, k));
        curves.distance_rms.push(d.sqrt());
        if track_acc {
            let (m, se) = mean_and_se(&column(&|t| t.normalized_accuracy.unwrap_or(f64::NAN), k));
            curves.accuracy_mean.push(m);
            curves.accuracy_se.push(se);
        }
    }
    let finals: Vec<f64> = runs.iter().map(|r| r.final_loss).collect();
    (curves.final_loss_mean, curves.final_loss_se) = mean_and_se(&finals);
    if track_acc {
        let accs: Vec<f64> = runs.iter().filter_map(|r| r.final_normalized_accuracy).collect();
        let (m, se) = mean_and_se(&accs);
        curves.final_accuracy_mean = Some(m);
        curves.final_accuracy_se = Some(se);
    }
    let r = runs.len() as f64;
    for run in runs {
        for m in 0..n {
            curves.transmit_frequency[m] += run.transmit_frequency[m] / r;
            curves.mean_weight[m] += run.mean_weight[m] / r;
            curves.weight_variance[m] += run.weight_variance[m] / r;
        }
    }
    Ok(curves)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCandidate {
    pub eta: f64,
    /// Mean final training loss; `None` when some replicate failed.
    pub mean_final_loss: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub policy: String,
    pub best_eta: f64,
    pub limit: f64,
    pub candidates: Vec<GridCandidate>,
}

/// Picks the stepsize with the lowest mean final loss over replicates
/// `0..replicates`. Candidates above the admissible limit are dropped for
/// the fixed pre-scaler policies. A candidate fails if any replicate
/// diverges or violates `G_max`. Ties go to the smaller stepsize.
pub fn grid_search_stepsize(
    scenario: &Scenario,
    policy: &RoundPolicy,
    grid: &[f64],
    replicates: usize,
) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(OtaError::Config("stepsize grid is empty".into()));
    }
    let limit = scenario.stepsize_limit(&policy.expected_participation())?;
    let mut etas: Vec<f64> = grid
        .iter()
        .copied()
        .filter(|&e| !policy.kind().is_static() || e <= limit * (1.0 + 1e-12))
        .collect();
    etas.sort_by(f64::total_cmp);
    etas.dedup();
    if etas.is_empty() {
        return Err(OtaError::Config(format!(
            "no grid stepsize lies within the admissible limit {limit:e}: {grid:?}"
        )));
    }
    let opts = RunOptions {
        track_accuracy: false,
        surrogate: None,
        stop_on_divergence: true,
    };
    let mut candidates = Vec::with_capacity(etas.len());
    let mut best: Option<(f64, f64)> = None;
    for &eta in &etas {
        let candidate = match run_replicates(scenario, policy, eta, replicates, &opts) {
            Ok(runs) if runs.iter().any(|r| r.diverged) => GridCandidate {
                eta,
                mean_final_loss: None,
                failure: Some("diverged".into()),
            },
            Ok(runs) => {
                let mean = runs.iter().map(|r| r.final_loss).sum::<f64>() / runs.len() as f64;
                if best.is_none_or(|(_, b)| mean < b) {
                    best = Some((eta, mean));
                }
                GridCandidate {
                    eta,
                    mean_final_loss: Some(mean),
                    failure: None,
                }
            }
            Err(e @ OtaError::GradientBoundExceeded { .. }) => {
                warn!("{} eta={eta:e}: {e}", policy.kind().label());
                GridCandidate {
                    eta,
                    mean_final_loss: None,
                    failure: Some(e.kind().to_string()),
                }
            }
            Err(e) => return Err(e),
        };
        candidates.push(candidate);
    }
    match best {
        Some((best_eta, _)) => Ok(GridSearchResult {
            policy: policy.kind().label().to_string(),
            best_eta,
            limit,
            candidates,
        }),
        None => Err(OtaError::AllDiverged(etas)),
    }
}
