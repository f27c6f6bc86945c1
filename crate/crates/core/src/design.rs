//! Pre-scaler designs and baseline round policies.
//!
//! Two fixed designs need only the average path losses:
//!
//! * **minimum noise variance**: each `gamma_m` maximizes its own
//!   `alpha_m`, giving `gamma~_m = sqrt(d Lambda_m E_s / (2 G_max^2))` and a
//!   transmit probability of `e^{-1/2}` on every device. Participation is
//!   biased towards strong devices.
//! * **zero bias**: every device is tuned down to the weakest device's peak
//!   `a = alpha_N(gamma~_N)`, so all `alpha_m = a` and `p_m = 1/N`. Solving
//!   `gamma exp(-c gamma^2) = a` for the smaller root yields
//!   `gamma = sqrt(-W0(-2 c a^2) / (2 c))`.
//!
//! The baselines (vanilla OTA, BB-FL interior and alternating) use
//! instantaneous CSI each round and are unbiased per round over the
//! scheduled set.

use std::f64::consts::E;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OtaError, Result};
use crate::model::vecops;
use crate::ota::{self, LinkBudget, PreScalerSet};
use crate::wireless::{Deployment, FadingDraw};

const LAMBERT_MAX_ITERS: usize = 64;
const LAMBERT_TOL: f64 = 1e-14;
/// Slack below `-1/e` tolerated in the zero-bias Lambert argument.
const BRANCH_SLACK: f64 = 1e-12;

/// Principal branch `W0(x)`, the solution of `w e^w = x` with `w >= -1`.
pub fn lambert_w0(x: f64) -> Result<f64> {
    let branch = -1.0 / E;
    if x.is_nan() || x < branch {
        return Err(OtaError::Domain(format!("W0 is undefined for x = {x}")));
    }
    if x == branch {
        return Ok(-1.0);
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    let mut w = if x < -0.25 {
        // branch-point series in p = sqrt(2 (e x + 1))
        let p = (2.0 * (E * x + 1.0)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if x < 3.0 {
        x.ln_1p() * (1.0 - x.ln_1p() / (2.0 + x.ln_1p()))
    } else {
        let l = x.ln();
        l - l.ln()
    };
    for _ in 0..LAMBERT_MAX_ITERS {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        if wp1 == 0.0 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        if denom == 0.0 || !denom.is_finite() {
            break;
        }
        let step = f / denom;
        w -= step;
        if step.abs() <= LAMBERT_TOL * (1.0 + w.abs()) {
            break;
        }
    }
    Ok(w.max(-1.0))
}

/// Per-device `gamma~_m = sqrt(d Lambda_m E_s / (2 G_max^2))`.
pub fn min_variance_gammas(path_gains: &[f64], budget: &LinkBudget) -> Vec<f64> {
    path_gains
        .iter()
        .map(|&l| (1.0 / (2.0 * budget.tail_rate(l))).sqrt())
        .collect()
}

pub fn min_variance_prescalers(deployment: &Deployment, budget: LinkBudget) -> Result<PreScalerSet> {
    deployment.validate()?;
    let gains = deployment.path_gains();
    PreScalerSet::new(min_variance_gammas(&gains, &budget), &gains, budget)
}

/// Smaller root of `gamma exp(-c gamma^2) = target`, `c = G_max^2 / (d Lambda E_s)`.
pub fn gamma_for_alpha(target: f64, path_gain: f64, budget: &LinkBudget) -> Result<f64> {
    if !(target > 0.0) {
        return Err(OtaError::InvalidInput(format!("target alpha must be positive, got {target}")));
    }
    let c = budget.tail_rate(path_gain);
    let mut arg = -2.0 * c * target * target;
    let branch = -1.0 / E;
    if arg < branch {
        if arg < branch - BRANCH_SLACK {
            return Err(OtaError::Domain(format!(
                "target {target:e} exceeds the peak alpha of a device with path gain {path_gain:e}"
            )));
        }
        arg = branch;
    }
    let w = lambert_w0(arg)?;
    Ok((-w / (2.0 * c)).sqrt())
}

/// Zero-bias set where every device hits `alpha_m = target`.
pub fn zero_bias_for_target(deployment: &Deployment, budget: LinkBudget, target: f64) -> Result<PreScalerSet> {
    deployment.validate()?;
    let gains = deployment.path_gains();
    let gammas = gains
        .iter()
        .map(|&l| gamma_for_alpha(target, l, &budget))
        .collect::<Result<Vec<_>>>()?;
    PreScalerSet::new(gammas, &gains, budget)
}

/// Minimum-noise-variance zero-bias design: target the weakest device's
/// peak `alpha_N(gamma~_N)`.
pub fn zero_bias_prescalers(deployment: &Deployment, budget: LinkBudget) -> Result<PreScalerSet> {
    deployment.validate()?;
    let gains = deployment.path_gains();
    let target = min_variance_gammas(&gains, &budget)
        .iter()
        .map(|g| g * (-0.5f64).exp())
        .fold(f64::INFINITY, f64::min);
    zero_bias_for_target(deployment, budget, target)
}

/// Aggregated gradient estimate of one round plus bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub estimate: Vec<f64>,
    pub transmitted: Vec<bool>,
    /// Realized coefficient of `g_m` in the estimate.
    pub weights: Vec<f64>,
}

/// Vanilla OTA over the scheduled `members`: a common pre-scaler
/// `gamma_t = min_m sqrt(d E_s) |h_m| / G_max`, exact inversion, and
/// post-scaling by `|members| gamma_t`. Returns `None` when some scheduled
/// channel is exactly zero and the round must be skipped.
pub fn vanilla_ota_round(
    gradients: &[Vec<f64>],
    fading: &FadingDraw,
    noise: &[f64],
    budget: &LinkBudget,
    members: &[usize],
) -> Result<Option<Aggregate>> {
    let n = gradients.len();
    if fading.coefficients.len() != n {
        return Err(OtaError::DimensionMismatch {
            expected: n,
            found: fading.coefficients.len(),
        });
    }
    if members.is_empty() {
        return Err(OtaError::InvalidInput("no device scheduled".into()));
    }
    if noise.len() != budget.dim {
        return Err(OtaError::DimensionMismatch {
            expected: budget.dim,
            found: noise.len(),
        });
    }
    let mut gamma_t = f64::INFINITY;
    for &m in members {
        let g = gradients.get(m).ok_or_else(|| OtaError::InvalidInput(format!("device {m} out of range")))?;
        if g.len() != budget.dim {
            return Err(OtaError::DimensionMismatch {
                expected: budget.dim,
                found: g.len(),
            });
        }
        let norm = vecops::norm(g);
        if !(norm <= budget.g_max) {
            return Err(OtaError::GradientBoundExceeded {
                device: m,
                norm,
                g_max: budget.g_max,
            });
        }
        gamma_t = gamma_t.min(budget.affordable_gamma(fading.coefficients[m].norm()));
    }
    if !(gamma_t > 0.0) {
        warn!("zero channel among scheduled devices; skipping round");
        return Ok(None);
    }
    let k = members.len() as f64;
    let mut transmitted = vec![false; n];
    let mut weights = vec![0.0; n];
    let noise_scale = 1.0 / (k * gamma_t);
    let mut estimate: Vec<f64> = noise.iter().map(|z| z * noise_scale).collect();
    for &m in members {
        transmitted[m] = true;
        weights[m] = 1.0 / k;
        vecops::axpy(1.0 / k, &gradients[m], &mut estimate);
    }
    Ok(Some(Aggregate {
        estimate,
        transmitted,
        weights,
    }))
}

pub fn bbfl_interior_round(
    gradients: &[Vec<f64>],
    fading: &FadingDraw,
    noise: &[f64],
    budget: &LinkBudget,
    interior: &[usize],
) -> Result<Option<Aggregate>> {
    if interior.is_empty() {
        return Err(OtaError::EmptyInterior(f64::NAN));
    }
    vanilla_ota_round(gradients, fading, noise, budget, interior)
}

/// With probability `mix_probability` schedule every device, otherwise
/// only the interior ones.
pub fn bbfl_alternating_round<R: Rng + ?Sized>(
    gradients: &[Vec<f64>],
    fading: &FadingDraw,
    noise: &[f64],
    budget: &LinkBudget,
    interior: &[usize],
    mix_probability: f64,
    rng: &mut R,
) -> Result<Option<Aggregate>> {
    if rng.random::<f64>() < mix_probability {
        let all: Vec<usize> = (0..gradients.len()).collect();
        vanilla_ota_round(gradients, fading, noise, budget, &all)
    } else {
        bbfl_interior_round(gradients, fading, noise, budget, interior)
    }
}

pub const DEFAULT_INTERIOR_FRACTION: f64 = 0.6;
pub const DEFAULT_MIX_PROBABILITY: f64 = 0.5;

fn default_interior() -> f64 {
    DEFAULT_INTERIOR_FRACTION
}

fn default_mix() -> f64 {
    DEFAULT_MIX_PROBABILITY
}

/// Aggregation policy. BB-FL radii are fractions of `r_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    MinVariance,
    ZeroBias,
    VanillaOta,
    BbflInterior {
        #[serde(default = "default_interior")]
        interior_fraction: f64,
    },
    BbflAlternating {
        #[serde(default = "default_interior")]
        interior_fraction: f64,
        #[serde(default = "default_mix")]
        mix_probability: f64,
    },
    /// Error-free aggregation `(1/N) sum g_m`; a reference, not a radio scheme.
    Ideal,
}

impl PolicyKind {
    pub fn bbfl_interior() -> Self {
        PolicyKind::BbflInterior {
            interior_fraction: DEFAULT_INTERIOR_FRACTION,
        }
    }

    pub fn bbfl_alternating() -> Self {
        PolicyKind::BbflAlternating {
            interior_fraction: DEFAULT_INTERIOR_FRACTION,
            mix_probability: DEFAULT_MIX_PROBABILITY,
        }
    }

    /// The five schemes compared in the headline experiment.
    pub fn standard_set() -> Vec<Self> {
        vec![
            PolicyKind::MinVariance,
            PolicyKind::ZeroBias,
            PolicyKind::VanillaOta,
            Self::bbfl_alternating(),
            Self::bbfl_interior(),
        ]
    }

    pub fn label(&self) -> &'static str {
        match self {
            PolicyKind::MinVariance => "min-variance",
            PolicyKind::ZeroBias => "zero-bias",
            PolicyKind::VanillaOta => "vanilla-ota",
            PolicyKind::BbflInterior { .. } => "bbfl-interior",
            PolicyKind::BbflAlternating { .. } => "bbfl-alternating",
            PolicyKind::Ideal => "ideal",
        }
    }

    pub fn parse(label: &str) -> Result<Self> {
        Ok(match label {
            "min-variance" => PolicyKind::MinVariance,
            "zero-bias" => PolicyKind::ZeroBias,
            "vanilla-ota" => PolicyKind::VanillaOta,
            "bbfl-interior" => Self::bbfl_interior(),
            "bbfl-alternating" => Self::bbfl_alternating(),
            "ideal" => PolicyKind::Ideal,
            other => return Err(OtaError::Config(format!("unknown policy '{other}'"))),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let check_fraction = |f: f64| {
            if f > 0.0 && f <= 1.0 {
                Ok(())
            } else {
                Err(OtaError::Config(format!("interior fraction {f} outside (0, 1]")))
            }
        };
        match *self {
            PolicyKind::BbflInterior { interior_fraction } => check_fraction(interior_fraction),
            PolicyKind::BbflAlternating {
                interior_fraction,
                mix_probability,
            } => {
                check_fraction(interior_fraction)?;
                if (0.0..=1.0).contains(&mix_probability) {
                    Ok(())
                } else {
                    Err(OtaError::Config(format!("mix probability {mix_probability} outside [0, 1]")))
                }
            }
            _ => Ok(()),
        }
    }

    /// Whether the policy uses a fixed pre-scaler set built from statistical CSI.
    pub fn is_static(&self) -> bool {
        matches!(self, PolicyKind::MinVariance | PolicyKind::ZeroBias)
    }
}

#[derive(Debug, Clone)]
enum Mode {
    Static(PreScalerSet),
    Scheduled {
        interior: Vec<usize>,
        mix_probability: f64,
    },
    Ideal,
}

/// A policy bound to a deployment and link budget, ready to aggregate rounds.
#[derive(Debug, Clone)]
pub struct RoundPolicy {
    kind: PolicyKind,
    budget: LinkBudget,
    num_devices: usize,
    mode: Mode,
}

impl RoundPolicy {
    pub fn build(kind: &PolicyKind, deployment: &Deployment, budget: LinkBudget, r_max: f64) -> Result<Self> {
        kind.validate()?;
        deployment.validate()?;
        let all: Vec<usize> = (0..deployment.len()).collect();
        let interior_of = |fraction: f64| {
            let radius = fraction * r_max;
            let members = deployment.within(radius);
            if members.is_empty() {
                Err(OtaError::EmptyInterior(radius))
            } else {
                Ok(members)
            }
        };
        let mode = match *kind {
            PolicyKind::MinVariance => Mode::Static(min_variance_prescalers(deployment, budget)?),
            PolicyKind::ZeroBias => Mode::Static(zero_bias_prescalers(deployment, budget)?),
            PolicyKind::VanillaOta => Mode::Scheduled {
                interior: all,
                mix_probability: 1.0,
            },
            PolicyKind::BbflInterior { interior_fraction } => Mode::Scheduled {
                interior: interior_of(interior_fraction)?,
                mix_probability: 0.0,
            },
            PolicyKind::BbflAlternating {
                interior_fraction,
                mix_probability,
            } => Mode::Scheduled {
                interior: interior_of(interior_fraction)?,
                mix_probability,
            },
            PolicyKind::Ideal => Mode::Ideal,
        };
        Ok(Self {
            kind: kind.clone(),
            budget,
            num_devices: deployment.len(),
            mode,
        })
    }

    pub fn kind(&self) -> &PolicyKind {
        &self.kind
    }

    pub fn budget(&self) -> &LinkBudget {
        &self.budget
    }

    pub fn prescalers(&self) -> Option<&PreScalerSet> {
        match &self.mode {
            Mode::Static(set) => Some(set),
            _ => None,
        }
    }

    /// Scheduled interior set for the BB-FL policies.
    pub fn interior(&self) -> Option<&[usize]> {
        match (&self.kind, &self.mode) {
            (PolicyKind::BbflInterior { .. } | PolicyKind::BbflAlternating { .. }, Mode::Scheduled { interior, .. }) => {
                Some(interior)
            }
            _ => None,
        }
    }

    /// Expected weight of each device in the aggregate.
    pub fn expected_participation(&self) -> Vec<f64> {
        let n = self.num_devices;
        match &self.mode {
            Mode::Static(set) => set.participation.clone(),
            Mode::Ideal => vec![1.0 / n as f64; n],
            Mode::Scheduled {
                interior,
                mix_probability,
            } => {
                let mut p = vec![mix_probability / n as f64; n];
                let share = (1.0 - mix_probability) / interior.len() as f64;
                for &m in interior {
                    p[m] += share;
                }
                p
            }
        }
    }

    /// Aggregates one round. `rng` is only consumed by the alternating
    /// policy's scheduling coin.
    pub fn aggregate<R: Rng + ?Sized>(
        &self,
        gradients: &[Vec<f64>],
        fading: &FadingDraw,
        noise: &[f64],
        rng: &mut R,
    ) -> Result<Option<Aggregate>> {
        match &self.mode {
            Mode::Static(set) => {
                let out = ota::ota_round(gradients, fading, noise, set)?;
                let weights = out
                    .transmitted
                    .iter()
                    .zip(&set.gammas)
                    .map(|(&chi, g)| if chi { g / set.alpha } else { 0.0 })
                    .collect();
                Ok(Some(Aggregate {
                    estimate: out.estimate,
                    transmitted: out.transmitted,
                    weights,
                }))
            }
            Mode::Ideal => {
                let n = gradients.len();
                let mut estimate = vec![0.0; self.budget.dim];
                for g in gradients {
                    vecops::axpy(1.0 / n as f64, g, &mut estimate);
                }
                Ok(Some(Aggregate {
                    estimate,
                    transmitted: vec![true; n],
                    weights: vec![1.0 / n as f64; n],
                }))
            }
            Mode::Scheduled {
                interior,
                mix_probability,
            } => match self.kind {
                PolicyKind::VanillaOta => {
                    let all: Vec<usize> = (0..gradients.len()).collect();
                    vanilla_ota_round(gradients, fading, noise, &self.budget, &all)
                }
                PolicyKind::BbflInterior { .. } => {
                    bbfl_interior_round(gradients, fading, noise, &self.budget, interior)
                }
                _ => bbfl_alternating_round(
                    gradients,
                    fading,
                    noise,
                    &self.budget,
                    interior,
                    *mix_probability,
                    rng,
                ),
            },
        }
    }
}
