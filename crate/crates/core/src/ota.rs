//! Over-the-air aggregation with truncated channel inversion.
//!
//! Device `m` transmits `(gamma_m / h_m) g_m` when
//! `gamma_m <= sqrt(d E_s) |h_m| / G_max`, and stays silent otherwise. The
//! receiver divides the superimposed signal by the post-scaler
//! `alpha = sum_m alpha_m`, with `alpha_m = gamma_m P_m` and
//! `P_m = exp(-gamma_m^2 G_max^2 / (d Lambda_m E_s))` the Rayleigh
//! probability that the threshold is met.

use serde::{Deserialize, Serialize};

use crate::error::{OtaError, Result};
use crate::model::vecops;
use crate::wireless::FadingDraw;

/// The triple `(d, E_s, G_max)` shared by every threshold computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub dim: usize,
    pub energy_per_sample: f64,
    pub g_max: f64,
}

impl LinkBudget {
    pub fn new(dim: usize, energy_per_sample: f64, g_max: f64) -> Result<Self> {
        if dim == 0 {
            return Err(OtaError::InvalidInput("dimension must be positive".into()));
        }
        for (name, v) in [("energy_per_sample", energy_per_sample), ("g_max", g_max)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(OtaError::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self {
            dim,
            energy_per_sample,
            g_max,
        })
    }

    /// Largest pre-scaler a device with channel magnitude `h_abs` can afford:
    /// `sqrt(d E_s) |h| / G_max`.
    pub fn affordable_gamma(&self, h_abs: f64) -> f64 {
        (self.dim as f64 * self.energy_per_sample).sqrt() * h_abs / self.g_max
    }

    /// `G_max^2 / (d Lambda E_s)`, the Rayleigh tail exponent per `gamma^2`.
    pub fn tail_rate(&self, path_gain: f64) -> f64 {
        self.g_max * self.g_max / (self.dim as f64 * path_gain * self.energy_per_sample)
    }
}

/// Truncation rule; the boundary case transmits.
pub fn transmit_decision(gamma: f64, h_abs: f64, budget: &LinkBudget) -> bool {
    gamma <= budget.affordable_gamma(h_abs)
}

pub fn transmit_probability(gamma: f64, path_gain: f64, budget: &LinkBudget) -> f64 {
    (-gamma * gamma * budget.tail_rate(path_gain)).exp()
}

/// `alpha_m = gamma exp(-gamma^2 G_max^2 / (d Lambda E_s))`, the mean
/// weight `E[chi_m gamma_m]` device `m` contributes to the received signal.
pub fn alpha_m(gamma: f64, path_gain: f64, budget: &LinkBudget) -> f64 {
    gamma * transmit_probability(gamma, path_gain, budget)
}

/// `p_m = alpha_m / sum alpha`.
pub fn participation_levels(alphas: &[f64]) -> Result<Vec<f64>> {
    if alphas.is_empty() {
        return Err(OtaError::EmptyDeviceList);
    }
    if alphas.iter().any(|&a| !(a >= 0.0 && a.is_finite())) {
        return Err(OtaError::InvalidInput("alpha_m must be finite and non-negative".into()));
    }
    let total: f64 = alphas.iter().sum();
    if !(total > 0.0) {
        return Err(OtaError::InvalidInput("every alpha_m is zero".into()));
    }
    Ok(alphas.iter().map(|a| a / total).collect())
}

/// Fixed per-device pre-scalers with everything derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreScalerSet {
    pub gammas: Vec<f64>,
    pub path_gains: Vec<f64>,
    pub transmit_probabilities: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Post-scaler `alpha = sum_m alpha_m`.
    pub alpha: f64,
    pub participation: Vec<f64>,
    pub budget: LinkBudget,
}

impl PreScalerSet {
    pub fn new(gammas: Vec<f64>, path_gains: &[f64], budget: LinkBudget) -> Result<Self> {
        if gammas.len() != path_gains.len() {
            return Err(OtaError::DimensionMismatch {
                expected: path_gains.len(),
                found: gammas.len(),
            });
        }
        if let Some(m) = gammas.iter().position(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(OtaError::InvalidInput(format!(
                "pre-scaler of device {m} must be positive, got {}",
                gammas[m]
            )));
        }
        if let Some(m) = path_gains.iter().position(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(OtaError::InvalidInput(format!("device {m} has non-positive path gain")));
        }
        let transmit_probabilities: Vec<f64> = gammas
            .iter()
            .zip(path_gains)
            .map(|(&g, &l)| transmit_probability(g, l, &budget))
            .collect();
        let alphas: Vec<f64> = gammas
            .iter()
            .zip(&transmit_probabilities)
            .map(|(g, p)| g * p)
            .collect();
        let participation = participation_levels(&alphas)?;
        let alpha = alphas.iter().sum();
        Ok(Self {
            gammas,
            path_gains: path_gains.to_vec(),
            transmit_probabilities,
            alphas,
            alpha,
            participation,
            budget,
        })
    }

    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    /// `gamma_m / alpha_m - 1 = 1 / P_m - 1`, computed without cancellation.
    pub fn inverse_probability_excess(&self, m: usize) -> f64 {
        let g = self.gammas[m];
        (g * g * self.budget.tail_rate(self.path_gains[m])).exp_m1()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub transmitted: Vec<bool>,
    /// Real part of the post-inversion received signal `y_t`.
    pub received: Vec<f64>,
    /// `g^_t = y_t / alpha`.
    pub estimate: Vec<f64>,
    /// Per-sample transmit energy `||x_m||^2 / d` of transmitting devices.
    pub energy: Vec<Option<f64>>,
}

/// Checks `||g_m|| <= G_max` for every device.
pub fn check_gradient_bound(gradients: &[Vec<f64>], g_max: f64) -> Result<()> {
    for (m, g) in gradients.iter().enumerate() {
        let norm = vecops::norm(g);
        if !(norm <= g_max) {
            return Err(OtaError::GradientBoundExceeded {
                device: m,
                norm,
                g_max,
            });
        }
    }
    Ok(())
}

/// One aggregation round. Channel inversion makes each transmitted term
/// real, so `y_t = sum_m chi_m gamma_m g_m + z_t` with real noise `z_t`.
pub fn ota_round(
    gradients: &[Vec<f64>],
    fading: &FadingDraw,
    noise: &[f64],
    set: &PreScalerSet,
) -> Result<RoundOutcome> {
    let budget = &set.budget;
    let n = set.len();
    if gradients.len() != n || fading.coefficients.len() != n {
        return Err(OtaError::DimensionMismatch {
            expected: n,
            found: gradients.len().min(fading.coefficients.len()),
        });
    }
    if noise.len() != budget.dim {
        return Err(OtaError::DimensionMismatch {
            expected: budget.dim,
            found: noise.len(),
        });
    }
    if let Some(g) = gradients.iter().find(|g| g.len() != budget.dim) {
        return Err(OtaError::DimensionMismatch {
            expected: budget.dim,
            found: g.len(),
        });
    }
    check_gradient_bound(gradients, budget.g_max)?;

    let mut received = noise.to_vec();
    let mut transmitted = Vec::with_capacity(n);
    let mut energy = Vec::with_capacity(n);
    for m in 0..n {
        let h_abs = fading.coefficients[m].norm();
        let chi = transmit_decision(set.gammas[m], h_abs, budget);
        transmitted.push(chi);
        if chi {
            let gamma = set.gammas[m];
            vecops::axpy(gamma, &gradients[m], &mut received);
            let e = gamma * gamma * vecops::norm_sq(&gradients[m])
                / (budget.dim as f64 * h_abs * h_abs);
            energy.push(Some(e));
        } else {
            energy.push(None);
        }
    }
    let inv = 1.0 / set.alpha;
    let estimate = received.iter().map(|v| v * inv).collect();
    Ok(RoundOutcome {
        transmitted,
        received,
        estimate,
        energy,
    })
}

/// Conditional aggregation-error variance split into its two addends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorVariance {
    pub transmission: f64,
    pub noise: f64,
}

impl ErrorVariance {
    pub fn total(&self) -> f64 {
        self.transmission + self.noise
    }
}

/// `E[||g^_t - g~_t||^2 | w_t] = sum p_m^2 ||g_m||^2 (gamma_m/alpha_m - 1) + d N_0 / alpha^2`
/// for the actual squared gradient norms.
pub fn error_variance(set: &PreScalerSet, grad_norms_sq: &[f64], noise_psd: f64) -> Result<ErrorVariance> {
    if grad_norms_sq.len() != set.len() {
        return Err(OtaError::DimensionMismatch {
            expected: set.len(),
            found: grad_norms_sq.len(),
        });
    }
    Ok(variance_terms(set, |m| grad_norms_sq[m], noise_psd))
}

/// The same variance with every `||g_m||` replaced by `G_max`, i.e. sigma^2.
pub fn error_variance_bound(set: &PreScalerSet, noise_psd: f64) -> ErrorVariance {
    let g2 = set.budget.g_max * set.budget.g_max;
    variance_terms(set, |_| g2, noise_psd)
}

fn variance_terms(set: &PreScalerSet, norm_sq: impl Fn(usize) -> f64, noise_psd: f64) -> ErrorVariance {
    let transmission = (0..set.len())
        .map(|m| {
            let p = set.participation[m];
            p * p * norm_sq(m) * set.inverse_probability_excess(m)
        })
        .sum();
    let noise = set.budget.dim as f64 * noise_psd / (set.alpha * set.alpha);
    ErrorVariance {
        transmission,
        noise,
    }
}
