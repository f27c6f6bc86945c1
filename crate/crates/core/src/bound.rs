//! Optimality-error bound for biased OTA training.
//!
//! After `t` rounds with a fixed stepsize `eta <= 2/(mu~ + L~)`,
//!
//! ```text
//! ||w_t - w*|| <= (1 - eta mu~)^t sqrt(E~_0)              initialization
//!              + (N kappa / mu~) max_m |1/N - p_m|         model bias
//!              + sqrt((eta / mu~) (trans + noise))         aggregation error
//! ```
//!
//! where `trans = sum p_m^2 G_max^2 (gamma_m/alpha_m - 1)` and
//! `noise = d N_0 / alpha^2`. `E~_0 = ||w_0 - w~||^2` is measured against
//! the minimizer `w~` of the participation-weighted objective.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{OtaError, Result};
use crate::ota::{self, ErrorVariance, PreScalerSet};

/// Constants entering the bound. Per-device curvature is stored so that
/// both the weighted and the uniform aggregates can be formed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub num_devices: usize,
    pub dim: usize,
    pub g_max: f64,
    pub kappa: f64,
    pub energy_per_sample: f64,
    pub noise_psd: f64,
    pub eta: f64,
    /// Strong-convexity constants `mu_m`.
    pub strong_convexity: Vec<f64>,
    /// Smoothness constants `L_m`.
    pub smoothness: Vec<f64>,
    /// `E_0 = ||w_0 - w*||^2`.
    pub e0: f64,
    /// `E~_0 = ||w_0 - w~||^2`, when `w~` has been solved.
    pub e0_surrogate: Option<f64>,
}

/// Which initial error fed the initialization term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSource {
    /// `sqrt(E~_0)` from the solved surrogate minimizer.
    Surrogate,
    /// `sqrt(E_0) + bias`, an upper bound on `sqrt(E~_0)`.
    TriangleFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundBreakdown {
    pub t: usize,
    pub init: f64,
    pub bias: f64,
    pub transmission: f64,
    pub noise: f64,
    pub total: f64,
    pub init_source: InitSource,
}

impl BoundConstants {
    pub fn validate(&self) -> Result<()> {
        let n = self.num_devices;
        if n == 0 {
            return Err(OtaError::EmptyDeviceList);
        }
        for (name, v) in [("strong_convexity", &self.strong_convexity), ("smoothness", &self.smoothness)] {
            if v.len() != n {
                return Err(OtaError::DimensionMismatch {
                    expected: n,
                    found: v.len(),
                });
            }
            if v.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(OtaError::InvalidInput(format!("{name} constants must be positive")));
            }
        }
        if self.strong_convexity.iter().zip(&self.smoothness).any(|(m, l)| m > l) {
            return Err(OtaError::InvalidInput("mu_m exceeds L_m".into()));
        }
        if !(self.kappa >= 0.0) || !(self.g_max > 0.0) || !(self.e0 >= 0.0) || !(self.noise_psd >= 0.0) {
            return Err(OtaError::InvalidInput("bound constants out of range".into()));
        }
        if let Some(e) = self.e0_surrogate {
            if !(e >= 0.0) {
                return Err(OtaError::InvalidInput("surrogate initial error must be non-negative".into()));
            }
        }
        Ok(())
    }

    fn weighted(values: &[f64], p: &[f64]) -> Result<f64> {
        if p.len() != values.len() {
            return Err(OtaError::DimensionMismatch {
                expected: values.len(),
                found: p.len(),
            });
        }
        Ok(values.iter().zip(p).map(|(v, w)| v * w).sum())
    }

    /// `mu~ = sum p_m mu_m`.
    pub fn weighted_mu(&self, p: &[f64]) -> Result<f64> {
        Self::weighted(&self.strong_convexity, p)
    }

    /// `L~ = sum p_m L_m`.
    pub fn weighted_smoothness(&self, p: &[f64]) -> Result<f64> {
        Self::weighted(&self.smoothness, p)
    }

    pub fn mean_mu(&self) -> f64 {
        self.strong_convexity.iter().sum::<f64>() / self.num_devices as f64
    }

    pub fn mean_smoothness(&self) -> f64 {
        self.smoothness.iter().sum::<f64>() / self.num_devices as f64
    }

    fn check_set(&self, set: &PreScalerSet) -> Result<()> {
        if set.len() != self.num_devices {
            return Err(OtaError::DimensionMismatch {
                expected: self.num_devices,
                found: set.len(),
            });
        }
        if set.budget.dim != self.dim {
            return Err(OtaError::DimensionMismatch {
                expected: self.dim,
                found: set.budget.dim,
            });
        }
        if set.budget.g_max != self.g_max {
            return Err(OtaError::InvalidInput(format!(
                "pre-scaler set uses G_max {:e}, constants use {:e}",
                set.budget.g_max, self.g_max
            )));
        }
        Ok(())
    }
}

/// Admissible stepsizes `[0, 2/(mu~ + L~)]` for participation `p`.
pub fn stepsize_range(constants: &BoundConstants, p: &[f64]) -> Result<(f64, f64)> {
    let mu = constants.weighted_mu(p)?;
    let l = constants.weighted_smoothness(p)?;
    Ok((0.0, 2.0 / (mu + l)))
}

/// `sigma^2`: the aggregation-error variance with every gradient norm at `G_max`.
pub fn sigma_squared(set: &PreScalerSet, constants: &BoundConstants) -> ErrorVariance {
    ota::error_variance_bound(set, constants.noise_psd)
}

/// `(N kappa / mu~) max_m |1/N - p_m|`.
pub fn model_bias_bound(constants: &BoundConstants, p: &[f64]) -> Result<f64> {
    let n = constants.num_devices as f64;
    let mu = constants.weighted_mu(p)?;
    let dev = p.iter().map(|&pm| (1.0 / n - pm).abs()).fold(0.0, f64::max);
    Ok(n * constants.kappa / mu * dev)
}

pub fn convergence_bound(t: usize, constants: &BoundConstants, set: &PreScalerSet) -> Result<BoundBreakdown> {
    constants.validate()?;
    constants.check_set(set)?;
    let p = &set.participation;
    let (_, eta_max) = stepsize_range(constants, p)?;
    let eta = constants.eta;
    if !(eta >= 0.0 && eta <= eta_max) {
        return Err(OtaError::StepsizeOutOfRange { eta, max: eta_max });
    }
    let mu = constants.weighted_mu(p)?;
    let bias = model_bias_bound(constants, p)?;
    let (root_e0, init_source) = match constants.e0_surrogate {
        Some(e) => (e.sqrt(), InitSource::Surrogate),
        None => (constants.e0.sqrt() + bias, InitSource::TriangleFallback),
    };
    let contraction = (1.0 - eta * mu).max(0.0);
    let init = contraction.powi(t.min(i32::MAX as usize) as i32) * root_e0;
    let sigma = sigma_squared(set, constants);
    let total = init + bias + (eta / mu * sigma.total()).sqrt();
    Ok(BoundBreakdown {
        t,
        init,
        bias,
        transmission: sigma.transmission,
        noise: sigma.noise,
        total,
        init_source,
    })
}

/// Right side of the surrogate-error recursion,
/// `(1 - eta mu~)^{2t} E~_0 + (eta / mu~) sigma^2`.
pub fn surrogate_recursion_bound(t: usize, constants: &BoundConstants, set: &PreScalerSet) -> Result<f64> {
    let b = convergence_bound(t, constants, set)?;
    let e0 = constants.e0_surrogate.ok_or_else(|| {
        OtaError::InvalidInput("surrogate recursion needs the surrogate initial error".into())
    })?;
    let mu = constants.weighted_mu(&set.participation)?;
    let rho = (1.0 - constants.eta * mu).max(0.0);
    Ok(rho.powi(2 * t.min(i32::MAX as usize / 2) as i32) * e0 + constants.eta / mu * (b.transmission + b.noise))
}

pub fn bound_curve(rounds: &[usize], constants: &BoundConstants, set: &PreScalerSet) -> Result<Vec<BoundBreakdown>> {
    rounds.iter().map(|&t| convergence_bound(t, constants, set)).collect()
}

#[derive(Serialize)]
struct CsvRow {
    t: usize,
    init: f64,
    bias: f64,
    trans: f64,
    noise: f64,
    total: f64,
    init_source: InitSource,
}

pub fn write_bound_csv(path: &Path, rows: &[BoundBreakdown]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(CsvRow {
            t: r.t,
            init: r.init,
            bias: r.bias,
            trans: r.transmission,
            noise: r.noise,
            total: r.total,
            init_source: r.init_source,
        })?;
    }
    w.flush().map_err(|e| OtaError::io(path, e))
}
