use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::design::PolicyKind;
use crate::error::{OtaError, Result};
use crate::model::SyntheticSpec;
use crate::wireless::RadioConfig;

/// Where training and test examples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic {
        #[serde(default)]
        spec: SyntheticSpec,
    },
    Mnist {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            spec: SyntheticSpec::default(),
        }
    }
}

/// Stepsize choice. `LogGrid` bounds are fractions of the policy's
/// admissible limit `2/(mu~ + L~)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepsizeSpec {
    Fixed { eta: f64 },
    Grid { values: Vec<f64> },
    LogGrid { lo_fraction: f64, hi_fraction: f64, points: usize },
}

impl Default for StepsizeSpec {
    fn default() -> Self {
        StepsizeSpec::LogGrid {
            lo_fraction: 1e-3,
            hi_fraction: 1.0,
            points: 10,
        }
    }
}

impl StepsizeSpec {
    /// Candidate stepsizes given the admissible limit, ascending.
    pub fn candidates(&self, limit: f64) -> Result<Vec<f64>> {
        let mut v = match self {
            StepsizeSpec::Fixed { eta } => vec![*eta],
            StepsizeSpec::Grid { values } => values.clone(),
            StepsizeSpec::LogGrid {
                lo_fraction,
                hi_fraction,
                points,
            } => {
                if *points == 0 || !(*lo_fraction > 0.0) || !(hi_fraction >= lo_fraction) {
                    return Err(OtaError::Config("log grid needs 0 < lo <= hi and points >= 1".into()));
                }
                if *points == 1 {
                    vec![hi_fraction * limit]
                } else {
                    let (a, b) = (lo_fraction.ln(), hi_fraction.ln());
                    (0..*points)
                        .map(|k| (a + (b - a) * k as f64 / (*points - 1) as f64).exp() * limit)
                        .collect()
                }
            }
        };
        if v.is_empty() {
            return Err(OtaError::Config("stepsize grid is empty".into()));
        }
        if v.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(OtaError::Config(format!("stepsizes must be positive: {v:?}")));
        }
        v.sort_by(f64::total_cmp);
        v.dedup();
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub radio: RadioConfig,
    pub num_devices: usize,
    pub data: DataSource,
    /// Training examples per class; device `m` holds class `m`.
    pub samples_per_class: usize,
    pub test_size: usize,
    pub budget_ms: f64,
    pub reg: f64,
    pub stepsize: StepsizeSpec,
    pub policies: Vec<PolicyKind>,
    pub replicates: usize,
    /// Replicates per candidate during the stepsize search.
    pub grid_replicates: usize,
    pub seed: u64,
    pub log_every: usize,
    pub gmax_safety: f64,
    pub solver_tol: f64,
    /// Fixed deployment file; sampled from the seed when absent.
    pub deployment: Option<PathBuf>,
    pub track_accuracy: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            radio: RadioConfig::default(),
            num_devices: 10,
            data: DataSource::default(),
            samples_per_class: 10,
            test_size: 1000,
            budget_ms: 4000.0,
            reg: 0.01,
            stepsize: StepsizeSpec::default(),
            policies: PolicyKind::standard_set(),
            replicates: 50,
            grid_replicates: 5,
            seed: 2024,
            log_every: 5,
            gmax_safety: 1.5,
            solver_tol: 1e-8,
            deployment: None,
            track_accuracy: true,
        }
    }
}

impl ExperimentConfig {
    /// Reads JSON or TOML, chosen by file extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| OtaError::io(path, e))?;
        let cfg: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text)?,
            Some("json") => serde_json::from_str(&text)?,
            other => {
                return Err(OtaError::Config(format!(
                    "unsupported config extension {other:?}; use .json or .toml"
                )))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.radio.validate()?;
        if self.num_devices == 0 {
            return Err(OtaError::Config("num_devices must be positive".into()));
        }
        if self.samples_per_class == 0 {
            return Err(OtaError::Config("samples_per_class must be positive".into()));
        }
        if !(self.budget_ms > 0.0 && self.budget_ms.is_finite()) {
            return Err(OtaError::Config(format!("budget_ms must be positive, got {}", self.budget_ms)));
        }
        if !(self.reg > 0.0) {
            return Err(OtaError::Config("reg must be positive".into()));
        }
        if self.replicates == 0 || self.grid_replicates == 0 {
            return Err(OtaError::Config("replicate counts must be at least 1".into()));
        }
        if self.log_every == 0 {
            return Err(OtaError::Config("log_every must be at least 1".into()));
        }
        if !(self.gmax_safety >= 1.0) {
            return Err(OtaError::Config("gmax_safety must be at least 1".into()));
        }
        if !(self.solver_tol > 0.0) {
            return Err(OtaError::Config("solver_tol must be positive".into()));
        }
        if self.policies.is_empty() {
            return Err(OtaError::Config("no policy configured".into()));
        }
        for p in &self.policies {
            p.validate()?;
        }
        if let DataSource::Synthetic { spec } = &self.data {
            if spec.num_classes < self.num_devices {
                return Err(OtaError::Config(format!(
                    "{} devices need at least as many classes, found {}",
                    self.num_devices, spec.num_classes
                )));
            }
        }
        Ok(())
    }
}

/// `T = floor(budget_s * B / d)`: every round costs one `d / B` upload slot.
pub fn rounds_from_budget(budget_ms: f64, bandwidth_hz: f64, dim: usize) -> Result<usize> {
    if !(budget_ms > 0.0) || !(bandwidth_hz > 0.0) || dim == 0 {
        return Err(OtaError::Config("budget, bandwidth and dimension must be positive".into()));
    }
    // integer arithmetic on the exact case budget = d/B
    let samples = budget_ms / 1000.0 * bandwidth_hz;
    let t = (samples / dim as f64 * (1.0 + 4.0 * f64::EPSILON)).floor() as usize;
    if t == 0 {
        return Err(OtaError::Config(format!(
            "budget {budget_ms} ms is shorter than one round ({:.3} ms)",
            dim as f64 / bandwidth_hz * 1000.0
        )));
    }
    Ok(t)
}

/// Wall-clock position of round `t` in ms.
pub fn elapsed_ms(t: usize, bandwidth_hz: f64, dim: usize) -> f64 {
    t as f64 * dim as f64 / bandwidth_hz * 1000.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_round_count() {
        assert_eq!(rounds_from_budget(4000.0, 1e6, 7850).unwrap(), 509);
        assert_eq!(rounds_from_budget(7.85, 1e6, 7850).unwrap(), 1);
        assert!(matches!(rounds_from_budget(7.0, 1e6, 7850), Err(OtaError::Config(_))));
        assert!((elapsed_ms(509, 1e6, 7850) - 3995.65).abs() < 1e-9);
    }

    #[test]
    fn log_grid_spans_fractions_of_the_limit() {
        let g = StepsizeSpec::default().candidates(2.0).unwrap();
        assert_eq!(g.len(), 10);
        assert!((g[0] - 2e-3).abs() < 1e-15);
        assert!((g[9] - 2.0).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(StepsizeSpec::Fixed { eta: 0.3 }.candidates(1.0).unwrap(), vec![0.3]);
        assert!(StepsizeSpec::Grid { values: vec![] }.candidates(1.0).is_err());
    }

    #[test]
    fn config_round_trips_through_json_and_toml() {
        let cfg = ExperimentConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let json = dir.path().join("c.json");
        std::fs::write(&json, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        assert_eq!(ExperimentConfig::load(&json).unwrap(), cfg);
        let toml_path = dir.path().join("c.toml");
        std::fs::write(
            &toml_path,
            "seed = 7\nreplicates = 3\n[stepsize]\nkind = \"fixed\"\neta = 0.01\n[[policies]]\nkind = \"zero_bias\"\n",
        )
        .unwrap();
        let t = ExperimentConfig::load(&toml_path).unwrap();
        assert_eq!(t.seed, 7);
        assert_eq!(t.policies, vec![PolicyKind::ZeroBias]);
        assert_eq!(t.num_devices, 10);
        let bad = dir.path().join("c.yaml");
        std::fs::write(&bad, "").unwrap();
        assert!(matches!(ExperimentConfig::load(&bad), Err(OtaError::Config(_))));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = ExperimentConfig::default();
        c.budget_ms = 0.0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.replicates = 0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.policies = vec![PolicyKind::BbflInterior { interior_fraction: 1.5 }];
        assert!(c.validate().is_err());
    }
}
