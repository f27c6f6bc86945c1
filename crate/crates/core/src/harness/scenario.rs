use log::info;
use serde::{Deserialize, Serialize};

use super::config::{rounds_from_budget, DataSource, ExperimentConfig};
use crate::bound::BoundConstants;
use crate::design::{PolicyKind, RoundPolicy};
use crate::error::{OtaError, Result};
use crate::model::{
    estimate_kappa, estimate_smoothness, load_mnist, partition_one_class_per_device, probe_gmax,
    sample_pool, solve_global_minimizer, solve_weighted_minimizer, DeviceDataset, LabeledExample, LossConfig,
    ModelParams, SolverOptions, SyntheticSource, NUM_CLASSES,
};
use crate::ota::LinkBudget;
use crate::rng::{SeedTree, Stream};
use crate::wireless::{deploy_uniform_disk, Deployment};

/// Everything shared by the policies of one experiment: data partition,
/// deployment, the reference minimizer and the estimated constants.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ExperimentConfig,
    pub seeds: SeedTree,
    pub loss: LossConfig,
    pub datasets: Vec<DeviceDataset>,
    pub test: Vec<LabeledExample>,
    pub deployment: Deployment,
    pub smoothness: Vec<f64>,
    pub strong_convexity: Vec<f64>,
    pub w_star: ModelParams,
    pub f_star: f64,
    pub acc_star: f64,
    pub kappa: f64,
    pub g_max: f64,
    pub budget: LinkBudget,
    pub rounds: usize,
}

/// Scalar summary of a scenario for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub num_devices: usize,
    pub dim: usize,
    pub rounds: usize,
    pub round_ms: f64,
    pub energy_per_sample: f64,
    pub noise_psd: f64,
    pub g_max: f64,
    pub kappa: f64,
    pub reg: f64,
    pub smoothness: Vec<f64>,
    pub f_star: f64,
    pub acc_star: f64,
    pub distances_m: Vec<f64>,
    pub path_gains: Vec<f64>,
}

fn load_data(cfg: &ExperimentConfig, seeds: &SeedTree) -> Result<(usize, Vec<DeviceDataset>, Vec<LabeledExample>)> {
    let mut rng = seeds.stream(Stream::Data);
    match &cfg.data {
        DataSource::Synthetic { spec } => {
            let source = SyntheticSource::new(spec.clone(), &mut rng)?;
            let train = source.balanced(cfg.samples_per_class, &mut rng);
            let per_class_test = cfg.test_size.div_ceil(spec.num_classes).max(1);
            let mut test = source.balanced(per_class_test, &mut rng);
            test.truncate(cfg.test_size.max(1));
            let train: Vec<_> = train.into_iter().filter(|e| e.label < cfg.num_devices).collect();
            let datasets = partition_one_class_per_device(&train, cfg.num_devices, None, &mut rng)?;
            Ok((spec.input_dim, datasets, test))
        }
        DataSource::Mnist {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let pool = load_mnist(train_images, train_labels)?;
            let input_dim = pool.first().map(|e| e.features.len()).ok_or(OtaError::EmptyDataset(0))?;
            let train = sample_pool(&pool, NUM_CLASSES.max(cfg.num_devices), cfg.samples_per_class, &mut rng)?;
            let datasets = partition_one_class_per_device(&train, cfg.num_devices, None, &mut rng)?;
            let mut test = load_mnist(test_images, test_labels)?;
            test.truncate(cfg.test_size.max(1));
            Ok((input_dim, datasets, test))
        }
    }
}

impl Scenario {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let deployment = match &config.deployment {
            Some(path) => Deployment::load(path)?,
            None => deploy_uniform_disk(
                config.num_devices,
                &config.radio,
                &mut SeedTree::new(config.seed).stream(Stream::Deployment),
            )?,
        };
        Self::with_deployment(config, deployment)
    }

    /// Builds the scenario around a given deployment.
    pub fn with_deployment(config: &ExperimentConfig, deployment: Deployment) -> Result<Self> {
        config.validate()?;
        deployment.validate()?;
        if deployment.len() != config.num_devices {
            return Err(OtaError::Config(format!(
                "deployment has {} devices, config expects {}",
                deployment.len(),
                config.num_devices
            )));
        }
        let seeds = SeedTree::new(config.seed);
        let (input_dim, datasets, test) = load_data(config, &seeds)?;
        let num_classes = match &config.data {
            DataSource::Synthetic { spec } => spec.num_classes,
            DataSource::Mnist { .. } => NUM_CLASSES,
        };
        let loss = LossConfig::new(config.reg, num_classes, input_dim)?;
        let dim = loss.dim();
        let rounds = rounds_from_budget(config.budget_ms, config.radio.bandwidth_hz, dim)?;

        let smoothness = datasets
            .iter()
            .map(|ds| estimate_smoothness(&loss, ds))
            .collect::<Result<Vec<_>>>()?;
        let strong_convexity = vec![config.reg; datasets.len()];
        let opts = SolverOptions {
            tol: config.solver_tol,
            ..SolverOptions::default()
        };
        let star = solve_global_minimizer(&loss, &datasets, None, opts)?;
        info!(
            "w* solved in {} iterations (|grad| = {:.2e}, F* = {:.6})",
            star.iterations, star.grad_norm, star.loss
        );
        let acc_star = loss.test_accuracy(&star.params, &test)?;
        if acc_star <= 0.0 {
            return Err(OtaError::InvalidInput("reference model has zero test accuracy".into()));
        }
        let kappa = estimate_kappa(&loss, &datasets, &star.params)?;
        let mean_l = smoothness.iter().sum::<f64>() / smoothness.len() as f64;
        let g_max = probe_gmax(
            &loss,
            &datasets,
            &ModelParams::zeros(&loss),
            1.0 / mean_l,
            rounds,
            config.gmax_safety,
        )?;
        let budget = LinkBudget::new(dim, config.radio.energy_per_sample(), g_max)?;
        info!("d = {dim}, T = {rounds}, G_max = {g_max:.4}, kappa = {kappa:.4}, acc* = {acc_star:.4}");
        Ok(Self {
            config: config.clone(),
            seeds,
            loss,
            datasets,
            test,
            deployment,
            smoothness,
            strong_convexity,
            w_star: star.params,
            f_star: star.loss,
            acc_star,
            kappa,
            g_max,
            budget,
            rounds,
        })
    }

    pub fn dim(&self) -> usize {
        self.loss.dim()
    }

    pub fn num_devices(&self) -> usize {
        self.datasets.len()
    }

    pub fn policy(&self, kind: &PolicyKind) -> Result<RoundPolicy> {
        RoundPolicy::build(kind, &self.deployment, self.budget, self.config.radio.r_max_m)
    }

    /// Upper stepsize limit `2/(mu~ + L~)` under participation `p`.
    pub fn stepsize_limit(&self, p: &[f64]) -> Result<f64> {
        crate::bound::stepsize_range(&self.bound_constants(0.0, None), p).map(|r| r.1)
    }

    /// Minimizer `w~` of the participation-weighted objective.
    pub fn surrogate_minimizer(&self, p: &[f64]) -> Result<ModelParams> {
        let opts = SolverOptions {
            tol: self.config.solver_tol,
            ..SolverOptions::default()
        };
        Ok(solve_weighted_minimizer(&self.loss, &self.datasets, p, Some(&self.w_star), opts)?.params)
    }

    /// Bound constants with `w_0 = 0`; pass `w~` to fill `E~_0`.
    pub fn bound_constants(&self, eta: f64, surrogate: Option<&ModelParams>) -> BoundConstants {
        BoundConstants {
            num_devices: self.num_devices(),
            dim: self.dim(),
            g_max: self.g_max,
            kappa: self.kappa,
            energy_per_sample: self.config.radio.energy_per_sample(),
            noise_psd: self.config.radio.noise_psd_w_per_hz,
            eta,
            strong_convexity: self.strong_convexity.clone(),
            smoothness: self.smoothness.clone(),
            e0: self.w_star.norm().powi(2),
            e0_surrogate: surrogate.map(|w| w.norm().powi(2)),
        }
    }

    pub fn summary(&self) -> ScenarioSummary {
        ScenarioSummary {
            num_devices: self.num_devices(),
            dim: self.dim(),
            rounds: self.rounds,
            round_ms: super::config::elapsed_ms(1, self.config.radio.bandwidth_hz, self.dim()),
            energy_per_sample: self.config.radio.energy_per_sample(),
            noise_psd: self.config.radio.noise_psd_w_per_hz,
            g_max: self.g_max,
            kappa: self.kappa,
            reg: self.config.reg,
            smoothness: self.smoothness.clone(),
            f_star: self.f_star,
            acc_star: self.acc_star,
            distances_m: self.deployment.distances(),
            path_gains: self.deployment.path_gains(),
        }
    }
}
