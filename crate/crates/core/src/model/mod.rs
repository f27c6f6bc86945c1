//! Softmax-regression learning core.
//!
//! Parameters are laid out class-major: block `c` holds the `input_dim`
//! weights of class `c` followed by its bias, so `d = C * (input_dim + 1)`.
//! Features never carry the bias entry; it is appended implicitly as a
//! constant 1 inside every kernel.

mod data;
mod idx;
mod solver;
pub mod vecops;

use serde::{Deserialize, Serialize};

use crate::error::{OtaError, Result};

pub use data::{
    partition_one_class_per_device, split_by_class, sample_pool, SyntheticSpec,
    SyntheticSource,
};
pub use idx::{load_mnist, read_idx_images, read_idx_labels, IMAGE_MAGIC, LABEL_MAGIC};
pub use solver::{
    estimate_gmax, estimate_kappa, estimate_smoothness, probe_gmax, solve_global_minimizer,
    solve_weighted_minimizer, Minimizer, SolverOptions, GMAX_FLOOR,
};

pub const NUM_CLASSES: usize = 10;
pub const MNIST_PIXELS: usize = 784;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: usize,
}

impl LabeledExample {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self { features, label }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceDataset {
    pub device: usize,
    pub examples: Vec<LabeledExample>,
}

impl DeviceDataset {
    pub fn new(device: usize, examples: Vec<LabeledExample>) -> Result<Self> {
        if examples.is_empty() {
            return Err(OtaError::EmptyDataset(device));
        }
        Ok(Self { device, examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Sorted, deduplicated labels present on the device.
    pub fn labels(&self) -> Vec<usize> {
        let mut labels: Vec<usize> = self.examples.iter().map(|e| e.label).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }
}

/// Flat parameter vector `w` of length `C * (input_dim + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    num_classes: usize,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(cfg: &LossConfig) -> Self {
        Self {
            num_classes: cfg.num_classes,
            values: vec![0.0; cfg.dim()],
        }
    }

    pub fn from_vec(cfg: &LossConfig, values: Vec<f64>) -> Result<Self> {
        if values.len() != cfg.dim() {
            return Err(OtaError::DimensionMismatch {
                expected: cfg.dim(),
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(OtaError::InvalidInput("parameters must be finite".into()));
        }
        Ok(Self {
            num_classes: cfg.num_classes,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Sub-parameter of class `c` (weights followed by the bias).
    pub fn class_block(&self, c: usize) -> &[f64] {
        let len = self.values.len() / self.num_classes;
        &self.values[c * len..(c + 1) * len]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn distance(&self, other: &ModelParams) -> f64 {
        vecops::distance(&self.values, &other.values)
    }

    pub fn norm(&self) -> f64 {
        vecops::norm(&self.values)
    }
}

/// Regularized cross-entropy configuration. `reg` doubles as the per-device
/// strong-convexity constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub reg: f64,
    pub num_classes: usize,
    pub input_dim: usize,
    #[serde(default = "enabled")]
    data_term: bool,
}

fn enabled() -> bool {
    true
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            reg: 0.01,
            num_classes: NUM_CLASSES,
            input_dim: MNIST_PIXELS,
            data_term: true,
        }
    }
}

impl LossConfig {
    pub fn new(reg: f64, num_classes: usize, input_dim: usize) -> Result<Self> {
        if !(reg > 0.0 && reg.is_finite()) {
            return Err(OtaError::InvalidInput(format!("reg must be positive, got {reg}")));
        }
        if num_classes < 2 || input_dim == 0 {
            return Err(OtaError::InvalidInput(
                "need at least two classes and one input feature".into(),
            ));
        }
        Ok(Self {
            reg,
            num_classes,
            input_dim,
            data_term: true,
        })
    }

    /// Sanity mode: drops the cross-entropy term so the objective is
    /// `reg/2 * ||w||^2`, whose minimizer is exactly zero.
    pub fn regularizer_only(mut self) -> Self {
        self.data_term = false;
        self
    }

    pub fn has_data_term(&self) -> bool {
        self.data_term
    }

    pub fn block_len(&self) -> usize {
        self.input_dim + 1
    }

    pub fn dim(&self) -> usize {
        self.num_classes * self.block_len()
    }

    fn check_params(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.dim() {
            return Err(OtaError::DimensionMismatch {
                expected: self.dim(),
                found: w.len(),
            });
        }
        Ok(())
    }

    fn check_example(&self, ex: &LabeledExample) -> Result<()> {
        if ex.features.len() != self.input_dim {
            return Err(OtaError::DimensionMismatch {
                expected: self.input_dim,
                found: ex.features.len(),
            });
        }
        if ex.label >= self.num_classes {
            return Err(OtaError::InvalidInput(format!(
                "label {} outside [0, {})",
                ex.label, self.num_classes
            )));
        }
        Ok(())
    }

    /// Logits `x~^T w^(c)` for every class, written into `out`.
    pub fn logits(&self, w: &[f64], features: &[f64], out: &mut [f64]) {
        let bl = self.block_len();
        for (c, z) in out.iter_mut().enumerate().take(self.num_classes) {
            let block = &w[c * bl..(c + 1) * bl];
            *z = vecops::dot(&block[..self.input_dim], features) + block[self.input_dim];
        }
    }

    /// Mean cross-entropy over the dataset (no regularizer). When `grad` is
    /// given, the matching data-term gradient is accumulated into it.
    fn data_term_kernel(
        &self,
        w: &[f64],
        ds: &DeviceDataset,
        mut grad: Option<&mut [f64]>,
    ) -> Result<f64> {
        self.check_params(w)?;
        if ds.is_empty() {
            return Err(OtaError::EmptyDataset(ds.device));
        }
        if !self.data_term {
            for ex in &ds.examples {
                self.check_example(ex)?;
            }
            return Ok(0.0);
        }
        let bl = self.block_len();
        let scale = 1.0 / ds.len() as f64;
        let mut logits = vec![0.0; self.num_classes];
        let mut total = 0.0;
        for ex in &ds.examples {
            self.check_example(ex)?;
            self.logits(w, &ex.features, &mut logits);
            let lse = vecops::log_sum_exp(&logits);
            total += lse - logits[ex.label];
            if let Some(g) = grad.as_deref_mut() {
                for (c, &z) in logits.iter().enumerate() {
                    let mut coef = (z - lse).exp();
                    if c == ex.label {
                        coef -= 1.0;
                    }
                    coef *= scale;
                    let block = &mut g[c * bl..(c + 1) * bl];
                    vecops::axpy(coef, &ex.features, &mut block[..self.input_dim]);
                    block[self.input_dim] += coef;
                }
            }
        }
        Ok(total * scale)
    }

    pub fn local_loss(&self, w: &ModelParams, ds: &DeviceDataset) -> Result<f64> {
        let data = self.data_term_kernel(w.as_slice(), ds, None)?;
        Ok(0.5 * self.reg * vecops::norm_sq(w.as_slice()) + data)
    }

    pub fn local_gradient(&self, w: &ModelParams, ds: &DeviceDataset) -> Result<Vec<f64>> {
        let mut grad: Vec<f64> = w.as_slice().iter().map(|v| self.reg * v).collect();
        self.data_term_kernel(w.as_slice(), ds, Some(&mut grad))?;
        Ok(grad)
    }

    /// Loss and gradient in one pass over the data.
    pub fn local_loss_and_gradient(
        &self,
        w: &ModelParams,
        ds: &DeviceDataset,
    ) -> Result<(f64, Vec<f64>)> {
        let mut grad: Vec<f64> = w.as_slice().iter().map(|v| self.reg * v).collect();
        let data = self.data_term_kernel(w.as_slice(), ds, Some(&mut grad))?;
        Ok((0.5 * self.reg * vecops::norm_sq(w.as_slice()) + data, grad))
    }

    /// Local gradients of every device, in device order.
    pub fn local_gradients(
        &self,
        w: &ModelParams,
        datasets: &[DeviceDataset],
    ) -> Result<Vec<Vec<f64>>> {
        datasets.iter().map(|ds| self.local_gradient(w, ds)).collect()
    }

    /// `F(w) = (1/N) sum_m f_m(w)`.
    pub fn global_loss(&self, w: &ModelParams, datasets: &[DeviceDataset]) -> Result<f64> {
        self.weighted_loss(w, datasets, &uniform_weights(datasets.len())?)
    }

    pub fn global_gradient(&self, w: &ModelParams, datasets: &[DeviceDataset]) -> Result<Vec<f64>> {
        self.weighted_gradient(w, datasets, &uniform_weights(datasets.len())?)
    }

    /// `F~(w) = sum_m p_m f_m(w)` for a probability vector `p`.
    pub fn weighted_loss(
        &self,
        w: &ModelParams,
        datasets: &[DeviceDataset],
        weights: &[f64],
    ) -> Result<f64> {
        check_weights(weights, datasets.len())?;
        let mut total = 0.0;
        for (ds, &p) in datasets.iter().zip(weights) {
            total += p * self.local_loss(w, ds)?;
        }
        Ok(total)
    }

    pub fn weighted_gradient(
        &self,
        w: &ModelParams,
        datasets: &[DeviceDataset],
        weights: &[f64],
    ) -> Result<Vec<f64>> {
        check_weights(weights, datasets.len())?;
        let mut total = vec![0.0; self.dim()];
        for (ds, &p) in datasets.iter().zip(weights) {
            let g = self.local_gradient(w, ds)?;
            vecops::axpy(p, &g, &mut total);
        }
        Ok(total)
    }

    /// Predicted class; ties go to the lowest class index.
    pub fn predict(&self, w: &ModelParams, features: &[f64]) -> usize {
        let mut logits = vec![0.0; self.num_classes];
        self.logits(w.as_slice(), features, &mut logits);
        let mut best = 0;
        for (c, &z) in logits.iter().enumerate().skip(1) {
            if z > logits[best] {
                best = c;
            }
        }
        best
    }

    pub fn test_accuracy(&self, w: &ModelParams, test: &[LabeledExample]) -> Result<f64> {
        if test.is_empty() {
            return Err(OtaError::EmptyTestSet);
        }
        self.check_params(w.as_slice())?;
        let mut correct = 0usize;
        for ex in test {
            self.check_example(ex)?;
            if self.predict(w, &ex.features) == ex.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / test.len() as f64)
    }

    /// Accuracy of `w` relative to the accuracy of the global minimizer.
    pub fn normalized_accuracy(
        &self,
        w: &ModelParams,
        w_star: &ModelParams,
        test: &[LabeledExample],
    ) -> Result<f64> {
        let reference = self.test_accuracy(w_star, test)?;
        if reference <= 0.0 {
            return Err(OtaError::InvalidInput(
                "reference model has zero test accuracy".into(),
            ));
        }
        Ok(self.test_accuracy(w, test)? / reference)
    }
}

pub fn uniform_weights(n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(OtaError::EmptyDeviceList);
    }
    Ok(vec![1.0 / n as f64; n])
}

fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if n == 0 {
        return Err(OtaError::EmptyDeviceList);
    }
    if weights.len() != n {
        return Err(OtaError::InvalidWeights(format!(
            "{} weights for {n} devices",
            weights.len()
        )));
    }
    if weights.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
        return Err(OtaError::InvalidWeights("weights must be finite and non-negative".into()));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(OtaError::InvalidWeights(format!("weights sum to {sum}, not 1")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> LossConfig {
        LossConfig::new(0.01, 10, 6).unwrap()
    }

    fn random_dataset(cfg: &LossConfig, n: usize, device: usize, rng: &mut ChaCha8Rng) -> DeviceDataset {
        let examples = (0..n)
            .map(|_| {
                let x = (0..cfg.input_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                LabeledExample::new(x, rng.random_range(0..cfg.num_classes))
            })
            .collect();
        DeviceDataset::new(device, examples).unwrap()
    }

    fn random_params(cfg: &LossConfig, scale: f64, rng: &mut ChaCha8Rng) -> ModelParams {
        let v = (0..cfg.dim()).map(|_| rng.random_range(-scale..scale)).collect();
        ModelParams::from_vec(cfg, v).unwrap()
    }

    /// Direct per-example evaluation of phi, summed term by term.
    fn loss_oracle(cfg: &LossConfig, w: &ModelParams, ds: &DeviceDataset) -> f64 {
        let reg: f64 = w.as_slice().iter().map(|v| v * v).sum::<f64>() * cfg.reg / 2.0;
        let mut total = 0.0;
        for ex in &ds.examples {
            let z: Vec<f64> = (0..cfg.num_classes)
                .map(|c| {
                    let b = w.class_block(c);
                    let mut s = b[cfg.input_dim];
                    for (wi, xi) in b.iter().zip(&ex.features) {
                        s += wi * xi;
                    }
                    s
                })
                .collect();
            let denom: f64 = z.iter().map(|v| v.exp()).sum();
            total += reg - (z[ex.label].exp() / denom).ln();
        }
        total / ds.len() as f64
    }

    #[test]
    fn zero_params_give_log_c() {
        let cfg = LossConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ds = random_dataset(&cfg, 4, 0, &mut rng);
        let loss = cfg.local_loss(&ModelParams::zeros(&cfg), &ds).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!((loss - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn zero_params_loss_independent_of_features() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_dataset(&cfg, 3, 0, &mut rng);
        let b = random_dataset(&cfg, 7, 1, &mut rng);
        let w = ModelParams::zeros(&cfg);
        let (la, lb) = (cfg.local_loss(&w, &a).unwrap(), cfg.local_loss(&w, &b).unwrap());
        assert!((la - lb).abs() < 1e-14);
    }

    #[test]
    fn loss_matches_term_by_term_oracle() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ds = random_dataset(&cfg, 3, 0, &mut rng);
        let w = random_params(&cfg, 1.0, &mut rng);
        let got = cfg.local_loss(&w, &ds).unwrap();
        let want = loss_oracle(&cfg, &w, &ds);
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
    }

    #[test]
    fn gradient_at_zero_is_uniform_softmax_residual() {
        let cfg = small_cfg();
        let x = vec![0.5, -1.0, 2.0, 0.0, 1.0, 3.0];
        let ds = DeviceDataset::new(0, vec![LabeledExample::new(x.clone(), 0)]).unwrap();
        let g = cfg.local_gradient(&ModelParams::zeros(&cfg), &ds).unwrap();
        let mut xt = x.clone();
        xt.push(1.0);
        for c in 0..10 {
            let coef = if c == 0 { 0.1 - 1.0 } else { 0.1 };
            for (j, &xj) in xt.iter().enumerate() {
                assert!((g[c * 7 + j] - coef * xj).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ds = random_dataset(&cfg, 5, 0, &mut rng);
        let w = random_params(&cfg, 0.5, &mut rng);
        let g = cfg.local_gradient(&w, &ds).unwrap();
        let h = 1e-5;
        for _ in 0..20 {
            let i = rng.random_range(0..cfg.dim());
            let mut plus = w.clone();
            plus.as_mut_slice()[i] += h;
            let mut minus = w.clone();
            minus.as_mut_slice()[i] -= h;
            let fd = (cfg.local_loss(&plus, &ds).unwrap() - cfg.local_loss(&minus, &ds).unwrap())
                / (2.0 * h);
            let rel = (fd - g[i]).abs() / g[i].abs().max(1e-3);
            assert!(rel < 1e-5, "coord {i}: fd {fd} analytic {}", g[i]);
        }
    }

    #[test]
    fn loss_and_gradient_agree_with_separate_calls() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ds = random_dataset(&cfg, 4, 0, &mut rng);
        let w = random_params(&cfg, 1.0, &mut rng);
        let (l, g) = cfg.local_loss_and_gradient(&w, &ds).unwrap();
        assert_eq!(l, cfg.local_loss(&w, &ds).unwrap());
        assert_eq!(g, cfg.local_gradient(&w, &ds).unwrap());
    }

    #[test]
    fn shift_of_all_logits_leaves_data_term_unchanged() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ds = random_dataset(&cfg, 1, 0, &mut rng);
        let w = random_params(&cfg, 1.0, &mut rng);
        let mut shifted = w.clone();
        // raising every class bias by k shifts every logit by k
        let k = 500.0;
        for c in 0..cfg.num_classes {
            shifted.as_mut_slice()[c * cfg.block_len() + cfg.input_dim] += k;
        }
        let reg = |p: &ModelParams| 0.5 * cfg.reg * vecops::norm_sq(p.as_slice());
        let a = cfg.local_loss(&w, &ds).unwrap() - reg(&w);
        let b = cfg.local_loss(&shifted, &ds).unwrap() - reg(&shifted);
        assert!(b.is_finite());
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let cfg = small_cfg();
        let ds = DeviceDataset::new(0, vec![LabeledExample::new(vec![1.0; 5], 0)]).unwrap();
        let err = cfg.local_loss(&ModelParams::zeros(&cfg), &ds).unwrap_err();
        assert!(matches!(err, OtaError::DimensionMismatch { expected: 6, found: 5 }));
        let other = LossConfig::new(0.01, 10, 5).unwrap();
        let ds_ok = DeviceDataset::new(0, vec![LabeledExample::new(vec![1.0; 6], 0)]).unwrap();
        assert!(matches!(
            cfg.local_gradient(&ModelParams::zeros(&other), &ds_ok),
            Err(OtaError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn global_is_mean_of_locals() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ds = random_dataset(&cfg, 4, 0, &mut rng);
        let w = random_params(&cfg, 1.0, &mut rng);
        let single = cfg.global_loss(&w, std::slice::from_ref(&ds)).unwrap();
        assert_eq!(single, cfg.local_loss(&w, &ds).unwrap());
        let copies = vec![ds.clone(), ds.clone(), ds.clone()];
        let g = cfg.global_loss(&w, &copies).unwrap();
        assert!((g - single).abs() < 1e-14);
        assert!(matches!(cfg.global_loss(&w, &[]), Err(OtaError::EmptyDeviceList)));
    }

    #[test]
    fn weighted_loss_special_cases() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sets: Vec<_> = (0..4).map(|m| random_dataset(&cfg, 3, m, &mut rng)).collect();
        let w = random_params(&cfg, 1.0, &mut rng);
        let uniform = uniform_weights(4).unwrap();
        assert_eq!(
            cfg.weighted_loss(&w, &sets, &uniform).unwrap(),
            cfg.global_loss(&w, &sets).unwrap()
        );
        let one_hot = [0.0, 0.0, 1.0, 0.0];
        assert_eq!(
            cfg.weighted_loss(&w, &sets, &one_hot).unwrap(),
            cfg.local_loss(&w, &sets[2]).unwrap()
        );
        // random simplex point vs term-by-term oracle
        let raw: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let want: f64 = sets.iter().zip(&p).map(|(d, pm)| pm * loss_oracle(&cfg, &w, d)).sum();
        let got = cfg.weighted_loss(&w, &sets, &p).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!(matches!(
            cfg.weighted_loss(&w, &sets, &[0.5, 0.5, 0.5, 0.0]),
            Err(OtaError::InvalidWeights(_))
        ));
    }

    #[test]
    fn accuracy_tie_break_prefers_lowest_class() {
        let cfg = small_cfg();
        let w = ModelParams::zeros(&cfg);
        let test: Vec<_> = (0..10).map(|c| LabeledExample::new(vec![0.3; 6], c)).collect();
        // all logits tie, so everything is predicted as class 0
        assert_eq!(cfg.test_accuracy(&w, &test).unwrap(), 0.1);
        assert!(matches!(cfg.test_accuracy(&w, &[]), Err(OtaError::EmptyTestSet)));
    }

    #[test]
    fn normalized_accuracy_of_reference_is_one() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ds = random_dataset(&cfg, 30, 0, &mut rng);
        let w = random_params(&cfg, 1.0, &mut rng);
        if cfg.test_accuracy(&w, &ds.examples).unwrap() > 0.0 {
            assert_eq!(cfg.normalized_accuracy(&w, &w, &ds.examples).unwrap(), 1.0);
        }
    }
}
