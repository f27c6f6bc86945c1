//! Centralized minimizers and the constants the convergence bound needs.

use super::{uniform_weights, vecops, DeviceDataset, LossConfig, ModelParams};
use crate::error::{OtaError, Result};

/// Lower floor applied to every `G_max` estimate.
pub const GMAX_FLOOR: f64 = 1e-12;

const POWER_ITERATION_CAP: usize = 20_000;
const POWER_ITERATION_RTOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop once the gradient norm drops to this value.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 100_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimizer {
    pub params: ModelParams,
    pub loss: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Minimizer `w*` of the uniform global objective.
pub fn solve_global_minimizer(
    cfg: &LossConfig,
    datasets: &[DeviceDataset],
    start: Option<&ModelParams>,
    opts: SolverOptions,
) -> Result<Minimizer> {
    solve_weighted_minimizer(cfg, datasets, &uniform_weights(datasets.len())?, start, opts)
}

/// Minimizer of `sum_m p_m f_m`. Uses Nesterov's method with the
/// strongly-convex momentum `(sqrt(L/mu) - 1) / (sqrt(L/mu) + 1)`, stepsize
/// `1/L` with `L = sum_m p_m L_m`, and gradient-based momentum restarts.
pub fn solve_weighted_minimizer(
    cfg: &LossConfig,
    datasets: &[DeviceDataset],
    weights: &[f64],
    start: Option<&ModelParams>,
    opts: SolverOptions,
) -> Result<Minimizer> {
    if !(opts.tol > 0.0) {
        return Err(OtaError::InvalidInput("solver tolerance must be positive".into()));
    }
    // validates the weights before the smoothness pass
    cfg.weighted_loss(&ModelParams::zeros(cfg), datasets, weights)?;
    let mut smooth = 0.0;
    for (ds, &p) in datasets.iter().zip(weights) {
        smooth += p * estimate_smoothness(cfg, ds)?;
    }
    let step = 1.0 / smooth;
    let q = (smooth / cfg.reg).sqrt();
    let momentum = (q - 1.0) / (q + 1.0);

    let mut x = match start {
        Some(w) => {
            if w.len() != cfg.dim() {
                return Err(OtaError::DimensionMismatch {
                    expected: cfg.dim(),
                    found: w.len(),
                });
            }
            w.clone()
        }
        None => ModelParams::zeros(cfg),
    };
    let mut y = x.clone();
    let mut best = (f64::INFINITY, x.clone());

    for iter in 0..opts.max_iters {
        let g = cfg.weighted_gradient(&y, datasets, weights)?;
        let gn = vecops::norm(&g);
        if !gn.is_finite() {
            break;
        }
        if gn < best.0 {
            best = (gn, y.clone());
        }
        if gn <= opts.tol {
            let loss = cfg.weighted_loss(&y, datasets, weights)?;
            return Ok(Minimizer {
                params: y,
                loss,
                grad_norm: gn,
                iterations: iter,
            });
        }
        let mut next = y.clone();
        vecops::axpy(-step, &g, next.as_mut_slice());
        let delta: Vec<f64> = next
            .as_slice()
            .iter()
            .zip(x.as_slice())
            .map(|(a, b)| a - b)
            .collect();
        let restart = vecops::dot(&g, &delta) > 0.0;
        y = next.clone();
        if !restart {
            vecops::axpy(momentum, &delta, y.as_mut_slice());
        }
        x = next;
    }
    Err(OtaError::NotConverged {
        iterations: opts.max_iters,
        grad_norm: best.0,
        best: Box::new(best.1),
    })
}

/// `kappa = sqrt((1/N) sum_m ||grad f_m(w*)||^2)`.
pub fn estimate_kappa(cfg: &LossConfig, datasets: &[DeviceDataset], w_star: &ModelParams) -> Result<f64> {
    if datasets.is_empty() {
        return Err(OtaError::EmptyDeviceList);
    }
    let mut total = 0.0;
    for ds in datasets {
        total += vecops::norm_sq(&cfg.local_gradient(w_star, ds)?);
    }
    Ok((total / datasets.len() as f64).sqrt())
}

/// `safety * max ||g_m(w)||` over the supplied iterates and all devices,
/// floored at [`GMAX_FLOOR`].
pub fn estimate_gmax<'a, I>(
    cfg: &LossConfig,
    datasets: &[DeviceDataset],
    iterates: I,
    safety: f64,
) -> Result<f64>
where
    I: IntoIterator<Item = &'a ModelParams>,
{
    if datasets.is_empty() {
        return Err(OtaError::EmptyDeviceList);
    }
    let mut seen = false;
    let mut max_norm: f64 = 0.0;
    for w in iterates {
        seen = true;
        for ds in datasets {
            max_norm = max_norm.max(vecops::norm(&cfg.local_gradient(w, ds)?));
        }
    }
    if !seen {
        return Err(OtaError::EmptyProbe);
    }
    Ok((safety * max_norm).max(GMAX_FLOOR))
}

/// Runs `rounds` steps of exact centralized GD from `start` with stepsize
/// `eta` and returns `safety` times the largest local gradient norm seen.
pub fn probe_gmax(
    cfg: &LossConfig,
    datasets: &[DeviceDataset],
    start: &ModelParams,
    eta: f64,
    rounds: usize,
    safety: f64,
) -> Result<f64> {
    if datasets.is_empty() {
        return Err(OtaError::EmptyDeviceList);
    }
    let weight = 1.0 / datasets.len() as f64;
    let mut w = start.clone();
    let mut max_norm: f64 = 0.0;
    for _ in 0..=rounds {
        let mut avg = vec![0.0; cfg.dim()];
        for ds in datasets {
            let g = cfg.local_gradient(&w, ds)?;
            max_norm = max_norm.max(vecops::norm(&g));
            vecops::axpy(weight, &g, &mut avg);
        }
        vecops::axpy(-eta, &avg, w.as_mut_slice());
    }
    Ok((safety * max_norm).max(GMAX_FLOOR))
}

/// `L_m = reg + lambda_max((1/|D|) sum x~ x~^T) / 2`, where `1/2` bounds the
/// softmax Hessian factor. The top eigenvalue comes from power iteration on
/// the Gram operator applied matrix-free.
pub fn estimate_smoothness(cfg: &LossConfig, ds: &DeviceDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(OtaError::EmptyDataset(ds.device));
    }
    if !cfg.has_data_term() {
        return Ok(cfg.reg);
    }
    let n = cfg.block_len();
    let inv = 1.0 / ds.len() as f64;
    for ex in &ds.examples {
        if ex.features.len() != cfg.input_dim {
            return Err(OtaError::DimensionMismatch {
                expected: cfg.input_dim,
                found: ex.features.len(),
            });
        }
    }
    let apply = |v: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|o| *o = 0.0);
        for ex in &ds.examples {
            let s = (vecops::dot(&ex.features, &v[..n - 1]) + v[n - 1]) * inv;
            vecops::axpy(s, &ex.features, &mut out[..n - 1]);
            out[n - 1] += s;
        }
    };
    // a strictly positive start overlaps the Perron vector of this
    // non-negative-feature Gram; the tilt breaks symmetric degeneracies
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 1e-3 * (i % 7) as f64).collect();
    let vn = vecops::norm(&v);
    v.iter_mut().for_each(|x| *x /= vn);
    let mut out = vec![0.0; n];
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATION_CAP {
        apply(&v, &mut out);
        let next = vecops::dot(&v, &out);
        let on = vecops::norm(&out);
        if on == 0.0 {
            return Err(OtaError::PowerIteration(0));
        }
        for (vi, oi) in v.iter_mut().zip(&out) {
            *vi = oi / on;
        }
        if (next - lambda).abs() <= POWER_ITERATION_RTOL * next.abs() {
            return Ok(cfg.reg + 0.5 * next);
        }
        lambda = next;
    }
    Err(OtaError::PowerIteration(POWER_ITERATION_CAP))
}
