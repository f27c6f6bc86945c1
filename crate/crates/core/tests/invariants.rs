use otafl::bound::{convergence_bound, BoundConstants};
use otafl::design::{lambert_w0, min_variance_prescalers, vanilla_ota_round, zero_bias_prescalers};
use otafl::harness::{ranks, rounds_from_budget};
use otafl::model::{estimate_smoothness, vecops, DeviceDataset, LabeledExample, LossConfig, ModelParams};
use otafl::ota::{alpha_m, LinkBudget};
use otafl::wireless::{Deployment, FadingDraw, RadioConfig};
use num_complex::Complex64;
use proptest::prelude::*;

const CLASSES: usize = 3;
const INPUT: usize = 4;

fn cfg() -> LossConfig {
    LossConfig::new(0.01, CLASSES, INPUT).unwrap()
}

fn dataset() -> impl Strategy<Value = DeviceDataset> {
    prop::collection::vec((prop::collection::vec(0.0..1.0f64, INPUT), 0..CLASSES), 1..6).prop_map(|ex| {
        DeviceDataset::new(0, ex.into_iter().map(|(f, l)| LabeledExample::new(f, l)).collect()).unwrap()
    })
}

fn params() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, CLASSES * (INPUT + 1))
}

fn distances(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1.0..200.0f64, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_matches_finite_differences(ds in dataset(), w in params()) {
        let c = cfg();
        let w = ModelParams::from_vec(&c, w).unwrap();
        let g = c.local_gradient(&w, &ds).unwrap();
        let h = 1e-5;
        for k in 0..w.len() {
            let mut plus = w.clone();
            plus.as_mut_slice()[k] += h;
            let mut minus = w.clone();
            minus.as_mut_slice()[k] -= h;
            let fd = (c.local_loss(&plus, &ds).unwrap() - c.local_loss(&minus, &ds).unwrap()) / (2.0 * h);
            prop_assert!((fd - g[k]).abs() <= 1e-4 * g[k].abs().max(1e-3), "coord {}: {} vs {}", k, fd, g[k]);
        }
    }

    #[test]
    fn strong_convexity_and_smoothness_witnesses(ds in dataset(), a in params(), b in params()) {
        let c = cfg();
        let (a, b) = (ModelParams::from_vec(&c, a).unwrap(), ModelParams::from_vec(&c, b).unwrap());
        let ga = c.local_gradient(&a, &ds).unwrap();
        let gb = c.local_gradient(&b, &ds).unwrap();
        let dg: Vec<f64> = ga.iter().zip(&gb).map(|(x, y)| x - y).collect();
        let dw: Vec<f64> = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x - y).collect();
        let dist2 = vecops::norm_sq(&dw);
        prop_assert!(vecops::dot(&dg, &dw) >= 0.01 * dist2 * (1.0 - 1e-9));
        let l = estimate_smoothness(&c, &ds).unwrap();
        prop_assert!(vecops::norm(&dg) <= l * dist2.sqrt() * (1.0 + 1e-9));
    }

    #[test]
    fn lambert_residual(x in prop_oneof![-0.367_879_441_171_442_3..0.0f64, 0.0..1e6f64]) {
        let w = lambert_w0(x).unwrap();
        prop_assert!(w >= -1.0);
        prop_assert!((w * w.exp() - x).abs() <= 1e-12 * x.abs().max(1.0));
    }

    #[test]
    fn designs_on_random_deployments(r in distances(2..12), g_max in 0.1..50.0f64) {
        let dep = Deployment::from_distances(&r, &RadioConfig::default()).unwrap();
        let b = LinkBudget::new(7850, 1e-7, g_max).unwrap();
        let n = r.len() as f64;
        let zb = zero_bias_prescalers(&dep, b).unwrap();
        let mv = min_variance_prescalers(&dep, b).unwrap();
        let worst = mv.alphas.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(zb.participation.iter().all(|p| (p - 1.0 / n).abs() <= 1e-9));
        prop_assert!((zb.alpha - n * worst).abs() <= 1e-12 * zb.alpha);
        prop_assert!(zb.alpha <= mv.alpha * (1.0 + 1e-12));
        prop_assert!((mv.participation.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for m in 0..r.len() {
            prop_assert!(zb.gammas[m] <= mv.gammas[m] * (1.0 + 1e-7));
            let l = dep.devices[m].path_gain;
            let g = mv.gammas[m];
            let h = 1e-4 * g;
            let (lo, mid, hi) = (alpha_m(g - h, l, &b), alpha_m(g, l, &b), alpha_m(g + h, l, &b));
            prop_assert!((hi - lo).abs() / (2.0 * h) * g <= 1e-6 * mid);
            prop_assert!(hi - 2.0 * mid + lo < 0.0);
        }
    }

    #[test]
    fn noiseless_vanilla_recovers_the_average(
        grads in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 3), 1..8),
        mags in prop::collection::vec(1e-6..1e-3f64, 8),
    ) {
        let n = grads.len();
        let b = LinkBudget::new(3, 1e-7, 10.0).unwrap();
        let fading = FadingDraw { coefficients: mags[..n].iter().map(|&v| Complex64::new(v, 0.0)).collect() };
        let all: Vec<usize> = (0..n).collect();
        let out = vanilla_ota_round(&grads, &fading, &[0.0; 3], &b, &all).unwrap().unwrap();
        for k in 0..3 {
            let mean = grads.iter().map(|g| g[k]).sum::<f64>() / n as f64;
            prop_assert!((out.estimate[k] - mean).abs() <= 1e-14);
        }
    }

    #[test]
    fn bound_is_non_increasing_in_rounds(r in distances(2..6), kappa in 0.0..5.0f64, frac in 0.01..1.0f64, t in 0usize..2000) {
        let dep = Deployment::from_distances(&r, &RadioConfig::default()).unwrap();
        let b = LinkBudget::new(100, 1e-7, 2.0).unwrap();
        let set = min_variance_prescalers(&dep, b).unwrap();
        let n = r.len();
        let mut c = BoundConstants {
            num_devices: n, dim: 100, g_max: 2.0, kappa, energy_per_sample: 1e-7, noise_psd: 4e-21, eta: 0.0,
            strong_convexity: vec![0.01; n], smoothness: (0..n).map(|m| 1.0 + m as f64).collect(),
            e0: 3.0, e0_surrogate: Some(2.0),
        };
        let l = c.weighted_smoothness(&set.participation).unwrap();
        c.eta = frac * 2.0 / (0.01 + l);
        let a = convergence_bound(t, &c, &set).unwrap();
        let z = convergence_bound(t + 1, &c, &set).unwrap();
        prop_assert!(z.total <= a.total);
    }

    #[test]
    fn round_count_formula(budget_ms in 1.0..1e4f64, dim in 1usize..20_000) {
        let bw = 1e6;
        match rounds_from_budget(budget_ms, bw, dim) {
            Ok(t) => {
                prop_assert!(t >= 1);
                prop_assert!(t as f64 * dim as f64 <= budget_ms * 1e3 * (1.0 + 1e-12));
                prop_assert!((t + 1) as f64 * dim as f64 > budget_ms * 1e3);
            }
            Err(_) => prop_assert!((dim as f64) > budget_ms * 1e3 * (1.0 - 1e-12)),
        }
    }

    #[test]
    fn ranks_are_a_permutation_average(v in prop::collection::vec(-5i32..5, 1..30)) {
        let x: Vec<f64> = v.iter().map(|&a| a as f64).collect();
        let r = ranks(&x);
        let n = x.len() as f64;
        prop_assert!((r.iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
        for i in 0..x.len() {
            for j in 0..x.len() {
                if x[i] < x[j] { prop_assert!(r[i] < r[j]); }
                if x[i] == x[j] { prop_assert_eq!(r[i], r[j]); }
            }
        }
    }
}
