use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DeviceDataset, LabeledExample, MNIST_PIXELS, NUM_CLASSES};
use crate::error::{OtaError, Result};

/// Gaussian class blobs in `[0, 1]^input_dim`, standing in for MNIST when
/// no IDX files are available.
///
/// Every class prototype shares a common "stroke" pattern at
/// `common_level` and adds its own pattern at `class_level`; samples add
/// i.i.d. Gaussian noise and clip back to the pixel range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub input_dim: usize,
    pub num_classes: usize,
    pub common_fraction: f64,
    pub common_level: f64,
    pub class_fraction: f64,
    pub class_level: f64,
    pub noise_std: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            input_dim: MNIST_PIXELS,
            num_classes: NUM_CLASSES,
            common_fraction: 0.25,
            common_level: 0.6,
            class_fraction: 0.15,
            class_level: 0.3,
            noise_std: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSource {
    spec: SyntheticSpec,
    prototypes: Vec<Vec<f64>>,
}

impl SyntheticSource {
    pub fn new<R: Rng + ?Sized>(spec: SyntheticSpec, rng: &mut R) -> Result<Self> {
        if spec.input_dim == 0 || spec.num_classes == 0 {
            return Err(OtaError::InvalidInput("synthetic source needs classes and features".into()));
        }
        if !(spec.noise_std >= 0.0) {
            return Err(OtaError::InvalidInput("noise_std must be non-negative".into()));
        }
        let common: Vec<bool> = (0..spec.input_dim)
            .map(|_| rng.random::<f64>() < spec.common_fraction)
            .collect();
        let prototypes = (0..spec.num_classes)
            .map(|_| {
                common
                    .iter()
                    .map(|&on| {
                        let base = if on { spec.common_level } else { 0.0 };
                        let own = if rng.random::<f64>() < spec.class_fraction {
                            spec.class_level
                        } else {
                            0.0
                        };
                        (base + own).clamp(0.0, 1.0)
                    })
                    .collect()
            })
            .collect();
        Ok(Self { spec, prototypes })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn prototype(&self, class: usize) -> &[f64] {
        &self.prototypes[class]
    }

    pub fn sample<R: Rng + ?Sized>(&self, class: usize, rng: &mut R) -> LabeledExample {
        let features = self.prototypes[class]
            .iter()
            .map(|&mu| {
                let z: f64 = rng.sample(StandardNormal);
                (mu + self.spec.noise_std * z).clamp(0.0, 1.0)
            })
            .collect();
        LabeledExample::new(features, class)
    }

    /// Class-balanced set with `per_class` examples of every class, grouped by class.
    pub fn balanced<R: Rng + ?Sized>(&self, per_class: usize, rng: &mut R) -> Vec<LabeledExample> {
        (0..self.spec.num_classes)
            .flat_map(|c| (0..per_class).map(move |_| c))
            .map(|c| self.sample(c, rng))
            .collect()
    }
}

/// Draws `per_class` examples of every class `0..num_classes` from `pool`
/// without replacement.
pub fn sample_pool<R: Rng + ?Sized>(
    pool: &[LabeledExample],
    num_classes: usize,
    per_class: usize,
    rng: &mut R,
) -> Result<Vec<LabeledExample>> {
    let by_class = split_by_class(pool, num_classes)?;
    let mut out = Vec::with_capacity(num_classes * per_class);
    for (c, members) in by_class.iter().enumerate() {
        if members.len() < per_class {
            return Err(OtaError::InvalidInput(format!(
                "class {c} has {} examples, {per_class} requested",
                members.len()
            )));
        }
        out.extend(members.choose_multiple(rng, per_class).map(|&i| pool[i].clone()));
    }
    Ok(out)
}

/// Indices of `pool` grouped by label. Every class in `0..num_classes`
/// must be present.
pub fn split_by_class(pool: &[LabeledExample], num_classes: usize) -> Result<Vec<Vec<usize>>> {
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, ex) in pool.iter().enumerate() {
        match by_class.get_mut(ex.label) {
            Some(bucket) => bucket.push(i),
            None => {
                return Err(OtaError::InvalidInput(format!(
                    "label {} outside [0, {num_classes})",
                    ex.label
                )))
            }
        }
    }
    if let Some(c) = by_class.iter().position(|b| b.is_empty()) {
        return Err(OtaError::MissingClass(c));
    }
    Ok(by_class)
}

/// Device `m` receives only examples of class `m`. With `per_class` set,
/// that many are drawn without replacement from the class members;
/// otherwise the device takes all of them in pool order.
pub fn partition_one_class_per_device<R: Rng + ?Sized>(
    pool: &[LabeledExample],
    num_devices: usize,
    per_class: Option<usize>,
    rng: &mut R,
) -> Result<Vec<DeviceDataset>> {
    if num_devices == 0 {
        return Err(OtaError::EmptyDeviceList);
    }
    let by_class = split_by_class(pool, num_devices)?;
    by_class
        .iter()
        .enumerate()
        .map(|(m, members)| {
            let chosen: Vec<usize> = match per_class {
                None => members.clone(),
                Some(k) if k <= members.len() => members.choose_multiple(rng, k).copied().collect(),
                Some(k) => {
                    return Err(OtaError::InvalidInput(format!(
                        "class {m} has {} examples, {k} requested",
                        members.len()
                    )))
                }
            };
            DeviceDataset::new(m, chosen.into_iter().map(|i| pool[i].clone()).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_spec() -> SyntheticSpec {
        SyntheticSpec {
            input_dim: 20,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn default_partition_is_ten_single_label_devices() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let src = SyntheticSource::new(tiny_spec(), &mut rng).unwrap();
        let pool = src.balanced(10, &mut rng);
        let devices = partition_one_class_per_device(&pool, 10, None, &mut rng).unwrap();
        assert_eq!(devices.len(), 10);
        assert_eq!(devices.iter().map(|d| d.len()).sum::<usize>(), 100);
        for (m, d) in devices.iter().enumerate() {
            assert_eq!(d.device, m);
            assert_eq!(d.len(), 10);
            assert_eq!(d.labels(), vec![m]);
        }
    }

    #[test]
    fn singleton_pool_gives_singleton_devices() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src = SyntheticSource::new(tiny_spec(), &mut rng).unwrap();
        let pool = src.balanced(1, &mut rng);
        let devices = partition_one_class_per_device(&pool, 10, Some(1), &mut rng).unwrap();
        assert!(devices.iter().all(|d| d.len() == 1));
    }

    #[test]
    fn seeded_draw_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src = SyntheticSource::new(tiny_spec(), &mut rng).unwrap();
        let pool = src.balanced(30, &mut rng);
        let a = partition_one_class_per_device(&pool, 10, Some(10), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = partition_one_class_per_device(&pool, 10, Some(10), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let c = partition_one_class_per_device(&pool, 10, Some(10), &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn missing_class_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let src = SyntheticSource::new(tiny_spec(), &mut rng).unwrap();
        let pool: Vec<_> = src.balanced(2, &mut rng).into_iter().filter(|e| e.label != 7).collect();
        assert!(matches!(
            partition_one_class_per_device(&pool, 10, None, &mut rng),
            Err(OtaError::MissingClass(7))
        ));
    }

    #[test]
    fn synthetic_features_stay_in_pixel_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src = SyntheticSource::new(SyntheticSpec::default(), &mut rng).unwrap();
        let ex = src.sample(3, &mut rng);
        assert_eq!(ex.features.len(), 784);
        assert!(ex.features.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
