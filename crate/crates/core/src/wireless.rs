//! Deployment geometry, log-distance path loss, Rayleigh fading and noise.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{OtaError, Result};

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadioConfig {
    pub bandwidth_hz: f64,
    /// Informational only; the reference loss is fixed in dB.
    pub carrier_hz: f64,
    pub tx_power_w: f64,
    pub noise_psd_w_per_hz: f64,
    pub pathloss_exponent: f64,
    pub ref_loss_db: f64,
    pub r_max_m: f64,
    /// Distances below this are clamped up to it.
    pub min_distance_m: f64,
    /// Sample the radius uniformly instead of uniformly over the disk area.
    pub uniform_in_radius: bool,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            bandwidth_hz: 1e6,
            carrier_hz: 2.4e9,
            tx_power_w: dbm_to_watts(20.0),
            noise_psd_w_per_hz: dbm_to_watts(-174.0),
            pathloss_exponent: 2.2,
            ref_loss_db: 40.0,
            r_max_m: 200.0,
            min_distance_m: 1.0,
            uniform_in_radius: false,
        }
    }
}

impl RadioConfig {
    /// Energy per channel use, `P_tx / B`.
    pub fn energy_per_sample(&self) -> f64 {
        self.tx_power_w / self.bandwidth_hz
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bandwidth_hz", self.bandwidth_hz),
            ("carrier_hz", self.carrier_hz),
            ("tx_power_w", self.tx_power_w),
            ("noise_psd_w_per_hz", self.noise_psd_w_per_hz),
            ("pathloss_exponent", self.pathloss_exponent),
            ("r_max_m", self.r_max_m),
            ("min_distance_m", self.min_distance_m),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(OtaError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.ref_loss_db.is_finite() {
            return Err(OtaError::Config("ref_loss_db must be finite".into()));
        }
        if self.min_distance_m > self.r_max_m {
            return Err(OtaError::Config("min_distance_m exceeds r_max_m".into()));
        }
        Ok(())
    }
}

pub fn path_loss_db(r: f64, cfg: &RadioConfig) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(OtaError::InvalidInput(format!("distance must be positive, got {r}")));
    }
    Ok(cfg.ref_loss_db + 10.0 * cfg.pathloss_exponent * r.log10())
}

/// Average power gain `Lambda = 10^(-PL_dB / 10)`.
pub fn path_loss_linear(r: f64, cfg: &RadioConfig) -> Result<f64> {
    Ok(db_to_linear(-path_loss_db(r, cfg)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSite {
    pub x_m: f64,
    pub y_m: f64,
    pub distance_m: f64,
    /// Average path loss `Lambda_m` as a linear power gain.
    pub path_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub devices: Vec<DeviceSite>,
}

impl Deployment {
    /// Devices on the positive x-axis at the given distances.
    pub fn from_distances(distances: &[f64], cfg: &RadioConfig) -> Result<Self> {
        let devices = distances
            .iter()
            .map(|&r| {
                let r = r.max(cfg.min_distance_m);
                Ok(DeviceSite {
                    x_m: r,
                    y_m: 0.0,
                    distance_m: r,
                    path_gain: path_loss_linear(r, cfg)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(devices)
    }

    pub fn new(devices: Vec<DeviceSite>) -> Result<Self> {
        let dep = Self { devices };
        dep.validate()?;
        Ok(dep)
    }

    pub fn validate(&self) -> Result<()> {
        if self.devices.is_empty() {
            return Err(OtaError::EmptyDeviceList);
        }
        for (m, d) in self.devices.iter().enumerate() {
            if !(d.path_gain > 0.0 && d.path_gain.is_finite()) {
                return Err(OtaError::InvalidInput(format!(
                    "device {m} has non-positive path gain {}",
                    d.path_gain
                )));
            }
            if !(d.distance_m > 0.0) {
                return Err(OtaError::InvalidInput(format!("device {m} has non-positive distance")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn path_gains(&self) -> Vec<f64> {
        self.devices.iter().map(|d| d.path_gain).collect()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.devices.iter().map(|d| d.distance_m).collect()
    }

    /// Device indices sorted by decreasing path gain (strongest first).
    pub fn order_by_decreasing_gain(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.devices[b]
                .path_gain
                .total_cmp(&self.devices[a].path_gain)
                .then(a.cmp(&b))
        });
        idx
    }

    /// Indices of devices with `distance <= radius`.
    pub fn within(&self, radius: f64) -> Vec<usize> {
        (0..self.len())
            .filter(|&m| self.devices[m].distance_m <= radius)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let dep: Self = serde_json::from_str(text)?;
        dep.validate()?;
        Ok(dep)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| OtaError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| OtaError::io(path, e))
    }
}

/// `n` devices placed i.i.d. in the disk of radius `r_max`: `r = r_max * sqrt(U)`
/// (or `r_max * U` with `uniform_in_radius`), angle `2 pi V`.
pub fn deploy_uniform_disk<R: Rng + ?Sized>(n: usize, cfg: &RadioConfig, rng: &mut R) -> Result<Deployment> {
    if n == 0 {
        return Err(OtaError::EmptyDeviceList);
    }
    cfg.validate()?;
    let devices = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let v: f64 = rng.random();
            let raw = if cfg.uniform_in_radius {
                cfg.r_max_m * u
            } else {
                cfg.r_max_m * u.sqrt()
            };
            let r = raw.max(cfg.min_distance_m);
            let theta = 2.0 * PI * v;
            Ok(DeviceSite {
                x_m: r * theta.cos(),
                y_m: r * theta.sin(),
                distance_m: r,
                path_gain: path_loss_linear(r, cfg)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Deployment::new(devices)
}

/// One round of channel coefficients `h_m ~ CN(0, Lambda_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingDraw {
    pub coefficients: Vec<Complex64>,
}

impl FadingDraw {
    pub fn magnitudes(&self) -> Vec<f64> {
        self.coefficients.iter().map(|h| h.norm()).collect()
    }
}

fn complex_normal<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let a: f64 = rng.sample(StandardNormal);
    let b: f64 = rng.sample(StandardNormal);
    Complex64::new(s * a, s * b)
}

pub fn draw_fading<R: Rng + ?Sized>(deployment: &Deployment, rng: &mut R) -> Result<FadingDraw> {
    deployment.validate()?;
    let coefficients = deployment
        .devices
        .iter()
        .map(|d| complex_normal(d.path_gain, rng))
        .collect();
    Ok(FadingDraw { coefficients })
}

/// Receiver noise `z ~ CN(0, N_0 I)`.
pub fn draw_noise<R: Rng + ?Sized>(dim: usize, noise_psd: f64, rng: &mut R) -> Vec<Complex64> {
    (0..dim).map(|_| complex_normal(noise_psd, rng)).collect()
}

/// Real aggregation noise with variance `N_0` per dimension, so that
/// `E||z||^2 = d N_0` on the real gradient estimate.
pub fn draw_real_noise<R: Rng + ?Sized>(dim: usize, noise_psd: f64, rng: &mut R) -> Vec<f64> {
    let s = noise_psd.sqrt();
    (0..dim)
        .map(|_| s * rng.sample::<f64, _>(StandardNormal))
        .collect()
}
