// SPDX-License-Identifier: Apache-2.0

//! The linear optimal-transport probability path between a standard Gaussian
//! at `t = 0` and a (slightly blurred) data distribution at `t = 1`.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datasets::PointCloud;
use crate::error::{domain, Result};

/// Noise schedule constants of the path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    pub sigma_min: f64,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self { sigma_min: 1e-3 }
    }
}

impl PathConfig {
    /// `sigma_min` must lie in `[0, 1)`. Zero is accepted for analytic checks;
    /// the conditional velocity is then undefined at `t = 1`.
    pub fn new(sigma_min: f64) -> Result<Self> {
        let cfg = Self { sigma_min };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.sigma_min) {
            return Err(domain(format!(
                "sigma_min must be in [0, 1), got {}",
                self.sigma_min
            )));
        }
        Ok(())
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(domain(format!("time {t} outside [0, 1]")));
    }
    Ok(())
}

/// `σ_t = 1 − (1 − σ_min) t`.
pub fn sigma_t(cfg: &PathConfig, t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(1.0 - (1.0 - cfg.sigma_min) * t)
}

/// `x_t = σ_t x0 + t x_data`.
pub fn interpolate(cfg: &PathConfig, x0: &[f64], x_data: &[f64], t: f64) -> Result<Vec<f64>> {
    if x0.len() != x_data.len() {
        return Err(domain(format!(
            "dimension mismatch: {} vs {}",
            x0.len(),
            x_data.len()
        )));
    }
    let sigma = sigma_t(cfg, t)?;
    Ok(x0
        .iter()
        .zip(x_data)
        .map(|(a, b)| sigma * a + t * b)
        .collect())
}

/// Conditional OT velocity `(x_data − (1 − σ_min) x) / σ_t`.
pub fn cond_velocity(cfg: &PathConfig, x: &[f64], x_data: &[f64], t: f64) -> Result<Vec<f64>> {
    if x.len() != x_data.len() {
        return Err(domain(format!(
            "dimension mismatch: {} vs {}",
            x.len(),
            x_data.len()
        )));
    }
    let denom = sigma_t(cfg, t)?;
    if denom <= 0.0 {
        return Err(domain("conditional velocity undefined at sigma_t = 0"));
    }
    let k = 1.0 - cfg.sigma_min;
    Ok(x.iter()
        .zip(x_data)
        .map(|(xi, di)| (di - k * xi) / denom)
        .collect())
}

/// One draw of the coupled tuple used by the CFM objective.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledSample {
    pub x0: Vec<f64>,
    pub x_data: Vec<f64>,
    pub t: f64,
    pub x_t: Vec<f64>,
    pub v_cond: Vec<f64>,
}

/// Standard normal vector of length `dim`. Uses the ziggurat sampler of
/// `rand_distr::StandardNormal`; the stream is fully determined by `rng`.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Draws `(t, x0, x_data)` in that order and builds the coupled sample.
pub fn sample_coupled<R: Rng + ?Sized>(
    cfg: &PathConfig,
    data: &PointCloud,
    rng: &mut R,
) -> Result<CoupledSample> {
    let t: f64 = rng.random();
    let x0 = standard_normal(rng, data.dim());
    let x_data = data.sample(rng).to_vec();
    let x_t = interpolate(cfg, &x0, &x_data, t)?;
    let v_cond = cond_velocity(cfg, &x_t, &x_data, t)?;
    Ok(CoupledSample {
        x0,
        x_data,
        t,
        x_t,
        v_cond,
    })
}

/// A draw `x_s ~ p_s`: noise first, then a data point.
pub fn sample_ps<R: Rng + ?Sized>(
    cfg: &PathConfig,
    data: &PointCloud,
    rng: &mut R,
    s: f64,
) -> Result<Vec<f64>> {
    check_time(s)?;
    let x0 = standard_normal(rng, data.dim());
    let x_data = data.sample(rng);
    interpolate(cfg, &x0, x_data, s)
}

/// Source of points distributed according to a marginal `p_s` at a given time.
pub trait StateSampler {
    fn dim(&self) -> usize;
    fn sample_at<R: Rng + ?Sized>(&self, s: f64, rng: &mut R) -> Result<Vec<f64>>;

    /// Fills one row per requested time, in order.
    fn sample_batch<R: Rng + ?Sized>(&self, times: &[f64], rng: &mut R) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((times.len(), self.dim()));
        for (mut row, &s) in out.rows_mut().into_iter().zip(times) {
            let x = self.sample_at(s, rng)?;
            row.assign(&ndarray::ArrayView1::from(&x));
        }
        Ok(out)
    }
}

/// `p_s` induced by the OT path over an empirical point cloud.
#[derive(Clone, Debug)]
pub struct PathSampler<'a> {
    pub cfg: PathConfig,
    pub data: &'a PointCloud,
}

impl StateSampler for PathSampler<'_> {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn sample_at<R: Rng + ?Sized>(&self, s: f64, rng: &mut R) -> Result<Vec<f64>> {
        sample_ps(&self.cfg, self.data, rng, s)
    }
}
