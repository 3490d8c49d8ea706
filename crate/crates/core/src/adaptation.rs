//! Shift regions of training-domain feature statistics and the inference-time
//! calibration that pulls outlying test statistics back toward them.
//!
//! A region per channel is `mu_bar ± n * Sigma_mu_bar` for the mean and
//! `sigma_bar ± n * Sigma_sigma_bar` for the standard deviation. A test
//! statistic outside its interval is moved toward the centre by `omega` times
//! its excess distance:
//!
//! ```text
//! beta = mu + omega * sign(mu_bar - mu) * max(|mu_bar - mu| - n * Sigma_mu_bar, 0)
//! ```
//!
//! and likewise `gamma` for `sigma`. The feature is then re-styled as
//! `gamma * (x - mu) / sigma + beta`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{feature_shape, instance_stats, InstanceStats};
use crate::tensor::Tensor;

pub const DEFAULT_SCOPE: f64 = 1.0;
pub const DEFAULT_OMEGA: f64 = 0.5;

/// Per-channel single-pass mean and squared-deviation accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Welford {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    pub fn new(channels: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; channels],
            m2: vec![0.0; channels],
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn push(&mut self, row: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(row) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&mut self, other: &Welford) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for c in 0..self.mean.len() {
            let delta = other.mean[c] - self.mean[c];
            self.mean[c] += delta * nb / n;
            self.m2[c] += other.m2[c] + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Biased standard deviation per channel.
    pub fn std(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; self.mean.len()];
        }
        self.m2
            .iter()
            .map(|s| (s / self.count as f64).max(0.0).sqrt())
            .collect()
    }
}

/// Accumulates instance means and standard deviations at one position.
#[derive(Clone, Debug, PartialEq)]
pub struct StatAccumulator {
    pub mu: Welford,
    pub sigma: Welford,
}

impl StatAccumulator {
    pub fn new(channels: usize) -> Self {
        Self {
            mu: Welford::new(channels),
            sigma: Welford::new(channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.mu.mean.len()
    }

    pub fn push(&mut self, stats: &InstanceStats) -> Result<()> {
        let c = stats.channels();
        if c != self.channels() {
            return Err(Error::Dimension(self.channels(), c));
        }
        for (m, s) in stats.mu.data().chunks_exact(c).zip(stats.sigma.data().chunks_exact(c)) {
            self.mu.push(m);
            self.sigma.push(s);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &StatAccumulator) -> Result<()> {
        if other.channels() != self.channels() {
            return Err(Error::Dimension(self.channels(), other.channels()));
        }
        self.mu.merge(&other.mu);
        self.sigma.merge(&other.sigma);
        Ok(())
    }

    pub fn finish(&self, position: usize, n: f64, omega: f64) -> Result<ShiftRegion> {
        if self.mu.count == 0 {
            return Err(Error::Empty(format!("no training instances at position {position}")));
        }
        let degenerate = self.mu.count < 2;
        let zeros = vec![0.0; self.channels()];
        let region = ShiftRegion {
            position,
            n,
            omega,
            count: self.mu.count,
            degenerate,
            mu_bar: self.mu.mean.clone(),
            sigma_bar: self.sigma.mean.clone(),
            sigma_mu_bar: if degenerate { zeros.clone() } else { self.mu.std() },
            sigma_sigma_bar: if degenerate { zeros } else { self.sigma.std() },
        };
        region.validate()?;
        Ok(region)
    }
}

/// Summary of the training-domain statistic distribution at one position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftRegion {
    pub position: usize,
    /// Region half-width in units of the statistic spread.
    pub n: f64,
    /// Calibration strength in `[0, 1]`.
    pub omega: f64,
    pub count: u64,
    pub degenerate: bool,
    pub mu_bar: Vec<f64>,
    pub sigma_bar: Vec<f64>,
    pub sigma_mu_bar: Vec<f64>,
    pub sigma_sigma_bar: Vec<f64>,
}

impl ShiftRegion {
    pub fn channels(&self) -> usize {
        self.mu_bar.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.mu_bar.len();
        for len in [self.sigma_bar.len(), self.sigma_mu_bar.len(), self.sigma_sigma_bar.len()] {
            if len != c {
                return Err(Error::Dimension(c, len));
            }
        }
        if !(self.n >= 0.0) {
            return Err(Error::Config(format!("region scope n must be >= 0, got {}", self.n)));
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(Error::Config(format!("omega must be in [0, 1], got {}", self.omega)));
        }
        if self
            .sigma_mu_bar
            .iter()
            .chain(&self.sigma_sigma_bar)
            .any(|&s| !(s >= 0.0))
        {
            return Err(Error::Config("region spreads must be non-negative".into()));
        }
        Ok(())
    }

    /// Same region with a different scope and strength.
    pub fn with_params(&self, n: f64, omega: f64) -> Result<Self> {
        let r = Self {
            n,
            omega,
            ..self.clone()
        };
        r.validate()?;
        Ok(r)
    }

    /// `[lower, upper]` of the mean interval at channel `c`.
    pub fn mu_interval(&self, c: usize) -> (f64, f64) {
        let half = self.n * self.sigma_mu_bar[c];
        (self.mu_bar[c] - half, self.mu_bar[c] + half)
    }

    pub fn sigma_interval(&self, c: usize) -> (f64, f64) {
        let half = self.n * self.sigma_sigma_bar[c];
        (self.sigma_bar[c] - half, self.sigma_bar[c] + half)
    }

    /// Calibrated mean for an observed instance mean at channel `c`.
    pub fn calibrate_mu(&self, c: usize, mu: f64) -> (f64, bool) {
        pull(mu, self.mu_bar[c], self.n * self.sigma_mu_bar[c], self.omega)
    }

    pub fn calibrate_sigma(&self, c: usize, sigma: f64) -> (f64, bool) {
        pull(sigma, self.sigma_bar[c], self.n * self.sigma_sigma_bar[c], self.omega)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Returns the calibrated value and whether the clamp fired.
fn pull(value: f64, centre: f64, half_width: f64, omega: f64) -> (f64, bool) {
    let gap = centre - value;
    let excess = (gap.abs() - half_width).max(0.0);
    (value + omega * sign(gap) * excess, excess > 0.0)
}

/// Fit a region from a stream of feature batches (`[B, C, H, W]` or `[B, C]`)
/// taken at one position with sampling disabled.
pub fn fit_shift_region<I>(batches: I, position: usize, n: f64, omega: f64, eps: f64) -> Result<ShiftRegion>
where
    I: IntoIterator<Item = Tensor>,
{
    let mut acc: Option<StatAccumulator> = None;
    for batch in batches {
        let stats = instance_stats(&batch, eps)?;
        acc.get_or_insert_with(|| StatAccumulator::new(stats.channels()))
            .push(&stats)?;
    }
    acc.ok_or_else(|| Error::Empty(format!("empty training stream at position {position}")))?
        .finish(position, n, omega)
}

/// Per-channel counts of how often the clamp fired.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationTelemetry {
    pub instances: usize,
    pub mu_fired: Vec<usize>,
    pub sigma_fired: Vec<usize>,
}

impl CalibrationTelemetry {
    pub fn new(channels: usize) -> Self {
        Self {
            instances: 0,
            mu_fired: vec![0; channels],
            sigma_fired: vec![0; channels],
        }
    }

    pub fn absorb(&mut self, other: &CalibrationTelemetry) {
        if self.mu_fired.is_empty() {
            self.mu_fired = vec![0; other.mu_fired.len()];
            self.sigma_fired = vec![0; other.sigma_fired.len()];
        }
        self.instances += other.instances;
        for (a, b) in self.mu_fired.iter_mut().zip(&other.mu_fired) {
            *a += b;
        }
        for (a, b) in self.sigma_fired.iter_mut().zip(&other.sigma_fired) {
            *a += b;
        }
    }

    /// Fraction of channel statistics (both mu and sigma) that were outside
    /// the region.
    pub fn fired_fraction(&self) -> f64 {
        let total = 2 * self.instances * self.mu_fired.len();
        if total == 0 {
            return 0.0;
        }
        let fired: usize = self.mu_fired.iter().chain(&self.sigma_fired).sum();
        fired as f64 / total as f64
    }
}

#[derive(Clone, Debug)]
pub struct Calibrated {
    pub output: Tensor,
    /// Calibrated statistics `(beta, gamma)`, `[B, C]` each.
    pub beta: Tensor,
    pub gamma: Tensor,
    pub telemetry: CalibrationTelemetry,
}

/// Apply the calibration to a feature batch. Degenerate regions are used as
/// is (zero spread, so every off-centre statistic is pulled).
pub fn calibrate(x: &Tensor, region: &ShiftRegion, eps: f64) -> Result<Calibrated> {
    let [b, c, h, w] = feature_shape(x.shape())?;
    if c != region.channels() {
        return Err(Error::Dimension(region.channels(), c));
    }
    let stats = instance_stats(x, eps)?;
    let hw = h * w;
    let mut out = x.clone();
    let mut beta = Vec::with_capacity(b * c);
    let mut gamma = Vec::with_capacity(b * c);
    let mut telemetry = CalibrationTelemetry::new(c);
    telemetry.instances = b;
    for (i, plane) in out.data_mut().chunks_exact_mut(hw).enumerate() {
        let ch = i % c;
        let mu = stats.mu.data()[i];
        let sigma = stats.sigma.data()[i];
        let (new_mu, fired_mu) = region.calibrate_mu(ch, mu);
        let (new_sigma, fired_sigma) = region.calibrate_sigma(ch, sigma);
        telemetry.mu_fired[ch] += usize::from(fired_mu);
        telemetry.sigma_fired[ch] += usize::from(fired_sigma);
        beta.push(new_mu);
        gamma.push(new_sigma);
        if fired_mu || fired_sigma {
            for v in plane.iter_mut() {
                *v = new_sigma * ((*v - mu) / sigma) + new_mu;
            }
        }
    }
    Ok(Calibrated {
        output: out,
        beta: Tensor::new([b, c], beta)?,
        gamma: Tensor::new([b, c], gamma)?,
        telemetry,
    })
}

/// Like [`calibrate`], but refuses degenerate regions.
pub fn calibrate_strict(x: &Tensor, region: &ShiftRegion, eps: f64) -> Result<Calibrated> {
    if region.degenerate {
        return Err(Error::DegenerateRegion(region.position));
    }
    calibrate(x, region, eps)
}
