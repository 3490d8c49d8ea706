//! Training-time uncertainty modeling of feature statistics.
//!
//! For a feature map `x` with per-instance statistics `(mu, sigma)` and batch
//! spreads `(Sigma_mu, Sigma_sigma)`, the layer draws
//!
//! ```text
//! beta  = mu    + eps_mu    * Sigma_mu
//! gamma = sigma + eps_sigma * Sigma_sigma      eps_* ~ N(0, 1), shape [B, C]
//! ```
//!
//! and returns `gamma * (x - mu) / sigma + beta`. The draws are constants on
//! the tape, so gradients reach `x` through `mu`, `sigma` and the normalized
//! map. The spreads are detached by default.

use log::debug;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::stats::{self, feature_shape, DEFAULT_EPS};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsuConfig {
    /// Whether the harness inserts the layer at all.
    pub enabled: bool,
    /// Probability of applying the layer on a forward pass.
    pub p: f64,
    /// Insertion points where the layer is active.
    pub positions: Vec<usize>,
    pub eps: f64,
    pub seed: u64,
    /// Treat `Sigma_mu`, `Sigma_sigma` as constants in the backward pass.
    pub detach_uncertainty: bool,
}

impl Default for DsuConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            p: 0.5,
            positions: vec![0, 1],
            eps: DEFAULT_EPS,
            seed: 0,
            detach_uncertainty: true,
        }
    }
}

impl DsuConfig {
    pub fn validate(&self, declared: &[usize]) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!("dsu.p must be in [0, 1], got {}", self.p)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("dsu.eps must be positive, got {}", self.eps)));
        }
        if let Some(bad) = self.positions.iter().find(|p| !declared.contains(p)) {
            return Err(Error::Config(format!(
                "dsu.positions contains {bad}, model declares {declared:?}"
            )));
        }
        Ok(())
    }
}

/// Statistics used by one application of the layer, all `[B, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledStats {
    pub beta: Tensor,
    pub gamma: Tensor,
    pub eps_mu: Tensor,
    pub eps_sigma: Tensor,
}

impl SampledStats {
    pub fn sign_flips(&self) -> usize {
        self.gamma.data().iter().filter(|&&g| g < 0.0).count()
    }
}

/// Output of [`dsu_transform`].
#[derive(Clone, Copy, Debug)]
pub struct DsuVars {
    pub out: Var,
    pub beta: Var,
    pub gamma: Var,
}

/// Replace the statistics of `x` (`[B, C, H, W]` or `[B, C]`) by sampled ones
/// built from the supplied standard-normal draws (`[B, C]` each).
pub fn dsu_transform(
    tape: &mut Tape,
    x: Var,
    eps_mu: &Tensor,
    eps_sigma: &Tensor,
    eps: f64,
    detach_uncertainty: bool,
) -> Result<DsuVars> {
    let in_shape = tape.value(x).shape().to_vec();
    let [b, c, h, w] = feature_shape(&in_shape)?;
    for e in [eps_mu, eps_sigma] {
        if e.shape() != [b, c] {
            return Err(Error::Shape {
                op: "dsu",
                lhs: vec![b, c],
                rhs: e.shape().to_vec(),
            });
        }
    }
    let x4 = if in_shape.len() == 4 { x } else { tape.reshape(x, [b, c, h, w])? };

    let (mu, sigma) = stats::instance_stats_var(tape, x4, eps)?;
    let (spread_mu, spread_sigma) = if detach_uncertainty {
        let m = tape.detach(mu);
        let s = tape.detach(sigma);
        stats::batch_uncertainty_var(tape, m, s)?
    } else {
        stats::batch_uncertainty_var(tape, mu, sigma)?
    };

    let e_mu = tape.constant(eps_mu.reshape([b, c, 1, 1])?);
    let e_sigma = tape.constant(eps_sigma.reshape([b, c, 1, 1])?);
    let shift_mu = tape.mul(e_mu, spread_mu)?;
    let beta = tape.add(mu, shift_mu)?;
    let shift_sigma = tape.mul(e_sigma, spread_sigma)?;
    let gamma = tape.add(sigma, shift_sigma)?;

    let centered = tape.sub(x4, mu)?;
    let normed = tape.div(centered, sigma)?;
    let scaled = tape.mul(normed, gamma)?;
    let out = tape.add(scaled, beta)?;
    let out = if in_shape.len() == 4 { out } else { tape.reshape(out, in_shape)? };
    Ok(DsuVars { out, beta, gamma })
}

/// Deterministic transform with externally supplied draws.
pub fn dsu_forward_fixed(
    x: &Tensor,
    eps_mu: &Tensor,
    eps_sigma: &Tensor,
    eps: f64,
) -> Result<(Tensor, SampledStats)> {
    let mut tape = Tape::untraced();
    let v = tape.leaf(x.clone());
    let out = dsu_transform(&mut tape, v, eps_mu, eps_sigma, eps, true)?;
    let (b, c) = (eps_mu.shape()[0], eps_mu.shape()[1]);
    Ok((
        tape.value(out.out).clone(),
        SampledStats {
            beta: tape.value(out.beta).reshape([b, c])?,
            gamma: tape.value(out.gamma).reshape([b, c])?,
            eps_mu: eps_mu.clone(),
            eps_sigma: eps_sigma.clone(),
        },
    ))
}

/// Running counters kept by a [`DsuLayer`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DsuDiagnostics {
    pub applied: usize,
    pub skipped: usize,
    /// Sampled `gamma` entries that came out negative.
    pub sign_flips: usize,
    pub sampled: usize,
}

/// One insertion of the layer, owning its random stream.
#[derive(Clone, Debug)]
pub struct DsuLayer {
    position: usize,
    p: f64,
    eps: f64,
    detach_uncertainty: bool,
    rng: Rng,
    diagnostics: DsuDiagnostics,
}

impl DsuLayer {
    pub fn new(cfg: &DsuConfig, position: usize) -> Self {
        Self {
            position,
            p: cfg.p,
            eps: cfg.eps,
            detach_uncertainty: cfg.detach_uncertainty,
            rng: rng::stream(cfg.seed, &format!("dsu/{position}")),
            diagnostics: DsuDiagnostics::default(),
        }
    }

    pub fn position(&self) -> usize {
        self.position
    }

    pub fn diagnostics(&self) -> &DsuDiagnostics {
        &self.diagnostics
    }

    /// One gated application. The whole batch shares a single gate draw.
    pub fn forward(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> Result<Var> {
        if mode != Mode::Train {
            return Err(Error::Mode("dsu sampling at inference".into()));
        }
        let gate: f64 = self.rng.random();
        if gate >= self.p {
            self.diagnostics.skipped += 1;
            return Ok(x);
        }
        let [b, c, _, _] = feature_shape(tape.value(x).shape())?;
        let eps_mu = rng::standard_normal(&mut self.rng, [b, c]);
        let eps_sigma = rng::standard_normal(&mut self.rng, [b, c]);
        let vars = dsu_transform(tape, x, &eps_mu, &eps_sigma, self.eps, self.detach_uncertainty)?;
        let flips = tape.value(vars.gamma).data().iter().filter(|&&g| g < 0.0).count();
        if flips > 0 {
            debug!("dsu position {}: {flips} negative gamma entries", self.position);
        }
        self.diagnostics.applied += 1;
        self.diagnostics.sign_flips += flips;
        self.diagnostics.sampled += b * c;
        Ok(vars.out)
    }
}

/// Value-level forward with the layer's gate and sampling.
pub fn dsu_forward(x: &Tensor, cfg: &DsuConfig, rng: &mut Rng, mode: Mode) -> Result<Tensor> {
    if mode != Mode::Train {
        return Err(Error::Mode("dsu sampling at inference".into()));
    }
    if !(0.0..=1.0).contains(&cfg.p) {
        return Err(Error::Config(format!("dsu.p must be in [0, 1], got {}", cfg.p)));
    }
    let gate: f64 = rng.random();
    if gate >= cfg.p {
        return Ok(x.clone());
    }
    let [b, c, _, _] = feature_shape(x.shape())?;
    let eps_mu = rng::standard_normal(rng, [b, c]);
    let eps_sigma = rng::standard_normal(rng, [b, c]);
    Ok(dsu_forward_fixed(x, &eps_mu, &eps_sigma, cfg.eps)?.0)
}
