//! Expected squared loss of a linear readout `f(x) = w·x + b` on features
//! whose channel statistics are resampled, in closed form and by sampling.
//!
//! For `x_i ∈ R^{C×N}` with channel means `mu_i`, biased channel stds
//! `sigma_i` and `z_i = (x_i - mu_i 1) / (sigma_i 1)`, the perturbed feature is
//!
//! ```text
//! x~_i = ((sigma_i + e_s ⊙ S_sigma) 1) ⊙ z_i + mu_i 1 + (e_m ⊙ S_mu) 1,   e_s, e_m ~ N(0, I_C)
//! ```
//!
//! with one draw per channel shared across the `N` positions. Expanding the
//! square and using independence of the zero-mean draws:
//!
//! ```text
//! E[R] = R + Σ_c S_mu_c^2 (w_c · 1)^2 + (1/n) Σ_j Σ_c S_sigma_c^2 (w_c · z_jc)^2
//! ```
//!
//! Each row of `z_j` has squared norm `N` (not 1) under the biased std, so
//! `(w_c · z_jc)^2` is the plain dot product.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct RegressionInstance {
    /// `[C, N]` readout weights.
    pub w: Tensor,
    pub b: f64,
    /// Samples, each `[C, N]`.
    pub xs: Vec<Tensor>,
    pub y: Vec<f64>,
    /// `[C]` spread of the channel means.
    pub sigma_mu: Vec<f64>,
    /// `[C]` spread of the channel stds.
    pub sigma_sigma: Vec<f64>,
}

impl RegressionInstance {
    pub fn channels(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn positions(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let [c, _] = match self.w.shape() {
            [c, n] => [*c, *n],
            other => {
                return Err(Error::InvalidShape {
                    op: "RegressionInstance",
                    detail: format!("w must be [C, N], got {other:?}"),
                })
            }
        };
        if self.xs.is_empty() {
            return Err(Error::Empty("regression instance has no samples".into()));
        }
        if self.xs.len() != self.y.len() {
            return Err(Error::Dimension(self.xs.len(), self.y.len()));
        }
        if let Some(x) = self.xs.iter().find(|x| x.shape() != self.w.shape()) {
            return Err(Error::Shape {
                op: "RegressionInstance",
                lhs: self.w.shape().to_vec(),
                rhs: x.shape().to_vec(),
            });
        }
        for s in [&self.sigma_mu, &self.sigma_sigma] {
            if s.len() != c {
                return Err(Error::Dimension(c, s.len()));
            }
        }
        Ok(())
    }

    fn linear(&self, x: &[f64]) -> f64 {
        self.w.data().iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.b
    }

    /// `(1/n) Σ (f(x_i) - y_i)^2`.
    pub fn empirical_risk(&self) -> f64 {
        self.xs
            .iter()
            .zip(&self.y)
            .map(|(x, y)| {
                let r = self.linear(x.data()) - y;
                r * r
            })
            .sum::<f64>()
            / self.xs.len() as f64
    }
}

/// Channel means, biased stds and the normalized map `z` of one `[C, N]`
/// sample. Zero-variance channels are an error.
pub fn channel_normalize(x: &Tensor) -> Result<(Vec<f64>, Vec<f64>, Tensor)> {
    let (c, n) = match x.shape() {
        [c, n] => (*c, *n),
        other => {
            return Err(Error::InvalidShape {
                op: "channel_normalize",
                detail: format!("expected [C, N], got {other:?}"),
            })
        }
    };
    let mut mu = Vec::with_capacity(c);
    let mut sigma = Vec::with_capacity(c);
    let mut z = Vec::with_capacity(c * n);
    for (ch, row) in x.data().chunks_exact(n).enumerate() {
        let m = row.iter().sum::<f64>() / n as f64;
        let s = (row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
        if !(s > 0.0) {
            return Err(Error::ZeroVariance(ch));
        }
        z.extend(row.iter().map(|v| (v - m) / s));
        mu.push(m);
        sigma.push(s);
    }
    Ok((mu, sigma, Tensor::new([c, n], z)?))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImplicitReg {
    pub total: f64,
    pub empirical_risk: f64,
    pub mu_term: f64,
    pub sigma_term: f64,
}

pub fn implicit_reg_closed_form(inst: &RegressionInstance) -> Result<ImplicitReg> {
    inst.validate()?;
    let (c, n) = (inst.channels(), inst.positions());
    let w = inst.w.data();

    let mu_term: f64 = (0..c)
        .map(|ch| {
            let row_sum: f64 = w[ch * n..(ch + 1) * n].iter().sum();
            inst.sigma_mu[ch].powi(2) * row_sum * row_sum
        })
        .sum();

    let mut sigma_term = 0.0;
    for x in &inst.xs {
        let (_, _, z) = channel_normalize(x)?;
        for ch in 0..c {
            let dot: f64 = w[ch * n..(ch + 1) * n]
                .iter()
                .zip(&z.data()[ch * n..(ch + 1) * n])
                .map(|(a, b)| a * b)
                .sum();
            sigma_term += inst.sigma_sigma[ch].powi(2) * dot * dot;
        }
    }
    sigma_term /= inst.xs.len() as f64;

    let empirical_risk = inst.empirical_risk();
    Ok(ImplicitReg {
        total: empirical_risk + mu_term + sigma_term,
        empirical_risk,
        mu_term,
        sigma_term,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub draws: usize,
}

pub const MIN_MC_DRAWS: usize = 1000;

/// Monte-Carlo estimate of the expected perturbed risk. Each draw rebuilds
/// every perturbed sample explicitly and averages the squared errors.
pub fn implicit_reg_monte_carlo(inst: &RegressionInstance, rng: &mut Rng, n_draws: usize) -> Result<McEstimate> {
    inst.validate()?;
    if n_draws < MIN_MC_DRAWS {
        return Err(Error::Config(format!("need at least {MIN_MC_DRAWS} draws, got {n_draws}")));
    }
    let (c, n) = (inst.channels(), inst.positions());
    let normalized = inst
        .xs
        .iter()
        .map(channel_normalize)
        .collect::<Result<Vec<_>>>()?;

    let mut eps_mu = vec![0.0; c];
    let mut eps_sigma = vec![0.0; c];
    let mut perturbed = vec![0.0; c * n];
    // Welford over per-draw values
    let (mut mean, mut m2) = (0.0, 0.0);
    for k in 0..n_draws {
        eps_mu.iter_mut().for_each(|e| *e = StandardNormal.sample(rng));
        eps_sigma.iter_mut().for_each(|e| *e = StandardNormal.sample(rng));
        let mut risk = 0.0;
        for ((mu, sigma, z), y) in normalized.iter().zip(&inst.y) {
            for ch in 0..c {
                let scale = sigma[ch] + eps_sigma[ch] * inst.sigma_sigma[ch];
                let shift = mu[ch] + eps_mu[ch] * inst.sigma_mu[ch];
                for t in 0..n {
                    perturbed[ch * n + t] = scale * z.data()[ch * n + t] + shift;
                }
            }
            let r = inst.linear(&perturbed) - y;
            risk += r * r;
        }
        risk /= inst.xs.len() as f64;
        let delta = risk - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (risk - mean);
    }
    let var = if n_draws > 1 { m2 / (n_draws - 1) as f64 } else { 0.0 };
    Ok(McEstimate {
        mean,
        std_error: (var / n_draws as f64).sqrt(),
        draws: n_draws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn instance(seed: u64, c: usize, n: usize, samples: usize, spread: f64) -> RegressionInstance {
        let mut r = rng::stream(seed, "inst");
        RegressionInstance {
            w: rng::standard_normal(&mut r, [c, n]),
            b: 0.3,
            xs: (0..samples).map(|_| rng::standard_normal(&mut r, [c, n])).collect(),
            y: rng::standard_normal(&mut r, [samples]).into_data(),
            sigma_mu: vec![spread; c],
            sigma_sigma: vec![spread; c],
        }
    }

    #[test]
    fn no_spread_means_no_penalty() {
        let inst = instance(1, 3, 4, 8, 0.0);
        let cf = implicit_reg_closed_form(&inst).unwrap();
        assert_eq!(cf.mu_term, 0.0);
        assert_eq!(cf.sigma_term, 0.0);
        assert_eq!(cf.total, cf.empirical_risk);
        let mut r = rng::stream(5, "mc");
        let mc = implicit_reg_monte_carlo(&inst, &mut r, 1000).unwrap();
        assert_eq!(mc.std_error, 0.0);
        assert!((mc.mean - cf.empirical_risk).abs() < 1e-12 * cf.empirical_risk.max(1.0));
    }

    #[test]
    fn zero_weights_mean_no_penalty() {
        let mut inst = instance(2, 3, 4, 8, 1.5);
        inst.w = Tensor::zeros([3, 4]);
        let cf = implicit_reg_closed_form(&inst).unwrap();
        assert_eq!((cf.mu_term, cf.sigma_term), (0.0, 0.0));
    }

    #[test]
    fn normalized_rows_have_norm_sqrt_n() {
        let inst = instance(3, 4, 3, 5, 1.0);
        for x in &inst.xs {
            let (_, _, z) = channel_normalize(x).unwrap();
            for row in z.data().chunks_exact(3) {
                let sq: f64 = row.iter().map(|v| v * v).sum();
                assert!((sq - 3.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_variance_channel_is_named() {
        let mut inst = instance(4, 3, 4, 2, 1.0);
        inst.xs[1] = Tensor::from_fn([3, 4], |i| if i / 4 == 2 { 1.0 } else { i as f64 });
        assert!(matches!(implicit_reg_closed_form(&inst), Err(Error::ZeroVariance(2))));
    }

    #[test]
    fn seeded_draws_repeat() {
        let inst = instance(6, 2, 2, 4, 0.8);
        let a = implicit_reg_monte_carlo(&inst, &mut rng::stream(9, "mc"), 1000).unwrap();
        let b = implicit_reg_monte_carlo(&inst, &mut rng::stream(9, "mc"), 1000).unwrap();
        assert_eq!(a, b);
        assert!(implicit_reg_monte_carlo(&inst, &mut rng::stream(9, "mc"), 10).is_err());
    }
}
