//! Self-checks of the theory module, as run by `dsu verify-theory`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{
    gaussian_w2_diag, gaussian_w2_full, implicit_reg_closed_form, implicit_reg_monte_carlo, DiagGaussian,
    RegressionInstance,
};
use crate::error::Result;
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst observed discrepancy.
    pub value: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub seed: u64,
    pub instances: usize,
    pub draws: usize,
    pub channels: usize,
    pub positions: usize,
    pub samples: usize,
    /// Upper end of the uniform range of the statistic spreads.
    pub max_spread: f64,
    pub triples: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 20,
            draws: 200_000,
            channels: 4,
            positions: 3,
            samples: 16,
            max_spread: 2.0,
            triples: 100,
        }
    }
}

pub fn random_instance(r: &mut Rng, c: usize, n: usize, samples: usize, max_spread: f64) -> RegressionInstance {
    RegressionInstance {
        w: rng::standard_normal(r, [c, n]),
        b: r.random_range(-1.0..1.0),
        xs: (0..samples)
            .map(|_| {
                let scale: f64 = r.random_range(0.5..2.0);
                let shift: f64 = r.random_range(-1.0..1.0);
                rng::standard_normal(r, [c, n]).scale(scale).map(|v| v + shift)
            })
            .collect(),
        y: rng::standard_normal(r, [samples]).into_data(),
        sigma_mu: (0..c).map(|_| r.random_range(0.0..max_spread)).collect(),
        sigma_sigma: (0..c).map(|_| r.random_range(0.0..max_spread)).collect(),
    }
}

/// Closed-form expected risk against Monte-Carlo sampling. Passes when every
/// instance agrees within the larger of 1% relative error and three
/// standard errors.
pub fn check_implicit_reg(cfg: &VerifyConfig) -> Result<Check> {
    let mut r = rng::stream(cfg.seed, "verify/instances");
    let mut worst: f64 = 0.0;
    let mut passed = true;
    for i in 0..cfg.instances {
        let inst = random_instance(&mut r, cfg.channels, cfg.positions, cfg.samples, cfg.max_spread);
        let cf = implicit_reg_closed_form(&inst)?;
        let mut mc_rng = rng::stream(cfg.seed, &format!("verify/mc/{i}"));
        let mc = implicit_reg_monte_carlo(&inst, &mut mc_rng, cfg.draws)?;
        let allowed = (0.01 * cf.total.abs()).max(3.0 * mc.std_error);
        let gap = (cf.total - mc.mean).abs();
        passed &= gap <= allowed;
        worst = worst.max(gap / allowed.max(f64::MIN_POSITIVE));
    }
    Ok(Check {
        name: "implicit_regularization".into(),
        passed,
        value: worst,
        tolerance: 1.0,
    })
}

fn random_diag(r: &mut Rng, d: usize) -> Result<DiagGaussian> {
    DiagGaussian::new(
        (0..d).map(|_| r.random_range(-3.0..3.0)).collect(),
        (0..d).map(|_| r.random_range(0.0..4.0)).collect(),
    )
}

fn diag_matrix(v: &[f64]) -> Tensor {
    let d = v.len();
    Tensor::from_fn([d, d], |i| if i / d == i % d { v[i / d] } else { 0.0 })
}

pub fn check_w2(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let mut r = rng::stream(cfg.seed, "verify/w2");
    let mut agree: f64 = 0.0;
    let mut self_dist: f64 = 0.0;
    let mut triangle: f64 = 0.0;
    for _ in 0..cfg.triples {
        let d = r.random_range(1..=6);
        let a = random_diag(&mut r, d)?;
        let b = random_diag(&mut r, d)?;
        let c = random_diag(&mut r, d)?;
        let full = gaussian_w2_full(&a.mean, &diag_matrix(&a.variance), &b.mean, &diag_matrix(&b.variance))?;
        agree = agree.max((full - gaussian_w2_diag(&a, &b)?).abs());
        self_dist = self_dist.max(gaussian_w2_diag(&a, &a)?);
        self_dist = self_dist.max(gaussian_w2_full(&a.mean, &diag_matrix(&a.variance), &a.mean, &diag_matrix(&a.variance))?);
        let excess = gaussian_w2_diag(&a, &c)? - gaussian_w2_diag(&a, &b)? - gaussian_w2_diag(&b, &c)?;
        triangle = triangle.max(excess);
    }
    let shift = gaussian_w2_diag(
        &DiagGaussian::new(vec![0.0], vec![1.0])?,
        &DiagGaussian::new(vec![2.5], vec![1.0])?,
    )?;
    Ok(vec![
        Check {
            name: "w2_full_matches_diag".into(),
            passed: agree <= 1e-10,
            value: agree,
            tolerance: 1e-10,
        },
        Check {
            name: "w2_self_distance".into(),
            passed: self_dist <= 1e-10,
            value: self_dist,
            tolerance: 1e-10,
        },
        Check {
            name: "w2_mean_shift".into(),
            passed: shift == 2.5,
            value: (shift - 2.5).abs(),
            tolerance: 0.0,
        },
        Check {
            name: "w2_triangle".into(),
            passed: triangle <= 1e-9,
            value: triangle.max(0.0),
            tolerance: 1e-9,
        },
    ])
}

pub fn verify_all(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let mut checks = vec![check_implicit_reg(cfg)?];
    checks.extend(check_w2(cfg)?);
    Ok(checks)
}
