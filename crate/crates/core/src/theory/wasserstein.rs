use rand_distr::{Distribution, StandardNormal};

use super::linalg::{psd_sqrt, symmetrize, trace};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Largest dimension accepted by [`gaussian_w2_full`].
pub const FULL_COVARIANCE_MAX_DIM: usize = 64;

const PSD_TOL: f64 = 1e-8;

/// Gaussian with diagonal covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::Empty("gaussian with zero dimensions".into()));
        }
        if mean.len() != variance.len() {
            return Err(Error::Dimension(mean.len(), variance.len()));
        }
        if let Some(v) = variance.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::Domain {
                op: "DiagGaussian",
                detail: format!("negative variance {v}"),
            });
        }
        Ok(Self { mean, variance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// 2-Wasserstein distance between diagonal Gaussians:
/// `W^2 = |m1 - m2|^2 + sum_i (sqrt(v1_i) - sqrt(v2_i))^2`.
pub fn gaussian_w2_diag(g1: &DiagGaussian, g2: &DiagGaussian) -> Result<f64> {
    if g1.dim() != g2.dim() {
        return Err(Error::Dimension(g1.dim(), g2.dim()));
    }
    let mean_term: f64 = g1.mean.iter().zip(&g2.mean).map(|(a, b)| (a - b) * (a - b)).sum();
    let cov_term: f64 = g1
        .variance
        .iter()
        .zip(&g2.variance)
        .map(|(a, b)| {
            let d = a.sqrt() - b.sqrt();
            d * d
        })
        .sum();
    Ok((mean_term + cov_term).sqrt())
}

/// 2-Wasserstein distance between full-covariance Gaussians,
/// `W^2 = |m1 - m2|^2 + tr(S1 + S2 - 2 (S2^1/2 S1 S2^1/2)^1/2)`.
///
/// Covariances are symmetrized, eigenvalues within `1e-8` of zero are
/// clamped, and a covariance term at the round-off level of the traces is
/// treated as zero. Dimensions above [`FULL_COVARIANCE_MAX_DIM`] should use
/// [`gaussian_w2_diag`].
pub fn gaussian_w2_full(mu1: &[f64], s1: &Tensor, mu2: &[f64], s2: &Tensor) -> Result<f64> {
    let d = mu1.len();
    if mu2.len() != d {
        return Err(Error::Dimension(d, mu2.len()));
    }
    for s in [s1, s2] {
        if s.shape() != [d, d] {
            return Err(Error::Shape {
                op: "gaussian_w2_full",
                lhs: vec![d, d],
                rhs: s.shape().to_vec(),
            });
        }
    }
    if d == 0 {
        return Err(Error::Empty("gaussian with zero dimensions".into()));
    }
    if d > FULL_COVARIANCE_MAX_DIM {
        return Err(Error::InvalidShape {
            op: "gaussian_w2_full",
            detail: format!("dimension {d} exceeds {FULL_COVARIANCE_MAX_DIM}; use the diagonal form"),
        });
    }
    let s1 = symmetrize(s1)?;
    let s2 = symmetrize(s2)?;
    let root2 = psd_sqrt(&s2, PSD_TOL)?;
    // validates s1 as well
    psd_sqrt(&s1, PSD_TOL)?;
    let middle = symmetrize(&root2.matmul(&s1)?.matmul(&root2)?)?;
    let cross = psd_sqrt(&middle, PSD_TOL * (1.0 + trace(&s1).abs() + trace(&s2).abs()))?;
    let mean_term: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b) * (a - b)).sum();
    let (t1, t2) = (trace(&s1), trace(&s2));
    let mut cov_term = t1 + t2 - 2.0 * trace(&cross);
    // below round-off of the traces; the square root would amplify it
    if cov_term <= 64.0 * f64::EPSILON * (t1.abs() + t2.abs()) {
        cov_term = 0.0;
    }
    Ok((mean_term + cov_term).sqrt())
}

/// Exact 1-Wasserstein distance between two empirical distributions on the
/// line, `∫ |F_a(t) - F_b(t)| dt`. Sorts the inputs in place.
pub fn wasserstein_1d(a: &mut [f64], b: &mut [f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("wasserstein_1d needs non-empty samples".into()));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("wasserstein_1d samples".into()));
    }
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        let fa = i as f64 / na;
        let fb = j as f64 / nb;
        total += (fa - fb).abs() * (next - prev);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

/// Sliced 1-Wasserstein distance between two feature sets (`[m, d]` and
/// `[k, d]`): the average 1-D W1 over random unit directions.
pub fn empirical_domain_distance(
    feats_a: &Tensor,
    feats_b: &Tensor,
    n_projections: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let (ma, d) = match feats_a.shape() {
        [m, d] => (*m, *d),
        other => {
            return Err(Error::InvalidShape {
                op: "empirical_domain_distance",
                detail: format!("expected [m, d] features, got {other:?}"),
            })
        }
    };
    let (mb, db) = match feats_b.shape() {
        [m, d] => (*m, *d),
        other => {
            return Err(Error::InvalidShape {
                op: "empirical_domain_distance",
                detail: format!("expected [m, d] features, got {other:?}"),
            })
        }
    };
    if d != db {
        return Err(Error::Dimension(d, db));
    }
    if n_projections == 0 {
        return Err(Error::Config("need at least one projection".into()));
    }
    feats_a.ensure_finite("domain distance features")?;
    feats_b.ensure_finite("domain distance features")?;

    let mut pa = vec![0.0; ma];
    let mut pb = vec![0.0; mb];
    let mut total = 0.0;
    for _ in 0..n_projections {
        let mut dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            dir[0] = 1.0;
        } else {
            dir.iter_mut().for_each(|v| *v /= norm);
        }
        project(feats_a, &dir, &mut pa);
        project(feats_b, &dir, &mut pb);
        total += wasserstein_1d(&mut pa, &mut pb)?;
    }
    Ok(total / n_projections as f64)
}

fn project(feats: &Tensor, dir: &[f64], out: &mut [f64]) {
    let d = dir.len();
    for (o, row) in out.iter_mut().zip(feats.data().chunks_exact(d)) {
        *o = row.iter().zip(dir).map(|(a, b)| a * b).sum();
    }
}
