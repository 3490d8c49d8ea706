//! Small dense symmetric eigenproblems (cyclic Jacobi).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Eigen-decomposition of a symmetric matrix: `a = v * diag(values) * v^T`.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vec<f64>,
    /// Eigenvectors as columns, row-major `d x d`.
    pub vectors: Vec<f64>,
    pub dim: usize,
}

fn square_dim(a: &Tensor, op: &'static str) -> Result<usize> {
    match a.shape() {
        [m, n] if m == n => Ok(*m),
        other => Err(Error::InvalidShape {
            op,
            detail: format!("expected a square matrix, got {other:?}"),
        }),
    }
}

/// `(a + a^T) / 2`.
pub fn symmetrize(a: &Tensor) -> Result<Tensor> {
    let d = square_dim(a, "symmetrize")?;
    let m = a.data();
    Ok(Tensor::from_fn([d, d], |k| {
        let (i, j) = (k / d, k % d);
        0.5 * (m[i * d + j] + m[j * d + i])
    }))
}

pub fn sym_eigen(a: &Tensor) -> Result<SymEigen> {
    let d = square_dim(a, "sym_eigen")?;
    a.ensure_finite("sym_eigen input")?;
    let mut m = symmetrize(a)?.into_data();
    let mut v = Tensor::eye(d).into_data();
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * d + j] * m[i * d + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = m[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * d + p];
                let aqq = m[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let mkp = m[k * d + p];
                    let mkq = m[k * d + q];
                    m[k * d + p] = c * mkp - s * mkq;
                    m[k * d + q] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let mpk = m[p * d + k];
                    let mqk = m[q * d + k];
                    m[p * d + k] = c * mpk - s * mqk;
                    m[q * d + k] = s * mpk + c * mqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    Ok(SymEigen {
        values: (0..d).map(|i| m[i * d + i]).collect(),
        vectors: v,
        dim: d,
    })
}

impl SymEigen {
    /// `v * diag(f(values)) * v^T`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let d = self.dim;
        let fv: Vec<f64> = self.values.iter().map(|&x| f(x)).collect();
        Tensor::from_fn([d, d], |k| {
            let (i, j) = (k / d, k % d);
            (0..d).map(|l| self.vectors[i * d + l] * fv[l] * self.vectors[j * d + l]).sum()
        })
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Principal square root of a symmetric PSD matrix; eigenvalues down to
/// `-tol` are clamped to zero, anything lower is an error.
pub fn psd_sqrt(a: &Tensor, tol: f64) -> Result<Tensor> {
    let e = sym_eigen(a)?;
    if e.min_value() < -tol {
        return Err(Error::NotPsd(e.min_value()));
    }
    Ok(e.map_values(|x| x.max(0.0).sqrt()))
}

pub fn trace(a: &Tensor) -> f64 {
    let d = a.shape()[0];
    (0..d).map(|i| a.data()[i * d + i]).sum()
}
