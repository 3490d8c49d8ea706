//! Per-instance channel statistics and their batch-level spread.
//!
//! Features are `[B, C, H, W]`; a `[B, C]` input is read as `[B, C, 1, 1]`.
//! All variances are biased (divide by the count).

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-6;

/// Per-instance, per-channel mean and standard deviation, both `[B, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceStats {
    pub mu: Tensor,
    pub sigma: Tensor,
}

impl InstanceStats {
    pub fn batch(&self) -> usize {
        self.mu.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.mu.shape()[1]
    }
}

/// Per-channel standard deviation of the instance statistics across the
/// batch, both `[C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchUncertainty {
    pub sigma_mu: Tensor,
    pub sigma_sigma: Tensor,
}

/// View a feature tensor as `[B, C, H, W]`.
pub fn as_feature_map(x: &Tensor) -> Result<Tensor> {
    match x.shape() {
        [_, _, _, _] => Ok(x.clone()),
        [b, c] => x.reshape([*b, *c, 1, 1]),
        other => Err(Error::InvalidShape {
            op: "instance_stats",
            detail: format!("expected [B, C, H, W] or [B, C], got {other:?}"),
        }),
    }
}

pub(crate) fn feature_shape(shape: &[usize]) -> Result<[usize; 4]> {
    match shape {
        [b, c, h, w] => Ok([*b, *c, *h, *w]),
        [b, c] => Ok([*b, *c, 1, 1]),
        other => Err(Error::InvalidShape {
            op: "instance_stats",
            detail: format!("expected [B, C, H, W] or [B, C], got {other:?}"),
        }),
    }
}

/// `mu = mean over H×W`, `sigma = sqrt(var + eps)`.
pub fn instance_stats(x: &Tensor, eps: f64) -> Result<InstanceStats> {
    if !(eps >= 0.0) {
        return Err(Error::Domain {
            op: "instance_stats",
            detail: format!("eps must be non-negative, got {eps}"),
        });
    }
    x.ensure_finite("instance_stats input")?;
    let [b, c, h, w] = feature_shape(x.shape())?;
    let hw = h * w;
    let mut mu = Vec::with_capacity(b * c);
    let mut sigma = Vec::with_capacity(b * c);
    for plane in x.data().chunks_exact(hw) {
        let m = plane.iter().sum::<f64>() / hw as f64;
        let v = plane.iter().map(|&u| (u - m) * (u - m)).sum::<f64>() / hw as f64;
        mu.push(m);
        sigma.push((v + eps).sqrt());
    }
    Ok(InstanceStats {
        mu: Tensor::new([b, c], mu)?,
        sigma: Tensor::new([b, c], sigma)?,
    })
}

/// Spread of instance statistics over the batch axis.
pub fn batch_uncertainty(stats: &InstanceStats) -> Result<BatchUncertainty> {
    stats.mu.ensure_finite("batch_uncertainty mu")?;
    stats.sigma.ensure_finite("batch_uncertainty sigma")?;
    let spread = |t: &Tensor| -> Result<Tensor> {
        let c = t.shape()[1];
        t.var_axes(&[0])?.map(|v| v.max(0.0).sqrt()).reshape([c])
    };
    Ok(BatchUncertainty {
        sigma_mu: spread(&stats.mu)?,
        sigma_sigma: spread(&stats.sigma)?,
    })
}

/// Differentiable statistics on a tape: returns `(mu, sigma)` shaped
/// `[B, C, 1, 1]` for a `[B, C, H, W]` variable.
pub fn instance_stats_var(tape: &mut Tape, x: Var, eps: f64) -> Result<(Var, Var)> {
    if tape.value(x).rank() != 4 {
        return Err(Error::InvalidShape {
            op: "instance_stats",
            detail: format!("expected [B, C, H, W], got {:?}", tape.value(x).shape()),
        });
    }
    let mu = tape.mean_axes(x, &[2, 3])?;
    let var = tape.var_axes(x, &[2, 3])?;
    let var = tape.add_scalar(var, eps)?;
    let sigma = tape.sqrt(var)?;
    Ok((mu, sigma))
}

/// Differentiable batch spread of `[B, C, 1, 1]` statistics, shaped
/// `[1, C, 1, 1]`.
pub fn batch_uncertainty_var(tape: &mut Tape, mu: Var, sigma: Var) -> Result<(Var, Var)> {
    let vm = tape.var_axes(mu, &[0])?;
    let vs = tape.var_axes(sigma, &[0])?;
    Ok((tape.sqrt(vm)?, tape.sqrt(vs)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map_gives_guarded_sigma() {
        let x = Tensor::full([1, 1, 3, 3], 5.0);
        let s = instance_stats(&x, 1e-6).unwrap();
        assert_eq!(s.mu.data(), &[5.0]);
        assert!((s.sigma.data()[0] - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn two_point_channel() {
        let x = Tensor::new([1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
        let s = instance_stats(&x, 0.0).unwrap();
        assert_eq!(s.mu.data(), &[2.0]);
        assert_eq!(s.sigma.data(), &[1.0]);
    }

    #[test]
    fn vector_features_are_single_pixel_maps() {
        let x = Tensor::new([2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let s = instance_stats(&x, 1e-6).unwrap();
        assert_eq!(s.mu, x);
        assert!(s.sigma.data().iter().all(|&v| (v - 1e-3).abs() < 1e-15));
    }

    #[test]
    fn identical_instances_have_zero_uncertainty() {
        let one = Tensor::from_fn([1, 2, 2, 2], |i| (i as f64).sin());
        let x = Tensor::concat_rows(&[&one, &one, &one]).unwrap();
        let u = batch_uncertainty(&instance_stats(&x, 1e-6).unwrap()).unwrap();
        assert!(u.sigma_mu.data().iter().all(|&v| v == 0.0));
        assert!(u.sigma_sigma.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_point_batch_spread() {
        let stats = InstanceStats {
            mu: Tensor::new([2, 1], vec![1.0, 3.0]).unwrap(),
            sigma: Tensor::new([2, 1], vec![1.0, 1.0]).unwrap(),
        };
        let u = batch_uncertainty(&stats).unwrap();
        assert_eq!(u.sigma_mu.data(), &[1.0]);
        assert_eq!(u.sigma_sigma.data(), &[0.0]);
    }

    #[test]
    fn rejects_non_finite_and_bad_rank() {
        let x = Tensor::new([1, 1, 1, 2], vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(instance_stats(&x, 1e-6), Err(Error::NonFinite(_))));
        assert!(instance_stats(&Tensor::zeros([4]), 1e-6).is_err());
    }

    #[test]
    fn tape_stats_match_value_stats() {
        let x = Tensor::from_fn([2, 3, 2, 2], |i| ((i * 7) % 5) as f64 - 1.3);
        let direct = instance_stats(&x, 1e-6).unwrap();
        let mut tape = Tape::new();
        let v = tape.leaf(x);
        let (mu, sigma) = instance_stats_var(&mut tape, v, 1e-6).unwrap();
        for (a, b) in tape.value(mu).data().iter().zip(direct.mu.data()) {
            assert!((a - b).abs() < 1e-14);
        }
        for (a, b) in tape.value(sigma).data().iter().zip(direct.sigma.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
