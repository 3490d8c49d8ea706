//! Closed-form 2-Wasserstein distances between Gaussians.
//!
//! Run: `cargo run --example gaussian_wasserstein`

use dsu::theory::{gaussian_w2_diag, gaussian_w2_full, DiagGaussian};
use dsu::Tensor;

fn main() -> dsu::Result<()> {
    let a = DiagGaussian::new(vec![0.0, 1.0], vec![1.0, 4.0])?;
    let b = DiagGaussian::new(vec![2.5, 1.0], vec![1.0, 1.0])?;
    println!("diag W2(a, b) = {:.6}", gaussian_w2_diag(&a, &b)?);
    println!("diag W2(a, a) = {:.6}", gaussian_w2_diag(&a, &a)?);

    let sa = Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 4.0])?;
    let sb = Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0])?;
    println!("full W2 on the same inputs = {:.6}", gaussian_w2_full(&a.mean, &sa, &b.mean, &sb)?);

    let corr = Tensor::new([2, 2], vec![2.0, 0.9, 0.9, 1.0])?;
    println!("full W2 with correlation   = {:.6}", gaussian_w2_full(&[0.0, 0.0], &corr, &[0.0, 0.0], &sb)?);
    Ok(())
}
