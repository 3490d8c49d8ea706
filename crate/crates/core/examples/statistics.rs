//! Instance statistics of a feature batch and their spread over the batch.
//!
//! Run: `cargo run --example statistics`

use dsu::rng;
use dsu::stats::{batch_uncertainty, instance_stats, DEFAULT_EPS};

fn main() -> dsu::Result<()> {
    let mut r = rng::stream(0, "example");
    // 4 instances, 2 channels, 3x3 maps; channel 1 is shifted and scaled.
    let mut x = rng::standard_normal(&mut r, [4, 2, 3, 3]);
    for (i, plane) in x.data_mut().chunks_exact_mut(9).enumerate() {
        if i % 2 == 1 {
            plane.iter_mut().for_each(|v| *v = 3.0 * *v + 5.0);
        }
    }

    let s = instance_stats(&x, DEFAULT_EPS)?;
    let u = batch_uncertainty(&s)?;
    for b in 0..4 {
        println!(
            "instance {b}: mu = [{:+.3}, {:+.3}]  sigma = [{:.3}, {:.3}]",
            s.mu.get(&[b, 0]),
            s.mu.get(&[b, 1]),
            s.sigma.get(&[b, 0]),
            s.sigma.get(&[b, 1])
        );
    }
    println!("Sigma_mu    = {:?}", u.sigma_mu.data());
    println!("Sigma_sigma = {:?}", u.sigma_sigma.data());
    Ok(())
}
