//! The uncertainty layer: resampled statistics, the gate, and diagnostics.
//!
//! Run: `cargo run --example dsu_layer`

use dsu::autodiff::Tape;
use dsu::dsu::{dsu_forward_fixed, DsuConfig, DsuLayer, Mode};
use dsu::rng;
use dsu::stats::instance_stats;
use dsu::Tensor;

fn main() -> dsu::Result<()> {
    let mut r = rng::stream(1, "example");
    let x = rng::standard_normal(&mut r, [6, 3, 4, 4]).map(|v| 2.0 * v + 1.0);

    // Fixed draws: the output carries exactly the sampled statistics.
    let eps_mu = rng::standard_normal(&mut r, [6, 3]);
    let eps_sigma = rng::standard_normal(&mut r, [6, 3]).scale(0.3);
    let (out, sampled) = dsu_forward_fixed(&x, &eps_mu, &eps_sigma, 0.0)?;
    let back = instance_stats(&out, 0.0)?;
    println!("beta[0]        = {:?}", &sampled.beta.data()[..3]);
    println!("output mu[0]   = {:?}", &back.mu.data()[..3]);
    println!("gamma[0]       = {:?}", &sampled.gamma.data()[..3]);
    println!("output sigma[0]= {:?}", &back.sigma.data()[..3]);

    // Zero draws leave the input unchanged up to the eps guard.
    let zero = Tensor::zeros([6, 3]);
    let (same, _) = dsu_forward_fixed(&x, &zero, &zero, 1e-6)?;
    let gap = same.data().iter().zip(x.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("zero-draw max deviation = {gap:.2e}");

    // A gated layer as used in training.
    let mut layer = DsuLayer::new(&DsuConfig { p: 0.5, ..DsuConfig::default() }, 0);
    for _ in 0..100 {
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone());
        layer.forward(&mut tape, v, Mode::Train)?;
    }
    println!("{:?}", layer.diagnostics());
    Ok(())
}
