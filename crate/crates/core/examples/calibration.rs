//! Fit a shift region on training features, then calibrate shifted test
//! features toward it.
//!
//! Run: `cargo run --example calibration`

use dsu::adaptation::{calibrate, fit_shift_region, DEFAULT_OMEGA, DEFAULT_SCOPE};
use dsu::rng;
use dsu::stats::instance_stats;

fn main() -> dsu::Result<()> {
    let mut r = rng::stream(2, "example");
    let train: Vec<_> = (0..10).map(|_| rng::standard_normal(&mut r, [32, 2, 4, 4])).collect();
    let region = fit_shift_region(train, 0, DEFAULT_SCOPE, DEFAULT_OMEGA, 1e-6)?;
    println!("mu_bar = {:?}  Sigma_mu_bar = {:?}", region.mu_bar, region.sigma_mu_bar);
    println!("mu interval (channel 0) = {:?}", region.mu_interval(0));

    // Worked case: mu = 5 against mu_bar = 2, Sigma = 1, n = 1, omega = 0.5.
    let mut toy = region.clone();
    toy.mu_bar[0] = 2.0;
    toy.sigma_mu_bar[0] = 1.0;
    println!("calibrate_mu(5) = {:?}", toy.calibrate_mu(0, 5.0));

    // A test batch with a style shift.
    let test = rng::standard_normal(&mut r, [8, 2, 4, 4]).map(|v| 2.5 * v + 3.0);
    let before = instance_stats(&test, 1e-6)?;
    let out = calibrate(&test, &region, 1e-6)?;
    let after = instance_stats(&out.output, 1e-6)?;
    println!("mean instance mu    before {:.3}  after {:.3}", before.mu.mean(), after.mu.mean());
    println!("mean instance sigma before {:.3}  after {:.3}", before.sigma.mean(), after.sigma.mean());
    println!("fired fraction = {:.3}", out.telemetry.fired_fraction());
    Ok(())
}
