//! Expected risk under statistic resampling: closed form against sampling.
//!
//! Run: `cargo run --release --example implicit_regularization`

use dsu::rng;
use dsu::theory::verify::random_instance;
use dsu::theory::{implicit_reg_closed_form, implicit_reg_monte_carlo};

fn main() -> dsu::Result<()> {
    let mut r = rng::stream(4, "example");
    for i in 0..5 {
        let inst = random_instance(&mut r, 4, 3, 16, 2.0);
        let cf = implicit_reg_closed_form(&inst)?;
        let mc = implicit_reg_monte_carlo(&inst, &mut r, 100_000)?;
        println!(
            "instance {i}: risk {:.4} + mu term {:.4} + sigma term {:.4} = {:.4}   sampled {:.4} ± {:.4}",
            cf.empirical_risk, cf.mu_term, cf.sigma_term, cf.total, mc.mean, mc.std_error
        );
    }
    Ok(())
}
