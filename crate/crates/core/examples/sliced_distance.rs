//! Sliced 1-Wasserstein distance between two empirical feature sets.
//!
//! Run: `cargo run --example sliced_distance`

use dsu::rng;
use dsu::theory::empirical_domain_distance;

fn main() -> dsu::Result<()> {
    let mut r = rng::stream(3, "example");
    let a = rng::standard_normal(&mut r, [500, 6]);
    let near = rng::standard_normal(&mut r, [500, 6]);
    let far = rng::standard_normal(&mut r, [500, 6]).map(|v| 1.5 * v + 1.0);
    let mut proj = rng::stream(3, "projections");
    println!("same distribution    {:.4}", empirical_domain_distance(&a, &near, 128, &mut proj)?);
    println!("shifted and scaled   {:.4}", empirical_domain_distance(&a, &far, 128, &mut proj)?);
    Ok(())
}
