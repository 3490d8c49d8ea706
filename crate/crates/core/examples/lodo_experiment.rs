//! Leave-one-domain-out comparison of the four module combinations.
//!
//! Run: `cargo run --release --example lodo_experiment [runs]`

use dsu::harness::{run_lodo, Config, Variant};
use dsu::synth::{generate, TaskSpec};

fn main() -> dsu::Result<()> {
    let mut cfg = Config::default();
    cfg.runs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(3);
    let data = generate(&TaskSpec::from_config(&cfg.data)?)?;
    let summary = run_lodo(&cfg, &data)?;
    for s in &summary.seeds {
        println!("seed {}: {:?}  distance {:?}", s.seed, s.accuracy, s.distance);
    }
    for (v, m) in Variant::ALL.iter().zip(summary.mean_accuracy) {
        println!("{:<22} {:.4}", v.name(), m);
    }
    println!(
        "wins {}/{}  sign test p = {:.4}  distance wins {}",
        summary.dsu_wins,
        summary.seeds.len(),
        summary.sign_test_p,
        summary.distance_wins
    );
    Ok(())
}
