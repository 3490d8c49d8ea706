//! Sweep the application probability and the calibration grid on a trimmed
//! task and print the tables.
//!
//! Run: `cargo run --release --example ablation`

use dsu::harness::ablation::{calibration_grid, p_sweep};
use dsu::harness::Config;
use dsu::synth::{generate, TaskSpec};

fn main() -> dsu::Result<()> {
    let mut cfg = Config::default();
    cfg.runs = 1;
    cfg.data.samples_per_class = 200;
    cfg.train.epochs = 8;
    let data = generate(&TaskSpec::from_config(&cfg.data)?)?;
    for table in [
        p_sweep(&cfg, &data, &[0.0, 0.25, 0.5, 0.75, 1.0])?,
        calibration_grid(&cfg, &data, &[0.0, 1.0, 2.0], &[0.0, 0.5, 1.0])?,
    ] {
        println!("{}", table.header.join(","));
        for row in &table.rows {
            println!("{}", row.join(","));
        }
        println!();
    }
    Ok(())
}
