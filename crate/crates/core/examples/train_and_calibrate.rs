//! Train one model with the uncertainty layer and score the held-out domain
//! with and without calibration.
//!
//! Run: `cargo run --release --example train_and_calibrate`

use dsu::harness::{evaluate, train, Calibration, Config};
use dsu::synth::{generate, lodo_split, TaskSpec};

fn main() -> dsu::Result<()> {
    let cfg = Config::default();
    let data = generate(&TaskSpec::from_config(&cfg.data)?)?;
    let (sources, target) = lodo_split(&data, &cfg.held_out)?;
    let trained = train(&cfg, &sources, cfg.seed)?;
    for h in &trained.history {
        println!("epoch {:>2}  loss {:.4}  train acc {:.3}", h.epoch, h.loss, h.train_accuracy);
    }
    let cal = Calibration {
        regions: &trained.regions,
        positions: &cfg.adaptation.positions,
        eps: cfg.dsu.eps,
        strict: false,
    };
    let plain = evaluate(&trained.model, &target, None)?;
    let adapted = evaluate(&trained.model, &target, Some(&cal))?;
    println!("target accuracy: plain {:.4}, calibrated {:.4}", plain.accuracy, adapted.accuracy);
    for (p, t) in &adapted.telemetry {
        println!("position {p}: fired fraction {:.3}", t.fired_fraction());
    }
    Ok(())
}
