//! Load a config with overrides and write a key-value report and a CSV table.
//!
//! Run: `cargo run --example config_and_reports`

use dsu::harness::{Config, Report, Table};

fn main() -> dsu::Result<()> {
    let text = "seed = 3\n[dsu]\np = 0.7\n";
    let overrides = ["train.epochs=5".to_string(), "--adaptation.omega=0.25".to_string()];
    let cfg = Config::from_toml(text, &overrides, None)?;
    println!("seeds {:?}, p {}, epochs {}, omega {}", cfg.seeds(), cfg.dsu.p, cfg.train.epochs, cfg.adaptation.omega);

    let mut report = Report::new();
    report.text("command", "example").int("seed", cfg.seed).num("dsu.p", cfg.dsu.p);
    print!("{}", report.render());

    let dir = std::env::temp_dir().join("dsu-example-report");
    std::fs::create_dir_all(&dir)?;
    let mut table = Table::new(&["seed", "p"]);
    for s in cfg.seeds().iter().take(3) {
        table.row(vec![s.to_string(), cfg.dsu.p.to_string()]);
    }
    table.write(dir.join("table.csv"))?;
    report.write(dir.join("report.toml"))?;
    println!("written to {}", dir.display());
    Ok(())
}
