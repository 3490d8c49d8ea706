//! Generate styled source and target domains, save them and split them.
//!
//! Run: `cargo run --example synthetic_domains`

use dsu::synth::{generate, load, lodo_split, save, SynthConfig, TaskSpec};

fn main() -> dsu::Result<()> {
    let cfg = SynthConfig {
        samples_per_class: 50,
        ..SynthConfig::default()
    };
    let task = TaskSpec::from_config(&cfg)?;
    for d in &task.domains {
        println!("{:<8} scale[0] {:.3}  shift[0] {:+.3}", d.id, d.scale[0], d.shift[0]);
    }
    let data = generate(&task)?;
    let (train, test) = lodo_split(&data, "target")?;
    println!("train {} samples, held-out {} samples", train.len(), test.len());

    let dir = std::env::temp_dir().join("dsu-example-data");
    save(&data, &dir)?;
    assert_eq!(load(&dir)?, data);
    println!("saved and reloaded from {}", dir.display());
    Ok(())
}
