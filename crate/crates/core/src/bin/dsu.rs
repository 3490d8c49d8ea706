use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use log::info;

use dsu::commands;
use dsu::harness::{Config, Study};
use dsu::theory::verify::VerifyConfig;

/// Feature-statistics uncertainty experiments on synthetic domains.
///
/// Config fields can be overridden with `--section.key=value` (or
/// `section.key=value`) arguments; `DSU_SEED` overrides `seed`.
#[derive(Parser)]
#[command(name = "dsu", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Load data written by `gen-data` instead of generating it.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Config overrides, `key=value`.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic domains and save them.
    GenData(Common),
    /// Train one model at the configured seed and write a checkpoint.
    Train(Common),
    /// Evaluate a checkpoint on every domain.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip inference-time calibration.
        #[arg(long)]
        no_adaptation: bool,
    },
    /// Run ablation studies over the configured seeds.
    Ablate {
        /// modules, p, positions, calibration, or all.
        #[arg(long, default_value = "modules")]
        study: String,
        #[command(flatten)]
        common: Common,
    },
    /// Per-channel statistic gaps and domain distances of a checkpoint.
    ReportStats {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the closed forms against sampling and each other.
    VerifyTheory {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200_000)]
        draws: usize,
    },
}

/// Turn `--a.b=c` style overrides into positional `a.b=c` so clap does not
/// treat them as unknown flags.
fn normalize_args() -> Vec<String> {
    const FLAGS: [&str; 9] = [
        "--config", "--out", "--data", "--checkpoint", "--study", "--seed", "--draws", "--no-adaptation", "--help",
    ];
    std::env::args()
        .map(|a| match a.split_once('=') {
            Some((k, _)) if k.starts_with("--") && !FLAGS.contains(&k) => a[2..].to_string(),
            _ => a,
        })
        .collect()
}

fn config(common: &Common) -> dsu::Result<Config> {
    Config::load(common.config.as_deref(), &common.overrides)
}

fn run(cli: Cli) -> dsu::Result<()> {
    match cli.command {
        Command::GenData(c) => {
            let out = c.out.clone().unwrap_or_else(|| commands::default_out("data"));
            commands::gen_data(&config(&c)?, &out)?;
            println!("data written to {}", out.display());
        }
        Command::Train(c) => {
            let out = c.out.clone().unwrap_or_else(|| commands::default_out("train"));
            let r = commands::train_command(&config(&c)?, c.data.as_deref(), &out)?;
            println!("target_accuracy = {}", r.get("target_accuracy").unwrap_or("?"));
            println!("checkpoint written to {}", out.join("checkpoint.toml").display());
        }
        Command::Eval {
            checkpoint,
            data,
            out,
            no_adaptation,
        } => {
            let out = out.unwrap_or_else(|| commands::default_out("eval"));
            let r = commands::eval_command(&checkpoint, data.as_deref(), !no_adaptation, &out)?;
            print!("{}", r.render());
        }
        Command::Ablate { study, common } => {
            let studies: Vec<Study> = if study == "all" {
                Study::ALL.to_vec()
            } else {
                study.split(',').map(str::parse).collect::<dsu::Result<_>>()?
            };
            let out = common.out.clone().unwrap_or_else(|| commands::default_out("ablate"));
            let r = commands::ablate_command(&config(&common)?, common.data.as_deref(), &studies, &out)?;
            for (k, v) in r.entries().iter().filter(|(k, _)| !k.starts_with("config.")) {
                println!("{k} = {v}");
            }
        }
        Command::ReportStats { checkpoint, data, out } => {
            let out = out.unwrap_or_else(|| commands::default_out("stats"));
            let r = commands::report_stats_command(&checkpoint, data.as_deref(), &out)?;
            print!("{}", r.render());
        }
        Command::VerifyTheory { out, seed, draws } => {
            let out = out.unwrap_or_else(|| commands::default_out("theory"));
            let cfg = VerifyConfig {
                seed,
                draws,
                ..VerifyConfig::default()
            };
            let (_, checks) = commands::verify_theory_command(&cfg, &out)?;
            for c in &checks {
                let mark = if c.passed { "PASS" } else { "FAIL" };
                println!("{mark} {:<26} value {:.3e} (tolerance {:.1e})", c.name, c.value, c.tolerance);
            }
            let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
            if !failed.is_empty() {
                return Err(dsu::Error::Verification(failed.join(", ")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse_from(normalize_args());
    let start = Instant::now();
    let result = run(cli);
    info!("finished in {:.2?}", start.elapsed());
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
