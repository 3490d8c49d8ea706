//! The work behind each `dsu` subcommand. Every command writes a flat
//! key-value report plus CSV tables into an output directory; nothing
//! time-dependent is written, so repeated runs produce identical files.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use crate::error::Result;
use crate::harness::ablation::{run_study, Study};
use crate::harness::experiment::{distance_position, run_lodo, stats_report};
use crate::harness::{evaluate, train, Calibration, Checkpoint, Config, Report, Table, Variant};
use crate::harness::report::cell;
use crate::synth::{self, lodo_split, Dataset, MultiDomain, TaskSpec};
use crate::theory::verify::{verify_all, Check, VerifyConfig};

fn prepare(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

/// Load saved data, or generate it from the config.
pub fn load_data(cfg: &Config, data_dir: Option<&Path>) -> Result<MultiDomain> {
    match data_dir {
        Some(d) => {
            let data = synth::load(d)?;
            data.task.domain_index(&cfg.held_out)?;
            Ok(data)
        }
        None => synth::generate(&TaskSpec::from_config(&cfg.data)?),
    }
}

fn config_echo(report: &mut Report, cfg: &Config) -> Result<()> {
    let table: toml::Table = toml::from_str(&cfg.to_toml()?)?;
    flatten("config", &toml::Value::Table(table), report);
    Ok(())
}

fn flatten(prefix: &str, v: &toml::Value, report: &mut Report) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                flatten(&format!("{prefix}.{k}"), v, report);
            }
        }
        toml::Value::Float(f) => {
            report.num(prefix, *f);
        }
        toml::Value::Integer(i) => {
            report.int(prefix, *i);
        }
        toml::Value::Boolean(b) => {
            report.flag(prefix, *b);
        }
        toml::Value::String(s) => {
            report.text(prefix, s);
        }
        other => {
            report.text(prefix, &other.to_string());
        }
    }
}

pub fn gen_data(cfg: &Config, out: &Path) -> Result<Report> {
    prepare(out)?;
    let data = synth::generate(&TaskSpec::from_config(&cfg.data)?)?;
    synth::save(&data, out)?;
    let mut r = Report::new();
    r.text("command", "gen-data");
    for (spec, d) in data.task.domains.iter().zip(&data.domains) {
        r.int(&format!("domains.{}.samples", spec.id), d.len() as u64);
        r.nums(&format!("domains.{}.scale", spec.id), &spec.scale);
        r.nums(&format!("domains.{}.shift", spec.id), &spec.shift);
    }
    config_echo(&mut r, cfg)?;
    r.write(out.join("gen-data-report.toml"))?;
    Ok(r)
}

pub fn train_command(cfg: &Config, data_dir: Option<&Path>, out: &Path) -> Result<Report> {
    prepare(out)?;
    let data = load_data(cfg, data_dir)?;
    let (train_set, target) = lodo_split(&data, &cfg.held_out)?;
    let seed = cfg.seed;
    let trained = train(cfg, &train_set, seed)?;
    Checkpoint::new(cfg, seed, &trained).save(out.join("checkpoint.toml"))?;

    let mut history = Table::new(&["epoch", "loss", "train_accuracy", "validation_accuracy"]);
    for h in &trained.history {
        history.row(vec![
            h.epoch.to_string(),
            cell(h.loss),
            cell(h.train_accuracy),
            h.validation_accuracy.map_or(String::new(), cell),
        ]);
    }
    history.write(out.join("history.csv"))?;

    let plain = evaluate(&trained.model, &target, None)?;
    let mut r = Report::new();
    r.text("command", "train").int("seed", seed).int("steps", trained.steps as u64);
    r.int("kept_epoch", trained.kept_epoch as u64);
    if let Some(last) = trained.history.last() {
        r.num("final_loss", last.loss).num("final_train_accuracy", last.train_accuracy);
    }
    r.num("target_accuracy", plain.accuracy);
    for (p, d) in &trained.dsu {
        r.int(&format!("dsu.position{p}.applied"), d.applied as u64);
        r.int(&format!("dsu.position{p}.skipped"), d.skipped as u64);
        r.int(&format!("dsu.position{p}.sign_flips"), d.sign_flips as u64);
    }
    for region in &trained.regions {
        r.flag(&format!("regions.position{}.degenerate", region.position), region.degenerate);
    }
    config_echo(&mut r, cfg)?;
    r.write(out.join("train-report.toml"))?;
    Ok(r)
}

fn checkpoint_data(ck: &Checkpoint, data_dir: Option<&Path>) -> Result<(MultiDomain, Dataset, usize)> {
    let data = load_data(&ck.config, data_dir)?;
    let held = data.task.domain_index(&ck.config.held_out)?;
    let target = data.domains[held].clone();
    Ok((data, target, held))
}

pub fn eval_command(checkpoint: &Path, data_dir: Option<&Path>, use_adaptation: bool, out: &Path) -> Result<Report> {
    prepare(out)?;
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = &ck.config;
    let (data, target, held) = checkpoint_data(&ck, data_dir)?;
    let cal = Calibration {
        regions: &ck.shift_regions,
        positions: &cfg.adaptation.positions,
        eps: cfg.dsu.eps,
        strict: cfg.adaptation.strict,
    };
    let adapt = use_adaptation && cfg.adaptation.enabled;
    let mut r = Report::new();
    r.text("command", "eval").int("seed", ck.seed).flag("adaptation", adapt);
    let mut telemetry = Table::new(&["domain", "position", "channel", "instances", "mu_fired", "sigma_fired"]);
    for (i, (spec, d)) in data.task.domains.iter().zip(&data.domains).enumerate() {
        let role = if i == held { "target" } else { "source" };
        let result = evaluate(&ck.model, d, adapt.then_some(&cal))?;
        r.num(&format!("{role}.{}.accuracy", spec.id), result.accuracy);
        for (p, t) in &result.telemetry {
            r.num(&format!("{role}.{}.position{p}.fired_fraction", spec.id), t.fired_fraction());
            for c in 0..t.mu_fired.len() {
                telemetry.row(vec![
                    spec.id.clone(),
                    p.to_string(),
                    c.to_string(),
                    t.instances.to_string(),
                    t.mu_fired[c].to_string(),
                    t.sigma_fired[c].to_string(),
                ]);
            }
        }
    }
    let plain = evaluate(&ck.model, &target, None)?;
    r.num("target_accuracy_plain", plain.accuracy);
    telemetry.write(out.join("telemetry.csv"))?;
    r.write(out.join("eval-report.toml"))?;
    Ok(r)
}

pub fn report_stats_command(checkpoint: &Path, data_dir: Option<&Path>, out: &Path) -> Result<Report> {
    prepare(out)?;
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = &ck.config;
    let (data, target, held) = checkpoint_data(&ck, data_dir)?;
    let sources: Vec<Dataset> = data
        .domains
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != held)
        .map(|(_, d)| d.clone())
        .collect();
    let source_ids: Vec<&str> = data
        .task
        .domains
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != held)
        .map(|(_, d)| d.id.as_str())
        .collect();
    let stats = stats_report(
        &ck.model,
        &sources,
        &target,
        &cfg.model.positions(),
        cfg.report.projections,
        cfg.report.standardize,
        ck.seed,
        cfg.dsu.eps,
    )?;
    let mut gaps = Table::new(&["position", "channel", "mu_gap", "sigma_gap"]);
    let mut dist = Table::new(&["position", "pair", "sliced_w1"]);
    let mut r = Report::new();
    r.text("command", "report-stats").int("seed", ck.seed);
    for s in &stats {
        for c in 0..s.mu_gap.len() {
            gaps.row(vec![s.position.to_string(), c.to_string(), cell(s.mu_gap[c]), cell(s.sigma_gap[c])]);
        }
        dist.row(vec![s.position.to_string(), "pooled_source-target".into(), cell(s.source_target)]);
        for (id, d) in source_ids.iter().zip(&s.source_pooled) {
            dist.row(vec![s.position.to_string(), format!("{id}-pooled_source"), cell(*d)]);
        }
        let key = format!("position{}", s.position);
        r.num(&format!("{key}.mean_mu_gap"), s.mean_mu_gap());
        r.num(&format!("{key}.mean_sigma_gap"), s.mean_sigma_gap());
        r.num(&format!("{key}.source_target_distance"), s.source_target);
        r.num(&format!("{key}.source_pooled_distance"), s.mean_source_pooled());
    }
    gaps.write(out.join("channel_gaps.csv"))?;
    dist.write(out.join("distances.csv"))?;
    r.write(out.join("stats-report.toml"))?;
    Ok(r)
}

/// Run ablation studies. `Modules` also writes the per-seed comparison and
/// its summary statistics.
pub fn ablate_command(cfg: &Config, data_dir: Option<&Path>, studies: &[Study], out: &Path) -> Result<Report> {
    prepare(out)?;
    let data = load_data(cfg, data_dir)?;
    let mut r = Report::new();
    r.text("command", "ablate");
    for &study in studies {
        info!("running study {}", study.name());
        if study == Study::Modules {
            let summary = run_lodo(cfg, &data)?;
            crate::harness::ablation::modules_table(&summary).write(out.join("ablation_modules.csv"))?;
            let mut seeds = Table::new(&[
                "seed",
                "baseline",
                "baseline_adapted",
                "dsu",
                "dsu_adapted",
                "distance_baseline",
                "distance_dsu",
                "fired_baseline",
                "fired_dsu",
            ]);
            for s in &summary.seeds {
                let mut row = vec![s.seed.to_string()];
                row.extend(s.accuracy.iter().map(|&a| cell(a)));
                row.extend(s.distance.iter().map(|&a| cell(a)));
                row.extend(s.fired_fraction.iter().map(|&a| cell(a)));
                seeds.row(row);
            }
            seeds.write(out.join("lodo_seeds.csv"))?;
            for (v, m) in Variant::ALL.iter().zip(summary.mean_accuracy) {
                r.num(&format!("modules.mean_accuracy.{}", v.name()), m);
            }
            r.int("modules.dsu_wins", summary.dsu_wins as u64)
                .int("modules.dsu_ties", summary.dsu_ties as u64)
                .num("modules.sign_test_p", summary.sign_test_p)
                .int("modules.distance_wins", summary.distance_wins as u64)
                .int("modules.distance_position", distance_position(cfg) as u64);
        } else {
            let table = run_study(study, cfg, &data)?;
            r.int(&format!("{}.rows", study.name()), table.rows.len() as u64);
            table.write(out.join(format!("ablation_{}.csv", study.name())))?;
        }
    }
    config_echo(&mut r, cfg)?;
    r.write(out.join("ablate-report.toml"))?;
    Ok(r)
}

pub fn verify_theory_command(cfg: &VerifyConfig, out: &Path) -> Result<(Report, Vec<Check>)> {
    prepare(out)?;
    let checks = verify_all(cfg)?;
    let mut r = Report::new();
    r.text("command", "verify-theory").int("seed", cfg.seed).int("draws", cfg.draws as u64);
    for c in &checks {
        r.flag(&format!("{}.passed", c.name), c.passed);
        r.num(&format!("{}.value", c.name), c.value);
        r.num(&format!("{}.tolerance", c.name), c.tolerance);
    }
    r.flag("all_passed", checks.iter().all(|c| c.passed));
    r.write(out.join("theory-report.toml"))?;
    Ok((r, checks))
}

pub fn default_out(name: &str) -> PathBuf {
    PathBuf::from("runs").join(name)
}
