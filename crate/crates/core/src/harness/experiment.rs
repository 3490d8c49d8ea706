use log::info;
use serde::{Deserialize, Serialize};

use crate::adaptation::ShiftRegion;
use crate::error::{Error, Result};
use crate::rng;
use crate::stats::instance_stats;
use crate::synth::{lodo_split, Dataset, MultiDomain};
use crate::tensor::Tensor;
use crate::theory::empirical_domain_distance;

use super::config::Config;
use super::eval::{evaluate, features, Calibration};
use super::model::Model;
use super::train::{train, Trained};

/// Statistic gaps and domain distances at one position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionStats {
    pub position: usize,
    /// Per channel `|mean source mu - mean target mu|`.
    pub mu_gap: Vec<f64>,
    pub sigma_gap: Vec<f64>,
    /// Sliced W1 between pooled source features and target features.
    pub source_target: f64,
    /// Sliced W1 between each source domain and the pooled source.
    pub source_pooled: Vec<f64>,
}

impl PositionStats {
    pub fn mean_mu_gap(&self) -> f64 {
        mean(&self.mu_gap)
    }

    pub fn mean_sigma_gap(&self) -> f64 {
        mean(&self.sigma_gap)
    }

    pub fn mean_source_pooled(&self) -> f64 {
        mean(&self.source_pooled)
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn flatten_rows(t: &Tensor) -> Result<Tensor> {
    let m = t.shape()[0];
    t.reshape([m, t.numel() / m])
}

/// Centre the reference rows and divide by their root-mean-square column
/// spread, a single scale shared by every column.
fn standardizer(reference: &Tensor) -> Result<(Tensor, Tensor)> {
    let mean = reference.mean_axes(&[0])?;
    let rms = reference.var_axes(&[0])?.mean().sqrt();
    let scale = if rms > 0.0 { rms } else { 1.0 };
    Ok((mean, Tensor::full([1, reference.shape()[1]], scale)))
}

fn mean_stats(features: &Tensor, eps: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let s = instance_stats(features, eps)?;
    let mu = s.mu.mean_axes(&[0])?.into_data();
    let sigma = s.sigma.mean_axes(&[0])?.into_data();
    Ok((mu, sigma))
}

/// Per-position statistic gaps and sliced-W1 distances between source
/// domains and a target domain, on features of a trained model.
#[allow(clippy::too_many_arguments)]
pub fn stats_report(
    model: &Model,
    sources: &[Dataset],
    target: &Dataset,
    positions: &[usize],
    projections: usize,
    standardize: bool,
    seed: u64,
    eps: f64,
) -> Result<Vec<PositionStats>> {
    if sources.is_empty() {
        return Err(Error::Empty("stats_report needs at least one source domain".into()));
    }
    let per_source = sources
        .iter()
        .map(|s| features(model, s, positions))
        .collect::<Result<Vec<_>>>()?;
    let target_feats = features(model, target, positions)?;
    positions
        .iter()
        .map(|&p| {
            let src: Vec<&Tensor> = per_source.iter().map(|f| &f[&p]).collect();
            let pooled = Tensor::concat_rows(&src)?;
            let tgt = &target_feats[&p];
            let (mu_s, sigma_s) = mean_stats(&pooled, eps)?;
            let (mu_t, sigma_t) = mean_stats(tgt, eps)?;
            let gap = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>();
            let pooled_flat = flatten_rows(&pooled)?;
            let (shift, scale) = if standardize {
                standardizer(&pooled_flat)?
            } else {
                let d = pooled_flat.shape()[1];
                (Tensor::zeros([1, d]), Tensor::ones([1, d]))
            };
            let prep = |t: &Tensor| flatten_rows(t)?.sub(&shift)?.div(&scale);
            let pooled_flat = prep(&pooled)?;
            let mut r = rng::stream(seed, &format!("distance/{p}"));
            let source_target = empirical_domain_distance(&pooled_flat, &prep(tgt)?, projections, &mut r)?;
            let source_pooled = src
                .iter()
                .map(|s| empirical_domain_distance(&prep(s)?, &pooled_flat, projections, &mut r))
                .collect::<Result<Vec<_>>>()?;
            Ok(PositionStats {
                position: p,
                mu_gap: gap(&mu_s, &mu_t),
                sigma_gap: gap(&sigma_s, &sigma_t),
                source_target,
                source_pooled,
            })
        })
        .collect()
}

/// The four module combinations of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Baseline,
    BaselineAdapted,
    Dsu,
    DsuAdapted,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::BaselineAdapted, Variant::Dsu, Variant::DsuAdapted];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::BaselineAdapted => "baseline+adaptation",
            Variant::Dsu => "dsu",
            Variant::DsuAdapted => "dsu++",
        }
    }
}

/// Outcome of one seed of the leave-one-domain-out experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Unseen-domain accuracy per [`Variant::ALL`] entry.
    pub accuracy: [f64; 4],
    /// Source validation accuracy of the baseline and uncertainty models.
    pub source_accuracy: [f64; 2],
    /// Share of channel statistics calibrated on the target, baseline and
    /// uncertainty models.
    pub fired_fraction: [f64; 2],
    /// Pooled source-target sliced W1 at the distance position, baseline and
    /// uncertainty models.
    pub distance: [f64; 2],
    pub baseline_stats: Vec<PositionStats>,
    pub dsu_stats: Vec<PositionStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LodoSummary {
    pub seeds: Vec<SeedResult>,
    /// Mean unseen-domain accuracy per variant.
    pub mean_accuracy: [f64; 4],
    pub dsu_wins: usize,
    pub dsu_ties: usize,
    /// One-sided sign test of uncertainty model over baseline.
    pub sign_test_p: f64,
    pub distance_wins: usize,
}

/// `P(X >= wins)` for `X ~ Binomial(trials, 1/2)`.
pub fn sign_test(wins: usize, trials: usize) -> f64 {
    if trials == 0 {
        return 1.0;
    }
    let mut total = 0.0;
    let mut coef = 1.0f64;
    for k in 0..=trials {
        if k > 0 {
            coef = coef * (trials - k + 1) as f64 / k as f64;
        }
        if k >= wins {
            total += coef;
        }
    }
    total / 2f64.powi(trials as i32)
}

pub fn distance_position(cfg: &Config) -> usize {
    cfg.report
        .distance_position
        .unwrap_or(cfg.model.position_count() - 1)
}

fn variant_config(cfg: &Config, dsu: bool) -> Config {
    let mut c = cfg.clone();
    c.dsu.enabled = dsu;
    c
}

/// Target accuracy with and without calibration, plus the calibration rate.
pub fn evaluate_pair(cfg: &Config, model: &Model, regions: &[ShiftRegion], target: &Dataset) -> Result<(f64, f64, f64)> {
    let plain = evaluate(model, target, None)?;
    let cal = Calibration {
        regions,
        positions: &cfg.adaptation.positions,
        eps: cfg.dsu.eps,
        strict: cfg.adaptation.strict,
    };
    let adapted = evaluate(model, target, Some(&cal))?;
    let calls = adapted.telemetry.values().fold(
        crate::adaptation::CalibrationTelemetry::default(),
        |mut acc, t| {
            acc.absorb(t);
            acc
        },
    );
    Ok((plain.accuracy, adapted.accuracy, calls.fired_fraction()))
}

fn source_domains(data: &MultiDomain, held_out: usize) -> Vec<Dataset> {
    data.domains
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != held_out)
        .map(|(_, d)| d.clone())
        .collect()
}

/// Train a baseline and an uncertainty model on one seed and score all four
/// variants on the held-out domain.
pub fn run_seed(cfg: &Config, data: &MultiDomain, seed: u64) -> Result<(SeedResult, Trained, Trained)> {
    let held = data.task.domain_index(&cfg.held_out)?;
    let (train_set, target) = lodo_split(data, &cfg.held_out)?;
    let sources = source_domains(data, held);
    let dist_pos = distance_position(cfg);
    let positions = cfg.model.positions();

    let base = train(&variant_config(cfg, false), &train_set, seed)?;
    let dsu = train(&variant_config(cfg, true), &train_set, seed)?;

    let (b_plain, b_adapt, b_fired) = evaluate_pair(cfg, &base.model, &base.regions, &target)?;
    let (d_plain, d_adapt, d_fired) = evaluate_pair(cfg, &dsu.model, &dsu.regions, &target)?;
    let source_acc = |t: &Trained| t.history.get(t.kept_epoch.saturating_sub(1)).and_then(|h| h.validation_accuracy);
    let report = |m: &Model| stats_report(
            m,
            &sources,
            &target,
            &positions,
            cfg.report.projections,
            cfg.report.standardize,
            seed,
            cfg.dsu.eps,
        );
    let baseline_stats = report(&base.model)?;
    let dsu_stats = report(&dsu.model)?;
    let at = |s: &[PositionStats]| s.iter().find(|p| p.position == dist_pos).map_or(f64::NAN, |p| p.source_target);
    let result = SeedResult {
        seed,
        accuracy: [b_plain, b_adapt, d_plain, d_adapt],
        source_accuracy: [source_acc(&base).unwrap_or(f64::NAN), source_acc(&dsu).unwrap_or(f64::NAN)],
        fired_fraction: [b_fired, d_fired],
        distance: [at(&baseline_stats), at(&dsu_stats)],
        baseline_stats,
        dsu_stats,
    };
    info!(
        "seed {seed}: baseline {:.4} +adapt {:.4} dsu {:.4} dsu++ {:.4}",
        result.accuracy[0], result.accuracy[1], result.accuracy[2], result.accuracy[3]
    );
    Ok((result, base, dsu))
}

pub fn summarize(seeds: Vec<SeedResult>) -> LodoSummary {
    let n = seeds.len().max(1) as f64;
    let mut mean_accuracy = [0.0; 4];
    for s in &seeds {
        for (m, a) in mean_accuracy.iter_mut().zip(s.accuracy) {
            *m += a / n;
        }
    }
    let dsu_wins = seeds.iter().filter(|s| s.accuracy[2] > s.accuracy[0]).count();
    let dsu_ties = seeds.iter().filter(|s| s.accuracy[2] == s.accuracy[0]).count();
    let distance_wins = seeds.iter().filter(|s| s.distance[1] < s.distance[0]).count();
    LodoSummary {
        sign_test_p: sign_test(dsu_wins, seeds.len() - dsu_ties),
        seeds,
        mean_accuracy,
        dsu_wins,
        dsu_ties,
        distance_wins,
    }
}

/// Leave-one-domain-out comparison over every configured seed.
pub fn run_lodo(cfg: &Config, data: &MultiDomain) -> Result<LodoSummary> {
    let seeds = cfg
        .seeds()
        .into_iter()
        .map(|s| run_seed(cfg, data, s).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(seeds))
}
