use std::str::FromStr;

use crate::error::{Error, Result};
use crate::synth::{lodo_split, MultiDomain};

use super::config::Config;
use super::experiment::{evaluate_pair, run_lodo, LodoSummary, Variant};
use super::report::{cell, Table};
use super::train::train;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Study {
    /// Baseline, baseline + calibration, uncertainty, uncertainty + calibration.
    Modules,
    /// Application probability sweep.
    P,
    /// Subsets of insertion positions.
    Positions,
    /// Calibration scope `n` and strength `omega` grid.
    Calibration,
}

impl FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "modules" => Ok(Study::Modules),
            "p" => Ok(Study::P),
            "positions" => Ok(Study::Positions),
            "calibration" => Ok(Study::Calibration),
            other => Err(Error::Config(format!(
                "unknown study {other:?} (expected modules, p, positions or calibration)"
            ))),
        }
    }
}

impl Study {
    pub const ALL: [Study; 4] = [Study::Modules, Study::P, Study::Positions, Study::Calibration];

    pub fn name(self) -> &'static str {
        match self {
            Study::Modules => "modules",
            Study::P => "p",
            Study::Positions => "positions",
            Study::Calibration => "calibration",
        }
    }
}

pub fn p_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

pub fn omega_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

pub fn n_grid() -> Vec<f64> {
    (0..=4).map(f64::from).collect()
}

/// Every single position, then every prefix `{0..=k}` with more than one
/// member.
pub fn position_subsets(count: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = (0..count).map(|p| vec![p]).collect();
    out.extend((1..count).map(|k| (0..=k).collect()));
    out
}

fn join(ps: &[usize]) -> String {
    ps.iter().map(usize::to_string).collect::<Vec<_>>().join("+")
}

/// Mean accuracy per variant plus the per-seed rows.
pub fn modules_table(summary: &LodoSummary) -> Table {
    let mut t = Table::new(&["variant", "seed", "target_accuracy"]);
    for (i, v) in Variant::ALL.iter().enumerate() {
        for s in &summary.seeds {
            t.row(vec![v.name().into(), s.seed.to_string(), cell(s.accuracy[i])]);
        }
        t.row(vec![v.name().into(), "mean".into(), cell(summary.mean_accuracy[i])]);
    }
    t
}

fn sweep<F>(cfg: &Config, data: &MultiDomain, label: &str, settings: &[(String, F)]) -> Result<Table>
where
    F: Fn(&mut Config),
{
    let (train_set, target) = lodo_split(data, &cfg.held_out)?;
    let mut t = Table::new(&[label, "seed", "target_accuracy", "target_accuracy_adapted", "source_accuracy"]);
    for (name, apply) in settings {
        let mut c = cfg.clone();
        c.dsu.enabled = true;
        apply(&mut c);
        c.validate()?;
        for seed in c.seeds() {
            let trained = train(&c, &train_set, seed)?;
            let (plain, adapted, _) = evaluate_pair(&c, &trained.model, &trained.regions, &target)?;
            let source = trained
                .history
                .get(trained.kept_epoch.saturating_sub(1))
                .and_then(|h| h.validation_accuracy)
                .unwrap_or(f64::NAN);
            t.row(vec![name.clone(), seed.to_string(), cell(plain), cell(adapted), cell(source)]);
        }
    }
    Ok(t)
}

type Setter = Box<dyn Fn(&mut Config)>;

pub fn p_sweep(cfg: &Config, data: &MultiDomain, ps: &[f64]) -> Result<Table> {
    let settings: Vec<(String, Setter)> = ps
        .iter()
        .map(|&p| (cell(p), Box::new(move |c: &mut Config| c.dsu.p = p) as Setter))
        .collect();
    sweep(cfg, data, "p", &settings)
}

pub fn positions_sweep(cfg: &Config, data: &MultiDomain, subsets: &[Vec<usize>]) -> Result<Table> {
    let settings: Vec<(String, Setter)> = subsets
        .iter()
        .map(|s| {
            let s = s.clone();
            (
                join(&s),
                Box::new(move |c: &mut Config| c.dsu.positions = s.clone()) as Setter,
            )
        })
        .collect();
    sweep(cfg, data, "positions", &settings)
}

/// Train one uncertainty model per seed and evaluate it under every
/// `(n, omega)` pair; regions are refitted only in their parameters.
pub fn calibration_grid(cfg: &Config, data: &MultiDomain, ns: &[f64], omegas: &[f64]) -> Result<Table> {
    let (train_set, target) = lodo_split(data, &cfg.held_out)?;
    let mut c = cfg.clone();
    c.dsu.enabled = true;
    let mut t = Table::new(&["n", "omega", "seed", "target_accuracy_adapted", "fired_fraction"]);
    for seed in c.seeds() {
        let trained = train(&c, &train_set, seed)?;
        for &n in ns {
            for &omega in omegas {
                let regions = trained
                    .regions
                    .iter()
                    .map(|r| r.with_params(n, omega))
                    .collect::<Result<Vec<_>>>()?;
                let (_, adapted, fired) = evaluate_pair(&c, &trained.model, &regions, &target)?;
                t.row(vec![cell(n), cell(omega), seed.to_string(), cell(adapted), cell(fired)]);
            }
        }
    }
    Ok(t)
}

/// Run one study with its default grid.
pub fn run_study(study: Study, cfg: &Config, data: &MultiDomain) -> Result<Table> {
    match study {
        Study::Modules => Ok(modules_table(&run_lodo(cfg, data)?)),
        Study::P => p_sweep(cfg, data, &p_grid()),
        Study::Positions => positions_sweep(cfg, data, &position_subsets(cfg.model.position_count())),
        Study::Calibration => calibration_grid(cfg, data, &n_grid(), &omega_grid()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_and_subsets() {
        assert_eq!(p_grid().len(), 11);
        assert_eq!(n_grid(), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(
            position_subsets(3),
            vec![vec![0], vec![1], vec![2], vec![0, 1], vec![0, 1, 2]]
        );
        assert_eq!("p".parse::<Study>().unwrap(), Study::P);
        assert!("q".parse::<Study>().is_err());
    }
}
