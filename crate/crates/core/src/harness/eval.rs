use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::adaptation::{calibrate, calibrate_strict, CalibrationTelemetry, ShiftRegion, StatAccumulator};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::stats::instance_stats;
use crate::synth::Dataset;
use crate::tensor::Tensor;

use super::model::{argmax_rows, Model};

/// Rows per inference chunk.
pub const EVAL_CHUNK: usize = 500;

/// Calibration applied during inference.
#[derive(Clone, Copy, Debug)]
pub struct Calibration<'a> {
    pub regions: &'a [ShiftRegion],
    pub positions: &'a [usize],
    pub eps: f64,
    pub strict: bool,
}

impl Calibration<'_> {
    fn region(&self, position: usize) -> Result<&ShiftRegion> {
        self.regions
            .iter()
            .find(|r| r.position == position)
            .ok_or(Error::MissingRegion(position))
    }
}

/// Output of one inference pass.
pub struct Pass {
    pub logits: Tensor,
    /// Features captured at the requested positions, after any calibration
    /// at that position.
    pub features: BTreeMap<usize, Tensor>,
    pub telemetry: BTreeMap<usize, CalibrationTelemetry>,
}

/// Inference on one batch with optional calibration and feature capture.
pub fn infer(model: &Model, x: &Tensor, calibration: Option<&Calibration<'_>>, capture: &[usize]) -> Result<Pass> {
    if let Some(cal) = calibration {
        for &p in cal.positions {
            cal.region(p)?;
        }
    }
    let mut features = BTreeMap::new();
    let mut telemetry = BTreeMap::new();
    let mut tape = Tape::untraced();
    let input = tape.constant(x.clone());
    let out = model.forward(&mut tape, input, &mut |position, tape, v| {
        let mut v = v;
        if let Some(cal) = calibration.filter(|c| c.positions.contains(&position)) {
            let region = cal.region(position)?;
            let value = tape.value(v);
            let done = if cal.strict {
                calibrate_strict(value, region, cal.eps)?
            } else {
                calibrate(value, region, cal.eps)?
            };
            telemetry.insert(position, done.telemetry);
            v = tape.constant(done.output);
        }
        if capture.contains(&position) {
            features.insert(position, tape.value(v).clone());
        }
        Ok(v)
    })?;
    Ok(Pass {
        logits: tape.value(out.logits).clone(),
        features,
        telemetry,
    })
}

fn chunks(len: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..len).step_by(EVAL_CHUNK).map(move |s| (s..(s + EVAL_CHUNK).min(len)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// Calibration telemetry per position; empty without adaptation.
    pub telemetry: BTreeMap<usize, CalibrationTelemetry>,
}

/// Accuracy on a dataset, optionally with inference-time calibration.
pub fn evaluate(model: &Model, data: &Dataset, calibration: Option<&Calibration<'_>>) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let mut correct = 0;
    let mut telemetry: BTreeMap<usize, CalibrationTelemetry> = BTreeMap::new();
    for rows in chunks(data.len()) {
        let pass = infer(model, &data.x.select_rows(&rows)?, calibration, &[])?;
        correct += argmax_rows(&pass.logits)
            .iter()
            .zip(&rows)
            .filter(|(pred, &r)| **pred == data.labels[r])
            .count();
        for (p, t) in pass.telemetry {
            telemetry.entry(p).or_default().absorb(&t);
        }
    }
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        correct,
        total: data.len(),
        telemetry,
    })
}

/// Features at `positions` for a whole dataset, without calibration.
pub fn features(model: &Model, data: &Dataset, positions: &[usize]) -> Result<BTreeMap<usize, Tensor>> {
    let mut parts: BTreeMap<usize, Vec<Tensor>> = BTreeMap::new();
    for rows in chunks(data.len()) {
        let pass = infer(model, &data.x.select_rows(&rows)?, None, positions)?;
        for (p, f) in pass.features {
            parts.entry(p).or_default().push(f);
        }
    }
    parts
        .into_iter()
        .map(|(p, fs)| Ok((p, Tensor::concat_rows(&fs.iter().collect::<Vec<_>>())?)))
        .collect()
}

/// Fit a shift region at each position from one pass over `data` with
/// sampling and calibration off.
pub fn fit_regions(model: &Model, data: &Dataset, positions: &[usize], n: f64, omega: f64, eps: f64) -> Result<Vec<ShiftRegion>> {
    let mut acc: BTreeMap<usize, StatAccumulator> = BTreeMap::new();
    for rows in chunks(data.len()) {
        let pass = infer(model, &data.x.select_rows(&rows)?, None, positions)?;
        for (p, f) in pass.features {
            let stats = instance_stats(&f, eps)?;
            acc.entry(p)
                .or_insert_with(|| StatAccumulator::new(stats.channels()))
                .push(&stats)?;
        }
    }
    positions
        .iter()
        .map(|&p| {
            acc.get(&p)
                .ok_or_else(|| Error::Empty(format!("no features at position {p}")))?
                .finish(p, n, omega)
        })
        .collect()
}
