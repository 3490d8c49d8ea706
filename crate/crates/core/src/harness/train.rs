use std::collections::BTreeMap;

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adaptation::ShiftRegion;
use crate::autodiff::Tape;
use crate::dsu::{DsuConfig, DsuDiagnostics, DsuLayer, Mode};
use crate::error::{Error, Result};
use crate::rng;
use crate::synth::Dataset;
use crate::tensor::Tensor;

use super::config::Config;
use super::eval::{evaluate, fit_regions};
use super::model::{argmax_rows, Model};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    /// `None` when no validation split is held back.
    pub validation_accuracy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub model: Model,
    /// One region per model position, fitted on the training split.
    pub regions: Vec<ShiftRegion>,
    pub history: Vec<EpochRecord>,
    /// Epoch whose weights were kept (1-based).
    pub kept_epoch: usize,
    pub steps: usize,
    pub dsu: BTreeMap<usize, DsuDiagnostics>,
}

/// Split source data into training and validation parts.
pub fn validation_split(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Option<Dataset>)> {
    let held = (data.len() as f64 * fraction).round() as usize;
    if held == 0 {
        return Ok((data.clone(), None));
    }
    if held >= data.len() {
        return Err(Error::Config("validation split leaves no training data".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng::stream(seed, "split"));
    let (val, train) = order.split_at(held);
    let (mut val, mut train) = (val.to_vec(), train.to_vec());
    val.sort_unstable();
    train.sort_unstable();
    Ok((data.subset(&train)?, Some(data.subset(&val)?)))
}

fn dsu_layers(cfg: &DsuConfig, seed: u64) -> BTreeMap<usize, DsuLayer> {
    if !cfg.enabled {
        return BTreeMap::new();
    }
    let run_cfg = DsuConfig {
        seed: cfg.seed.wrapping_add(seed),
        ..cfg.clone()
    };
    cfg.positions
        .iter()
        .map(|&p| (p, DsuLayer::new(&run_cfg, p)))
        .collect()
}

/// Minibatch SGD with momentum on softmax cross-entropy, with the
/// uncertainty layer active at its configured positions. Afterwards a shift
/// region is fitted at every model position.
pub fn train(cfg: &Config, data: &Dataset, seed: u64) -> Result<Trained> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let tc = &cfg.train;
    let (train_set, val_set) = validation_split(data, tc.validation_fraction, seed)?;
    let mut model = Model::init(&cfg.model, seed)?;
    let mut velocity: Vec<Tensor> = model.params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
    let mut layers = dsu_layers(&cfg.dsu, seed);
    let mut order_rng = rng::stream(seed, "shuffle");
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut history = Vec::with_capacity(tc.epochs);
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    let mut step = 0;
    for epoch in 1..=tc.epochs {
        order.shuffle(&mut order_rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0, 0);
        for rows in order.chunks(tc.batch_size) {
            if rows.len() < 2 && !layers.is_empty() {
                continue;
            }
            let x = train_set.x.select_rows(rows)?;
            let labels: Vec<usize> = rows.iter().map(|&r| train_set.labels[r]).collect();
            let mut tape = Tape::new();
            let input = tape.constant(x);
            let fwd = model.forward(&mut tape, input, &mut |p, tape, v| match layers.get_mut(&p) {
                Some(layer) => layer.forward(tape, v, Mode::Train),
                None => Ok(v),
            })?;
            let loss = tape.softmax_cross_entropy(fwd.logits, &labels)?;
            let loss_value = tape.value(loss).item()?;
            if !loss_value.is_finite() {
                return Err(Error::Diverged { step, loss: loss_value });
            }
            let grads = tape.backward(loss)?;
            for ((param, vel), var) in model.params.iter_mut().zip(&mut velocity).zip(&fwd.params) {
                let mut g = grads.get(*var)?;
                if tc.weight_decay > 0.0 && param.rank() > 1 {
                    g.add_assign(&param.scale(tc.weight_decay))?;
                }
                *vel = vel.scale(tc.momentum);
                vel.add_assign(&g)?;
                param.add_assign(&vel.scale(-tc.lr))?;
            }
            loss_sum += loss_value * rows.len() as f64;
            correct += argmax_rows(tape.value(fwd.logits))
                .iter()
                .zip(&labels)
                .filter(|(a, b)| a == b)
                .count();
            seen += rows.len();
            step += 1;
        }
        let validation_accuracy = match &val_set {
            Some(v) => Some(evaluate(&model, v, None)?.accuracy),
            None => None,
        };
        let record = EpochRecord {
            epoch,
            loss: loss_sum / seen.max(1) as f64,
            train_accuracy: correct as f64 / seen.max(1) as f64,
            validation_accuracy,
        };
        debug!("seed {seed} epoch {epoch}: {record:?}");
        history.push(record);

        if let Some(acc) = validation_accuracy {
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, epoch, model.params.clone()));
            }
            let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
            if tc.patience > 0 && epoch - best_epoch >= tc.patience {
                info!("seed {seed}: validation plateau, stopping after epoch {epoch}");
                break;
            }
        }
    }

    let mut kept_epoch = history.len();
    if tc.patience > 0 {
        if let Some((_, epoch, params)) = best {
            model.params = params;
            kept_epoch = epoch;
        }
    }
    let regions = fit_regions(
        &model,
        &train_set,
        &model.spec.positions(),
        cfg.adaptation.n,
        cfg.adaptation.omega,
        cfg.dsu.eps,
    )?;
    Ok(Trained {
        model,
        regions,
        history,
        kept_epoch,
        steps: step,
        dsu: layers.into_iter().map(|(p, l)| (p, l.diagnostics().clone())).collect(),
    })
}
