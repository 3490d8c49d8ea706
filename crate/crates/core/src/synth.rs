//! Multi-domain synthetic classification data.
//!
//! Each class has a content prototype over `[C, H, W]`; a sample is the
//! prototype plus isotropic content noise. Each domain then applies its own
//! per-channel style `x <- a ⊙ x + t` and adds observation noise. Domains
//! share content and differ only in style, so a held-out domain is a pure
//! feature-statistics shift. The held-out target style is placed outside the
//! bounding box (hence the convex hull) of the source styles.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;
use crate::tnsr::{self, Dtype};

/// Parameters from which a [`TaskSpec`] is drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub source_domains: usize,
    pub samples_per_class: usize,
    pub seed: u64,
    /// Std of the per-pixel content noise around a prototype.
    pub content_noise: f64,
    /// Std of the per-channel mean offset of each prototype.
    pub prototype_mean_spread: f64,
    /// Std of log style scales across source domains.
    pub log_scale_spread: f64,
    /// Std of style shifts across source domains.
    pub shift_spread: f64,
    /// How far beyond the source range the target style is placed, in units
    /// of the corresponding spread.
    pub target_margin: f64,
    pub observation_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            channels: 8,
            height: 4,
            width: 4,
            source_domains: 3,
            samples_per_class: 500,
            seed: 0,
            content_noise: 3.0,
            prototype_mean_spread: 0.0,
            log_scale_spread: 0.5,
            shift_spread: 2.0,
            target_margin: 2.0,
            observation_noise: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub id: String,
    /// Per-channel style scale, strictly positive.
    pub scale: Vec<f64>,
    /// Per-channel style shift.
    pub shift: Vec<f64>,
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub classes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// One `C*H*W` mean per class, row-major.
    pub prototypes: Vec<Vec<f64>>,
    pub content_noise: f64,
    /// Sources first; by convention the last domain is the held-out target.
    pub domains: Vec<DomainSpec>,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl TaskSpec {
    pub fn from_config(cfg: &SynthConfig) -> Result<Self> {
        if cfg.classes < 2 || cfg.channels == 0 || cfg.height == 0 || cfg.width == 0 {
            return Err(Error::Config("synthetic task needs >= 2 classes and non-empty maps".into()));
        }
        if cfg.source_domains < 2 {
            return Err(Error::Config("need at least two source domains".into()));
        }
        let (c, hw) = (cfg.channels, cfg.height * cfg.width);
        let mut proto_rng = rng::stream(cfg.seed, "synth/prototypes");
        let prototypes = (0..cfg.classes)
            .map(|_| {
                let mut p = rng::standard_normal(&mut proto_rng, [c * hw]).into_data();
                let offsets = rng::standard_normal(&mut proto_rng, [c]).into_data();
                for (ch, plane) in p.chunks_exact_mut(hw).enumerate() {
                    let m = plane.iter().sum::<f64>() / hw as f64;
                    plane
                        .iter_mut()
                        .for_each(|v| *v += cfg.prototype_mean_spread * offsets[ch] - m);
                }
                p
            })
            .collect();

        let mut style_rng = rng::stream(cfg.seed, "synth/styles");
        let mut domains: Vec<DomainSpec> = (0..cfg.source_domains)
            .map(|d| {
                let log_a = rng::standard_normal(&mut style_rng, [c]).scale(cfg.log_scale_spread);
                let t = rng::standard_normal(&mut style_rng, [c]).scale(cfg.shift_spread);
                DomainSpec {
                    id: format!("source{}", d + 1),
                    scale: log_a.data().iter().map(|v| v.exp()).collect(),
                    shift: t.into_data(),
                    noise: cfg.observation_noise,
                }
            })
            .collect();

        let signs = rng::standard_normal(&mut style_rng, [2 * c]).into_data();
        let mut target_scale = Vec::with_capacity(c);
        let mut target_shift = Vec::with_capacity(c);
        for ch in 0..c {
            let logs: Vec<f64> = domains.iter().map(|d| d.scale[ch].ln()).collect();
            let shifts: Vec<f64> = domains.iter().map(|d| d.shift[ch]).collect();
            target_scale.push(beyond(&logs, signs[ch], cfg.target_margin * cfg.log_scale_spread).exp());
            target_shift.push(beyond(&shifts, signs[c + ch], cfg.target_margin * cfg.shift_spread));
        }
        domains.push(DomainSpec {
            id: "target".into(),
            scale: target_scale,
            shift: target_shift,
            noise: cfg.observation_noise,
        });

        let task = Self {
            classes: cfg.classes,
            channels: cfg.channels,
            height: cfg.height,
            width: cfg.width,
            prototypes,
            content_noise: cfg.content_noise,
            domains,
            samples_per_class: cfg.samples_per_class,
            seed: cfg.seed,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn feature_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn domain_index(&self, id: &str) -> Result<usize> {
        self.domains
            .iter()
            .position(|d| d.id == id)
            .ok_or_else(|| Error::UnknownDomain(id.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.prototypes.len() != self.classes {
            return Err(Error::Dimension(self.classes, self.prototypes.len()));
        }
        if let Some(p) = self.prototypes.iter().find(|p| p.len() != self.feature_len()) {
            return Err(Error::Dimension(self.feature_len(), p.len()));
        }
        for i in 0..self.classes {
            for j in (i + 1)..self.classes {
                if self.prototypes[i] == self.prototypes[j] {
                    return Err(Error::Config(format!("class prototypes {i} and {j} coincide")));
                }
            }
        }
        if self.domains.len() < 3 {
            return Err(Error::Config("need >= 2 source domains plus a target".into()));
        }
        for d in &self.domains {
            if d.scale.len() != self.channels || d.shift.len() != self.channels {
                return Err(Error::Config(format!("domain {} style has the wrong channel count", d.id)));
            }
            if d.scale.iter().any(|&a| !(a > 0.0)) {
                return Err(Error::Config(format!("domain {} has a non-positive style scale", d.id)));
            }
        }
        if self.samples_per_class == 0 {
            return Err(Error::Config("samples_per_class must be positive".into()));
        }
        Ok(())
    }
}

/// A point outside `[min, max]` of `values` by `margin`, on the side picked
/// by the sign of `side`.
fn beyond(values: &[f64], side: f64, margin: f64) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if side >= 0.0 {
        hi + margin
    } else {
        lo - margin
    }
}

/// Labeled samples of one or more domains.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[M, C, H, W]`
    pub x: Tensor,
    pub labels: Vec<usize>,
    /// Index into the task's domain list, per sample.
    pub domains: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        Ok(Dataset {
            x: self.x.select_rows(rows)?,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            domains: rows.iter().map(|&r| self.domains[r]).collect(),
        })
    }

    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let xs: Vec<&Tensor> = parts.iter().map(|d| &d.x).collect();
        Ok(Dataset {
            x: Tensor::concat_rows(&xs)?,
            labels: parts.iter().flat_map(|d| d.labels.iter().copied()).collect(),
            domains: parts.iter().flat_map(|d| d.domains.iter().copied()).collect(),
        })
    }

    /// Samples belonging to one domain index.
    pub fn domain(&self, index: usize) -> Result<Dataset> {
        let rows: Vec<usize> = (0..self.len()).filter(|&i| self.domains[i] == index).collect();
        self.subset(&rows)
    }
}

/// All domains of a task, in task order.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiDomain {
    pub task: TaskSpec,
    pub domains: Vec<Dataset>,
}

fn generate_domain(task: &TaskSpec, index: usize, rng: &mut Rng) -> Result<Dataset> {
    let spec = &task.domains[index];
    let (c, hw) = (task.channels, task.height * task.width);
    let len = task.feature_len();
    let total = task.classes * task.samples_per_class;
    let mut data = Vec::with_capacity(total * len);
    let mut labels = Vec::with_capacity(total);
    for k in 0..task.classes {
        for _ in 0..task.samples_per_class {
            let content = rng::standard_normal(rng, [len]);
            let noise = rng::standard_normal(rng, [len]);
            for i in 0..len {
                let ch = i / hw;
                let v = task.prototypes[k][i] + task.content_noise * content.data()[i];
                data.push(spec.scale[ch] * v + spec.shift[ch] + spec.noise * noise.data()[i]);
            }
            labels.push(k);
        }
    }
    debug_assert_eq!(c * hw, len);
    Ok(Dataset {
        x: Tensor::new([total, task.channels, task.height, task.width], data)?,
        labels,
        domains: vec![index; total],
    })
}

/// Draw every domain. Each domain uses its own stream, so output is
/// independent of generation order.
pub fn generate(task: &TaskSpec) -> Result<MultiDomain> {
    task.validate()?;
    let domains = (0..task.domains.len())
        .map(|i| {
            let mut rng = rng::stream(task.seed, &format!("synth/domain/{}", task.domains[i].id));
            generate_domain(task, i, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiDomain {
        task: task.clone(),
        domains,
    })
}

/// Leave-one-domain-out split: every other domain for training, `held_out`
/// for testing.
pub fn lodo_split(data: &MultiDomain, held_out: &str) -> Result<(Dataset, Dataset)> {
    let target = data.task.domain_index(held_out)?;
    let train: Vec<&Dataset> = data
        .domains
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target)
        .map(|(_, d)| d)
        .collect();
    Ok((Dataset::concat(&train)?, data.domains[target].clone()))
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    task: TaskSpec,
    domains: BTreeMap<String, ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    index: usize,
    samples: usize,
    features: String,
    labels: String,
    class_counts: Vec<usize>,
}

/// Write every domain as `<id>.x.tnsr` / `<id>.labels.tnsr` plus
/// `manifest.toml`.
pub fn save(data: &MultiDomain, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut entries = BTreeMap::new();
    for (i, (spec, ds)) in data.task.domains.iter().zip(&data.domains).enumerate() {
        let features = format!("{}.x.tnsr", spec.id);
        let labels = format!("{}.labels.tnsr", spec.id);
        tnsr::write(dir.join(&features), &ds.x, Dtype::F64)?;
        let lab = Tensor::new([ds.len()], ds.labels.iter().map(|&l| l as f64).collect())?;
        tnsr::write(dir.join(&labels), &lab, Dtype::F64)?;
        let mut class_counts = vec![0; data.task.classes];
        ds.labels.iter().for_each(|&l| class_counts[l] += 1);
        entries.insert(
            spec.id.clone(),
            ManifestEntry {
                index: i,
                samples: ds.len(),
                features,
                labels,
                class_counts,
            },
        );
    }
    let manifest = Manifest {
        task: data.task.clone(),
        domains: entries,
    };
    fs::write(dir.join("manifest.toml"), toml::to_string(&manifest)?)?;
    Ok(())
}

pub fn load(dir: impl AsRef<Path>) -> Result<MultiDomain> {
    let dir = dir.as_ref();
    let manifest: Manifest = toml::from_str(&fs::read_to_string(dir.join("manifest.toml"))?)?;
    manifest.task.validate()?;
    let mut domains = Vec::with_capacity(manifest.task.domains.len());
    for (i, spec) in manifest.task.domains.iter().enumerate() {
        let entry = manifest
            .domains
            .get(&spec.id)
            .ok_or_else(|| Error::Format(format!("manifest lacks domain {}", spec.id)))?;
        let x = tnsr::read(dir.join(&entry.features))?;
        let labels: Vec<usize> = tnsr::read(dir.join(&entry.labels))?
            .data()
            .iter()
            .map(|&v| v as usize)
            .collect();
        if x.shape()[0] != labels.len() || labels.len() != entry.samples {
            return Err(Error::Format(format!("domain {} sample counts disagree", spec.id)));
        }
        domains.push(Dataset {
            domains: vec![i; labels.len()],
            x,
            labels,
        });
    }
    Ok(MultiDomain {
        task: manifest.task,
        domains,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            samples_per_class: 20,
            ..Default::default()
        }
    }

    #[test]
    fn identity_style_without_noise_gives_prototype_draws() {
        let mut task = TaskSpec::from_config(&small()).unwrap();
        for d in &mut task.domains {
            d.scale = vec![1.0; task.channels];
            d.shift = vec![0.0; task.channels];
            d.noise = 0.0;
        }
        task.content_noise = 0.0;
        let data = generate(&task).unwrap();
        let first = data.domains[0].x.select_rows(&[0]).unwrap();
        assert_eq!(first.data(), task.prototypes[0].as_slice());
    }

    #[test]
    fn target_style_leaves_source_range() {
        let task = TaskSpec::from_config(&SynthConfig::default()).unwrap();
        let (sources, target) = task.domains.split_at(task.domains.len() - 1);
        for ch in 0..task.channels {
            let lo = sources.iter().map(|d| d.shift[ch]).fold(f64::INFINITY, f64::min);
            let hi = sources.iter().map(|d| d.shift[ch]).fold(f64::NEG_INFINITY, f64::max);
            assert!(target[0].shift[ch] < lo || target[0].shift[ch] > hi);
        }
    }

    #[test]
    fn same_seed_same_bits() {
        let task = TaskSpec::from_config(&small()).unwrap();
        assert_eq!(generate(&task).unwrap(), generate(&task).unwrap());
    }

    #[test]
    fn split_partitions_by_domain() {
        let data = generate(&TaskSpec::from_config(&small()).unwrap()).unwrap();
        let (train, test) = lodo_split(&data, "target").unwrap();
        assert_eq!(train.len(), 3 * 4 * 20);
        assert_eq!(test.len(), 4 * 20);
        assert!(train.domains.iter().all(|&d| d < 3));
        assert!(test.domains.iter().all(|&d| d == 3));
        assert!(matches!(lodo_split(&data, "nope"), Err(Error::UnknownDomain(_))));
    }

    #[test]
    fn rejects_bad_specs() {
        let mut task = TaskSpec::from_config(&small()).unwrap();
        task.domains[0].scale[0] = 0.0;
        assert!(task.validate().is_err());
        assert!(TaskSpec::from_config(&SynthConfig { source_domains: 1, ..small() }).is_err());
    }
}
