use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::adaptation::{DEFAULT_OMEGA, DEFAULT_SCOPE};
use crate::dsu::DsuConfig;
use crate::error::{Error, Result};
use crate::synth::SynthConfig;

use super::model::ModelSpec;

pub const SEED_ENV: &str = "DSU_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Share of the source data held back for early stopping.
    pub validation_fraction: f64,
    /// Epochs without validation improvement before stopping; 0 disables
    /// early stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 64,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
            validation_fraction: 0.1,
            patience: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptationConfig {
    pub enabled: bool,
    pub n: f64,
    pub omega: f64,
    pub positions: Vec<usize>,
    /// Refuse degenerate regions instead of using them.
    pub strict: bool,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            n: DEFAULT_SCOPE,
            omega: DEFAULT_OMEGA,
            positions: vec![0, 1],
            strict: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub projections: usize,
    /// Position whose features feed the domain distances; defaults to the
    /// last one.
    pub distance_position: Option<usize>,
    /// Standardize every feature dimension by the pooled source statistics
    /// before measuring distances.
    pub standardize: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            projections: 64,
            distance_position: None,
            standardize: true,
        }
    }
}

/// Everything one experiment needs, loaded from a single TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// First run seed. Runs use `seed, seed + 1, ...`.
    pub seed: u64,
    pub runs: usize,
    pub held_out: String,
    pub data: SynthConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub dsu: DsuConfig,
    pub adaptation: AdaptationConfig,
    pub report: ReportConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            runs: 10,
            held_out: "target".into(),
            data: SynthConfig::default(),
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            dsu: DsuConfig::default(),
            adaptation: AdaptationConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

impl Config {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.runs as u64).map(|i| self.seed + i).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let positions = self.model.positions();
        if self.dsu.enabled {
            self.dsu.validate(&positions)?;
            if self.train.batch_size < 2 {
                return Err(Error::Config("train.batch_size must be >= 2 when dsu is enabled".into()));
            }
        }
        if self.train.batch_size == 0 || self.train.epochs == 0 {
            return Err(Error::Config("train.batch_size and train.epochs must be positive".into()));
        }
        if !(self.train.lr > 0.0) || !(0.0..1.0).contains(&self.train.momentum) {
            return Err(Error::Config("train.lr must be positive and train.momentum in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.train.validation_fraction) {
            return Err(Error::Config("train.validation_fraction must be in [0, 1)".into()));
        }
        if self.adaptation.enabled {
            if let Some(bad) = self.adaptation.positions.iter().find(|p| !positions.contains(p)) {
                return Err(Error::Config(format!(
                    "adaptation.positions contains {bad}, model declares {positions:?}"
                )));
            }
            if !(self.adaptation.n >= 0.0) || !(0.0..=1.0).contains(&self.adaptation.omega) {
                return Err(Error::Config("adaptation.n must be >= 0 and adaptation.omega in [0, 1]".into()));
            }
        }
        if self.model.input != [self.data.channels, self.data.height, self.data.width]
            || self.model.classes != self.data.classes
        {
            return Err(Error::Config("model.input / model.classes disagree with the data section".into()));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Parse TOML text, apply `key=value` overrides and the seed variable.
    pub fn from_toml(text: &str, overrides: &[String], env_seed: Option<&str>) -> Result<Self> {
        let mut root: Value = toml::from_str::<toml::Table>(text)?.into();
        for item in overrides {
            let item = item.trim_start_matches("--");
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
            set_path(&mut root, key, parse_value(raw))?;
        }
        if let Some(seed) = env_seed {
            let seed: i64 = seed
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={seed:?} is not an integer")))?;
            set_path(&mut root, "seed", Value::Integer(seed))?;
        }
        let cfg: Config = root.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        let env = std::env::var(SEED_ENV).ok();
        Self::from_toml(&text, overrides, env.as_deref())
    }
}

/// Interpret an override value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {part:?} is not inside a table")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Default::default()));
    }
    Err(Error::Config("empty override key".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(Config::from_toml("", &[], None).unwrap(), Config::default());
    }

    #[test]
    fn overrides_and_seed_variable() {
        let cfg = Config::from_toml(
            "[dsu]\np = 0.2\n",
            &["--dsu.p=0.7".into(), "train.epochs=3".into(), "dsu.positions=[0]".into(), "held_out=source1".into()],
            Some("42"),
        )
        .unwrap();
        assert_eq!(cfg.dsu.p, 0.7);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.dsu.positions, vec![0]);
        assert_eq!(cfg.held_out, "source1");
        assert_eq!(cfg.seed, 42);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        for bad in ["dsu.q=1", "dsu.p=2.0", "train.batch_size=1", "nokey"] {
            let err = Config::from_toml("", &[bad.into()], None).unwrap_err();
            assert_eq!(err.category(), "config", "{bad}");
        }
        assert!(Config::from_toml("", &[], Some("x")).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = Config::default();
        assert_eq!(Config::from_toml(&cfg.to_toml().unwrap(), &[], None).unwrap(), cfg);
    }
}
