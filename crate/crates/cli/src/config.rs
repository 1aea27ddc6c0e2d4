//! Run configuration: an optional TOML file, then command-line overrides.
//!
//! Every command writes the fully resolved config next to its outputs, and
//! feeding that file back through `--config` replays the run.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use oracle_core::ingest::SynthProfile;
use oracle_core::model::{ModelConfig, TrainConfig};
use oracle_core::WdMode;
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "ORACLE_SEED";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub paths: Paths,
    pub prep: PrepSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub generate: GenerateSection,
    pub eval: EvalSection,
    pub export: ExportSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub raw: Vec<PathBuf>,
    pub train: Option<PathBuf>,
    pub against: Option<PathBuf>,
    pub generated: Vec<PathBuf>,
    pub condition_on: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepSection {
    pub synthetic: Option<usize>,
    pub profile: SynthProfile,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    #[default]
    Full,
}

/// A preset plus individual overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Preset,
    pub hidden: Option<usize>,
    pub latent: Option<usize>,
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub ffn_mult: Option<usize>,
    pub dropout: Option<f64>,
    pub kl_weight: Option<f64>,
    pub contrastive_weight: Option<f64>,
}

impl ModelSection {
    pub fn resolve(&self) -> anyhow::Result<ModelConfig> {
        let mut m = match self.preset {
            Preset::Desk => ModelConfig::desk(),
            Preset::Full => ModelConfig::full(),
        };
        if let Some(v) = self.hidden {
            m.hidden = v;
        }
        if let Some(v) = self.latent {
            m.latent = v;
        }
        if let Some(v) = self.layers {
            m.layers = v;
        }
        if let Some(v) = self.heads {
            m.heads = v;
        }
        if let Some(v) = self.ffn_mult {
            m.ffn_mult = v;
        }
        if let Some(v) = self.dropout {
            m.dropout = v;
        }
        if let Some(v) = self.kl_weight {
            m.kl_weight = v;
        }
        if let Some(v) = self.contrastive_weight {
            m.contrastive_weight = v;
        }
        m.validate()?;
        Ok(m)
    }

    /// Pins every field so the echo does not depend on preset defaults.
    pub fn pin(&mut self, m: &ModelConfig) {
        self.hidden = Some(m.hidden);
        self.latent = Some(m.latent);
        self.layers = Some(m.layers);
        self.heads = Some(m.heads);
        self.ffn_mult = Some(m.ffn_mult);
        self.dropout = Some(m.dropout);
        self.kl_weight = Some(m.kl_weight);
        self.contrastive_weight = Some(m.contrastive_weight);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_frac: f64,
    pub grad_clip: f64,
    pub contrastive: bool,
    pub tries: usize,
    pub mining_pool: usize,
    pub mining_temperature: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            warmup_frac: t.warmup_frac,
            grad_clip: t.grad_clip,
            contrastive: t.contrastive,
            tries: t.tries,
            mining_pool: t.mining_pool,
            mining_temperature: t.mining_temperature,
        }
    }
}

impl TrainSection {
    pub fn resolve(&self, seed: u64) -> anyhow::Result<TrainConfig> {
        let t = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            warmup_frac: self.warmup_frac,
            grad_clip: self.grad_clip,
            seed,
            contrastive: self.contrastive,
            tries: self.tries,
            mining_pool: self.mining_pool,
            mining_temperature: self.mining_temperature,
        };
        t.validate()?;
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub count: usize,
    pub temperature: f64,
    /// `HH:MM-HH:MM=Activity` specs.
    pub fix: Vec<String>,
    pub reject_implausible: u32,
    pub plans: bool,
    /// Share of bins left free when conditioning on reference days.
    pub masked_fraction: f64,
}

impl Default for GenerateSection {
    fn default() -> Self {
        GenerateSection {
            count: 100,
            temperature: 1.0,
            fix: Vec::new(),
            reject_implausible: 0,
            plans: false,
            masked_fraction: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub k: usize,
    pub wd_mode: WdMode,
    pub distinct: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let o = oracle_core::EvalOptions::default();
        EvalSection { k: o.k, wd_mode: o.wd_mode, distinct: o.distinct_ns }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportSection {
    /// Day to dump attention for; the first day when unset.
    pub day: Option<String>,
    pub fix: Vec<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Flag, then config file, then `ORACLE_SEED`, then 0.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> anyhow::Result<u64> {
        let seed = match flag.or(self.seed) {
            Some(s) => s,
            None => match std::env::var(SEED_ENV) {
                Ok(v) => v.trim().parse().with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer"))?,
                Err(std::env::VarError::NotPresent) => 0,
                Err(e) => bail!("{SEED_ENV}: {e}"),
            },
        };
        self.seed = Some(seed);
        Ok(seed)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// Writes `<out>/<command>.config.toml`.
    pub fn write_effective(&self, command: &str) -> anyhow::Result<PathBuf> {
        let path = self.out_dir().join(format!("{command}.config.toml"));
        std::fs::write(&path, self.to_toml()).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
