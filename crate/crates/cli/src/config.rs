//! Effective run configuration.
//!
//! Precedence, lowest first: built-in defaults, the desk-scale preset (when
//! `desk_scale` is set by file or flag), the `--config` file, command-line
//! flags, then the ablation overrides.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use lesicin::model::{EncoderKind, ModelConfig};
use lesicin::training::{TrainingConfig, Weighting};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
pub enum Ablation {
    #[serde(rename = "full")]
    #[value(name = "full")]
    Full,
    /// Lookup table instead of the metapath encoder.
    #[value(name = "E")]
    E,
    /// No structural loss.
    #[value(name = "S")]
    S,
    /// Vanilla weighting.
    #[value(name = "V")]
    V,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub desk_scale: bool,
    pub ablation: Ablation,
    pub ratios: [f64; 3],
    #[serde(flatten)]
    pub training: TrainingConfig,
    #[serde(flatten)]
    pub model: ModelConfig,
}

/// Command-line values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub ablation: Option<Ablation>,
    pub tau: Option<f64>,
    pub eta: Option<f64>,
    pub desk_scale: bool,
}

impl RunConfig {
    fn base(desk_scale: bool) -> Self {
        RunConfig {
            desk_scale,
            ablation: Ablation::Full,
            ratios: [0.64, 0.16, 0.20],
            training: TrainingConfig::default(),
            model: if desk_scale {
                ModelConfig::desk_scale()
            } else {
                ModelConfig::default()
            },
        }
    }

    pub fn resolve(file: Option<&Path>, cli: &Overrides) -> Result<Self> {
        let table: toml::Table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                text.parse().with_context(|| format!("parsing {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        let desk = cli.desk_scale || table.get("desk_scale").and_then(toml::Value::as_bool).unwrap_or(false);
        let mut merged = toml::Table::try_from(Self::base(desk))?;
        let known: BTreeSet<String> = merged.keys().cloned().collect();
        for (k, v) in table {
            if !known.contains(&k) {
                bail!("unknown configuration key `{k}`");
            }
            merged.insert(k, v);
        }
        let mut cfg: RunConfig = toml::Value::Table(merged).try_into().context("invalid configuration")?;
        cfg.desk_scale = desk;
        if let Some(s) = cli.seed {
            cfg.training.seed = s;
        }
        if let Some(a) = cli.ablation {
            cfg.ablation = a;
        }
        if let Some(t) = cli.tau {
            cfg.training.tau = t;
        }
        if let Some(e) = cli.eta {
            cfg.training.eta = e;
        }
        cfg.apply_ablation();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_ablation(&mut self) {
        match self.ablation {
            Ablation::Full => {}
            Ablation::E => self.model.encoder = EncoderKind::Lookup,
            Ablation::S => self.training.theta_s = 0.0,
            Ablation::V => self.training.weighting = Weighting::Vws,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        self.model.validate()?;
        lesicin::split::SplitSpec::new(self.ratios, self.training.seed)?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}
