//! Run configuration: model variant, dimensions, optimizer and loss
//! hyper-parameters, sampling thresholds and the GAN schedule.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HecoError, Result};
use crate::hin::{HeteroGraph, SampleMode, SchemaSampleConfig};
use crate::negatives::GanScheduleConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Heco,
    Hecopp,
    HecoSc,
    HecoMp,
    HecoMu,
    HecoGan,
    HecoppSemi,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Heco => "heco",
            Variant::Hecopp => "hecopp",
            Variant::HecoSc => "heco_sc",
            Variant::HecoMp => "heco_mp",
            Variant::HecoMu => "heco_mu",
            Variant::HecoGan => "heco_gan",
            Variant::HecoppSemi => "hecopp_semi",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "heco" => Ok(Variant::Heco),
            "hecopp" => Ok(Variant::Hecopp),
            "heco_sc" => Ok(Variant::HecoSc),
            "heco_mp" => Ok(Variant::HecoMp),
            "heco_mu" => Ok(Variant::HecoMu),
            "heco_gan" => Ok(Variant::HecoGan),
            "hecopp_semi" => Ok(Variant::HecoppSemi),
            other => Err(HecoError::Config(format!("unknown variant '{other}'"))),
        }
    }

    /// Which views this variant encodes.
    pub fn needs_views(&self) -> (bool, bool) {
        match self {
            Variant::HecoSc => (true, false),
            Variant::HecoMp => (false, true),
            _ => (true, true),
        }
    }

    /// Downstream embeddings come from the meta-path view, except for the
    /// schema-only variant.
    pub fn downstream_view(&self) -> &'static str {
        match self {
            Variant::HecoSc => "sc",
            _ => "mp",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-type schema sampling threshold: a count, or "all" to aggregate every
/// neighbor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SampleSetting {
    Count(usize),
    Mode(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub variant: Variant,
    pub dim: usize,
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub feat_drop: f64,
    pub attn_drop: f64,
    pub tau: f64,
    pub tau_sc: f64,
    pub tau_mp: f64,
    pub lambda: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub aleph: f64,
    pub t_pos: usize,
    /// T per neighbor type name; types absent here aggregate all neighbors.
    pub schema_sample: BTreeMap<String, SampleSetting>,
    pub mixup_k: usize,
    pub gan: GanScheduleConfig,
    pub projection_layers: usize,
    /// Label rate (per class) whose train split supplies Y_L in the
    /// semi-supervised variant.
    pub semi_label_rate: usize,
    /// Row-L2-normalize dense input features at load time.
    pub feature_l2norm: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: Variant::Heco,
            dim: 64,
            lr: 8e-4,
            epochs: 200,
            patience: 50,
            feat_drop: 0.3,
            attn_drop: 0.5,
            tau: 0.7,
            tau_sc: 0.7,
            tau_mp: 0.7,
            lambda: 0.5,
            lambda1: 0.5,
            lambda2: 0.5,
            aleph: 0.5,
            t_pos: 7,
            schema_sample: BTreeMap::new(),
            mixup_k: 2,
            gan: GanScheduleConfig::default(),
            projection_layers: 1,
            semi_label_rate: 20,
            feature_l2norm: false,
            seed: 0,
        }
    }
}

fn in_rate_range(v: f64) -> bool {
    v == 0.0 || (0.1..=0.5).contains(&v)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(HecoError::Config("dim must be >= 1".into()));
        }
        if !(1e-4..=5e-3).contains(&self.lr) {
            return Err(HecoError::Config(format!(
                "lr must lie in [1e-4, 5e-3], got {}",
                self.lr
            )));
        }
        if !(5..=50).contains(&self.patience) {
            return Err(HecoError::Config(format!(
                "patience must lie in [5, 50], got {}",
                self.patience
            )));
        }
        if self.epochs < 1 {
            return Err(HecoError::Config("epochs must be >= 1".into()));
        }
        for (name, v) in [("feat_drop", self.feat_drop), ("attn_drop", self.attn_drop)] {
            if !in_rate_range(v) {
                return Err(HecoError::Config(format!(
                    "{name} must be 0 (off) or in [0.1, 0.5], got {v}"
                )));
            }
        }
        for (name, v) in [("tau", self.tau), ("tau_sc", self.tau_sc), ("tau_mp", self.tau_mp)] {
            if v <= 0.0 {
                return Err(HecoError::Config(format!("{name} must be > 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(HecoError::Config("lambda must lie in [0, 1]".into()));
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if v != 0.0 && !(1e-9..=1e2).contains(&v) {
                return Err(HecoError::Config(format!(
                    "{name} must be 0 or in [1e-9, 1e2], got {v}"
                )));
            }
        }
        if self.aleph < 0.0 {
            return Err(HecoError::Config("aleph must be >= 0".into()));
        }
        if self.t_pos < 1 {
            return Err(HecoError::Config("t_pos must be >= 1".into()));
        }
        if self.mixup_k < 1 {
            return Err(HecoError::Config("mixup_k must be >= 1".into()));
        }
        if self.projection_layers < 1 {
            return Err(HecoError::Config("projection_layers must be >= 1".into()));
        }
        for (t, s) in &self.schema_sample {
            match s {
                SampleSetting::Count(c) if *c >= 1 => {}
                SampleSetting::Mode(m) if m == "all" => {}
                _ => {
                    return Err(HecoError::Config(format!(
                        "schema_sample.{t} must be a count >= 1 or \"all\""
                    )));
                }
            }
        }
        self.gan.validate()?;
        Ok(())
    }

    /// Resolve the per-type sampling table against a graph's type names.
    pub fn schema_sample_config(&self, g: &HeteroGraph) -> Result<SchemaSampleConfig> {
        let mut per_type = BTreeMap::new();
        for (name, setting) in &self.schema_sample {
            let idx = g.type_index(name)?;
            let mode = match setting {
                SampleSetting::Count(c) => SampleMode::Sample(*c),
                SampleSetting::Mode(_) => SampleMode::All,
            };
            per_type.insert(idx, mode);
        }
        Ok(SchemaSampleConfig { per_type })
    }

    pub fn loss_config(&self) -> crate::contrast::LossConfig {
        crate::contrast::LossConfig {
            tau: self.tau,
            tau_sc: self.tau_sc,
            tau_mp: self.tau_mp,
            lambda: self.lambda,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            aleph: self.aleph,
        }
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HecoError::io(path.display().to_string(), e))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| HecoError::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        Ok(cfg)
    }

    /// Canonical serialized form; the basis of the checkpoint config hash.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn config_hash(&self) -> String {
        format!("{:016x}", fnv1a64(self.canonical_toml().as_bytes()))
    }
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
