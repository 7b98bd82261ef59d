//! The pipeline configuration file: plain-text `key = value` lines with JSON
//! values. Every knob has a default, unknown keys are rejected, and the
//! whole thing hashes to one hex string that stamps every artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use moocpred_core::dropout::FilterConfig;
use moocpred_core::experiments::{RunConfig, SettingKind, SETTINGS};
use moocpred_core::features::FeatureConfig;
use moocpred_core::meta::MetaConfig;
use moocpred_core::models::{
    ArchKind, ArchitectureSpec, FineTuneConfig, SearchGrid, TrainConfig,
};

use crate::{read_text, Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Corpus directory; generated from `scenario` when absent.
    pub corpus: PathBuf,
    /// Output directory for artifacts, manifests, and reports.
    pub out: PathBuf,
    /// Bundled scenario name or scenario JSON path.
    pub scenario: Option<String>,
    pub seed: u64,
    /// Early prediction horizons, fractions of the course duration.
    pub levels: Vec<f64>,
    pub archs: Vec<ArchKind>,
    pub settings: Vec<SettingKind>,
    /// Target course ids; empty means the newest iteration of every set.
    pub targets: Vec<String>,
    /// Run the meta ablation for each target alongside the settings.
    pub ablation: bool,
    /// Summarize the dual-attention model's weights for each target.
    /// Requires `bsm` among the archs.
    pub attention: bool,

    pub bilstm_layers: usize,
    pub bilstm_units: usize,
    pub head_dense: Vec<usize>,
    pub attention_hidden: usize,
    pub projection_width: usize,
    pub dropout: f64,
    pub bptt_window: Option<usize>,

    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Grid-search architectures instead of training the template as-is.
    pub grid: bool,

    pub fine_tune_lr: f64,
    pub fine_tune_max_epochs: usize,

    pub session_gap_s: i64,
    pub terminal_credit_s: f64,
    pub pass_threshold: f64,

    pub title_dim: usize,
    pub short_dim: usize,
    pub long_dim: usize,
    pub embed_seed: u64,

    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let ft = FineTuneConfig::default();
        let features = FeatureConfig::default();
        let meta = MetaConfig::default();
        PipelineConfig {
            corpus: PathBuf::from("corpus"),
            out: PathBuf::from("run"),
            scenario: None,
            seed: 7,
            levels: vec![0.4, 0.6],
            archs: vec![ArchKind::Bo, ArchKind::Btm, ArchKind::Bsm],
            settings: SETTINGS.to_vec(),
            targets: Vec::new(),
            ablation: false,
            attention: false,
            bilstm_layers: 1,
            bilstm_units: 64,
            head_dense: vec![256, 64],
            attention_hidden: 64,
            projection_width: 256,
            dropout: 0.1,
            bptt_window: None,
            batch_size: train.batch_size,
            lr: train.lr,
            max_epochs: train.max_epochs,
            patience: train.patience,
            grid: false,
            fine_tune_lr: ft.lr,
            fine_tune_max_epochs: ft.max_epochs,
            session_gap_s: features.session_gap_s,
            terminal_credit_s: features.terminal_credit_s,
            pass_threshold: features.pass_threshold,
            title_dim: meta.title_dim,
            short_dim: meta.short_dim,
            long_dim: meta.long_dim,
            embed_seed: meta.embed_seed,
            jobs: 1,
        }
    }
}

impl PipelineConfig {
    /// Parses `key = value` lines; `#` starts a comment line, values are
    /// JSON. Unknown keys and malformed values are rejected with the line.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut map = serde_json::Map::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::format(path, format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim().to_string();
            let value: serde_json::Value = serde_json::from_str(value.trim()).map_err(|e| {
                Error::format(path, format!("line {}: value for {key}: {e}", lineno + 1))
            })?;
            if map.insert(key.clone(), value).is_some() {
                return Err(Error::format(
                    path,
                    format!("line {}: duplicate key {key}", lineno + 1),
                ));
            }
        }
        let cfg: PipelineConfig = serde_json::from_value(serde_json::Value::Object(map))
            .map_err(|e| Error::format(path, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }

    pub fn validate(&self) -> Result<()> {
        for &level in &self.levels {
            if !(level > 0.0 && level <= 1.0) {
                return Err(Error::config(format!("level {level} outside (0, 1]")));
            }
        }
        if self.levels.is_empty() {
            return Err(Error::config("levels must not be empty"));
        }
        if self.archs.is_empty() || self.settings.is_empty() {
            return Err(Error::config("archs and settings must not be empty"));
        }
        if self.jobs == 0 {
            return Err(Error::config("jobs must be at least 1"));
        }
        if self.attention && !self.archs.contains(&ArchKind::Bsm) {
            return Err(Error::config(
                "attention summaries need the bsm arch in `archs`",
            ));
        }
        Ok(())
    }

    pub fn meta_config(&self) -> MetaConfig {
        MetaConfig {
            title_dim: self.title_dim,
            short_dim: self.short_dim,
            long_dim: self.long_dim,
            embed_seed: self.embed_seed,
        }
    }

    /// Architecture template for one model kind. The seed is a placeholder;
    /// runners derive their own.
    pub fn template(&self, kind: ArchKind) -> ArchitectureSpec {
        let mut spec = match kind {
            ArchKind::Bo => ArchitectureSpec::bo(self.bilstm_layers, self.bilstm_units, 0),
            ArchKind::Btm => ArchitectureSpec::btm(self.bilstm_layers, self.bilstm_units, 0),
            ArchKind::Bsm => ArchitectureSpec::bsm(
                self.bilstm_layers,
                self.bilstm_units,
                self.head_dense.clone(),
                0,
            ),
        };
        spec.attention_hidden = self.attention_hidden;
        spec.projection_width = self.projection_width;
        spec.dropout = self.dropout;
        spec.bptt_window = self.bptt_window;
        spec.meta_config = self.meta_config();
        spec
    }

    pub fn run_config(&self, level: f64) -> RunConfig {
        let mut run = RunConfig::new(level, self.seed);
        run.train = TrainConfig {
            batch_size: self.batch_size,
            lr: self.lr,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: 0,
        };
        run.fine_tune = FineTuneConfig {
            lr: self.fine_tune_lr,
            batch_size: self.batch_size,
            max_epochs: self.fine_tune_max_epochs,
            patience: self.patience,
            ..FineTuneConfig::default()
        };
        run.filter = FilterConfig::default();
        run.features = FeatureConfig {
            session_gap_s: self.session_gap_s,
            terminal_credit_s: self.terminal_credit_s,
            pass_threshold: self.pass_threshold,
        };
        run.grid = self.grid.then(SearchGrid::default);
        run
    }

    /// Hex digest of the canonical JSON form; stamps every artifact so
    /// stale outputs are detectable.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canon.as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}
