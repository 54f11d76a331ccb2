//! Flat `key = value` run configuration.
//!
//! One file drives every subcommand. Section prefixes keep the model matrix
//! declarative: `nn1.embed_dim = 9`, `gbdt2.max_depth = 5`, and so on. Any
//! key not listed below is rejected. When no `nnN.*` keys appear the default
//! variant matrix is used: embedding sizes {9, 15, 20, 30}, each trained
//! with front and with back truncation — eight networks. Two GBDT presets
//! exist by default; `gbdtN.*` keys override them field by field.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use thiserror::Error;

use crate::derive_seed;
use crate::features::SkipGramConfig;
use crate::gbdt::GbdtConfig;
use crate::seqcnn::ModelConfig;
use crate::synth::SynthConfig;
use crate::trip::Truncation;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("config: unknown key `{0}`")]
    UnknownKey(String),
    #[error("config: bad value for `{key}`: {msg}")]
    BadValue { key: String, msg: String },
    #[error("cannot read config `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Shared training hyperparameters for every CNN variant.
#[derive(Debug, Clone)]
pub struct NnParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_seq_len: usize,
    pub max_cross_len: usize,
    pub mlp_widths: Vec<usize>,
}

impl Default for NnParams {
    fn default() -> Self {
        let d = ModelConfig::default();
        NnParams {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            max_seq_len: d.max_seq_len,
            max_cross_len: d.max_cross_len,
            mlp_widths: d.mlp_widths,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NnVariant {
    pub embed_dim: usize,
    pub truncation: Truncation,
}

impl NnVariant {
    pub fn name(&self) -> String {
        format!("nn_d{}_{}", self.embed_dim, self.truncation.as_str())
    }
}

/// The embedding-transfer source: front truncation with embedding size 9.
pub const TRANSFER_VARIANT: NnVariant = NnVariant {
    embed_dim: 9,
    truncation: Truncation::Front,
};

pub fn default_nn_variants() -> Vec<NnVariant> {
    let mut out = Vec::new();
    for &embed_dim in &[9usize, 15, 20, 30] {
        for truncation in [Truncation::Front, Truncation::Back] {
            out.push(NnVariant {
                embed_dim,
                truncation,
            });
        }
    }
    out
}

pub fn default_gbdt_presets() -> Vec<GbdtConfig> {
    vec![
        GbdtConfig::default(),
        GbdtConfig {
            max_depth: 5,
            min_samples_leaf: 40,
            feature_subsample: 0.6,
            ..GbdtConfig::default()
        },
    ]
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub trips_path: PathBuf,
    pub nextlinks_path: PathBuf,
    pub weather_path: PathBuf,
    pub out_dir: PathBuf,
    pub cutoff_date: NaiveDate,
    pub seed: u64,
    pub synth: SynthConfig,
    pub nn: NnParams,
    pub nn_variants: Vec<NnVariant>,
    pub gbdt_presets: Vec<GbdtConfig>,
    pub skipgram: SkipGramConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            trips_path: "data/trips.txt".into(),
            nextlinks_path: "data/nextlinks.txt".into(),
            weather_path: "data/weather.txt".into(),
            out_dir: "out".into(),
            cutoff_date: NaiveDate::from_ymd_opt(2020, 8, 22).unwrap(),
            seed: 0,
            synth: SynthConfig::default(),
            nn: NnParams::default(),
            nn_variants: default_nn_variants(),
            gbdt_presets: default_gbdt_presets(),
            skipgram: SkipGramConfig::default(),
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        msg: format!("cannot parse `{value}`"),
    })
}

fn parse_date_value(key: &str, value: &str) -> Result<NaiveDate, ConfigError> {
    NaiveDate::parse_from_str(value, "%Y-%m-%d").map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        msg: format!("cannot parse `{value}` as YYYY-MM-DD"),
    })
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut explicit_variants: Vec<(usize, NnVariant)> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: line_no,
                msg: "expected `key = value`".into(),
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(key, value, &mut explicit_variants)?;
        }

        if !explicit_variants.is_empty() {
            explicit_variants.sort_by_key(|(i, _)| *i);
            cfg.nn_variants = explicit_variants.into_iter().map(|(_, v)| v).collect();
        }
        Ok(cfg)
    }

    fn apply(
        &mut self,
        key: &str,
        value: &str,
        explicit_variants: &mut Vec<(usize, NnVariant)>,
    ) -> Result<(), ConfigError> {
        match key {
            "trips_path" => self.trips_path = value.into(),
            "nextlinks_path" => self.nextlinks_path = value.into(),
            "weather_path" => self.weather_path = value.into(),
            "out_dir" => self.out_dir = value.into(),
            "cutoff_date" => self.cutoff_date = parse_date_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "synth.n_links" => self.synth.n_links = parse_value(key, value)?,
            "synth.n_drivers" => self.synth.n_drivers = parse_value(key, value)?,
            "synth.n_trips" => self.synth.n_trips = parse_value(key, value)?,
            "synth.noise_sd" => self.synth.noise_sd = parse_value(key, value)?,
            "synth.date_start" => self.synth.date_start = parse_date_value(key, value)?,
            "synth.date_end" => self.synth.date_end = parse_date_value(key, value)?,
            "nn.epochs" => self.nn.epochs = parse_value(key, value)?,
            "nn.batch_size" => self.nn.batch_size = parse_value(key, value)?,
            "nn.learning_rate" => self.nn.learning_rate = parse_value(key, value)?,
            "nn.max_seq_len" => self.nn.max_seq_len = parse_value(key, value)?,
            "nn.max_cross_len" => self.nn.max_cross_len = parse_value(key, value)?,
            "nn.mlp_widths" => {
                let widths: Result<Vec<usize>, _> =
                    value.split(',').map(|w| w.trim().parse()).collect();
                self.nn.mlp_widths = widths.map_err(|_| ConfigError::BadValue {
                    key: key.to_string(),
                    msg: format!("cannot parse `{value}` as comma-separated widths"),
                })?;
            }
            "skipgram.dim" => self.skipgram.dim = parse_value(key, value)?,
            "skipgram.window" => self.skipgram.window = parse_value(key, value)?,
            "skipgram.negatives" => self.skipgram.negatives = parse_value(key, value)?,
            "skipgram.epochs" => self.skipgram.epochs = parse_value(key, value)?,
            "skipgram.learning_rate" => self.skipgram.learning_rate = parse_value(key, value)?,
            _ => {
                if let Some((section, field)) = key.split_once('.') {
                    if let Some(idx) = section
                        .strip_prefix("nn")
                        .and_then(|s| s.parse::<usize>().ok())
                    {
                        return apply_variant(explicit_variants, idx, key, field, value);
                    }
                    if let Some(idx) = section
                        .strip_prefix("gbdt")
                        .and_then(|s| s.parse::<usize>().ok())
                    {
                        return self.apply_gbdt(idx, key, field, value);
                    }
                }
                return Err(ConfigError::UnknownKey(key.to_string()));
            }
        }
        Ok(())
    }

    fn apply_gbdt(
        &mut self,
        idx: usize,
        key: &str,
        field: &str,
        value: &str,
    ) -> Result<(), ConfigError> {
        if idx == 0 {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        while self.gbdt_presets.len() < idx {
            self.gbdt_presets.push(GbdtConfig::default());
        }
        let preset = &mut self.gbdt_presets[idx - 1];
        match field {
            "n_trees" => preset.n_trees = parse_value(key, value)?,
            "learning_rate" => preset.learning_rate = parse_value(key, value)?,
            "max_depth" => preset.max_depth = parse_value(key, value)?,
            "min_samples_leaf" => preset.min_samples_leaf = parse_value(key, value)?,
            "gamma" => preset.gamma = parse_value(key, value)?,
            "lambda" => preset.lambda = parse_value(key, value)?,
            "feature_subsample" => preset.feature_subsample = parse_value(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Component name of GBDT preset `i` (0-based).
    pub fn gbdt_name(i: usize) -> String {
        format!("gbdt_{}", i + 1)
    }

    /// Preset with its run-derived seed filled in.
    pub fn gbdt_config(&self, i: usize) -> GbdtConfig {
        let mut cfg = self.gbdt_presets[i].clone();
        cfg.seed = derive_seed(self.seed, &format!("gbdt/preset/{i}"));
        cfg
    }

    /// Full model config for one CNN variant.
    pub fn nn_config(&self, variant: NnVariant) -> ModelConfig {
        ModelConfig {
            embed_dim: variant.embed_dim,
            truncation: variant.truncation,
            max_seq_len: self.nn.max_seq_len,
            max_cross_len: self.nn.max_cross_len,
            mlp_widths: self.nn.mlp_widths.clone(),
            learning_rate: self.nn.learning_rate,
            batch_size: self.nn.batch_size,
            epochs: self.nn.epochs,
            seed: derive_seed(self.seed, &format!("nn/variant/{}", variant.name())),
        }
    }

    pub fn skipgram_config(&self) -> SkipGramConfig {
        let mut cfg = self.skipgram.clone();
        cfg.seed = derive_seed(self.seed, "skipgram");
        cfg
    }

    pub fn synth_config(&self) -> SynthConfig {
        let mut cfg = self.synth.clone();
        cfg.seed = derive_seed(self.seed, "synth");
        cfg
    }
}

fn apply_variant(
    variants: &mut Vec<(usize, NnVariant)>,
    idx: usize,
    key: &str,
    field: &str,
    value: &str,
) -> Result<(), ConfigError> {
    if idx == 0 {
        return Err(ConfigError::UnknownKey(key.to_string()));
    }
    let entry = match variants.iter_mut().find(|(i, _)| *i == idx) {
        Some((_, v)) => v,
        None => {
            variants.push((
                idx,
                NnVariant {
                    embed_dim: 9,
                    truncation: Truncation::Front,
                },
            ));
            &mut variants.last_mut().unwrap().1
        }
    };
    match field {
        "embed_dim" => entry.embed_dim = parse_value(key, value)?,
        "truncation" => {
            entry.truncation = value.parse().map_err(|e: String| ConfigError::BadValue {
                key: key.to_string(),
                msg: e,
            })?
        }
        _ => return Err(ConfigError::UnknownKey(key.to_string())),
    }
    Ok(())
}
