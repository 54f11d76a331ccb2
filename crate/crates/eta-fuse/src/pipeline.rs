//! End-to-end orchestration shared by the CLI subcommands and the
//! integration tests.
//!
//! Artifact layout under `out_dir`:
//!
//! ```text
//! features/skipgram.json        trained skip-gram table
//! features/train.csv, val.csv   tree feature matrices (schema header + rows)
//! features/train_index.csv      order_id,ata,simple_eta per feature row
//! features/val_index.csv
//! models/<component>.model      versioned model files
//! logs/<component>_log.csv      per-epoch / per-iteration training metrics
//! preds/val_<component>.csv     order_id,prediction on the validation split
//! weights.json                  fitted ensemble weights
//! metrics.csv, report.txt       evaluation output
//! ```
//!
//! Every write is atomic and every byte of output is a pure function of the
//! config and its seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use thiserror::Error;

use crate::config::{NnVariant, RunConfig, TRANSFER_VARIANT};
use crate::ensemble::{self, EnsembleError};
use crate::features::{self, FeatureError, FeatureMatrix, LinkEmbeddingTable};
use crate::fsutil::atomic_write;
use crate::gbdt::{self, GbdtError};
use crate::seqcnn::{self, NnError, SeqCnnModel};
use crate::synth::{self, SynthError};
use crate::trip::{self, RoadNetwork, Trip, TripDataError, WeatherRecord};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cannot access `{path}`: {source}")]
    Path {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    DataIn {
        path: PathBuf,
        #[source]
        source: TripDataError,
    },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Gbdt(#[from] GbdtError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// CLI exit code: 2 for I/O trouble, 1 for validation problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Path { .. } | PipelineError::Io(_) => 2,
            PipelineError::DataIn { source, .. } => match source {
                TripDataError::Io(_) => 2,
                _ => 1,
            },
            PipelineError::Nn(NnError::Io(_))
            | PipelineError::Gbdt(GbdtError::Io(_))
            | PipelineError::Ensemble(EnsembleError::Io(_))
            | PipelineError::Feature(FeatureError::Io(_)) => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| PipelineError::Path {
        path: path.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Paths
// ---------------------------------------------------------------------------

pub struct OutPaths {
    out: PathBuf,
}

impl OutPaths {
    pub fn new(out_dir: &Path) -> Self {
        OutPaths {
            out: out_dir.to_path_buf(),
        }
    }

    pub fn skipgram(&self) -> PathBuf {
        self.out.join("features/skipgram.json")
    }
    pub fn features(&self, split: &str) -> PathBuf {
        self.out.join(format!("features/{split}.csv"))
    }
    pub fn index(&self, split: &str) -> PathBuf {
        self.out.join(format!("features/{split}_index.csv"))
    }
    pub fn model(&self, component: &str) -> PathBuf {
        self.out.join(format!("models/{component}.model"))
    }
    pub fn log(&self, component: &str) -> PathBuf {
        self.out.join(format!("logs/{component}_log.csv"))
    }
    pub fn predictions(&self, component: &str) -> PathBuf {
        self.out.join(format!("preds/val_{component}.csv"))
    }
    pub fn preds_dir(&self) -> PathBuf {
        self.out.join("preds")
    }
    pub fn weights(&self) -> PathBuf {
        self.out.join("weights.json")
    }
    pub fn metrics(&self) -> PathBuf {
        self.out.join("metrics.csv")
    }
    pub fn report(&self) -> PathBuf {
        self.out.join("report.txt")
    }
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

/// Generates network, trips, and weather and writes the three input files.
pub fn run_synth(cfg: &RunConfig) -> Result<()> {
    let synth_cfg = cfg.synth_config();
    let network = synth::generate_network(&synth_cfg)?;
    let trips = synth::generate_trips(&network, &synth_cfg)?;
    let weather = synth::generate_weather(&synth_cfg)?;
    atomic_write(
        &cfg.nextlinks_path,
        trip::road_network_to_string(&network).as_bytes(),
    )?;
    atomic_write(&cfg.trips_path, trip::trips_to_string(&trips).as_bytes())?;
    atomic_write(
        &cfg.weather_path,
        trip::weather_to_string(&weather).as_bytes(),
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// data loading
// ---------------------------------------------------------------------------

pub struct LoadedData {
    pub train: Vec<Trip>,
    pub val: Vec<Trip>,
    pub network: RoadNetwork,
    pub weather: BTreeMap<NaiveDate, WeatherRecord>,
}

pub fn load_data(cfg: &RunConfig) -> Result<LoadedData> {
    let trips_text = read_file(&cfg.trips_path)?;
    let trips = trip::parse_trips_str(&trips_text).map_err(|source| PipelineError::DataIn {
        path: cfg.trips_path.clone(),
        source,
    })?;
    let network_text = read_file(&cfg.nextlinks_path)?;
    let network =
        trip::parse_road_network_str(&network_text).map_err(|source| PipelineError::DataIn {
            path: cfg.nextlinks_path.clone(),
            source,
        })?;
    let weather_text = read_file(&cfg.weather_path)?;
    let weather =
        trip::parse_weather_str(&weather_text).map_err(|source| PipelineError::DataIn {
            path: cfg.weather_path.clone(),
            source,
        })?;
    let (train, val) = trip::split_by_date(trips, cfg.cutoff_date);
    Ok(LoadedData {
        train,
        val,
        network,
        weather,
    })
}

// ---------------------------------------------------------------------------
// CNN training
// ---------------------------------------------------------------------------

fn epoch_log(model: &SeqCnnModel) -> String {
    let mut out = String::from("epoch,train_mape,val_mape\n");
    for m in &model.epoch_metrics {
        out.push_str(&format!("{},{},{}\n", m.epoch, m.train_mape, m.val_mape));
    }
    out
}

fn predictions_csv(order_ids: &[String], preds: &[f64]) -> String {
    let mut out = String::from("order_id,prediction\n");
    for (id, p) in order_ids.iter().zip(preds) {
        out.push_str(&format!("{id},{p}\n"));
    }
    out
}

/// Trains one variant, writes its model, epoch log, and validation
/// predictions, and returns the trained model.
pub fn train_nn_variant(
    cfg: &RunConfig,
    data: &LoadedData,
    variant: NnVariant,
) -> Result<SeqCnnModel> {
    let paths = OutPaths::new(&cfg.out_dir);
    let model_cfg = cfg.nn_config(variant);
    let name = variant.name();
    let mut model = SeqCnnModel::new(model_cfg, &data.train);
    model.train(&data.train, &data.val)?;
    seqcnn::save_model(&model, &paths.model(&name))?;
    atomic_write(&paths.log(&name), epoch_log(&model).as_bytes())?;

    let (ids, preds) = nn_val_predictions(&model, data)?;
    atomic_write(
        &paths.predictions(&name),
        predictions_csv(&ids, &preds).as_bytes(),
    )?;
    Ok(model)
}

/// Validation predictions of a CNN model, in validation order. Driver
/// history is rebuilt from the training split only.
pub fn nn_val_predictions(
    model: &SeqCnnModel,
    data: &LoadedData,
) -> Result<(Vec<String>, Vec<f64>)> {
    let history = features::build_driver_history(&data.train);
    let mut ids = Vec::with_capacity(data.val.len());
    let mut preds = Vec::with_capacity(data.val.len());
    for t in &data.val {
        let dense = features::nn_dense(t);
        let cats = features::nn_categorical(t, &history);
        preds.push(model.forward(t, &dense, &cats)?);
        ids.push(t.header.order_id.clone());
    }
    Ok((ids, preds))
}

/// Trains every configured variant. Variants are independent deterministic
/// jobs, so they fan out across threads; all file content is identical to a
/// sequential run.
pub fn run_train_nn(cfg: &RunConfig, data: &LoadedData) -> Result<()> {
    let results: Vec<Result<()>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .nn_variants
            .iter()
            .map(|&variant| scope.spawn(move || train_nn_variant(cfg, data, variant).map(|_| ())))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    });
    for r in results {
        r?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// featurize
// ---------------------------------------------------------------------------

/// Loads the transfer-source model (front truncation, embedding size 9) or
/// trains and saves it if its file does not exist yet.
pub fn ensure_transfer_model(cfg: &RunConfig, data: &LoadedData) -> Result<SeqCnnModel> {
    let paths = OutPaths::new(&cfg.out_dir);
    let path = paths.model(&TRANSFER_VARIANT.name());
    if path.exists() {
        Ok(seqcnn::load_model(&path)?)
    } else {
        train_nn_variant(cfg, data, TRANSFER_VARIANT)
    }
}

fn index_csv(trips: &[Trip]) -> String {
    let mut out = String::from("order_id,ata,simple_eta\n");
    for t in trips {
        out.push_str(&format!(
            "{},{},{}\n",
            t.header.order_id, t.header.ata, t.header.simple_eta
        ));
    }
    out
}

/// Builds leakage-safe tree features for both splits and persists them along
/// with the skip-gram table and per-row label indexes.
pub fn run_featurize(cfg: &RunConfig, data: &LoadedData) -> Result<()> {
    let paths = OutPaths::new(&cfg.out_dir);

    let corpus: Vec<Vec<u64>> = data
        .train
        .iter()
        .map(|t| t.links.iter().map(|l| l.link_id).collect())
        .collect();
    let table = features::train_skipgram(&corpus, &cfg.skipgram_config())?;
    let table_json =
        serde_json::to_string(&table).map_err(|e| PipelineError::Invalid(e.to_string()))?;
    atomic_write(&paths.skipgram(), table_json.as_bytes())?;

    let nn_model = ensure_transfer_model(cfg, data)?;
    let history = features::build_driver_history(&data.train);

    for (split, trips) in [("train", &data.train), ("val", &data.val)] {
        let (matrix, schema) = features::build_feature_matrix(
            trips,
            &data.network,
            &history,
            &table,
            &nn_model,
            &data.weather,
        )?;
        atomic_write(
            &paths.features(split),
            features::feature_matrix_to_string(&matrix, &schema).as_bytes(),
        )?;
        atomic_write(&paths.index(split), index_csv(trips).as_bytes())?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// GBDT training
// ---------------------------------------------------------------------------

pub struct IndexedTargets {
    pub order_ids: Vec<String>,
    pub ata: Vec<f64>,
    pub simple_eta: Vec<f64>,
}

pub fn read_index(path: &Path) -> Result<IndexedTargets> {
    let text = read_file(path)?;
    let mut order_ids = Vec::new();
    let mut ata = Vec::new();
    let mut simple_eta = Vec::new();
    for line in text.lines().skip(1) {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(PipelineError::Invalid(format!(
                "bad index line `{line}` in {}",
                path.display()
            )));
        }
        order_ids.push(parts[0].to_string());
        ata.push(parts[1].parse().map_err(|_| {
            PipelineError::Invalid(format!("bad ata `{}` in {}", parts[1], path.display()))
        })?);
        simple_eta.push(parts[2].parse().map_err(|_| {
            PipelineError::Invalid(format!(
                "bad simple_eta `{}` in {}",
                parts[2],
                path.display()
            ))
        })?);
    }
    Ok(IndexedTargets {
        order_ids,
        ata,
        simple_eta,
    })
}

fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let text = read_file(path)?;
    let (matrix, _) = features::parse_feature_matrix(&text)?;
    Ok(matrix)
}

fn gbdt_log(model: &gbdt::GbdtModel) -> String {
    let mut out = String::from("iteration,train_mae\n");
    for (i, mae) in model.train_mae.iter().enumerate() {
        out.push_str(&format!("{i},{mae}\n"));
    }
    out
}

/// Trains every GBDT preset on the persisted feature files and writes
/// models, logs, and validation predictions.
pub fn run_train_gbdt(cfg: &RunConfig) -> Result<()> {
    let paths = OutPaths::new(&cfg.out_dir);
    let train_x = read_features(&paths.features("train"))?;
    let val_x = read_features(&paths.features("val"))?;
    let train_idx = read_index(&paths.index("train"))?;
    let val_idx = read_index(&paths.index("val"))?;

    let data = gbdt::Dataset::from_rows(train_x.n_cols(), &train_x.to_rows())?;
    for i in 0..cfg.gbdt_presets.len() {
        let name = RunConfig::gbdt_name(i);
        let model = gbdt::boost(&data, &train_idx.ata, &cfg.gbdt_config(i))?;
        gbdt::save_model(&model, &paths.model(&name))?;
        atomic_write(&paths.log(&name), gbdt_log(&model).as_bytes())?;

        let preds: Vec<f64> = val_x
            .rows()
            .map(|row| model.predict_row(row))
            .collect::<std::result::Result<_, _>>()?;
        atomic_write(
            &paths.predictions(&name),
            predictions_csv(&val_idx.order_ids, &preds).as_bytes(),
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// ensemble / predict / evaluate
// ---------------------------------------------------------------------------

pub fn read_predictions(path: &Path) -> Result<Vec<(String, f64)>> {
    let text = read_file(path)?;
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        if line.is_empty() {
            continue;
        }
        let (id, value) = line.split_once(',').ok_or_else(|| {
            PipelineError::Invalid(format!(
                "bad prediction line `{line}` in {}",
                path.display()
            ))
        })?;
        let value: f64 = value.parse().map_err(|_| {
            PipelineError::Invalid(format!("bad prediction `{value}` in {}", path.display()))
        })?;
        out.push((id.to_string(), value));
    }
    Ok(out)
}

/// All persisted validation predictions, sorted by component name, split
/// into the tree group and the CNN group. Every file must list the same
/// orders in the same order as the validation index.
fn collect_component_predictions(
    paths: &OutPaths,
    val_idx: &IndexedTargets,
) -> Result<(Vec<(String, Vec<f64>)>, Vec<(String, Vec<f64>)>)> {
    let dir = paths.preds_dir();
    let mut files: Vec<PathBuf> = match std::fs::read_dir(&dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("val_") && n.ends_with(".csv"))
            })
            .collect(),
        Err(source) => return Err(PipelineError::Path { path: dir, source }),
    };
    files.sort();

    let mut trees = Vec::new();
    let mut nns = Vec::new();
    for file in files {
        let name = file
            .file_stem()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .trim_start_matches("val_")
            .to_string();
        if name == "ensemble" {
            continue;
        }
        let rows = read_predictions(&file)?;
        if rows.len() != val_idx.order_ids.len() {
            return Err(PipelineError::Invalid(format!(
                "{}: {} predictions for {} validation rows",
                file.display(),
                rows.len(),
                val_idx.order_ids.len()
            )));
        }
        for (row, expected) in rows.iter().zip(&val_idx.order_ids) {
            if &row.0 != expected {
                return Err(PipelineError::Invalid(format!(
                    "{}: order `{}` out of position (expected `{}`)",
                    file.display(),
                    row.0,
                    expected
                )));
            }
        }
        let preds: Vec<f64> = rows.into_iter().map(|(_, p)| p).collect();
        if name.starts_with("gbdt") {
            trees.push((name, preds));
        } else {
            nns.push((name, preds));
        }
    }
    Ok((trees, nns))
}

/// Fits the two-stage ensemble weights from persisted validation predictions.
pub fn run_fit_ensemble(cfg: &RunConfig) -> Result<()> {
    let paths = OutPaths::new(&cfg.out_dir);
    let val_idx = read_index(&paths.index("val"))?;
    let (trees, nns) = collect_component_predictions(&paths, &val_idx)?;
    let weights = ensemble::fit_ensemble(&trees, &nns, &val_idx.ata)?;
    ensemble::save_weights(&weights, &paths.weights())?;

    let tree_rows: Vec<Vec<f64>> = trees.into_iter().map(|(_, p)| p).collect();
    let nn_rows: Vec<Vec<f64>> = nns.into_iter().map(|(_, p)| p).collect();
    let fused = weights.apply(&tree_rows, &nn_rows)?;
    atomic_write(
        &paths.predictions("ensemble"),
        predictions_csv(&val_idx.order_ids, &fused).as_bytes(),
    )?;
    Ok(())
}

/// Re-applies every saved model to the validation split and rewrites the
/// prediction files (plus the fused predictions when weights exist).
pub fn run_predict(cfg: &RunConfig, data: &LoadedData) -> Result<()> {
    let paths = OutPaths::new(&cfg.out_dir);
    let val_idx = read_index(&paths.index("val"))?;
    let val_x = read_features(&paths.features("val"))?;

    for i in 0..cfg.gbdt_presets.len() {
        let name = RunConfig::gbdt_name(i);
        let path = paths.model(&name);
        if !path.exists() {
            continue;
        }
        let model = gbdt::load_model(&path)?;
        let preds: Vec<f64> = val_x
            .rows()
            .map(|row| model.predict_row(row))
            .collect::<std::result::Result<_, _>>()?;
        atomic_write(
            &paths.predictions(&name),
            predictions_csv(&val_idx.order_ids, &preds).as_bytes(),
        )?;
    }

    for variant in &cfg.nn_variants {
        let name = variant.name();
        let path = paths.model(&name);
        if !path.exists() {
            continue;
        }
        let model = seqcnn::load_model(&path)?;
        let (ids, preds) = nn_val_predictions(&model, data)?;
        atomic_write(
            &paths.predictions(&name),
            predictions_csv(&ids, &preds).as_bytes(),
        )?;
    }

    if paths.weights().exists() {
        let weights = ensemble::load_weights(&paths.weights())?;
        let (trees, nns) = collect_component_predictions(&paths, &val_idx)?;
        let tree_rows: Vec<Vec<f64>> = trees.into_iter().map(|(_, p)| p).collect();
        let nn_rows: Vec<Vec<f64>> = nns.into_iter().map(|(_, p)| p).collect();
        let fused = weights.apply(&tree_rows, &nn_rows)?;
        atomic_write(
            &paths.predictions("ensemble"),
            predictions_csv(&val_idx.order_ids, &fused).as_bytes(),
        )?;
    }
    Ok(())
}

/// Writes `metrics.csv` and `report.txt` from whatever predictions exist.
/// The simple-eta baseline row is always present.
pub fn run_evaluate(cfg: &RunConfig) -> Result<()> {
    let paths = OutPaths::new(&cfg.out_dir);
    let val_idx = read_index(&paths.index("val"))?;

    let mut components: Vec<(String, Vec<f64>)> = Vec::new();
    if paths.preds_dir().exists() {
        let (trees, nns) = collect_component_predictions(&paths, &val_idx)?;
        components.extend(trees);
        components.extend(nns);
        let ensemble_path = paths.predictions("ensemble");
        if ensemble_path.exists() {
            let rows = read_predictions(&ensemble_path)?;
            components.push((
                "ensemble".to_string(),
                rows.into_iter().map(|(_, p)| p).collect(),
            ));
        }
    }

    let report = ensemble::evaluate_report(&val_idx.ata, &val_idx.simple_eta, &components)?;
    atomic_write(&paths.metrics(), report.to_csv().as_bytes())?;
    atomic_write(&paths.report(), report.to_table().as_bytes())?;
    Ok(())
}

/// In-memory helper for tests: skip-gram table plus transfer model and both
/// feature matrices, built leakage-safe from the training split.
pub struct FeatureBundle {
    pub table: LinkEmbeddingTable,
    pub nn_model: SeqCnnModel,
    pub train_matrix: FeatureMatrix,
    pub val_matrix: FeatureMatrix,
    pub schema: features::FeatureSchema,
}

pub fn build_features_in_memory(
    cfg: &RunConfig,
    data: &LoadedData,
    nn_model: SeqCnnModel,
) -> Result<FeatureBundle> {
    let corpus: Vec<Vec<u64>> = data
        .train
        .iter()
        .map(|t| t.links.iter().map(|l| l.link_id).collect())
        .collect();
    let table = features::train_skipgram(&corpus, &cfg.skipgram_config())?;
    let history = features::build_driver_history(&data.train);
    let (train_matrix, schema) = features::build_feature_matrix(
        &data.train,
        &data.network,
        &history,
        &table,
        &nn_model,
        &data.weather,
    )?;
    let (val_matrix, _) = features::build_feature_matrix(
        &data.val,
        &data.network,
        &history,
        &table,
        &nn_model,
        &data.weather,
    )?;
    Ok(FeatureBundle {
        table,
        nn_model,
        train_matrix,
        val_matrix,
        schema,
    })
}
