//! Feature engineering for both model families.
//!
//! The network consumes dense trip statistics plus categorical tokens; the
//! tree model consumes a flat numeric row assembled in a fixed, documented
//! column order. Everything here is a pure function of immutable inputs, and
//! anything history-dependent (driver order history, the skip-gram corpus,
//! the transferred network embeddings) must be built from training trips
//! only — validation rows never feed back into those sources.
//!
//! Tree-feature column ledger, in row order:
//!
//! | block       | count | columns |
//! |-------------|-------|---------|
//! | statistical | 12    | `stat_link_count`, `stat_cross_count`, `stat_link_time_sum`, `stat_link_time_max`, `stat_link_time_mean`, `stat_cross_time_sum`, `stat_cross_time_max`, `stat_cross_time_mean`, `stat_avg_speed`, `stat_avg_link_distance`, `stat_congestion_distance`, `stat_simple_eta` |
//! | time        | 4     | `time_is_weekend`, `time_hour`, `time_is_rush`, `time_day_bin` |
//! | topology    | 2     | `topo_upstream_sum`, `topo_downstream_sum` |
//! | categorical | 4     | `cat_driver_id`, `cat_slice_id`, `cat_last_order_slice`, `cat_second_last_order_slice` |
//! | weather     | 3     | `weather_code`, `weather_temp_low`, `weather_temp_high` |
//! | skip-gram   | e     | `sg_mean_NN` — mean link vector over the trip |
//! | transfer    | 6·d   | `nnx_<variant>_NN` — supervised embeddings from the network |
//!
//! `stat_avg_link_distance` is `distance / s`; `stat_congestion_distance`
//! apportions trip distance by the link-time share of slow/congested steps.
//! Categorical tokens are raw integer codes (trees split on them ordinally);
//! the missing sentinel everywhere is `-999`.

pub mod skipgram;

use std::collections::{BTreeMap, HashMap};

use chrono::{Datelike, NaiveDate};
use thiserror::Error;

use crate::seqcnn::SeqCnnModel;
use crate::trip::{RoadNetwork, Trip, TripHeader, WeatherRecord};
use crate::MISSING;

pub use skipgram::{cosine, train_skipgram, LinkEmbeddingTable, SkipGramConfig};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("empty skip-gram corpus")]
    EmptyCorpus,
    #[error("feature row width {actual} does not match schema width {expected}")]
    SchemaMismatch { expected: usize, actual: usize },
    #[error("embedding transfer needs a trained model")]
    UntrainedModel,
    #[error("feature matrix format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Network-side features
// ---------------------------------------------------------------------------

/// Dense per-trip statistics for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFeatures {
    pub link_time_sum: f64,
    pub link_time_max: f64,
    pub cross_time_sum: f64,
    pub cross_time_max: f64,
    /// Count of link steps with status 0, 1, 2, 3; sums to `s`.
    pub status_counts: [f64; 4],
    /// `count(status >= 2) / s`.
    pub congested_fraction: f64,
    /// `distance / simple_eta` in m/s.
    pub avg_speed: f64,
}

pub fn nn_dense(trip: &Trip) -> DenseFeatures {
    let mut link_time_sum = 0.0;
    let mut link_time_max = 0.0f64;
    let mut status_counts = [0.0; 4];
    for l in &trip.links {
        link_time_sum += l.link_time;
        link_time_max = link_time_max.max(l.link_time);
        status_counts[l.link_status as usize] += 1.0;
    }
    let mut cross_time_sum = 0.0;
    let mut cross_time_max = 0.0f64;
    for c in &trip.crosses {
        cross_time_sum += c.cross_time;
        cross_time_max = cross_time_max.max(c.cross_time);
    }
    let s = trip.links.len() as f64;
    DenseFeatures {
        link_time_sum,
        link_time_max,
        cross_time_sum,
        cross_time_max,
        status_counts,
        congested_fraction: (status_counts[2] + status_counts[3]) / s,
        avg_speed: trip.header.distance / trip.header.simple_eta,
    }
}

/// Categorical tokens for the network; the last/second-last order slices are
/// `-999` when the driver has no such history.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalFeatures {
    pub driver_id: u64,
    pub slice_id: u16,
    pub last_order_slice: i32,
    pub second_last_order_slice: i32,
}

/// Chronologically ordered `(date, slice)` of each driver's past orders.
#[derive(Debug, Clone, Default)]
pub struct DriverHistoryIndex {
    orders: HashMap<u64, Vec<(NaiveDate, u16)>>,
}

impl DriverHistoryIndex {
    /// Slices of the last and second-to-last orders strictly before
    /// `(date, slice)`; `-999` where the history runs out. Orders at the
    /// exact same `(date, slice)` are not "earlier", so a query for an order
    /// never sees that order itself.
    pub fn last_two_before(&self, driver_id: u64, date: NaiveDate, slice_id: u16) -> (i32, i32) {
        let missing = MISSING as i32;
        let Some(orders) = self.orders.get(&driver_id) else {
            return (missing, missing);
        };
        let p = orders.partition_point(|&(d, s)| (d, s) < (date, slice_id));
        let last = if p >= 1 {
            i32::from(orders[p - 1].1)
        } else {
            missing
        };
        let second = if p >= 2 {
            i32::from(orders[p - 2].1)
        } else {
            missing
        };
        (last, second)
    }
}

pub fn build_driver_history(trips: &[Trip]) -> DriverHistoryIndex {
    let mut orders: HashMap<u64, Vec<(NaiveDate, u16)>> = HashMap::new();
    for t in trips {
        orders
            .entry(t.header.driver_id)
            .or_default()
            .push((t.header.date, t.header.slice_id));
    }
    for list in orders.values_mut() {
        list.sort_unstable();
    }
    DriverHistoryIndex { orders }
}

pub fn nn_categorical(trip: &Trip, history: &DriverHistoryIndex) -> CategoricalFeatures {
    let (last, second) = history.last_two_before(
        trip.header.driver_id,
        trip.header.date,
        trip.header.slice_id,
    );
    CategoricalFeatures {
        driver_id: trip.header.driver_id,
        slice_id: trip.header.slice_id,
        last_order_slice: last,
        second_last_order_slice: second,
    }
}

// ---------------------------------------------------------------------------
// Tree-side features
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeFeatures {
    pub is_weekend: u8,
    /// `floor(slice_id / 12)`, 0..=23.
    pub hour: u8,
    /// 1 iff the hour falls in 7-9 am or 5-7 pm.
    pub is_rush: u8,
    /// 0 early (< 96), 1 middle (< 192), 2 late.
    pub day_bin: u8,
}

pub fn time_features(header: &TripHeader) -> TimeFeatures {
    let hour = (header.slice_id / 12) as u8;
    let is_rush = u8::from((7..9).contains(&hour) || (17..19).contains(&hour));
    let day_bin = match header.slice_id {
        0..=95 => 0,
        96..=191 => 1,
        _ => 2,
    };
    let weekday = header.date.weekday();
    let is_weekend = u8::from(weekday == chrono::Weekday::Sat || weekday == chrono::Weekday::Sun);
    TimeFeatures {
        is_weekend,
        hour,
        is_rush,
        day_bin,
    }
}

pub const STATISTICAL_DIM: usize = 12;

/// The twelve statistical columns, in ledger order.
pub fn statistical_features(trip: &Trip) -> [f64; STATISTICAL_DIM] {
    let dense = nn_dense(trip);
    let s = trip.links.len() as f64;
    let n_cross = trip.crosses.len() as f64;
    let link_time_mean = dense.link_time_sum / s;
    let cross_time_mean = if trip.crosses.is_empty() {
        0.0
    } else {
        dense.cross_time_sum / n_cross
    };
    let congested_time: f64 = trip
        .links
        .iter()
        .filter(|l| l.link_status >= 2)
        .map(|l| l.link_time)
        .sum();
    let congestion_distance = if dense.link_time_sum == 0.0 {
        0.0
    } else {
        trip.header.distance * congested_time / dense.link_time_sum
    };
    [
        s,
        n_cross,
        dense.link_time_sum,
        dense.link_time_max,
        link_time_mean,
        dense.cross_time_sum,
        dense.cross_time_max,
        cross_time_mean,
        dense.avg_speed,
        trip.header.distance / s,
        congestion_distance,
        trip.header.simple_eta,
    ]
}

/// Sums of in/out degrees over the trip's links; links missing from the
/// network count zero.
pub fn topology_features(trip: &Trip, network: &RoadNetwork) -> (f64, f64) {
    let mut upstream = 0.0;
    let mut downstream = 0.0;
    for l in &trip.links {
        upstream += f64::from(network.in_degree(l.link_id));
        downstream += f64::from(network.out_degree(l.link_id));
    }
    (upstream, downstream)
}

/// Arithmetic mean of the per-step skip-gram vectors; out-of-vocabulary
/// links contribute zeros but still count in the denominator.
pub fn sequence_embedding_feature(trip: &Trip, table: &LinkEmbeddingTable) -> Vec<f64> {
    let mut mean = vec![0.0; table.dim()];
    for l in &trip.links {
        for (m, &v) in mean.iter_mut().zip(table.vector(l.link_id)) {
            *m += v;
        }
    }
    let inv = 1.0 / trip.links.len() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    mean
}

/// Supervised embeddings exported from the trained network (6 concatenated
/// `d`-vectors). Errors if the model has not been trained.
pub fn nn_embedding_transfer(
    trip: &Trip,
    cats: &CategoricalFeatures,
    model: &SeqCnnModel,
) -> Result<Vec<f64>, FeatureError> {
    model
        .transfer_embedding(trip, cats)
        .map_err(|_| FeatureError::UntrainedModel)
}

// ---------------------------------------------------------------------------
// Schema and matrix
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

impl ColumnKind {
    fn as_str(self) -> &'static str {
        match self {
            ColumnKind::Numeric => "numeric",
            ColumnKind::Categorical => "categorical",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSchema {
    pub columns: Vec<(String, ColumnKind)>,
}

impl FeatureSchema {
    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|(n, _)| n.as_str())
    }

    pub fn header_line(&self) -> String {
        self.columns
            .iter()
            .map(|(n, k)| format!("{n}:{}", k.as_str()))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn parse_header(line: &str) -> Result<FeatureSchema, FeatureError> {
        let mut columns = Vec::new();
        for part in line.split(',') {
            let (name, kind) = part
                .rsplit_once(':')
                .ok_or_else(|| FeatureError::Format(format!("bad header column `{part}`")))?;
            let kind = match kind {
                "numeric" => ColumnKind::Numeric,
                "categorical" => ColumnKind::Categorical,
                other => {
                    return Err(FeatureError::Format(format!(
                        "unknown column kind `{other}`"
                    )))
                }
            };
            columns.push((name.to_string(), kind));
        }
        Ok(FeatureSchema { columns })
    }
}

/// The full tree-feature schema for a given skip-gram dimension and transfer
/// source variant (whose name is baked into the transfer column names).
pub fn feature_schema(
    skipgram_dim: usize,
    transfer_variant: &str,
    transfer_dim: usize,
) -> FeatureSchema {
    use ColumnKind::{Categorical, Numeric};
    let mut columns: Vec<(String, ColumnKind)> = Vec::new();
    for name in [
        "stat_link_count",
        "stat_cross_count",
        "stat_link_time_sum",
        "stat_link_time_max",
        "stat_link_time_mean",
        "stat_cross_time_sum",
        "stat_cross_time_max",
        "stat_cross_time_mean",
        "stat_avg_speed",
        "stat_avg_link_distance",
        "stat_congestion_distance",
        "stat_simple_eta",
    ] {
        columns.push((name.to_string(), Numeric));
    }
    columns.push(("time_is_weekend".into(), Numeric));
    columns.push(("time_hour".into(), Numeric));
    columns.push(("time_is_rush".into(), Numeric));
    columns.push(("time_day_bin".into(), Categorical));
    columns.push(("topo_upstream_sum".into(), Numeric));
    columns.push(("topo_downstream_sum".into(), Numeric));
    columns.push(("cat_driver_id".into(), Categorical));
    columns.push(("cat_slice_id".into(), Categorical));
    columns.push(("cat_last_order_slice".into(), Categorical));
    columns.push(("cat_second_last_order_slice".into(), Categorical));
    columns.push(("weather_code".into(), Categorical));
    columns.push(("weather_temp_low".into(), Numeric));
    columns.push(("weather_temp_high".into(), Numeric));
    for i in 0..skipgram_dim {
        columns.push((format!("sg_mean_{i:02}"), Numeric));
    }
    for i in 0..transfer_dim {
        columns.push((format!("nnx_{transfer_variant}_{i:02}"), Numeric));
    }
    FeatureSchema { columns }
}

/// Row-major feature matrix with a fixed column count.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n_cols: usize) -> Self {
        FeatureMatrix {
            n_cols,
            data: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<(), FeatureError> {
        if row.len() != self.n_cols {
            return Err(FeatureError::SchemaMismatch {
                expected: self.n_cols,
                actual: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        if self.n_cols == 0 {
            0
        } else {
            self.data.len() / self.n_cols
        }
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_cols)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }
}

pub fn feature_matrix_to_string(matrix: &FeatureMatrix, schema: &FeatureSchema) -> String {
    let mut out = schema.header_line();
    out.push('\n');
    for row in matrix.rows() {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_feature_matrix(text: &str) -> Result<(FeatureMatrix, FeatureSchema), FeatureError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| FeatureError::Format("empty feature file".into()))?;
    let schema = FeatureSchema::parse_header(header)?;
    let mut matrix = FeatureMatrix::new(schema.n_cols());
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
        let row = row.map_err(|e| FeatureError::Format(format!("bad numeric cell: {e}")))?;
        matrix.push_row(&row)?;
    }
    Ok((matrix, schema))
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

/// One tree-model feature row in the documented column order. Pure function
/// of its inputs; a trip date absent from the weather table yields sentinel
/// weather columns.
pub fn assemble_tree_features(
    trip: &Trip,
    network: &RoadNetwork,
    history: &DriverHistoryIndex,
    table: &LinkEmbeddingTable,
    nn_model: &SeqCnnModel,
    weather: &BTreeMap<NaiveDate, WeatherRecord>,
) -> Result<Vec<f64>, FeatureError> {
    let cats = nn_categorical(trip, history);
    let time = time_features(&trip.header);
    let (upstream, downstream) = topology_features(trip, network);

    let mut row = Vec::with_capacity(STATISTICAL_DIM + 13 + table.dim() + 54);
    row.extend_from_slice(&statistical_features(trip));
    row.push(f64::from(time.is_weekend));
    row.push(f64::from(time.hour));
    row.push(f64::from(time.is_rush));
    row.push(f64::from(time.day_bin));
    row.push(upstream);
    row.push(downstream);
    row.push(cats.driver_id as f64);
    row.push(f64::from(cats.slice_id));
    row.push(f64::from(cats.last_order_slice));
    row.push(f64::from(cats.second_last_order_slice));
    match weather.get(&trip.header.date) {
        Some(w) => {
            row.push(f64::from(w.weather_code));
            row.push(w.temp_low);
            row.push(w.temp_high);
        }
        None => row.extend_from_slice(&[MISSING, MISSING, MISSING]),
    }
    row.extend(sequence_embedding_feature(trip, table));
    row.extend(nn_embedding_transfer(trip, &cats, nn_model)?);
    Ok(row)
}

/// Assembles rows for a whole trip list and checks every row against the
/// schema width.
pub fn build_feature_matrix(
    trips: &[Trip],
    network: &RoadNetwork,
    history: &DriverHistoryIndex,
    table: &LinkEmbeddingTable,
    nn_model: &SeqCnnModel,
    weather: &BTreeMap<NaiveDate, WeatherRecord>,
) -> Result<(FeatureMatrix, FeatureSchema), FeatureError> {
    let schema = feature_schema(
        table.dim(),
        &nn_model.config.variant_name(),
        6 * nn_model.config.embed_dim,
    );
    let mut matrix = FeatureMatrix::new(schema.n_cols());
    for trip in trips {
        let row = assemble_tree_features(trip, network, history, table, nn_model, weather)?;
        matrix.push_row(&row)?;
    }
    Ok((matrix, schema))
}
