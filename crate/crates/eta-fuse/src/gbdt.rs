//! First-order gradient-boosted regression trees with MAE loss.
//!
//! Trees fit the pseudo-residuals `y - current prediction` directly under an
//! L1 impurity: a split's score is the drop in sum-of-absolute-deviations
//! around per-side medians, minus a per-leaf penalty `gamma`, and leaf values
//! are medians shrunk by `1/(1+lambda)`. Split search is exact greedy over
//! all midpoints of consecutive distinct sorted values — no histograms — so
//! small instances can be checked against brute force. Missing values
//! (the `-999` sentinel) are tried on both sides of every candidate split and
//! the better side is stored as that node's default direction.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{derive_seed, MISSING};

const MODEL_VERSION: &str = "eta-fuse-gbdt/1";

#[derive(Debug, Error)]
pub enum GbdtError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("row width mismatch: expected {expected} features, got {actual}")]
    WidthMismatch { expected: usize, actual: usize },
    #[error("model file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Per-leaf gain penalty.
    pub gamma: f64,
    /// L2 shrink on leaf values: leaf = median / (1 + lambda).
    pub lambda: f64,
    /// Fraction of features sampled per tree, in (0, 1].
    pub feature_subsample: f64,
    pub seed: u64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            n_trees: 300,
            learning_rate: 0.1,
            max_depth: 7,
            min_samples_leaf: 20,
            gamma: 0.0,
            lambda: 1.0,
            feature_subsample: 0.8,
            seed: 0,
        }
    }
}

/// Column-major training data.
#[derive(Debug, Clone)]
pub struct Dataset {
    n_rows: usize,
    columns: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self, GbdtError> {
        let n_rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n_rows) {
            return Err(GbdtError::Format("ragged columns".into()));
        }
        Ok(Dataset { n_rows, columns })
    }

    pub fn from_rows(n_cols: usize, rows: &[Vec<f64>]) -> Result<Self, GbdtError> {
        let mut columns = vec![Vec::with_capacity(rows.len()); n_cols];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(GbdtError::WidthMismatch {
                    expected: n_cols,
                    actual: rows[i].len(),
                });
            }
            for (c, &v) in row.iter().enumerate() {
                columns[c].push(v);
            }
        }
        Ok(Dataset {
            n_rows: rows.len(),
            columns,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.columns[col][row]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: u32,
        threshold: f64,
        /// Side taken by rows whose feature value is the missing sentinel.
        default_left: bool,
        left: u32,
        right: u32,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionTree {
    /// Root at index 0; children always come after their parent.
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    /// Routes one sample through the tree. `feature_at` fetches raw values,
    /// so both row-major and column-major callers avoid copies.
    pub fn predict_with(&self, feature_at: impl Fn(usize) -> f64) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    default_left,
                    left,
                    right,
                } => {
                    let v = feature_at(*feature as usize);
                    let go_left = if v == MISSING {
                        *default_left
                    } else {
                        v <= *threshold
                    };
                    at = if go_left {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.predict_with(|f| row[f])
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbdtModel {
    pub base_score: f64,
    pub trees: Vec<RegressionTree>,
    pub config: GbdtConfig,
    pub n_features: usize,
    /// Training MAE after each boosting iteration.
    pub train_mae: Vec<f64>,
}

impl GbdtModel {
    pub fn predict_row(&self, row: &[f64]) -> Result<f64, GbdtError> {
        if row.len() != self.n_features {
            return Err(GbdtError::WidthMismatch {
                expected: self.n_features,
                actual: row.len(),
            });
        }
        let mut pred = self.base_score;
        for tree in &self.trees {
            pred += self.config.learning_rate * tree.predict_row(row);
        }
        Ok(pred)
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, GbdtError> {
        rows.iter().map(|r| self.predict_row(r)).collect()
    }
}

// ---------------------------------------------------------------------------
// L1 impurity machinery
// ---------------------------------------------------------------------------

#[derive(PartialEq)]
struct Cmp(f64);

impl Eq for Cmp {}

impl PartialOrd for Cmp {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cmp {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Insert-only running median with sums, for incremental sum-of-absolute-
/// deviations. `low` is a max-heap of the lower half (including the median),
/// `high` a min-heap of the upper half.
#[derive(Default)]
struct MedianSad {
    low: BinaryHeap<Cmp>,
    high: BinaryHeap<Reverse<Cmp>>,
    sum_low: f64,
    sum_high: f64,
}

impl MedianSad {
    fn push(&mut self, x: f64) {
        if self.low.is_empty() || x <= self.low.peek().unwrap().0 {
            self.low.push(Cmp(x));
            self.sum_low += x;
        } else {
            self.high.push(Reverse(Cmp(x)));
            self.sum_high += x;
        }
        if self.low.len() > self.high.len() + 1 {
            let moved = self.low.pop().unwrap().0;
            self.sum_low -= moved;
            self.sum_high += moved;
            self.high.push(Reverse(Cmp(moved)));
        } else if self.high.len() > self.low.len() {
            let Reverse(Cmp(moved)) = self.high.pop().unwrap();
            self.sum_high -= moved;
            self.sum_low += moved;
            self.low.push(Cmp(moved));
        }
    }

    /// Sum of |x - median| over everything pushed so far (0 when empty).
    /// Any point of the median interval minimizes the sum, so the lower
    /// middle used here gives the exact minimum.
    fn sad(&self) -> f64 {
        match self.low.peek() {
            None => 0.0,
            Some(Cmp(median)) => {
                let n_low = self.low.len() as f64;
                let n_high = self.high.len() as f64;
                (median * n_low - self.sum_low) + (self.sum_high - median * n_high)
            }
        }
    }
}

/// `out[k]` = SAD of `seed ∪ values[..k]` for k in 0..=values.len().
fn prefix_sads<'a>(values: impl Iterator<Item = &'a f64>, seed: &[f64]) -> Vec<f64> {
    let mut acc = MedianSad::default();
    for &s in seed {
        acc.push(s);
    }
    let mut out = vec![acc.sad()];
    for &v in values {
        acc.push(v);
        out.push(acc.sad());
    }
    out
}

/// Exact L1 minimizer of a residual set: the sample median, with even counts
/// resolved to the mean of the two middle values.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty set");
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitCandidate {
    pub threshold: f64,
    pub gain: f64,
    pub default_left: bool,
}

/// Exact greedy search over one feature column.
///
/// Evaluates every midpoint between consecutive distinct sorted values. The
/// gain of a candidate is `S(parent) - S(left) - S(right) - gamma` where
/// `S` is the sum of absolute deviations from the side's median. Samples with
/// the missing sentinel are tried on both sides; the better side becomes the
/// stored default (left on ties). Returns `None` when no candidate has
/// strictly positive gain. Within the column, ties keep the lowest threshold.
pub fn best_split(
    column: &[f64],
    residuals: &[f64],
    config: &GbdtConfig,
) -> Option<SplitCandidate> {
    assert_eq!(column.len(), residuals.len());
    let n = column.len();
    let msl = config.min_samples_leaf.max(1);
    if n < 2 * msl {
        return None;
    }

    let mut present: Vec<(f64, f64)> = Vec::with_capacity(n);
    let mut missing: Vec<f64> = Vec::new();
    for (&v, &r) in column.iter().zip(residuals) {
        if v == MISSING {
            missing.push(r);
        } else {
            present.push((v, r));
        }
    }
    let m = present.len();
    if m < 2 {
        return None;
    }
    present.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let sorted_resids: Vec<f64> = present.iter().map(|p| p.1).collect();

    let left = prefix_sads(sorted_resids.iter(), &[]);
    let right_rev = prefix_sads(sorted_resids.iter().rev(), &[]);
    let (left_m, right_m) = if missing.is_empty() {
        (None, None)
    } else {
        (
            Some(prefix_sads(sorted_resids.iter(), &missing)),
            Some(prefix_sads(sorted_resids.iter().rev(), &missing)),
        )
    };
    let parent = match &left_m {
        Some(lm) => lm[m],
        None => left[m],
    };

    let n_miss = missing.len();
    let mut best: Option<SplitCandidate> = None;
    for k in 1..m {
        if present[k - 1].0 == present[k].0 {
            continue;
        }
        let threshold = (present[k - 1].0 + present[k].0) / 2.0;
        // SAD of elements k..m is the reverse prefix of length m - k
        let sad_right = right_rev[m - k];
        let sad_left = left[k];

        let (gain, default_left) = if n_miss == 0 {
            let ok = k >= msl && m - k >= msl;
            if !ok {
                continue;
            }
            (parent - sad_left - sad_right - config.gamma, true)
        } else {
            let lm = left_m.as_ref().unwrap();
            let rm = right_m.as_ref().unwrap();
            let gain_a = if k + n_miss >= msl && m - k >= msl {
                Some(parent - lm[k] - sad_right - config.gamma)
            } else {
                None
            };
            let gain_b = if k >= msl && m - k + n_miss >= msl {
                Some(parent - sad_left - rm[m - k] - config.gamma)
            } else {
                None
            };
            match (gain_a, gain_b) {
                (None, None) => continue,
                (Some(a), None) => (a, true),
                (None, Some(b)) => (b, false),
                (Some(a), Some(b)) => {
                    if a >= b {
                        (a, true)
                    } else {
                        (b, false)
                    }
                }
            }
        };

        let better = match &best {
            None => true,
            Some(b) => gain > b.gain,
        };
        if better {
            best = Some(SplitCandidate {
                threshold,
                gain,
                default_left,
            });
        }
    }

    best.filter(|b| b.gain > 0.0)
}

// ---------------------------------------------------------------------------
// Tree growing and boosting
// ---------------------------------------------------------------------------

struct TreeBuilder<'a> {
    data: &'a Dataset,
    residuals: &'a [f64],
    config: &'a GbdtConfig,
    features: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> TreeBuilder<'a> {
    fn leaf(&mut self, indices: &[usize]) -> u32 {
        let resids: Vec<f64> = indices.iter().map(|&i| self.residuals[i]).collect();
        let value = median(&resids) / (1.0 + self.config.lambda);
        self.nodes.push(Node::Leaf { value });
        (self.nodes.len() - 1) as u32
    }

    fn grow(&mut self, indices: &[usize], depth: usize) -> u32 {
        let msl = self.config.min_samples_leaf.max(1);
        if depth >= self.config.max_depth || indices.len() < 2 * msl {
            return self.leaf(indices);
        }

        let mut best: Option<(SplitCandidate, usize)> = None;
        let mut col_buf = Vec::with_capacity(indices.len());
        let mut res_buf = Vec::with_capacity(indices.len());
        for &f in &self.features {
            col_buf.clear();
            res_buf.clear();
            for &i in indices {
                col_buf.push(self.data.columns[f][i]);
                res_buf.push(self.residuals[i]);
            }
            if let Some(cand) = best_split(&col_buf, &res_buf, self.config) {
                // strict > keeps the lowest feature index, then the lowest
                // threshold (best_split already resolves in-column ties)
                let better = match &best {
                    None => true,
                    Some((b, _)) => cand.gain > b.gain,
                };
                if better {
                    best = Some((cand, f));
                }
            }
        }

        let Some((cand, feature)) = best else {
            return self.leaf(indices);
        };

        // partition with the exact prediction-time routing rule
        let mut left_idx = Vec::new();
        let mut right_idx = Vec::new();
        for &i in indices {
            let v = self.data.columns[feature][i];
            let go_left = if v == MISSING {
                cand.default_left
            } else {
                v <= cand.threshold
            };
            if go_left {
                left_idx.push(i);
            } else {
                right_idx.push(i);
            }
        }
        if left_idx.is_empty() || right_idx.is_empty() {
            // degenerate threshold rounding; refuse the split
            return self.leaf(indices);
        }

        let at = self.nodes.len();
        self.nodes.push(Node::Split {
            feature: feature as u32,
            threshold: cand.threshold,
            default_left: cand.default_left,
            left: 0,
            right: 0,
        });
        let left = self.grow(&left_idx, depth + 1);
        let right = self.grow(&right_idx, depth + 1);
        match &mut self.nodes[at] {
            Node::Split {
                left: l, right: r, ..
            } => {
                *l = left;
                *r = right;
            }
            Node::Leaf { .. } => unreachable!(),
        }
        at as u32
    }
}

fn sample_features(n_cols: usize, ratio: f64, seed: u64) -> Vec<usize> {
    let take = ((n_cols as f64 * ratio).ceil() as usize).clamp(1, n_cols);
    let mut all: Vec<usize> = (0..n_cols).collect();
    if take < n_cols {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        all.shuffle(&mut rng);
        all.truncate(take);
        all.sort_unstable();
    }
    all
}

fn fit_tree_seeded(
    data: &Dataset,
    residuals: &[f64],
    config: &GbdtConfig,
    seed: u64,
) -> Result<RegressionTree, GbdtError> {
    if data.n_rows() == 0 || residuals.is_empty() {
        return Err(GbdtError::EmptyDataset);
    }
    assert_eq!(data.n_rows(), residuals.len());
    let features = sample_features(data.n_cols(), config.feature_subsample, seed);
    let mut builder = TreeBuilder {
        data,
        residuals,
        config,
        features,
        nodes: Vec::new(),
    };
    let indices: Vec<usize> = (0..data.n_rows()).collect();
    builder.grow(&indices, 0);
    Ok(RegressionTree {
        nodes: builder.nodes,
    })
}

/// Grows one regression tree on the given pseudo-residuals.
pub fn fit_tree(
    data: &Dataset,
    residuals: &[f64],
    config: &GbdtConfig,
) -> Result<RegressionTree, GbdtError> {
    fit_tree_seeded(
        data,
        residuals,
        config,
        derive_seed(config.seed, "gbdt/tree/0"),
    )
}

/// Serial boosting: base score is the target median; each tree fits the
/// residuals of everything before it and enters the model with shrinkage
/// `learning_rate`. Training MAE is recorded after every iteration.
pub fn boost(data: &Dataset, targets: &[f64], config: &GbdtConfig) -> Result<GbdtModel, GbdtError> {
    if data.n_rows() == 0 || targets.is_empty() {
        return Err(GbdtError::EmptyDataset);
    }
    assert_eq!(data.n_rows(), targets.len());

    let base_score = median(targets);
    let mut preds = vec![base_score; targets.len()];
    let mut trees = Vec::with_capacity(config.n_trees);
    let mut train_mae = Vec::with_capacity(config.n_trees);
    let mut residuals = vec![0.0; targets.len()];
    for k in 0..config.n_trees {
        for i in 0..targets.len() {
            residuals[i] = targets[i] - preds[i];
        }
        let tree = fit_tree_seeded(
            data,
            &residuals,
            config,
            derive_seed(config.seed, &format!("gbdt/tree/{k}")),
        )?;
        for (i, p) in preds.iter_mut().enumerate() {
            *p += config.learning_rate * tree.predict_with(|f| data.columns[f][i]);
        }
        let mae = targets
            .iter()
            .zip(&preds)
            .map(|(y, p)| (y - p).abs())
            .sum::<f64>()
            / targets.len() as f64;
        train_mae.push(mae);
        trees.push(tree);
    }

    Ok(GbdtModel {
        base_score,
        trees,
        config: config.clone(),
        n_features: data.n_cols(),
        train_mae,
    })
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: String,
    model: GbdtModel,
}

pub fn save_model(model: &GbdtModel, path: &Path) -> Result<(), GbdtError> {
    let file = ModelFile {
        version: MODEL_VERSION.to_string(),
        model: model.clone(),
    };
    let text = serde_json::to_string(&file).map_err(|e| GbdtError::Format(e.to_string()))?;
    crate::fsutil::atomic_write(path, text.as_bytes())?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<GbdtModel, GbdtError> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| GbdtError::Format(e.to_string()))?;
    if file.version != MODEL_VERSION {
        return Err(GbdtError::Format(format!(
            "version mismatch: file has `{}`, expected `{}`",
            file.version, MODEL_VERSION
        )));
    }
    Ok(file.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn cfg(max_depth: usize) -> GbdtConfig {
        GbdtConfig {
            n_trees: 1,
            learning_rate: 1.0,
            max_depth,
            min_samples_leaf: 1,
            gamma: 0.0,
            lambda: 0.0,
            feature_subsample: 1.0,
            seed: 7,
        }
    }

    #[test]
    fn best_split_hand_example() {
        let c = cfg(1);
        let cand = best_split(&[1.0, 2.0, 3.0, 4.0], &[0.0, 0.0, 10.0, 10.0], &c).unwrap();
        assert_eq!(cand.threshold, 2.5);
        assert_eq!(cand.gain, 20.0);

        let mut with_gamma = c.clone();
        with_gamma.gamma = 3.0;
        let cand = best_split(&[1.0, 2.0, 3.0, 4.0], &[0.0, 0.0, 10.0, 10.0], &with_gamma).unwrap();
        assert_eq!(cand.gain, 17.0);
    }

    #[test]
    fn best_split_degenerate_cases() {
        let c = cfg(1);
        // constant column: no distinct midpoint
        assert!(best_split(&[2.0, 2.0, 2.0, 2.0], &[0.0, 1.0, 2.0, 3.0], &c).is_none());
        // equal residuals: gain 0 everywhere
        assert!(best_split(&[1.0, 2.0, 3.0, 4.0], &[5.0, 5.0, 5.0, 5.0], &c).is_none());
        // too few samples
        let strict = GbdtConfig {
            min_samples_leaf: 3,
            ..c
        };
        assert!(best_split(&[1.0, 2.0, 3.0, 4.0], &[0.0, 0.0, 10.0, 10.0], &strict).is_none());
    }

    #[test]
    fn best_split_missing_defaults_to_better_side() {
        let c = cfg(1);
        let cand = best_split(&[MISSING, 1.0, 2.0], &[10.0, 0.0, 10.0], &c).unwrap();
        assert_eq!(cand.threshold, 1.5);
        assert!(!cand.default_left);
        assert_eq!(cand.gain, 10.0);
    }

    #[test]
    fn min_samples_leaf_counts_routed_missing() {
        let c = GbdtConfig {
            min_samples_leaf: 2,
            ..cfg(1)
        };
        // only 1 present sample can sit left of any threshold, so the left
        // side needs the missing samples to reach the minimum
        let cand = best_split(
            &[MISSING, MISSING, 1.0, 2.0, 3.0],
            &[0.0, 0.0, 0.0, 10.0, 10.0],
            &c,
        )
        .unwrap();
        assert_eq!(cand.threshold, 1.5);
        assert!(cand.default_left);
    }

    #[test]
    fn fit_tree_depth_zero_is_shrunk_median() {
        let data = Dataset::from_rows(1, &[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let tree = fit_tree(&data, &[1.0, 2.0, 10.0], &cfg(0)).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.predict_row(&[0.0]), 2.0);

        let mut with_lambda = cfg(0);
        with_lambda.lambda = 1.0;
        let tree = fit_tree(&data, &[1.0, 2.0, 10.0], &with_lambda).unwrap();
        assert_eq!(tree.predict_row(&[0.0]), 1.0);
    }

    #[test]
    fn fit_tree_separable_reaches_zero_error() {
        let rows: Vec<Vec<f64>> = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let data = Dataset::from_rows(1, &rows).unwrap();
        let resids = [5.0, 5.0, 9.0, 9.0];
        let tree = fit_tree(&data, &resids, &cfg(3)).unwrap();
        for (row, r) in rows.iter().zip(resids) {
            assert_eq!(tree.predict_row(row), r);
        }
    }

    #[test]
    fn fit_tree_empty_dataset_errors() {
        let data = Dataset::from_rows(1, &[]).unwrap();
        assert!(matches!(
            fit_tree(&data, &[], &cfg(1)),
            Err(GbdtError::EmptyDataset)
        ));
    }

    #[test]
    fn boost_zero_trees_predicts_median() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let data = Dataset::from_rows(1, &rows).unwrap();
        let y = [3.0, 1.0, 4.0, 1.0, 5.0];
        let model = boost(
            &data,
            &y,
            &GbdtConfig {
                n_trees: 0,
                ..cfg(2)
            },
        )
        .unwrap();
        for row in &rows {
            assert_eq!(model.predict_row(row).unwrap(), 3.0);
        }
    }

    #[test]
    fn boost_single_depth_zero_tree_by_hand() {
        // base = median(y) = 2; residuals (-1, 0, 8) have median 0, so the
        // lone unit-shrinkage leaf leaves predictions at the base
        let rows: Vec<Vec<f64>> = vec![vec![0.0], vec![1.0], vec![2.0]];
        let data = Dataset::from_rows(1, &rows).unwrap();
        let y = [1.0, 2.0, 10.0];
        let model = boost(
            &data,
            &y,
            &GbdtConfig {
                n_trees: 1,
                ..cfg(0)
            },
        )
        .unwrap();
        assert_eq!(model.base_score, 2.0);
        for row in &rows {
            assert_eq!(model.predict_row(row).unwrap(), 2.0);
        }

        // residuals with a non-zero median move every prediction by it
        let y = [5.0, 9.0, 9.0];
        let model = boost(
            &data,
            &y,
            &GbdtConfig {
                n_trees: 1,
                ..cfg(0)
            },
        )
        .unwrap();
        assert_eq!(model.base_score, 9.0);
        // residuals (-4, 0, 0): median 0 again; try skewed targets instead
        let y = [5.0, 7.0, 9.0];
        let model = boost(
            &data,
            &y,
            &GbdtConfig {
                n_trees: 1,
                ..cfg(0)
            },
        )
        .unwrap();
        assert_eq!(model.base_score, 7.0);
        assert_eq!(model.predict_row(&rows[0]).unwrap(), 7.0);
    }

    #[test]
    fn boost_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..80)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0] * 3.0 + r[1] + 1.0).collect();
        let data = Dataset::from_rows(2, &rows).unwrap();
        let c = GbdtConfig {
            n_trees: 10,
            learning_rate: 0.5,
            feature_subsample: 0.5,
            ..cfg(3)
        };
        let a = boost(&data, &y, &c).unwrap();
        let b = boost(&data, &y, &c).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn boost_training_mae_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..120)
            .map(|_| vec![rng.random::<f64>() * 10.0, rng.random::<f64>() * 5.0])
            .collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| r[0] * 2.0 + (r[1] * 2.0).sin() * 3.0 + rng.random::<f64>())
            .collect();
        let data = Dataset::from_rows(2, &rows).unwrap();
        let c = GbdtConfig {
            n_trees: 40,
            learning_rate: 0.3,
            max_depth: 3,
            min_samples_leaf: 2,
            gamma: 0.0,
            lambda: 0.0,
            feature_subsample: 1.0,
            seed: 0,
        };
        let model = boost(&data, &y, &c).unwrap();
        for pair in model.train_mae.windows(2) {
            assert!(pair[1] <= pair[0], "MAE rose: {} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn predict_additivity_and_row_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0] - r[1]).collect();
        let data = Dataset::from_rows(2, &rows).unwrap();
        let c = GbdtConfig {
            n_trees: 6,
            learning_rate: 0.4,
            min_samples_leaf: 2,
            ..cfg(3)
        };
        let model = boost(&data, &y, &c).unwrap();

        // dropping the last tree and re-adding its shrunk output is exact
        let mut shorter = model.clone();
        let last = shorter.trees.pop().unwrap();
        for row in &rows {
            let full = model.predict_row(row).unwrap();
            let partial =
                shorter.predict_row(row).unwrap() + c.learning_rate * last.predict_row(row);
            assert_eq!(full, partial);
        }

        // pointwise function: row order is irrelevant
        let mut rev = rows.clone();
        rev.reverse();
        let mut preds_rev = model.predict(&rev).unwrap();
        preds_rev.reverse();
        assert_eq!(model.predict(&rows).unwrap(), preds_rev);
    }

    #[test]
    fn predict_width_mismatch_names_sizes() {
        let data = Dataset::from_rows(2, &[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let model = boost(&data, &[1.0, 2.0], &cfg(1)).unwrap();
        match model.predict_row(&[0.0]) {
            Err(GbdtError::WidthMismatch { expected, actual }) => {
                assert_eq!((expected, actual), (2, 1));
            }
            other => panic!("expected width mismatch, got {other:?}"),
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|_| {
                vec![
                    rng.random::<f64>(),
                    rng.random::<f64>(),
                    rng.random::<f64>(),
                ]
            })
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0] * 4.0 + r[2]).collect();
        let data = Dataset::from_rows(3, &rows).unwrap();
        let model = boost(
            &data,
            &y,
            &GbdtConfig {
                n_trees: 5,
                ..cfg(3)
            },
        )
        .unwrap();
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.n_features, 3);
        for _ in 0..100 {
            let row = vec![
                rng.random::<f64>(),
                rng.random::<f64>(),
                rng.random::<f64>(),
            ];
            assert_eq!(
                model.predict_row(&row).unwrap().to_bits(),
                loaded.predict_row(&row).unwrap().to_bits()
            );
        }

        // truncated file
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_model(&path), Err(GbdtError::Format(_))));

        // version mismatch
        let hacked = text.replace(MODEL_VERSION, "eta-fuse-gbdt/999");
        std::fs::write(&path, hacked).unwrap();
        match load_model(&path) {
            Err(GbdtError::Format(msg)) => assert!(msg.contains("version")),
            other => panic!("expected version error, got {other:?}"),
        }
    }

    /// Brute-force Σ|r - c| over every sample value; the minimum must not
    /// beat the tree's stored leaf value.
    #[test]
    fn leaf_values_are_l1_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let n = rng.random_range(4..40);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| vec![rng.random::<f64>() * 4.0, rng.random::<f64>()])
                .collect();
            let resids: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
            let data = Dataset::from_rows(2, &rows).unwrap();
            let tree = fit_tree(&data, &resids, &cfg(2)).unwrap();

            // group rows by routed leaf value
            let mut groups: std::collections::HashMap<u64, Vec<f64>> = Default::default();
            for (row, &r) in rows.iter().zip(&resids) {
                groups
                    .entry(tree.predict_row(row).to_bits())
                    .or_default()
                    .push(r);
            }
            for (leaf_bits, rs) in groups {
                let leaf = f64::from_bits(leaf_bits);
                let stored: f64 = rs.iter().map(|r| (r - leaf).abs()).sum();
                let brute = rs
                    .iter()
                    .map(|&c| rs.iter().map(|r| (r - c).abs()).sum::<f64>())
                    .fold(f64::INFINITY, f64::min);
                assert!(
                    stored <= brute + 1e-9,
                    "leaf {leaf} SAD {stored} beats brute {brute}?"
                );
            }
        }
    }

    proptest! {
        #[test]
        fn median_minimizes_l1(values in prop::collection::vec(-100.0f64..100.0, 1..40)) {
            let med = median(&values);
            let at_med: f64 = values.iter().map(|v| (v - med).abs()).sum();
            for &c in &values {
                let at_c: f64 = values.iter().map(|v| (v - c).abs()).sum();
                prop_assert!(at_med <= at_c + 1e-9);
            }
        }

        #[test]
        fn incremental_sad_matches_direct(values in prop::collection::vec(-50.0f64..50.0, 1..60)) {
            let mut acc = MedianSad::default();
            for (i, &v) in values.iter().enumerate() {
                acc.push(v);
                let seen = &values[..=i];
                let med = median(seen);
                let direct: f64 = seen.iter().map(|x| (x - med).abs()).sum();
                prop_assert!((acc.sad() - direct).abs() < 1e-9);
            }
        }
    }
}
