//! Metrics and the two-stage validation-weighted ensemble.
//!
//! Tree-model variants are blended first, CNN variants second, and the two
//! blends are fused by a single top-level weight — all weights chosen purely
//! by validation MAPE. Weight fitting is simplex-constrained coordinate
//! descent with every vertex (single-component) candidate evaluated
//! explicitly, which guarantees the fitted blend never validates worse than
//! its best component.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const WEIGHTS_VERSION: &str = "eta-fuse-weights/1";
const GRID_POINTS: usize = 101;
const SWEEP_TOLERANCE: f64 = 1e-7;
const MAX_SWEEPS: usize = 100;
/// Strict-improvement margin: moves and tie-breaks ignore differences below
/// this, so symmetric inputs keep their symmetric solutions.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("length mismatch: {left} targets vs {right} predictions")]
    LengthMismatch { left: usize, right: usize },
    #[error("MAPE needs strictly positive targets; index {index} is {value}")]
    NonPositiveTarget { index: usize, value: f64 },
    #[error("no components in group {0}")]
    EmptyGroup(&'static str),
    #[error("weights file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mean absolute percentage error, `mean(|pred - target| / target)`.
pub fn mape(targets: &[f64], predictions: &[f64]) -> Result<f64, EnsembleError> {
    if targets.len() != predictions.len() || targets.is_empty() {
        return Err(EnsembleError::LengthMismatch {
            left: targets.len(),
            right: predictions.len(),
        });
    }
    let mut sum = 0.0;
    for (i, (&y, &p)) in targets.iter().zip(predictions).enumerate() {
        if y <= 0.0 {
            return Err(EnsembleError::NonPositiveTarget { index: i, value: y });
        }
        sum += (p - y).abs() / y;
    }
    Ok(sum / targets.len() as f64)
}

/// Mean absolute error.
pub fn mae(targets: &[f64], predictions: &[f64]) -> Result<f64, EnsembleError> {
    if targets.len() != predictions.len() || targets.is_empty() {
        return Err(EnsembleError::LengthMismatch {
            left: targets.len(),
            right: predictions.len(),
        });
    }
    let sum: f64 = targets
        .iter()
        .zip(predictions)
        .map(|(y, p)| (p - y).abs())
        .sum();
    Ok(sum / targets.len() as f64)
}

/// Pointwise convex combination of component predictions.
pub fn combine(predictions: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>, EnsembleError> {
    if predictions.len() != weights.len() {
        return Err(EnsembleError::LengthMismatch {
            left: predictions.len(),
            right: weights.len(),
        });
    }
    let n = predictions.first().map_or(0, Vec::len);
    for p in predictions {
        if p.len() != n {
            return Err(EnsembleError::LengthMismatch {
                left: n,
                right: p.len(),
            });
        }
    }
    let mut out = vec![0.0; n];
    for (p, &w) in predictions.iter().zip(weights) {
        for (o, &v) in out.iter_mut().zip(p) {
            *o += w * v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentGroup {
    Tree,
    Nn,
}

impl ComponentGroup {
    fn name(self) -> &'static str {
        match self {
            ComponentGroup::Tree => "tree",
            ComponentGroup::Nn => "nn",
        }
    }
}

fn renormalize(weights: &mut [f64]) {
    let sum: f64 = weights.iter().sum();
    if sum > 0.0 {
        for w in weights.iter_mut() {
            *w /= sum;
        }
    }
}

/// Candidate with coordinate `i` pinned to `g` and the rest rescaled to keep
/// the simplex sum; when everything else is zero the remainder spreads
/// evenly.
fn reweighted(current: &[f64], i: usize, g: f64) -> Vec<f64> {
    let k = current.len();
    let rest: f64 = 1.0 - current[i];
    let mut out = vec![0.0; k];
    if rest > TIE_EPS {
        let scale = (1.0 - g) / rest;
        for (j, w) in out.iter_mut().enumerate() {
            *w = if j == i { g } else { current[j] * scale };
        }
    } else {
        let share = if k > 1 {
            (1.0 - g) / (k - 1) as f64
        } else {
            0.0
        };
        for (j, w) in out.iter_mut().enumerate() {
            *w = if j == i { g } else { share };
        }
    }
    renormalize(&mut out);
    out
}

/// Fits non-negative weights summing to 1 that minimize validation MAPE.
///
/// Starts uniform and line-searches each coordinate over a 101-point grid in
/// [0, 1] (rescaling the rest proportionally), sweeping until the improvement
/// falls under 1e-7 or 100 sweeps pass. MAPE is piecewise linear, so plain
/// per-coordinate moves can stall on a kink; a pairwise mass-transfer polish
/// (same grid plus a fine local search, every pair of coordinates) follows
/// until it too converges. Moves require a strict improvement, so symmetric
/// inputs keep the uniform solution. Every simplex vertex is evaluated as
/// well and the overall best wins, hence the result never scores above the
/// best single component.
pub fn fit_weights(
    val_predictions: &[Vec<f64>],
    val_targets: &[f64],
    group: ComponentGroup,
) -> Result<Vec<f64>, EnsembleError> {
    let k = val_predictions.len();
    if k == 0 {
        return Err(EnsembleError::EmptyGroup(group.name()));
    }
    if k == 1 {
        // still validates shapes and targets
        mape(val_targets, &val_predictions[0])?;
        return Ok(vec![1.0]);
    }

    let score = |w: &[f64]| -> Result<f64, EnsembleError> {
        mape(val_targets, &combine(val_predictions, w)?)
    };

    let mut weights = vec![1.0 / k as f64; k];
    let mut best = score(&weights)?;

    for _sweep in 0..MAX_SWEEPS {
        let before = best;
        for i in 0..k {
            let mut move_to: Option<(Vec<f64>, f64)> = None;
            for step in 0..GRID_POINTS {
                let g = step as f64 / (GRID_POINTS - 1) as f64;
                let cand = reweighted(&weights, i, g);
                let m = score(&cand)?;
                let current_best = move_to.as_ref().map_or(best, |(_, b)| *b);
                if m < current_best - TIE_EPS {
                    move_to = Some((cand, m));
                }
            }
            if let Some((cand, m)) = move_to {
                weights = cand;
                best = m;
            }
        }
        if before - best < SWEEP_TOLERANCE {
            break;
        }
    }

    // pairwise polish: redistribute the mass of each coordinate pair along
    // its simplex edge, keeping the rest fixed
    for _sweep in 0..MAX_SWEEPS {
        let before = best;
        for i in 0..k {
            for j in (i + 1)..k {
                let mass = weights[i] + weights[j];
                if mass <= TIE_EPS {
                    continue;
                }
                let eval_split =
                    |t: f64, weights: &[f64]| -> Result<(Vec<f64>, f64), EnsembleError> {
                        let mut cand = weights.to_vec();
                        cand[i] = t * mass;
                        cand[j] = (1.0 - t) * mass;
                        renormalize(&mut cand);
                        let m = score(&cand)?;
                        Ok((cand, m))
                    };
                let mut move_to: Option<(Vec<f64>, f64, f64)> = None;
                for step in 0..GRID_POINTS {
                    let t = step as f64 / (GRID_POINTS - 1) as f64;
                    let (cand, m) = eval_split(t, &weights)?;
                    let current_best = move_to.as_ref().map_or(best, |(_, b, _)| *b);
                    if m < current_best - TIE_EPS {
                        move_to = Some((cand, m, t));
                    }
                }
                // refine around the best coarse split at 1e-4 resolution
                if let Some((_, _, coarse_t)) = move_to {
                    let lo = (coarse_t - 0.01).max(0.0);
                    let hi = (coarse_t + 0.01).min(1.0);
                    for step in 0..GRID_POINTS {
                        let t = lo + (hi - lo) * step as f64 / (GRID_POINTS - 1) as f64;
                        let (cand, m) = eval_split(t, &weights)?;
                        let current_best = move_to.as_ref().map_or(best, |(_, b, _)| *b);
                        if m < current_best - TIE_EPS {
                            move_to = Some((cand, m, t));
                        }
                    }
                }
                if let Some((cand, m, _)) = move_to {
                    weights = cand;
                    best = m;
                }
            }
        }
        if before - best < SWEEP_TOLERANCE {
            break;
        }
    }

    // vertex inclusion: adopt a single component if strictly better
    for i in 0..k {
        let mut vertex = vec![0.0; k];
        vertex[i] = 1.0;
        let m = score(&vertex)?;
        if m < best {
            best = m;
            weights = vertex;
        }
    }

    renormalize(&mut weights);
    Ok(weights)
}

/// Two-stage fused weights plus the component ids they refer to.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleWeights {
    pub tree_components: Vec<String>,
    pub nn_components: Vec<String>,
    pub tree_weights: Vec<f64>,
    pub nn_weights: Vec<f64>,
    /// Weight on the tree blend; the CNN blend gets `1 - top_weight`.
    pub top_weight: f64,
}

impl EnsembleWeights {
    /// Applies the fused weights to per-component validation-ordered
    /// prediction rows.
    pub fn apply(
        &self,
        tree_preds: &[Vec<f64>],
        nn_preds: &[Vec<f64>],
    ) -> Result<Vec<f64>, EnsembleError> {
        let tree = combine(tree_preds, &self.tree_weights)?;
        let nn = combine(nn_preds, &self.nn_weights)?;
        combine(&[tree, nn], &[self.top_weight, 1.0 - self.top_weight])
    }
}

/// Fits the full two-stage ensemble: per-group simplex weights, then the
/// top-level weight over a 101-point grid. Grid ties break toward 0.5.
pub fn fit_ensemble(
    tree_val_preds: &[(String, Vec<f64>)],
    nn_val_preds: &[(String, Vec<f64>)],
    val_targets: &[f64],
) -> Result<EnsembleWeights, EnsembleError> {
    let tree_rows: Vec<Vec<f64>> = tree_val_preds.iter().map(|(_, p)| p.clone()).collect();
    let nn_rows: Vec<Vec<f64>> = nn_val_preds.iter().map(|(_, p)| p.clone()).collect();
    let tree_weights = fit_weights(&tree_rows, val_targets, ComponentGroup::Tree)?;
    let nn_weights = fit_weights(&nn_rows, val_targets, ComponentGroup::Nn)?;
    let tree_blend = combine(&tree_rows, &tree_weights)?;
    let nn_blend = combine(&nn_rows, &nn_weights)?;

    let blends = [tree_blend, nn_blend];
    let mut best_mape = f64::INFINITY;
    let mut candidates: Vec<f64> = Vec::new();
    for step in 0..GRID_POINTS {
        let alpha = step as f64 / (GRID_POINTS - 1) as f64;
        let m = mape(val_targets, &combine(&blends, &[alpha, 1.0 - alpha])?)?;
        if m < best_mape - TIE_EPS {
            best_mape = m;
            candidates = vec![alpha];
        } else if (m - best_mape).abs() <= TIE_EPS {
            candidates.push(alpha);
        }
    }
    let top_weight = candidates
        .iter()
        .copied()
        .min_by(|a, b| {
            let da = (a - 0.5).abs();
            let db = (b - 0.5).abs();
            da.partial_cmp(&db).unwrap().then(a.partial_cmp(b).unwrap())
        })
        .unwrap_or(0.5);

    Ok(EnsembleWeights {
        tree_components: tree_val_preds.iter().map(|(n, _)| n.clone()).collect(),
        nn_components: nn_val_preds.iter().map(|(n, _)| n.clone()).collect(),
        tree_weights,
        nn_weights,
        top_weight,
    })
}

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub component: String,
    pub mape: f64,
    pub mae: f64,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub rows: Vec<MetricsRow>,
}

impl Report {
    /// Comma-separated machine form, one `component,mape,mae` line per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("component,mape,mae\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.component, r.mape, r.mae));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.component.len())
            .max()
            .unwrap_or(9)
            .max("component".len());
        let mut out = format!("{:width$}  {:>10}  {:>12}\n", "component", "MAPE", "MAE");
        for r in &self.rows {
            out.push_str(&format!(
                "{:width$}  {:>10.5}  {:>12.3}\n",
                r.component, r.mape, r.mae
            ));
        }
        out
    }
}

/// Per-component and ensemble metrics against the validation targets; the
/// simple-eta baseline row is always present and always first.
pub fn evaluate_report(
    targets: &[f64],
    baseline_simple_eta: &[f64],
    components: &[(String, Vec<f64>)],
) -> Result<Report, EnsembleError> {
    let mut rows = vec![MetricsRow {
        component: "baseline_simple_eta".into(),
        mape: mape(targets, baseline_simple_eta)?,
        mae: mae(targets, baseline_simple_eta)?,
    }];
    for (name, preds) in components {
        rows.push(MetricsRow {
            component: name.clone(),
            mape: mape(targets, preds)?,
            mae: mae(targets, preds)?,
        });
    }
    Ok(Report { rows })
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct WeightsFile {
    version: String,
    weights: EnsembleWeights,
}

pub fn save_weights(weights: &EnsembleWeights, path: &Path) -> Result<(), EnsembleError> {
    let file = WeightsFile {
        version: WEIGHTS_VERSION.to_string(),
        weights: weights.clone(),
    };
    let text =
        serde_json::to_string_pretty(&file).map_err(|e| EnsembleError::Format(e.to_string()))?;
    crate::fsutil::atomic_write(path, text.as_bytes())?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<EnsembleWeights, EnsembleError> {
    let text = std::fs::read_to_string(path)?;
    let file: WeightsFile =
        serde_json::from_str(&text).map_err(|e| EnsembleError::Format(e.to_string()))?;
    if file.version != WEIGHTS_VERSION {
        return Err(EnsembleError::Format(format!(
            "version mismatch: file has `{}`, expected `{}`",
            file.version, WEIGHTS_VERSION
        )));
    }
    Ok(file.weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mape_and_mae_examples() {
        assert_eq!(mape(&[100.0, 200.0], &[90.0, 220.0]).unwrap(), 0.10);
        assert_eq!(mape(&[100.0], &[100.0]).unwrap(), 0.0);
        assert_eq!(mae(&[100.0], &[150.0]).unwrap(), 50.0);
        assert_eq!(mae(&[100.0, 200.0], &[100.0, 200.0]).unwrap(), 0.0);

        assert!(matches!(
            mape(&[1.0, 2.0], &[1.0]),
            Err(EnsembleError::LengthMismatch { .. })
        ));
        assert!(matches!(
            mape(&[0.0], &[1.0]),
            Err(EnsembleError::NonPositiveTarget { index: 0, .. })
        ));
        assert!(matches!(
            mae(&[], &[]),
            Err(EnsembleError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn combine_examples() {
        let p = vec![vec![3.0, 4.0], vec![3.0, 4.0]];
        for (got, want) in combine(&p, &[0.3, 0.7]).unwrap().iter().zip([3.0, 4.0]) {
            assert!((got - want).abs() <= 1e-12);
        }

        let p = vec![vec![1.0, 2.0], vec![9.0, 9.0]];
        assert_eq!(combine(&p, &[1.0, 0.0]).unwrap(), vec![1.0, 2.0]);

        let p = vec![vec![100.0], vec![200.0]];
        assert_eq!(combine(&p, &[0.25, 0.75]).unwrap(), vec![175.0]);

        assert!(combine(&p, &[1.0]).is_err());
    }

    #[test]
    fn fit_weights_single_component() {
        let w = fit_weights(&[vec![90.0, 110.0]], &[100.0, 100.0], ComponentGroup::Tree).unwrap();
        assert_eq!(w, vec![1.0]);
    }

    #[test]
    fn fit_weights_identical_rows_stay_uniform() {
        let preds = vec![vec![90.0, 120.0, 80.0], vec![90.0, 120.0, 80.0]];
        let w = fit_weights(&preds, &[100.0, 100.0, 100.0], ComponentGroup::Nn).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
    }

    #[test]
    fn fit_weights_opposite_errors_blend_strictly_better() {
        // same-row opposite-sign errors are where a convex blend genuinely
        // wins: here the exact prediction lies between the two components
        let targets: Vec<f64> = (0..40).map(|i| 100.0 + i as f64).collect();
        let a: Vec<f64> = targets
            .iter()
            .enumerate()
            .map(|(i, &y)| if i % 2 == 0 { y * 1.30 } else { y * 1.05 })
            .collect();
        let b: Vec<f64> = targets
            .iter()
            .enumerate()
            .map(|(i, &y)| if i % 2 == 0 { y * 0.65 } else { y * 0.90 })
            .collect();
        let preds = vec![a.clone(), b.clone()];
        let best_component = mape(&targets, &a).unwrap().min(mape(&targets, &b).unwrap());
        let w = fit_weights(&preds, &targets, ComponentGroup::Tree).unwrap();
        let blended = mape(&targets, &combine(&preds, &w).unwrap()).unwrap();
        assert!(
            blended < best_component,
            "blend {blended} not under best component {best_component}"
        );

        // dense grid oracle at resolution 0.01
        let mut oracle = f64::INFINITY;
        for step in 0..=100 {
            let wa = step as f64 / 100.0;
            let m = mape(&targets, &combine(&preds, &[wa, 1.0 - wa]).unwrap()).unwrap();
            oracle = oracle.min(m);
        }
        assert!(
            (blended - oracle).abs() <= 1e-4,
            "cd {blended} vs oracle {oracle}"
        );
    }

    #[test]
    fn fit_weights_complementary_exactness_hits_the_vertex() {
        // with A exact on half the rows and B exact on the other half the
        // blend MAPE is linear in the weight, so the optimum IS the better
        // vertex; dominance still holds with equality
        let targets: Vec<f64> = (0..40).map(|i| 100.0 + i as f64).collect();
        let a: Vec<f64> = targets
            .iter()
            .enumerate()
            .map(|(i, &y)| if i < 20 { y } else { y * 1.4 })
            .collect();
        let b: Vec<f64> = targets
            .iter()
            .enumerate()
            .map(|(i, &y)| if i >= 20 { y } else { y * 0.4 })
            .collect();
        let preds = vec![a.clone(), b];
        let mape_a = mape(&targets, &a).unwrap();
        let w = fit_weights(&preds, &targets, ComponentGroup::Tree).unwrap();
        let blended = mape(&targets, &combine(&preds, &w).unwrap()).unwrap();
        assert!(blended <= mape_a);
        assert_eq!(w, vec![1.0, 0.0]);
    }

    #[test]
    fn fit_weights_dominates_vertices() {
        let targets = vec![100.0, 100.0, 100.0, 100.0];
        let preds = vec![
            vec![135.0, 70.0, 100.0, 100.0],
            vec![100.0, 100.0, 60.0, 150.0],
            vec![120.0, 120.0, 120.0, 120.0],
        ];
        let w = fit_weights(&preds, &targets, ComponentGroup::Tree).unwrap();
        let blended = mape(&targets, &combine(&preds, &w).unwrap()).unwrap();
        for p in &preds {
            assert!(blended <= mape(&targets, p).unwrap() + 1e-15);
        }
        let sum: f64 = w.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn fit_ensemble_endpoints_and_symmetry() {
        let targets = vec![100.0, 100.0];
        // both components overpredict, the tree far worse: any weight on it
        // only hurts, so alpha lands on the endpoint 0
        let tree = vec![("t0".to_string(), vec![150.0, 150.0])];
        let nn = vec![("n0".to_string(), vec![101.0, 101.0])];
        let w = fit_ensemble(&tree, &nn, &targets).unwrap();
        assert_eq!(w.top_weight, 0.0);

        // symmetric (identical) blends tie: alpha breaks toward 0.5
        let tree = vec![("t0".to_string(), vec![110.0, 95.0])];
        let nn = vec![("n0".to_string(), vec![110.0, 95.0])];
        let w = fit_ensemble(&tree, &nn, &targets).unwrap();
        assert_eq!(w.top_weight, 0.5);
    }

    #[test]
    fn fit_ensemble_dominates_blends() {
        let targets = vec![100.0, 100.0, 100.0];
        let tree = vec![
            ("t0".to_string(), vec![130.0, 100.0, 90.0]),
            ("t1".to_string(), vec![90.0, 120.0, 100.0]),
        ];
        let nn = vec![("n0".to_string(), vec![100.0, 95.0, 130.0])];
        let w = fit_ensemble(&tree, &nn, &targets).unwrap();
        let tree_rows: Vec<Vec<f64>> = tree.iter().map(|(_, p)| p.clone()).collect();
        let nn_rows: Vec<Vec<f64>> = nn.iter().map(|(_, p)| p.clone()).collect();
        let fused = w.apply(&tree_rows, &nn_rows).unwrap();
        let fused_mape = mape(&targets, &fused).unwrap();
        for p in tree_rows.iter().chain(&nn_rows) {
            assert!(fused_mape <= mape(&targets, p).unwrap());
        }
    }

    #[test]
    fn report_has_baseline_and_is_deterministic() {
        let targets = vec![100.0, 200.0];
        let baseline = vec![90.0, 220.0];
        let comps = vec![("gbdt_1".to_string(), vec![100.0, 205.0])];
        let a = evaluate_report(&targets, &baseline, &comps).unwrap();
        let b = evaluate_report(&targets, &baseline, &comps).unwrap();
        assert_eq!(a.rows[0].component, "baseline_simple_eta");
        assert_eq!(a.rows[0].mape, 0.10);
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(a.to_table().contains("baseline_simple_eta"));
    }

    #[test]
    fn weights_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.json");
        let w = EnsembleWeights {
            tree_components: vec!["t0".into()],
            nn_components: vec!["n0".into(), "n1".into()],
            tree_weights: vec![1.0],
            nn_weights: vec![0.25, 0.75],
            top_weight: 0.4,
        };
        save_weights(&w, &path).unwrap();
        let loaded = load_weights(&path).unwrap();
        assert_eq!(loaded.top_weight, 0.4);
        assert_eq!(loaded.nn_weights, vec![0.25, 0.75]);

        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replace(WEIGHTS_VERSION, "eta-fuse-weights/9")).unwrap();
        assert!(matches!(load_weights(&path), Err(EnsembleError::Format(_))));
    }

    proptest! {
        #[test]
        fn combine_is_exactly_linear(
            a in prop::collection::vec(1.0f64..500.0, 1..20),
            b_scale in 0.5f64..2.0,
            w in 0.0f64..1.0,
        ) {
            let b: Vec<f64> = a.iter().map(|x| x * b_scale).collect();
            let blended = combine(&[a.clone(), b.clone()], &[w, 1.0 - w]).unwrap();
            for i in 0..a.len() {
                let direct = w * a[i] + (1.0 - w) * b[i];
                prop_assert!((blended[i] - direct).abs() <= 1e-12);
            }
        }

        #[test]
        fn fitted_weights_satisfy_simplex(
            seed_rows in prop::collection::vec(
                prop::collection::vec(50.0f64..150.0, 5),
                1..4,
            ),
        ) {
            let targets = vec![100.0; 5];
            let group = ComponentGroup::Tree;
            let w = fit_weights(&seed_rows, &targets, group).unwrap();
            let sum: f64 = w.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|&x| (0.0..=1.0 + 1e-12).contains(&x)));

            // vertex dominance
            let blended = mape(&targets, &combine(&seed_rows, &w).unwrap()).unwrap();
            for p in &seed_rows {
                prop_assert!(blended <= mape(&targets, p).unwrap() + 1e-15);
            }
        }
    }
}
