//! Conditional-mean models for doubly robust scoring.
//!
//! A score `gamma_i(w)` needs a prediction `mu_hat_i(w)` of unit i's
//! response under every arm, fitted WITHOUT unit i's own outcome — that
//! exclusion is what keeps the scores unbiased. Two partitioning modes
//! provide it:
//!
//! - [`MuMode::Crossfit`]: units are shuffled into folds; each fold is
//!   predicted by a model trained on the other folds (evaluation-stage
//!   datasets, where batch structure no longer matters).
//! - [`MuMode::Historical`]: each batch is predicted by a model trained on
//!   strictly earlier batches (learning-stage datasets, mirroring what the
//!   bandit could have known). The earliest batch present has no history
//!   and falls back to its own leave-one-out mean.
//!
//! Three interchangeable regression methods ride below the partitioning:
//! ridge on the same arm/covariate-interaction design as the bandit
//! (default), k-nearest-neighbor per arm, and an honest tree ensemble per
//! arm in which split structure and leaf means come from disjoint halves of
//! the training data.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::EstimatorError;
use crate::bandit::phi_entries;
use crate::model::{Dataset, OutcomeMeasure};
use crate::rng::{chacha, mix3};

/// Regression method for the conditional means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MuMethod {
    /// Penalized linear fit on `[1 | arm | x | x*arm]` — the bandit's
    /// design — with `lambda` on the interaction block.
    Ridge { lambda: f64 },
    /// Per-arm k-nearest-neighbor mean over covariates.
    Knn { k: usize },
    /// Per-arm honest tree ensemble: within each tree the split structure
    /// and the leaf means come from disjoint halves of the training rows.
    HonestForest {
        n_trees: usize,
        min_leaf: usize,
        max_depth: usize,
        seed: u64,
    },
}

impl Default for MuMethod {
    fn default() -> Self {
        MuMethod::Ridge { lambda: 1.0 }
    }
}

impl MuMethod {
    pub fn default_forest(seed: u64) -> Self {
        MuMethod::HonestForest { n_trees: 50, min_leaf: 5, max_depth: 16, seed }
    }

    fn validate(&self) -> Result<(), EstimatorError> {
        match self {
            MuMethod::Ridge { lambda } => {
                if !(lambda.is_finite() && *lambda > 0.0) {
                    return Err(EstimatorError::MuFit(format!("ridge lambda {lambda} must be positive")));
                }
            }
            MuMethod::Knn { k } => {
                if *k == 0 {
                    return Err(EstimatorError::MuFit("knn k must be at least 1".into()));
                }
            }
            MuMethod::HonestForest { n_trees, min_leaf, max_depth, .. } => {
                if *n_trees == 0 || *min_leaf == 0 || *max_depth == 0 {
                    return Err(EstimatorError::MuFit(
                        "forest n_trees, min_leaf, max_depth must be at least 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// How training data are partitioned so no unit predicts itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MuMode {
    /// `folds` random folds (seeded shuffle); each fold predicted by the
    /// others.
    Crossfit { folds: usize, seed: u64 },
    /// Each batch predicted by strictly earlier batches; the earliest batch
    /// uses its own leave-one-out mean.
    Historical,
}

/// Out-of-sample predictions, one row per completed unit (in
/// `Dataset::completed_indices()` order), one column per arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuHat {
    pub fitted: Vec<Vec<f64>>,
}

/// One training observation, borrowed from the dataset.
struct Row<'a> {
    features: &'a [f64],
    arm: usize,
    y: f64,
}

// ---------------------------------------------------------------------------
// Fitted regressors
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Fitted {
    Ridge { beta: Vec<f64>, k: usize, p: usize },
    Knn { per_arm: Vec<Vec<(Vec<f64>, f64)>>, k_neighbors: usize, fallback: f64 },
    Forest { per_arm: Vec<Vec<Tree>>, fallback: f64 },
}

impl Fitted {
    fn predict(&self, features: &[f64], arm: usize) -> f64 {
        match self {
            Fitted::Ridge { beta, k, p } => phi_entries(*k, *p, features, arm)
                .iter()
                .map(|&(c, v)| v * beta[c])
                .sum(),
            Fitted::Knn { per_arm, k_neighbors, fallback } => {
                let pool = &per_arm[arm];
                if pool.is_empty() {
                    return *fallback;
                }
                let mut dists: Vec<(f64, usize)> = pool
                    .iter()
                    .enumerate()
                    .map(|(i, (x, _))| (squared_distance(features, x), i))
                    .collect();
                dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let take = (*k_neighbors).min(dists.len());
                dists[..take].iter().map(|&(_, i)| pool[i].1).sum::<f64>() / take as f64
            }
            Fitted::Forest { per_arm, fallback } => {
                let trees = &per_arm[arm];
                if trees.is_empty() {
                    return *fallback;
                }
                trees.iter().map(|t| t.predict(features)).sum::<f64>() / trees.len() as f64
            }
        }
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn fit(method: &MuMethod, rows: &[Row<'_>], n_arms: usize, n_features: usize) -> Fitted {
    let global_mean = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.y).sum::<f64>() / rows.len() as f64
    };
    match method {
        MuMethod::Ridge { lambda } => {
            Fitted::Ridge { beta: fit_ridge(rows, n_arms, n_features, *lambda), k: n_arms, p: n_features }
        }
        MuMethod::Knn { k } => {
            let mut per_arm: Vec<Vec<(Vec<f64>, f64)>> = vec![Vec::new(); n_arms];
            for row in rows {
                per_arm[row.arm].push((row.features.to_vec(), row.y));
            }
            Fitted::Knn { per_arm, k_neighbors: *k, fallback: global_mean }
        }
        MuMethod::HonestForest { n_trees, min_leaf, max_depth, seed } => {
            let mut per_arm: Vec<Vec<Tree>> = Vec::with_capacity(n_arms);
            for arm in 0..n_arms {
                let arm_rows: Vec<&Row<'_>> = rows.iter().filter(|r| r.arm == arm).collect();
                if arm_rows.len() < 2 {
                    // Not enough data to split honestly: constant trees.
                    let value = arm_rows.first().map_or(global_mean, |r| r.y);
                    per_arm.push(vec![Tree::constant(value)]);
                    continue;
                }
                let xs: Vec<&[f64]> = arm_rows.iter().map(|r| r.features).collect();
                let ys: Vec<f64> = arm_rows.iter().map(|r| r.y).collect();
                let mut trees = Vec::with_capacity(*n_trees);
                for t in 0..*n_trees {
                    let mut rng = chacha(mix3(*seed, arm as u64, t as u64));
                    let mut perm: Vec<usize> = (0..arm_rows.len()).collect();
                    perm.shuffle(&mut rng);
                    let half = arm_rows.len().div_ceil(2);
                    let structure = &perm[..half];
                    let estimation = &perm[half..];
                    trees.push(Tree::grow(
                        &xs,
                        &ys,
                        structure,
                        estimation,
                        *min_leaf,
                        *max_depth,
                        global_mean,
                    ));
                }
                per_arm.push(trees);
            }
            Fitted::Forest { per_arm, fallback: global_mean }
        }
    }
}

fn fit_ridge(rows: &[Row<'_>], k: usize, p: usize, lambda: f64) -> Vec<f64> {
    let d = 1 + (k - 1) + p + p * (k - 1);
    let mut xtx = DMatrix::<f64>::zeros(d, d);
    let mut xty = DVector::<f64>::zeros(d);
    for row in rows {
        let entries = phi_entries(k, p, row.features, row.arm);
        for &(ci, vi) in &entries {
            xty[ci] += vi * row.y;
            for &(cj, vj) in &entries {
                xtx[(ci, cj)] += vi * vj;
            }
        }
    }
    // Near-flat penalty on main effects, `lambda` on interactions — the
    // same block structure as the bandit prior.
    for i in 0..d {
        xtx[(i, i)] += if i < k + p { 1e-6 } else { lambda };
    }
    Cholesky::new(xtx)
        .map(|chol| chol.solve(&xty).iter().copied().collect())
        .unwrap_or_else(|| vec![0.0; d])
}

// ---------------------------------------------------------------------------
// Honest regression trees
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
    /// Children are appended before their parent, so the root is pushed
    /// last and must be addressed explicitly.
    root: usize,
}

impl Tree {
    fn constant(value: f64) -> Self {
        Tree { nodes: vec![Node::Leaf { value }], root: 0 }
    }

    fn predict(&self, features: &[f64]) -> f64 {
        let mut idx = self.root;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    idx = if features[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    /// Grow a tree choosing splits on `structure` rows only, then fill leaf
    /// values from `estimation `rows routed down the same splits. A leaf
    /// that receives no estimation rows inherits the mean of the nearest
    /// ancestor that has some.
    #[allow(clippy::too_many_arguments)]
    fn grow(
        xs: &[&[f64]],
        ys: &[f64],
        structure: &[usize],
        estimation: &[usize],
        min_leaf: usize,
        max_depth: usize,
        fallback: f64,
    ) -> Self {
        let mut tree = Tree { nodes: Vec::new(), root: 0 };
        let root_value = if estimation.is_empty() {
            fallback
        } else {
            estimation.iter().map(|&i| ys[i]).sum::<f64>() / estimation.len() as f64
        };
        tree.root = tree.grow_node(
            xs,
            ys,
            structure.to_vec(),
            estimation.to_vec(),
            min_leaf,
            max_depth,
            root_value,
        );
        tree
    }

    #[allow(clippy::too_many_arguments)]
    fn grow_node(
        &mut self,
        xs: &[&[f64]],
        ys: &[f64],
        structure: Vec<usize>,
        estimation: Vec<usize>,
        min_leaf: usize,
        depth_left: usize,
        inherited: f64,
    ) -> usize {
        let value = if estimation.is_empty() {
            inherited
        } else {
            estimation.iter().map(|&i| ys[i]).sum::<f64>() / estimation.len() as f64
        };
        let split = if depth_left == 0 || structure.len() < 2 * min_leaf {
            None
        } else {
            best_split(xs, ys, &structure, min_leaf)
        };
        let Some((feature, threshold)) = split else {
            self.nodes.push(Node::Leaf { value });
            return self.nodes.len() - 1;
        };
        let (s_left, s_right): (Vec<usize>, Vec<usize>) =
            structure.iter().partition(|&&i| xs[i][feature] <= threshold);
        let (e_left, e_right): (Vec<usize>, Vec<usize>) =
            estimation.iter().partition(|&&i| xs[i][feature] <= threshold);
        let left = self.grow_node(xs, ys, s_left, e_left, min_leaf, depth_left - 1, value);
        let right = self.grow_node(xs, ys, s_right, e_right, min_leaf, depth_left - 1, value);
        self.nodes.push(Node::Split { feature, threshold, left, right });
        self.nodes.len() - 1
    }
}

/// Best variance-reducing axis-aligned split, or None when nothing clears
/// `min_leaf` on both sides with a positive gain.
fn best_split(
    xs: &[&[f64]],
    ys: &[f64],
    indices: &[usize],
    min_leaf: usize,
) -> Option<(usize, f64)> {
    let n = indices.len();
    let n_features = xs.first().map_or(0, |x| x.len());
    let total_sum: f64 = indices.iter().map(|&i| ys[i]).sum();
    let total_sq: f64 = indices.iter().map(|&i| ys[i] * ys[i]).sum();
    let total_sse = total_sq - total_sum * total_sum / n as f64;
    let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
    let mut order: Vec<usize> = indices.to_vec();
    for feature in 0..n_features {
        order.sort_by(|&a, &b| xs[a][feature].total_cmp(&xs[b][feature]).then(a.cmp(&b)));
        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        for (pos, &i) in order.iter().enumerate().take(n - 1) {
            left_sum += ys[i];
            left_sq += ys[i] * ys[i];
            let n_left = pos + 1;
            let n_right = n - n_left;
            if n_left < min_leaf || n_right < min_leaf {
                continue;
            }
            let here = xs[i][feature];
            let next = xs[order[pos + 1]][feature];
            if here == next {
                continue; // cannot separate equal values
            }
            let right_sum = total_sum - left_sum;
            let right_sq = total_sq - left_sq;
            let sse = (left_sq - left_sum * left_sum / n_left as f64)
                + (right_sq - right_sum * right_sum / n_right as f64);
            let gain = total_sse - sse;
            if gain > 1e-12 && best.map_or(true, |(g, _, _)| gain > g) {
                best = Some((gain, feature, 0.5 * (here + next)));
            }
        }
    }
    best.map(|(_, feature, threshold)| (feature, threshold))
}

// ---------------------------------------------------------------------------
// Partitioned fitting
// ---------------------------------------------------------------------------

/// Fit out-of-sample conditional means for every completed unit and arm.
pub fn fit_conditional_means(
    dataset: &Dataset,
    measure: &OutcomeMeasure,
    method: &MuMethod,
    mode: &MuMode,
) -> Result<MuHat, EstimatorError> {
    method.validate()?;
    let (indices, responses) = super::completed_responses(dataset, measure)?;
    let n = indices.len();
    if n == 0 {
        return Err(EstimatorError::NoCompletedUnits);
    }
    let k = dataset.n_arms();
    let p = dataset.n_features;
    let rows: Vec<Row<'_>> = indices
        .iter()
        .zip(&responses)
        .map(|(&i, &y)| Row { features: &dataset.units[i].context.features, arm: dataset.units[i].arm, y })
        .collect();
    let mut fitted = vec![Vec::new(); n];

    match mode {
        MuMode::Crossfit { folds, seed } => {
            let folds = *folds;
            if folds < 2 {
                return Err(EstimatorError::TooFewFolds(folds));
            }
            if folds > n {
                return Err(EstimatorError::TooFewUnits { folds, n });
            }
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut chacha(mix3(*seed, 0x666F6C64, 0)));
            let mut fold_of = vec![0usize; n];
            for (pos, &row) in perm.iter().enumerate() {
                fold_of[row] = pos % folds;
            }
            for fold in 0..folds {
                let train: Vec<Row<'_>> = (0..n)
                    .filter(|&i| fold_of[i] != fold)
                    .map(|i| Row { features: rows[i].features, arm: rows[i].arm, y: rows[i].y })
                    .collect();
                let model = fit(method, &train, k, p);
                for i in (0..n).filter(|&i| fold_of[i] == fold) {
                    fitted[i] = (0..k).map(|w| model.predict(rows[i].features, w)).collect();
                }
            }
        }
        MuMode::Historical => {
            let batches: Vec<usize> =
                indices.iter().map(|&i| dataset.units[i].batch).collect();
            let mut present: Vec<usize> = batches.clone();
            present.sort_unstable();
            present.dedup();
            let earliest = present[0];
            // Earliest batch: leave-one-out mean, identical across arms.
            let first_rows: Vec<usize> =
                (0..n).filter(|&i| batches[i] == earliest).collect();
            if first_rows.len() < 2 {
                return Err(EstimatorError::NoHistory { batch: earliest });
            }
            let first_sum: f64 = first_rows.iter().map(|&i| rows[i].y).sum();
            for &i in &first_rows {
                let loo = (first_sum - rows[i].y) / (first_rows.len() - 1) as f64;
                fitted[i] = vec![loo; k];
            }
            // Later batches: fit on everything strictly earlier.
            for &batch in &present[1..] {
                let train: Vec<Row<'_>> = (0..n)
                    .filter(|&i| batches[i] < batch)
                    .map(|i| Row { features: rows[i].features, arm: rows[i].arm, y: rows[i].y })
                    .collect();
                let model = fit(method, &train, k, p);
                for i in (0..n).filter(|&i| batches[i] == batch) {
                    fitted[i] = (0..k).map(|w| model.predict(rows[i].features, w)).collect();
                }
            }
        }
    }
    Ok(MuHat { fitted })
}

// ---------------------------------------------------------------------------
// Reusable predictors (policy learning)
// ---------------------------------------------------------------------------

/// A conditional-mean model fitted on a full dataset, kept around to score
/// fresh contexts (policy learning and application). Unlike [`MuHat`], this
/// is a function, not a table — and because it may be applied to the very
/// units it was trained on, it must never feed back into score
/// construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuPredictor {
    inner: Fitted,
    pub n_arms: usize,
    pub n_features: usize,
}

impl MuPredictor {
    pub fn predict(&self, features: &[f64], arm: usize) -> f64 {
        self.inner.predict(features, arm)
    }

    /// Predicted response for every arm at one context.
    pub fn predict_all(&self, features: &[f64]) -> Vec<f64> {
        (0..self.n_arms).map(|w| self.predict(features, w)).collect()
    }
}

/// Fit a predictor on all completed units of a dataset.
pub fn fit_mu_predictor(
    dataset: &Dataset,
    measure: &OutcomeMeasure,
    method: &MuMethod,
) -> Result<MuPredictor, EstimatorError> {
    method.validate()?;
    let (indices, responses) = super::completed_responses(dataset, measure)?;
    if indices.is_empty() {
        return Err(EstimatorError::NoCompletedUnits);
    }
    let rows: Vec<Row<'_>> = indices
        .iter()
        .zip(&responses)
        .map(|(&i, &y)| Row {
            features: &dataset.units[i].context.features,
            arm: dataset.units[i].arm,
            y,
        })
        .collect();
    let k = dataset.n_arms();
    let p = dataset.n_features;
    Ok(MuPredictor { inner: fit(method, &rows, k, p), n_arms: k, n_features: p })
}

/// Fit a single-output regressor of `targets` on `features` (used for
/// treatment-effect models): a [`MuPredictor`] with one pseudo-arm.
pub fn fit_scalar_regressor(
    features: &[Vec<f64>],
    targets: &[f64],
    method: &MuMethod,
) -> Result<MuPredictor, EstimatorError> {
    method.validate()?;
    if features.is_empty() || features.len() != targets.len() {
        return Err(EstimatorError::MuFit(format!(
            "regressor needs aligned nonempty inputs, got {} features and {} targets",
            features.len(),
            targets.len()
        )));
    }
    let p = features[0].len();
    let rows: Vec<Row<'_>> = features
        .iter()
        .zip(targets)
        .map(|(x, &y)| Row { features: x, arm: 0, y })
        .collect();
    Ok(MuPredictor { inner: fit(method, &rows, 1, p), n_arms: 1, n_features: p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArmSpace, CovariateContext, DatasetUnit, OutcomeRecord, Posttest};

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    /// Build a dataset where the discernment outcome is set directly via
    /// t_post counts scaled by 0.5 (m_post = 0 throughout).
    fn dataset_with(
        arms: &[usize],
        batches: &[usize],
        t_posts: &[u8],
        features: &[Vec<f64>],
        n_arms: usize,
    ) -> Dataset {
        let units: Vec<DatasetUnit> = (0..arms.len())
            .map(|i| DatasetUnit {
                unit_id: format!("u{i}"),
                batch: batches[i],
                arm: arms[i],
                propensities: vec![1.0 / n_arms as f64; n_arms],
                context: CovariateContext {
                    features: features[i].clone(),
                    pretest_false_stratum: 0,
                    pretest_true_stratum: 0,
                },
                outcome: OutcomeRecord {
                    m_pre: 0,
                    t_pre: 0,
                    channel_pre: None,
                    posttest: Some(Posttest { m_post: 0, t_post: t_posts[i], channel: None }),
                },
            })
            .collect();
        Dataset {
            arm_space: ArmSpace::Flat {
                labels: (0..n_arms).map(|i| format!("arm{i}")).collect(),
            },
            n_features: features[0].len(),
            units,
        }
    }

    fn measure() -> OutcomeMeasure {
        OutcomeMeasure::Discernment(Default::default())
    }

    #[test]
    fn constant_outcomes_predict_the_constant_for_every_method() {
        // Y = 1 (t_post = 2 at weight 0.5) for all 20 units, both arms used.
        let arms: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let batches = vec![0usize; 20];
        let t_posts = vec![2u8; 20];
        let features: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 10.0]).collect();
        let dataset = dataset_with(&arms, &batches, &t_posts, &features, 2);
        for method in [
            MuMethod::Ridge { lambda: 1.0 },
            MuMethod::Knn { k: 3 },
            MuMethod::HonestForest { n_trees: 10, min_leaf: 2, max_depth: 4, seed: 5 },
        ] {
            let mu = fit_conditional_means(
                &dataset,
                &measure(),
                &method,
                &MuMode::Crossfit { folds: 2, seed: 1 },
            )
            .unwrap();
            for row in &mu.fitted {
                for &v in row {
                    close(v, 1.0, 1e-5);
                }
            }
        }
    }

    #[test]
    fn crossfit_prediction_ignores_own_outcome() {
        let arms = vec![0, 1, 0, 1];
        let batches = vec![0; 4];
        let features: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let base = dataset_with(&arms, &batches, &[2, 0, 4, 2], &features, 2);
        let bumped = dataset_with(&arms, &batches, &[4, 0, 4, 2], &features, 2);
        for method in [
            MuMethod::Ridge { lambda: 1.0 },
            MuMethod::Knn { k: 2 },
            MuMethod::HonestForest { n_trees: 5, min_leaf: 1, max_depth: 3, seed: 9 },
        ] {
            let mode = MuMode::Crossfit { folds: 2, seed: 11 };
            let mu_a = fit_conditional_means(&base, &measure(), &method, &mode).unwrap();
            let mu_b = fit_conditional_means(&bumped, &measure(), &method, &mode).unwrap();
            // Unit 0's outcome changed; its own prediction must not.
            assert_eq!(mu_a.fitted[0], mu_b.fitted[0], "{method:?}");
        }
    }

    #[test]
    fn historical_predictions_use_only_earlier_batches() {
        let arms = vec![0, 1, 0, 1, 0, 1];
        let batches = vec![0, 0, 1, 1, 2, 2];
        let features: Vec<Vec<f64>> = (0..6).map(|i| vec![(i % 3) as f64]).collect();
        let base = dataset_with(&arms, &batches, &[2, 0, 4, 2, 1, 3], &features, 2);
        let mode = MuMode::Historical;
        let method = MuMethod::Ridge { lambda: 1.0 };
        let mu_base = fit_conditional_means(&base, &measure(), &method, &mode).unwrap();

        // Perturbing a batch-2 outcome leaves batch-2 predictions alone...
        let bumped_late = dataset_with(&arms, &batches, &[2, 0, 4, 2, 1, 0], &features, 2);
        let mu_late = fit_conditional_means(&bumped_late, &measure(), &method, &mode).unwrap();
        assert_eq!(mu_base.fitted[4], mu_late.fitted[4]);

        // ...but perturbing a batch-1 outcome moves them.
        let bumped_mid = dataset_with(&arms, &batches, &[2, 0, 0, 2, 1, 3], &features, 2);
        let mu_mid = fit_conditional_means(&bumped_mid, &measure(), &method, &mode).unwrap();
        assert_ne!(mu_base.fitted[4], mu_mid.fitted[4]);
    }

    #[test]
    fn earliest_batch_gets_leave_one_out_means() {
        let arms = vec![0, 1];
        let batches = vec![0, 0];
        let features = vec![vec![], vec![]];
        // Y values 1.0 and 0.0 (t_post 2 and 0).
        let dataset = dataset_with(&arms, &batches, &[2, 0], &features, 2);
        let mu = fit_conditional_means(
            &dataset,
            &measure(),
            &MuMethod::default(),
            &MuMode::Historical,
        )
        .unwrap();
        assert_eq!(mu.fitted[0], vec![0.0, 0.0]); // other unit's Y
        assert_eq!(mu.fitted[1], vec![1.0, 1.0]);
    }

    #[test]
    fn single_unit_earliest_batch_errors() {
        let dataset = dataset_with(&[0], &[0], &[2], &[vec![]], 2);
        let err = fit_conditional_means(
            &dataset,
            &measure(),
            &MuMethod::default(),
            &MuMode::Historical,
        )
        .unwrap_err();
        assert!(matches!(err, EstimatorError::NoHistory { batch: 0 }));
    }

    #[test]
    fn too_few_folds_is_rejected() {
        let dataset = dataset_with(&[0, 1], &[0, 0], &[2, 0], &[vec![], vec![]], 2);
        assert!(matches!(
            fit_conditional_means(
                &dataset,
                &measure(),
                &MuMethod::default(),
                &MuMode::Crossfit { folds: 1, seed: 0 },
            ),
            Err(EstimatorError::TooFewFolds(1))
        ));
        assert!(matches!(
            fit_conditional_means(
                &dataset,
                &measure(),
                &MuMethod::default(),
                &MuMode::Crossfit { folds: 5, seed: 0 },
            ),
            Err(EstimatorError::TooFewUnits { folds: 5, n: 2 })
        ));
    }

    #[test]
    fn ridge_recovers_a_linear_signal_out_of_fold() {
        // Y = x under both arms; ridge should recover it closely.
        let n = 40;
        let arms: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let batches = vec![0usize; n];
        let t_posts: Vec<u8> = (0..n).map(|i| ((i % 5) as u8).min(4)).collect();
        let features: Vec<Vec<f64>> = t_posts.iter().map(|&t| vec![t as f64]).collect();
        let dataset = dataset_with(&arms, &batches, &t_posts, &features, 2);
        let mu = fit_conditional_means(
            &dataset,
            &measure(),
            &MuMethod::Ridge { lambda: 1.0 },
            &MuMode::Crossfit { folds: 4, seed: 3 },
        )
        .unwrap();
        // True relation: Y = 0.5 * x. Out-of-fold ridge predictions track it.
        for (row, feats) in mu.fitted.iter().zip(&features) {
            for &v in row {
                close(v, 0.5 * feats[0], 0.1);
            }
        }
    }

    #[test]
    fn knn_averages_the_nearest_neighbors() {
        // Arm 0 training points at x = 0, 1, 2 with Y = 0, 0.5, 1.
        let arms = vec![0, 0, 0, 0];
        let batches = vec![0, 0, 0, 1];
        let t_posts = vec![0, 1, 2, 0];
        let features = vec![vec![0.0], vec![1.0], vec![2.0], vec![0.1]];
        let dataset = dataset_with(&arms, &batches, &t_posts, &features, 1);
        let mu = fit_conditional_means(
            &dataset,
            &measure(),
            &MuMethod::Knn { k: 2 },
            &MuMode::Historical,
        )
        .unwrap();
        // Batch-1 unit at x = 0.1: nearest two are x = 0 (Y 0) and x = 1 (Y 0.5).
        close(mu.fitted[3][0], 0.25, 1e-12);
    }

    #[test]
    fn forest_splits_a_step_function() {
        // Y = 1 for x > 0, else 0; plenty of data, one arm.
        let n = 60;
        let arms = vec![0usize; n];
        let batches = vec![0usize; n];
        let t_posts: Vec<u8> = (0..n).map(|i| if i >= n / 2 { 2 } else { 0 }).collect();
        let features: Vec<Vec<f64>> =
            (0..n).map(|i| vec![if i >= n / 2 { 1.0 } else { -1.0 } * (1.0 + (i % 7) as f64)]).collect();
        let dataset = dataset_with(&arms, &batches, &t_posts, &features, 1);
        let mu = fit_conditional_means(
            &dataset,
            &measure(),
            &MuMethod::HonestForest { n_trees: 20, min_leaf: 3, max_depth: 4, seed: 2 },
            &MuMode::Crossfit { folds: 2, seed: 4 },
        )
        .unwrap();
        for (i, row) in mu.fitted.iter().enumerate() {
            let want = if i >= n / 2 { 1.0 } else { 0.0 };
            close(row[0], want, 0.25);
        }
    }

    #[test]
    fn full_predictor_serializes_and_round_trips() {
        let arms: Vec<usize> = (0..16).map(|i| i % 2).collect();
        let batches = vec![0usize; 16];
        let t_posts: Vec<u8> = (0..16).map(|i| (i % 5) as u8).collect();
        let features: Vec<Vec<f64>> = (0..16).map(|i| vec![(i % 3) as f64]).collect();
        let dataset = dataset_with(&arms, &batches, &t_posts, &features, 2);
        for method in [
            MuMethod::Ridge { lambda: 1.0 },
            MuMethod::Knn { k: 3 },
            MuMethod::HonestForest { n_trees: 4, min_leaf: 2, max_depth: 3, seed: 1 },
        ] {
            let model = fit_mu_predictor(&dataset, &measure(), &method).unwrap();
            let json = serde_json::to_string(&model).unwrap();
            let back: MuPredictor = serde_json::from_str(&json).unwrap();
            for x in [[0.0], [1.0], [2.0]] {
                for w in 0..2 {
                    assert_eq!(model.predict(&x, w), back.predict(&x, w));
                }
            }
        }
    }

    #[test]
    fn scalar_regressor_recovers_a_linear_effect() {
        let features: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 / 10.0 - 1.5]).collect();
        let targets: Vec<f64> = features.iter().map(|x| 0.3 - 0.2 * x[0]).collect();
        let model =
            fit_scalar_regressor(&features, &targets, &MuMethod::Ridge { lambda: 1.0 }).unwrap();
        for x in [-1.0, 0.0, 1.0] {
            close(model.predict(&[x], 0), 0.3 - 0.2 * x, 1e-4);
        }
    }

    #[test]
    fn forest_is_deterministic_given_the_seed() {
        let n = 30;
        let arms: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let batches = vec![0usize; n];
        let t_posts: Vec<u8> = (0..n).map(|i| (i % 5) as u8).collect();
        let features: Vec<Vec<f64>> = (0..n).map(|i| vec![(i % 4) as f64, (i % 3) as f64]).collect();
        let dataset = dataset_with(&arms, &batches, &t_posts, &features, 2);
        let method = MuMethod::HonestForest { n_trees: 8, min_leaf: 2, max_depth: 5, seed: 77 };
        let mode = MuMode::Crossfit { folds: 3, seed: 6 };
        let a = fit_conditional_means(&dataset, &measure(), &method, &mode).unwrap();
        let b = fit_conditional_means(&dataset, &measure(), &method, &mode).unwrap();
        assert_eq!(a, b);
    }
}
