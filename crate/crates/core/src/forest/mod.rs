//! Random forest regression: bootstrap bagging over CART trees with
//! per-split feature subsampling.
//!
//! Each tree draws its bootstrap sample and its feature subsets from its
//! own stream, seeded from `(config.seed, tree index)`. Trees are fitted in
//! parallel on the current rayon pool and the result does not depend on the
//! pool size.

mod split;
mod tree;

pub use split::{best_split, SplitCandidate};
pub use tree::{Node, NodeSplit, RegressionTree};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::schema::{Dataset, FeatureMatrix};
use tree::GrowParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Features considered at each split.
    pub mtry: usize,
    /// Minimum in-bag samples per leaf.
    pub min_node_size: usize,
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 500,
            mtry: 1,
            min_node_size: 5,
            max_depth: None,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn with_mtry(&self, mtry: usize) -> Self {
        ForestConfig {
            mtry,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ForestConfig {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub config: ForestConfig,
    pub target: String,
    pub predictors: Vec<String>,
    pub trees: Vec<RegressionTree>,
    /// In-bag row indices per tree, with repeats.
    pub bootstrap: Vec<Vec<usize>>,
}

/// Fits a forest on the complete rows of `train`.
pub fn fit_forest(
    train: &Dataset,
    target: &str,
    predictors: &[String],
    cfg: &ForestConfig,
) -> Result<Forest> {
    if predictors.is_empty() {
        return Err(Error::InvalidInput("no predictors".into()));
    }
    let x = train.matrix(predictors)?;
    let y = train.target(target)?;
    Forest::fit(&x, &y, target, cfg)
}

impl Forest {
    pub fn fit(x: &FeatureMatrix, y: &[f64], target: &str, cfg: &ForestConfig) -> Result<Forest> {
        let p = x.n_features();
        let n = y.len();
        if p == 0 {
            return Err(Error::InvalidInput("no predictors".into()));
        }
        if n == 0 || x.n_rows != n {
            return Err(Error::InvalidInput(format!(
                "{} feature rows for {n} targets",
                x.n_rows
            )));
        }
        if cfg.n_trees == 0 || cfg.mtry == 0 || cfg.min_node_size == 0 {
            return Err(Error::InvalidInput(
                "n_trees, mtry and min_node_size must be at least 1".into(),
            ));
        }
        if let Some(bad) = x.columns.iter().flatten().chain(y).find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite training value {bad}")));
        }
        let config = ForestConfig {
            mtry: cfg.mtry.min(p),
            ..cfg.clone()
        };
        let params = GrowParams {
            mtry: config.mtry,
            min_node_size: config.min_node_size,
            max_depth: config.max_depth,
        };
        let fitted: Vec<(Vec<usize>, RegressionTree)> = (0..config.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng::stream(config.seed, &[tag::TREE, t as u64]);
                let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let tree = RegressionTree::grow(&x.columns, y, &sample, &params, &mut rng);
                (sample, tree)
            })
            .collect();
        let (bootstrap, trees) = fitted.into_iter().unzip();
        Ok(Forest {
            config,
            target: target.to_string(),
            predictors: x.names.clone(),
            trees,
            bootstrap,
        })
    }

    /// Builds a forest from explicit trees (no bootstrap record).
    pub fn from_trees(
        target: &str,
        predictors: Vec<String>,
        trees: Vec<RegressionTree>,
    ) -> Result<Forest> {
        if trees.is_empty() || predictors.is_empty() {
            return Err(Error::InvalidInput("forest needs trees and predictors".into()));
        }
        for t in &trees {
            if let Some(s) = t.nodes().iter().filter_map(|n| n.split.as_ref()).find(|s| s.feature >= predictors.len()) {
                return Err(Error::InvalidInput(format!(
                    "split on feature {} of {}",
                    s.feature,
                    predictors.len()
                )));
            }
        }
        Ok(Forest {
            config: ForestConfig {
                n_trees: trees.len(),
                mtry: predictors.len(),
                ..ForestConfig::default()
            },
            target: target.to_string(),
            bootstrap: vec![Vec::new(); trees.len()],
            predictors,
            trees,
        })
    }

    /// Mean of the per-tree predictions; `row` follows `self.predictors`.
    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.predictors.len() {
            return Err(Error::InvalidInput(format!(
                "row has {} values, forest expects {}",
                row.len(),
                self.predictors.len()
            )));
        }
        if let Some(j) = row.iter().position(|v| v.is_nan()) {
            return Err(Error::MissingValue {
                column: self.predictors[j].clone(),
                row: "<input>".into(),
            });
        }
        Ok(self.predict_unchecked(row))
    }

    pub(crate) fn predict_unchecked(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }

    fn check_matrix(&self, x: &FeatureMatrix) -> Result<()> {
        if x.names != self.predictors {
            return Err(Error::InvalidInput(
                "matrix columns do not match the forest predictors".into(),
            ));
        }
        Ok(())
    }

    pub fn predict_matrix(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        self.check_matrix(x)?;
        Ok(self.predict_columns(&x.columns, x.n_rows))
    }

    pub(crate) fn predict_columns(&self, columns: &[Vec<f64>], n_rows: usize) -> Vec<f64> {
        let k = self.trees.len() as f64;
        (0..n_rows)
            .map(|i| self.trees.iter().map(|t| t.predict_at(columns, i)).sum::<f64>() / k)
            .collect()
    }

    /// Predictions for every complete row of `ds`.
    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<f64>> {
        self.predict_matrix(&ds.matrix(&self.predictors)?)
    }

    /// Out-of-bag prediction per training row: the mean over trees whose
    /// bootstrap sample missed the row. `None` if every tree saw it.
    pub fn oob_predictions(&self, x: &FeatureMatrix) -> Result<Vec<Option<f64>>> {
        self.check_matrix(x)?;
        let n = x.n_rows;
        let mut sum = vec![0.0; n];
        let mut count = vec![0usize; n];
        let mut in_bag = vec![false; n];
        for (tree, sample) in self.trees.iter().zip(&self.bootstrap) {
            in_bag.iter_mut().for_each(|b| *b = false);
            for &i in sample {
                if i < n {
                    in_bag[i] = true;
                }
            }
            for i in (0..n).filter(|&i| !in_bag[i]) {
                sum[i] += tree.predict_at(&x.columns, i);
                count[i] += 1;
            }
        }
        Ok(sum
            .into_iter()
            .zip(count)
            .map(|(s, c)| (c > 0).then(|| s / c as f64))
            .collect())
    }

    /// Total SSE decrease per predictor, averaged over trees. Predictors
    /// that never split score 0.
    pub fn impurity_importance(&self) -> BTreeMap<String, f64> {
        let mut totals = vec![0.0; self.predictors.len()];
        for tree in &self.trees {
            for s in tree.nodes().iter().filter_map(|n| n.split.as_ref()) {
                totals[s.feature] += s.sse_decrease;
            }
        }
        let k = self.trees.len() as f64;
        self.predictors
            .iter()
            .cloned()
            .zip(totals.into_iter().map(|t| t / k))
            .collect()
    }

    /// Mean RMSE increase after shuffling each predictor column of `x`,
    /// over `n_repeats` shuffles.
    pub fn permutation_importance_matrix(
        &self,
        x: &FeatureMatrix,
        y: &[f64],
        seed: u64,
        n_repeats: usize,
    ) -> Result<BTreeMap<String, f64>> {
        self.check_matrix(x)?;
        if y.len() != x.n_rows || n_repeats == 0 {
            return Err(Error::InvalidInput(
                "permutation importance needs matching targets and n_repeats >= 1".into(),
            ));
        }
        let base = crate::evaluate::rmse(y, &self.predict_columns(&x.columns, x.n_rows))?;
        let scores: Vec<f64> = (0..self.predictors.len())
            .into_par_iter()
            .map(|j| {
                let mut columns = x.columns.clone();
                let mut total = 0.0;
                for r in 0..n_repeats {
                    let mut rng = rng::stream(seed, &[tag::PERMUTE, j as u64, r as u64]);
                    columns[j].clone_from(&x.columns[j]);
                    columns[j].shuffle(&mut rng);
                    let pred = self.predict_columns(&columns, x.n_rows);
                    // Lengths match by construction.
                    total += crate::evaluate::rmse(y, &pred).unwrap_or(base) - base;
                }
                total / n_repeats as f64
            })
            .collect();
        Ok(self.predictors.iter().cloned().zip(scores).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Forest> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn permutation_importance(
    f: &Forest,
    data: &Dataset,
    seed: u64,
    n_repeats: usize,
) -> Result<BTreeMap<String, f64>> {
    let x = data.matrix(&f.predictors)?;
    let y = data.target(&f.target)?;
    f.permutation_importance_matrix(&x, &y, seed, n_repeats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(names: &[&str], columns: Vec<Vec<f64>>) -> FeatureMatrix {
        FeatureMatrix::new(names.iter().map(|s| s.to_string()).collect(), columns).unwrap()
    }

    fn noisy_line(n: usize, seed: u64) -> (FeatureMatrix, Vec<f64>) {
        let mut rng = rng::stream(seed, &[99]);
        let signal: Vec<f64> = (0..n).map(|i| -100.0 + 200.0 * i as f64 / (n - 1) as f64).collect();
        let noise: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
        let y = signal.clone();
        (matrix(&["signal", "noise"], vec![signal, noise]), y)
    }

    #[test]
    fn constant_target_predicts_constant() {
        let (x, _) = noisy_line(30, 1);
        let y = vec![42.0; 30];
        let f = Forest::fit(&x, &y, "y", &ForestConfig { n_trees: 20, mtry: 2, ..Default::default() }).unwrap();
        for p in f.predict_matrix(&x).unwrap() {
            assert_eq!(p, 42.0);
        }
        assert!(f.impurity_importance().values().all(|&v| v == 0.0));
    }

    #[test]
    fn fits_a_line_in_sample() {
        // Oracle run: 50 grid points, 100 deep trees -> RMSE about 4 on a range of 200.
        let (x, y) = noisy_line(50, 2);
        let cfg = ForestConfig {
            n_trees: 100,
            mtry: 2,
            min_node_size: 1,
            seed: 11,
            ..Default::default()
        };
        let f = Forest::fit(&x, &y, "y", &cfg).unwrap();
        let pred = f.predict_matrix(&x).unwrap();
        let rmse = crate::evaluate::rmse(&y, &pred).unwrap();
        assert!(rmse < 20.0, "rmse {rmse}");
    }

    #[test]
    fn deterministic_across_pool_sizes() {
        let (x, y) = noisy_line(60, 3);
        let cfg = ForestConfig { n_trees: 16, mtry: 1, seed: 5, ..Default::default() };
        let fit_with = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| Forest::fit(&x, &y, "y", &cfg).unwrap())
        };
        let a = fit_with(1);
        let b = fit_with(4);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn prediction_is_mean_of_trees() {
        let trees = vec![
            RegressionTree::from_nodes(vec![Node::leaf(10.0, 1)]).unwrap(),
            RegressionTree::from_nodes(vec![Node::leaf(20.0, 1)]).unwrap(),
        ];
        let f = Forest::from_trees("y", vec!["a".into()], trees).unwrap();
        assert_eq!(f.predict(&[0.0]).unwrap(), 15.0);
        assert!(matches!(f.predict(&[f64::NAN]), Err(Error::MissingValue { .. })));
        assert!(f.predict(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn single_split_importance() {
        let tree = RegressionTree::from_nodes(vec![
            Node {
                value: 5.0,
                n_samples: 4,
                split: Some(NodeSplit {
                    feature: 1,
                    threshold: 2.5,
                    left: 1,
                    right: 2,
                    sse_decrease: 100.0,
                }),
            },
            Node::leaf(0.0, 2),
            Node::leaf(10.0, 2),
        ])
        .unwrap();
        let f = Forest::from_trees("y", vec!["a".into(), "b".into()], vec![tree]).unwrap();
        let imp = f.impurity_importance();
        assert_eq!(imp["a"], 0.0);
        assert_eq!(imp["b"], 100.0);
    }

    #[test]
    fn signal_outranks_noise() {
        let (x, y) = noisy_line(80, 4);
        let cfg = ForestConfig { n_trees: 50, mtry: 1, seed: 9, ..Default::default() };
        let f = Forest::fit(&x, &y, "y", &cfg).unwrap();
        let imp = f.impurity_importance();
        assert!(imp["signal"] > imp["noise"]);
        let perm = f.permutation_importance_matrix(&x, &y, 3, 2).unwrap();
        assert!(perm["signal"] > 10.0, "{perm:?}");
    }

    #[test]
    fn unused_feature_has_zero_permutation_importance() {
        let (x, y) = noisy_line(40, 6);
        let x = matrix(&["signal", "noise", "flat"], {
            let mut c = x.columns.clone();
            c.push((0..40).map(|i| (i % 7) as f64).collect());
            c
        });
        // Only the signal column is ever offered to the splitter.
        let f = Forest::fit(&matrix(&["signal"], vec![x.columns[0].clone()]), &y, "y", &ForestConfig { n_trees: 10, ..Default::default() }).unwrap();
        let f = Forest {
            predictors: x.names.clone(),
            ..f
        };
        let a = f.permutation_importance_matrix(&x, &y, 1, 1).unwrap();
        let b = f.permutation_importance_matrix(&x, &y, 1, 1).unwrap();
        assert_eq!(a, b);
        assert!(a["noise"].abs() < 1e-9 && a["flat"].abs() < 1e-9);
    }

    #[test]
    fn oob_rows_exist_for_most_samples() {
        let (x, y) = noisy_line(50, 8);
        let f = Forest::fit(&x, &y, "y", &ForestConfig { n_trees: 30, mtry: 2, seed: 1, ..Default::default() }).unwrap();
        let oob = f.oob_predictions(&x).unwrap();
        assert!(oob.iter().filter(|o| o.is_some()).count() >= 48);
    }

    #[test]
    fn rejects_bad_config() {
        let (x, y) = noisy_line(10, 1);
        let bad = ForestConfig { mtry: 0, ..Default::default() };
        assert!(Forest::fit(&x, &y, "y", &bad).is_err());
        let f = Forest::fit(&x, &y, "y", &ForestConfig { n_trees: 2, mtry: 9, ..Default::default() }).unwrap();
        assert_eq!(f.config.mtry, 2);
    }
}
