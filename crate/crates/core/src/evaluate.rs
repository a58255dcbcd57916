//! Error metrics, threshold accuracy, the uniform random-guess baseline and
//! k-fold cross-validation over an `mtry` grid.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{Forest, ForestConfig};
use crate::rng::{self, tag};
use crate::schema::{Dataset, FeatureMatrix, ModelClass};

/// Full width of the response scale; accuracy at this threshold is always 1.
pub const SCALE_SPAN: f64 = 200.0;

fn check_pair(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::InvalidInput(format!(
            "{} actual values vs {} predictions",
            y.len(),
            yhat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::InvalidInput("empty input".into()));
    }
    Ok(())
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let sse: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((sse / y.len() as f64).sqrt())
}

/// RMSE divided by the range of the actual values.
pub fn nrmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    let e = rmse(y, yhat)?;
    let range = value_range(y);
    if range <= 0.0 {
        return Err(Error::InvalidInput("actual values have zero range".into()));
    }
    Ok(e / range)
}

fn value_range(y: &[f64]) -> f64 {
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = y.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

/// Share of predictions within `t` of the actual value.
pub fn threshold_accuracy(y: &[f64], yhat: &[f64], t: f64) -> Result<f64> {
    check_pair(y, yhat)?;
    if t.is_nan() || t < 0.0 {
        return Err(Error::InvalidInput(format!("threshold {t} must be >= 0")));
    }
    let hits = y.iter().zip(yhat).filter(|(a, b)| (*b - *a).abs() <= t).count();
    Ok(hits as f64 / y.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyPoint {
    pub threshold: f64,
    pub accuracy: f64,
}

pub fn accuracy_curve(y: &[f64], yhat: &[f64], thresholds: &[f64]) -> Result<Vec<AccuracyPoint>> {
    check_pair(y, yhat)?;
    if let Some(t) = thresholds.iter().find(|t| !(0.0..=SCALE_SPAN).contains(*t)) {
        return Err(Error::InvalidInput(format!("threshold {t} outside [0, 200]")));
    }
    thresholds
        .iter()
        .map(|&t| {
            Ok(AccuracyPoint {
                threshold: t,
                accuracy: threshold_accuracy(y, yhat, t)?,
            })
        })
        .collect()
}

/// `0, step, 2*step, ..., 200`.
pub fn threshold_grid(step: f64) -> Vec<f64> {
    let n = (SCALE_SPAN / step).round() as usize;
    (0..=n).map(|i| (i as f64 * step).min(SCALE_SPAN)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineCurve {
    pub thresholds: Vec<f64>,
    pub mean_accuracy: Vec<f64>,
    pub stddev: Vec<f64>,
    pub n_samples: usize,
    pub seed: u64,
}

impl BaselineCurve {
    pub fn at(&self, t: f64) -> Option<(f64, f64)> {
        self.thresholds
            .iter()
            .position(|&x| x == t)
            .map(|i| (self.mean_accuracy[i], self.stddev[i]))
    }
}

/// Accuracy of uniform random guesses on [-100, 100] against `y`,
/// summarised over `n_samples` independent replicates (sample standard
/// deviation, 0 for a single replicate).
pub fn random_baseline(
    y: &[f64],
    n_samples: usize,
    thresholds: &[f64],
    seed: u64,
) -> Result<BaselineCurve> {
    if n_samples == 0 {
        return Err(Error::InvalidInput("baseline needs n_samples >= 1".into()));
    }
    if y.is_empty() {
        return Err(Error::InvalidInput("empty input".into()));
    }
    let replicates: Vec<Vec<f64>> = (0..n_samples)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, &[tag::BASELINE, r as u64]);
            let guess: Vec<f64> = y.iter().map(|_| rng.random_range(-100.0..=100.0)).collect();
            accuracy_curve(y, &guess, thresholds).map(|c| c.into_iter().map(|p| p.accuracy).collect())
        })
        .collect::<Result<_>>()?;
    let k = n_samples as f64;
    let mut mean_accuracy = Vec::with_capacity(thresholds.len());
    let mut stddev = Vec::with_capacity(thresholds.len());
    for j in 0..thresholds.len() {
        let m = replicates.iter().map(|r| r[j]).sum::<f64>() / k;
        let var = if n_samples > 1 {
            replicates.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / (k - 1.0)
        } else {
            0.0
        };
        mean_accuracy.push(m);
        stddev.push(var.sqrt());
    }
    Ok(BaselineCurve {
        thresholds: thresholds.to_vec(),
        mean_accuracy,
        stddev,
        n_samples,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub grid: Vec<usize>,
    pub mean_rmse: Vec<f64>,
    pub best_mtry: usize,
}

/// `{2, p/3, p/2, p}`, deduplicated, clipped to `1..=p`.
pub fn default_mtry_grid(p: usize) -> Vec<usize> {
    let mut g: Vec<usize> = [2, p / 3, p / 2, p]
        .into_iter()
        .map(|m| m.clamp(1, p.max(1)))
        .collect();
    g.sort_unstable();
    g.dedup();
    g
}

/// Shuffles `0..n` once and cuts it into `k` contiguous blocks whose sizes
/// differ by at most one (the first `n % k` blocks are larger).
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[tag::FOLDS]));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(order[start..start + len].to_vec());
        start += len;
    }
    folds
}

fn take_rows(x: &FeatureMatrix, rows: &[usize]) -> FeatureMatrix {
    FeatureMatrix {
        names: x.names.clone(),
        columns: x
            .columns
            .iter()
            .map(|c| rows.iter().map(|&i| c[i]).collect())
            .collect(),
        n_rows: rows.len(),
    }
}

/// k-fold CV on a prepared matrix. Fold `f` uses forest seed
/// `(seed, fold f)` for every grid value, so grid entries are compared on
/// the same random streams.
pub fn cross_validate_matrix(
    x: &FeatureMatrix,
    y: &[f64],
    target: &str,
    grid: &[usize],
    k: usize,
    cfg: &ForestConfig,
    seed: u64,
) -> Result<CvReport> {
    let n = y.len();
    let p = x.n_features();
    if k < 2 || n < k {
        return Err(Error::InvalidInput(format!(
            "{k}-fold CV needs k >= 2 and at least k rows (have {n})"
        )));
    }
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty mtry grid".into()));
    }
    if let Some(m) = grid.iter().find(|&&m| m == 0 || m > p) {
        return Err(Error::InvalidInput(format!("mtry {m} outside 1..={p}")));
    }
    let mut grid = grid.to_vec();
    grid.sort_unstable();
    grid.dedup();

    let folds = fold_assignment(n, k, seed);
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..k).map(move |f| (g, f)))
        .collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(g, f)| {
            let held = &folds[f];
            let mut is_held = vec![false; n];
            held.iter().for_each(|&i| is_held[i] = true);
            let train_rows: Vec<usize> = (0..n).filter(|&i| !is_held[i]).collect();
            let fcfg = ForestConfig {
                mtry: grid[g],
                seed: rng::derive_seed(seed, &[tag::CV_FIT, f as u64]),
                ..cfg.clone()
            };
            let tx = take_rows(x, &train_rows);
            let ty: Vec<f64> = train_rows.iter().map(|&i| y[i]).collect();
            let forest = Forest::fit(&tx, &ty, target, &fcfg)?;
            let hx = take_rows(x, held);
            let hy: Vec<f64> = held.iter().map(|&i| y[i]).collect();
            rmse(&hy, &forest.predict_columns(&hx.columns, hx.n_rows))
        })
        .collect::<Result<_>>()?;

    let mean_rmse: Vec<f64> = scores
        .chunks(k)
        .map(|c| c.iter().sum::<f64>() / k as f64)
        .collect();
    let mut best = 0;
    for (i, &m) in mean_rmse.iter().enumerate() {
        if m < mean_rmse[best] {
            best = i;
        }
    }
    Ok(CvReport {
        folds: k,
        best_mtry: grid[best],
        grid,
        mean_rmse,
    })
}

pub fn cross_validate(
    train: &Dataset,
    target: &str,
    predictors: &[String],
    grid: &[usize],
    k: usize,
    cfg: &ForestConfig,
    seed: u64,
) -> Result<CvReport> {
    let x = train.matrix(predictors)?;
    let y = train.target(target)?;
    cross_validate_matrix(&x, &y, target, grid, k, cfg, seed)
}

/// Observed and predicted values for one data split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub n: usize,
    pub rmse: f64,
    pub nrmse: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub accuracy_at: Vec<AccuracyPoint>,
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
}

impl SplitMetrics {
    pub fn compute(y: &[f64], yhat: &[f64], thresholds: &[f64]) -> Result<Self> {
        Ok(SplitMetrics {
            n: y.len(),
            rmse: rmse(y, yhat)?,
            nrmse: nrmse(y, yhat)?,
            y_min: y.iter().copied().fold(f64::INFINITY, f64::min),
            y_max: y.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            accuracy_at: accuracy_curve(y, yhat, thresholds)?,
            actual: y.to_vec(),
            predicted: yhat.to_vec(),
        })
    }

    pub fn accuracy(&self, t: f64) -> Option<f64> {
        self.accuracy_at
            .iter()
            .find(|p| p.threshold == t)
            .map(|p| p.accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub target: String,
    pub class: ModelClass,
    pub mtry: usize,
    pub predictors: Vec<String>,
    /// Train metrics use out-of-bag predictions.
    pub train: SplitMetrics,
    pub test: SplitMetrics,
    pub cv: Option<CvReport>,
    pub baseline: BaselineCurve,
}

impl EvaluationReport {
    pub fn rmse_train(&self) -> f64 {
        self.train.rmse
    }

    pub fn rmse_test(&self) -> f64 {
        self.test.rmse
    }

    pub fn nrmse_train(&self) -> f64 {
        self.train.nrmse
    }

    pub fn nrmse_test(&self) -> f64 {
        self.test.nrmse
    }
}

/// Out-of-bag predictions, falling back to the full forest for rows no
/// tree left out.
pub fn oob_or_full(forest: &Forest, x: &FeatureMatrix) -> Result<Vec<f64>> {
    let oob = forest.oob_predictions(x)?;
    Ok(oob
        .into_iter()
        .enumerate()
        .map(|(i, o)| o.unwrap_or_else(|| forest.predict_unchecked(&x.row(i))))
        .collect())
}

/// Writes `threshold,model_accuracy,baseline_mean,baseline_sd`.
pub fn write_accuracy_csv<W: Write>(
    model: &[AccuracyPoint],
    baseline: &BaselineCurve,
    writer: W,
) -> Result<()> {
    if model.len() != baseline.thresholds.len()
        || model.iter().zip(&baseline.thresholds).any(|(p, t)| p.threshold != *t)
    {
        return Err(Error::InvalidInput("model and baseline thresholds differ".into()));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["threshold", "model_accuracy", "baseline_mean", "baseline_sd"])?;
    for (i, p) in model.iter().enumerate() {
        w.write_record([
            p.threshold.to_string(),
            format!("{:.6}", p.accuracy),
            format!("{:.6}", baseline.mean_accuracy[i]),
            format!("{:.6}", baseline.stddev[i]),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
