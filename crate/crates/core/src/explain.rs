//! Partial dependence curves and readable single-tree exports.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{Forest, RegressionTree};
use crate::schema::{Dataset, FeatureMatrix, SCALE_MIN};

/// Maximum number of points in a default grid.
pub const MAX_GRID_POINTS: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialDependenceCurve {
    pub feature: String,
    /// Strictly increasing.
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Rows averaged over.
    pub n: usize,
}

impl PartialDependenceCurve {
    /// `x,pd` with six decimals.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x", "pd"])?;
        for (x, v) in self.grid.iter().zip(&self.values) {
            w.write_record([format!("{x:.6}"), format!("{v:.6}")])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Observed distinct values merged with the scale's step-25 points. Longer
/// grids are thinned to [`MAX_GRID_POINTS`] evenly spaced entries, keeping
/// both ends.
pub fn default_grid(observed: &[f64]) -> Vec<f64> {
    let scale = (0..=8).map(|i| f64::from(SCALE_MIN) + 25.0 * f64::from(i));
    let mut grid: Vec<f64> = observed.iter().copied().filter(|v| v.is_finite()).chain(scale).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.len() <= MAX_GRID_POINTS {
        return grid;
    }
    let last = grid.len() - 1;
    (0..MAX_GRID_POINTS)
        .map(|k| grid[(k * last + (MAX_GRID_POINTS - 1) / 2) / (MAX_GRID_POINTS - 1)])
        .collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty partial dependence grid".into()));
    }
    if grid.iter().any(|g| !g.is_finite()) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(
            "partial dependence grid must be finite and strictly increasing".into(),
        ));
    }
    Ok(())
}

fn feature_index(f: &Forest, feature: &str) -> Result<usize> {
    f.predictors
        .iter()
        .position(|p| p == feature)
        .ok_or_else(|| Error::InvalidInput(format!("`{feature}` is not a predictor of {}", f.target)))
}

/// Partial dependence over the rows of `x`; `grid = None` uses
/// [`default_grid`] over the observed values.
pub fn partial_dependence_matrix(
    f: &Forest,
    x: &FeatureMatrix,
    feature: &str,
    grid: Option<&[f64]>,
) -> Result<PartialDependenceCurve> {
    if x.names != f.predictors {
        return Err(Error::InvalidInput(
            "matrix columns do not match the forest predictors".into(),
        ));
    }
    if x.n_rows == 0 {
        return Err(Error::InvalidInput("no rows to average over".into()));
    }
    let j = feature_index(f, feature)?;
    let grid = grid.map_or_else(|| default_grid(&x.columns[j]), <[f64]>::to_vec);
    check_grid(&grid)?;
    let values = grid
        .par_iter()
        .map(|&g| {
            let mut columns = x.columns.clone();
            columns[j].iter_mut().for_each(|v| *v = g);
            let pred = f.predict_columns(&columns, x.n_rows);
            pred.iter().sum::<f64>() / x.n_rows as f64
        })
        .collect();
    Ok(PartialDependenceCurve {
        feature: feature.to_string(),
        grid,
        values,
        n: x.n_rows,
    })
}

/// Partial dependence over the complete rows of `data`.
pub fn partial_dependence(
    f: &Forest,
    data: &Dataset,
    feature: &str,
    grid: Option<&[f64]>,
) -> Result<PartialDependenceCurve> {
    feature_index(f, feature)?;
    partial_dependence_matrix(f, &data.matrix(&f.predictors)?, feature, grid)
}

/// One curve per tree; the forest curve is their pointwise mean.
pub fn per_tree_partial_dependence(
    f: &Forest,
    x: &FeatureMatrix,
    feature: &str,
    grid: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let j = feature_index(f, feature)?;
    check_grid(grid)?;
    if x.names != f.predictors || x.n_rows == 0 {
        return Err(Error::InvalidInput("matrix does not fit the forest".into()));
    }
    Ok(f.trees
        .iter()
        .map(|t| {
            grid.iter()
                .map(|&g| {
                    let mut row = vec![0.0; x.n_features()];
                    (0..x.n_rows)
                        .map(|i| {
                            for (k, c) in x.columns.iter().enumerate() {
                                row[k] = c[i];
                            }
                            row[j] = g;
                            t.predict(&row)
                        })
                        .sum::<f64>()
                        / x.n_rows as f64
                })
                .collect()
        })
        .collect())
}

/// Shortest decimal form up to four places; `-0` prints as `0`.
fn num(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn feature_name(names: &[String], j: usize) -> String {
    names.get(j).cloned().unwrap_or_else(|| format!("x{j}"))
}

/// Indented text rendering: each split contributes a `CODE ≤ t` line
/// followed by its left subtree and a `CODE > t` line followed by its right
/// subtree; leaves print `predict = v (n=N)`.
pub fn export_tree(t: &RegressionTree, feature_names: &[String]) -> String {
    fn go(t: &RegressionTree, names: &[String], i: usize, depth: usize, out: &mut String) {
        let node = &t.nodes()[i];
        let pad = "  ".repeat(depth);
        match &node.split {
            None => {
                let _ = writeln!(out, "{pad}predict = {} (n={})", num(node.value), node.n_samples);
            }
            Some(s) => {
                let name = feature_name(names, s.feature);
                let thr = num(s.threshold);
                let _ = writeln!(out, "{pad}{name} ≤ {thr}");
                go(t, names, s.left, depth + 1, out);
                let _ = writeln!(out, "{pad}{name} > {thr}");
                go(t, names, s.right, depth + 1, out);
            }
        }
    }
    let mut out = String::new();
    go(t, feature_names, 0, 0, &mut out);
    out
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz DOT rendering; edges are labelled `yes` (≤) and `no` (>).
pub fn export_tree_dot(t: &RegressionTree, feature_names: &[String]) -> String {
    let mut out = String::from("digraph tree {\n  node [shape=box];\n");
    for (i, node) in t.nodes().iter().enumerate() {
        let label = match &node.split {
            None => format!("predict = {}\\nn = {}", num(node.value), node.n_samples),
            Some(s) => format!("{} ≤ {}", dot_escape(&feature_name(feature_names, s.feature)), num(s.threshold)),
        };
        let _ = writeln!(out, "  n{i} [label=\"{label}\"];");
        if let Some(s) = &node.split {
            let _ = writeln!(out, "  n{i} -> n{} [label=\"yes\"];", s.left);
            let _ = writeln!(out, "  n{i} -> n{} [label=\"no\"];", s.right);
        }
    }
    out.push_str("}\n");
    out
}
