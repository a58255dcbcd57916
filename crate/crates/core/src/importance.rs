//! Relative-importance tables: per target, predictor weights normalised to
//! sum to 100, at item or factor level.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::{cross_validate_matrix, default_mtry_grid};
use crate::forest::{Forest, ForestConfig};
use crate::rng::{self, tag};
use crate::schema::{complete_cases, Adoption, ConstructSchema, Dataset, ModelClass};

/// Per-target tolerance for generated tables.
pub const SUM_TOLERANCE: f64 = 1e-6;

/// Scales nonnegative raw scores to percentages. Negative scores are
/// clamped to zero first.
pub fn relative_importance(raw: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>> {
    let clamped: BTreeMap<&String, f64> = raw
        .iter()
        .map(|(k, &v)| {
            if v < 0.0 {
                log::warn!("negative importance {v} for `{k}` clamped to 0");
            }
            (k, if v.is_nan() { 0.0 } else { v.max(0.0) })
        })
        .collect();
    let total: f64 = clamped.values().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroImportance(String::new()));
    }
    Ok(clamped
        .into_iter()
        .map(|(k, v)| (k.clone(), 100.0 * v / total))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableLevel {
    Item,
    Factor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub predictor: String,
    pub target: String,
    /// Percentage of the target's total importance.
    pub weight: f64,
}

/// Rows sorted by `(target, predictor)`, unique on that key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceTable {
    pub level: TableLevel,
    rows: Vec<ImportanceRow>,
}

impl ImportanceTable {
    /// Sorts rows canonically and rejects duplicate keys or negative weights.
    pub fn new(level: TableLevel, mut rows: Vec<ImportanceRow>) -> Result<Self> {
        rows.sort_by(|a, b| (&a.target, &a.predictor).cmp(&(&b.target, &b.predictor)));
        for w in rows.windows(2) {
            if w[0].target == w[1].target && w[0].predictor == w[1].predictor {
                return Err(Error::TableInvariant(format!(
                    "duplicate row ({}, {})",
                    w[0].predictor, w[0].target
                )));
            }
        }
        if let Some(r) = rows.iter().find(|r| !(r.weight >= 0.0) || !r.weight.is_finite()) {
            return Err(Error::TableInvariant(format!(
                "weight {} for ({}, {}) is not a nonnegative number",
                r.weight, r.predictor, r.target
            )));
        }
        Ok(ImportanceTable { level, rows })
    }

    /// One row per `(predictor, target)` from raw per-target scores.
    pub fn from_raw(raw: &BTreeMap<String, BTreeMap<String, f64>>) -> Result<Self> {
        let mut rows = Vec::new();
        for (target, scores) in raw {
            let rel = relative_importance(scores).map_err(|e| match e {
                Error::ZeroImportance(_) => Error::ZeroImportance(target.clone()),
                other => other,
            })?;
            rows.extend(rel.into_iter().map(|(predictor, weight)| ImportanceRow {
                predictor,
                target: target.clone(),
                weight,
            }));
        }
        ImportanceTable::new(TableLevel::Item, rows)
    }

    pub fn rows(&self) -> &[ImportanceRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn targets(&self) -> Vec<&str> {
        let mut t: Vec<&str> = self.rows.iter().map(|r| r.target.as_str()).collect();
        t.dedup();
        t
    }

    pub fn weight(&self, predictor: &str, target: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.predictor == predictor && r.target == target)
            .map(|r| r.weight)
    }

    pub fn target_sums(&self) -> BTreeMap<String, f64> {
        let mut sums = BTreeMap::new();
        for r in &self.rows {
            *sums.entry(r.target.clone()).or_insert(0.0) += r.weight;
        }
        sums
    }

    /// Checks that every target's weights sum to 100 within `tolerance`.
    pub fn validate(&self, tolerance: f64) -> Result<()> {
        for (t, s) in self.target_sums() {
            if (s - 100.0).abs() > tolerance {
                return Err(Error::TableInvariant(format!(
                    "weights for `{t}` sum to {s}, not 100 (tolerance {tolerance})"
                )));
            }
        }
        Ok(())
    }

    /// `predictor,target,weight`; weights at two decimals.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["predictor", "target", "weight"])?;
        for r in &self.rows {
            w.write_record([&r.predictor, &r.target, &format!("{:.2}", r.weight)])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Reads `predictor,target,weight` rows. No sum check is applied here:
    /// published tables carry rounding, so callers validate with their own
    /// tolerance.
    pub fn read_csv<R: Read>(level: TableLevel, reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != ["predictor", "target", "weight"] {
            return Err(Error::InvalidInput(format!(
                "expected header predictor,target,weight, got {}",
                header.join(",")
            )));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let weight: f64 = rec[2].parse().map_err(|_| Error::Parse {
                line: i + 2,
                column: "weight".into(),
                message: format!("`{}` is not a number", &rec[2]),
            })?;
            rows.push(ImportanceRow {
                predictor: rec[0].to_string(),
                target: rec[1].to_string(),
                weight,
            });
        }
        ImportanceTable::new(level, rows)
    }
}

/// Impurity-importance table over fitted models keyed by target.
pub fn build_importance_table(models: &BTreeMap<String, Forest>) -> Result<ImportanceTable> {
    let raw: BTreeMap<String, BTreeMap<String, f64>> = models
        .iter()
        .map(|(t, f)| (t.clone(), f.impurity_importance()))
        .collect();
    ImportanceTable::from_raw(&raw)
}

/// Sums item weights into their factors. Targets that are a factor's
/// overall item are renamed to the factor code so that a factor appears
/// as a single node whether it predicts or is predicted.
pub fn aggregate_factors(t: &ImportanceTable, schema: &ConstructSchema) -> Result<ImportanceTable> {
    let mut sums: BTreeMap<(String, String), f64> = BTreeMap::new();
    for r in &t.rows {
        let pf = schema
            .factor_of_item(&r.predictor)
            .ok_or_else(|| Error::InvalidInput(format!("orphan item `{}`", r.predictor)))?;
        let target = schema
            .factor_of_item(&r.target)
            .map_or_else(|| r.target.clone(), |f| f.code.clone());
        *sums.entry((pf.code.clone(), target)).or_insert(0.0) += r.weight;
    }
    ImportanceTable::new(
        TableLevel::Factor,
        sums.into_iter()
            .map(|((predictor, target), weight)| ImportanceRow {
                predictor,
                target,
                weight,
            })
            .collect(),
    )
}

/// How `mtry` is chosen for each model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MtryRule {
    Fixed(usize),
    /// k-fold CV over a grid (`None` = default grid for the predictor count).
    CrossValidated { grid: Option<Vec<usize>>, folds: usize },
}

/// Settings shared by every model of a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProtocol {
    pub forest: ForestConfig,
    pub mtry: MtryRule,
    /// Tree count during CV (defaults to `forest.n_trees`).
    pub cv_trees: Option<usize>,
    pub class: ModelClass,
}

/// A model fitted under a [`ModelProtocol`].
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub target_factor: String,
    pub forest: Forest,
    pub cv: Option<crate::evaluate::CvReport>,
}

/// Fits the model for `target_factor` on the complete rows of `data`.
/// `seed` is the model's own seed; CV and the final fit derive from it.
pub fn fit_model(
    data: &Dataset,
    schema: &ConstructSchema,
    target_factor: &str,
    protocol: &ModelProtocol,
    seed: u64,
) -> Result<FittedModel> {
    let factor = schema
        .factor(target_factor)
        .ok_or_else(|| Error::InvalidInput(format!("unknown factor `{target_factor}`")))?;
    let target = factor.overall_item.clone();
    let predictors = schema.predictors(target_factor, protocol.class)?;
    let mut cols = predictors.clone();
    cols.push(target.clone());
    let data = complete_cases(data, &cols)?;
    let x = data.matrix(&predictors)?;
    let y = data.target(&target)?;
    let (mtry, cv) = match &protocol.mtry {
        MtryRule::Fixed(m) => ((*m).clamp(1, predictors.len()), None),
        MtryRule::CrossValidated { grid, folds } => {
            let grid = grid
                .clone()
                .map(|g| g.into_iter().filter(|&m| m <= predictors.len()).collect::<Vec<_>>())
                .filter(|g| !g.is_empty())
                .unwrap_or_else(|| default_mtry_grid(predictors.len()));
            let cv_cfg = ForestConfig {
                n_trees: protocol.cv_trees.unwrap_or(protocol.forest.n_trees),
                ..protocol.forest.clone()
            };
            let rep = cross_validate_matrix(
                &x,
                &y,
                &target,
                &grid,
                *folds,
                &cv_cfg,
                rng::derive_seed(seed, &[tag::FOLDS]),
            )?;
            (rep.best_mtry, Some(rep))
        }
    };
    let cfg = ForestConfig {
        mtry,
        seed: rng::derive_seed(seed, &[tag::FIT]),
        ..protocol.forest.clone()
    };
    Ok(FittedModel {
        target_factor: target_factor.to_string(),
        forest: Forest::fit(&x, &y, &target, &cfg)?,
        cv,
    })
}

/// Fits one model per target factor and returns them keyed by target item.
pub fn fit_models(
    data: &Dataset,
    schema: &ConstructSchema,
    protocol: &ModelProtocol,
    seed: u64,
) -> Result<BTreeMap<String, FittedModel>> {
    let mut out = BTreeMap::new();
    for (i, f) in schema.target_factors().enumerate() {
        if protocol.class == ModelClass::Internal && f.item_codes.is_empty() {
            continue;
        }
        let model = fit_model(data, schema, &f.code, protocol, rng::derive_seed(seed, &[i as u64]))?;
        out.insert(f.overall_item.clone(), model);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTables {
    pub adopters: ImportanceTable,
    pub non_adopters: ImportanceTable,
    pub n_adopters: usize,
    pub n_non_adopters: usize,
}

/// Fits the protocol's models separately on adopters and non-adopters.
/// `ds` must carry adoption labels; unlabeled rows are ignored.
pub fn segment_importance(
    ds: &Dataset,
    schema: &ConstructSchema,
    protocol: &ModelProtocol,
    min_size: usize,
    seed: u64,
) -> Result<SegmentTables> {
    let segment = |a: Adoption| {
        ds.with_rows(
            ds.rows
                .iter()
                .filter(|r| r.adoption == Some(a))
                .cloned()
                .collect(),
        )
    };
    let adopters = segment(Adoption::Adopter);
    let non_adopters = segment(Adoption::NonAdopter);
    for (name, s) in [("adopters", &adopters), ("non-adopters", &non_adopters)] {
        if s.len() < min_size {
            return Err(Error::SegmentTooSmall {
                segment: name.to_string(),
                size: s.len(),
                minimum: min_size,
            });
        }
    }
    let table = |s: &Dataset, a: Adoption| -> Result<ImportanceTable> {
        let seg_seed = rng::derive_seed(seed, &[tag::SEGMENT, a as u64]);
        let models = fit_models(s, schema, protocol, seg_seed)?;
        let forests = models.into_iter().map(|(t, m)| (t, m.forest)).collect();
        build_importance_table(&forests)
    };
    Ok(SegmentTables {
        adopters: table(&adopters, Adoption::Adopter)?,
        non_adopters: table(&non_adopters, Adoption::NonAdopter)?,
        n_adopters: adopters.len(),
        n_non_adopters: non_adopters.len(),
    })
}
