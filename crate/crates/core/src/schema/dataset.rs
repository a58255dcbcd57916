use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::ConstructSchema;
use crate::error::{Error, Result};
use crate::rng::{self, tag};

pub const SCALE_MIN: i32 = -100;
pub const SCALE_MAX: i32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cohort {
    Control,
    PsychOwnership,
}

impl Cohort {
    /// Numeric encoding used when the cohort enters a model as a predictor.
    pub fn as_f64(self) -> f64 {
        match self {
            Cohort::Control => 0.0,
            Cohort::PsychOwnership => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Adoption {
    Adopter,
    NonAdopter,
}

impl Adoption {
    pub fn as_str(self) -> &'static str {
        match self {
            Adoption::Adopter => "adopters",
            Adoption::NonAdopter => "nonadopters",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    Item,
    Auxiliary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RespondentRecord {
    pub id: String,
    pub values: Vec<Option<i32>>,
    pub cohort: Option<Cohort>,
    pub adoption: Option<Adoption>,
}

/// Respondents × columns on the -100..100 response scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    columns: Vec<String>,
    kinds: Vec<ColumnKind>,
    /// Code under which the cohort flag is exposed as a 0/1 feature.
    cohort_code: Option<String>,
    pub rows: Vec<RespondentRecord>,
}

/// Column-major numeric design matrix with no missing cells.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub n_rows: usize,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::InvalidInput(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let n_rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n_rows) {
            return Err(Error::InvalidInput("ragged feature columns".into()));
        }
        Ok(FeatureMatrix {
            names,
            columns,
            n_rows,
        })
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }
}

impl Dataset {
    pub fn new(
        columns: Vec<String>,
        kinds: Vec<ColumnKind>,
        cohort_code: Option<String>,
        rows: Vec<RespondentRecord>,
    ) -> Result<Self> {
        if columns.len() != kinds.len() {
            return Err(Error::InvalidInput("column kinds do not match columns".into()));
        }
        for r in &rows {
            if r.values.len() != columns.len() {
                return Err(Error::InvalidInput(format!(
                    "row `{}` has {} values for {} columns",
                    r.id,
                    r.values.len(),
                    columns.len()
                )));
            }
            if let Some(v) = r.values.iter().flatten().find(|v| !(SCALE_MIN..=SCALE_MAX).contains(*v)) {
                return Err(Error::InvalidInput(format!(
                    "row `{}` holds {v}, outside [-100, 100]",
                    r.id
                )));
            }
        }
        Ok(Dataset {
            columns,
            kinds,
            cohort_code,
            rows,
        })
    }

    /// Empty dataset with the schema's item and auxiliary columns.
    pub fn empty_for(schema: &ConstructSchema) -> Self {
        let mut columns: Vec<String> = schema.item_columns().iter().map(|s| s.to_string()).collect();
        let mut kinds = vec![ColumnKind::Item; columns.len()];
        columns.extend(schema.auxiliary.iter().cloned());
        kinds.resize(columns.len(), ColumnKind::Auxiliary);
        Dataset {
            columns,
            kinds,
            cohort_code: schema.cohort_code().map(str::to_string),
            rows: Vec::new(),
        }
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn kinds(&self) -> &[ColumnKind] {
        &self.kinds
    }

    pub fn cohort_code(&self) -> Option<&str> {
        self.cohort_code.as_deref()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, code: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == code)
    }

    pub fn item_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == ColumnKind::Item)
            .map(|(i, _)| i)
    }

    /// Same columns, a different row set.
    pub fn with_rows(&self, rows: Vec<RespondentRecord>) -> Self {
        Dataset {
            columns: self.columns.clone(),
            kinds: self.kinds.clone(),
            cohort_code: self.cohort_code.clone(),
            rows,
        }
    }

    pub fn has_feature(&self, code: &str) -> bool {
        self.column_index(code).is_some() || self.cohort_code.as_deref() == Some(code)
    }

    /// Per-row values of a column or of the cohort flag.
    pub fn feature_values(&self, code: &str) -> Result<Vec<Option<f64>>> {
        if let Some(j) = self.column_index(code) {
            return Ok(self
                .rows
                .iter()
                .map(|r| r.values[j].map(f64::from))
                .collect());
        }
        if self.cohort_code.as_deref() == Some(code) {
            return Ok(self
                .rows
                .iter()
                .map(|r| r.cohort.map(Cohort::as_f64))
                .collect());
        }
        Err(Error::UnknownColumn(code.to_string()))
    }

    /// Design matrix over `codes`; every cell must be present.
    pub fn matrix(&self, codes: &[String]) -> Result<FeatureMatrix> {
        let mut columns = Vec::with_capacity(codes.len());
        for code in codes {
            let values = self.feature_values(code)?;
            let col = values
                .into_iter()
                .enumerate()
                .map(|(i, v)| {
                    v.ok_or_else(|| Error::MissingValue {
                        column: code.clone(),
                        row: self.rows[i].id.clone(),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            columns.push(col);
        }
        let mut m = FeatureMatrix::new(codes.to_vec(), columns)?;
        m.n_rows = self.rows.len();
        Ok(m)
    }

    /// Complete target column.
    pub fn target(&self, code: &str) -> Result<Vec<f64>> {
        let m = self.matrix(&[code.to_string()])?;
        Ok(m.columns.into_iter().next().unwrap_or_default())
    }
}

fn parse_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "NA"
}

fn parse_cohort(cell: &str, line: usize, column: &str) -> Result<Option<Cohort>> {
    match cell {
        c if parse_missing(c) => Ok(None),
        "0" | "Control" => Ok(Some(Cohort::Control)),
        "1" | "PsychOwnership" => Ok(Some(Cohort::PsychOwnership)),
        other => Err(Error::Parse {
            line,
            column: column.to_string(),
            message: format!("`{other}` is not a cohort flag (0/1)"),
        }),
    }
}

pub fn parse_responses(path: impl AsRef<Path>, schema: &ConstructSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_responses(file, schema)
}

/// Parses a response CSV: a header of column codes, then one row per
/// respondent. Cells are integers, empty, or `NA`.
pub fn read_responses<R: Read>(reader: R, schema: &ConstructSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();

    let mut ds = Dataset::empty_for(schema);
    let cohort_code = schema.cohort_code();

    // Map each dataset column to its CSV position; auxiliary columns are optional.
    let mut position: HashMap<&str, usize> = HashMap::new();
    for (i, h) in header.iter().enumerate() {
        if position.insert(h.as_str(), i).is_some() {
            return Err(Error::InvalidInput(format!("duplicate header `{h}`")));
        }
        let known = h == &schema.id_column
            || Some(h.as_str()) == cohort_code
            || ds.column_index(h).is_some();
        if !known {
            return Err(Error::UnknownColumn(h.clone()));
        }
    }
    let id_pos = *position
        .get(schema.id_column.as_str())
        .ok_or_else(|| Error::MissingColumn(schema.id_column.clone()))?;
    let mut sources = Vec::with_capacity(ds.columns.len());
    let mut keep = Vec::with_capacity(ds.columns.len());
    for (code, kind) in ds.columns.iter().zip(&ds.kinds) {
        match (position.get(code.as_str()), kind) {
            (Some(&p), _) => {
                sources.push(p);
                keep.push(true);
            }
            (None, ColumnKind::Auxiliary) => keep.push(false),
            (None, ColumnKind::Item) => return Err(Error::MissingColumn(code.clone())),
        }
    }
    if keep.iter().any(|k| !k) {
        let mut k = keep.iter();
        ds.columns.retain(|_| *k.next().unwrap());
        let mut k = keep.iter();
        ds.kinds.retain(|_| *k.next().unwrap());
    }
    let cohort_pos = cohort_code.and_then(|c| position.get(c).copied());

    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let field = |p: usize| record.get(p).unwrap_or("");
        let mut values = Vec::with_capacity(sources.len());
        for (&p, code) in sources.iter().zip(&ds.columns) {
            let cell = field(p);
            if parse_missing(cell) {
                values.push(None);
                continue;
            }
            let v: i64 = cell.parse().map_err(|_| Error::Parse {
                line,
                column: code.clone(),
                message: format!("`{cell}` is not an integer"),
            })?;
            if !(i64::from(SCALE_MIN)..=i64::from(SCALE_MAX)).contains(&v) {
                return Err(Error::OutOfRange {
                    line,
                    column: code.clone(),
                    value: v,
                });
            }
            values.push(Some(v as i32));
        }
        let cohort = match cohort_pos {
            Some(p) => parse_cohort(field(p), line, cohort_code.unwrap_or_default())?,
            None => None,
        };
        ds.rows.push(RespondentRecord {
            id: field(id_pos).to_string(),
            values,
            cohort,
            adoption: None,
        });
    }
    Ok(ds)
}

/// Writes a dataset in the format [`read_responses`] accepts.
pub fn write_responses<W: Write>(ds: &Dataset, id_column: &str, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![id_column.to_string()];
    header.extend(ds.columns.iter().cloned());
    if let Some(c) = &ds.cohort_code {
        header.push(c.clone());
    }
    w.write_record(&header)?;
    for r in &ds.rows {
        let mut rec = vec![r.id.clone()];
        rec.extend(
            r.values
                .iter()
                .map(|v| v.map_or_else(|| "NA".to_string(), |v| v.to_string())),
        );
        if ds.cohort_code.is_some() {
            rec.push(match r.cohort {
                Some(Cohort::Control) => "0".into(),
                Some(Cohort::PsychOwnership) => "1".into(),
                None => "NA".into(),
            });
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub n_input: usize,
    pub n_excluded_na: usize,
    pub n_retained: usize,
    pub excluded_ids: Vec<String>,
}

/// Drops rows whose share of missing item cells is strictly greater than
/// `max_na_fraction`. Auxiliary columns do not count.
pub fn screen(ds: &Dataset, max_na_fraction: f64) -> Result<(Dataset, ScreeningReport)> {
    if !(0.0..=1.0).contains(&max_na_fraction) {
        return Err(Error::InvalidInput(format!(
            "max_na_fraction {max_na_fraction} outside [0, 1]"
        )));
    }
    let items: Vec<usize> = ds.item_indices().collect();
    let limit = max_na_fraction * items.len() as f64 + 1e-9;
    let (kept, dropped): (Vec<_>, Vec<_>) = ds.rows.iter().cloned().partition(|r| {
        let missing = items.iter().filter(|&&j| r.values[j].is_none()).count();
        missing as f64 <= limit
    });
    let report = ScreeningReport {
        n_input: ds.len(),
        n_excluded_na: dropped.len(),
        n_retained: kept.len(),
        excluded_ids: dropped.into_iter().map(|r| r.id).collect(),
    };
    Ok((ds.with_rows(kept), report))
}

/// Rows with no missing value among `columns` (the cohort code counts as a
/// column).
pub fn complete_cases(ds: &Dataset, columns: &[String]) -> Result<Dataset> {
    let mut getters = Vec::with_capacity(columns.len());
    for c in columns {
        if let Some(j) = ds.column_index(c) {
            getters.push(Some(j));
        } else if ds.cohort_code.as_deref() == Some(c.as_str()) {
            getters.push(None);
        } else {
            return Err(Error::UnknownColumn(c.clone()));
        }
    }
    let rows = ds
        .rows
        .iter()
        .filter(|r| {
            getters.iter().all(|g| match g {
                Some(j) => r.values[*j].is_some(),
                None => r.cohort.is_some(),
            })
        })
        .cloned()
        .collect();
    Ok(ds.with_rows(rows))
}

/// Seeded uniform train/test partition. The train part holds
/// `floor(n * train_fraction)` rows, clamped to `1..=n-1`; both parts keep
/// the input row order.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let n = ds.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("cannot split {n} rows")));
    }
    let n_train = ((n as f64 * train_fraction).floor() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[tag::SPLIT]));
    let mut in_train = vec![false; n];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let (train, test): (Vec<_>, Vec<_>) = ds
        .rows
        .iter()
        .zip(&in_train)
        .map(|(r, t)| (r.clone(), *t))
        .partition(|(_, t)| *t);
    Ok((
        ds.with_rows(train.into_iter().map(|(r, _)| r).collect()),
        ds.with_rows(test.into_iter().map(|(r, _)| r).collect()),
    ))
}

/// Adopter iff the item is >= 1, non-adopter iff <= 0, unlabeled if missing.
pub fn label_adoption(ds: &Dataset, overall_bi_item: &str) -> Result<Dataset> {
    let j = ds
        .column_index(overall_bi_item)
        .ok_or_else(|| Error::UnknownColumn(overall_bi_item.to_string()))?;
    let rows = ds
        .rows
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.adoption = r.values[j].map(|v| {
                if v >= 1 {
                    Adoption::Adopter
                } else {
                    Adoption::NonAdopter
                }
            });
            r
        })
        .collect();
    Ok(ds.with_rows(rows))
}
