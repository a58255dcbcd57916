//! Construct/item data model and survey ingestion.
//!
//! A [`ConstructSchema`] lists the factors of the instrument (perceived
//! risk, trust, ...), the items that measure each one and the factor's
//! "overall" item, which serves as the model target. The schema file is
//! TOML:
//!
//! ```toml
//! id_column = "id"            # optional, default "id"
//! adoption_item = "BI4"       # optional, item used to label adopters
//! auxiliary = ["CAR", "PT"]   # optional numeric columns outside the factors
//!
//! [[factor]]
//! code = "PR"
//! name = "Perceived Risk"
//! items = ["PR1", "PR2"]
//! overall = "PR8"
//! color = "#d7301f"
//! predictor = true            # optional; false keeps the factor outcome-only
//!
//! [[factor]]
//! code = "PO"
//! name = "Psychological Ownership"
//! items = []
//! overall = "PO"
//! color = "#999999"
//! cohort = true               # the between-subjects group flag column
//! ```

mod dataset;

pub use dataset::{
    complete_cases, label_adoption, parse_responses, read_responses, screen, split, write_responses,
    Adoption, Cohort, ColumnKind, Dataset, FeatureMatrix, RespondentRecord, ScreeningReport,
    SCALE_MAX, SCALE_MIN,
};

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorDef {
    pub code: String,
    #[serde(rename = "name")]
    pub display_name: String,
    #[serde(rename = "items", default)]
    pub item_codes: Vec<String>,
    #[serde(rename = "overall")]
    pub overall_item: String,
    pub color: String,
    #[serde(default = "default_true")]
    pub predictor: bool,
    #[serde(default)]
    pub cohort: bool,
}

fn default_true() -> bool {
    true
}

fn default_id_column() -> String {
    "id".to_string()
}

/// Which family of predictors a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelClass {
    /// Items of every other predictor factor (plus the cohort flag).
    External,
    /// The target factor's own items.
    Internal,
}

impl ModelClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelClass::External => "external",
            ModelClass::Internal => "internal",
        }
    }
}

impl std::str::FromStr for ModelClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "external" => Ok(ModelClass::External),
            "internal" => Ok(ModelClass::Internal),
            other => Err(Error::InvalidInput(format!("unknown model class `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstructSchema {
    #[serde(default = "default_id_column")]
    pub id_column: String,
    #[serde(default)]
    pub adoption_item: Option<String>,
    #[serde(default)]
    pub auxiliary: Vec<String>,
    #[serde(rename = "factor")]
    pub factors: Vec<FactorDef>,
}

pub fn load_schema(path: impl AsRef<Path>) -> Result<ConstructSchema> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ConstructSchema::parse(&text)
}

fn is_hex_color(s: &str) -> bool {
    s.len() == 7 && s.starts_with('#') && s[1..].chars().all(|c| c.is_ascii_hexdigit())
}

impl ConstructSchema {
    pub fn parse(text: &str) -> Result<Self> {
        let schema: ConstructSchema =
            toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.factors.is_empty() {
            return Err(Error::Schema("schema defines no factors".into()));
        }
        let mut factor_codes = BTreeSet::new();
        let mut seen = BTreeSet::new();
        seen.insert(self.id_column.as_str());
        let mut cohorts = 0;
        for f in &self.factors {
            if !factor_codes.insert(f.code.as_str()) {
                return Err(Error::Schema(format!("duplicate factor code `{}`", f.code)));
            }
            if !is_hex_color(&f.color) {
                return Err(Error::Schema(format!(
                    "factor `{}`: color `{}` is not #rrggbb",
                    f.code, f.color
                )));
            }
            if f.item_codes.contains(&f.overall_item) {
                return Err(Error::Schema(format!(
                    "factor `{}`: overall item `{}` is also listed among its items",
                    f.code, f.overall_item
                )));
            }
            if f.cohort {
                cohorts += 1;
                if !f.item_codes.is_empty() {
                    return Err(Error::Schema(format!(
                        "cohort factor `{}` must be single-item",
                        f.code
                    )));
                }
            }
            for code in f.item_codes.iter().chain(std::iter::once(&f.overall_item)) {
                if code.is_empty() {
                    return Err(Error::Schema(format!("factor `{}`: empty item code", f.code)));
                }
                if !seen.insert(code.as_str()) {
                    return Err(Error::Schema(format!("duplicate item code `{code}`")));
                }
            }
        }
        if cohorts > 1 {
            return Err(Error::Schema("at most one cohort factor is allowed".into()));
        }
        for aux in &self.auxiliary {
            if !seen.insert(aux.as_str()) {
                return Err(Error::Schema(format!("duplicate column code `{aux}`")));
            }
        }
        if let Some(item) = &self.adoption_item {
            if !self.item_columns().contains(&item.as_str()) {
                return Err(Error::Schema(format!(
                    "adoption item `{item}` is not a survey item"
                )));
            }
        }
        Ok(())
    }

    pub fn factor(&self, code: &str) -> Option<&FactorDef> {
        self.factors.iter().find(|f| f.code == code)
    }

    /// Factor owning `item` (item list or overall item).
    pub fn factor_of_item(&self, item: &str) -> Option<&FactorDef> {
        self.factors
            .iter()
            .find(|f| f.overall_item == item || f.item_codes.iter().any(|c| c == item))
    }

    /// Resolves either a factor code or an item code to its factor.
    pub fn resolve(&self, code: &str) -> Option<&FactorDef> {
        self.factor(code).or_else(|| self.factor_of_item(code))
    }

    pub fn cohort_factor(&self) -> Option<&FactorDef> {
        self.factors.iter().find(|f| f.cohort)
    }

    pub fn cohort_code(&self) -> Option<&str> {
        self.cohort_factor().map(|f| f.overall_item.as_str())
    }

    /// Survey item columns in schema order: each factor's items, then its
    /// overall item. The cohort flag is not an item column.
    pub fn item_columns(&self) -> Vec<&str> {
        self.factors
            .iter()
            .filter(|f| !f.cohort)
            .flat_map(|f| {
                f.item_codes
                    .iter()
                    .map(String::as_str)
                    .chain(std::iter::once(f.overall_item.as_str()))
            })
            .collect()
    }

    /// Factors whose overall item is modelled.
    pub fn target_factors(&self) -> impl Iterator<Item = &FactorDef> {
        self.factors.iter().filter(|f| !f.cohort)
    }

    /// Predictor columns for a model of `target_factor`'s overall item.
    pub fn predictors(&self, target_factor: &str, class: ModelClass) -> Result<Vec<String>> {
        let target = self
            .factor(target_factor)
            .ok_or_else(|| Error::InvalidInput(format!("unknown factor `{target_factor}`")))?;
        let preds: Vec<String> = match class {
            ModelClass::Internal => target.item_codes.clone(),
            ModelClass::External => self
                .factors
                .iter()
                .filter(|f| f.code != target.code && f.predictor)
                .flat_map(|f| {
                    if f.cohort || f.item_codes.is_empty() {
                        vec![f.overall_item.clone()]
                    } else {
                        f.item_codes.clone()
                    }
                })
                .collect(),
        };
        if preds.is_empty() {
            return Err(Error::InvalidInput(format!(
                "factor `{target_factor}` has no {} predictors",
                class.as_str()
            )));
        }
        Ok(preds)
    }
}
