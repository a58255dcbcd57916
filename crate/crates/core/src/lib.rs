//! Random forest analysis of Likert-scale survey constructs.
//!
//! The crate covers the whole path from raw responses to figures:
//! schema-driven ingestion and screening ([`schema`]), a from-scratch
//! regression forest ([`forest`]), accuracy metrics, cross-validation and a
//! random-guess baseline ([`evaluate`]), relative importance tables
//! ([`importance`]), survey statistics ([`stats`]), partial dependence and
//! tree export ([`explain`]), chord diagrams ([`chord`]), a synthetic survey
//! generator ([`synth`]) and the end-to-end run ([`pipeline`]).

pub mod chord;
pub mod error;
pub mod evaluate;
pub mod explain;
pub mod forest;
pub mod importance;
pub mod pipeline;
pub mod rng;
pub mod schema;
pub mod stats;
pub mod synth;

pub use chord::{layout, render_svg, ChordLayout, LayoutOptions, Style};
pub use error::{Error, ErrorKind, Result};
pub use evaluate::{nrmse, rmse, threshold_accuracy, BaselineCurve, EvaluationReport};
pub use explain::{export_tree, partial_dependence, PartialDependenceCurve};
pub use forest::{fit_forest, Forest, ForestConfig, RegressionTree};
pub use importance::{aggregate_factors, relative_importance, ImportanceTable, TableLevel};
pub use pipeline::{run_pipeline, Manifest, RunConfig};
pub use schema::{load_schema, ConstructSchema, Dataset, ModelClass};
pub use stats::{mann_whitney_u, UTestOptions, UTestResult};
pub use synth::{generate_synthetic, SyntheticSpec};
