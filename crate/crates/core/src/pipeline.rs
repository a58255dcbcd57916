//! End-to-end run: screening, modelling, evaluation, importance tables,
//! chord diagrams and survey statistics, written as a fixed bundle.
//!
//! ```text
//! <out>/reports/   evaluation reports, accuracy curves, statistics
//! <out>/tables/    importance tables (and generated responses)
//! <out>/figures/   chord diagrams
//! <out>/manifest.json
//! ```
//!
//! All randomness derives from the config seed. Each stage has its own
//! stream, so the bundle is a pure function of config, data and seed and
//! does not depend on the worker count.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chord::{layout, render_svg, LayoutOptions, Style};
use crate::error::{Error, Result};
use crate::evaluate::{
    oob_or_full, random_baseline, threshold_grid, write_accuracy_csv, EvaluationReport, SplitMetrics,
};
use crate::forest::ForestConfig;
use crate::importance::{
    aggregate_factors, build_importance_table, fit_models, segment_importance, FittedModel,
    ImportanceTable, ModelProtocol, MtryRule,
};
use crate::rng::{self, tag};
use crate::schema::{
    complete_cases, label_adoption, load_schema, parse_responses, screen, split, write_responses,
    ConstructSchema, Dataset, ModelClass, ScreeningReport,
};
use crate::stats::{describe, pearson_matrix, u_test_by_cohort, write_u_test_csv, UTestOptions};
use crate::synth::{generate_synthetic, SyntheticSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestSettings {
    pub n_trees: usize,
    pub min_node_size: usize,
    pub max_depth: Option<usize>,
    /// Trees per forest during cross-validation; `None` uses `n_trees`.
    pub cv_trees: Option<usize>,
    pub folds: usize,
    /// `None` uses the default grid for each model's predictor count.
    pub mtry_grid: Option<Vec<usize>>,
}

impl Default for ForestSettings {
    fn default() -> Self {
        ForestSettings {
            n_trees: 500,
            min_node_size: 5,
            max_depth: None,
            cv_trees: None,
            folds: 10,
            mtry_grid: None,
        }
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_max_na() -> f64 {
    0.2
}
fn default_train_fraction() -> f64 {
    0.8
}
fn default_threshold_step() -> f64 {
    5.0
}
fn default_baseline_samples() -> usize {
    1000
}
fn default_segment_min() -> usize {
    20
}
fn default_alpha() -> f64 {
    0.05
}

/// Run configuration in TOML. Relative paths resolve against the config
/// file's directory. Exactly one of `data` and `[synthetic]` is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: PathBuf,
    pub data: Option<PathBuf>,
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Largest fraction of missing item answers a respondent may have.
    #[serde(default = "default_max_na")]
    pub max_na_fraction: f64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub forest: ForestSettings,
    #[serde(default = "default_threshold_step")]
    pub threshold_step: f64,
    #[serde(default = "default_baseline_samples")]
    pub baseline_samples: usize,
    #[serde(default = "default_segment_min")]
    pub segment_min_size: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub u_test: UTestOptions,
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    pub layout: LayoutOptions,
    #[serde(default)]
    pub style: Style,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `path` and resolves its relative paths.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, String)> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        cfg.schema = resolve(&cfg.schema);
        cfg.data = cfg.data.as_deref().map(resolve);
        cfg.output_dir = resolve(&cfg.output_dir);
        Ok((cfg, text))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        match (&self.data, &self.synthetic) {
            (None, None) => return fail("either `data` or a [synthetic] section is required"),
            (Some(_), Some(_)) => return fail("`data` and [synthetic] are mutually exclusive"),
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.max_na_fraction) {
            return fail("max_na_fraction must lie in [0, 1]");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return fail("train_fraction must lie in (0, 1)");
        }
        let f = &self.forest;
        if f.n_trees == 0 || f.min_node_size == 0 || f.cv_trees == Some(0) || f.folds < 2 {
            return fail("forest needs n_trees, cv_trees, min_node_size >= 1 and folds >= 2");
        }
        if f.mtry_grid.as_ref().is_some_and(|g| g.is_empty() || g.contains(&0)) {
            return fail("mtry_grid entries must be at least 1");
        }
        if !(self.threshold_step > 0.0 && self.threshold_step <= 200.0) {
            return fail("threshold_step must lie in (0, 200]");
        }
        if self.baseline_samples == 0 {
            return fail("baseline_samples must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail("alpha must lie in (0, 1)");
        }
        if let Some(s) = &self.synthetic {
            s.validate()?;
        }
        Ok(())
    }

    /// Every input path must exist before a run starts.
    pub fn check_paths(&self) -> Result<()> {
        for p in std::iter::once(&self.schema).chain(&self.data) {
            if !p.is_file() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn protocol(&self, class: ModelClass) -> ModelProtocol {
        ModelProtocol {
            forest: ForestConfig {
                n_trees: self.forest.n_trees,
                mtry: 1,
                min_node_size: self.forest.min_node_size,
                max_depth: self.forest.max_depth,
                seed: 0,
            },
            mtry: MtryRule::CrossValidated {
                grid: self.forest.mtry_grid.clone(),
                folds: self.forest.folds,
            },
            cv_trees: self.forest.cv_trees,
            class,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub data_sha256: String,
    pub seed: u64,
    /// Bundle-relative path to SHA-256 of the file contents.
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Bundle {
    root: PathBuf,
    artifacts: BTreeMap<String, String>,
}

impl Bundle {
    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.artifacts.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn write_with(&mut self, rel: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(rel, &buf)
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }
}

/// Everything read before the first output is written.
struct Inputs {
    schema: ConstructSchema,
    data: Dataset,
    data_bytes: Vec<u8>,
    generated: bool,
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let schema = load_schema(&cfg.schema)?;
    match (&cfg.data, &cfg.synthetic) {
        (Some(path), _) => {
            let data_bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            Ok(Inputs {
                data: parse_responses(path, &schema)?,
                schema,
                data_bytes,
                generated: false,
            })
        }
        (None, Some(_)) => {
            let data = synthetic_data(cfg, &schema)?.ok_or_else(|| Error::Config("no data source".into()))?;
            let mut data_bytes = Vec::new();
            write_responses(&data, &schema.id_column, &mut data_bytes)?;
            Ok(Inputs {
                schema,
                data,
                data_bytes,
                generated: true,
            })
        }
        (None, None) => Err(Error::Config("no data source".into())),
    }
}

fn class_dir(class: ModelClass) -> &'static str {
    match class {
        ModelClass::External => "external",
        ModelClass::Internal => "internal",
    }
}

/// Fit-set and held-out metrics plus the random baseline on the held-out
/// targets.
pub fn evaluate_model(
    model: &FittedModel,
    train: &Dataset,
    test: &Dataset,
    class: ModelClass,
    thresholds: &[f64],
    baseline_samples: usize,
    baseline_seed: u64,
) -> Result<EvaluationReport> {
    let f = &model.forest;
    let mut cols = f.predictors.clone();
    cols.push(f.target.clone());
    let train = complete_cases(train, &cols)?;
    let test = complete_cases(test, &cols)?;
    let x_train = train.matrix(&f.predictors)?;
    let y_train = train.target(&f.target)?;
    let x_test = test.matrix(&f.predictors)?;
    let y_test = test.target(&f.target)?;
    Ok(EvaluationReport {
        target: f.target.clone(),
        class,
        mtry: f.config.mtry,
        predictors: f.predictors.clone(),
        train: SplitMetrics::compute(&y_train, &oob_or_full(f, &x_train)?, thresholds)?,
        test: SplitMetrics::compute(&y_test, &f.predict_matrix(&x_test)?, thresholds)?,
        cv: model.cv.clone(),
        baseline: random_baseline(&y_test, baseline_samples, thresholds, baseline_seed)?,
    })
}

fn write_table(bundle: &mut Bundle, rel: &str, t: &ImportanceTable) -> Result<()> {
    bundle.write_with(rel, |w| t.write_csv(w))
}

fn write_chord(
    bundle: &mut Bundle,
    rel: &str,
    t: &ImportanceTable,
    schema: &ConstructSchema,
    cfg: &RunConfig,
) -> Result<()> {
    let l = layout(t, schema, &cfg.layout)?;
    bundle.write(rel, render_svg(&l, &cfg.style).as_bytes())
}

/// Respondent sets feeding the modelling stages.
pub struct ModelData {
    pub screening: ScreeningReport,
    /// Screened and labeled with adoption status.
    pub labeled: Dataset,
    /// Complete on every item column (and the cohort flag when present).
    pub complete: Dataset,
    pub train: Dataset,
    pub test: Dataset,
}

/// Screening, adoption labels, complete cases and the train/test split.
pub fn prepare(cfg: &RunConfig, schema: &ConstructSchema, data: &Dataset) -> Result<ModelData> {
    let (screened, screening) = screen(data, cfg.max_na_fraction).map_err(|e| e.in_stage("screen"))?;
    let labeled = match &schema.adoption_item {
        Some(item) => label_adoption(&screened, item).map_err(|e| e.in_stage("screen"))?,
        None => screened,
    };
    let mut model_cols: Vec<String> = schema.item_columns().iter().map(|s| s.to_string()).collect();
    if let Some(c) = labeled.cohort_code().filter(|_| labeled.rows.iter().any(|r| r.cohort.is_some())) {
        model_cols.push(c.to_string());
    }
    let complete = complete_cases(&labeled, &model_cols).map_err(|e| e.in_stage("complete_cases"))?;
    let (train, test) = split(&complete, cfg.train_fraction, rng::derive_seed(cfg.seed, &[tag::SPLIT]))
        .map_err(|e| e.in_stage("split"))?;
    Ok(ModelData {
        screening,
        labeled,
        complete,
        train,
        test,
    })
}

/// Generates the configured synthetic survey, as a run would.
pub fn synthetic_data(cfg: &RunConfig, schema: &ConstructSchema) -> Result<Option<Dataset>> {
    cfg.synthetic
        .as_ref()
        .map(|spec| generate_synthetic(spec, schema, rng::derive_seed(cfg.seed, &[tag::SYNTH])))
        .transpose()
}

/// Runs the pipeline on the current rayon pool and writes the bundle to
/// `out`. Inputs are loaded and checked before anything is written.
pub fn run_pipeline(cfg: &RunConfig, config_text: &str, out: &Path) -> Result<Manifest> {
    cfg.validate()
        .and_then(|()| cfg.check_paths())
        .map_err(|e| e.in_stage("config"))?;
    let inputs = load_inputs(cfg).map_err(|e| e.in_stage("load"))?;
    let schema = &inputs.schema;
    let mut bundle = Bundle {
        root: out.to_path_buf(),
        artifacts: BTreeMap::new(),
    };
    fs::create_dir_all(out).map_err(|e| Error::io(out, e).in_stage("output"))?;
    if inputs.generated {
        bundle
            .write("tables/responses.csv", &inputs.data_bytes)
            .map_err(|e| e.in_stage("output"))?;
    }

    let ModelData { screening, labeled, complete, train, test } = prepare(cfg, schema, &inputs.data)?;
    bundle.write_json(
        "reports/screening.json",
        &serde_json::json!({
            "screening": screening,
            "n_complete": complete.len(),
            "n_train": train.len(),
            "n_test": test.len(),
        }),
    )?;

    let thresholds = threshold_grid(cfg.threshold_step);
    let mut summary = String::from("class,target,mtry,rmse_train,rmse_test,nrmse_train,nrmse_test\n");
    let mut tables = BTreeMap::new();
    for (ci, class) in [ModelClass::External, ModelClass::Internal].into_iter().enumerate() {
        let stage = format!("models/{}", class_dir(class));
        let models = fit_models(&train, schema, &cfg.protocol(class), rng::derive_seed(cfg.seed, &[tag::FIT, ci as u64]))
            .map_err(|e| e.in_stage(&stage))?;
        for (ti, (target, model)) in models.iter().enumerate() {
            let seed = rng::derive_seed(cfg.seed, &[tag::BASELINE, ci as u64, ti as u64]);
            let report = evaluate_model(model, &train, &test, class, &thresholds, cfg.baseline_samples, seed)
                .map_err(|e| e.in_stage(format!("evaluate/{}/{target}", class_dir(class))))?;
            summary.push_str(&format!(
                "{},{target},{},{:.4},{:.4},{:.4},{:.4}\n",
                class.as_str(),
                report.mtry,
                report.rmse_train(),
                report.rmse_test(),
                report.nrmse_train(),
                report.nrmse_test()
            ));
            let dir = class_dir(class);
            bundle.write_json(&format!("reports/{dir}/{target}.json"), &report)?;
            bundle.write_with(&format!("reports/{dir}/{target}_accuracy.csv"), |w| {
                write_accuracy_csv(&report.test.accuracy_at, &report.baseline, w)
            })?;
        }
        let forests = models.into_iter().map(|(t, m)| (t, m.forest)).collect();
        let table = build_importance_table(&forests).map_err(|e| e.in_stage(format!("importance/{}", class_dir(class))))?;
        tables.insert(class_dir(class), table);
    }
    bundle.write("reports/summary.csv", summary.as_bytes())?;

    let external = &tables["external"];
    let internal = &tables["internal"];
    let external_factors = aggregate_factors(external, schema).map_err(|e| e.in_stage("importance"))?;
    write_table(&mut bundle, "tables/importance_external_items.csv", external)?;
    write_table(&mut bundle, "tables/importance_external_factors.csv", &external_factors)?;
    write_table(&mut bundle, "tables/importance_internal_items.csv", internal)?;

    let segments = segment_importance(
        &complete,
        schema,
        &cfg.protocol(ModelClass::External),
        cfg.segment_min_size,
        rng::derive_seed(cfg.seed, &[tag::SEGMENT]),
    )
    .map_err(|e| e.in_stage("segments"))?;
    let seg_factors = [
        ("adopters", aggregate_factors(&segments.adopters, schema).map_err(|e| e.in_stage("segments"))?),
        ("nonadopters", aggregate_factors(&segments.non_adopters, schema).map_err(|e| e.in_stage("segments"))?),
    ];
    write_table(&mut bundle, "tables/importance_segment_adopters_items.csv", &segments.adopters)?;
    write_table(&mut bundle, "tables/importance_segment_nonadopters_items.csv", &segments.non_adopters)?;
    for (name, t) in &seg_factors {
        write_table(&mut bundle, &format!("tables/importance_segment_{name}_factors.csv"), t)?;
    }

    let charts = [
        ("figures/chord_external_items.svg", external),
        ("figures/chord_external_factors.svg", &external_factors),
        ("figures/chord_internal_items.svg", internal),
        ("figures/chord_segment_adopters_factors.svg", &seg_factors[0].1),
        ("figures/chord_segment_nonadopters_factors.svg", &seg_factors[1].1),
    ];
    for (rel, t) in charts {
        write_chord(&mut bundle, rel, t, schema, cfg).map_err(|e| e.in_stage("chord"))?;
    }

    let items: Vec<String> = schema.item_columns().iter().map(|s| s.to_string()).collect();
    if labeled.rows.iter().any(|r| r.cohort.is_some()) {
        let rows = u_test_by_cohort(&labeled, &items, &cfg.u_test, cfg.alpha).map_err(|e| e.in_stage("stats"))?;
        bundle.write_with("reports/u_test.csv", |w| write_u_test_csv(&rows, w))?;
    }
    let mut numeric = items.clone();
    numeric.extend(schema.auxiliary.iter().filter(|a| labeled.has_feature(a)).cloned());
    let corr = pearson_matrix(&labeled, &numeric).map_err(|e| e.in_stage("stats"))?;
    bundle.write_with("reports/correlations.csv", |w| corr.write_csv(w))?;
    let descriptions = numeric
        .iter()
        .map(|c| describe(&labeled, c))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("stats"))?;
    bundle.write_json("reports/descriptives.json", &descriptions)?;

    let manifest = Manifest {
        config_sha256: sha256_hex(config_text.as_bytes()),
        data_sha256: sha256_hex(&inputs.data_bytes),
        seed: cfg.seed,
        artifacts: bundle.artifacts.clone(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    let path = out.join("manifest.json");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// [`run_pipeline`] on a dedicated pool of `workers` threads (`None` uses
/// the global pool).
pub fn run_with_workers(
    cfg: &RunConfig,
    config_text: &str,
    out: &Path,
    workers: Option<usize>,
) -> Result<Manifest> {
    match workers {
        None => run_pipeline(cfg, config_text, out),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| run_pipeline(cfg, config_text, out)),
    }
}
