//! `likertrf` command line. Every stage of the pipeline is a subcommand
//! reading and writing the documented file formats; `run` chains them.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 model
//! error.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use likertrf::chord::{LabelMode, LayoutOptions, Style};
use likertrf::evaluate::{random_baseline, threshold_grid, write_accuracy_csv, SplitMetrics};
use likertrf::explain::{export_tree_dot, partial_dependence};
use likertrf::importance::{fit_model, ModelProtocol, MtryRule};
use likertrf::pipeline::{run_with_workers, RunConfig};
use likertrf::schema::{complete_cases, parse_responses, screen, write_responses};
use likertrf::stats::{describe, pearson_matrix, u_test_by_cohort, write_u_test_csv, UTestOptions};
use likertrf::{
    aggregate_factors, export_tree, generate_synthetic, layout, load_schema, render_svg, Error,
    ErrorKind, Forest, ForestConfig, ImportanceTable, ModelClass, SyntheticSpec, TableLevel,
};

#[derive(Parser)]
#[command(name = "likertrf", version, about = "Random forest importance analysis of Likert-scale surveys")]
struct Cli {
    /// Worker threads for parallel stages. Results do not depend on it.
    #[arg(long, global = true, env = "LIKERTRF_WORKERS")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and screen a response file; prints the screening report.
    Ingest(IngestArgs),
    /// Generate a synthetic response file.
    Synth(SynthArgs),
    /// Fit one model and save the forest as JSON.
    Fit(FitArgs),
    /// Score a saved forest on a response file against the random baseline.
    Evaluate(EvaluateArgs),
    /// Build a relative importance table from saved forests.
    Importance(ImportanceArgs),
    /// Draw an importance table as a chord diagram.
    Chord(ChordArgs),
    /// Cohort U-tests, correlations and descriptive summaries.
    Stats(StatsArgs),
    /// Partial dependence of a saved forest on one predictor.
    Pd(PdArgs),
    /// Print one tree of a saved forest.
    Tree(TreeArgs),
    /// Run the full pipeline from a TOML config.
    Run(RunArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Construct schema (TOML).
    #[arg(long, env = "LIKERTRF_SCHEMA")]
    schema: PathBuf,
    /// Response CSV.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.2)]
    max_na_fraction: f64,
    /// Write the retained respondents here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, env = "LIKERTRF_SCHEMA")]
    schema: PathBuf,
    /// TOML file with generator settings; defaults apply when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassArg {
    External,
    Internal,
}

impl From<ClassArg> for ModelClass {
    fn from(c: ClassArg) -> Self {
        match c {
            ClassArg::External => ModelClass::External,
            ClassArg::Internal => ModelClass::Internal,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Target factor code; the model predicts its overall item.
    #[arg(long)]
    target: String,
    #[arg(long, value_enum, default_value = "external")]
    class: ClassArg,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    trees: usize,
    #[arg(long, default_value_t = 5)]
    min_node_size: usize,
    /// Fixed mtry; cross-validated over the default grid when omitted.
    #[arg(long)]
    mtry: Option<usize>,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Trees per forest during cross-validation.
    #[arg(long)]
    cv_trees: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    forest: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    baseline_samples: usize,
    #[arg(long, default_value_t = 5.0)]
    threshold_step: f64,
    /// Accuracy curve CSV (model against baseline).
    #[arg(long)]
    accuracy_csv: Option<PathBuf>,
}

#[derive(Args)]
struct ImportanceArgs {
    /// Saved forests, one per target.
    #[arg(long = "forest", required = true)]
    forests: Vec<PathBuf>,
    /// Sum item weights into factors using this schema.
    #[arg(long)]
    factors_schema: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Item,
    Factor,
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelArg {
    Code,
    Name,
    None,
}

#[derive(Args)]
struct ChordArgs {
    #[arg(long, env = "LIKERTRF_SCHEMA")]
    schema: PathBuf,
    /// Importance CSV (`predictor,target,weight`).
    #[arg(long)]
    table: PathBuf,
    #[arg(long, value_enum, default_value = "item")]
    level: LevelArg,
    #[arg(long, default_value_t = 1.0)]
    gap: f64,
    #[arg(long, default_value_t = 4.0)]
    group_gap: f64,
    #[arg(long, default_value_t = 0.5)]
    min_render_weight: f64,
    /// Allowed deviation of per-target sums from 100. Defaults to the worst
    /// case for two-decimal weights: 0.005 per entry of the longest target.
    #[arg(long)]
    sum_tolerance: Option<f64>,
    #[arg(long, default_value_t = 800.0)]
    size: f64,
    #[arg(long, value_enum, default_value = "code")]
    labels: LabelArg,
    #[arg(long)]
    out: PathBuf,
    /// Also write the resolved layout as JSON.
    #[arg(long)]
    layout_json: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Disable the continuity correction of the normal approximation.
    #[arg(long)]
    no_continuity: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PdArgs {
    #[arg(long)]
    forest: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    feature: String,
    /// Comma-separated grid; defaults to observed values and the step-25 grid.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TreeArgs {
    #[arg(long)]
    forest: PathBuf,
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Emit Graphviz DOT instead of indented text.
    #[arg(long)]
    dot: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Error::io(p, e))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn read_forest(path: &Path) -> Result<Forest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Forest::from_json(&text).with_context(|| format!("reading forest {}", path.display()))
}

fn ingest(a: IngestArgs) -> Result<()> {
    let schema = load_schema(&a.data.schema)?;
    let ds = parse_responses(&a.data.data, &schema)?;
    let (kept, report) = screen(&ds, a.max_na_fraction)?;
    if let Some(p) = &a.out {
        write_responses(&kept, &schema.id_column, output(Some(p))?)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let schema = load_schema(&a.schema)?;
    let mut spec: SyntheticSpec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(n) = a.n {
        spec.n = n;
    }
    let ds = generate_synthetic(&spec, &schema, a.seed)?;
    write_responses(&ds, &schema.id_column, output(Some(&a.out))?)?;
    Ok(())
}

fn fit(a: FitArgs) -> Result<()> {
    let schema = load_schema(&a.data.schema)?;
    let ds = parse_responses(&a.data.data, &schema)?;
    let protocol = ModelProtocol {
        forest: ForestConfig {
            n_trees: a.trees,
            min_node_size: a.min_node_size,
            ..ForestConfig::default()
        },
        mtry: match a.mtry {
            Some(m) => MtryRule::Fixed(m),
            None => MtryRule::CrossValidated { grid: None, folds: a.folds },
        },
        cv_trees: a.cv_trees,
        class: a.class.into(),
    };
    let model = fit_model(&ds, &schema, &a.target, &protocol, a.seed)?;
    if let Some(cv) = &model.cv {
        log::info!("cv grid {:?} mean rmse {:?} -> mtry {}", cv.grid, cv.mean_rmse, cv.best_mtry);
    }
    let mut w = output(Some(&a.out))?;
    w.write_all(model.forest.to_json()?.as_bytes())?;
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let forest = read_forest(&a.forest)?;
    let schema = load_schema(&a.data.schema)?;
    let ds = parse_responses(&a.data.data, &schema)?;
    let mut cols = forest.predictors.clone();
    cols.push(forest.target.clone());
    let ds = complete_cases(&ds, &cols)?;
    let y = ds.target(&forest.target)?;
    let yhat = forest.predict_dataset(&ds)?;
    let thresholds = threshold_grid(a.threshold_step);
    let metrics = SplitMetrics::compute(&y, &yhat, &thresholds)?;
    let baseline = random_baseline(&y, a.baseline_samples, &thresholds, a.seed)?;
    if let Some(p) = &a.accuracy_csv {
        write_accuracy_csv(&metrics.accuracy_at, &baseline, output(Some(p))?)?;
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "target": forest.target,
            "n": metrics.n,
            "rmse": metrics.rmse,
            "nrmse": metrics.nrmse,
            "mtry": forest.config.mtry,
        }))?
    );
    Ok(())
}

fn importance(a: ImportanceArgs) -> Result<()> {
    let mut models = std::collections::BTreeMap::new();
    for p in &a.forests {
        let f = read_forest(p)?;
        if models.insert(f.target.clone(), f).is_some() {
            return Err(Error::InvalidInput(format!("two forests for one target ({})", p.display())).into());
        }
    }
    let mut table = likertrf::importance::build_importance_table(&models)?;
    if let Some(s) = &a.factors_schema {
        table = aggregate_factors(&table, &load_schema(s)?)?;
    }
    table.write_csv(output(a.out.as_deref())?)?;
    Ok(())
}

fn chord(a: ChordArgs) -> Result<()> {
    let schema = load_schema(&a.schema)?;
    let level = match a.level {
        LevelArg::Item => TableLevel::Item,
        LevelArg::Factor => TableLevel::Factor,
    };
    let file = File::open(&a.table).map_err(|e| Error::io(&a.table, e))?;
    let table = ImportanceTable::read_csv(level, file)?;
    let rounding = || {
        let mut per_target = BTreeMap::<&str, usize>::new();
        for r in table.rows() {
            *per_target.entry(r.target.as_str()).or_default() += 1;
        }
        0.005 * per_target.values().copied().max().unwrap_or(0) as f64 + 1e-9
    };
    let opts = LayoutOptions {
        gap_deg: a.gap,
        group_gap_deg: a.group_gap,
        min_render_weight: a.min_render_weight,
        sum_tolerance: a.sum_tolerance.unwrap_or_else(rounding),
        ..LayoutOptions::default()
    };
    let l = layout(&table, &schema, &opts)?;
    let style = Style {
        size_px: a.size,
        label_mode: match a.labels {
            LabelArg::Code => LabelMode::Code,
            LabelArg::Name => LabelMode::Name,
            LabelArg::None => LabelMode::None,
        },
        ..Style::default()
    };
    output(Some(&a.out))?.write_all(render_svg(&l, &style).as_bytes())?;
    if let Some(p) = &a.layout_json {
        output(Some(p))?.write_all(l.to_json()?.as_bytes())?;
    }
    Ok(())
}

fn stats(a: StatsArgs) -> Result<()> {
    let schema = load_schema(&a.data.schema)?;
    let ds = parse_responses(&a.data.data, &schema)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let items: Vec<String> = schema.item_columns().iter().map(|s| s.to_string()).collect();
    let opts = UTestOptions {
        continuity_correction: !a.no_continuity,
        ..UTestOptions::default()
    };
    let rows = u_test_by_cohort(&ds, &items, &opts, a.alpha)?;
    write_u_test_csv(&rows, output(Some(&a.out_dir.join("u_test.csv")))?)?;
    let mut numeric = items;
    numeric.extend(schema.auxiliary.iter().filter(|c| ds.has_feature(c)).cloned());
    let corr = pearson_matrix(&ds, &numeric)?;
    corr.write_csv(output(Some(&a.out_dir.join("correlations.csv")))?)?;
    let desc = numeric.iter().map(|c| describe(&ds, c)).collect::<likertrf::Result<Vec<_>>>()?;
    output(Some(&a.out_dir.join("descriptives.json")))?.write_all(serde_json::to_string_pretty(&desc)?.as_bytes())?;
    Ok(())
}

fn pd(a: PdArgs) -> Result<()> {
    let forest = read_forest(&a.forest)?;
    let schema = load_schema(&a.data.schema)?;
    let ds = parse_responses(&a.data.data, &schema)?;
    let ds = complete_cases(&ds, &forest.predictors)?;
    let curve = partial_dependence(&forest, &ds, &a.feature, a.grid.as_deref())?;
    curve.write_csv(output(a.out.as_deref())?)?;
    Ok(())
}

fn tree(a: TreeArgs) -> Result<()> {
    let forest = read_forest(&a.forest)?;
    let t = forest.trees.get(a.index).ok_or_else(|| {
        Error::InvalidInput(format!("tree {} of {}", a.index, forest.trees.len()))
    })?;
    let text = if a.dot {
        export_tree_dot(t, &forest.predictors)
    } else {
        export_tree(t, &forest.predictors)
    };
    print!("{text}");
    Ok(())
}

fn run(a: RunArgs, workers: Option<usize>) -> Result<()> {
    let (cfg, text) = RunConfig::load(&a.config)?;
    let out = a.out.unwrap_or_else(|| cfg.output_dir.clone());
    let manifest = run_with_workers(&cfg, &text, &out, workers)?;
    println!(
        "wrote {} artifacts to {} (config {})",
        manifest.artifacts.len(),
        out.display(),
        &manifest.config_sha256[..12]
    );
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let kind = err.chain().find_map(|e| e.downcast_ref::<Error>()).map(Error::kind);
    match kind {
        Some(ErrorKind::Config) => 2,
        Some(ErrorKind::Data) => 3,
        Some(ErrorKind::Model) => 4,
        // I/O outside the library and serialization failures
        None => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let workers = cli.workers;
    let result = match cli.command {
        Command::Run(a) => run(a, workers),
        other => {
            let job = move || match other {
                Command::Ingest(a) => ingest(a),
                Command::Synth(a) => synth(a),
                Command::Fit(a) => fit(a),
                Command::Evaluate(a) => evaluate(a),
                Command::Importance(a) => importance(a),
                Command::Chord(a) => chord(a),
                Command::Stats(a) => stats(a),
                Command::Pd(a) => pd(a),
                Command::Tree(a) => tree(a),
                Command::Run(_) => unreachable!(),
            };
            match workers {
                Some(n) => rayon::ThreadPoolBuilder::new()
                    .num_threads(n.max(1))
                    .build()
                    .map_err(anyhow::Error::from)
                    .and_then(|pool| pool.install(job)),
                None => job(),
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
