//! Acceptance suite. Each criterion runs in sequence under its runtime
//! limit and prints one PASS/FAIL line; the process fails if any does.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use likertrf::chord::{layout, render_svg, LayoutOptions, Style};
use likertrf::evaluate::{nrmse, rmse, threshold_accuracy, threshold_grid, EvaluationReport};
use likertrf::explain::{partial_dependence_matrix, per_tree_partial_dependence};
use likertrf::forest::{best_split, Node, NodeSplit};
use likertrf::importance::{
    aggregate_factors, build_importance_table, fit_models, segment_importance, ImportanceRow,
    ImportanceTable, SegmentTables, TableLevel, SUM_TOLERANCE,
};
use likertrf::pipeline::{evaluate_model, prepare, synthetic_data, Manifest, RunConfig};
use likertrf::rng::{derive_seed, tag};
use likertrf::stats::{mann_whitney_u, UTestMethod, UTestOptions};
use likertrf::synth::{snap, SyntheticSpec};
use likertrf::{
    generate_synthetic, load_schema, ConstructSchema, Error, ErrorKind, Forest, ForestConfig,
    ModelClass, RegressionTree,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn workspace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config_path() -> PathBuf {
    workspace().join("configs/synthetic.toml")
}

fn schema() -> ConstructSchema {
    load_schema(workspace().join("configs/sav.schema")).unwrap()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// 1 -----------------------------------------------------------------------

fn metric_exactness() -> Outcome {
    let mut r = rng(1);
    let mut checks = 0;
    for case in 0..40 {
        let n = r.random_range(1..=12);
        let y: Vec<f64> = (0..n).map(|_| r.random_range(-100..=100) as f64).collect();
        let yhat: Vec<f64> = (0..n).map(|_| r.random_range(-100.0..=100.0)).collect();
        let mut ss = 0.0;
        for i in 0..n {
            let d = yhat[i] - y[i];
            ss += d * d;
        }
        let want_rmse = (ss / n as f64).sqrt();
        let got = rmse(&y, &yhat).map_err(|e| e.to_string())?;
        ensure((got - want_rmse).abs() <= 1e-12, || format!("case {case}: rmse {got} vs {want_rmse}"))?;

        let (lo, hi) = y.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        match nrmse(&y, &yhat) {
            Ok(v) => {
                ensure((v - want_rmse / (hi - lo)).abs() <= 1e-12, || format!("case {case}: nrmse {v}"))?;
                ensure((v * (hi - lo) - got).abs() <= 1e-12, || format!("case {case}: nrmse*range != rmse"))?;
            }
            Err(_) => ensure(hi == lo, || format!("case {case}: nrmse failed on a non-constant target"))?,
        }
        for t in [0.0, 5.0, 25.0, 50.0, 100.0, 200.0] {
            let want = (0..n).filter(|&i| (yhat[i] - y[i]).abs() <= t).count() as f64 / n as f64;
            let got = threshold_accuracy(&y, &yhat, t).map_err(|e| e.to_string())?;
            ensure((got - want).abs() <= 1e-12, || format!("case {case}: accuracy at {t}: {got} vs {want}"))?;
        }
        checks += 1;
    }
    Ok(format!("{checks} random vectors"))
}

// 2 -----------------------------------------------------------------------

fn sse(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum()
}

/// Exhaustive search with direct SSE evaluation: (feature, threshold, decrease).
fn oracle_split(x: &[Vec<f64>], y: &[f64], rows: &[usize], min_leaf: usize) -> Option<(usize, f64, f64)> {
    let parent: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    let parent_sse = sse(&parent);
    let mut best: Option<(usize, f64, f64)> = None;
    for (j, col) in x.iter().enumerate() {
        let mut vals: Vec<f64> = rows.iter().map(|&i| col[i]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let thr = (w[0] + w[1]) / 2.0;
            let left: Vec<f64> = rows.iter().filter(|&&i| col[i] <= thr).map(|&i| y[i]).collect();
            let right: Vec<f64> = rows.iter().filter(|&&i| col[i] > thr).map(|&i| y[i]).collect();
            if left.len() < min_leaf || right.len() < min_leaf {
                continue;
            }
            let dec = parent_sse - sse(&left) - sse(&right);
            if best.is_none_or(|b| dec > b.2) {
                best = Some((j, thr, dec));
            }
        }
    }
    best.filter(|b| b.2 > 1e-12 * parent_sse.max(1.0))
}

fn split_oracle() -> Outcome {
    let mut r = rng(2);
    let mut ties = 0;
    for case in 0..100 {
        let n = r.random_range(2..=12);
        let p = r.random_range(1..=4);
        let x: Vec<Vec<f64>> = (0..p)
            .map(|_| (0..n).map(|_| (r.random_range(-4..=4) * 25) as f64).collect())
            .collect();
        let y: Vec<f64> = (0..n).map(|_| (r.random_range(-4..=4) * 25) as f64).collect();
        // bootstrap-style rows with repeats
        let rows: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
        let min_leaf = r.random_range(1..=3);
        let features: Vec<usize> = (0..p).collect();
        let got = best_split(&x, &y, &rows, &features, min_leaf);
        let want = oracle_split(&x, &y, &rows, min_leaf);
        match (got, want) {
            (None, None) => {}
            (Some(g), Some((f, t, d))) => {
                ensure((g.sse_decrease - d).abs() <= 1e-9 * d.max(1.0), || {
                    format!("case {case}: decrease {} vs oracle {d}", g.sse_decrease)
                })?;
                if (g.feature, g.threshold) != (f, t) {
                    ties += 1;
                    // only acceptable if the oracle rates both choices equal
                    let col = &x[g.feature];
                    let left: Vec<f64> = rows.iter().filter(|&&i| col[i] <= g.threshold).map(|&i| y[i]).collect();
                    let right: Vec<f64> = rows.iter().filter(|&&i| col[i] > g.threshold).map(|&i| y[i]).collect();
                    let parent: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
                    let alt = sse(&parent) - sse(&left) - sse(&right);
                    ensure((alt - d).abs() <= 1e-9 * d.max(1.0), || {
                        format!("case {case}: split ({}, {}) vs oracle ({f}, {t})", g.feature, g.threshold)
                    })?;
                }
            }
            (g, w) => return Err(format!("case {case}: best_split {g:?} vs oracle {w:?}")),
        }
    }
    Ok(format!("100 tables, {ties} floating-point ties"))
}

// 3, 4, 5 -----------------------------------------------------------------

struct Fitted {
    reports: Vec<EvaluationReport>,
    tables: BTreeMap<ModelClass, ImportanceTable>,
}

fn fit_and_evaluate(cfg: &RunConfig, schema: &ConstructSchema, data: &likertrf::Dataset) -> Result<Fitted, String> {
    let md = prepare(cfg, schema, data).map_err(|e| e.to_string())?;
    let thresholds = threshold_grid(cfg.threshold_step);
    let mut reports = Vec::new();
    let mut tables = BTreeMap::new();
    for (ci, class) in [ModelClass::External, ModelClass::Internal].into_iter().enumerate() {
        let seed = derive_seed(cfg.seed, &[tag::FIT, ci as u64]);
        let models = fit_models(&md.train, schema, &cfg.protocol(class), seed).map_err(|e| e.to_string())?;
        for (ti, m) in models.values().enumerate() {
            let seed = derive_seed(cfg.seed, &[tag::BASELINE, ci as u64, ti as u64]);
            let rep = evaluate_model(m, &md.train, &md.test, class, &thresholds, cfg.baseline_samples, seed)
                .map_err(|e| e.to_string())?;
            reports.push(rep);
        }
        let forests = models.into_iter().map(|(t, m)| (t, m.forest)).collect();
        tables.insert(class, build_importance_table(&forests).map_err(|e| e.to_string())?);
    }
    Ok(Fitted { reports, tables })
}

fn bundled() -> (RunConfig, ConstructSchema, likertrf::Dataset) {
    let (cfg, _) = RunConfig::load(config_path()).unwrap();
    let s = schema();
    let data = synthetic_data(&cfg, &s).unwrap().unwrap();
    (cfg, s, data)
}

fn baseline_dominance(store: &mut Option<Fitted>) -> Outcome {
    let (cfg, s, data) = bundled();
    let fitted = &*store.insert(fit_and_evaluate(&cfg, &s, &data)?);
    let mut worst_margin = f64::MAX;
    let mut nrmse_range = (f64::MAX, f64::MIN);
    for rep in &fitted.reports {
        for t in [25.0, 50.0, 75.0, 100.0] {
            let acc = rep.test.accuracy(t).ok_or("missing threshold")?;
            let (m, sd) = rep.baseline.at(t).ok_or("missing baseline threshold")?;
            worst_margin = worst_margin.min(acc - (m + sd));
            ensure(acc > m + sd, || {
                format!("{:?} {} at t={t}: accuracy {acc:.3} <= baseline {m:.3} + {sd:.3}", rep.class, rep.target)
            })?;
        }
        let v = rep.nrmse_test();
        nrmse_range = (nrmse_range.0.min(v), nrmse_range.1.max(v));
        ensure((0.05..=0.25).contains(&v), || format!("{:?} {}: held-out NRMSE {v:.4}", rep.class, rep.target))?;
    }
    let n_test = fitted.reports[0].test.n;
    Ok(format!(
        "{} models, n_test={n_test}, min margin over mean+sd {worst_margin:.3}, NRMSE {:.3}..{:.3}",
        fitted.reports.len(),
        nrmse_range.0,
        nrmse_range.1
    ))
}

fn negative_control() -> Outcome {
    let (mut cfg, s, _) = bundled();
    cfg.synthetic = Some(SyntheticSpec::zero_signal(284));
    let data = synthetic_data(&cfg, &s).unwrap().unwrap();
    let fitted = fit_and_evaluate(&cfg, &s, &data)?;
    let mut worst = 0.0f64;
    for rep in &fitted.reports {
        let acc = rep.test.accuracy(25.0).ok_or("missing threshold")?;
        let (m, sd) = rep.baseline.at(25.0).ok_or("missing baseline")?;
        let z = (acc - m) / sd;
        worst = worst.max(z.abs());
        ensure(z.abs() <= 3.0, || {
            format!("{:?} {}: accuracy {acc:.3} vs baseline {m:.3} ± {sd:.3}", rep.class, rep.target)
        })?;
    }
    Ok(format!("{} models, max |z| at t=25 = {worst:.2}", fitted.reports.len()))
}

/// Sums in hundredths, exact for two-decimal inputs.
fn hundredths(t: &ImportanceTable) -> BTreeMap<String, i64> {
    let mut out = BTreeMap::new();
    for r in t.rows() {
        *out.entry(r.target.clone()).or_insert(0) += (r.weight * 100.0).round() as i64;
    }
    out
}

fn importance_bookkeeping(store: &Option<Fitted>) -> Outcome {
    let s = schema();
    let fitted = store.as_ref().ok_or("criterion 3 produced no tables")?;
    let mut n_tables = 0;
    for t in fitted.tables.values() {
        t.validate(SUM_TOLERANCE).map_err(|e| e.to_string())?;
        let agg = aggregate_factors(t, &s).map_err(|e| e.to_string())?;
        agg.validate(SUM_TOLERANCE).map_err(|e| e.to_string())?;
        let before: f64 = t.rows().iter().map(|r| r.weight).sum();
        let after: f64 = agg.rows().iter().map(|r| r.weight).sum();
        ensure((before - after).abs() < 1e-9, || format!("aggregation changed total {before} -> {after}"))?;
        for (target, sum) in t.target_sums() {
            let ft = s.factor_of_item(&target).map(|f| f.code.clone()).unwrap_or(target.clone());
            let agg_sum = agg.target_sums()[&ft];
            ensure((sum - agg_sum).abs() < 1e-9, || format!("{target}: {sum} vs {agg_sum}"))?;
        }
        n_tables += 2;
    }

    let csv = std::fs::read_to_string(workspace().join("crates/core/tests/fixtures/factor_importance.csv"))
        .map_err(|e| e.to_string())?;
    let published = ImportanceTable::read_csv(TableLevel::Factor, csv.as_bytes()).map_err(|e| e.to_string())?;
    ensure(published.len() == 31, || format!("{} published rows", published.len()))?;
    let sums = hundredths(&published);
    let bi: Vec<i64> = ["A", "PR", "PU", "T", "PEOU", "PO"]
        .iter()
        .map(|p| (published.weight(p, "BI").unwrap() * 100.0).round() as i64)
        .collect();
    ensure(bi == [6194, 1185, 954, 860, 775, 32], || format!("BI column {bi:?}"))?;
    // The published PR column (34.59 + 12.30 + 0.96 + 19.27 + 32.87) adds
    // to 99.99; the other five add to exactly 100.00.
    let expected: BTreeMap<String, i64> = [("A", 10000), ("BI", 10000), ("PEOU", 10000), ("PR", 9999), ("PU", 10000), ("T", 10000)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    ensure(sums == expected, || format!("published sums {sums:?}"))?;
    for (target, sum) in published.target_sums() {
        let exact = sums[&target] as f64 / 100.0;
        ensure((sum - exact).abs() < 1e-9, || format!("{target}: float sum {sum} vs {exact}"))?;
    }
    Ok(format!(
        "{n_tables} generated tables sum to 100; published table: 5 targets at 100.00, PR at 99.99 as printed"
    ))
}

// 6 -----------------------------------------------------------------------

fn u_of(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    for x in a {
        for y in b {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    u
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..n).filter(|i| m & (1 << i) != 0).collect())
        .collect()
}

fn u_test_exactness() -> Outcome {
    let opts = UTestOptions::default();
    let mut exact_cases = 0;
    for n in 2..=8usize {
        for n1 in 1..n {
            let n2 = n - n1;
            let all = subsets(n, n1);
            let split_u = |idx: &Vec<usize>| {
                let a: Vec<f64> = idx.iter().map(|&i| i as f64).collect();
                let b: Vec<f64> = (0..n).filter(|i| !idx.contains(i)).map(|i| i as f64).collect();
                (a, b)
            };
            let null_u: Vec<f64> = all.iter().map(|idx| {
                let (a, b) = split_u(idx);
                u_of(&a, &b)
            }).collect();
            for idx in &all {
                let (a, b) = split_u(idx);
                let u_obs = u_of(&a, &b);
                let u_min = u_obs.min((n1 * n2) as f64 - u_obs);
                let lower = null_u.iter().filter(|&&u| u <= u_min).count() as f64;
                let want = (2.0 * lower / all.len() as f64).min(1.0);
                let got = mann_whitney_u(&a, &b, &opts).map_err(|e| e.to_string())?;
                ensure(got.method == UTestMethod::Exact, || format!("({n1},{n2}) not exact"))?;
                ensure((got.p_value - want).abs() <= 1e-12, || {
                    format!("({n1},{n2}) {a:?} vs {b:?}: p {} vs oracle {want}", got.p_value)
                })?;
                exact_cases += 1;
            }
        }
    }

    let cases = [
        (20, 25, 0.0), (30, 30, 10.0), (40, 35, 20.0), (25, 60, 5.0), (50, 50, 15.0),
        (33, 47, 30.0), (60, 40, 0.0), (45, 45, 25.0), (28, 52, 12.0), (38, 38, 40.0),
    ];
    let mut r = rng(6);
    let mut worst = 0.0f64;
    for (k, &(n1, n2, shift)) in cases.iter().enumerate() {
        let draw = |r: &mut ChaCha8Rng, mu: f64, n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let z: f64 = r.sample(rand_distr::StandardNormal);
                    f64::from(snap(mu + 50.0 * z))
                })
                .collect()
        };
        let a = draw(&mut r, 0.0, n1);
        let b = draw(&mut r, shift, n2);
        let got = mann_whitney_u(&a, &b, &opts).map_err(|e| e.to_string())?;
        ensure(got.method == UTestMethod::NormalApprox, || format!("case {k} not approximate"))?;
        let mut pooled: Vec<f64> = a.iter().chain(&b).copied().collect();
        let centre = (n1 * n2) as f64 / 2.0;
        let dev_obs = (u_of(&a, &b) - centre).abs();
        let mut hits = 0u32;
        let reps = 100_000;
        for _ in 0..reps {
            pooled.shuffle(&mut r);
            let (pa, pb) = pooled.split_at(n1);
            if (u_of(pa, pb) - centre).abs() >= dev_obs - 1e-9 {
                hits += 1;
            }
        }
        let mc = f64::from(hits) / reps as f64;
        worst = worst.max((got.p_value - mc).abs());
        ensure((got.p_value - mc).abs() <= 0.01, || {
            format!("case {k} ({n1},{n2}): approx p {:.4} vs Monte Carlo {mc:.4}", got.p_value)
        })?;
    }
    Ok(format!("{exact_cases} exact configurations; 10 approximate cases, max |Δp| = {worst:.4}"))
}

// 7 -----------------------------------------------------------------------

fn partial_dependence_checks() -> Outcome {
    let s = schema();
    let data = generate_synthetic(&SyntheticSpec { missing_rate: 0.0, ..SyntheticSpec::default() }, &s, 7)
        .map_err(|e| e.to_string())?;
    let preds = s.predictors("BI", ModelClass::External).map_err(|e| e.to_string())?;
    let x = data.matrix(&preds).map_err(|e| e.to_string())?;
    let y = data.target("BI4").map_err(|e| e.to_string())?;
    let cfg = ForestConfig { n_trees: 60, mtry: 10, seed: 7, ..ForestConfig::default() };
    let f = Forest::fit(&x, &y, "BI4", &cfg).map_err(|e| e.to_string())?;
    let pd = partial_dependence_matrix(&f, &x, "A3", None).map_err(|e| e.to_string())?;
    let per_tree = per_tree_partial_dependence(&f, &x, "A3", &pd.grid).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (g, v) in pd.values.iter().enumerate() {
        let mean = per_tree.iter().map(|c| c[g]).sum::<f64>() / per_tree.len() as f64;
        worst = worst.max((mean - v).abs());
    }
    ensure(worst <= 1e-9, || format!("forest PD differs from mean tree PD by {worst}"))?;

    let flat_y = vec![42.0; y.len()];
    let flat = Forest::fit(&x, &flat_y, "BI4", &ForestConfig { n_trees: 10, ..cfg.clone() }).map_err(|e| e.to_string())?;
    let c = partial_dependence_matrix(&flat, &x, "A3", None).map_err(|e| e.to_string())?;
    ensure(c.values.iter().all(|&v| (v - 42.0).abs() < 1e-12), || "constant model PD not flat".into())?;

    // one split at 0 with leaf means -10 | 30, averaged over four rows
    let stump = RegressionTree::from_nodes(vec![
        Node { value: 10.0, n_samples: 4, split: Some(NodeSplit { feature: 0, threshold: 0.0, left: 1, right: 2, sse_decrease: 1.0 }) },
        Node::leaf(-10.0, 2),
        Node::leaf(30.0, 2),
    ])
    .map_err(|e| e.to_string())?;
    let sf = Forest::from_trees("y", vec!["f".into(), "g".into()], vec![stump]).map_err(|e| e.to_string())?;
    let table = likertrf::schema::FeatureMatrix::new(
        vec!["f".into(), "g".into()],
        vec![vec![-50.0, -25.0, 25.0, 50.0], vec![1.0, 2.0, 3.0, 4.0]],
    )
    .map_err(|e| e.to_string())?;
    let step = partial_dependence_matrix(&sf, &table, "f", Some(&[-25.0, 0.0, 25.0])).map_err(|e| e.to_string())?;
    ensure(step.values == [-10.0, -10.0, 30.0], || format!("step curve {:?}", step.values))?;
    let g = partial_dependence_matrix(&sf, &table, "g", Some(&[0.0, 5.0])).map_err(|e| e.to_string())?;
    ensure(g.values == [10.0, 10.0], || format!("unused feature curve {:?}", g.values))?;
    Ok(format!("{} grid points, max |forest - mean tree| = {worst:.1e}", pd.grid.len()))
}

// 8 -----------------------------------------------------------------------

fn random_factor_table(r: &mut ChaCha8Rng) -> ImportanceTable {
    let codes = ["PR", "T", "PU", "PEOU", "A", "BI", "PO"];
    let mut rows = Vec::new();
    for t in &codes[..6] {
        let preds: Vec<&str> = codes.iter().filter(|c| *c != t && **c != "BI").copied().collect();
        let raw: Vec<f64> = preds.iter().map(|_| r.random_range(0.01..10.0)).collect();
        let total: f64 = raw.iter().sum();
        rows.extend(preds.iter().zip(&raw).map(|(p, w)| ImportanceRow {
            predictor: p.to_string(),
            target: t.to_string(),
            weight: w * 100.0 / total,
        }));
    }
    ImportanceTable::new(TableLevel::Factor, rows).unwrap()
}

fn chord_geometry() -> Outcome {
    let s = schema();
    let csv = std::fs::read_to_string(workspace().join("crates/core/tests/fixtures/factor_importance.csv"))
        .map_err(|e| e.to_string())?;
    let published = ImportanceTable::read_csv(TableLevel::Factor, csv.as_bytes()).map_err(|e| e.to_string())?;
    // rounded to two decimals per entry, six entries per target
    let published_opts = LayoutOptions { sum_tolerance: 0.03, ..LayoutOptions::default() };
    let mut r = rng(8);
    let mut tables: Vec<(ImportanceTable, LayoutOptions)> = vec![(published.clone(), published_opts.clone())];
    for _ in 0..50 {
        tables.push((random_factor_table(&mut r), LayoutOptions { min_render_weight: 0.0, ..LayoutOptions::default() }));
    }
    let mut worst = 0.0f64;
    for (k, (t, opts)) in tables.iter().enumerate() {
        let l = layout(t, &s, opts).map_err(|e| e.to_string())?;
        for (i, n) in l.nodes.iter().enumerate() {
            let sum: f64 = l.incident_spans(i).iter().sum();
            worst = worst.max((sum - n.span()).abs());
        }
        let total: f64 = l.nodes.iter().map(|n| n.span()).sum::<f64>()
            + l.nodes.windows(2).map(|w| w[1].arc_start - w[0].arc_end).sum::<f64>()
            + (l.nodes[0].arc_start + 360.0 - l.nodes.last().unwrap().arc_end);
        ensure((total - 360.0).abs() <= 1e-6, || format!("table {k}: arcs and gaps cover {total}"))?;
        let all: Vec<_> = l.ribbons.iter().chain(&l.suppressed).collect();
        for a in &all {
            for b in &all {
                if a.target == b.target && a.weight > b.weight {
                    ensure(a.target_arc[1] - a.target_arc[0] > b.target_arc[1] - b.target_arc[0], || {
                        format!("table {k}: heavier ribbon is not wider")
                    })?;
                }
            }
        }
        let mut rows = t.rows().to_vec();
        rows.shuffle(&mut r);
        let shuffled = ImportanceTable::new(t.level, rows).map_err(|e| e.to_string())?;
        ensure(layout(&shuffled, &s, opts).map_err(|e| e.to_string())? == l, || format!("table {k}: row order changed the layout"))?;
    }
    ensure(worst <= 1e-6, || format!("mass conservation off by {worst}°"))?;

    let l = layout(&published, &s, &published_opts).map_err(|e| e.to_string())?;
    let svg = render_svg(&l, &Style::default());
    let golden = std::fs::read_to_string(workspace().join("crates/core/tests/golden/factor_importance.svg"))
        .map_err(|e| e.to_string())?;
    ensure(svg == golden, || "published factor table SVG differs from the golden file".into())?;
    Ok(format!("{} tables, max mass error {worst:.1e}°, golden SVG identical ({} bytes)", tables.len(), svg.len()))
}

// 9 -----------------------------------------------------------------------

fn run_cli(workers: usize, out: &Path) -> Result<Manifest, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_likertrf"))
        .args(["--workers", &workers.to_string(), "run", "--config"])
        .arg(config_path())
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(status.status.success(), || {
        format!("run with {workers} workers failed: {}", String::from_utf8_lossy(&status.stderr))
    })?;
    let text = std::fs::read_to_string(out.join("manifest.json")).map_err(|e| e.to_string())?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn end_to_end_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let one = run_cli(1, &dir.path().join("w1"))?;
    let eight = run_cli(8, &dir.path().join("w8"))?;
    ensure(one == eight, || {
        let diff: Vec<&String> = one
            .artifacts
            .iter()
            .filter(|(k, v)| eight.artifacts.get(*k) != Some(*v))
            .map(|(k, _)| k)
            .collect();
        format!("manifests differ: {diff:?}")
    })?;
    let count = |prefix: &str| one.artifacts.keys().filter(|k| k.starts_with(prefix) && k.ends_with(".json")).count();
    let svgs = one.artifacts.keys().filter(|k| k.ends_with(".svg")).count();
    ensure(count("reports/external/") == 6 && count("reports/internal/") == 6 && svgs >= 3, || {
        format!("bundle has {} external, {} internal reports, {svgs} SVGs", count("reports/external/"), count("reports/internal/"))
    })?;
    Ok(format!("{} artifacts identical for 1 and 8 workers", one.artifacts.len()))
}

// 10 ----------------------------------------------------------------------

fn segmentation() -> Outcome {
    let (cfg, s, data) = bundled();
    let md = prepare(&cfg, &s, &data).map_err(|e| e.to_string())?;
    let protocol = cfg.protocol(ModelClass::External);
    let SegmentTables { adopters, non_adopters, n_adopters, n_non_adopters } =
        segment_importance(&md.complete, &s, &protocol, cfg.segment_min_size, 10).map_err(|e| e.to_string())?;
    let share = n_adopters as f64 / (n_adopters + n_non_adopters) as f64;
    ensure((0.80..=0.93).contains(&share), || format!("adopter share {share:.3}"))?;
    for (name, t) in [("adopters", &adopters), ("non-adopters", &non_adopters)] {
        t.validate(SUM_TOLERANCE).map_err(|e| format!("{name}: {e}"))?;
        ensure(t.targets().len() == 6, || format!("{name}: {} targets", t.targets().len()))?;
        let agg = aggregate_factors(t, &s).map_err(|e| e.to_string())?;
        agg.validate(SUM_TOLERANCE).map_err(|e| format!("{name} factors: {e}"))?;
        layout(&agg, &s, &LayoutOptions::default()).map_err(|e| format!("{name} layout: {e}"))?;
    }
    let err = segment_importance(&md.complete, &s, &protocol, n_non_adopters + 1, 10)
        .err()
        .ok_or("segment below the minimum was accepted")?;
    ensure(matches!(err, Error::SegmentTooSmall { .. }) && err.kind() == ErrorKind::Model, || {
        format!("unexpected error {err}")
    })?;
    Ok(format!("segments {n_adopters}/{n_non_adopters}; undersized segment rejected: {err}"))
}

// -------------------------------------------------------------------------

fn main() {
    let mut fitted = None;
    let criteria: Vec<(&str, Duration, Box<dyn FnOnce(&mut Option<Fitted>) -> Outcome>)> = vec![
        ("metric exactness", Duration::from_secs(1), Box::new(|_| metric_exactness())),
        ("split-oracle equivalence", Duration::from_secs(5), Box::new(|_| split_oracle())),
        ("baseline dominance", Duration::from_secs(120), Box::new(baseline_dominance)),
        ("negative control", Duration::from_secs(120), Box::new(|_| negative_control())),
        ("importance bookkeeping", Duration::from_secs(60), Box::new(|f| importance_bookkeeping(f))),
        ("U-test exactness", Duration::from_secs(30), Box::new(|_| u_test_exactness())),
        ("partial dependence", Duration::from_secs(10), Box::new(|_| partial_dependence_checks())),
        ("chord geometry", Duration::from_secs(5), Box::new(|_| chord_geometry())),
        ("end-to-end determinism", Duration::from_secs(300), Box::new(|_| end_to_end_determinism())),
        ("segmentation pipeline", Duration::from_secs(180), Box::new(|_| segmentation())),
    ];
    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = run(&mut fitted);
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|d| {
            if elapsed <= limit {
                Ok(d)
            } else {
                Err(format!("{d}; took {elapsed:.1?}, limit {limit:?}"))
            }
        });
        match outcome {
            Ok(d) => println!("PASS criterion {:>2} {name} ({elapsed:.2?} of {limit:?}): {d}", i + 1),
            Err(e) => {
                failed += 1;
                println!("FAIL criterion {:>2} {name} ({elapsed:.2?} of {limit:?}): {e}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 10 criteria failed");
        std::process::exit(1);
    }
    println!("all 10 criteria passed");
}
