//! Mann-Whitney U test, Pearson correlation matrix and per-column
//! descriptive summaries.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::schema::{Cohort, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UTestMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UTestOptions {
    /// Exact enumeration is used when `n1 + n2 <= exact_cutoff` and the
    /// pooled sample has no ties.
    pub exact_cutoff: usize,
    pub continuity_correction: bool,
}

impl Default for UTestOptions {
    fn default() -> Self {
        UTestOptions {
            exact_cutoff: 30,
            continuity_correction: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UTestResult {
    /// `min(U_a, U_b)`.
    pub u_statistic: f64,
    /// Pairs `(x in a, y in b)` with `x > y`, ties counting one half.
    pub u_a: f64,
    /// Two-sided.
    pub p_value: f64,
    pub method: UTestMethod,
    pub n1: usize,
    pub n2: usize,
}

/// Midranks (1-based) of `values` and the tie-group sizes.
fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

/// Counts of `U = 0..=m*n` over all `C(m+n, m)` equally likely
/// assignments, via `f(m,n,u) = f(m-1,n,u-n) + f(m,n-1,u)`.
fn exact_u_counts(m: usize, n: usize) -> Vec<f64> {
    // table[i][j] = distribution for sizes (i, j)
    let mut table: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); n + 1]; m + 1];
    for i in 0..=m {
        for j in 0..=n {
            if i == 0 || j == 0 {
                table[i][j] = vec![1.0];
                continue;
            }
            let mut d = vec![0.0; i * j + 1];
            for (u, &c) in table[i - 1][j].iter().enumerate() {
                d[u + j] += c;
            }
            for (u, &c) in table[i][j - 1].iter().enumerate() {
                d[u] += c;
            }
            table[i][j] = d;
        }
    }
    std::mem::take(&mut table[m][n])
}

pub fn mann_whitney_u(a: &[f64], b: &[f64], opts: &UTestOptions) -> Result<UTestResult> {
    let (n1, n2) = (a.len(), b.len());
    if n1 == 0 || n2 == 0 {
        return Err(Error::InvalidInput("Mann-Whitney U needs two non-empty groups".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("NaN in Mann-Whitney input".into()));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let rank_sum_a: f64 = ranks[..n1].iter().sum();
    let u_a = rank_sum_a - (n1 * (n1 + 1)) as f64 / 2.0;
    let nn = (n1 * n2) as f64;
    let u_b = nn - u_a;
    let u = u_a.min(u_b);
    let n = (n1 + n2) as f64;

    let (p_value, method) = if ties.is_empty() && n1 + n2 <= opts.exact_cutoff {
        let counts = exact_u_counts(n1, n2);
        let total: f64 = counts.iter().sum();
        let u_int = u.round() as usize;
        let lower: f64 = counts[..=u_int].iter().sum();
        ((2.0 * lower / total).min(1.0), UTestMethod::Exact)
    } else {
        let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0));
        let var = nn / 12.0 * ((n + 1.0) - tie_term);
        let p = if var <= 0.0 {
            1.0
        } else {
            let mut dev = (u_a - nn / 2.0).abs();
            if opts.continuity_correction {
                dev -= 0.5;
            }
            let z = dev / var.sqrt();
            erfc(z / std::f64::consts::SQRT_2).min(1.0)
        };
        (p, UTestMethod::NormalApprox)
    };
    Ok(UTestResult {
        u_statistic: u,
        u_a,
        p_value: p_value.max(f64::MIN_POSITIVE),
        method,
        n1,
        n2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UTestRow {
    pub item: String,
    pub result: UTestResult,
    pub passed: bool,
}

/// Control vs psychological-ownership cohort comparison per item; rows
/// missing the item or the cohort are skipped. `passed` is `p < alpha`.
pub fn u_test_by_cohort(
    ds: &Dataset,
    items: &[String],
    opts: &UTestOptions,
    alpha: f64,
) -> Result<Vec<UTestRow>> {
    items
        .iter()
        .map(|item| {
            let values = ds.feature_values(item)?;
            let (mut control, mut treated) = (Vec::new(), Vec::new());
            for (v, r) in values.iter().zip(&ds.rows) {
                match (v, r.cohort) {
                    (Some(v), Some(Cohort::Control)) => control.push(*v),
                    (Some(v), Some(Cohort::PsychOwnership)) => treated.push(*v),
                    _ => {}
                }
            }
            let result = mann_whitney_u(&control, &treated, opts)
                .map_err(|e| Error::InvalidInput(format!("item `{item}`: {e}")))?;
            Ok(UTestRow {
                item: item.clone(),
                passed: result.p_value < alpha,
                result,
            })
        })
        .collect()
}

/// `item,p_value,passed`.
pub fn write_u_test_csv<W: Write>(rows: &[UTestRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["item", "p_value", "passed"])?;
    for r in rows {
        w.write_record([
            r.item.clone(),
            format!("{:.4}", r.result.p_value),
            r.passed.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub columns: Vec<String>,
    /// `None` where fewer than two paired rows exist or a column is constant.
    pub values: Vec<Vec<Option<f64>>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.columns.iter().position(|c| c == a)?;
        let j = self.columns.iter().position(|c| c == b)?;
        self.values[i][j]
    }

    /// Square CSV with a `column` header cell; `NA` marks undefined entries.
    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        let mut text = format!("column,{}\n", self.columns.join(","));
        for (name, row) in self.columns.iter().zip(&self.values) {
            let cells: Vec<String> = row.iter().map(|v| v.map_or("NA".into(), |r| format!("{r:.4}"))).collect();
            text.push_str(&format!("{name},{}\n", cells.join(",")));
        }
        writer.write_all(text.as_bytes()).map_err(|e| Error::io("<csv>", e))
    }
}

fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pairwise-deletion Pearson correlations.
pub fn pearson_matrix(ds: &Dataset, columns: &[String]) -> Result<CorrelationMatrix> {
    let data: Vec<Vec<Option<f64>>> = columns
        .iter()
        .map(|c| ds.feature_values(c))
        .collect::<Result<_>>()?;
    let k = columns.len();
    let mut values = vec![vec![None; k]; k];
    for i in 0..k {
        for j in i..k {
            let pairs: Vec<(f64, f64)> = data[i]
                .iter()
                .zip(&data[j])
                .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
                .collect();
            let r = if i == j {
                pearson(&pairs).map(|_| 1.0)
            } else {
                pearson(&pairs)
            };
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        columns: columns.to_vec(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub center: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Description {
    pub column: String,
    pub n: usize,
    pub n_missing: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation; `None` below two values.
    pub sd: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub histogram: Vec<HistogramBin>,
}

impl Description {
    /// Centers of bins that are local maxima holding at least
    /// `min_share` of the observations.
    pub fn modes(&self, min_share: f64) -> Vec<f64> {
        let c: Vec<usize> = self.histogram.iter().map(|b| b.count).collect();
        let floor = min_share * self.n as f64;
        (0..c.len())
            .filter(|&i| {
                let left = if i == 0 { 0 } else { c[i - 1] };
                let right = c.get(i + 1).copied().unwrap_or(0);
                c[i] > 0 && c[i] as f64 >= floor && c[i] > left && c[i] >= right
            })
            .map(|i| self.histogram[i].center)
            .collect()
    }
}

/// Nine bins of width 25 centered on -100, -75, ..., 100.
pub fn describe(ds: &Dataset, column: &str) -> Result<Description> {
    let values = ds.feature_values(column)?;
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    let n = present.len();
    let mut histogram: Vec<HistogramBin> = (0..9)
        .map(|i| HistogramBin {
            center: -100.0 + 25.0 * i as f64,
            count: 0,
        })
        .collect();
    for &v in &present {
        let idx = ((v + 100.0) / 25.0).round().clamp(0.0, 8.0) as usize;
        histogram[idx].count += 1;
    }
    let mean = (n > 0).then(|| present.iter().sum::<f64>() / n as f64);
    let sd = mean.filter(|_| n > 1).map(|m| {
        (present.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    });
    Ok(Description {
        column: column.to_string(),
        n,
        n_missing: values.len() - n,
        mean,
        sd,
        min: present.iter().copied().reduce(f64::min),
        max: present.iter().copied().reduce(f64::max),
        histogram,
    })
}
