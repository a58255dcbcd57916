//! CART split search on the sum-of-squared-errors criterion.

/// Best split found for a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub sse_decrease: f64,
}

/// Decreases at or below this (relative to the parent SSE) count as none.
const MIN_RELATIVE_DECREASE: f64 = 1e-12;

/// Best `(feature, threshold)` over `features` for the samples `rows`
/// (indices into the columns of `x`, repeats allowed).
///
/// Thresholds are midpoints of consecutive distinct feature values; each
/// side must keep at least `min_leaf` samples. Ties go to the earlier
/// feature in `features`, then the lower threshold. Returns `None` when no
/// admissible split lowers the SSE.
pub fn best_split(
    x: &[Vec<f64>],
    y: &[f64],
    rows: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<SplitCandidate> {
    let n = rows.len();
    let min_leaf = min_leaf.max(1);
    if n < 2 * min_leaf {
        return None;
    }
    let total: f64 = rows.iter().map(|&i| y[i]).sum();
    let parent_mean = total / n as f64;
    let parent_sse: f64 = rows.iter().map(|&i| (y[i] - parent_mean).powi(2)).sum();
    let floor = MIN_RELATIVE_DECREASE * parent_sse.max(1.0);

    let mut best: Option<SplitCandidate> = None;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
    for &f in features {
        let col = &x[f];
        pairs.clear();
        pairs.extend(rows.iter().map(|&i| (col[i], y[i])));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut left_sum = 0.0;
        for k in 0..n - 1 {
            left_sum += pairs[k].1;
            let n_left = k + 1;
            let n_right = n - n_left;
            if pairs[k].0 == pairs[k + 1].0 || n_left < min_leaf || n_right < min_leaf {
                continue;
            }
            let mean_left = left_sum / n_left as f64;
            let mean_right = (total - left_sum) / n_right as f64;
            let decrease =
                (n_left * n_right) as f64 / n as f64 * (mean_left - mean_right).powi(2);
            if decrease <= floor {
                continue;
            }
            if best.is_none_or(|b| decrease > b.sse_decrease) {
                best = Some(SplitCandidate {
                    feature: f,
                    threshold: 0.5 * (pairs[k].0 + pairs[k + 1].0),
                    sse_decrease: decrease,
                });
            }
        }
    }
    best
}
