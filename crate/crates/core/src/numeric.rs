//! Scheduler-independent reductions and order statistics.

use rayon::prelude::*;

/// Block size for fixed-order reductions. Partial sums are formed per block
/// and combined left to right, so the result never depends on thread count.
pub const BLOCK: usize = 8192;

/// Sum with a fixed association order, parallel across blocks.
pub fn fixed_sum(values: &[f64]) -> f64 {
    let partials: Vec<f64> = values
        .par_chunks(BLOCK)
        .map(|c| c.iter().sum::<f64>())
        .collect();
    partials.iter().sum()
}

/// Fixed-order sum of `f(a_i, b_i)`.
pub fn fixed_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let partials: Vec<f64> = a
        .par_chunks(BLOCK)
        .zip(b.par_chunks(BLOCK))
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u * v).sum::<f64>())
        .collect();
    partials.iter().sum()
}

/// Linear-interpolation quantile (`q` in `[0, 1]`) of ascending data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Same convention as [`quantile_sorted`] without a full sort. Reorders
/// `scratch`.
pub fn quantile_select(scratch: &mut [f64], q: f64) -> f64 {
    let n = scratch.len();
    let h = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let (_, &mut lo_val, rest) = scratch.select_nth_unstable_by(lo, f64::total_cmp);
    let frac = h - lo as f64;
    if frac == 0.0 || rest.is_empty() {
        return lo_val;
    }
    let hi_val = rest.iter().copied().fold(f64::INFINITY, f64::min);
    lo_val + frac * (hi_val - lo_val)
}

pub fn sort_ascending(values: &mut [f64]) {
    values.par_sort_unstable_by(f64::total_cmp);
}
