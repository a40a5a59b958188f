//! Inequality and tail statistics of wealth cross-sections.
//!
//! Inputs are wealth values already expressed in units of human wealth
//! unless a function takes `h` explicitly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{quantile_sorted, sort_ascending};

/// Hill estimator uses this share of the largest samples by default.
pub const DEFAULT_HILL_FRACTION: f64 = 0.005;
/// Default OLS range keeps the top 1% above `H`.
pub const DEFAULT_TOP_FRACTION: f64 = 0.01;
/// Fewer tail samples than this flag a fit as low-confidence.
pub const MIN_TAIL_SAMPLES: usize = 100;

fn validate(samples: &[f64]) -> Result<()> {
    if samples.len() < 2 {
        return Err(Error::domain("need at least two samples"));
    }
    if samples.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::domain("samples must be finite and non-negative"));
    }
    if samples.iter().all(|&w| w == 0.0) {
        return Err(Error::domain("all samples are zero"));
    }
    Ok(())
}

fn sorted_copy(samples: &[f64]) -> Vec<f64> {
    let mut v = samples.to_vec();
    sort_ascending(&mut v);
    v
}

/// Gini coefficient of ascending data, `sum_i (2i - n - 1) w_(i) / (n sum w)`.
pub fn gini_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let (weighted, total) = sorted
        .iter()
        .enumerate()
        .fold((0.0, 0.0), |(a, t), (i, &w)| {
            (a + (2.0 * (i as f64 + 1.0) - n - 1.0) * w, t + w)
        });
    weighted / (n * total)
}

/// Mean absolute difference over twice the mean.
pub fn gini(samples: &[f64]) -> Result<f64> {
    validate(samples)?;
    Ok(gini_sorted(&sorted_copy(samples)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorenzCurve {
    pub pop_share: Vec<f64>,
    pub wealth_share: Vec<f64>,
}

impl LorenzCurve {
    /// `1 - 2 * area under the curve`, by the trapezoid rule.
    pub fn gini(&self) -> f64 {
        let area: f64 = self
            .pop_share
            .windows(2)
            .zip(self.wealth_share.windows(2))
            .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
            .sum();
        1.0 - 2.0 * area
    }
}

fn lorenz_sorted(sorted: &[f64], grid_size: usize) -> LorenzCurve {
    let n = sorted.len();
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0.0);
    let mut acc = 0.0;
    for &w in sorted {
        acc += w;
        cum.push(acc);
    }
    let pop_share: Vec<f64> = (0..=grid_size)
        .map(|j| j as f64 / grid_size as f64)
        .collect();
    let wealth_share = pop_share
        .iter()
        .map(|&x| {
            let pos = x * n as f64;
            let k = (pos.floor() as usize).min(n - 1);
            let frac = pos - k as f64;
            (cum[k] + frac * (cum[k + 1] - cum[k])) / acc
        })
        .collect();
    LorenzCurve {
        pop_share,
        wealth_share,
    }
}

/// Lorenz curve on `grid_size + 1` evenly spaced population shares, linear
/// between the sample points `(k / n, cumulative share of the k poorest)`.
pub fn lorenz(samples: &[f64], grid_size: usize) -> Result<LorenzCurve> {
    validate(samples)?;
    if grid_size == 0 {
        return Err(Error::usage("grid_size must be positive"));
    }
    Ok(lorenz_sorted(&sorted_copy(samples), grid_size))
}

/// `G(w) = #(samples > w) / n` on ascending data.
pub fn ccdf_at(sorted: &[f64], w: f64) -> f64 {
    let above = sorted.len() - sorted.partition_point(|&x| x <= w);
    above as f64 / sorted.len() as f64
}

/// Empirical complementary CDF evaluated at each distinct sample value.
pub fn ccdf(samples: &[f64]) -> Vec<(f64, f64)> {
    let sorted = sorted_copy(samples);
    ccdf_points(&sorted)
}

fn ccdf_points(sorted: &[f64]) -> Vec<(f64, f64)> {
    let n = sorted.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let w = sorted[i];
        let mut j = i + 1;
        while j < n && sorted[j] == w {
            j += 1;
        }
        out.push((w, (n - j) as f64 / n as f64));
        i = j;
    }
    out
}

/// Which samples enter the log-log regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RangePolicy {
    /// Samples above `floor` that are also in the top `fraction`.
    TopAbove { fraction: f64, floor: f64 },
    /// Samples in `[lo, hi]`.
    Explicit { lo: f64, hi: f64 },
}

impl Default for RangePolicy {
    fn default() -> Self {
        RangePolicy::TopAbove {
            fraction: DEFAULT_TOP_FRACTION,
            floor: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFitOptions {
    pub range: RangePolicy,
    pub hill_fraction: f64,
}

impl Default for TailFitOptions {
    fn default() -> Self {
        TailFitOptions {
            range: RangePolicy::default(),
            hill_fraction: DEFAULT_HILL_FRACTION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFitReport {
    pub mu_ols: f64,
    pub mu_hill: f64,
    pub fit_range: (f64, f64),
    pub r_squared: f64,
    pub n_tail: usize,
    pub hill_k: usize,
    pub low_confidence: bool,
}

/// Slope of `log G` against `log w` over the selected range (negated), and
/// the Hill estimate over the largest `hill_fraction` of the samples.
pub fn fit_tail(samples: &[f64], options: TailFitOptions) -> Result<TailFitReport> {
    validate(samples)?;
    Ok(fit_tail_sorted(&sorted_copy(samples), options))
}

pub fn fit_tail_sorted(sorted: &[f64], options: TailFitOptions) -> TailFitReport {
    let n = sorted.len();
    let (lo, hi) = match options.range {
        RangePolicy::TopAbove { fraction, floor } => {
            let cut = quantile_sorted(sorted, 1.0 - fraction);
            (cut.max(floor), sorted[n - 1])
        }
        RangePolicy::Explicit { lo, hi } => (lo, hi),
    };
    let points: Vec<(f64, f64)> = ccdf_points(sorted)
        .into_iter()
        .filter(|&(w, g)| w >= lo && w <= hi && w > 0.0 && g > 0.0)
        .map(|(w, g)| (w.ln(), g.ln()))
        .collect();
    let n_tail = sorted.iter().filter(|&&w| w >= lo && w <= hi).count();
    let (slope, r_squared) = ols(&points);

    let k = ((options.hill_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let threshold = sorted[n - 1 - k];
    let mu_hill = if threshold > 0.0 {
        let log_t = threshold.ln();
        let mean_excess = sorted[n - k..].iter().map(|w| w.ln() - log_t).sum::<f64>() / k as f64;
        1.0 / mean_excess
    } else {
        f64::NAN
    };

    let mu_ols = -slope;
    TailFitReport {
        mu_ols,
        mu_hill,
        fit_range: (lo, hi),
        r_squared,
        n_tail,
        hill_k: k,
        low_confidence: n_tail < MIN_TAIL_SAMPLES
            || k < MIN_TAIL_SAMPLES
            || !(mu_ols > 0.0)
            || !(mu_hill > 0.0),
    }
}

fn ols(points: &[(f64, f64)]) -> (f64, f64) {
    let m = points.len() as f64;
    if points.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    (slope, r2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub p999: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub gini: f64,
    pub lorenz: LorenzCurve,
    /// Multiples of `H`.
    pub percentiles: Percentiles,
    pub n_samples: usize,
}

pub const LORENZ_GRID: usize = 1000;

/// Gini, Lorenz curve and the 50/90/99/99.9th percentiles in units of `h`.
pub fn percentile_report(samples: &[f64], h: f64) -> Result<InequalityReport> {
    validate(samples)?;
    if !(h > 0.0) {
        return Err(Error::domain("h must be positive"));
    }
    let scaled: Vec<f64> = samples.iter().map(|w| w / h).collect();
    Ok(report_sorted(&sorted_copy(&scaled)))
}

/// [`percentile_report`] for ascending data already in units of `H`.
pub fn report_sorted(sorted: &[f64]) -> InequalityReport {
    let q = |p| quantile_sorted(sorted, p);
    InequalityReport {
        gini: gini_sorted(sorted),
        lorenz: lorenz_sorted(sorted, LORENZ_GRID),
        percentiles: Percentiles {
            p50: q(0.5),
            p90: q(0.9),
            p99: q(0.99),
            p999: q(0.999),
        },
        n_samples: sorted.len(),
    }
}

/// Pools several cross-sections into one sample.
pub fn time_average_distribution(snapshots: &[Vec<f64>]) -> Result<Vec<f64>> {
    if snapshots.is_empty() {
        return Err(Error::usage("no snapshots to pool"));
    }
    Ok(snapshots.iter().flatten().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_stream, StreamId};
    use proptest::prelude::*;

    fn pareto(mu: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = derive_stream(seed, StreamId::Synthetic, 0, 0);
        (0..n)
            .map(|_| (1.0 - rng.uniform()).powf(-1.0 / mu))
            .collect()
    }

    fn pairwise_gini(w: &[f64]) -> f64 {
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let s: f64 = w
            .iter()
            .flat_map(|a| w.iter().map(move |b| (a - b).abs()))
            .sum();
        s / (2.0 * n * n * mean)
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[2.0; 5]).unwrap(), 0.0);
        assert!((gini(&[1.0, 3.0]).unwrap() - 0.25).abs() < 1e-15);
        assert!(matches!(gini(&[0.0, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(gini(&[1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn gini_of_pareto() {
        let g = gini(&pareto(1.4, 1_000_000, 11)).unwrap();
        assert!((g - 1.0 / 1.8).abs() < 0.01, "{g}");
    }

    #[test]
    fn lorenz_examples() {
        let l = lorenz(&[1.0, 1.0, 2.0], 3).unwrap();
        assert!((l.wealth_share[2] - 0.5).abs() < 1e-15);
        let eq = lorenz(&[4.0; 10], 20).unwrap();
        for (x, y) in eq.pop_share.iter().zip(&eq.wealth_share) {
            assert!((x - y).abs() < 1e-12);
        }
        let mut owner = vec![0.0; 9];
        owner.push(5.0);
        let l = lorenz(&owner, 100).unwrap();
        for (x, y) in l.pop_share.iter().zip(&l.wealth_share) {
            if *x < 0.9 {
                assert_eq!(*y, 0.0);
            }
        }
        assert_eq!((l.pop_share[0], l.wealth_share[0]), (0.0, 0.0));
        assert!((l.wealth_share[100] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ccdf_examples() {
        let sorted = [1.0, 2.0, 3.0];
        assert!((ccdf_at(&sorted, 1.5) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(ccdf_at(&sorted, 1.0 - 1e-9), 1.0);
        assert_eq!(ccdf_at(&sorted, 3.0), 0.0);
        let pts = ccdf(&[3.0, 1.0, 2.0, 2.0]);
        assert_eq!(pts, vec![(1.0, 0.75), (2.0, 0.25), (3.0, 0.0)]);
    }

    #[test]
    fn tail_fit_on_pareto() {
        let report = fit_tail(&pareto(1.4, 1_000_000, 5), TailFitOptions::default()).unwrap();
        assert!((1.35..=1.45).contains(&report.mu_ols), "{report:?}");
        assert!((1.35..=1.45).contains(&report.mu_hill), "{report:?}");
        assert!((report.mu_ols - report.mu_hill).abs() < 0.1);
        assert!(report.r_squared > 0.99);
        assert!(!report.low_confidence);
    }

    #[test]
    fn tail_fit_on_exponential_is_flagged() {
        let mut rng = derive_stream(6, StreamId::Synthetic, 0, 0);
        let xs: Vec<f64> = (0..200_000).map(|_| -(1.0 - rng.uniform()).ln()).collect();
        let wide = fit_tail(
            &xs,
            TailFitOptions {
                range: RangePolicy::TopAbove {
                    fraction: 0.3,
                    floor: 0.0,
                },
                ..TailFitOptions::default()
            },
        )
        .unwrap();
        let narrow = fit_tail(&xs, TailFitOptions::default()).unwrap();
        assert!(wide.r_squared < 0.98, "{wide:?}");
        assert!(
            (wide.mu_ols - narrow.mu_ols).abs() > 0.5,
            "{wide:?} {narrow:?}"
        );
        let few = fit_tail(&xs[..1000], TailFitOptions::default()).unwrap();
        assert!(few.low_confidence);
    }

    #[test]
    fn percentile_examples() {
        let h = 7.0;
        let r = percentile_report(&[h; 100], h).unwrap();
        let p = r.percentiles;
        assert_eq!((p.p50, p.p90, p.p99, p.p999), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(r.gini, 0.0);
    }

    #[test]
    fn pooling_examples() {
        let snap = vec![1.0, 2.0, 5.0, 9.0];
        let pooled = time_average_distribution(&[snap.clone(), snap.clone()]).unwrap();
        assert!((gini(&pooled).unwrap() - gini(&snap).unwrap()).abs() < 1e-12);
        let (a, b) = (1.0, 3.0);
        let pooled = time_average_distribution(&[vec![a; 5], vec![b; 5]]).unwrap();
        let want = (a - b).abs() / (2.0 * (a + b));
        assert!((gini(&pooled).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn lorenz_gini_coherence() {
        let xs = pareto(1.8, 50_000, 8);
        let g = gini(&xs).unwrap();
        let l = lorenz(&xs, 1000).unwrap();
        assert!((l.gini() - g).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn gini_matches_pairwise(w in proptest::collection::vec(0.0f64..100.0, 2..60)) {
            prop_assume!(w.iter().any(|&x| x > 0.0));
            prop_assert!((gini(&w).unwrap() - pairwise_gini(&w)).abs() < 1e-12);
        }

        #[test]
        fn gini_scale_invariant(w in proptest::collection::vec(0.01f64..100.0, 2..60), c in 0.001f64..1000.0) {
            let scaled: Vec<f64> = w.iter().map(|x| x * c).collect();
            prop_assert!((gini(&w).unwrap() - gini(&scaled).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn ccdf_non_increasing(w in proptest::collection::vec(0.0f64..10.0, 1..80)) {
            let pts = ccdf(&w);
            prop_assert!(pts.windows(2).all(|p| p[1].1 <= p[0].1 && p[1].0 > p[0].0));
        }

        #[test]
        fn lorenz_convex_with_fixed_ends(w in proptest::collection::vec(0.01f64..100.0, 2..60)) {
            let l = lorenz(&w, 50).unwrap();
            prop_assert_eq!(l.wealth_share[0], 0.0);
            prop_assert!((l.wealth_share[50] - 1.0).abs() < 1e-12);
            let slopes: Vec<f64> = l.wealth_share.windows(2).map(|y| y[1] - y[0]).collect();
            prop_assert!(slopes.windows(2).all(|s| s[1] >= s[0] - 1e-12));
        }
    }
}
