//! Full runs of the economy: the per-period pipeline, snapshots and the
//! run summary.
//!
//! Each period executes, in this order:
//!
//! 1. public opinion `P` = mean belief, bent through the sigmoidal map when
//!    `zeta > 0`;
//! 2. the signal `s` is drawn with probability `P`;
//! 3. the implied probability is read off current beliefs and wealth;
//! 4. Arrow positions are settled, the dead are replaced by newborns with
//!    wealth `H` and survivors are rescaled so that total wealth is `N H`;
//! 5. survivors update their beliefs on `s`, newborns take a fresh prior;
//! 6. the optional wealth tax is levied and redistributed.
//!
//! Agent loops run over fixed blocks of [`BLOCK`] slots and partial sums are
//! combined in block order, so results do not depend on the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::disagreement_variance;
use crate::belief_dynamics::{
    clamp_belief, constant_gain_update, draw_signal, least_squares_update, mortality_block,
    newborn_prior, sigmoid_feedback_map, survives_word, BeliefVector,
};
use crate::error::{Error, Result};
use crate::market_large_n::{equity_price, human_wealth, pe_ratio, settlement_ratio};
use crate::numeric::{quantile_sorted, sort_ascending, BLOCK};
use crate::params::{LearningRule, RunConfig};
use crate::wealth_stats::{fit_tail_sorted, gini_sorted, Percentiles, TailFitOptions};

/// Bins of the belief histogram used for the 20th/80th percentile band.
pub const BELIEF_BINS: usize = 4096;

/// Relative tolerance on `sum W = N H` after rescaling.
pub const CONSERVATION_TOL: f64 = 1e-10;

pub const CODE_VERSION: &str = concat!("beliefsim ", env!("CARGO_PKG_VERSION"));

/// One row of `timeseries.csv`. Beliefs are measured at the start of the
/// period, `wealth_drift` is the relative excess of total wealth after
/// settlement and before rescaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodRow {
    pub period: usize,
    pub true_p: f64,
    pub implied_p: f64,
    pub signal: u8,
    pub mean_belief: f64,
    pub belief_p20: f64,
    pub belief_p80: f64,
    pub pe_ratio: f64,
    pub equity_price: f64,
    pub wealth_drift: f64,
}

/// Cross-section of wealth in units of `H` at the end of `period`. Entry
/// `k` belongs to agent `k * stride`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WealthSnapshot {
    pub period: usize,
    pub stride: usize,
    pub w_over_h: Vec<f64>,
}

impl WealthSnapshot {
    pub fn agent_index(&self, k: usize) -> usize {
        k * self.stride
    }
}

/// Statistics of a completed run. Fields that cannot be computed (for
/// instance on an empty record) are NaN and serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    #[serde(with = "nan_as_null")]
    pub gini: f64,
    #[serde(with = "nan_as_null")]
    pub mu_ols: f64,
    #[serde(with = "nan_as_null")]
    pub mu_hill: f64,
    #[serde(with = "nan_as_null")]
    pub tail_lo: f64,
    #[serde(with = "nan_as_null")]
    pub tail_hi: f64,
    #[serde(with = "nan_as_null")]
    pub tail_r_squared: f64,
    pub tail_n: usize,
    pub hill_k: usize,
    pub tail_low_confidence: bool,
    /// Pooled wealth percentiles in units of `H`.
    #[serde(with = "nan_as_null")]
    pub p50: f64,
    #[serde(with = "nan_as_null")]
    pub p90: f64,
    #[serde(with = "nan_as_null")]
    pub p99: f64,
    #[serde(with = "nan_as_null")]
    pub p999: f64,
    pub pooled_samples: usize,
    /// Time average after burn-in of the cross-sectional belief SD.
    #[serde(with = "nan_as_null")]
    pub dispersion_sd: f64,
    #[serde(with = "nan_as_null")]
    pub dispersion_sd_theory: f64,
    /// `max |P_imp - P| / P` over all periods.
    #[serde(with = "nan_as_null")]
    pub max_abs_mispricing: f64,
    #[serde(with = "nan_as_null")]
    pub max_abs_pre_drift: f64,
    /// `max |sum W - N H| / (N H)` after rescaling.
    #[serde(with = "nan_as_null")]
    pub max_conservation_error: f64,
    /// Every P/E lay between its values at `P_imp = 0` and `P_imp = 1`.
    pub pe_within_bounds: bool,
    pub human_wealth: f64,
}

impl RunSummary {
    pub fn percentiles(&self) -> Percentiles {
        Percentiles {
            p50: self.p50,
            p90: self.p90,
            p99: self.p99,
            p999: self.p999,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config: RunConfig,
    pub seed: u64,
    pub version: String,
    pub series: Vec<PeriodRow>,
    pub snapshots: Vec<WealthSnapshot>,
    pub summary: RunSummary,
}

impl RunRecord {
    /// All snapshot values pooled into one sample, in units of `H`.
    pub fn pooled_wealth(&self) -> Vec<f64> {
        self.snapshots
            .iter()
            .flat_map(|s| s.w_over_h.iter().copied())
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty() && self.snapshots.is_empty()
    }
}

/// Per-block sums gathered at the start of a period.
struct OpeningPartial {
    sum_p: f64,
    sum_p2: f64,
    sum_pw: f64,
    sum_w: f64,
    hist: Vec<u32>,
}

/// Runs the economy described by `config` and writes the output files when
/// `config.outputs` is set.
pub fn run_scenario(config: &RunConfig) -> Result<RunRecord> {
    run_scenario_from(config, None)
}

/// [`run_scenario`] with given initial beliefs instead of uniform priors.
pub fn run_scenario_from(config: &RunConfig, initial: Option<Vec<f64>>) -> Result<RunRecord> {
    config.validate()?;
    if let Some(b) = &initial {
        if b.len() != config.params.n_agents {
            return Err(Error::usage(format!(
                "{} initial beliefs for {} agents",
                b.len(),
                config.params.n_agents
            )));
        }
    }
    let record = match config.workers {
        0 => simulate(config, initial)?,
        w => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::usage(format!("cannot build worker pool: {e}")))?
            .install(|| simulate(config, initial))?,
    };
    if let Some(dir) = &config.outputs {
        crate::snapshot_io::save(&record, dir)?;
    }
    Ok(record)
}

fn simulate(config: &RunConfig, initial: Option<Vec<f64>>) -> Result<RunRecord> {
    let p = &config.params;
    let n = p.n_agents;
    let (seed, lambda, delta, zeta, phi, omega) = (
        p.seed,
        p.lambda,
        p.delta,
        p.zeta,
        p.phi,
        p.prior_mean_weight,
    );
    let beta = p.beta();
    let h = human_wealth(beta, delta, p.endowment)?;
    let nh = n as f64 * h;
    let n_cg = match config.learning_rule {
        LearningRule::ConstantGain => n,
        LearningRule::LeastSquares => 0,
        LearningRule::Mixed {
            constant_gain_fraction,
        } => (constant_gain_fraction * n as f64).round() as usize,
    };

    let total = config.total_periods();
    let burn_in = config.burn_in_periods();
    let schedule = config.snapshot_schedule();
    let stride = config.snapshot_stride;

    let mut beliefs = match initial {
        Some(b) => BeliefVector::new(b.into_iter().map(clamp_belief).collect()),
        None => BeliefVector::uniform_priors(n, seed),
    };
    let mut wealth = vec![h; n];
    let mut alive = vec![true; n];

    let pe_lo = pe_ratio(equity_price(0.0, p.dividend, beta, delta)?, p.dividend);
    let pe_hi = pe_ratio(equity_price(1.0, p.dividend, beta, delta)?, p.dividend);

    let mut series = Vec::with_capacity(total);
    let mut snapshots = Vec::with_capacity(schedule.len());
    let mut next_snapshot = 0;
    let mut sd_sum = 0.0;
    let mut sd_count = 0usize;
    let mut max_mispricing: f64 = 0.0;
    let mut max_drift: f64 = 0.0;
    let mut max_conservation: f64 = 0.0;
    let mut pe_ok = true;

    for t in 0..total {
        let period = t as u32;

        // Opening pass: moments, implied probability, belief histogram.
        let partials: Vec<OpeningPartial> = beliefs
            .p
            .par_chunks(BLOCK)
            .zip(wealth.par_chunks(BLOCK))
            .map(|(ps, ws)| {
                let mut part = OpeningPartial {
                    sum_p: 0.0,
                    sum_p2: 0.0,
                    sum_pw: 0.0,
                    sum_w: 0.0,
                    hist: vec![0; BELIEF_BINS],
                };
                for (&b, &w) in ps.iter().zip(ws) {
                    part.sum_p += b;
                    part.sum_p2 += b * b;
                    part.sum_pw += b * w;
                    part.sum_w += w;
                    part.hist[((b * BELIEF_BINS as f64) as usize).min(BELIEF_BINS - 1)] += 1;
                }
                part
            })
            .collect();
        let mut hist = vec![0u64; BELIEF_BINS];
        let (mut sum_p, mut sum_p2, mut sum_pw, mut sum_w) = (0.0, 0.0, 0.0, 0.0);
        for part in &partials {
            sum_p += part.sum_p;
            sum_p2 += part.sum_p2;
            sum_pw += part.sum_pw;
            sum_w += part.sum_w;
            for (a, &c) in hist.iter_mut().zip(&part.hist) {
                *a += c as u64;
            }
        }

        let mean = sum_p / n as f64;
        let p_imp = sum_pw / nh;
        let conservation = (sum_w - nh).abs() / nh;
        for (name, v) in [
            ("mean_belief", mean),
            ("implied_p", p_imp),
            ("total_wealth", sum_w),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    quantity: name,
                    period: t,
                });
            }
        }
        if conservation > CONSERVATION_TOL {
            return Err(Error::Consistency(format!(
                "total wealth drifted by {conservation:e} of N H at period {t}"
            )));
        }
        max_conservation = max_conservation.max(conservation);
        if !(p_imp > 0.0 && p_imp < 1.0) {
            return Err(Error::DegenerateMarket { p_imp });
        }

        let p_true = sigmoid_feedback_map(mean, zeta);
        let s = draw_signal(p_true, seed, period);
        let equity = equity_price(p_imp, p.dividend, beta, delta)?;
        let pe = pe_ratio(equity, p.dividend);
        pe_ok &= pe >= pe_lo.min(pe_hi) && pe <= pe_lo.max(pe_hi);
        max_mispricing = max_mispricing.max(((p_imp - p_true) / p_true).abs());
        if t >= burn_in {
            let var = (sum_p2 / n as f64 - mean * mean).max(0.0);
            sd_sum += var.sqrt();
            sd_count += 1;
        }

        // Settlement, learning and mortality.
        let partials: Vec<(f64, usize)> = beliefs
            .p
            .par_chunks_mut(BLOCK)
            .zip(beliefs.age.par_chunks_mut(BLOCK))
            .zip(wealth.par_chunks_mut(BLOCK))
            .zip(alive.par_chunks_mut(BLOCK))
            .enumerate()
            .map(|(c, (((ps, ages), ws), xs))| {
                let base = c * BLOCK;
                let mut survivor_total = 0.0;
                let mut survivors = 0usize;
                let mut words = [0u32; 4];
                for k in 0..ps.len() {
                    let i = base + k;
                    if i.is_multiple_of(4) {
                        words = mortality_block(seed, (i / 4) as u32, period);
                    }
                    let b = ps[k];
                    if survives_word(words[i % 4], delta) {
                        let w = ws[k] * settlement_ratio(b, p_imp, s);
                        ws[k] = w;
                        survivor_total += w;
                        survivors += 1;
                        ps[k] = clamp_belief(if i < n_cg {
                            constant_gain_update(b, s, lambda)
                        } else {
                            least_squares_update(b, s, ages[k])
                        });
                        ages[k] = ages[k].saturating_add(1);
                        xs[k] = true;
                    } else {
                        ws[k] = h;
                        let z = newborn_prior(seed, i as u32, period);
                        ps[k] = clamp_belief((1.0 - omega) * z + omega * mean);
                        ages[k] = 1;
                        xs[k] = false;
                    }
                }
                (survivor_total, survivors)
            })
            .collect();
        let (survivor_total, survivors) = partials
            .iter()
            .fold((0.0, 0usize), |(a, c), &(pa, pc)| (a + pa, c + pc));
        let drift = (survivor_total + (n - survivors) as f64 * h - nh) / nh;
        if !drift.is_finite() {
            return Err(Error::NonFinite {
                quantity: "wealth_drift",
                period: t,
            });
        }
        max_drift = max_drift.max(drift.abs());

        // Survivors own N(x') H. The levy phi (W - H) sums to zero once
        // total wealth is N H, so the tax is W -> (1 - phi) W + phi H.
        let scale = if survivors > 0 {
            survivors as f64 * h / survivor_total
        } else {
            1.0
        };
        let keep = 1.0 - phi;
        wealth
            .par_chunks_mut(BLOCK)
            .zip(alive.par_chunks(BLOCK))
            .for_each(|(ws, xs)| {
                for (w, &x) in ws.iter_mut().zip(xs) {
                    if x {
                        *w = keep * (*w * scale) + phi * h;
                    }
                }
            });

        series.push(PeriodRow {
            period: t,
            true_p: p_true,
            implied_p: p_imp,
            signal: s,
            mean_belief: mean,
            belief_p20: histogram_quantile(&hist, n, 0.2),
            belief_p80: histogram_quantile(&hist, n, 0.8),
            pe_ratio: pe,
            equity_price: equity,
            wealth_drift: drift,
        });

        if next_snapshot < schedule.len() && schedule[next_snapshot] == t {
            snapshots.push(WealthSnapshot {
                period: t,
                stride,
                w_over_h: wealth.iter().step_by(stride).map(|w| w / h).collect(),
            });
            next_snapshot += 1;
        }
    }

    let final_total: f64 = wealth
        .par_chunks(BLOCK)
        .map(|ws| ws.iter().sum::<f64>())
        .collect::<Vec<_>>()
        .iter()
        .sum();
    max_conservation = max_conservation.max((final_total - nh).abs() / nh);

    let mut summary = summarize(&snapshots, h);
    summary.dispersion_sd = if sd_count > 0 {
        sd_sum / sd_count as f64
    } else {
        f64::NAN
    };
    summary.dispersion_sd_theory = disagreement_variance(lambda, p.alpha()).sqrt();
    summary.max_abs_mispricing = max_mispricing;
    summary.max_abs_pre_drift = max_drift;
    summary.max_conservation_error = max_conservation;
    summary.pe_within_bounds = pe_ok;

    let mut echo = config.clone();
    echo.outputs = None;
    echo.workers = 0;
    Ok(RunRecord {
        config: echo,
        seed,
        version: CODE_VERSION.to_string(),
        series,
        snapshots,
        summary,
    })
}

/// Inequality and tail statistics of the pooled snapshots. Run diagnostics
/// are left NaN.
pub fn summarize(snapshots: &[WealthSnapshot], h: f64) -> RunSummary {
    let mut pooled: Vec<f64> = snapshots
        .iter()
        .flat_map(|s| s.w_over_h.iter().copied())
        .collect();
    let mut summary = RunSummary {
        gini: f64::NAN,
        mu_ols: f64::NAN,
        mu_hill: f64::NAN,
        tail_lo: f64::NAN,
        tail_hi: f64::NAN,
        tail_r_squared: f64::NAN,
        tail_n: 0,
        hill_k: 0,
        tail_low_confidence: true,
        p50: f64::NAN,
        p90: f64::NAN,
        p99: f64::NAN,
        p999: f64::NAN,
        pooled_samples: pooled.len(),
        dispersion_sd: f64::NAN,
        dispersion_sd_theory: f64::NAN,
        max_abs_mispricing: f64::NAN,
        max_abs_pre_drift: f64::NAN,
        max_conservation_error: f64::NAN,
        pe_within_bounds: true,
        human_wealth: h,
    };
    if pooled.len() < 2 {
        return summary;
    }
    sort_ascending(&mut pooled);
    if pooled[pooled.len() - 1] > 0.0 {
        summary.gini = gini_sorted(&pooled);
    }
    let q = |x| quantile_sorted(&pooled, x);
    summary.p50 = q(0.5);
    summary.p90 = q(0.9);
    summary.p99 = q(0.99);
    summary.p999 = q(0.999);
    let tail = fit_tail_sorted(&pooled, TailFitOptions::default());
    summary.mu_ols = tail.mu_ols;
    summary.mu_hill = tail.mu_hill;
    summary.tail_lo = tail.fit_range.0;
    summary.tail_hi = tail.fit_range.1;
    summary.tail_r_squared = tail.r_squared;
    summary.tail_n = tail.n_tail;
    summary.hill_k = tail.hill_k;
    summary.tail_low_confidence = tail.low_confidence;
    summary
}

/// Quantile of a `[0, 1]` histogram, linear within the bin.
pub fn histogram_quantile(hist: &[u64], n: usize, q: f64) -> f64 {
    let bins = hist.len() as f64;
    let target = q * n as f64;
    let mut below = 0u64;
    for (k, &c) in hist.iter().enumerate() {
        if c > 0 && (below + c) as f64 >= target {
            let frac = ((target - below as f64) / c as f64).clamp(0.0, 1.0);
            return (k as f64 + frac) / bins;
        }
        below += c;
    }
    1.0
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}
