//! Large-N equilibrium of the Arrow-security economy.
//!
//! Agents with log utility consume a fixed share of total wealth and split
//! the rest across the two signal outcomes in proportion to their beliefs.
//! Market prices reveal the wealth-weighted belief `p_imp`, not the
//! population average, and survivors' wealth is multiplied by
//! `P_i / p_imp` (signal 1) or `(1 - P_i) / (1 - p_imp)` (signal 0).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief_dynamics::{MortalityDraw, CLAMP_LO};
use crate::error::{Error, Result};
use crate::numeric::{fixed_dot, fixed_sum, BLOCK};

/// Relative tolerance on `sum(W) = N H` accepted by [`implied_probability`].
pub const WEALTH_SUM_TOL: f64 = 1e-9;

/// Present value of the endowment stream, `e / (1 - beta (1 - delta))`.
pub fn human_wealth(beta: f64, delta: f64, endowment: f64) -> Result<f64> {
    let discount = beta * (1.0 - delta);
    if discount >= 1.0 {
        return Err(Error::domain(format!(
            "beta (1 - delta) = {discount} must be below 1"
        )));
    }
    Ok(endowment / (1.0 - discount))
}

/// Wealth-weighted average belief, `sum(P_i W_i) / (N H)`.
pub fn implied_probability(beliefs: &[f64], wealth: &[f64], h: f64) -> Result<f64> {
    if beliefs.len() != wealth.len() || beliefs.is_empty() {
        return Err(Error::usage(format!(
            "{} beliefs vs {} wealths",
            beliefs.len(),
            wealth.len()
        )));
    }
    let nh = beliefs.len() as f64 * h;
    let total = fixed_sum(wealth);
    if ((total - nh) / nh).abs() > WEALTH_SUM_TOL {
        return Err(Error::Consistency(format!(
            "total wealth {total} differs from N H = {nh}"
        )));
    }
    Ok(fixed_dot(beliefs, wealth) / nh)
}

fn check_p_imp(p_imp: f64) -> Result<()> {
    if !(p_imp > CLAMP_LO && p_imp < 1.0 - CLAMP_LO) {
        return Err(Error::DegenerateMarket { p_imp });
    }
    Ok(())
}

/// Gross return `W' / W` of a surviving agent.
#[inline(always)]
pub fn settlement_ratio(belief: f64, p_imp: f64, s: u8) -> f64 {
    if s == 1 {
        belief / p_imp
    } else {
        (1.0 - belief) / (1.0 - p_imp)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settlement {
    pub wealth: Vec<f64>,
    /// `(sum W' - N H) / (N H)` before survivors are rescaled.
    pub drift: f64,
    /// Common factor applied to survivors' wealth.
    pub survivor_scale: f64,
}

/// Pays off the Arrow positions for signal `s`, replaces the dead with
/// newborns holding `H`, then scales survivors' wealth by a common factor so
/// that `sum(W') = N H` exactly.
///
/// Without deaths the payoff alone conserves wealth. With deaths, the
/// common factor is the finite-N mortality correction: survivors collectively
/// own `N(x') H`, the same allocation the exact Arrow prices with `N(x')`
/// survivors produce.
pub fn settle_wealth(
    wealth: &[f64],
    beliefs: &[f64],
    p_imp: f64,
    s: u8,
    mort: &MortalityDraw,
    h: f64,
) -> Result<Settlement> {
    check_p_imp(p_imp)?;
    let n = wealth.len();
    if beliefs.len() != n || mort.x.len() != n {
        return Err(Error::usage("length mismatch in settle_wealth"));
    }
    let mut next: Vec<f64> = wealth
        .par_iter()
        .zip(beliefs.par_iter())
        .zip(mort.x.par_iter())
        .map(|((&w, &p), &alive)| {
            if alive {
                w * settlement_ratio(p, p_imp, s)
            } else {
                h
            }
        })
        .collect();

    let partials: Vec<(f64, usize)> = next
        .par_chunks(BLOCK)
        .zip(mort.x.par_chunks(BLOCK))
        .map(|(ws, xs)| {
            ws.iter()
                .zip(xs)
                .filter(|(_, &alive)| alive)
                .fold((0.0, 0usize), |(s, c), (&w, _)| (s + w, c + 1))
        })
        .collect();
    let (survivor_total, survivors) = partials
        .iter()
        .fold((0.0, 0usize), |(s, c), &(ps, pc)| (s + ps, c + pc));

    let nh = n as f64 * h;
    let pre_total = survivor_total + (n - survivors) as f64 * h;
    let drift = (pre_total - nh) / nh;
    let scale = if survivors > 0 {
        survivors as f64 * h / survivor_total
    } else {
        1.0
    };
    next.par_iter_mut()
        .zip(mort.x.par_iter())
        .filter(|(_, &alive)| alive)
        .for_each(|(w, _)| *w *= scale);
    Ok(Settlement {
        wealth: next,
        drift,
        survivor_scale: scale,
    })
}

/// Consumption policy `[1 - beta (1 - delta)] W`.
#[inline]
pub fn consumption(wealth: f64, beta: f64, delta: f64) -> f64 {
    (1.0 - beta * (1.0 - delta)) * wealth
}

/// Price of a riskless one-period claim.
pub fn bond_price(beta: f64) -> f64 {
    beta
}

/// Price of a claim paying `dividend` every period the signal is 1.
pub fn equity_price(p_imp: f64, dividend: f64, beta: f64, delta: f64) -> Result<f64> {
    if !(beta < 1.0) {
        return Err(Error::domain("equity price diverges for beta >= 1"));
    }
    if !(0.0..=1.0).contains(&p_imp) {
        return Err(Error::domain(format!("p_imp = {p_imp} outside [0, 1]")));
    }
    Ok(0.5
        * dividend
        * beta
        * ((2.0 * p_imp - 1.0) / (1.0 - beta * (1.0 - delta)) + 1.0 / (1.0 - beta)))
}

/// Equity price over the unconditional expected dividend `d / 2`.
pub fn pe_ratio(equity_price: f64, dividend: f64) -> f64 {
    equity_price / (0.5 * dividend)
}

/// Market state for one period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketSnapshot {
    pub p_true: f64,
    pub p_imp: f64,
    pub bond_price: f64,
    pub equity_price: f64,
    pub pe_ratio: f64,
    pub wealth_drift: f64,
}

impl MarketSnapshot {
    pub fn price(
        p_true: f64,
        p_imp: f64,
        dividend: f64,
        beta: f64,
        delta: f64,
        wealth_drift: f64,
    ) -> Result<Self> {
        let equity = equity_price(p_imp, dividend, beta, delta)?;
        Ok(MarketSnapshot {
            p_true,
            p_imp,
            bond_price: bond_price(beta),
            equity_price: equity,
            pe_ratio: pe_ratio(equity, dividend),
            wealth_drift,
        })
    }
}

fn check_open(p_imp: f64) -> Result<()> {
    if p_imp <= 0.0 || p_imp >= 1.0 {
        return Err(Error::domain(format!("p_imp = {p_imp} must lie in (0, 1)")));
    }
    Ok(())
}

/// Expected one-period return of a surviving agent under the true probability.
pub fn expected_return(p_true: f64, p_imp: f64, p_i: f64) -> Result<f64> {
    check_open(p_imp)?;
    Ok((p_true - p_imp) * (p_i - p_imp) / (p_imp * (1.0 - p_imp)))
}

/// `E[(W'/W - 1)^2]` for a surviving agent.
pub fn return_second_moment(p_true: f64, p_imp: f64, p_i: f64) -> Result<f64> {
    check_open(p_imp)?;
    let q = 1.0 - p_imp;
    let d = p_i - p_imp;
    Ok((p_true * q * q + (1.0 - p_true) * p_imp * p_imp) * d * d / (p_imp * p_imp * q * q))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KellyGrowth {
    /// Second-order expansion in the belief gap.
    pub approx: f64,
    /// `E[log W'/W]`; `-inf` when a belief of 0 or 1 meets the losing outcome.
    pub exact: f64,
}

impl KellyGrowth {
    pub fn is_ruinous(&self) -> bool {
        self.exact == f64::NEG_INFINITY
    }
}

/// Expected log growth of a surviving agent's wealth.
pub fn kelly_log_growth(p_true: f64, p_imp: f64, p_i: f64) -> Result<KellyGrowth> {
    check_open(p_imp)?;
    let d = p_i - p_imp;
    let approx = ((p_true - p_imp) * d - 0.5 * d * d) / (p_imp * (1.0 - p_imp));
    let term = |prob: f64, ratio: f64| {
        if prob == 0.0 {
            0.0
        } else if ratio == 0.0 {
            f64::NEG_INFINITY
        } else {
            prob * ratio.ln()
        }
    };
    let exact = term(p_true, p_i / p_imp) + term(1.0 - p_true, (1.0 - p_i) / (1.0 - p_imp));
    Ok(KellyGrowth { approx, exact })
}

/// Residual of the intertemporal first-order condition
/// `Q(s') W'(s') = beta P_i(s') W` over both signal outcomes, for an explicit
/// next-period wealth pair `[W'(0), W'(1)]`. Prices are the large-N Arrow
/// prices `beta (1 - delta) p_imp(s')` summed over survivor states; the
/// subjective state probability carries the same survival factor.
pub fn euler_residual(
    wealth: f64,
    next_wealth: [f64; 2],
    belief: f64,
    p_imp: f64,
    beta: f64,
    delta: f64,
) -> f64 {
    let survive = 1.0 - delta;
    [0usize, 1]
        .iter()
        .map(|&s| {
            let (pi, pm) = if s == 1 {
                (belief, p_imp)
            } else {
                (1.0 - belief, 1.0 - p_imp)
            };
            let price = beta * survive * pm;
            (price * next_wealth[s] - beta * survive * pi * wealth).abs()
        })
        .fold(0.0, f64::max)
}

/// [`euler_residual`] on the settlement path of [`settle_wealth`].
pub fn verify_euler(wealth: f64, belief: f64, p_imp: f64, beta: f64, delta: f64) -> f64 {
    let next = [
        wealth * settlement_ratio(belief, p_imp, 0),
        wealth * settlement_ratio(belief, p_imp, 1),
    ];
    euler_residual(wealth, next, belief, p_imp, beta, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ModelParams;
    use proptest::prelude::*;

    fn baseline_beta() -> f64 {
        0.97f64.powf(1.0 / 52.0)
    }

    #[test]
    fn human_wealth_examples() {
        assert_eq!(human_wealth(0.0, 0.3, 1.0).unwrap(), 1.0);
        assert_eq!(human_wealth(0.9, 1.0, 2.5).unwrap(), 2.5);
        let h = human_wealth(baseline_beta(), 1.0 / 2600.0, 1.0).unwrap();
        // Geometric series sum_k (beta (1 - delta))^k, truncated.
        let q = baseline_beta() * (1.0 - 1.0 / 2600.0);
        let series: f64 = (0..200_000).map(|k| q.powi(k)).sum();
        assert!((h - series).abs() < 1e-9);
        // The series evaluates to 1030.96; the quoted 1030.7 is a rounding.
        assert!((h - 1030.7).abs() < 0.5, "{h}");
        let h2 = human_wealth(baseline_beta(), 3.9e-4, 1.0).unwrap();
        assert!(h2 < h);
        assert!(matches!(human_wealth(1.0, 0.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn implied_probability_examples() {
        let h = 10.0;
        assert!((implied_probability(&[0.8, 0.4], &[15.0, 5.0], h).unwrap() - 0.7).abs() < 1e-15);
        let p = implied_probability(&[0.2, 0.3, 0.7], &[h, h, h], h).unwrap();
        assert!((p - 0.4).abs() < 1e-15);
        let p = implied_probability(&[0.6; 3], &[1.0, 2.0, 27.0], h).unwrap();
        assert!((p - 0.6).abs() < 1e-15);
        assert!(matches!(
            implied_probability(&[0.5, 0.5], &[10.0, 11.0], h),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn settle_examples() {
        let h = 4.0;
        let none = MortalityDraw::all_survive(3);
        let w = vec![2.0, 4.0, 6.0];
        let s = settle_wealth(&w, &[0.3, 0.3, 0.3], 0.3, 1, &none, h).unwrap();
        assert_eq!(s.wealth, w);

        // P_i = 0.7 vs p_imp = 0.5, s = 1: 2H -> 2.8H before any rescale.
        assert!((2.0 * h * settlement_ratio(0.7, 0.5, 1) - 2.8 * h).abs() < 1e-12);

        let err = settle_wealth(&w, &[0.3; 3], CLAMP_LO, 1, &none, h);
        assert!(matches!(err, Err(Error::DegenerateMarket { .. })));
    }

    #[test]
    fn settle_with_deaths_restores_total() {
        let h = 3.0;
        let beliefs = [0.2, 0.5, 0.9, 0.6];
        let wealth = [1.0, 2.0, 4.0, 5.0];
        let p_imp = implied_probability(&beliefs, &wealth, h).unwrap();
        let mort = MortalityDraw {
            x: vec![true, false, true, true],
            z: vec![0.5; 4],
        };
        let out = settle_wealth(&wealth, &beliefs, p_imp, 1, &mort, h).unwrap();
        assert_eq!(out.wealth[1], h);
        let total: f64 = out.wealth.iter().sum();
        assert!((total - 4.0 * h).abs() < 1e-12);
        // Survivors keep their relative standing.
        let r0 = out.wealth[0] / (wealth[0] * 0.2 / p_imp);
        let r2 = out.wealth[2] / (wealth[2] * 0.9 / p_imp);
        assert!((r0 - r2).abs() < 1e-12);
        assert!(out.drift != 0.0);
    }

    #[test]
    fn consumption_examples() {
        let p = ModelParams::baseline();
        let h = p.human_wealth();
        assert!((consumption(h, p.beta(), p.delta) - 1.0).abs() < 1e-12);
        assert_eq!(consumption(7.0, 0.0, 0.1), 7.0);
    }

    #[test]
    fn equity_examples() {
        let beta = baseline_beta();
        let d = 1.0 / 52.0;
        let delta = 1.0 / 2600.0;
        let half = equity_price(0.5, d, beta, delta).unwrap();
        assert!((half - d * beta / (2.0 * (1.0 - beta))).abs() < 1e-12);

        let no_death = equity_price(0.6, d, beta, 0.0).unwrap();
        assert!((no_death - d * beta * 0.6 / (1.0 - beta)).abs() < 1e-10);

        // Truncated series: sum_l d beta^l [(1-delta)^(l-1) p + (1 - (1-delta)^(l-1)) / 2].
        let p = 0.6;
        let mut series = 0.0;
        let (mut bl, mut sl) = (beta, 1.0);
        for _ in 0..100_000 {
            series += d * bl * (sl * p + (1.0 - sl) * 0.5);
            bl *= beta;
            sl *= 1.0 - delta;
        }
        let closed = equity_price(p, d, beta, delta).unwrap();
        assert!(
            (closed - series).abs() / closed < 1e-9,
            "{closed} vs {series}"
        );
        assert!(matches!(
            equity_price(0.5, d, 1.0, delta),
            Err(Error::Domain(_))
        ));
        assert_eq!(bond_price(beta), beta);
    }

    #[test]
    fn return_examples() {
        assert_eq!(expected_return(0.6, 0.5, 0.5).unwrap(), 0.0);
        assert_eq!(expected_return(0.5, 0.5, 0.9).unwrap(), 0.0);
        assert!((expected_return(0.6, 0.5, 0.7).unwrap() - 0.08).abs() < 1e-15);
        assert!(matches!(
            expected_return(0.5, 1.0, 0.2),
            Err(Error::Domain(_))
        ));

        assert_eq!(return_second_moment(0.6, 0.5, 0.5).unwrap(), 0.0);
        assert!((return_second_moment(1.0, 0.5, 0.6).unwrap() - 0.04).abs() < 1e-15);
    }

    #[test]
    fn second_moment_matches_two_outcome_enumeration() {
        let (p, pm, pi) = (0.6, 0.4, 0.7);
        let up = pi / pm - 1.0;
        let down = (1.0 - pi) / (1.0 - pm) - 1.0;
        let enumerated = p * up * up + (1.0 - p) * down * down;
        assert!((return_second_moment(p, pm, pi).unwrap() - enumerated).abs() < 1e-15);

        // Monte Carlo over the signal.
        let mut rng = crate::rng::derive_stream(12, crate::rng::StreamId::Synthetic, 0, 0);
        let n = 200_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| {
                let r = if rng.uniform() < p { up } else { down };
                r * r
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((mean - enumerated).abs() < 3.0 * sd / (n as f64).sqrt());
    }

    #[test]
    fn kelly_examples() {
        let k = kelly_log_growth(0.5, 0.5, 0.6).unwrap();
        assert!((k.approx + 0.02).abs() < 1e-15);
        assert!(k.exact < 0.0);
        let k = kelly_log_growth(0.3, 0.4, 0.4).unwrap();
        assert_eq!((k.approx, k.exact), (0.0, 0.0));
        let k = kelly_log_growth(0.5, 0.4, 1.0).unwrap();
        assert!(k.is_ruinous());
    }

    #[test]
    fn exact_kelly_peaks_at_truth() {
        for (p, pm) in [(0.3, 0.5), (0.62, 0.55), (0.81, 0.9)] {
            let best = (1..100)
                .map(|k| k as f64 / 100.0)
                .max_by(|a, b| {
                    let ga = kelly_log_growth(p, pm, *a).unwrap().exact;
                    let gb = kelly_log_growth(p, pm, *b).unwrap().exact;
                    ga.total_cmp(&gb)
                })
                .unwrap();
            assert!((best - p).abs() < 1e-9, "{p}: {best}");
        }
    }

    #[test]
    fn euler_examples() {
        let beta = baseline_beta();
        let delta = 1.0 / 2600.0;
        assert!(verify_euler(3.7, 0.42, 0.55, beta, delta) <= 1e-12);
        assert_eq!(verify_euler(3.7, 0.55, 0.55, beta, delta), 0.0);

        let (w, pi, pm) = (2.0, 0.7, 0.5);
        let next = [
            1.01 * w * settlement_ratio(pi, pm, 0),
            1.01 * w * settlement_ratio(pi, pm, 1),
        ];
        let r = euler_residual(w, next, pi, pm, beta, delta);
        let want = 0.01 * beta * (1.0 - delta) * pi * w;
        assert!(
            (r - want).abs() < 1e-12 * want.max(1.0) + 1e-15,
            "{r} vs {want}"
        );
    }

    proptest! {
        #[test]
        fn no_death_settlement_conserves_wealth(
            beliefs in proptest::collection::vec(0.01f64..0.99, 2..50),
            raw in proptest::collection::vec(0.1f64..10.0, 50),
            s in 0u8..=1,
        ) {
            let n = beliefs.len();
            let h = 5.0;
            let tot: f64 = raw[..n].iter().sum();
            let wealth: Vec<f64> = raw[..n].iter().map(|w| w * n as f64 * h / tot).collect();
            let p_imp = fixed_dot(&beliefs, &wealth) / (n as f64 * h);
            let out = settle_wealth(&wealth, &beliefs, p_imp, s, &MortalityDraw::all_survive(n), h).unwrap();
            prop_assert!(out.drift.abs() < 1e-12);
            prop_assert!(out.wealth.iter().all(|&w| w > 0.0));
            prop_assert!(p_imp >= beliefs.iter().cloned().fold(1.0, f64::min) - 1e-15);
            prop_assert!(p_imp <= beliefs.iter().cloned().fold(0.0, f64::max) + 1e-15);
        }

        #[test]
        fn equity_price_monotone_and_bounded(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let beta = baseline_beta();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-9);
            let f = |p| equity_price(p, 1.0 / 52.0, beta, 1.0 / 2600.0).unwrap();
            prop_assert!(f(lo) < f(hi));
            prop_assert!(f(0.0) <= f(lo) && f(hi) <= f(1.0));
        }

        #[test]
        fn arrow_prices_sum_to_bond(p_imp in 0.0f64..1.0) {
            let beta = baseline_beta();
            prop_assert!((beta * p_imp + beta * (1.0 - p_imp) - bond_price(beta)).abs() < 1e-15);
        }

        #[test]
        fn goods_market_clears(raw in proptest::collection::vec(0.1f64..10.0, 1..40)) {
            let p = ModelParams::baseline();
            let h = p.human_wealth();
            let n = raw.len() as f64;
            let tot: f64 = raw.iter().sum();
            let c: f64 = raw.iter().map(|w| consumption(w * n * h / tot, p.beta(), p.delta)).sum();
            prop_assert!((c - n * p.endowment).abs() < 1e-9 * n);
        }
    }
}
