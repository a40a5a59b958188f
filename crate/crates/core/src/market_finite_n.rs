//! Exact equilibrium of the economy with a small number of agents.
//!
//! Every mortality realisation `x'` is enumerated as a bit mask (bit `i` set
//! when agent `i` survives), so all checks here are exhaustive rather than
//! sampled. The all-dead state has no survivors to hold the Arrow
//! securities; it is kept out of the price tables and its mass is reported.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest population the price tables accept.
pub const MAX_AGENTS: usize = 20;
/// Largest population for the exhaustive clearing check.
pub const MAX_CLEARING_AGENTS: usize = 12;

/// Exogenous state: signal, survival indicators and newborn priors.
#[derive(Debug, Clone, PartialEq)]
pub struct ExogenousState {
    pub s: u8,
    pub x: Vec<bool>,
    pub z: Vec<f64>,
}

impl ExogenousState {
    pub fn mask(&self) -> u32 {
        self.x
            .iter()
            .enumerate()
            .fold(0, |m, (i, &alive)| m | ((alive as u32) << i))
    }

    pub fn survivors(&self) -> usize {
        self.x.iter().filter(|&&a| a).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MortalityState {
    pub mask: u32,
    pub prob: f64,
}

impl MortalityState {
    pub fn survivors(&self) -> u32 {
        self.mask.count_ones()
    }

    #[inline]
    pub fn alive(&self, i: usize) -> bool {
        self.mask >> i & 1 == 1
    }
}

/// All `2^N` survival patterns with `p(x') = (1 - delta)^k delta^(N - k)`.
pub fn enumerate_states(n: usize, delta: f64) -> Result<Vec<MortalityState>> {
    if n > MAX_AGENTS {
        return Err(Error::Capacity(format!(
            "{n} agents exceeds the enumeration bound of {MAX_AGENTS}"
        )));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::domain(format!("delta = {delta} outside [0, 1]")));
    }
    Ok((0..1u32 << n)
        .map(|mask| {
            let k = mask.count_ones() as i32;
            MortalityState {
                mask,
                prob: (1.0 - delta).powi(k) * delta.powi(n as i32 - k),
            }
        })
        .collect())
}

/// `theta(x') = 1 + sum_i a_i x'_i / (N(x') H)`.
pub fn theta_correction(mask: u32, positions: &[f64], h: f64) -> Result<f64> {
    let k = survivors_in(mask, positions.len());
    if k == 0 {
        return Err(Error::domain("theta undefined without survivors"));
    }
    let held: f64 = positions
        .iter()
        .enumerate()
        .filter(|(i, _)| mask >> i & 1 == 1)
        .map(|(_, a)| a)
        .sum();
    Ok(1.0 + held / (k as f64 * h))
}

fn survivors_in(mask: u32, n: usize) -> u32 {
    (mask & ((1u64 << n) - 1) as u32).count_ones()
}

fn subjective(belief: f64, s: u8) -> f64 {
    if s == 1 {
        belief
    } else {
        1.0 - belief
    }
}

fn check_agents(beliefs: &[f64], wealth: &[f64], bound: usize) -> Result<()> {
    if beliefs.len() != wealth.len() || beliefs.is_empty() {
        return Err(Error::usage(format!(
            "{} beliefs vs {} wealths",
            beliefs.len(),
            wealth.len()
        )));
    }
    if beliefs.len() > bound {
        return Err(Error::Capacity(format!(
            "{} agents exceeds the bound of {bound}",
            beliefs.len()
        )));
    }
    Ok(())
}

/// Arrow price `beta p(x') sum_i P_i(s') x'_i W_i / (N(x') H)`.
pub fn arrow_price(
    s: u8,
    state: MortalityState,
    beliefs: &[f64],
    wealth: &[f64],
    h: f64,
    beta: f64,
) -> Result<f64> {
    check_agents(beliefs, wealth, MAX_AGENTS)?;
    let k = survivors_in(state.mask, beliefs.len());
    if k == 0 {
        return Err(Error::domain("no Arrow price in the all-dead state"));
    }
    let weighted: f64 = (0..beliefs.len())
        .filter(|&i| state.alive(i))
        .map(|i| subjective(beliefs[i], s) * wealth[i])
        .sum();
    Ok(beta * state.prob * weighted / (k as f64 * h))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrowPrice {
    pub s: u8,
    pub mask: u32,
    pub prob: f64,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrowPriceTable {
    pub n_agents: usize,
    pub prices: Vec<ArrowPrice>,
    /// `(mask, theta)` for every state with at least one survivor.
    pub theta: Vec<(u32, f64)>,
    /// Probability of the all-dead state, which carries no prices.
    pub excluded_mass: f64,
}

impl ArrowPriceTable {
    pub fn build(beliefs: &[f64], wealth: &[f64], h: f64, beta: f64, delta: f64) -> Result<Self> {
        check_agents(beliefs, wealth, MAX_AGENTS)?;
        let n = beliefs.len();
        let positions: Vec<f64> = wealth.iter().map(|w| w - h).collect();
        let mut prices = Vec::with_capacity(2 << n);
        let mut theta = Vec::with_capacity(1 << n);
        let mut excluded_mass = 0.0;
        for state in enumerate_states(n, delta)? {
            if state.mask == 0 {
                excluded_mass = state.prob;
                continue;
            }
            theta.push((state.mask, theta_correction(state.mask, &positions, h)?));
            for s in [0u8, 1] {
                prices.push(ArrowPrice {
                    s,
                    mask: state.mask,
                    prob: state.prob,
                    price: arrow_price(s, state, beliefs, wealth, h, beta)?,
                });
            }
        }
        Ok(ArrowPriceTable {
            n_agents: n,
            prices,
            theta,
            excluded_mass,
        })
    }

    pub fn price(&self, s: u8, mask: u32) -> Option<f64> {
        self.prices
            .iter()
            .find(|p| p.s == s && p.mask == mask)
            .map(|p| p.price)
    }

    /// Total price of the claim paying in every surviving state with signal `s`.
    pub fn marginal(&self, s: u8) -> f64 {
        self.prices
            .iter()
            .filter(|p| p.s == s)
            .map(|p| p.price)
            .sum()
    }
}

/// Largest `|sum_i a_i(s', x')| / (N H)` over all states when each survivor
/// demands `W'_i = beta P_i(s', x') W_i / Q` at the given prices scaled by
/// `price_scale` and newborns hold `H`.
pub fn clearing_residual_scaled(
    beliefs: &[f64],
    wealth: &[f64],
    h: f64,
    beta: f64,
    delta: f64,
    price_scale: f64,
) -> Result<f64> {
    check_agents(beliefs, wealth, MAX_CLEARING_AGENTS)?;
    let n = beliefs.len();
    let table = ArrowPriceTable::build(beliefs, wealth, h, beta, delta)?;
    let mut worst: f64 = 0.0;
    for entry in &table.prices {
        if entry.prob == 0.0 {
            continue;
        }
        let q = entry.price * price_scale;
        let excess: f64 = (0..n)
            .filter(|&i| entry.mask >> i & 1 == 1)
            .map(|i| beta * entry.prob * subjective(beliefs[i], entry.s) * wealth[i] / q - h)
            .sum();
        worst = worst.max(excess.abs() / (n as f64 * h));
    }
    Ok(worst)
}

pub fn clearing_residual(
    beliefs: &[f64],
    wealth: &[f64],
    h: f64,
    beta: f64,
    delta: f64,
) -> Result<f64> {
    clearing_residual_scaled(beliefs, wealth, h, beta, delta, 1.0)
}

/// One step of the human-wealth recursion `H_i = e + sum Q(s', x') x'_i H`
/// evaluated at the exact prices, for every agent.
pub fn human_wealth_step(
    beliefs: &[f64],
    wealth: &[f64],
    h: f64,
    beta: f64,
    delta: f64,
    endowment: f64,
) -> Result<Vec<f64>> {
    let table = ArrowPriceTable::build(beliefs, wealth, h, beta, delta)?;
    Ok((0..beliefs.len())
        .map(|i| {
            endowment
                + table
                    .prices
                    .iter()
                    .filter(|p| p.mask >> i & 1 == 1)
                    .map(|p| p.price * h)
                    .sum::<f64>()
        })
        .collect())
}

/// Relative gap between `H` and the population average of
/// [`human_wealth_step`]. Individual values coincide with `H` only when
/// positions vanish; the average is exact for any clearing allocation.
pub fn human_wealth_residual(
    beliefs: &[f64],
    wealth: &[f64],
    h: f64,
    beta: f64,
    delta: f64,
    endowment: f64,
) -> Result<f64> {
    let step = human_wealth_step(beliefs, wealth, h, beta, delta, endowment)?;
    let mean = step.iter().sum::<f64>() / step.len() as f64;
    Ok((mean - h).abs() / h)
}

/// `sum_{x'} p(x') x'_i / N(x')` by exhaustive summation, with the all-dead
/// state contributing nothing. Equals `(1 - delta^N) / N`.
pub fn survival_share(n: usize, delta: f64, agent: usize) -> Result<f64> {
    if agent >= n {
        return Err(Error::usage(format!(
            "agent {agent} out of range for N = {n}"
        )));
    }
    Ok(enumerate_states(n, delta)?
        .iter()
        .filter(|s| s.alive(agent))
        .map(|s| s.prob / s.survivors() as f64)
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LargeNGap {
    pub n_agents: usize,
    /// `|sum_{x'} Q(1, x') - beta p_imp|`; equals `beta p_imp delta^N`.
    pub marginal_gap: f64,
    /// Same comparison after conditioning on at least one survivor.
    pub conditional_gap: f64,
    /// `E[|p_imp(survivors) - p_imp| | N(x') > 0]`, the spread of the
    /// survivor-implied probability around the large-N value.
    pub dispersion_gap: f64,
    pub excluded_mass: f64,
}

/// Compares finite-N prices with the large-N price `beta p_imp` of the
/// signal-1 claim on identical beliefs and wealth.
pub fn large_n_gap(
    beliefs: &[f64],
    wealth: &[f64],
    h: f64,
    beta: f64,
    delta: f64,
) -> Result<LargeNGap> {
    check_agents(beliefs, wealth, MAX_CLEARING_AGENTS)?;
    let n = beliefs.len();
    let total: f64 = wealth.iter().sum();
    let p_imp = beliefs.iter().zip(wealth).map(|(p, w)| p * w).sum::<f64>() / total;
    let table = ArrowPriceTable::build(beliefs, wealth, h, beta, delta)?;
    let marginal = table.marginal(1);
    let live = 1.0 - table.excluded_mass;
    let mut dispersion = 0.0;
    for state in enumerate_states(n, delta)? {
        if state.mask == 0 {
            continue;
        }
        let (num, den) = (0..n)
            .filter(|&i| state.alive(i))
            .fold((0.0, 0.0), |(a, b), i| {
                (a + beliefs[i] * wealth[i], b + wealth[i])
            });
        dispersion += state.prob * (num / den - p_imp).abs();
    }
    Ok(LargeNGap {
        n_agents: n,
        marginal_gap: (marginal - beta * p_imp).abs(),
        conditional_gap: if live > 0.0 {
            (marginal / live - beta * p_imp).abs()
        } else {
            0.0
        },
        dispersion_gap: if live > 0.0 { dispersion / live } else { 0.0 },
        excluded_mass: table.excluded_mass,
    })
}

/// `copies` concatenated replicas of a base population.
pub fn replicate(base: &[f64], copies: usize) -> Vec<f64> {
    base.iter()
        .copied()
        .cycle()
        .take(base.len() * copies)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub n_agents: usize,
    pub clearing_residual: f64,
    pub human_wealth_residual: f64,
    pub survival_share: f64,
    pub survival_share_exact: f64,
    pub gap: LargeNGap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub base_beliefs: Vec<f64>,
    pub base_wealth_over_h: Vec<f64>,
    pub delta: f64,
    pub beta: f64,
    pub human_wealth: f64,
    pub rows: Vec<OracleRow>,
    pub gap_non_increasing: bool,
}

/// Runs every exhaustive check on replicas of a base instance for each
/// population size in `sizes` (each a multiple of the base length).
pub fn oracle_report(
    base_beliefs: &[f64],
    base_wealth_over_h: &[f64],
    sizes: &[usize],
    beta: f64,
    delta: f64,
    endowment: f64,
) -> Result<OracleReport> {
    let h = endowment / (1.0 - beta * (1.0 - delta));
    let m = base_beliefs.len();
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        if m == 0 || n % m != 0 {
            return Err(Error::usage(format!(
                "size {n} is not a multiple of the base population {m}"
            )));
        }
        let beliefs = replicate(base_beliefs, n / m);
        let wealth: Vec<f64> = replicate(base_wealth_over_h, n / m)
            .into_iter()
            .map(|w| w * h)
            .collect();
        rows.push(OracleRow {
            n_agents: n,
            clearing_residual: clearing_residual(&beliefs, &wealth, h, beta, delta)?,
            human_wealth_residual: human_wealth_residual(
                &beliefs, &wealth, h, beta, delta, endowment,
            )?,
            survival_share: survival_share(n, delta, 0)?,
            survival_share_exact: (1.0 - delta.powi(n as i32)) / n as f64,
            gap: large_n_gap(&beliefs, &wealth, h, beta, delta)?,
        });
    }
    let gap_non_increasing = rows
        .windows(2)
        .all(|w| w[1].gap.dispersion_gap <= w[0].gap.dispersion_gap + 1e-15);
    Ok(OracleReport {
        base_beliefs: base_beliefs.to_vec(),
        base_wealth_over_h: base_wealth_over_h.to_vec(),
        delta,
        beta,
        human_wealth: h,
        rows,
        gap_non_increasing,
    })
}
