//! Subjective beliefs, the public-opinion signal, mortality and replacement.
//!
//! Public opinion is the population-average belief; it is also the true
//! probability that the binary signal comes up 1 (optionally bent through a
//! sigmoidal feedback map). Surviving agents update with constant-gain or
//! least-squares learning; agents who die are replaced by newborns with a
//! fresh prior.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numeric::{fixed_sum, quantile_select, BLOCK};
use crate::params::ModelParams;
use crate::rng::{block_at, uniform_at, word_to_open_unit, StreamId};

/// Beliefs are kept in `[CLAMP_LO, 1 - CLAMP_LO]` after every update.
pub const CLAMP_LO: f64 = 1e-12;

#[inline(always)]
pub fn clamp_belief(p: f64) -> f64 {
    p.clamp(CLAMP_LO, 1.0 - CLAMP_LO)
}

/// Per-agent beliefs that the next signal is 1, plus the number of
/// observations each agent has made (used by least-squares learners).
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefVector {
    pub p: Vec<f64>,
    pub age: Vec<u32>,
}

impl BeliefVector {
    /// Everyone starts with age 1, i.e. their first update has gain 1.
    pub fn new(p: Vec<f64>) -> Self {
        let age = vec![1; p.len()];
        BeliefVector { p, age }
    }

    /// Independent Uniform(0, 1) priors.
    pub fn uniform_priors(n: usize, seed: u64) -> Self {
        let p = (0..n)
            .into_par_iter()
            .map(|i| clamp_belief(uniform_at(seed, StreamId::InitialBelief, i as u32, 0)))
            .collect();
        Self::new(p)
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// Who survives into the next period (`x[i] == true`) and the prior a
/// newborn in slot `i` would start with. `z` is drawn for every slot and
/// ignored where `x` is true.
#[derive(Debug, Clone, PartialEq)]
pub struct MortalityDraw {
    pub x: Vec<bool>,
    pub z: Vec<f64>,
}

impl MortalityDraw {
    pub fn all_survive(n: usize) -> Self {
        MortalityDraw {
            x: vec![true; n],
            z: vec![0.5; n],
        }
    }

    pub fn deaths(&self) -> usize {
        self.x.iter().filter(|&&alive| !alive).count()
    }
}

pub fn mean_belief(p: &[f64]) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::usage("mean of an empty belief vector"));
    }
    Ok(fixed_sum(p) / p.len() as f64)
}

/// The public signal for `period`: 1 with probability `p_true`.
#[inline]
pub fn draw_signal(p_true: f64, seed: u64, period: u32) -> u8 {
    (uniform_at(seed, StreamId::Signal, 0, period) < p_true) as u8
}

/// Mortality words for slots `4 * group .. 4 * group + 4` in `period`.
#[inline(always)]
pub fn mortality_block(seed: u64, group: u32, period: u32) -> [u32; 4] {
    block_at(seed, StreamId::Mortality, group, period)
}

#[inline(always)]
pub fn survives_word(word: u32, delta: f64) -> bool {
    word_to_open_unit(word) >= delta
}

/// Death indicator for one slot. Shared by [`apply_mortality`] and the
/// engine's fused loop so both see the same draws.
#[inline(always)]
pub fn survives(seed: u64, delta: f64, agent: u32, period: u32) -> bool {
    survives_word(
        mortality_block(seed, agent / 4, period)[(agent % 4) as usize],
        delta,
    )
}

/// Uniform newborn prior for one slot.
#[inline(always)]
pub fn newborn_prior(seed: u64, agent: u32, period: u32) -> f64 {
    uniform_at(seed, StreamId::Prior, agent, period)
}

pub fn apply_mortality(params: &ModelParams, period: u32) -> MortalityDraw {
    let (seed, delta) = (params.seed, params.delta);
    let (x, z) = (0..params.n_agents as u32)
        .into_par_iter()
        .map(|i| {
            (
                survives(seed, delta, i, period),
                newborn_prior(seed, i, period),
            )
        })
        .unzip();
    MortalityDraw { x, z }
}

#[inline(always)]
pub fn constant_gain_update(p: f64, s: u8, lambda: f64) -> f64 {
    (1.0 - lambda) * p + lambda * s as f64
}

/// Least-squares update for an agent who has made `age` observations,
/// counting the current one.
#[inline(always)]
pub fn least_squares_update(p: f64, s: u8, age: u32) -> f64 {
    let gain = 1.0 / age as f64;
    p * (1.0 - gain) + s as f64 * gain
}

fn check_lengths(beliefs: &BeliefVector, mort: &MortalityDraw) -> Result<()> {
    let n = beliefs.p.len();
    if beliefs.age.len() != n || mort.x.len() != n || mort.z.len() != n {
        return Err(Error::usage(format!(
            "length mismatch: {} beliefs, {} ages, {} survival flags, {} priors",
            n,
            beliefs.age.len(),
            mort.x.len(),
            mort.z.len()
        )));
    }
    Ok(())
}

pub fn step_constant_gain(
    beliefs: &BeliefVector,
    s: u8,
    mort: &MortalityDraw,
    lambda: f64,
) -> Result<BeliefVector> {
    check_lengths(beliefs, mort)?;
    let mut out = beliefs.clone();
    out.p
        .par_iter_mut()
        .zip(out.age.par_iter_mut())
        .zip(mort.x.par_iter().zip(mort.z.par_iter()))
        .for_each(|((p, age), (&alive, &z))| {
            if alive {
                *p = clamp_belief(constant_gain_update(*p, s, lambda));
                *age = age.saturating_add(1);
            } else {
                *p = clamp_belief(z);
                *age = 1;
            }
        });
    Ok(out)
}

pub fn step_least_squares(
    beliefs: &BeliefVector,
    s: u8,
    mort: &MortalityDraw,
) -> Result<BeliefVector> {
    check_lengths(beliefs, mort)?;
    if let Some(i) = beliefs.age.iter().position(|&a| a == 0) {
        return Err(Error::usage(format!("agent {i} has age 0")));
    }
    let mut out = beliefs.clone();
    out.p
        .par_iter_mut()
        .zip(out.age.par_iter_mut())
        .zip(mort.x.par_iter().zip(mort.z.par_iter()))
        .for_each(|((p, age), (&alive, &z))| {
            if alive {
                *p = clamp_belief(least_squares_update(*p, s, *age));
                *age = age.saturating_add(1);
            } else {
                *p = clamp_belief(z);
                *age = 1;
            }
        });
    Ok(out)
}

/// Large-N recursion for public opinion.
#[inline(always)]
pub fn public_opinion_scalar_step(p: f64, s: u8, lambda: f64, delta: f64) -> f64 {
    (1.0 - delta) * ((1.0 - lambda) * p + lambda * s as f64) + 0.5 * delta
}

/// Sigmoidal map from average belief to the true probability,
/// `(1 + tanh(zeta (p - 1/2))) / 2`; `zeta == 0` is the identity.
#[inline]
pub fn sigmoid_feedback_map(p: f64, zeta: f64) -> f64 {
    if zeta == 0.0 {
        return p;
    }
    let u = p - 0.5;
    if u == 0.0 {
        return 0.5;
    }
    0.5 * (1.0 + (zeta * u).tanh())
}

/// Mean-square forecast errors of one learner cohort.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CohortMse {
    /// Against the realized signal.
    pub vs_signal: f64,
    /// Against the hidden true probability.
    pub vs_truth: f64,
    pub agent_periods: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MseReport {
    /// `None` when the cohort is empty.
    pub constant_gain: Option<CohortMse>,
    pub least_squares: Option<CohortMse>,
}

/// Setup for [`forecast_mse_experiment`].
#[derive(Debug, Clone, Copy)]
pub struct MseExperiment {
    pub fraction_constant_gain: f64,
    pub horizon: usize,
    pub burn_in: usize,
}

/// Population where the first `round(fraction * N)` slots learn with
/// constant gain and the rest by least squares; newborns inherit their
/// slot's rule. Errors are accumulated after burn-in.
pub fn forecast_mse_experiment(params: &ModelParams, exp: MseExperiment) -> Result<MseReport> {
    if !(0.0..=1.0).contains(&exp.fraction_constant_gain) {
        return Err(Error::usage("fraction_constant_gain must lie in [0, 1]"));
    }
    if exp.horizon < exp.burn_in {
        return Err(Error::usage(format!(
            "horizon {} is shorter than burn-in {}",
            exp.horizon, exp.burn_in
        )));
    }
    let n = params.n_agents;
    let n_cg = (exp.fraction_constant_gain * n as f64).round() as usize;
    let (seed, delta, lambda) = (params.seed, params.delta, params.lambda);
    let mut beliefs = BeliefVector::uniform_priors(n, seed);

    // [cg_signal, cg_truth, ls_signal, ls_truth]
    let mut acc = [0.0f64; 4];
    for t in 0..exp.horizon {
        let period = t as u32;
        let mean = mean_belief(&beliefs.p)?;
        let p_true = sigmoid_feedback_map(mean, params.zeta);
        let s = draw_signal(p_true, seed, period);
        let record = t >= exp.burn_in;
        let sf = s as f64;

        let partials: Vec<[f64; 4]> = beliefs
            .p
            .par_chunks_mut(BLOCK)
            .zip(beliefs.age.par_chunks_mut(BLOCK))
            .enumerate()
            .map(|(c, (ps, ages))| {
                let mut part = [0.0f64; 4];
                for (k, (p, age)) in ps.iter_mut().zip(ages.iter_mut()).enumerate() {
                    let i = c * BLOCK + k;
                    let is_cg = i < n_cg;
                    if record {
                        let off = if is_cg { 0 } else { 2 };
                        part[off] += (*p - sf) * (*p - sf);
                        part[off + 1] += (*p - p_true) * (*p - p_true);
                    }
                    if survives(seed, delta, i as u32, period) {
                        *p = if is_cg {
                            constant_gain_update(*p, s, lambda)
                        } else {
                            least_squares_update(*p, s, *age)
                        };
                        *p = clamp_belief(*p);
                        *age = age.saturating_add(1);
                    } else {
                        *p = clamp_belief(newborn_prior(seed, i as u32, period));
                        *age = 1;
                    }
                }
                part
            })
            .collect();
        for part in partials {
            for (a, v) in acc.iter_mut().zip(part) {
                *a += v;
            }
        }
    }

    let periods = (exp.horizon - exp.burn_in) as u64;
    let cohort = |count: usize, sig: f64, truth: f64| {
        (count > 0 && periods > 0).then(|| {
            let m = (count as u64 * periods) as f64;
            CohortMse {
                vs_signal: sig / m,
                vs_truth: truth / m,
                agent_periods: count as u64 * periods,
            }
        })
    };
    Ok(MseReport {
        constant_gain: cohort(n_cg, acc[0], acc[1]),
        least_squares: cohort(n - n_cg, acc[2], acc[3]),
    })
}

/// One row of a belief-path recording.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct OpinionRow {
    pub period: usize,
    pub mean_belief: f64,
    pub p20: f64,
    pub p80: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpinionRule {
    /// Immortal least-squares learners (the urn-like economy).
    LeastSquares,
    ConstantGain,
}

/// Simulates the belief population alone (no market) and records the mean
/// belief with its 20th/80th percentile band every period. With
/// `initial_mean`, everyone starts at that belief instead of a uniform prior.
pub fn simulate_opinion_path(
    params: &ModelParams,
    rule: OpinionRule,
    horizon: usize,
    initial_mean: Option<f64>,
) -> Result<Vec<OpinionRow>> {
    let n = params.n_agents;
    let (seed, lambda, zeta) = (params.seed, params.lambda, params.zeta);
    let delta = match rule {
        OpinionRule::LeastSquares => 0.0,
        OpinionRule::ConstantGain => params.delta,
    };
    let mut beliefs = match initial_mean {
        Some(p0) => BeliefVector::new(vec![clamp_belief(p0); n]),
        None => BeliefVector::uniform_priors(n, seed),
    };
    let mut rows = Vec::with_capacity(horizon);
    let mut scratch = vec![0.0; n];
    for t in 0..horizon {
        let period = t as u32;
        let mean = mean_belief(&beliefs.p)?;
        scratch.copy_from_slice(&beliefs.p);
        let p20 = quantile_select(&mut scratch, 0.2);
        let p80 = quantile_select(&mut scratch, 0.8);
        rows.push(OpinionRow {
            period: t,
            mean_belief: mean,
            p20,
            p80,
        });
        let s = draw_signal(sigmoid_feedback_map(mean, zeta), seed, period);
        beliefs
            .p
            .par_iter_mut()
            .zip(beliefs.age.par_iter_mut())
            .enumerate()
            .for_each(|(i, (p, age))| {
                let i = i as u32;
                if delta > 0.0 && !survives(seed, delta, i, period) {
                    *p = clamp_belief(newborn_prior(seed, i, period));
                    *age = 1;
                    return;
                }
                *p = clamp_belief(match rule {
                    OpinionRule::LeastSquares => least_squares_update(*p, s, *age),
                    OpinionRule::ConstantGain => constant_gain_update(*p, s, lambda),
                });
                *age = age.saturating_add(1);
            });
    }
    Ok(rows)
}
