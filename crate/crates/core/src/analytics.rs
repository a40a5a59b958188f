//! Closed-form results and the small Monte Carlo estimators used to check
//! them.
//!
//! Beliefs are written in the centred coordinate `u = P - 1/2` where that is
//! the natural variable. Histograms always live on `P` in `[0, 1]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, inv_beta_reg};
use statrs::function::gamma::ln_gamma;

use crate::belief_dynamics::{public_opinion_scalar_step, sigmoid_feedback_map};
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::rng::{derive_stream, CounterStream, StreamId};

/// Default threshold for the ergodic time.
pub const DEFAULT_EPSILON: f64 = 0.05;
/// Default bin count for total-variation distances.
pub const DEFAULT_TV_BINS: usize = 50;

fn log_norm(alpha: f64) -> f64 {
    ln_gamma(2.0 * alpha) - 2.0 * ln_gamma(alpha)
}

/// Stationary density of public opinion in the centred coordinate,
/// `Gamma(2 alpha) / Gamma(alpha)^2 (1/4 - u^2)^(alpha - 1)`.
pub fn stationary_density(u: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::domain(format!("alpha = {alpha} must be positive")));
    }
    let gap = 0.25 - u * u;
    if gap <= 0.0 {
        return if alpha > 1.0 {
            Ok(0.0)
        } else if alpha == 1.0 {
            Ok(if gap == 0.0 { 1.0 } else { 0.0 })
        } else {
            Err(Error::domain(format!(
                "density diverges at u = {u} for alpha < 1"
            )))
        };
    }
    Ok((log_norm(alpha) + (alpha - 1.0) * gap.ln()).exp())
}

/// Total mass of [`stationary_density`], integrated after the substitution
/// `u = tanh(t) / 2`, which removes the endpoint singularity for `alpha < 1`.
pub fn stationary_mass(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::domain(format!("alpha = {alpha} must be positive")));
    }
    // Integrand in t: C 4^(1-alpha) sech(t)^(2 alpha) / 2.
    let log_c = log_norm(alpha) + (1.0 - alpha) * 4f64.ln() - 2f64.ln();
    let t_max = 40.0 / alpha.min(1.0);
    let n = 40_000;
    let h = 2.0 * t_max / n as f64;
    let total: f64 = (0..=n)
        .map(|k| {
            let t = -t_max + k as f64 * h;
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            let log_sech = -t.abs() - (1.0 + (-2.0 * t.abs()).exp()).ln() + 2f64.ln();
            w * (log_c + 2.0 * alpha * log_sech).exp()
        })
        .sum();
    Ok(total * h)
}

/// Stationary probability of each of `bins` equal cells of `P` in `[0, 1]`.
pub fn stationary_bin_masses(alpha: f64, bins: usize) -> Vec<f64> {
    let cdf: Vec<f64> = (0..=bins)
        .map(|k| beta_reg(alpha, alpha, k as f64 / bins as f64))
        .collect();
    cdf.windows(2).map(|w| w[1] - w[0]).collect()
}

/// `q`-quantile of the stationary law of `P`.
pub fn stationary_quantile(alpha: f64, q: f64) -> f64 {
    inv_beta_reg(alpha, alpha, q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub u_grid: Vec<f64>,
    pub density: Vec<f64>,
}

impl DensityCurve {
    /// Density on `grid_size` equally spaced points. The endpoints are
    /// included for `alpha >= 1`; for `alpha < 1` the grid holds cell
    /// midpoints so every value is finite.
    pub fn stationary(alpha: f64, grid_size: usize) -> Result<Self> {
        if grid_size < 2 {
            return Err(Error::usage("density grid needs at least two points"));
        }
        let u_grid: Vec<f64> = if alpha >= 1.0 {
            (0..grid_size)
                .map(|k| -0.5 + k as f64 / (grid_size - 1) as f64)
                .collect()
        } else {
            (0..grid_size)
                .map(|k| -0.5 + (k as f64 + 0.5) / grid_size as f64)
                .collect()
        };
        let density = u_grid
            .iter()
            .map(|&u| stationary_density(u, alpha))
            .collect::<Result<_>>()?;
        Ok(DensityCurve { u_grid, density })
    }

    pub fn trapezoid_integral(&self) -> f64 {
        self.u_grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(u, d)| 0.5 * (u[1] - u[0]) * (d[0] + d[1]))
            .sum()
    }
}

/// Variance of an individual's disagreement with public opinion,
/// `lambda / (2 + (alpha - 1) lambda) * alpha (alpha + 2) / (6 (2 alpha + 1))`.
pub fn disagreement_variance(lambda: f64, alpha: f64) -> f64 {
    lambda / (2.0 + (alpha - 1.0) * lambda) * alpha * (alpha + 2.0) / (6.0 * (2.0 * alpha + 1.0))
}

/// Unexpanded form of the same variance,
/// `delta / (6 (1 - (1 - delta)(1 - lambda)^2)) * (2 + alpha) / (1 + 2 alpha)`.
pub fn disagreement_variance_unexpanded(lambda: f64, delta: f64) -> f64 {
    let alpha = delta / (lambda * lambda);
    let q = 1.0 - lambda;
    delta / (6.0 * (1.0 - (1.0 - delta) * q * q)) * (2.0 + alpha) / (1.0 + 2.0 * alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct REstimatorStats {
    pub bias: f64,
    pub sd: f64,
    /// Width of the boundary region where the bias becomes detectable.
    pub sliver: f64,
}

/// Conditional bias and standard deviation of the constant-gain estimator
/// of public opinion.
pub fn r_estimator_stats(p0: f64, lambda: f64, delta: f64) -> Result<REstimatorStats> {
    if !(0.0..=1.0).contains(&p0) {
        return Err(Error::domain(format!("p0 = {p0} outside [0, 1]")));
    }
    Ok(REstimatorStats {
        bias: delta / lambda * (p0 - 0.5),
        sd: (0.5 * lambda * p0 * (1.0 - p0)).sqrt(),
        sliver: delta * delta / (2.0 * lambda.powi(3)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct REstimatorSample {
    pub horizon: usize,
    pub paths: usize,
    /// Mean of `R_t - P_t` with `R` and `P` driven by the same signals.
    pub bias: f64,
    /// Standard error of `bias`.
    pub bias_se: f64,
    /// Standard deviation of `R_t` when `P` is held at `p0`.
    pub sd: f64,
}

/// Monte Carlo counterpart of [`r_estimator_stats`].
///
/// The bias is measured on the coupled system: public opinion follows the
/// large-N recursion, the estimator follows the constant-gain rule on the
/// same signals, both start at `p0`. The spread is measured with public
/// opinion frozen at `p0`, which isolates sampling noise from the drift of
/// `P` itself.
pub fn r_estimator_monte_carlo(
    p0: f64,
    lambda: f64,
    delta: f64,
    paths: usize,
    horizon: usize,
    seed: u64,
) -> Result<REstimatorSample> {
    if paths < 2 {
        return Err(Error::usage("need at least two paths"));
    }
    let (bias_sum, bias_sq, r_sum, r_sq) = (0..paths as u32)
        .into_par_iter()
        .map(|k| {
            let mut coupled = derive_stream(seed, StreamId::Ensemble, k, 0);
            let (mut p, mut r) = (p0, p0);
            for _ in 0..horizon {
                let s = coupled.bernoulli(p);
                r = (1.0 - lambda) * r + lambda * s as f64;
                p = public_opinion_scalar_step(p, s, lambda, delta);
            }
            let mut frozen = derive_stream(seed, StreamId::Ensemble, k, 1);
            let mut rf = p0;
            for _ in 0..horizon {
                rf = (1.0 - lambda) * rf + lambda * frozen.bernoulli(p0) as f64;
            }
            let d = r - p;
            (d, d * d, rf, rf * rf)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0.0, 0.0, 0.0), |a, b| {
            (a.0 + b.0, a.1 + b.1, a.2 + b.2, a.3 + b.3)
        });
    let n = paths as f64;
    let bias = bias_sum / n;
    let bias_var = (bias_sq / n - bias * bias).max(0.0) * n / (n - 1.0);
    let r_mean = r_sum / n;
    let r_var = (r_sq / n - r_mean * r_mean).max(0.0) * n / (n - 1.0);
    Ok(REstimatorSample {
        horizon,
        paths,
        bias,
        bias_se: (bias_var / n).sqrt(),
        sd: r_var.sqrt(),
    })
}

/// Exact mean of `R_t - P_t` on the coupled system:
/// `(P0 - 1/2) delta / (lambda - delta) ((1 - delta)^t - (1 - lambda)^t)`.
pub fn r_estimator_exact_bias(p0: f64, lambda: f64, delta: f64, t: usize) -> f64 {
    let t = t as i32;
    (p0 - 0.5) * delta / (lambda - delta) * ((1.0 - delta).powi(t) - (1.0 - lambda).powi(t))
}

/// Periods after which an observation's weight falls below `epsilon`.
pub fn memory_time(lambda: f64, epsilon: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda < 1.0 && epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::domain(
            "memory time needs lambda and epsilon in (0, 1)",
        ));
    }
    Ok(epsilon.ln() / (1.0 - lambda).ln())
}

/// Half the L1 distance between two normalised histograms.
pub fn tv_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::usage(format!(
            "histograms have {} and {} bins",
            a.len(),
            b.len()
        )));
    }
    Ok(0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

/// Normalised histogram of values in `[0, 1]` on `bins` equal cells.
pub fn unit_histogram(values: &[f64], bins: usize) -> Vec<f64> {
    let mut counts = vec![0u64; bins];
    for &v in values {
        counts[((v * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let n = values.len().max(1) as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

/// Scalar public-opinion recursion with the signal drawn at the (possibly
/// sigmoidal) true probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpinionProcess {
    pub lambda: f64,
    pub delta: f64,
    pub zeta: f64,
}

impl OpinionProcess {
    pub fn new(lambda: f64, delta: f64) -> Self {
        OpinionProcess {
            lambda,
            delta,
            zeta: 0.0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.delta / (self.lambda * self.lambda)
    }

    #[inline(always)]
    pub fn step(&self, p: f64, rng: &mut CounterStream) -> f64 {
        let s = rng.bernoulli(sigmoid_feedback_map(p, self.zeta));
        public_opinion_scalar_step(p, s, self.lambda, self.delta)
    }

    /// Pools `samples` values per path, spaced `spacing` periods apart after
    /// `burn_in` periods, from `paths` independent paths started at `p0`.
    pub fn pooled_samples(
        &self,
        p0: f64,
        paths: usize,
        burn_in: usize,
        samples: usize,
        spacing: usize,
        seed: u64,
    ) -> Vec<f64> {
        (0..paths as u32)
            .into_par_iter()
            .flat_map_iter(|k| {
                let mut rng = derive_stream(seed, StreamId::Ensemble, k, 0);
                let mut p = p0;
                for _ in 0..burn_in {
                    p = self.step(p, &mut rng);
                }
                let mut out = Vec::with_capacity(samples);
                for _ in 0..samples {
                    for _ in 0..spacing {
                        p = self.step(p, &mut rng);
                    }
                    out.push(p);
                }
                out
            })
            .collect()
    }
}

/// Starting points for the ergodic-time ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErgodicInit {
    /// `points` starting values at the stationary quantiles
    /// `(k + 1/2) / points`, each carrying equal weight.
    Stationary { points: usize },
    /// A single starting value, giving the conditional mixing curve.
    Fixed { p0: f64 },
}

/// Law the ensemble is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErgodicReference {
    /// The continuum-limit beta law. Accurate only for small `lambda` and
    /// `delta`.
    Beta,
    /// The long-run law of the discrete recursion itself, from `paths`
    /// independent paths each contributing `samples` values spaced `1/(2
    /// delta)` periods apart after a burn-in of `10 / delta` periods.
    LongRun { paths: usize, samples: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErgodicSetup {
    pub init: ErgodicInit,
    pub reference: ErgodicReference,
    pub paths_per_point: usize,
    pub bins: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for ErgodicSetup {
    fn default() -> Self {
        ErgodicSetup {
            init: ErgodicInit::Stationary { points: 10 },
            reference: ErgodicReference::LongRun {
                paths: 2000,
                samples: 200,
            },
            paths_per_point: 20_000,
            bins: 10,
            checkpoint_every: 1,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicReport {
    pub epsilon: f64,
    /// First checkpoint with distance below `epsilon`; `None` when censored.
    pub t_e: Option<usize>,
    pub censored: bool,
    /// `(period, averaged distance)` at each checkpoint.
    pub tv_series: Vec<(usize, f64)>,
    pub ensemble_size: usize,
    /// Expected distance of an exact sample of this size from the
    /// reference, `sum_k sqrt(m_k (1 - m_k) / (2 pi M))`.
    pub noise_floor: f64,
}

/// Ergodic time of the scalar opinion recursion. The distance at each
/// checkpoint is the binned total variation between the ensemble started
/// at each initial point and the stationary law, averaged over initial
/// points.
pub fn ergodic_time_estimate(
    lambda: f64,
    delta: f64,
    epsilon: f64,
    setup: ErgodicSetup,
    horizon: usize,
) -> Result<ErgodicReport> {
    if setup.paths_per_point == 0 || setup.bins == 0 || setup.checkpoint_every == 0 {
        return Err(Error::usage(
            "ergodic setup needs positive paths, bins and stride",
        ));
    }
    let process = OpinionProcess::new(lambda, delta);
    let alpha = process.alpha();
    let (reference, long_run) = match setup.reference {
        ErgodicReference::Beta => (stationary_bin_masses(alpha, setup.bins), None),
        ErgodicReference::LongRun { paths, samples } => {
            let burn_in = (10.0 / delta).ceil() as usize;
            let spacing = (0.5 / delta).ceil() as usize;
            // Seed offset keeps the reference independent of the ensemble.
            let mut pooled = process.pooled_samples(
                0.5,
                paths,
                burn_in,
                samples,
                spacing,
                setup.seed ^ 0x5e_ed0f_7e7e,
            );
            crate::numeric::sort_ascending(&mut pooled);
            (unit_histogram(&pooled, setup.bins), Some(pooled))
        }
    };
    let starts: Vec<f64> = match setup.init {
        ErgodicInit::Stationary { points } => (0..points)
            .map(|k| {
                let q = (k as f64 + 0.5) / points as f64;
                match &long_run {
                    Some(sorted) => crate::numeric::quantile_sorted(sorted, q),
                    None => stationary_quantile(alpha, q),
                }
            })
            .collect(),
        ErgodicInit::Fixed { p0 } => vec![p0],
    };
    if starts.is_empty() {
        return Err(Error::usage(
            "ergodic ensemble needs at least one starting point",
        ));
    }
    let m = setup.paths_per_point;
    let mut state: Vec<(f64, CounterStream)> = starts
        .iter()
        .enumerate()
        .flat_map(|(k, &p0)| {
            (0..m).map(move |j| {
                let id = (k * m + j) as u32;
                (p0, derive_stream(setup.seed, StreamId::Ensemble, id, 0))
            })
        })
        .collect();

    let distance = |state: &[(f64, CounterStream)]| -> f64 {
        let total: f64 = state
            .par_chunks(m)
            .map(|group| {
                let values: Vec<f64> = group.iter().map(|(p, _)| *p).collect();
                tv_distance(&unit_histogram(&values, setup.bins), &reference).unwrap()
            })
            .collect::<Vec<_>>()
            .iter()
            .sum();
        total / starts.len() as f64
    };

    let mut tv_series = vec![(0, distance(&state))];
    let mut t_e = None;
    let mut t = 0;
    while t < horizon {
        let steps = setup.checkpoint_every.min(horizon - t);
        state.par_iter_mut().for_each(|(p, rng)| {
            for _ in 0..steps {
                *p = process.step(*p, rng);
            }
        });
        t += steps;
        let d = distance(&state);
        tv_series.push((t, d));
        if d < epsilon {
            t_e = Some(t);
            break;
        }
    }
    let noise_floor = reference
        .iter()
        .map(|&q| (q * (1.0 - q) / (2.0 * std::f64::consts::PI * m as f64)).sqrt())
        .sum();
    Ok(ErgodicReport {
        epsilon,
        t_e,
        censored: t_e.is_none(),
        tv_series,
        ensemble_size: starts.len() * m,
        noise_floor,
    })
}

/// `max |alpha [u P]' + 1/2 [(1/4 - u^2) P]''|` over an interior grid, with
/// derivatives from central differences of step `1 / grid_size`.
pub fn fp_residual_of<F>(density: F, alpha: f64, grid_size: usize) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    if grid_size < 10 {
        return Err(Error::usage("grid_size must be at least 10"));
    }
    let h = 1.0 / grid_size as f64;
    let margin = if alpha < 1.0 { 0.05 } else { 2.0 * h };
    let flux = |u: f64| -> Result<f64> { Ok(alpha * u * density(u)?) };
    let diff = |u: f64| -> Result<f64> { Ok(0.5 * (0.25 - u * u) * density(u)?) };
    let mut worst: f64 = 0.0;
    let mut k = 0;
    loop {
        let u = -0.5 + margin + k as f64 * h;
        if u > 0.5 - margin + 1e-12 {
            break;
        }
        let d1 = (flux(u + h)? - flux(u - h)?) / (2.0 * h);
        let d2 = (diff(u + h)? - 2.0 * diff(u)? + diff(u - h)?) / (h * h);
        worst = worst.max((d1 + d2).abs());
        k += 1;
    }
    Ok(worst)
}

/// [`fp_residual_of`] at the closed-form stationary density.
pub fn fp_residual(alpha: f64, grid_size: usize) -> Result<f64> {
    fp_residual_of(|u| stationary_density(u, alpha), alpha, grid_size)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ParetoMode {
    /// Independent returns with variance `sigma2` each period.
    Iid { delta: f64, sigma2: f64 },
    /// Returns persistent over a learning window `1 / lambda`.
    Correlated {
        delta: f64,
        lambda: f64,
        sigma_bar2: f64,
    },
    /// Independent returns with a proportional wealth tax `phi`.
    Taxed { phi: f64, delta: f64, sigma2: f64 },
    /// Limit of the correlated form as mortality vanishes.
    Delta0 { lambda: f64 },
}

/// Tail exponent of the wealth distribution.
pub fn pareto_exponent(mode: ParetoMode) -> Result<f64> {
    let nonzero = |s: f64| {
        if s > 0.0 {
            Ok(())
        } else {
            Err(Error::domain("return variance must be positive"))
        }
    };
    match mode {
        ParetoMode::Iid { delta, sigma2 } => {
            nonzero(sigma2)?;
            Ok(0.5 * (1.0 + (1.0 + 8.0 * delta / sigma2).sqrt()))
        }
        ParetoMode::Correlated {
            delta,
            lambda,
            sigma_bar2,
        } => {
            nonzero(sigma_bar2)?;
            Ok(0.5 * (1.0 + (1.0 + 8.0 * delta * lambda / sigma_bar2).sqrt()))
        }
        ParetoMode::Taxed { phi, delta, sigma2 } => {
            nonzero(sigma2)?;
            Ok((phi + (phi * phi + 2.0 * delta * sigma2).sqrt()) / sigma2)
        }
        ParetoMode::Delta0 { lambda } => Ok(0.5 * (1.0 + (1.0 + 8.0 * lambda).sqrt())),
    }
}

/// Root of `1 = (1 - delta) E[((1 - phi)(1 + eta))^mu]` for two-point
/// returns `eta = +-sigma`, by bisection.
pub fn kesten_exponent_two_point(delta: f64, sigma: f64, phi: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma < 1.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain("need sigma and delta in (0, 1)"));
    }
    let g = |mu: f64| {
        (1.0 - delta)
            * (1.0 - phi).powf(mu)
            * 0.5
            * ((1.0 + sigma).powf(mu) + (1.0 - sigma).powf(mu))
            - 1.0
    };
    // g(0) = -delta < 0 and g grows without bound, so a root exceeds 0.
    let (mut lo, mut hi) = (0.0, 1.0);
    while g(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::domain("no finite tail exponent"));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Terminal cross-section of `n_paths` independent multiplicative processes
/// with reset: each period wealth becomes `1` with probability `delta`,
/// otherwise `(1 - phi) W (1 + eta) + phi` with `eta = +-sigma` equally
/// likely. The additive `phi` term redistributes the levy at the
/// population mean, which stays at its initial value of 1.
pub fn iid_reset_oracle_taxed(
    delta: f64,
    sigma: f64,
    phi: f64,
    n_paths: usize,
    horizon: usize,
    seed: u64,
) -> Vec<f64> {
    // One 32-bit word per period: the low bit picks the sign of eta, the
    // remaining 31 bits decide the reset.
    let reset_below = (delta * (1u64 << 31) as f64).round() as u32;
    let always = delta >= 1.0;
    let up = (1.0 - phi) * (1.0 + sigma);
    let down = (1.0 - phi) * (1.0 - sigma);
    (0..n_paths as u32)
        .into_par_iter()
        .map(|k| {
            let mut rng = derive_stream(seed, StreamId::Kesten, k, 0);
            let mut w = 1.0;
            for _ in 0..horizon {
                let word = rng.next_u32();
                if always || (word >> 1) < reset_below {
                    w = 1.0;
                } else {
                    w = w * if word & 1 == 1 { up } else { down } + phi;
                }
            }
            w
        })
        .collect()
}

/// [`iid_reset_oracle_taxed`] without the tax.
pub fn iid_reset_oracle(
    delta: f64,
    sigma: f64,
    n_paths: usize,
    horizon: usize,
    seed: u64,
) -> Vec<f64> {
    iid_reset_oracle_taxed(delta, sigma, 0.0, n_paths, horizon, seed)
}

/// Mutual-persuasion threshold `2 (1 + delta / lambda)` above which the
/// sigmoidal opinion dynamics become bistable.
pub fn critical_zeta(lambda: f64, delta: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::domain("lambda must be positive"));
    }
    Ok(2.0 * (1.0 + delta / lambda))
}

/// `log(cosh(x))` without overflow.
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Effective potential `(delta + lambda) u^2 / 2 - lambda / (2 zeta) log cosh(zeta u)`
/// of the sigmoidal opinion drift.
pub fn potential(u: f64, lambda: f64, delta: f64, zeta: f64) -> f64 {
    let quad = 0.5 * (delta + lambda) * u * u;
    let x = zeta * u;
    if x.abs() < 1e-4 {
        // log cosh x = x^2/2 - x^4/12 + O(x^6)
        let x2 = x * x;
        return quad - 0.5 * lambda * zeta * u * u * (0.5 - x2 / 12.0);
    }
    quad - lambda / (2.0 * zeta) * log_cosh(x)
}

/// Every closed-form quantity for one parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedForms {
    pub alpha: f64,
    pub beta: f64,
    pub human_wealth: f64,
    pub dispersion_variance: f64,
    pub dispersion_sd: f64,
    pub dispersion_variance_unexpanded: f64,
    pub memory_time_inv_e: f64,
    pub memory_time_epsilon: f64,
    pub epsilon: f64,
    pub critical_zeta: f64,
    pub mu_delta0: f64,
    pub r_estimator_sliver: f64,
    /// Bias and SD of the R-estimator at `P_0 = 0.05, 0.10, ..., 0.95`.
    pub r_estimator: Vec<(f64, REstimatorStats)>,
    /// `(alpha, SD)` of belief dispersion at this `delta`, for `alpha` from
    /// 0.1 to 10 on a log grid.
    pub dispersion_curve: Vec<(f64, f64)>,
    pub pe_ratio_bounds: (f64, f64),
    pub bond_price: f64,
}

pub fn closed_forms(params: &ModelParams) -> Result<ClosedForms> {
    use crate::market_large_n::{bond_price, equity_price, human_wealth, pe_ratio};
    let (lambda, delta) = (params.lambda, params.delta);
    let alpha = params.alpha();
    let beta = params.beta();
    let var = disagreement_variance(lambda, alpha);
    let pe = |p| -> Result<f64> {
        Ok(pe_ratio(
            equity_price(p, params.dividend, beta, delta)?,
            params.dividend,
        ))
    };
    let r_estimator = (1..=19)
        .map(|k| {
            let p0 = k as f64 * 0.05;
            Ok((p0, r_estimator_stats(p0, lambda, delta)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let dispersion_curve = (0..=40)
        .map(|k| {
            let a = 10f64.powf(-1.0 + k as f64 / 20.0);
            let l = (delta / a).sqrt();
            (a, disagreement_variance(l, a).sqrt())
        })
        .collect();
    Ok(ClosedForms {
        alpha,
        beta,
        human_wealth: human_wealth(beta, delta, params.endowment)?,
        dispersion_variance: var,
        dispersion_sd: var.sqrt(),
        dispersion_variance_unexpanded: disagreement_variance_unexpanded(lambda, delta),
        memory_time_inv_e: memory_time(lambda, (-1f64).exp())?,
        memory_time_epsilon: memory_time(lambda, DEFAULT_EPSILON)?,
        epsilon: DEFAULT_EPSILON,
        critical_zeta: critical_zeta(lambda, delta)?,
        mu_delta0: pareto_exponent(ParetoMode::Delta0 { lambda })?,
        r_estimator_sliver: delta * delta / (2.0 * lambda.powi(3)),
        r_estimator,
        dispersion_curve,
        pe_ratio_bounds: (pe(0.0)?, pe(1.0)?),
        bond_price: bond_price(beta),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const L_ROUNDED: f64 = 0.019748;

    #[test]
    fn density_examples() {
        for u in [-0.49, -0.2, 0.0, 0.3] {
            assert!((stationary_density(u, 1.0).unwrap() - 1.0).abs() < 1e-12);
        }
        assert!((stationary_density(0.0, 2.0).unwrap() - 1.5).abs() < 1e-12);
        assert!(stationary_density(0.49, 0.5).unwrap() > stationary_density(0.0, 0.5).unwrap());
        assert_eq!(stationary_density(0.5, 2.0).unwrap(), 0.0);
        assert!(matches!(
            stationary_density(0.5, 0.5),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn density_normalised() {
        for alpha in [0.5, 1.0, 2.0, 0.3, 5.0] {
            let m = stationary_mass(alpha).unwrap();
            assert!((m - 1.0).abs() < 1e-6, "alpha {alpha}: {m}");
        }
        for alpha in [1.0, 2.0] {
            let c = DensityCurve::stationary(alpha, 10_001).unwrap();
            assert!((c.trapezoid_integral() - 1.0).abs() < 1e-6);
        }
        let masses = stationary_bin_masses(2.0, 50);
        assert!((masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn variance_examples() {
        let sd = disagreement_variance(L_ROUNDED, 1.0).sqrt();
        assert!((sd - 4.06e-2).abs() < 5e-4, "{sd}");
        assert!((disagreement_variance(0.02, 2.0) - 2.6403e-3).abs() < 1e-7);
        // As alpha grows the variance approaches lambda / (2 + alpha lambda) alpha / 12.
        let lambda = 0.5;
        let big = disagreement_variance(lambda, 1e7);
        assert!((big - 1.0 / 12.0).abs() < 1e-3, "{big}");
    }

    #[test]
    fn variance_forms_agree_to_leading_order() {
        for alpha in [0.5, 1.0, 2.0] {
            for lambda in [0.005, 0.01, 0.02] {
                let delta = alpha * lambda * lambda;
                let ratio = disagreement_variance_unexpanded(lambda, delta)
                    / disagreement_variance(lambda, alpha);
                assert!(
                    (ratio - 1.0).abs() < 3.0 * lambda,
                    "{alpha} {lambda}: {ratio}"
                );
            }
        }
    }

    #[test]
    fn variance_increasing_in_lambda() {
        for alpha in [0.5, 1.0, 2.0] {
            let v: Vec<f64> = (1..200)
                .map(|k| disagreement_variance(k as f64 * 0.001, alpha))
                .collect();
            assert!(v.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn r_estimator_examples() {
        assert_eq!(r_estimator_stats(0.5, L_ROUNDED, 3.9e-4).unwrap().bias, 0.0);
        let s = r_estimator_stats(0.9, L_ROUNDED, 3.9e-4).unwrap();
        assert!((s.bias - 7.90e-3).abs() < 1e-5, "{}", s.bias);
        let s = r_estimator_stats(0.5, L_ROUNDED, 3.9e-4).unwrap();
        assert!((s.sd - 4.97e-2).abs() < 1e-4, "{}", s.sd);
    }

    #[test]
    fn exact_bias_matches_recursion() {
        let (lambda, delta, p0) = (0.05, 0.002, 0.8);
        // Mean recursions: m' = (1-delta) [(1-lambda) m + lambda m], r' = (1-lambda) r + lambda m.
        let (mut m, mut r) = (p0 - 0.5, p0 - 0.5);
        for t in 1..=300 {
            let next_m = (1.0 - delta) * m;
            r = (1.0 - lambda) * r + lambda * m;
            m = next_m;
            let exact = r_estimator_exact_bias(p0, lambda, delta, t);
            assert!((r - m - exact).abs() < 1e-14, "{t}");
        }
    }

    #[test]
    fn r_estimator_monte_carlo_small() {
        let (lambda, delta) = (0.05, 0.0025);
        let sample = r_estimator_monte_carlo(0.8, lambda, delta, 4000, 100, 3).unwrap();
        let exact = r_estimator_exact_bias(0.8, lambda, delta, 100);
        assert!((sample.bias - exact).abs() < 4.0 * sample.bias_se + 1e-12);
        let sd = (lambda / (2.0 - lambda) * 0.16).sqrt();
        assert!((sample.sd / sd - 1.0).abs() < 0.05);
    }

    #[test]
    fn memory_time_examples() {
        assert!((memory_time(0.5, 0.25).unwrap() - 2.0).abs() < 1e-12);
        assert!((memory_time(0.14, (-1f64).exp()).unwrap() - 6.63).abs() < 0.01);
        assert!((memory_time(L_ROUNDED, (-1f64).exp()).unwrap() - 50.1).abs() < 0.1);
    }

    #[test]
    fn tv_examples() {
        let a = [0.25, 0.25, 0.5];
        assert_eq!(tv_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!(matches!(
            tv_distance(&[1.0], &[0.5, 0.5]),
            Err(Error::Usage(_))
        ));

        // 1/2 int |1 - 6x(1-x)| dx by fine midpoint quadrature. The integral
        // without the factor 1/2 is 0.385.
        let n = 1_000_000;
        let quad: f64 = (0..n)
            .map(|k| {
                let x = (k as f64 + 0.5) / n as f64;
                (1.0 - 6.0 * x * (1.0 - x)).abs()
            })
            .sum::<f64>()
            * 0.5
            / n as f64;
        assert!((2.0 * quad - 0.385).abs() < 1e-3, "{quad}");
        let uniform = vec![1.0 / 50.0; 50];
        let tv = tv_distance(&uniform, &stationary_bin_masses(2.0, 50)).unwrap();
        assert!((tv - quad).abs() < 0.02);
    }

    #[test]
    fn ergodic_time_fast_resampling() {
        let setup = ErgodicSetup {
            paths_per_point: 5000,
            ..ErgodicSetup::default()
        };
        // delta = 0.5 with alpha = 1 resamples half the population per period.
        let report = ergodic_time_estimate(0.5f64.sqrt(), 0.5, DEFAULT_EPSILON, setup, 50).unwrap();
        assert!(report.t_e.unwrap() <= 5, "{:?}", report.t_e);
        assert!(!report.censored);
    }

    #[test]
    fn ergodic_time_censored() {
        let setup = ErgodicSetup {
            init: ErgodicInit::Fixed { p0: 0.5 },
            paths_per_point: 1000,
            ..ErgodicSetup::default()
        };
        let report = ergodic_time_estimate(0.01, 1e-4, DEFAULT_EPSILON, setup, 20).unwrap();
        assert!(report.censored);
        assert_eq!(report.tv_series.len(), 21);
    }

    #[test]
    fn fp_residual_examples() {
        assert!(fp_residual(1.0, 1000).unwrap() <= 1e-8);
        let coarse = fp_residual(2.0, 500).unwrap();
        let fine = fp_residual(2.0, 1000).unwrap();
        assert!(fine < coarse);
        assert!((coarse / fine - 4.0).abs() < 0.5, "{coarse} {fine}");
        let gauss = |u: f64| Ok((-u * u / 0.02).exp() / (0.02 * std::f64::consts::PI).sqrt());
        assert!(fp_residual_of(gauss, 1.0, 1000).unwrap() > 0.1);
        assert!(fp_residual(0.5, 1000).unwrap() < 1e-3);
    }

    #[test]
    fn pareto_examples() {
        let iid = |delta, sigma2| pareto_exponent(ParetoMode::Iid { delta, sigma2 }).unwrap();
        assert_eq!(iid(0.01, 0.01), 2.0);
        let d0 = pareto_exponent(ParetoMode::Delta0 { lambda: 0.14 }).unwrap();
        assert!((d0 - 1.23).abs() < 0.005, "{d0}");
        let taxed = pareto_exponent(ParetoMode::Taxed {
            phi: 0.0,
            delta: 1e-4,
            sigma2: 1e-4,
        })
        .unwrap();
        assert!((taxed - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(iid(1e-4, 1e-4), 2.0);
        assert!(matches!(
            pareto_exponent(ParetoMode::Iid {
                delta: 0.1,
                sigma2: 0.0
            }),
            Err(Error::Domain(_))
        ));
        // Correlated form with delta -> 0 at sigma_bar^2 = delta tends to the limit form.
        let lambda = 0.14;
        let c = pareto_exponent(ParetoMode::Correlated {
            delta: 1e-9,
            lambda,
            sigma_bar2: 1e-9,
        })
        .unwrap();
        assert!((c - d0).abs() < 1e-12);
    }

    #[test]
    fn pareto_monotonicity() {
        for k in 1..100 {
            let delta = k as f64 * 1e-3;
            for sigma2 in [1e-4, 1e-2, 1.0] {
                assert!(pareto_exponent(ParetoMode::Iid { delta, sigma2 }).unwrap() >= 1.0);
            }
        }
        let taxed: Vec<f64> = (0..50)
            .map(|k| {
                pareto_exponent(ParetoMode::Taxed {
                    phi: k as f64 * 1e-3,
                    delta: 0.01,
                    sigma2: 0.01,
                })
                .unwrap()
            })
            .collect();
        assert!(taxed.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn kesten_two_point_root() {
        let mu = kesten_exponent_two_point(0.01, 0.1, 0.0).unwrap();
        assert!((mu - 2.0).abs() < 0.01, "{mu}");
        let lhs = 0.99 * 0.5 * (1.1f64.powf(mu) + 0.9f64.powf(mu));
        assert!((lhs - 1.0).abs() < 1e-12);
        let taxed = kesten_exponent_two_point(0.01, 0.1, 0.005).unwrap();
        assert!(taxed > mu);
    }

    #[test]
    fn reset_oracle_degenerate_cases() {
        assert!(iid_reset_oracle(1.0, 0.1, 500, 50, 1)
            .iter()
            .all(|&w| w == 1.0));
        assert!(iid_reset_oracle(0.05, 0.0, 500, 50, 1)
            .iter()
            .all(|&w| w == 1.0));
    }

    #[test]
    fn reset_oracle_mean_is_one() {
        let w = iid_reset_oracle_taxed(0.05, 0.1, 0.01, 100_000, 200, 4);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn critical_zeta_and_potential() {
        assert_eq!(critical_zeta(0.1, 0.0).unwrap(), 2.0);
        assert_eq!(critical_zeta(0.1, 0.1).unwrap(), 4.0);
        assert!(potential(0.1, 0.1, 0.0, 3.0) < potential(0.0, 0.1, 0.0, 3.0));
        // Below threshold the origin is the minimum.
        let grid: Vec<f64> = (-50..=50).map(|k| k as f64 / 100.0).collect();
        let v: Vec<f64> = grid.iter().map(|&u| potential(u, 0.1, 0.0, 1.5)).collect();
        let argmin = v
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(grid[argmin], 0.0);
        assert!((potential(0.3, 0.1, 0.02, 0.0) - 0.5 * 0.12 * 0.09).abs() < 1e-15);
        assert!((potential(0.3, 0.1, 0.02, 1e-6) - potential(0.3, 0.1, 0.02, 0.0)).abs() < 1e-7);
        assert!(log_cosh(1000.0).is_finite());
        assert!((log_cosh(0.7) - 0.7f64.cosh().ln()).abs() < 1e-15);
    }

    #[test]
    fn closed_forms_baseline() {
        let c = closed_forms(&ModelParams::baseline()).unwrap();
        assert!((c.human_wealth - 1030.7).abs() < 0.5);
        assert!((c.dispersion_sd - 0.0406).abs() < 5e-4);
        assert!((c.alpha - 1.0).abs() < 1e-12);
        assert!(c.pe_ratio_bounds.0 < c.pe_ratio_bounds.1);
    }
}
