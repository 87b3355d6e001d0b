//! Level accumulators, sample allocation, the adaptive multilevel driver,
//! the single-level reference estimator and rate fitting.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::problem::{Coupling, DarcyProblem, Evaluation, LevelSample};
use crate::rng::Purpose;
use crate::{Error, Result};

/// Floor applied to level variances before allocation.
pub const VARIANCE_FLOOR: f64 = 1e-30;

/// Streaming mean and variance of one level (Welford, Chan merge).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LevelAccumulator {
    pub n: usize,
    pub mean: f64,
    pub m2: f64,
    pub work: f64,
    pub seconds: f64,
}

impl LevelAccumulator {
    pub fn push(&mut self, y: f64, work: f64, seconds: f64) {
        self.n += 1;
        let d = y - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (y - self.mean);
        self.work += work;
        self.seconds += seconds;
    }

    pub fn push_sample(&mut self, s: &LevelSample) {
        self.push(s.y, s.work, s.seconds);
    }

    pub fn merge(&mut self, other: &LevelAccumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = (self.n + other.n) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n;
        self.m2 += other.m2 + d * d * self.n as f64 * other.n as f64 / n;
        self.n += other.n;
        self.work += other.work;
        self.seconds += other.seconds;
    }

    /// Unbiased sample variance; zero with fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn cost_per_sample(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.work / self.n as f64
        }
    }

    pub fn seconds_per_sample(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.seconds / self.n as f64
        }
    }
}

/// Summary of a finite sample: mean and variance with standard errors. The
/// variance error uses the fourth central moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub mean_se: f64,
    pub variance_se: f64,
}

impl SampleStats {
    pub fn from_slice(x: &[f64]) -> Self {
        let n = x.len();
        if n == 0 {
            return Self {
                n,
                mean: f64::NAN,
                variance: f64::NAN,
                mean_se: f64::NAN,
                variance_se: f64::NAN,
            };
        }
        let nf = n as f64;
        let mean = x.iter().sum::<f64>() / nf;
        let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
        let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / nf;
        let variance = if n > 1 { m2 * nf / (nf - 1.0) } else { 0.0 };
        Self {
            n,
            mean,
            variance,
            mean_se: (variance / nf).sqrt(),
            variance_se: ((m4 - m2 * m2).max(0.0) / nf).sqrt(),
        }
    }
}

/// Sample sizes minimising total cost for sampling variance `eps^2 / 2`.
pub fn optimal_allocation(variances: &[f64], costs: &[f64], eps: f64) -> Result<Vec<usize>> {
    if variances.len() != costs.len() {
        return Err(Error::InvalidArgument("variance and cost lengths differ".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {eps}")));
    }
    let v: Vec<f64> = variances.iter().map(|v| v.max(VARIANCE_FLOOR)).collect();
    let c: Vec<f64> = costs.iter().map(|c| c.max(f64::MIN_POSITIVE)).collect();
    let sum: f64 = v.iter().zip(&c).map(|(v, c)| (v * c).sqrt()).sum();
    Ok(v.iter()
        .zip(&c)
        .map(|(v, c)| (2.0 / (eps * eps) * (v / c).sqrt() * sum).ceil() as usize)
        .collect())
}

/// Fitted power law `C h^r` for one quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub rate: f64,
    pub constant: f64,
    /// Root mean square residual of the fit in `log_s` units.
    pub residual: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    /// `|E[Y_l]| ~ C h^alpha`
    pub alpha: RateFit,
    /// `V[Y_l] ~ C h^beta`
    pub beta: RateFit,
    /// `cost_l ~ C h^-gamma`
    pub gamma: RateFit,
}

/// Least squares line through `(x, y)`; returns slope, intercept and rms
/// residual.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    (slope, intercept, (rss / n).sqrt())
}

/// Fits `errors[i] ~ C (h_i^rate - h_ref^rate)`, the expected error of a
/// level-`h_i` functional measured against a reference on `h_ref`. The rate
/// is searched on `(0, 8]`; residuals are in natural-log units.
pub fn fit_against_reference(h: &[f64], errors: &[f64], h_ref: f64) -> Result<RateFit> {
    let (h, e): (Vec<f64>, Vec<f64>) = h
        .iter()
        .zip(errors)
        .filter(|(h, e)| e.is_finite() && **e > 0.0 && **h > h_ref)
        .map(|(h, e)| (*h, e.ln()))
        .unzip();
    if h.len() < 3 {
        return Err(Error::TooFewLevels(h.len()));
    }
    // least squares in log C for fixed rate, then rss as a function of rate
    let eval = |a: f64| -> (f64, f64) {
        let x: Vec<f64> = h.iter().map(|h| (h.powf(a) - h_ref.powf(a)).ln()).collect();
        let log_c = e.iter().zip(&x).map(|(e, x)| e - x).sum::<f64>() / x.len() as f64;
        let rss = e.iter().zip(&x).map(|(e, x)| (e - x - log_c).powi(2)).sum::<f64>();
        (rss, log_c)
    };
    let step = 1e-3;
    let mut best = step;
    let mut best_rss = f64::INFINITY;
    for i in 1..=8000 {
        let a = i as f64 * step;
        let (rss, _) = eval(a);
        if rss < best_rss {
            best_rss = rss;
            best = a;
        }
    }
    let (mut lo, mut hi) = ((best - step).max(step * 1e-3), best + step);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..60 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if eval(a).0 < eval(b).0 {
            hi = b;
        } else {
            lo = a;
        }
    }
    let rate = 0.5 * (lo + hi);
    let (rss, log_c) = eval(rate);
    Ok(RateFit {
        rate,
        constant: log_c.exp(),
        residual: (rss / h.len() as f64).sqrt(),
        points: h.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trend {
    /// `v ~ C h^rate`
    Decay,
    /// `v ~ C h^-rate`
    Growth,
}

/// Fits a power law in `h_i = h0 s^-levels[i]` to `values` over at least
/// three levels. Non-positive or non-finite values are skipped with a
/// warning.
pub fn fit_power_law(levels: &[usize], values: &[f64], s: usize, h0: f64, trend: Trend) -> Result<RateFit> {
    let s = s as f64;
    let sign = match trend {
        Trend::Decay => 1.0,
        Trend::Growth => -1.0,
    };
    let (x, y): (Vec<f64>, Vec<f64>) = levels
        .iter()
        .zip(values)
        .filter(|(_, v)| v.is_finite() && **v > 0.0)
        .map(|(l, v)| (*l as f64, v.ln() / s.ln()))
        .unzip();
    if x.len() < values.len() {
        log::warn!("rate fit skipped {} non-positive values", values.len() - x.len());
    }
    if x.len() < 3 {
        return Err(Error::TooFewLevels(x.len()));
    }
    let (slope, intercept, residual) = fit_line(&x, &y);
    // log_s v = log_s C + r log_s h0 - r l with r = -sign * slope
    let rate = -sign * slope;
    let log_c = intercept - sign * rate * h0.ln() / s.ln();
    Ok(RateFit {
        rate,
        constant: s.powf(log_c),
        residual,
        points: x.len(),
    })
}

/// Fits the three rates from per-level statistics of `Y_l`; `levels` are
/// level indices with `h_l = h0 s^-l`.
pub fn estimate_rates(
    levels: &[usize],
    means: &[f64],
    variances: &[f64],
    costs: &[f64],
    s: usize,
    h0: f64,
) -> Result<RateEstimate> {
    let abs_means: Vec<f64> = means.iter().map(|m| m.abs()).collect();
    Ok(RateEstimate {
        alpha: fit_power_law(levels, &abs_means, s, h0, Trend::Decay)?,
        beta: fit_power_law(levels, variances, s, h0, Trend::Decay)?,
        gamma: fit_power_law(levels, costs, s, h0, Trend::Growth)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlmcConfig {
    pub warmup: usize,
    /// Finest level of the initial hierarchy.
    pub initial_level: usize,
    /// Finest level the driver may add.
    pub max_level: usize,
    /// Weak rate used when fewer than three correction levels exist.
    pub alpha_fallback: f64,
    pub coupling: Coupling,
}

impl Default for MlmcConfig {
    fn default() -> Self {
        Self {
            warmup: 100,
            initial_level: 2,
            max_level: 4,
            alpha_fallback: 1.0,
            coupling: Coupling::Standard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: usize,
    pub h: f64,
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub cost: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmcResult {
    pub eps: f64,
    pub estimate: f64,
    pub levels: Vec<LevelStats>,
    pub sampling_variance: f64,
    pub bias_estimate: f64,
    pub alpha_used: f64,
    pub total_work: f64,
    pub total_seconds: f64,
    /// False when the bias test still failed at the finest admissible level.
    pub converged: bool,
    pub warnings: Vec<String>,
}

/// Runs samples `start..start+count` of `Y_level` in parallel blocks and
/// returns them in index order.
pub fn run_level_batch(
    problem: &DarcyProblem,
    level: usize,
    start: usize,
    count: usize,
    coupling: Coupling,
    purpose: Purpose,
) -> Result<Vec<LevelSample>> {
    let parts = chunks(start, count)
        .into_par_iter()
        .map(|(s, n)| problem.sample_y(level, s, n, coupling, purpose))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// Runs samples `start..start+count` of `Q_level` alone.
pub fn run_q_batch(
    problem: &DarcyProblem,
    level: usize,
    start: usize,
    count: usize,
    purpose: Purpose,
) -> Result<Vec<Evaluation>> {
    let parts = chunks(start, count)
        .into_par_iter()
        .map(|(s, n)| problem.sample_q(level, s, n, purpose))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().flatten().collect())
}

fn chunks(start: usize, count: usize) -> Vec<(usize, usize)> {
    const CHUNK: usize = 8;
    (0..count.div_ceil(CHUNK))
        .map(|c| (start + c * CHUNK, CHUNK.min(count - c * CHUNK)))
        .collect()
}

/// Adaptive multilevel estimator for `E[Q]` to root mean square error `eps`.
pub fn mlmc_run(problem: &DarcyProblem, eps: f64, cfg: &MlmcConfig) -> Result<MlmcResult> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {eps}")));
    }
    let finest = problem.hierarchy().finest_level();
    if cfg.max_level > finest {
        return Err(Error::InvalidArgument(format!(
            "max_level {} exceeds the problem hierarchy ({finest})",
            cfg.max_level
        )));
    }
    if cfg.warmup < 2 {
        return Err(Error::InvalidArgument("warmup needs at least 2 samples".into()));
    }
    let start = Instant::now();
    let refinement = problem.hierarchy().refinement();
    let s = refinement as f64;
    let h0 = problem.hierarchy().base().h();
    let mut l_max = cfg.initial_level.clamp(1, cfg.max_level.max(1)).min(cfg.max_level);
    let mut acc = vec![LevelAccumulator::default(); l_max + 1];
    let mut dn = vec![cfg.warmup; l_max + 1];
    let mut warnings = Vec::new();
    let (alpha_used, bias, converged) = loop {
        for (l, &extra) in dn.iter().enumerate() {
            if extra == 0 {
                continue;
            }
            for smp in run_level_batch(problem, l, acc[l].n, extra, cfg.coupling, Purpose::Mlmc)? {
                acc[l].push_sample(&smp);
            }
        }
        let v: Vec<f64> = acc.iter().map(|a| a.variance()).collect();
        let c: Vec<f64> = acc.iter().map(|a| a.cost_per_sample()).collect();
        let target = optimal_allocation(&v, &c, eps)?;
        dn = target.iter().zip(&acc).map(|(t, a)| t.saturating_sub(a.n)).collect();
        if dn.iter().any(|&d| d > 0) {
            continue;
        }
        let alpha = if l_max >= 3 {
            let levels: Vec<usize> = (1..=l_max).collect();
            let means: Vec<f64> = acc[1..].iter().map(|a| a.mean.abs()).collect();
            match fit_power_law(&levels, &means, refinement, h0, Trend::Decay) {
                Ok(f) => f.rate.max(0.5),
                Err(_) => cfg.alpha_fallback,
            }
        } else {
            cfg.alpha_fallback
        };
        let bias = acc[l_max].mean.abs() / (s.powf(alpha) - 1.0);
        if bias * bias <= eps * eps / 2.0 {
            break (alpha, bias, true);
        }
        if l_max >= cfg.max_level {
            let msg = format!("bias estimate {bias:.3e} above eps/sqrt(2) at finest level {l_max}");
            log::warn!("{msg}");
            warnings.push(msg);
            break (alpha, bias, false);
        }
        l_max += 1;
        acc.push(LevelAccumulator::default());
        dn = vec![0; l_max + 1];
        dn[l_max] = cfg.warmup;
    };
    let levels: Vec<LevelStats> = acc
        .iter()
        .enumerate()
        .map(|(l, a)| LevelStats {
            level: l,
            h: problem.hierarchy().grids()[l].h(),
            n: a.n,
            mean: a.mean,
            variance: a.variance(),
            cost: a.cost_per_sample(),
            seconds: a.seconds_per_sample(),
        })
        .collect();
    Ok(MlmcResult {
        eps,
        estimate: acc.iter().map(|a| a.mean).sum(),
        sampling_variance: acc.iter().map(|a| a.variance().max(VARIANCE_FLOOR) / a.n as f64).sum(),
        bias_estimate: bias,
        alpha_used,
        total_work: acc.iter().map(|a| a.work).sum(),
        total_seconds: start.elapsed().as_secs_f64(),
        levels,
        converged,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub eps: f64,
    pub level: usize,
    pub h: f64,
    pub estimate: f64,
    pub variance: f64,
    /// `ceil(2 V_L / eps^2)`, at least the warmup size.
    pub n_required: usize,
    /// Samples actually drawn; below `n_required` when a sample cap applied.
    pub n: usize,
    pub cost_per_sample: f64,
    /// `n_required * cost_per_sample`; measured when `predicted` is false.
    pub total_work: f64,
    pub measured_work: f64,
    pub predicted: bool,
    pub total_seconds: f64,
}

/// Plain Monte Carlo on level `level` with sampling variance `eps^2 / 2`.
///
/// With `max_samples` set, sampling stops at the cap and the total cost is
/// extrapolated from the measured cost per sample (`predicted = true`).
pub fn mc_run(
    problem: &DarcyProblem,
    eps: f64,
    level: usize,
    warmup: usize,
    max_samples: Option<usize>,
) -> Result<McResult> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {eps}")));
    }
    if warmup < 2 {
        return Err(Error::InvalidArgument("warmup needs at least 2 samples".into()));
    }
    let cap = max_samples.unwrap_or(usize::MAX).max(warmup);
    let start = Instant::now();
    let mut acc = LevelAccumulator::default();
    let mut extra = warmup;
    let mut required = warmup;
    while extra > 0 {
        for e in run_q_batch(problem, level, acc.n, extra, Purpose::MonteCarlo)? {
            acc.push(e.q, e.work, e.seconds);
        }
        required = ((2.0 * acc.variance() / (eps * eps)).ceil() as usize).max(warmup);
        extra = required.min(cap).saturating_sub(acc.n);
    }
    let predicted = acc.n < required;
    Ok(McResult {
        eps,
        level,
        h: problem.grid(level)?.h(),
        estimate: acc.mean,
        variance: acc.variance(),
        n_required: required,
        n: acc.n,
        cost_per_sample: acc.cost_per_sample(),
        total_work: if predicted {
            required as f64 * acc.cost_per_sample()
        } else {
            acc.work
        },
        measured_work: acc.work,
        predicted,
        total_seconds: start.elapsed().as_secs_f64(),
    })
}
