//! Empirical `O_s` calibration: the smallest `θ` with
//! `E exp((X/θ)₊^s) ≤ 2`, the maximum bound for families of calibrated
//! variables, and the sum rule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;

use crate::{Error, Result};

/// Bootstrap resamples behind [`OsEstimate::ci`].
pub const BOOTSTRAP_RESAMPLES: usize = 200;
const BOOTSTRAP_SEED: u64 = 0x0b00_75ea;
const REL_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OsEstimate {
    pub s: f64,
    pub theta: f64,
    pub n: usize,
    /// Half-width of the central 95% bootstrap interval of `theta`.
    pub ci: f64,
}

fn check_s(s: f64) -> Result<()> {
    if !(s > 0.0 && s <= 2.0) {
        return Err(Error::param(format!("s = {s} must lie in (0, 2]")));
    }
    Ok(())
}

/// Empirical mean of `exp((x/θ)₊^s)`.
pub fn calibration_mean(samples: &[f64], theta: f64, s: f64) -> f64 {
    let sum: f64 = samples.iter().map(|&x| if x > 0.0 { (x / theta).powf(s).exp() } else { 1.0 }).sum();
    sum / samples.len() as f64
}

/// Smallest `θ` (to relative `10⁻⁶`) whose empirical calibration mean is at
/// most 2; 0 when no sample is positive.
pub fn os_theta_point(samples: &[f64], s: f64) -> Result<f64> {
    check_s(s)?;
    if samples.len() < 2 {
        return Err(Error::param("at least two samples are required"));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::param("samples must be finite"));
    }
    let top = samples.iter().fold(0.0f64, |a, &x| a.max(x));
    if top <= 0.0 {
        return Ok(0.0);
    }
    let n = samples.len() as f64;
    // bracket: with θ = top / ln(2n)^{1/s} every term is at most 2n, and the
    // largest term alone pushes the mean above 2
    let mut lo = top / (2.0 * n).ln().powf(1.0 / s);
    let mut hi = top / 2f64.ln().powf(1.0 / s);
    while calibration_mean(samples, lo, s) <= 2.0 {
        lo /= 2.0;
    }
    while calibration_mean(samples, hi, s) > 2.0 {
        hi *= 2.0;
    }
    let mut f_lo = calibration_mean(samples, lo, s);
    let mut f_hi = calibration_mean(samples, hi, s);
    while hi / lo - 1.0 > REL_TOL {
        let mid = (lo * hi).sqrt();
        let f = calibration_mean(samples, mid, s);
        assert!(f_lo >= f && f >= f_hi, "calibration mean must be nonincreasing in theta");
        if f <= 2.0 {
            hi = mid;
            f_hi = f;
        } else {
            lo = mid;
            f_lo = f;
        }
    }
    Ok(hi)
}

/// [`os_theta_point`] with a bootstrap confidence half-width.
pub fn os_theta(samples: &[f64], s: f64) -> Result<OsEstimate> {
    let theta = os_theta_point(samples, s)?;
    let n = samples.len();
    let mut boots: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(BOOTSTRAP_SEED ^ (b as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let re: Vec<f64> = (0..n).map(|_| samples[rng.random_range(0..n)]).collect();
            os_theta_point(&re, s)
        })
        .collect::<Result<_>>()?;
    boots.sort_by(f64::total_cmp);
    let q = |p: f64| boots[((p * (boots.len() - 1) as f64).round()) as usize];
    Ok(OsEstimate { s, theta, n, ci: (q(0.975) - q(0.025)) / 2.0 })
}

/// `(ln(2N) / ln(3/2))^{1/s}`; a single variable uses `ln 4` as `N = 2`.
pub fn max_bound(n: usize, s: f64) -> f64 {
    ((2.0 * n.max(2) as f64).ln() / 1.5f64.ln()).powf(1.0 / s)
}

/// A law with `O_s` calibration exactly 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Probe {
    /// `X = (E/2)^{1/s}` with `E ~ Exp(1)`: `E exp(X^s) = 2`.
    Exponential,
    /// `X = σ|N|` with `σ` solving `E exp((σ|N|)^s) = 2`.
    FoldedGaussian,
}

impl Probe {
    pub fn sampler(self, s: f64) -> Result<impl Fn(&mut ChaCha8Rng) -> f64 + Sync + Send + Copy> {
        check_s(s)?;
        let sigma = match self {
            Probe::Exponential => 0.0,
            Probe::FoldedGaussian => folded_gaussian_scale(s),
        };
        Ok(move |rng: &mut ChaCha8Rng| match self {
            Probe::Exponential => {
                let e: f64 = Exp1.sample(rng);
                (e / 2.0).powf(1.0 / s)
            }
            Probe::FoldedGaussian => {
                let z: f64 = StandardNormal.sample(rng);
                sigma * z.abs()
            }
        })
    }
}

/// `E exp((σ|N|)^s)` by Simpson's rule on `[0, 12]`.
fn folded_gaussian_mean(sigma: f64, s: f64) -> f64 {
    let n = 24_000;
    let b = 12.0;
    let h = b / n as f64;
    let f = |z: f64| ((sigma * z).powf(s) - z * z / 2.0).exp() * (2.0 / std::f64::consts::PI).sqrt();
    let mut acc = f(0.0) + f(b);
    for i in 1..n {
        acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

/// `σ` with `E exp((σ|N|)^s) = 2`.
pub fn folded_gaussian_scale(s: f64) -> f64 {
    let (mut lo, mut hi) = (1e-6, if s >= 2.0 { 0.7 } else { 2.0 });
    while folded_gaussian_mean(hi, s) < 2.0 {
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if folded_gaussian_mean(mid, s) > 2.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaxBoundCheck {
    pub n: usize,
    pub s: f64,
    /// Empirical `θ` of `max_{i ≤ N} X_i`.
    pub empirical: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Empirical `θ` of the maximum of `n` draws, over `trials` independent trials.
pub fn max_bound_check<F>(n: usize, s: f64, sampler: F, trials: usize, seed: u64) -> Result<MaxBoundCheck>
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    if n == 0 || trials < 2 {
        return Err(Error::param("need n ≥ 1 and at least two trials"));
    }
    let maxima: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64).wrapping_mul(0x2545_f491_4f6c_dd1d));
            (0..n).map(|_| sampler(&mut rng)).fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let empirical = os_theta_point(&maxima, s)?;
    let bound = max_bound(n, s);
    Ok(MaxBoundCheck { n, s, empirical, bound, holds: empirical <= bound })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SumCheck {
    pub estimate: OsEstimate,
    pub theta_sum: f64,
    /// `Σθ (1 + 3 ci/θ*)`.
    pub allowed: f64,
    pub holds: bool,
}

/// Sum rule for `s ≥ 1`: `Σ_i X_i ≤ O_s(Σ_i θ_i)`, `X_i` drawn independently.
pub fn os_sum_check<F>(thetas: &[f64], s: f64, samplers: &[F], trials: usize, seed: u64) -> Result<SumCheck>
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    if s < 1.0 {
        return Err(Error::param("the sum rule with unit constant needs s ≥ 1"));
    }
    if thetas.len() != samplers.len() || thetas.is_empty() {
        return Err(Error::param("one theta per sampler"));
    }
    let sums: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (t as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            samplers.iter().map(|f| f(&mut rng)).sum()
        })
        .collect();
    let estimate = os_theta(&sums, s)?;
    let theta_sum: f64 = thetas.iter().sum();
    let rel = if estimate.theta > 0.0 { estimate.ci / estimate.theta } else { 0.0 };
    let allowed = theta_sum * (1.0 + 3.0 * rel);
    Ok(SumCheck { estimate, theta_sum, allowed, holds: estimate.theta <= allowed })
}

/// Empirical `P[X ≥ θx]` against `2 exp(-x^s)` on the grid `xs`; returns
/// `(x, empirical, bound·(1 + 3 SE))` triples.
pub fn tail_check(samples: &[f64], theta: f64, s: f64, xs: &[f64]) -> Vec<(f64, f64, f64)> {
    let n = samples.len() as f64;
    xs.iter()
        .map(|&x| {
            let p = samples.iter().filter(|&&v| v >= theta * x).count() as f64 / n;
            let se = (p * (1.0 - p) / n).sqrt();
            (x, p, 2.0 * (-x.powf(s)).exp() * (1.0 + 3.0 * se))
        })
        .collect()
}

/// `n` draws from `sampler` with a fixed seed.
pub fn draw<F: Fn(&mut ChaCha8Rng) -> f64>(sampler: F, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sampler(&mut rng)).collect()
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Median of a nonempty slice.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
