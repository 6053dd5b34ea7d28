//! Log-normal timing models and goodness-of-fit machinery.
//!
//! Inter-turn intervals of multi-turn sessions are modelled as log-normal.
//! This module provides the distribution functions used by the eviction
//! scorer, maximum-likelihood fitting, and the comparison against gamma and
//! exponential alternatives (Kolmogorov-Smirnov distance, CDF R², AIC).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimingError {
    #[error("time must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("sigma must be positive, got {0}")]
    InvalidSigma(f64),
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("samples must be positive, got {0}")]
    NonPositiveSample(f64),
    #[error("sample set is empty")]
    EmptySamples,
    #[error("density is zero at sample {0}")]
    ZeroDensity(f64),
    #[error("threshold {0} removes every sample")]
    AllFiltered(f64),
}

pub type Result<T> = std::result::Result<T, TimingError>;

/// Standard normal CDF, Φ(x) = erfc(−x/√2)/2.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Log-normal parameters in log-seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalParams {
    pub mu: f64,
    pub sigma: f64,
}

impl LogNormalParams {
    pub const fn new(mu: f64, sigma: f64) -> Self {
        LogNormalParams { mu, sigma }
    }

    pub fn median(&self) -> f64 {
        self.mu.exp()
    }

    fn z(&self, t: f64) -> f64 {
        (t.ln() - self.mu) / self.sigma
    }

    fn cdf_unchecked(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        if self.sigma == 0.0 {
            let lt = t.ln();
            return if lt < self.mu {
                0.0
            } else if lt > self.mu {
                1.0
            } else {
                0.5
            };
        }
        std_normal_cdf(self.z(t))
    }

    /// Log of the density at `t`; `-inf` outside the support.
    pub fn ln_pdf(&self, t: f64) -> f64 {
        if t <= 0.0 || self.sigma <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let z = self.z(t);
        -0.5 * z * z - t.ln() - self.sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Log-normal CDF at `t`.
pub fn cdf(t: f64, p: &LogNormalParams) -> Result<f64> {
    if !(t > 0.0) {
        return Err(TimingError::NonPositiveTime(t));
    }
    Ok(p.cdf_unchecked(t))
}

/// Survival probability `1 − F(delta_t)`; `delta_t <= 0` yields 1.
pub fn survival(delta_t: f64, p: &LogNormalParams) -> f64 {
    if delta_t <= 0.0 {
        return 1.0;
    }
    if p.sigma == 0.0 {
        return 1.0 - p.cdf_unchecked(delta_t);
    }
    // Upper tail computed directly to keep precision far out in the tail.
    0.5 * libm::erfc(p.z(delta_t) / std::f64::consts::SQRT_2)
}

/// Draws `exp(mu + sigma * z)` for a standard-normal `z`.
pub fn sample_interval<R: Rng + ?Sized>(p: &LogNormalParams, rng: &mut R) -> Result<f64> {
    if !(p.sigma > 0.0) {
        return Err(TimingError::InvalidSigma(p.sigma));
    }
    let z: f64 = rng.sample(StandardNormal);
    Ok((p.mu + p.sigma * z).exp())
}

fn check_positive(samples: &[f64]) -> Result<()> {
    match samples.iter().find(|&&x| !(x > 0.0)) {
        Some(&x) => Err(TimingError::NonPositiveSample(x)),
        None => Ok(()),
    }
}

/// Maximum-likelihood log-normal fit: mean and population standard
/// deviation of `ln samples`.
pub fn fit_mle(samples: &[f64]) -> Result<LogNormalParams> {
    if samples.len() < 2 {
        return Err(TimingError::InsufficientSamples { needed: 2, got: samples.len() });
    }
    check_positive(samples)?;
    let n = samples.len() as f64;
    let mu = samples.iter().map(|x| x.ln()).sum::<f64>() / n;
    let var = samples.iter().map(|x| (x.ln() - mu).powi(2)).sum::<f64>() / n;
    Ok(LogNormalParams::new(mu, var.sqrt()))
}

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    xs
}

/// Kolmogorov-Smirnov distance between the empirical CDF of `samples` and `cdf_fn`.
pub fn ks_statistic(samples: &[f64], cdf_fn: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(TimingError::EmptySamples);
    }
    let xs = sorted(samples);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf_fn(x);
            let hi = (i + 1) as f64 / n;
            let lo = i as f64 / n;
            (hi - f).abs().max((lo - f).abs())
        })
        .fold(0.0, f64::max);
    Ok(d)
}

/// Coefficient of determination between empirical and fitted CDF values at
/// the sorted sample points.
pub fn r_squared_cdf(samples: &[f64], cdf_fn: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.len() < 3 {
        return Err(TimingError::InsufficientSamples { needed: 3, got: samples.len() });
    }
    let xs = sorted(samples);
    let n = xs.len() as f64;
    let pairs: Vec<(f64, f64)> =
        xs.iter().enumerate().map(|(i, &x)| ((i + 1) as f64 / n, cdf_fn(x))).collect();
    Ok(r_squared_pairs(&pairs))
}

/// `1 − SS_res/SS_tot` over `(observed, fitted)` pairs.
pub fn r_squared_pairs(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let mean = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let ss_tot: f64 = pairs.iter().map(|p| (p.0 - mean).powi(2)).sum();
    let ss_res: f64 = pairs.iter().map(|p| (p.0 - p.1).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

/// Akaike information criterion `2k − 2 Σ ln f(x_i)`.
pub fn aic(samples: &[f64], ln_density: impl Fn(f64) -> f64, k_params: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(TimingError::EmptySamples);
    }
    let mut ll = 0.0;
    for &x in samples {
        let l = ln_density(x);
        if l == f64::NEG_INFINITY || l.is_nan() {
            return Err(TimingError::ZeroDensity(x));
        }
        ll += l;
    }
    Ok(2.0 * k_params as f64 - 2.0 * ll)
}

/// Trigamma ψ'(x) for x > 0 via recurrence and the asymptotic series.
pub(crate) fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x
        + x2 / 2.0
        + (1.0 / x) * x2 * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 / 30.0)))
}

/// A fitted candidate distribution for inter-turn intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Fitted {
    Lognormal { mu: f64, sigma: f64 },
    Gamma { shape: f64, scale: f64 },
    Exponential { rate: f64 },
}

impl Fitted {
    pub fn name(&self) -> &'static str {
        match self {
            Fitted::Lognormal { .. } => "lognormal",
            Fitted::Gamma { .. } => "gamma",
            Fitted::Exponential { .. } => "exponential",
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Fitted::Exponential { .. } => 1,
            _ => 2,
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match *self {
            Fitted::Lognormal { mu, sigma } => LogNormalParams::new(mu, sigma).cdf_unchecked(x),
            Fitted::Gamma { shape, scale } => statrs::function::gamma::gamma_lr(shape, x / scale),
            Fitted::Exponential { rate } => -(-rate * x).exp_m1(),
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        match *self {
            Fitted::Lognormal { mu, sigma } => LogNormalParams::new(mu, sigma).ln_pdf(x),
            Fitted::Gamma { shape, scale } => {
                -statrs::function::gamma::ln_gamma(shape) - shape * scale.ln()
                    + (shape - 1.0) * x.ln()
                    - x / scale
            }
            Fitted::Exponential { rate } => rate.ln() - rate * x,
        }
    }
}

/// Exponential MLE: rate = 1 / mean.
pub fn fit_exponential(samples: &[f64]) -> Result<Fitted> {
    if samples.is_empty() {
        return Err(TimingError::EmptySamples);
    }
    check_positive(samples)?;
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    Ok(Fitted::Exponential { rate: 1.0 / mean })
}

/// Gamma MLE: Newton iteration on `ln k − ψ(k) = ln(mean) − mean(ln x)`,
/// seeded by the method of moments.
pub fn fit_gamma(samples: &[f64]) -> Result<Fitted> {
    if samples.len() < 3 {
        return Err(TimingError::InsufficientSamples { needed: 3, got: samples.len() });
    }
    check_positive(samples)?;
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let mean_ln = samples.iter().map(|x| x.ln()).sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let s = mean.ln() - mean_ln;
    if !(s > 0.0) || !(var > 0.0) {
        // Constant sample: the shape diverges. Report a very peaked fit.
        return Ok(Fitted::Gamma { shape: 1e12, scale: mean / 1e12 });
    }
    let mut k = mean * mean / var;
    for _ in 0..50 {
        let f = k.ln() - statrs::function::gamma::digamma(k) - s;
        if f.abs() < 1e-10 {
            break;
        }
        let df = 1.0 / k - trigamma(k);
        let mut next = k - f / df;
        while next <= 0.0 {
            next = 0.5 * (next + k).max(k * 0.5);
        }
        k = next;
    }
    Ok(Fitted::Gamma { shape: k, scale: mean / k })
}

/// Goodness-of-fit summary for one fitted family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: Fitted,
    pub ks_d: f64,
    pub r_squared: f64,
    pub aic: f64,
    pub n: usize,
}

impl FitReport {
    pub fn evaluate(samples: &[f64], params: Fitted) -> Result<FitReport> {
        let cdf_fn = |x| params.cdf(x);
        Ok(FitReport {
            params,
            ks_d: ks_statistic(samples, cdf_fn)?,
            r_squared: r_squared_cdf(samples, cdf_fn)?,
            aic: aic(samples, |x| params.ln_pdf(x), params.num_params())?,
            n: samples.len(),
        })
    }
}

/// Fits log-normal, gamma and exponential models and returns their reports
/// sorted by ascending K-S distance.
pub fn fit_comparison(samples: &[f64]) -> Result<Vec<FitReport>> {
    if samples.len() < 3 {
        return Err(TimingError::InsufficientSamples { needed: 3, got: samples.len() });
    }
    let ln = fit_mle(samples)?;
    let candidates = [
        Fitted::Lognormal { mu: ln.mu, sigma: ln.sigma },
        fit_gamma(samples)?,
        fit_exponential(samples)?,
    ];
    let mut reports = candidates
        .into_iter()
        .map(|c| FitReport::evaluate(samples, c))
        .collect::<Result<Vec<_>>>()?;
    reports.sort_by(|a, b| a.ks_d.total_cmp(&b.ks_d));
    Ok(reports)
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(samples: &[f64], q: f64) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let xs = sorted(samples);
    let pos = q.clamp(0.0, 1.0) * (xs.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(xs[lo] + (xs[hi] - xs[lo]) * (pos - lo as f64))
}

/// One row of a minimum-interval threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub n: usize,
    pub pct_kept: f64,
    pub p50: f64,
    pub p80: f64,
    pub mu: f64,
    pub sigma: f64,
    pub ks_d: f64,
    pub r_squared: f64,
}

/// Refits the log-normal after dropping samples below each threshold.
pub fn threshold_sweep(samples: &[f64], thresholds: &[f64]) -> Result<Vec<ThresholdRow>> {
    check_positive(samples)?;
    let total = samples.len();
    thresholds
        .iter()
        .map(|&threshold| {
            let kept: Vec<f64> = samples.iter().copied().filter(|&x| x >= threshold).collect();
            if kept.is_empty() {
                return Err(TimingError::AllFiltered(threshold));
            }
            let fit = fit_mle(&kept)?;
            let cdf_fn = |x| fit.cdf_unchecked(x);
            Ok(ThresholdRow {
                threshold,
                n: kept.len(),
                pct_kept: 100.0 * kept.len() as f64 / total as f64,
                p50: quantile(&kept, 0.5).unwrap_or(f64::NAN),
                p80: quantile(&kept, 0.8).unwrap_or(f64::NAN),
                mu: fit.mu,
                sigma: fit.sigma,
                ks_d: ks_statistic(&kept, cdf_fn)?,
                r_squared: r_squared_cdf(&kept, cdf_fn)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::E;

    fn draws(p: LogNormalParams, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| sample_interval(&p, &mut rng).unwrap()).collect()
    }

    #[test]
    fn normal_cdf_matches_high_precision_values() {
        // Reference values evaluated with 30-digit arithmetic.
        let table = [
            (-8.0, 6.22096057427178412e-16),
            (-3.0, 0.00134989803163009453),
            (-1.0, 0.158655253931457051),
            (0.0, 0.5),
            (0.5, 0.691462461274013104),
            (1.96, 0.975002104851779564),
            (5.0, 0.999999713348428121),
        ];
        for (x, want) in table {
            assert!((std_normal_cdf(x) - want).abs() < 1e-12, "x = {x}");
        }
    }

    #[test]
    fn cdf_at_median_is_half() {
        let p = LogNormalParams::new(4.82, 1.25);
        assert!((cdf(4.82f64.exp(), &p).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cdf_at_bailian_p50() {
        let p = LogNormalParams::new(4.82, 1.25);
        let v = cdf(110.6, &p).unwrap();
        assert!((v - 0.463641439521591).abs() < 1e-9, "{v}");
    }

    #[test]
    fn cdf_limits_and_errors() {
        let p = LogNormalParams::new(1.0, 0.7);
        assert!(cdf(1e-12, &p).unwrap() < 1e-9);
        assert!(cdf(1e12, &p).unwrap() > 1.0 - 1e-9);
        assert_eq!(cdf(0.0, &p), Err(TimingError::NonPositiveTime(0.0)));
        assert!(matches!(cdf(-1.0, &p), Err(TimingError::NonPositiveTime(_))));
    }

    #[test]
    fn survival_edge_values() {
        let p = LogNormalParams::new(2.28, 1.34);
        assert_eq!(survival(0.0, &p), 1.0);
        assert!((survival(2.28f64.exp(), &p) - 0.5).abs() < 1e-12);
        let tail = survival(453.6, &p);
        assert!((tail - 0.00209432357897181).abs() < 1e-10, "{tail}");
        assert!(tail < 0.01);
    }

    #[test]
    fn sample_interval_rejects_bad_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = LogNormalParams::new(1.0, 0.0);
        assert_eq!(sample_interval(&p, &mut rng), Err(TimingError::InvalidSigma(0.0)));
    }

    #[test]
    fn sample_interval_degenerate_sigma() {
        let xs = draws(LogNormalParams::new(3.0, 1e-9), 100, 3);
        for x in xs {
            assert!((x / 3f64.exp() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn sample_medians_match_reference_fits() {
        let chat = draws(LogNormalParams::new(4.82, 1.25), 20_000, 7);
        let m = quantile(&chat, 0.5).unwrap();
        assert!((m / 4.82f64.exp() - 1.0).abs() < 0.05, "{m}");

        let agentic = draws(LogNormalParams::new(2.28, 1.34), 20_000, 8);
        let m = quantile(&agentic, 0.5).unwrap();
        assert!(m >= 8.5 * 0.9 && m <= 9.8 * 1.1, "{m}");
    }

    #[test]
    fn fit_mle_small_cases() {
        let p = fit_mle(&[E, E, E, E]).unwrap();
        assert!((p.mu - 1.0).abs() < 1e-12 && p.sigma.abs() < 1e-12);
        let p = fit_mle(&[E, E.powi(3)]).unwrap();
        assert!((p.mu - 2.0).abs() < 1e-12 && (p.sigma - 1.0).abs() < 1e-12);
        assert!(matches!(fit_mle(&[1.0]), Err(TimingError::InsufficientSamples { .. })));
        assert_eq!(fit_mle(&[1.0, 0.0]), Err(TimingError::NonPositiveSample(0.0)));
    }

    #[test]
    fn fit_mle_round_trip() {
        let xs = draws(LogNormalParams::new(4.82, 1.25), 20_000, 11);
        let p = fit_mle(&xs).unwrap();
        assert!((p.mu - 4.82).abs() < 0.05 && (p.sigma - 1.25).abs() < 0.05, "{p:?}");
    }

    #[test]
    fn ks_single_sample_at_median() {
        let p = LogNormalParams::new(0.0, 1.0);
        let d = ks_statistic(&[1.0], |x| p.cdf_unchecked(x)).unwrap();
        assert!((d - 0.5).abs() < 1e-12);
        assert_eq!(ks_statistic(&[], |_| 0.0), Err(TimingError::EmptySamples));
    }

    #[test]
    fn ks_self_fit_is_small() {
        let p = LogNormalParams::new(2.28, 1.34);
        let xs = draws(p, 20_000, 5);
        assert!(ks_statistic(&xs, |x| p.cdf_unchecked(x)).unwrap() <= 0.02);
    }

    #[test]
    fn exponential_fits_lognormal_data_worse() {
        let xs = draws(LogNormalParams::new(2.28, 1.34), 20_000, 6);
        let ln = fit_mle(&xs).unwrap();
        let ex = fit_exponential(&xs).unwrap();
        let d_ln = ks_statistic(&xs, |x| ln.cdf_unchecked(x)).unwrap();
        let d_ex = ks_statistic(&xs, |x| ex.cdf(x)).unwrap();
        assert!(d_ex > d_ln);
    }

    #[test]
    fn r_squared_cases() {
        assert_eq!(r_squared_pairs(&[(0.1, 0.1), (0.5, 0.5), (0.9, 0.9)]), 1.0);
        // Fitted values run opposite to the observed ones.
        assert!(r_squared_pairs(&[(0.1, 0.9), (0.5, 0.5), (0.9, 0.1)]) < 0.0);
        // A CDF that decreases where the empirical one increases.
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!(r_squared_cdf(&xs, |x| 1.0 - x / 4.0).unwrap() < 0.0);
        assert!(matches!(r_squared_cdf(&[1.0, 2.0], |x| x), Err(TimingError::InsufficientSamples { .. })));
        let p = LogNormalParams::new(4.82, 1.25);
        let xs = draws(p, 20_000, 9);
        assert!(r_squared_cdf(&xs, |x| p.cdf_unchecked(x)).unwrap() >= 0.99);
    }

    #[test]
    fn aic_formula() {
        assert_eq!(aic(&[1.0, 2.0], |_| 0.0, 0).unwrap(), 0.0);
        let a2 = aic(&[1.0, 2.0], |x| -x, 2).unwrap();
        let a4 = aic(&[1.0, 2.0], |x| -x, 4).unwrap();
        assert!((a4 - a2 - 4.0).abs() < 1e-12);
        let a3 = aic(&[1.0, 2.0], |x| -x, 3).unwrap();
        assert!((a3 - a2 - 2.0).abs() < 1e-12);
        assert_eq!(aic(&[1.0, 5.0], |x| if x > 2.0 { f64::NEG_INFINITY } else { 0.0 }, 1), Err(TimingError::ZeroDensity(5.0)));
    }

    #[test]
    fn lognormal_aic_beats_exponential_on_lognormal_data() {
        let xs = draws(LogNormalParams::new(4.82, 1.25), 20_000, 12);
        let reports = fit_comparison(&xs).unwrap();
        let get = |name: &str| reports.iter().find(|r| r.params.name() == name).unwrap().aic;
        assert!(get("lognormal") < get("exponential"));
    }

    #[test]
    fn trigamma_known_values() {
        // ψ'(1) = π²/6, ψ'(1/2) = π²/2
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((trigamma(1.0) - pi2 / 6.0).abs() < 1e-10);
        assert!((trigamma(0.5) - pi2 / 2.0).abs() < 1e-10);
    }

    #[test]
    fn gamma_fit_recovers_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let dist = rand_distr::Gamma::new(0.75, 366.0).unwrap();
        let xs: Vec<f64> = (0..20_000).map(|_| rng.sample(dist)).collect();
        match fit_gamma(&xs).unwrap() {
            Fitted::Gamma { shape, scale } => {
                assert!((shape - 0.75).abs() < 0.03, "{shape}");
                assert!((scale / 366.0 - 1.0).abs() < 0.05, "{scale}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn comparison_rankings() {
        let xs = draws(LogNormalParams::new(4.82, 1.25), 20_000, 13);
        let names: Vec<_> = fit_comparison(&xs).unwrap().iter().map(|r| r.params.name()).collect();
        assert_eq!(names, ["lognormal", "gamma", "exponential"]);

        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let exp = rand_distr::Exp::new(0.05).unwrap();
        let ys: Vec<f64> = (0..20_000).map(|_| rng.sample(exp)).collect();
        // Gamma nests the exponential, so on exponential data the two tie up
        // to sampling noise; both must beat the log-normal.
        let reports = fit_comparison(&ys).unwrap();
        let d = |name: &str| reports.iter().find(|r| r.params.name() == name).unwrap().ks_d;
        assert!(d("exponential") - reports[0].ks_d < 0.005);
        assert_eq!(reports[2].params.name(), "lognormal");

        assert!(matches!(fit_comparison(&[1.0, 2.0]), Err(TimingError::InsufficientSamples { .. })));
    }

    #[test]
    fn threshold_sweep_behaviour() {
        let mut xs = draws(LogNormalParams::new(2.28, 1.34), 15_000, 15);
        xs.extend(std::iter::repeat(1e-3).take(600));
        let rows = threshold_sweep(&xs, &[0.0, 0.1]).unwrap();
        assert!(rows[1].ks_d < rows[0].ks_d);
        assert!(rows[1].r_squared > rows[0].r_squared);
        assert!((rows[0].pct_kept - 100.0).abs() < 1e-12);

        let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let below = threshold_sweep(&xs, &[min * 0.5]).unwrap();
        assert_eq!(below[0], ThresholdRow { threshold: min * 0.5, ..rows[0] });

        let max = xs.iter().copied().fold(0.0, f64::max);
        assert_eq!(threshold_sweep(&xs, &[max * 2.0]), Err(TimingError::AllFiltered(max * 2.0)));
    }
}
