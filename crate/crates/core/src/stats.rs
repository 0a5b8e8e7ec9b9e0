//! Small statistical helpers: rate fitting and Kolmogorov–Smirnov tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points_used: usize,
    pub points_dropped: usize,
}

/// Ordinary least squares `y ≈ intercept + slope·x`.
pub fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    (slope, intercept, r2)
}

fn fit_with(points: &[(f64, f64)], x_of: impl Fn(f64) -> f64) -> Result<RateFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut dropped = 0;
    for &(n, e) in points {
        if e > 0.0 && e.is_finite() && n >= 2.0 {
            xs.push(x_of(n));
            ys.push(e.ln());
        } else {
            log::warn!("dropping point (N={n}, error={e}) from rate fit");
            dropped += 1;
        }
    }
    if xs.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 positive points, have {}", xs.len())));
    }
    let (slope, intercept, r2) = ols(&xs, &ys);
    Ok(RateFit { slope, intercept, r2, points_used: xs.len(), points_dropped: dropped })
}

/// Regresses `log(error)` on `log √(log N / N)`; slope 1 is the nominal rate.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    fit_with(points, |n| 0.5 * (n.ln().ln() - n.ln()))
}

/// Regresses `log(error)` on `log N`.
pub fn fit_loglog(points: &[(f64, f64)]) -> Result<RateFit> {
    fit_with(points, f64::ln)
}

/// One-sample KS statistic against a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0_f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    })
}

pub fn ks_normal(samples: &[f64], mean: f64, sd: f64) -> f64 {
    let dist = Normal::new(mean, sd).expect("valid normal parameters");
    ks_statistic(samples, |x| dist.cdf(x))
}

/// 1% critical value of the one-sample statistic (Stephens' finite-n correction).
pub fn ks_critical_1pct(n: usize) -> f64 {
    let s = (n as f64).sqrt();
    1.628 / (s + 0.12 + 0.11 / s)
}

/// Two-sample KS statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0_f64);
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d
}

/// 1% critical value of the two-sample statistic.
pub fn ks_two_sample_critical_1pct(n: usize, m: usize) -> f64 {
    1.628 * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// Mean and standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}
