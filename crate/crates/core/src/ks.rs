//! One-sample Kolmogorov-Smirnov tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal::normal_cdf;

pub const MIN_KS_SAMPLES: usize = 20;

/// Coefficient of the asymptotic 1% critical value `1.628 / sqrt(R)`.
pub const KS_CRIT_1PCT: f64 = 1.628;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub stat: f64,
    pub p_value: f64,
}

/// `sup_x |F_R(x) - F(x)|` for a continuous `cdf`. NaN samples are rejected
/// by the callers; here they would sort last.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let r = x.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let f = cdf(v);
        d = d.max(f - i as f64 / r).max((i + 1) as f64 / r - f);
    }
    d
}

/// `P(K > t)` for the Kolmogorov distribution. Series terms are summed until
/// they drop below 1e-10.
pub fn kolmogorov_survival(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if t < 1.0 {
        // Jacobi-transformed form converges fast for small t.
        let mut cdf = 0.0;
        let c = -std::f64::consts::PI.powi(2) / (8.0 * t * t);
        for k in 1.. {
            let odd = (2 * k - 1) as f64;
            let term = (c * odd * odd).exp();
            cdf += term;
            if term < 1e-10 {
                break;
            }
        }
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / t * cdf).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for k in 1.. {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * t * t).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-10 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_against<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<KsResult> {
    if samples.len() < MIN_KS_SAMPLES {
        return Err(Error::TooFewSamples { required: MIN_KS_SAMPLES, found: samples.len() });
    }
    let stat = ks_statistic(samples, cdf);
    let p_value = kolmogorov_survival((samples.len() as f64).sqrt() * stat);
    Ok(KsResult { stat, p_value })
}

pub fn ks_normality(samples: &[f64]) -> Result<KsResult> {
    ks_against(samples, normal_cdf)
}

pub fn ks_uniform(samples: &[f64]) -> Result<KsResult> {
    ks_against(samples, |x| x.clamp(0.0, 1.0))
}

pub fn ks_critical_1pct(r: usize) -> f64 {
    KS_CRIT_1PCT / (r as f64).sqrt()
}
