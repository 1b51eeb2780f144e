//! Urn configuration and validation against the model assumptions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::{ReinforcementSchedule, Sampler};

/// User-facing urn description, as read from JSON.
///
/// Colors `1..=d0` (after applying `permutation`) are the non-dominated ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrnConfig {
    /// Number of non-dominated colors.
    pub d0: usize,
    /// Initial composition `a_j > 0`.
    pub a: Vec<f64>,
    pub schedule: ReinforcementSchedule,
    /// Optional relabeling: `permutation[k]` is the 1-based input label of
    /// internal color `k + 1`. The first `d0` entries form the non-dominated set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<usize>>,
    /// Upper bound on the default limit-proxy floor of `10^6` steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy_ceiling: Option<u64>,
}

/// A configuration that passed [`validate_config`], in canonical color order.
#[derive(Debug, Clone)]
pub struct ValidatedConfig {
    pub config: UrnConfig,
    pub d: usize,
    pub d0: usize,
    /// Common limiting mean of the non-dominated colors.
    pub m: f64,
    /// Limiting second moments of colors `1..=d0`.
    pub q: Vec<f64>,
    pub lambda0: f64,
    /// `2 * lambda0 < m`: the unstarred statistics also converge.
    pub condition_1_star: bool,
    /// `d0 = 1`: the non-dominated limit is trivially 1.
    pub degenerate: bool,
    /// 1-based input label of each internal color.
    pub labels: Vec<usize>,
    pub(crate) samplers: Vec<Sampler>,
}

/// Summary of the derived constants, embedded in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub d: usize,
    pub d0: usize,
    pub m: f64,
    pub q: Vec<f64>,
    pub lambda0: f64,
    pub condition_1_star: bool,
    pub degenerate: bool,
    pub labels: Vec<usize>,
}

impl ValidatedConfig {
    pub fn a(&self) -> &[f64] {
        &self.config.a
    }

    pub fn schedule(&self) -> &ReinforcementSchedule {
        &self.config.schedule
    }

    pub fn beta(&self) -> f64 {
        self.config.schedule.beta
    }

    /// Limiting variances `q_j - m^2` of the non-dominated colors.
    pub fn sigma2(&self) -> Vec<f64> {
        self.q.iter().map(|q| q - self.m * self.m).collect()
    }

    pub fn summary(&self) -> ConfigSummary {
        ConfigSummary {
            d: self.d,
            d0: self.d0,
            m: self.m,
            q: self.q.clone(),
            lambda0: self.lambda0,
            condition_1_star: self.condition_1_star,
            degenerate: self.degenerate,
            labels: self.labels.clone(),
        }
    }
}

fn apply_permutation(config: &UrnConfig) -> Result<(UrnConfig, Vec<usize>)> {
    let d = config.a.len();
    let Some(perm) = &config.permutation else {
        return Ok((config.clone(), (1..=d).collect()));
    };
    if perm.len() != d {
        return Err(Error::BadPermutation(format!(
            "has {} entries for {d} colors",
            perm.len()
        )));
    }
    let mut seen = vec![false; d];
    for &label in perm {
        if label == 0 || label > d || seen[label - 1] {
            return Err(Error::BadPermutation(format!(
                "{perm:?} is not a permutation of 1..={d}"
            )));
        }
        seen[label - 1] = true;
    }
    let mut out = config.clone();
    out.a = perm.iter().map(|&l| config.a[l - 1]).collect();
    out.schedule.colors = perm
        .iter()
        .map(|&l| config.schedule.colors[l - 1].clone())
        .collect();
    out.permutation = None;
    Ok((out, perm.clone()))
}

/// Checks the model assumptions and derives `m`, `q`, `lambda0`.
pub fn validate_config(config: &UrnConfig) -> Result<ValidatedConfig> {
    let d = config.a.len();
    if d < 2 {
        return Err(Error::TooFewColors(d));
    }
    if config.schedule.d() != d {
        return Err(Error::DimensionMismatch {
            what: "schedule.colors",
            expected: d,
            found: config.schedule.d(),
        });
    }
    if config.d0 == 0 || config.d0 > d {
        return Err(Error::BadD0 { d0: config.d0, d });
    }
    let (canon, labels) = apply_permutation(config)?;
    for (j, &a) in canon.a.iter().enumerate() {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::NonPositiveInitial {
                color: labels[j],
                value: a,
            });
        }
    }
    let sched = &canon.schedule;
    sched.validate().map_err(|e| match e {
        Error::BadSupport { color, reason } if color > 0 => Error::BadSupport {
            color: labels[color - 1],
            reason,
        },
        other => other,
    })?;

    let d0 = canon.d0;
    let ref_profile = sched.mean_profile(0);
    for j in 1..d0 {
        let prof = sched.mean_profile(j);
        if !prof.same_function(&ref_profile) {
            let n = (1..=1000u64)
                .find(|&n| (prof.at(n) - ref_profile.at(n)).abs() > 1e-12)
                .unwrap_or(0);
            let probe = n.max(1);
            return Err(Error::MeanMismatch {
                color: labels[j],
                n,
                expected: sched.mean(0, probe),
                found: sched.mean(j, probe),
            });
        }
    }

    let m = ref_profile.limit;
    let lambda0 = (d0..d)
        .map(|j| sched.mean_limit(j))
        .fold(0.0_f64, f64::max);
    if m <= lambda0 || m <= 0.0 {
        return Err(Error::DominationViolation { m, lambda0 });
    }
    let q = (0..d0).map(|j| sched.second_moment_limit(j)).collect();

    Ok(ValidatedConfig {
        samplers: sched.compile(),
        d,
        d0,
        m,
        q,
        lambda0,
        condition_1_star: 2.0 * lambda0 < m,
        degenerate: d0 == 1,
        labels,
        config: canon,
    })
}
