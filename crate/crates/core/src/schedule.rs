//! Reinforcement families and per-color schedules.
//!
//! A schedule assigns every color a bounded distribution on `[0, beta]`
//! that may depend on the time index `n >= 1` only through declared
//! parameter sequences with explicit limits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A real parameter sequence `n -> value(n)` with a known limit.
///
/// Either a constant, or `limit + amplitude * n^(-exponent)` with
/// `exponent > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamSeq {
    Constant(f64),
    Decay {
        limit: f64,
        amplitude: f64,
        exponent: f64,
    },
}

impl ParamSeq {
    #[inline]
    pub fn at(&self, n: u64) -> f64 {
        match *self {
            ParamSeq::Constant(v) => v,
            ParamSeq::Decay {
                limit,
                amplitude,
                exponent,
            } => limit + amplitude * (n as f64).powf(-exponent),
        }
    }

    pub fn limit(&self) -> f64 {
        match *self {
            ParamSeq::Constant(v) => v,
            ParamSeq::Decay { limit, .. } => limit,
        }
    }

    /// Smallest and largest value taken over `n >= 1`.
    ///
    /// The decaying form is monotone, so the range is spanned by `n = 1`
    /// and the limit.
    pub fn range(&self) -> (f64, f64) {
        match *self {
            ParamSeq::Constant(v) => (v, v),
            ParamSeq::Decay {
                limit, amplitude, ..
            } => {
                let first = limit + amplitude;
                (first.min(limit), first.max(limit))
            }
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        match *self {
            ParamSeq::Constant(v) if !v.is_finite() => Err("parameter is not finite".into()),
            ParamSeq::Decay {
                limit,
                amplitude,
                exponent,
            } => {
                if !(limit.is_finite() && amplitude.is_finite() && exponent.is_finite()) {
                    Err("parameter sequence is not finite".into())
                } else if exponent <= 0.0 {
                    Err(format!("decay exponent {exponent} must be positive"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    fn is_varying(&self) -> bool {
        matches!(self, ParamSeq::Decay { amplitude, .. } if *amplitude != 0.0)
    }
}

/// Distribution family of the reinforcement `A_{n,j}` for one color.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// Deterministic reinforcement `value`.
    PointMass { value: f64 },
    /// `beta` with probability `p(n)`, otherwise 0.
    Coin { p: ParamSeq },
    /// Uniform on the integers `lo..=hi`.
    DiscreteUniform { lo: u64, hi: u64 },
    /// `points` equally spaced atoms on `[0, beta]` with symmetric Beta(shape, shape)
    /// shaped weights evaluated at cell midpoints.
    BetaGrid { shape: f64, points: usize },
}

/// `mean(n) = limit + amplitude * n^(-exponent)`; used to compare means analytically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanProfile {
    pub limit: f64,
    pub amplitude: f64,
    pub exponent: f64,
}

impl MeanProfile {
    fn constant(limit: f64) -> Self {
        MeanProfile {
            limit,
            amplitude: 0.0,
            exponent: 0.0,
        }
    }

    /// Equal as functions of `n >= 1`, up to a relative tolerance on coefficients.
    pub fn same_function(&self, other: &MeanProfile) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
        if !close(self.limit, other.limit) {
            return false;
        }
        match (self.amplitude == 0.0, other.amplitude == 0.0) {
            (true, true) => true,
            (false, false) => {
                close(self.amplitude, other.amplitude) && close(self.exponent, other.exponent)
            }
            _ => false,
        }
    }

    pub fn at(&self, n: u64) -> f64 {
        if self.amplitude == 0.0 {
            self.limit
        } else {
            self.limit + self.amplitude * (n as f64).powf(-self.exponent)
        }
    }
}

/// Per-color reinforcement rules sharing one support bound `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReinforcementSchedule {
    pub beta: f64,
    pub colors: Vec<Family>,
}

/// A family with any lookup tables precomputed for sampling.
#[derive(Debug, Clone)]
pub(crate) enum Sampler {
    PointMass(f64),
    Coin { p: ParamSeq, beta: f64 },
    DiscreteUniform { lo: f64, count: u64 },
    Grid { atoms: Vec<f64>, cdf: Vec<f64> },
}

impl Sampler {
    /// Maps one uniform `u` in (0,1) to a reinforcement at time `n`.
    #[inline]
    pub(crate) fn sample(&self, n: u64, u: f64) -> f64 {
        match self {
            Sampler::PointMass(v) => *v,
            Sampler::Coin { p, beta } => {
                if u < p.at(n) {
                    *beta
                } else {
                    0.0
                }
            }
            Sampler::DiscreteUniform { lo, count } => {
                let k = ((u * *count as f64) as u64).min(count - 1);
                lo + k as f64
            }
            Sampler::Grid { atoms, cdf } => {
                let idx = cdf.partition_point(|&c| c < u).min(atoms.len() - 1);
                atoms[idx]
            }
        }
    }
}

fn grid_weights(shape: f64, points: usize) -> Vec<f64> {
    let k = points as f64;
    let raw: Vec<f64> = (0..points)
        .map(|i| {
            let t = (i as f64 + 0.5) / k;
            (t * (1.0 - t)).powf(shape - 1.0)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

fn grid_atoms(beta: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| beta * i as f64 / (points - 1) as f64)
        .collect()
}

impl ReinforcementSchedule {
    pub fn d(&self) -> usize {
        self.colors.len()
    }

    /// Checks family parameters and that every atom lies in `[0, beta]`.
    /// `color` in errors is 1-based.
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::BadSupport {
                color: 0,
                reason: format!("beta = {} must be positive and finite", self.beta),
            });
        }
        for (idx, fam) in self.colors.iter().enumerate() {
            let color = idx + 1;
            let bad = |reason: String| Error::BadSupport { color, reason };
            match fam {
                Family::PointMass { value } => {
                    if !(value.is_finite() && *value >= 0.0 && *value <= self.beta) {
                        return Err(bad(format!(
                            "point mass {value} outside [0, {}]",
                            self.beta
                        )));
                    }
                }
                Family::Coin { p } => {
                    p.validate().map_err(bad)?;
                    let (lo, hi) = p.range();
                    if lo < 0.0 || hi > 1.0 {
                        return Err(bad(format!(
                            "coin probability ranges over [{lo}, {hi}], outside [0, 1]"
                        )));
                    }
                }
                Family::DiscreteUniform { lo, hi } => {
                    if lo > hi {
                        return Err(bad(format!("empty integer range {lo}..={hi}")));
                    }
                    if *hi as f64 > self.beta {
                        return Err(bad(format!(
                            "integer range {lo}..={hi} exceeds beta = {}",
                            self.beta
                        )));
                    }
                }
                Family::BetaGrid { shape, points } => {
                    if !(shape.is_finite() && *shape > 0.0) {
                        return Err(bad(format!("grid shape {shape} must be positive")));
                    }
                    if *points < 2 {
                        return Err(bad(format!("grid needs at least 2 points, got {points}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Exact `E A_{n,j}` (0-based `j`).
    pub fn mean(&self, j: usize, n: u64) -> f64 {
        match &self.colors[j] {
            Family::PointMass { value } => *value,
            Family::Coin { p } => self.beta * p.at(n),
            Family::DiscreteUniform { lo, hi } => (*lo as f64 + *hi as f64) / 2.0,
            Family::BetaGrid { shape, points } => {
                let w = grid_weights(*shape, *points);
                grid_atoms(self.beta, *points)
                    .iter()
                    .zip(&w)
                    .map(|(x, p)| x * p)
                    .sum()
            }
        }
    }

    /// Exact `E A_{n,j}^2` (0-based `j`).
    pub fn second_moment(&self, j: usize, n: u64) -> f64 {
        match &self.colors[j] {
            Family::PointMass { value } => value * value,
            Family::Coin { p } => self.beta * self.beta * p.at(n),
            Family::DiscreteUniform { lo, hi } => {
                // sum_{k=0}^{h} k^2 = h(h+1)(2h+1)/6
                let s = |h: f64| h * (h + 1.0) * (2.0 * h + 1.0) / 6.0;
                let (lo, hi) = (*lo as f64, *hi as f64);
                let below = if lo > 0.0 { s(lo - 1.0) } else { 0.0 };
                (s(hi) - below) / (hi - lo + 1.0)
            }
            Family::BetaGrid { shape, points } => {
                let w = grid_weights(*shape, *points);
                grid_atoms(self.beta, *points)
                    .iter()
                    .zip(&w)
                    .map(|(x, p)| x * x * p)
                    .sum()
            }
        }
    }

    pub fn mean_limit(&self, j: usize) -> f64 {
        self.mean_profile(j).limit
    }

    pub fn second_moment_limit(&self, j: usize) -> f64 {
        match &self.colors[j] {
            Family::Coin { p } => self.beta * self.beta * p.limit(),
            _ => self.second_moment(j, 1),
        }
    }

    /// Closed form of `n -> mean(j, n)`.
    pub fn mean_profile(&self, j: usize) -> MeanProfile {
        match &self.colors[j] {
            Family::Coin { p } => match *p {
                ParamSeq::Decay {
                    limit,
                    amplitude,
                    exponent,
                } if p.is_varying() => MeanProfile {
                    limit: self.beta * limit,
                    amplitude: self.beta * amplitude,
                    exponent,
                },
                _ => MeanProfile::constant(self.beta * p.limit()),
            },
            _ => MeanProfile::constant(self.mean(j, 1)),
        }
    }

    pub(crate) fn compile(&self) -> Vec<Sampler> {
        self.colors
            .iter()
            .map(|fam| match fam {
                Family::PointMass { value } => Sampler::PointMass(*value),
                Family::Coin { p } => Sampler::Coin {
                    p: *p,
                    beta: self.beta,
                },
                Family::DiscreteUniform { lo, hi } => Sampler::DiscreteUniform {
                    lo: *lo as f64,
                    count: hi - lo + 1,
                },
                Family::BetaGrid { shape, points } => {
                    let w = grid_weights(*shape, *points);
                    let mut acc = 0.0;
                    let mut cdf: Vec<f64> = w
                        .iter()
                        .map(|p| {
                            acc += p;
                            acc
                        })
                        .collect();
                    *cdf.last_mut().unwrap() = 1.0;
                    Sampler::Grid {
                        atoms: grid_atoms(self.beta, *points),
                        cdf,
                    }
                }
            })
            .collect()
    }
}
