//! Urn-based test of group equality on a fully observed panel.
//!
//! No urn is attached to the data, so the draw indicators are simulated:
//! starting from `a_i = 1`, row `n + 1` is assigned to the color chosen by an
//! auxiliary uniform `Y_n` against the current proportions, and the observed
//! reinforcement of that color in that row is added.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{test_with_moments, Decision, InferenceReport, RejectionFrequency, TestMode};
use crate::rng::{ReplicationStream, SeedRecord};
use crate::urn::{draw_color, UrnState};

/// `rows[k][j]` is `A_{k+1, j+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedPanel {
    pub labels: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub beta: f64,
}

impl ObservedPanel {
    /// Validates the panel. Without an explicit `beta` the largest entry is used.
    pub fn new(labels: Vec<String>, rows: Vec<Vec<f64>>, beta: Option<f64>) -> Result<Self> {
        let d = labels.len();
        if d < 2 {
            return Err(Error::BadPanel(format!("need at least 2 columns, found {d}")));
        }
        if rows.is_empty() {
            return Err(Error::BadPanel("panel has no rows".into()));
        }
        let mut max: f64 = 0.0;
        for (k, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::BadPanel(format!(
                    "row {} has {} cells, expected {d}",
                    k + 1,
                    row.len()
                )));
            }
            for (j, &x) in row.iter().enumerate() {
                if !x.is_finite() || x < 0.0 {
                    return Err(Error::BadPanel(format!(
                        "cell ({}, {}) = {x} is not a finite non-negative number",
                        k + 1,
                        j + 1
                    )));
                }
                max = max.max(x);
            }
        }
        let beta = match beta {
            Some(b) if !(b.is_finite() && b >= max) => {
                return Err(Error::BadPanel(format!("beta = {b} is below the largest entry {max}")))
            }
            Some(b) => b,
            None => max,
        };
        Ok(ObservedPanel { labels, rows, beta })
    }

    pub fn d(&self) -> usize {
        self.labels.len()
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Full-panel means `sum_k A_{k,i} / n` and variances `sum_k (A_{k,i} - mean)^2 / n`.
    pub fn column_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n() as f64;
        let d = self.d();
        let mut mean = vec![0.0; d];
        for row in &self.rows {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in &self.rows {
            for j in 0..d {
                var[j] += (row[j] - mean[j]).powi(2);
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        (mean, var)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignments {
    /// 0-based color assigned to each row.
    pub colors: Vec<usize>,
    /// `z[k]` is `Z_k`, starting from `Z_0 = 1/d`.
    pub z: Vec<Vec<f64>>,
    pub state: UrnState,
    pub seed: SeedRecord,
}

impl Assignments {
    /// The indicator matrix, one row per panel row.
    pub fn x_matrix(&self) -> Vec<Vec<u8>> {
        let d = self.state.d();
        self.colors
            .iter()
            .map(|&c| (0..d).map(|j| u8::from(j == c)).collect())
            .collect()
    }
}

fn assign<F: FnMut() -> f64>(panel: &ObservedPanel, mut next_y: F, keep_path: bool) -> (Vec<usize>, Vec<Vec<f64>>, UrnState) {
    let mut state = UrnState::initial(&vec![1.0; panel.d()]);
    let mut colors = Vec::with_capacity(panel.n());
    let mut path = Vec::with_capacity(if keep_path { panel.n() + 1 } else { 0 });
    let mut z = state.proportions();
    for row in &panel.rows {
        if keep_path {
            path.push(z.clone());
        }
        let j = draw_color(&z, next_y());
        state.apply_draw(j, row[j]);
        colors.push(j);
        z = state.proportions();
    }
    if keep_path {
        path.push(z);
    }
    (colors, path, state)
}

/// Simulates the draw indicators with `Y_n` from the stream of `seed`.
pub fn simulate_assignments(panel: &ObservedPanel, seed: SeedRecord) -> Assignments {
    let mut rng = ReplicationStream::new(seed.base_seed, seed.replication);
    let (colors, z, state) = assign(panel, || rng.next_open01(), true);
    Assignments { colors, z, state, seed }
}

/// Same recursion driven by explicit `Y_0, Y_1, ...`; `ys` needs one value per row.
pub fn assignments_from_uniforms(panel: &ObservedPanel, ys: &[f64]) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    if ys.len() < panel.n() {
        return Err(Error::BadPanel(format!("need {} uniforms, got {}", panel.n(), ys.len())));
    }
    let mut it = ys.iter();
    let (colors, z, _) = assign(panel, || *it.next().unwrap(), true);
    Ok((colors, z))
}

fn test_state(
    panel: &ObservedPanel,
    state: &UrnState,
    jstar: &[usize],
    mode: TestMode,
    alpha: f64,
) -> Result<InferenceReport> {
    let (mhat, s2) = panel.column_moments();
    test_with_moments(state, jstar, mode, alpha, &mhat, &s2)
}

/// Simulates the indicators under `seed` and tests `H0: J = jstar`.
pub fn anova_test(
    panel: &ObservedPanel,
    jstar: &[usize],
    mode: TestMode,
    alpha: f64,
    seed: SeedRecord,
) -> Result<InferenceReport> {
    let a = simulate_assignments(panel, seed);
    let mut report = test_state(panel, &a.state, jstar, mode, alpha)?;
    report.simulation_seed = Some(seed);
    Ok(report)
}

/// Repeats the test over replications `0..seeds` of `base_seed` on the same
/// panel. The report is the one for replication 0, with the rejection
/// frequency attached. The frequency has no formal level of its own.
pub fn anova_rejection_frequency(
    panel: &ObservedPanel,
    jstar: &[usize],
    mode: TestMode,
    alpha: f64,
    base_seed: u64,
    seeds: u64,
) -> Result<InferenceReport> {
    if seeds == 0 {
        return Err(Error::InvalidSpec("need at least one seed".into()));
    }
    let decisions: Vec<bool> = (0..seeds)
        .into_par_iter()
        .map(|r| {
            let mut rng = ReplicationStream::new(base_seed, r);
            let (_, _, state) = assign(panel, || rng.next_open01(), false);
            test_state(panel, &state, jstar, mode, alpha).map(|rep| rep.decision == Decision::Reject)
        })
        .collect::<Result<_>>()?;
    let mut report = anova_test(panel, jstar, mode, alpha, SeedRecord { base_seed, replication: 0 })?;
    let rate = decisions.iter().filter(|&&r| r).count() as f64 / seeds as f64;
    report.rejection_frequency = Some(RejectionFrequency {
        seeds,
        rate,
        se: (rate * (1.0 - rate) / seeds as f64).sqrt(),
    });
    Ok(report)
}
