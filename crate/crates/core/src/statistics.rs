//! Per-checkpoint statistics of a trajectory.
//!
//! For colors `j <= d0`:
//!
//! ```text
//! C_j  = sqrt(n) (M_j  - Z_j)        D_j  = sqrt(n) (Z_j  - zhat_j)
//! C*_j = sqrt(n) (M*_j - Z*_j)       D*_j = sqrt(n) (Z*_j - zhat_j)
//! ```
//!
//! with `M*_j = T_j / (1 + sum_{i<=d0} T_i)` and `Z*_j = N_j / sum_{i<=d0} N_i`.

use serde::{Deserialize, Serialize};

use crate::config::ValidatedConfig;
use crate::error::{Error, Result};
use crate::urn::{LimitProxy, ProxyMeta, UrnState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proportions {
    pub z: Vec<f64>,
    pub zstar: Vec<f64>,
    pub m: Vec<f64>,
    pub mstar: Vec<f64>,
}

/// Proportions of all colors and their starred versions over `1..=d0`.
pub fn proportions(state: &UrnState, d0: usize) -> Proportions {
    let n = state.n as f64;
    let s = state.total();
    let s_star = state.starred_total(d0);
    let t_star: u64 = state.draws[..d0].iter().sum();
    Proportions {
        z: state.balls.iter().map(|b| b / s).collect(),
        zstar: state.balls[..d0].iter().map(|b| b / s_star).collect(),
        m: state.draws.iter().map(|&t| t as f64 / n).collect(),
        mstar: state.draws[..d0]
            .iter()
            .map(|&t| t as f64 / (1 + t_star) as f64)
            .collect(),
    }
}

/// All statistics at one checkpoint. `d` and `dstar` exist only together
/// with the proxy that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub n: u64,
    pub z: Vec<f64>,
    pub zstar: Vec<f64>,
    pub m: Vec<f64>,
    pub mstar: Vec<f64>,
    pub c: Vec<f64>,
    pub cstar: Vec<f64>,
    pub d: Option<Vec<f64>>,
    pub dstar: Option<Vec<f64>>,
    pub proxy: Option<ProxyMeta>,
    /// `sum_{i > d0} Z_{n,i}`.
    pub dominated_mass: f64,
}

/// D-statistics against a proxy, `(D_j, D*_j)` for `j <= d0`.
pub fn clt_d_stats(p: &Proportions, n: u64, proxy: &LimitProxy) -> Result<(Vec<f64>, Vec<f64>)> {
    if proxy.proxy_horizon <= n {
        return Err(Error::ProxyMismatch(format!(
            "proxy horizon {} does not exceed n = {n}",
            proxy.proxy_horizon
        )));
    }
    if proxy.zhat.len() != p.zstar.len() {
        return Err(Error::ProxyMismatch(format!(
            "proxy has {} components, snapshot has d0 = {}",
            proxy.zhat.len(),
            p.zstar.len()
        )));
    }
    let rn = (n as f64).sqrt();
    let d = p.z.iter().zip(&proxy.zhat).map(|(z, h)| rn * (z - h)).collect();
    let dstar = p
        .zstar
        .iter()
        .zip(&proxy.zhat)
        .map(|(z, h)| rn * (z - h))
        .collect();
    Ok((d, dstar))
}

/// Builds the snapshot of `state` (requires `n >= 1`).
pub fn snapshot(state: &UrnState, d0: usize, proxy: Option<&LimitProxy>) -> Result<Snapshot> {
    if state.n == 0 {
        return Err(Error::BadCheckpoints("statistics need n >= 1".into()));
    }
    let p = proportions(state, d0);
    let rn = (state.n as f64).sqrt();
    let c = (0..d0).map(|j| rn * (p.m[j] - p.z[j])).collect();
    let cstar = (0..d0).map(|j| rn * (p.mstar[j] - p.zstar[j])).collect();
    let (d, dstar) = match proxy {
        Some(px) => {
            let (d, ds) = clt_d_stats(&p, state.n, px)?;
            (Some(d), Some(ds))
        }
        None => (None, None),
    };
    Ok(Snapshot {
        n: state.n,
        dominated_mass: p.z[d0..].iter().sum(),
        z: p.z,
        zstar: p.zstar,
        m: p.m,
        mstar: p.mstar,
        c,
        cstar,
        d,
        dstar,
        proxy: proxy.map(LimitProxy::meta),
    })
}

/// `n^(1-lambda) * sum_{i > d0} Z_{n,i}` at each state.
///
/// `lambda` must lie in `(lambda0 / m, 1]`; `lambda = 1` gives the raw dominated mass.
pub fn dominated_decay(
    states: &[UrnState],
    config: &ValidatedConfig,
    lambda: f64,
) -> Result<Vec<f64>> {
    let lower = config.lambda0 / config.m;
    if !(lambda > lower && lambda <= 1.0) {
        return Err(Error::LambdaOutOfRange { lambda, lower });
    }
    let d0 = config.d0;
    Ok(states
        .iter()
        .map(|s| {
            let mass: f64 = s.balls[d0..].iter().sum::<f64>() / s.total();
            if lambda == 1.0 {
                mass
            } else {
                (s.n as f64).powf(1.0 - lambda) * mass
            }
        })
        .collect())
}

/// Divergence diagnostics over a trajectory.
///
/// The gap `D*_j - D_j = sqrt(n) (Z*_j - Z_j)` does not depend on the proxy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSeries {
    pub n: Vec<u64>,
    /// `sqrt(n) * sum_{i > d0} Z_{n,i}`.
    pub scaled_dominated: Vec<f64>,
    /// `gap[k][j]` for checkpoint `k` and color `j <= d0`.
    pub gap: Vec<Vec<f64>>,
}

pub fn divergence_diag(states: &[UrnState], d0: usize) -> DivergenceSeries {
    let mut out = DivergenceSeries {
        n: Vec::with_capacity(states.len()),
        scaled_dominated: Vec::with_capacity(states.len()),
        gap: Vec::with_capacity(states.len()),
    };
    for s in states {
        let p = proportions(s, d0);
        let rn = (s.n as f64).sqrt();
        out.n.push(s.n);
        out.scaled_dominated
            .push(rn * p.z[d0..].iter().sum::<f64>());
        out.gap
            .push((0..d0).map(|j| rn * (p.zstar[j] - p.z[j])).collect());
    }
    out
}
