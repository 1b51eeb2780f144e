//! Single-trajectory urn dynamics.
//!
//! At each step a color is drawn with probability proportional to its ball
//! count and only the drawn color is reinforced. A trajectory consumes
//! exactly two uniforms per step from its stream: the draw uniform first,
//! then the reinforcement uniform.

use serde::{Deserialize, Serialize};

use crate::config::ValidatedConfig;
use crate::error::{Error, Result};
use crate::rng::{ReplicationStream, SeedRecord};

/// Running sufficient statistics of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrnState {
    pub n: u64,
    /// Balls per color, `N_{n,j}`.
    pub balls: Vec<f64>,
    /// Draw counts `T_{n,j}`.
    pub draws: Vec<u64>,
    /// `sum_k X_{k,j} A_{k,j}`.
    pub reinforcement: Vec<f64>,
    /// `sum_k X_{k,j} A_{k,j}^2`.
    pub reinforcement_sq: Vec<f64>,
}

impl UrnState {
    pub fn initial(a: &[f64]) -> Self {
        let d = a.len();
        UrnState {
            n: 0,
            balls: a.to_vec(),
            draws: vec![0; d],
            reinforcement: vec![0.0; d],
            reinforcement_sq: vec![0.0; d],
        }
    }

    pub fn d(&self) -> usize {
        self.balls.len()
    }

    /// `S_n`, all balls in the urn.
    pub fn total(&self) -> f64 {
        self.balls.iter().sum()
    }

    /// `S*_n`, balls of colors `1..=d0`.
    pub fn starred_total(&self, d0: usize) -> f64 {
        self.balls[..d0].iter().sum()
    }

    /// Current proportions `Z_{n,j}`.
    pub fn proportions(&self) -> Vec<f64> {
        let s = self.total();
        self.balls.iter().map(|b| b / s).collect()
    }

    /// Records one draw of `color` reinforced by `amount`.
    #[inline]
    pub fn apply_draw(&mut self, color: usize, amount: f64) {
        self.n += 1;
        self.balls[color] += amount;
        self.draws[color] += 1;
        self.reinforcement[color] += amount;
        self.reinforcement_sq[color] += amount * amount;
    }
}

/// Returns the unique `j` with `F_{j-1} < u <= F_j`, `F_j = z_1 + ... + z_j`.
///
/// If rounding leaves `u` above the final partial sum, the last color with
/// positive weight is returned.
pub fn draw_color(z: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    for (j, &zj) in z.iter().enumerate() {
        cum += zj;
        if u <= cum {
            return j;
        }
    }
    last_positive(z)
}

fn last_positive(w: &[f64]) -> usize {
    w.iter().rposition(|&x| x > 0.0).unwrap_or(w.len() - 1)
}

/// [`draw_color`] on unnormalized weights: compares `u * total` against
/// cumulative weights instead of dividing every weight.
#[inline]
pub(crate) fn draw_weighted(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut cum = 0.0;
    for (j, &w) in weights.iter().enumerate() {
        cum += w;
        if target <= cum {
            return j;
        }
    }
    last_positive(weights)
}

/// Advances `state` by one step using two uniforms from `rng`.
#[inline]
pub fn step(state: &mut UrnState, config: &ValidatedConfig, rng: &mut ReplicationStream) {
    let u_draw = rng.next_open01();
    let u_reinf = rng.next_open01();
    step_with(state, config, u_draw, u_reinf);
}

/// One step driven by explicit uniforms.
#[inline]
pub fn step_with(state: &mut UrnState, config: &ValidatedConfig, u_draw: f64, u_reinf: f64) {
    let color = draw_weighted(&state.balls, u_draw);
    let amount = config.samplers[color].sample(state.n + 1, u_reinf);
    state.apply_draw(color, amount);
}

/// A trajectory together with its random stream, so it can be continued.
#[derive(Debug, Clone)]
pub struct Trajectory<'a> {
    config: &'a ValidatedConfig,
    state: UrnState,
    rng: ReplicationStream,
}

impl<'a> Trajectory<'a> {
    pub fn new(config: &'a ValidatedConfig, base_seed: u64, replication: u64) -> Self {
        Trajectory {
            config,
            state: UrnState::initial(config.a()),
            rng: ReplicationStream::new(base_seed, replication),
        }
    }

    pub fn state(&self) -> &UrnState {
        &self.state
    }

    pub fn seed(&self) -> SeedRecord {
        self.rng.seed()
    }

    pub fn config(&self) -> &ValidatedConfig {
        self.config
    }

    /// Runs forward until `state.n == target` (no-op if already past it).
    pub fn advance_to(&mut self, target: u64) {
        while self.state.n < target {
            step(&mut self.state, self.config, &mut self.rng);
        }
    }

    /// Continues this trajectory to `proxy_horizon` and returns `Z*` there.
    ///
    /// Requires `proxy_horizon >= 100 * n`, where `n` is the current time.
    pub fn continue_to_proxy(&mut self, proxy_horizon: u64) -> Result<LimitProxy> {
        let required = (100 * self.state.n).max(MIN_PROXY_HORIZON);
        if proxy_horizon < required {
            return Err(Error::HorizonTooSmall {
                proxy_horizon,
                required,
            });
        }
        self.advance_to(proxy_horizon);
        let d0 = self.config.d0;
        let s = self.state.starred_total(d0);
        Ok(LimitProxy {
            zhat: self.state.balls[..d0].iter().map(|b| b / s).collect(),
            proxy_horizon,
            source_seed: self.rng.seed(),
        })
    }
}

/// Smallest accepted proxy horizon.
pub const MIN_PROXY_HORIZON: u64 = 100;
/// Default floor of the proxy horizon before the ceiling is applied.
pub const DEFAULT_PROXY_FLOOR: u64 = 1_000_000;

/// Same-trajectory surrogate for the almost-sure limits of `Z*_{n,j}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitProxy {
    pub zhat: Vec<f64>,
    pub proxy_horizon: u64,
    pub source_seed: SeedRecord,
}

/// Metadata that accompanies every D-statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyMeta {
    pub proxy_horizon: u64,
    pub source_seed: SeedRecord,
}

impl LimitProxy {
    pub fn meta(&self) -> ProxyMeta {
        ProxyMeta {
            proxy_horizon: self.proxy_horizon,
            source_seed: self.source_seed,
        }
    }
}

/// `max(100 n, min(10^6, ceiling))`.
pub fn default_proxy_horizon(n: u64, ceiling: Option<u64>) -> u64 {
    let floor = ceiling.map_or(DEFAULT_PROXY_FLOOR, |c| c.min(DEFAULT_PROXY_FLOOR));
    (100 * n).max(floor).max(MIN_PROXY_HORIZON)
}

/// Runs a fresh trajectory to its proxy horizon.
pub fn limit_proxy(
    config: &ValidatedConfig,
    proxy_horizon: u64,
    base_seed: u64,
    replication: u64,
) -> Result<LimitProxy> {
    Trajectory::new(config, base_seed, replication).continue_to_proxy(proxy_horizon)
}

fn check_checkpoints(horizon: u64, checkpoints: &[u64]) -> Result<()> {
    if let Some(w) = checkpoints.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::BadCheckpoints(format!(
            "not strictly increasing at {} -> {}",
            w[0], w[1]
        )));
    }
    match (checkpoints.first(), checkpoints.last()) {
        (Some(&first), Some(&last)) if first < 1 || last > horizon => Err(Error::BadCheckpoints(
            format!("checkpoints must lie in [1, {horizon}]"),
        )),
        _ => Ok(()),
    }
}

/// Runs one trajectory and returns state copies at each checkpoint.
///
/// `horizon = 0` returns the initial state alone (and requires no checkpoints).
pub fn run(
    config: &ValidatedConfig,
    horizon: u64,
    checkpoints: &[u64],
    base_seed: u64,
    replication: u64,
) -> Result<Vec<UrnState>> {
    let mut traj = Trajectory::new(config, base_seed, replication);
    if horizon == 0 {
        if !checkpoints.is_empty() {
            return Err(Error::BadCheckpoints(
                "horizon 0 admits no checkpoints".into(),
            ));
        }
        return Ok(vec![traj.state().clone()]);
    }
    if checkpoints.is_empty() {
        return Err(Error::EmptyCheckpoints);
    }
    check_checkpoints(horizon, checkpoints)?;
    let mut out = Vec::with_capacity(checkpoints.len());
    for &c in checkpoints {
        traj.advance_to(c);
        out.push(traj.state().clone());
    }
    traj.advance_to(horizon);
    Ok(out)
}

/// Geometric grid `{ceil(10^(k/4))}` intersected with `[1, horizon]`, always
/// ending at `horizon`.
pub fn geometric_checkpoints(horizon: u64) -> Vec<u64> {
    let mut out: Vec<u64> = Vec::new();
    for k in 0u32.. {
        let c = if k % 4 == 0 {
            10u64.checked_pow(k / 4)
        } else {
            let v = 10f64.powf(k as f64 / 4.0).ceil();
            (v < u64::MAX as f64).then_some(v as u64)
        };
        match c {
            Some(c) if c <= horizon => {
                if out.last() != Some(&c) {
                    out.push(c);
                }
            }
            _ => break,
        }
    }
    if horizon > 0 && out.last() != Some(&horizon) {
        out.push(horizon);
    }
    out
}
