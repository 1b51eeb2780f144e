//! Replicated Monte Carlo experiments over independent trajectories.
//!
//! Replication `r` of an experiment uses stream `(base_seed, r)`. Per-replication
//! results are collected in index order and aggregated sequentially, so a
//! report does not depend on how many threads produced it.

use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{validate_config, ConfigSummary, UrnConfig, ValidatedConfig};
use crate::error::{Error, Result};
use crate::inference::{confidence_interval, estimate_v, test_h0, Decision, TestMode};
use crate::ks::{ks_critical_1pct, ks_normality, ks_uniform, KsResult, MIN_KS_SAMPLES};
use crate::statistics::{proportions, snapshot};
use crate::urn::{default_proxy_horizon, geometric_checkpoints, Trajectory, UrnState};

pub const MIN_REPLICATIONS: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Statistic {
    /// `D*_{n,j} / sqrt(V_{n,j})`.
    DstarNormalized,
    /// `K_{n,j} = C*_{n,j} / sqrt(U_{n,j})`.
    CstarNormalized,
    /// `D_{n,j} / sqrt(V_{n,j})`.
    DNormalized,
    Coverage,
    Size,
    Power,
    LemmaConvergence,
    Divergence,
    /// The proxy `zhat_j` itself, compared with uniform(0, 1).
    LimitProxy,
}

impl Statistic {
    pub const ALL: [Statistic; 9] = [
        Statistic::DstarNormalized,
        Statistic::CstarNormalized,
        Statistic::DNormalized,
        Statistic::Coverage,
        Statistic::Size,
        Statistic::Power,
        Statistic::LemmaConvergence,
        Statistic::Divergence,
        Statistic::LimitProxy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Statistic::DstarNormalized => "dstar-normalized",
            Statistic::CstarNormalized => "cstar-normalized",
            Statistic::DNormalized => "d-normalized",
            Statistic::Coverage => "coverage",
            Statistic::Size => "size",
            Statistic::Power => "power",
            Statistic::LemmaConvergence => "lemma-convergence",
            Statistic::Divergence => "divergence",
            Statistic::LimitProxy => "limit-proxy",
        }
    }

    pub fn parse(s: &str) -> Option<Statistic> {
        Statistic::ALL.into_iter().find(|x| x.name() == s)
    }

    fn needs_proxy(self) -> bool {
        matches!(
            self,
            Statistic::DstarNormalized
                | Statistic::DNormalized
                | Statistic::Coverage
                | Statistic::LimitProxy
        )
    }
}

fn default_alpha() -> f64 {
    0.05
}
fn default_color() -> usize {
    1
}
fn default_inflation() -> f64 {
    1.0
}
fn default_tolerance() -> f64 {
    0.1
}

/// One experiment. Colors are 1-based in the canonical (validated) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub config: UrnConfig,
    pub horizon: u64,
    /// Defaults to `max(100 n, 10^6)` capped by the config's proxy ceiling.
    #[serde(default)]
    pub proxy_horizon: Option<u64>,
    pub replications: u64,
    pub base_seed: u64,
    pub statistics: Vec<Statistic>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_color")]
    pub color: usize,
    /// Tested set for `cstar-normalized`, `size` and `power`; defaults to `1..=d0`.
    #[serde(default)]
    pub jstar: Option<Vec<usize>>,
    /// Reject when any `|K_{n,i}|, i in J*` exceeds the critical value, instead
    /// of only `|K_{n,color}|`.
    #[serde(default)]
    pub union_test: bool,
    /// Series checkpoints; defaults to the geometric grid up to `horizon`.
    #[serde(default)]
    pub checkpoints: Option<Vec<u64>>,
    /// Exponent of the scaled dominated mass; defaults to the midpoint of `(lambda0/m, 1]`.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Multiplies `V_{n,j}` in the coverage interval.
    #[serde(default = "default_inflation")]
    pub variance_inflation: f64,
    /// Half-width around `m` used for the within-tolerance fractions of `S_n/n`.
    #[serde(default = "default_tolerance")]
    pub lemma_tolerance: f64,
}

impl ExperimentSpec {
    pub fn new(config: UrnConfig, horizon: u64, replications: u64, base_seed: u64, statistics: Vec<Statistic>) -> Self {
        ExperimentSpec {
            config,
            horizon,
            proxy_horizon: None,
            replications,
            base_seed,
            statistics,
            alpha: default_alpha(),
            color: default_color(),
            jstar: None,
            union_test: false,
            checkpoints: None,
            lambda: None,
            variance_inflation: default_inflation(),
            lemma_tolerance: default_tolerance(),
        }
    }
}

/// Everything derived from a spec that the replications share.
struct Plan {
    cfg: ValidatedConfig,
    horizon: u64,
    proxy_horizon: Option<u64>,
    color: usize,
    jstar: Vec<usize>,
    mode: TestMode,
    alpha: f64,
    inflation: f64,
    checkpoints: Vec<u64>,
    lambda: f64,
    times: Vec<u64>,
    stats: Vec<Statistic>,
}

impl Plan {
    fn wants(&self, s: Statistic) -> bool {
        self.stats.contains(&s)
    }

    fn lemma(&self) -> bool {
        self.wants(Statistic::LemmaConvergence)
    }
}

fn plan(spec: &ExperimentSpec) -> Result<Plan> {
    let cfg = validate_config(&spec.config)?;
    let bad = |s: String| Error::InvalidSpec(s);
    if spec.replications < MIN_REPLICATIONS {
        return Err(bad(format!(
            "replications = {} is below the minimum {MIN_REPLICATIONS}",
            spec.replications
        )));
    }
    if spec.horizon == 0 {
        return Err(bad("horizon must be at least 1".into()));
    }
    if spec.statistics.is_empty() {
        return Err(bad("no statistic selected".into()));
    }
    let mut stats = spec.statistics.clone();
    stats.sort();
    stats.dedup();
    let only_tests = stats.iter().all(|s| {
        matches!(s, Statistic::CstarNormalized | Statistic::Size | Statistic::Power)
    });
    if spec.color == 0 || spec.color > cfg.d || (!only_tests && spec.color > cfg.d0) {
        return Err(bad(format!(
            "color {} is not among the non-dominated colors 1..={}",
            spec.color, cfg.d0
        )));
    }
    if !(0.0..=1.0).contains(&spec.alpha) {
        return Err(Error::BadAlpha(spec.alpha));
    }
    if !(spec.variance_inflation.is_finite() && spec.variance_inflation >= 0.0) {
        return Err(bad(format!("variance inflation {} must be finite and >= 0", spec.variance_inflation)));
    }
    let jstar: Vec<usize> = match &spec.jstar {
        Some(js) => {
            if js.iter().any(|&i| i == 0 || i > cfg.d) {
                return Err(Error::BadColor {
                    color: js.iter().copied().find(|&i| i == 0 || i > cfg.d).unwrap(),
                    d: cfg.d,
                });
            }
            js.iter().map(|i| i - 1).collect()
        }
        None => (0..cfg.d0).collect(),
    };
    let color = spec.color - 1;
    let tests = [Statistic::CstarNormalized, Statistic::Size, Statistic::Power];
    if tests.iter().any(|s| stats.contains(s)) {
        if jstar.len() < 2 {
            return Err(Error::SmallJstar(jstar.len()));
        }
        if !jstar.contains(&color) {
            return Err(bad(format!("color {} is not in J*", spec.color)));
        }
    }
    let mode = if spec.union_test {
        TestMode::Union
    } else {
        TestMode::Designated(color)
    };
    let checkpoints = match &spec.checkpoints {
        Some(c) => {
            if c.is_empty() {
                return Err(Error::EmptyCheckpoints);
            }
            if c[0] == 0 || c.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::BadCheckpoints(
                    "checkpoints must be positive and strictly increasing".into(),
                ));
            }
            c.clone()
        }
        None => geometric_checkpoints(spec.horizon),
    };
    let lower = cfg.lambda0 / cfg.m;
    let lambda = match spec.lambda {
        Some(l) => l,
        None if lower.is_finite() && lower > 0.0 => 0.5 * (lower + 1.0),
        None => 0.5,
    };
    if !(lambda > lower && lambda <= 1.0) {
        return Err(Error::LambdaOutOfRange { lambda, lower });
    }
    let mut times = vec![spec.horizon];
    if stats.contains(&Statistic::Divergence) {
        times.extend(&checkpoints);
    }
    if stats.contains(&Statistic::LemmaConvergence) {
        times.extend(&checkpoints);
        times.extend(checkpoints.iter().map(|c| 2 * c));
    }
    times.sort_unstable();
    times.dedup();
    let proxy_horizon = if stats.iter().any(|s| s.needs_proxy()) {
        let last = *times.last().unwrap();
        let n = spec
            .proxy_horizon
            .unwrap_or_else(|| default_proxy_horizon(last, spec.config.proxy_ceiling));
        let required = 100 * last;
        if n < required {
            return Err(Error::HorizonTooSmall {
                proxy_horizon: n,
                required,
            });
        }
        Some(n)
    } else {
        None
    };
    Ok(Plan {
        cfg,
        horizon: spec.horizon,
        proxy_horizon,
        color,
        jstar,
        mode,
        alpha: spec.alpha,
        inflation: spec.variance_inflation,
        checkpoints,
        lambda,
        times,
        stats,
    })
}

/// Per-replication values; `None` where a statistic was not requested or
/// could not be formed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub replication: u64,
    /// Every color of `1..=d0` has been drawn at least once by time `n`.
    pub defined: bool,
    /// Every color of J* has been drawn at least once by time `n`.
    pub jstar_defined: bool,
    pub zstar: Option<f64>,
    pub zhat: Option<f64>,
    pub v: Option<f64>,
    pub dstar_raw: Option<f64>,
    /// Computed whenever `V_{n,j} > 0`, including rows that are not `defined`.
    pub dstar_normalized: Option<f64>,
    pub d_normalized: Option<f64>,
    pub cstar_normalized: Option<f64>,
    pub covered: Option<bool>,
    pub rejected: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct SeriesRow {
    s_over_n: Vec<f64>,
    sstar_over_n: Vec<f64>,
    scaled_dominated: Vec<f64>,
    z_stability: Vec<f64>,
    sqrt_n_dominated: Vec<f64>,
    dstar_gap: Vec<f64>,
}

fn all_drawn(state: &UrnState, members: impl IntoIterator<Item = usize>) -> bool {
    members.into_iter().all(|i| state.draws[i] > 0)
}

fn one_replication(p: &Plan, base_seed: u64, r: u64) -> Result<(ReplicationRow, SeriesRow)> {
    let mut tr = Trajectory::new(&p.cfg, base_seed, r);
    let mut at_time: Vec<UrnState> = Vec::with_capacity(p.times.len());
    for &t in &p.times {
        tr.advance_to(t);
        at_time.push(tr.state().clone());
    }
    let state_at = |t: u64| &at_time[p.times.binary_search(&t).unwrap()];
    let proxy = p.proxy_horizon.map(|n| tr.continue_to_proxy(n)).transpose()?;
    let d0 = p.cfg.d0;
    let j = p.color;
    let s = state_at(p.horizon);
    let snap = snapshot(s, d0, proxy.as_ref())?;
    let defined = all_drawn(s, 0..d0);
    let jstar_defined = all_drawn(s, p.jstar.iter().copied());
    let v = if j < d0 {
        estimate_v(s, j, d0).ok().filter(|v| *v > 0.0)
    } else {
        None
    };
    let mut row = ReplicationRow {
        replication: r,
        defined,
        jstar_defined,
        zstar: snap.zstar.get(j).copied(),
        zhat: proxy.as_ref().map(|px| px.zhat[j]),
        v,
        dstar_raw: snap.dstar.as_ref().and_then(|d| d.get(j).copied()),
        dstar_normalized: None,
        d_normalized: None,
        cstar_normalized: None,
        covered: None,
        rejected: None,
    };
    if let (Some(v), Some(ds), Some(d)) = (v, &snap.dstar, &snap.d) {
        if p.wants(Statistic::DstarNormalized) {
            row.dstar_normalized = Some(ds[j] / v.sqrt());
        }
        if p.wants(Statistic::DNormalized) {
            row.d_normalized = Some(d[j] / v.sqrt());
        }
        if p.wants(Statistic::Coverage) {
            let (lo, hi) = confidence_interval(snap.zstar[j], v * p.inflation, s.n, p.alpha)?;
            let z = row.zhat.unwrap();
            row.covered = Some(lo <= z && z <= hi);
        }
    }
    let tests = [Statistic::CstarNormalized, Statistic::Size, Statistic::Power];
    if jstar_defined && tests.iter().any(|&t| p.wants(t)) {
        match test_h0(s, &p.jstar, p.mode, p.alpha) {
            Ok(rep) => {
                let c = rep.per_color.iter().find(|c| c.j == j + 1).unwrap();
                row.cstar_normalized = Some(c.k);
                row.rejected = Some(rep.decision == Decision::Reject);
            }
            Err(Error::ZeroMean) => {}
            Err(e) => return Err(e),
        }
    }
    let mut series = SeriesRow::default();
    if p.lemma() {
        for &c in &p.checkpoints {
            let a = state_at(c);
            let b = state_at(2 * c);
            let n = a.n as f64;
            let star = a.starred_total(d0);
            series.s_over_n.push(a.total() / n);
            series.sstar_over_n.push(star / n);
            let mass: f64 = a.balls[d0..].iter().sum::<f64>() / a.total();
            series
                .scaled_dominated
                .push(if p.lambda == 1.0 { mass } else { n.powf(1.0 - p.lambda) * mass });
            series
                .z_stability
                .push((a.balls[j] / a.total() - b.balls[j] / b.total()).abs());
        }
    }
    if p.wants(Statistic::Divergence) {
        for &c in &p.checkpoints {
            let a = state_at(c);
            let pr = proportions(a, d0);
            let rn = (a.n as f64).sqrt();
            series.sqrt_n_dominated.push(rn * pr.z[d0..].iter().sum::<f64>());
            series.dstar_gap.push(rn * (pr.zstar[j] - pr.z[j]));
        }
    }
    Ok((row, series))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub statistic: Statistic,
    pub n: u64,
    /// 1-based color.
    pub color: usize,
    /// Replications contributing a value.
    pub samples: u64,
    /// Replications excluded because some estimator was undefined.
    pub undefined: u64,
    pub mean: f64,
    pub variance: f64,
    /// `"normal"` or `"uniform"`; `None` for raw mixture statistics.
    pub reference: Option<String>,
    pub ks: Option<KsResult>,
    pub ks_critical_1pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub statistic: Statistic,
    pub trials: u64,
    pub undefined: u64,
    pub rate: f64,
    pub se: f64,
    /// `rate -/+ 2 se`.
    pub band: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub name: String,
    pub n: Vec<u64>,
    pub median: Vec<f64>,
    /// 0.5% and 99.5% quantiles.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Fraction of replications within `lemma_tolerance` of `m`, where meaningful.
    pub within_tolerance: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub base_seed: u64,
    /// Replication `r` ran on stream `(base_seed, r)` for `r < replications`.
    pub replications: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub spec: ExperimentSpec,
    pub derived: ConfigSummary,
    pub proxy_horizon: Option<u64>,
    pub lambda: f64,
    pub seeds: SeedSummary,
    pub summaries: Vec<StatSummary>,
    pub rates: Vec<RateSummary>,
    pub series: Vec<SeriesSummary>,
    /// Set when the report is persisted alongside a manifest.
    pub manifest_hash: Option<String>,
    #[serde(skip)]
    pub rows: Vec<ReplicationRow>,
    #[serde(skip)]
    pub wall_clock: Elapsed,
}

/// Run time of a report. Timings are not part of a report's identity, so any
/// two values compare equal.
#[derive(Debug, Clone, Copy, Default)]
pub struct Elapsed(pub Duration);

impl PartialEq for Elapsed {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl McReport {
    /// The summary compared against a reference law. For `dstar-normalized`
    /// this skips the raw mixture moments of `D*`.
    pub fn summary(&self, s: Statistic) -> Option<&StatSummary> {
        self.summaries
            .iter()
            .find(|x| x.statistic == s && x.reference.is_some())
    }

    /// Mean and variance of raw `D*_{n,j}`, a normal mixture.
    pub fn raw_mixture(&self) -> Option<&StatSummary> {
        self.summaries
            .iter()
            .find(|x| x.statistic == Statistic::DstarNormalized && x.reference.is_none())
    }

    pub fn rate(&self, s: Statistic) -> Option<&RateSummary> {
        self.rates.iter().find(|x| x.statistic == s)
    }

    pub fn series(&self, name: &str) -> Option<&SeriesSummary> {
        self.series.iter().find(|x| x.name == name)
    }
}

/// Sample mean and unbiased variance.
pub fn mean_variance(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Linear-interpolation quantile of unsorted data.
pub fn quantile(x: &[f64], p: f64) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, p)
}

fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let h = p * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn binomial_rate(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (f64::NAN, f64::NAN);
    }
    let r = successes as f64 / trials as f64;
    (r, (r * (1.0 - r) / trials as f64).sqrt())
}

fn summarize(
    statistic: Statistic,
    p: &Plan,
    values: Vec<f64>,
    undefined: u64,
    reference: Option<&str>,
) -> Result<StatSummary> {
    let (mean, variance) = mean_variance(&values);
    let ks = match reference {
        Some(_) if values.len() < MIN_KS_SAMPLES => None,
        Some("uniform") => Some(ks_uniform(&values)?),
        Some(_) => Some(ks_normality(&values)?),
        None => None,
    };
    Ok(StatSummary {
        statistic,
        n: p.horizon,
        color: p.color + 1,
        samples: values.len() as u64,
        undefined,
        mean,
        variance,
        reference: reference.map(str::to_string),
        ks,
        ks_critical_1pct: ks_critical_1pct(values.len().max(1)),
    })
}

fn series_summary(name: &str, n: &[u64], per_rep: Vec<&Vec<f64>>, target: Option<(f64, f64)>) -> SeriesSummary {
    let k = n.len();
    let mut out = SeriesSummary {
        name: name.to_string(),
        n: n.to_vec(),
        median: Vec::with_capacity(k),
        lower: Vec::with_capacity(k),
        upper: Vec::with_capacity(k),
        within_tolerance: target.map(|_| Vec::with_capacity(k)),
    };
    for c in 0..k {
        let mut col: Vec<f64> = per_rep.iter().map(|r| r[c]).collect();
        col.sort_by(f64::total_cmp);
        out.median.push(quantile_sorted(&col, 0.5));
        out.lower.push(quantile_sorted(&col, 0.005));
        out.upper.push(quantile_sorted(&col, 0.995));
        if let (Some((m, tol)), Some(w)) = (target, out.within_tolerance.as_mut()) {
            let inside = col.iter().filter(|x| (*x - m).abs() <= tol).count();
            w.push(inside as f64 / col.len() as f64);
        }
    }
    out
}

fn aggregate(spec: &ExperimentSpec, p: &Plan, results: Vec<(ReplicationRow, SeriesRow)>) -> Result<McReport> {
    let (rows, series): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let mut summaries = Vec::new();
    let mut rates = Vec::new();
    let collect = |f: &dyn Fn(&ReplicationRow) -> Option<f64>, need_jstar: bool| {
        let mut vals = Vec::new();
        let mut undefined = 0;
        for r in &rows {
            let ok = if need_jstar { r.jstar_defined } else { r.defined };
            match f(r) {
                Some(x) if ok => vals.push(x),
                _ => undefined += 1,
            }
        }
        (vals, undefined)
    };
    for &s in &p.stats {
        match s {
            Statistic::DstarNormalized => {
                let (raw, _) = collect(&|r| r.dstar_raw, false);
                let (mv, mvar) = mean_variance(&raw);
                let mut mixture = summarize(s, p, raw, 0, None)?;
                mixture.mean = mv;
                mixture.variance = mvar;
                mixture.undefined = rows.len() as u64 - mixture.samples;
                let (vals, undefined) = collect(&|r| r.dstar_normalized, false);
                summaries.push(summarize(s, p, vals, undefined, Some("normal"))?);
                summaries.push(StatSummary { reference: None, ks: None, ..mixture });
            }
            Statistic::DNormalized => {
                let (vals, undefined) = collect(&|r| r.d_normalized, false);
                summaries.push(summarize(s, p, vals, undefined, Some("normal"))?);
            }
            Statistic::CstarNormalized => {
                let (vals, undefined) = collect(&|r| r.cstar_normalized, true);
                summaries.push(summarize(s, p, vals, undefined, Some("normal"))?);
            }
            Statistic::LimitProxy => {
                let (vals, undefined) = collect(&|r| r.zhat, false);
                summaries.push(summarize(s, p, vals, undefined, Some("uniform"))?);
            }
            Statistic::Coverage | Statistic::Size | Statistic::Power => {
                let (vals, undefined) = if s == Statistic::Coverage {
                    collect(&|r| r.covered.map(f64::from), false)
                } else {
                    collect(&|r| r.rejected.map(f64::from), true)
                };
                let trials = vals.len() as u64;
                let hits = vals.iter().filter(|&&x| x == 1.0).count() as u64;
                let (rate, se) = binomial_rate(hits, trials);
                rates.push(RateSummary {
                    statistic: s,
                    trials,
                    undefined,
                    rate,
                    se,
                    band: [rate - 2.0 * se, rate + 2.0 * se],
                });
            }
            Statistic::LemmaConvergence | Statistic::Divergence => {}
        }
    }
    let mut series_out = Vec::new();
    if p.lemma() {
        let tol = Some((p.cfg.m, spec.lemma_tolerance));
        let cp = &p.checkpoints;
        series_out.push(series_summary("s_over_n", cp, series.iter().map(|s| &s.s_over_n).collect(), tol));
        series_out.push(series_summary("sstar_over_n", cp, series.iter().map(|s| &s.sstar_over_n).collect(), tol));
        series_out.push(series_summary("scaled_dominated", cp, series.iter().map(|s| &s.scaled_dominated).collect(), None));
        series_out.push(series_summary("z_stability", cp, series.iter().map(|s| &s.z_stability).collect(), None));
    }
    if p.wants(Statistic::Divergence) {
        let cp = &p.checkpoints;
        series_out.push(series_summary("sqrt_n_dominated", cp, series.iter().map(|s| &s.sqrt_n_dominated).collect(), None));
        series_out.push(series_summary("dstar_gap", cp, series.iter().map(|s| &s.dstar_gap).collect(), None));
    }
    Ok(McReport {
        spec: spec.clone(),
        derived: p.cfg.summary(),
        proxy_horizon: p.proxy_horizon,
        lambda: p.lambda,
        seeds: SeedSummary {
            base_seed: spec.base_seed,
            replications: spec.replications,
        },
        summaries,
        rates,
        series: series_out,
        manifest_hash: None,
        rows,
        wall_clock: Elapsed::default(),
    })
}

/// Runs the experiment on the global thread pool.
pub fn replicate(spec: &ExperimentSpec) -> Result<McReport> {
    replicate_with(spec, None)
}

/// Runs the experiment with `threads` workers; `Some(1)` runs on the calling
/// thread. The report is identical for every choice.
pub fn replicate_with(spec: &ExperimentSpec, threads: Option<usize>) -> Result<McReport> {
    let start = std::time::Instant::now();
    let p = &plan(spec)?;
    let work = |r: u64| one_replication(p, spec.base_seed, r);
    let results: Vec<_> = match threads {
        Some(1) => (0..spec.replications).map(work).collect::<Result<_>>()?,
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidSpec(format!("thread pool: {e}")))?
            .install(|| (0..spec.replications).into_par_iter().map(work).collect::<Result<_>>())?,
        None => (0..spec.replications).into_par_iter().map(work).collect::<Result<_>>()?,
    };
    let mut report = aggregate(spec, p, results)?;
    report.wall_clock = Elapsed(start.elapsed());
    Ok(report)
}

fn with_stats(spec: &ExperimentSpec, stats: Vec<Statistic>) -> ExperimentSpec {
    ExperimentSpec {
        statistics: stats,
        ..spec.clone()
    }
}

/// Coverage of the `Z*`-centered interval for `spec.color`.
pub fn coverage_experiment(spec: &ExperimentSpec) -> Result<McReport> {
    replicate(&with_stats(spec, vec![Statistic::Coverage]))
}

/// Rejection frequency of `H0: J = jstar` (1-based). Reported as `size` when
/// `jstar` is the config's non-dominated set and as `power` otherwise.
pub fn size_power_experiment(spec: &ExperimentSpec, jstar: &[usize]) -> Result<McReport> {
    let cfg = validate_config(&spec.config)?;
    let mut sorted = jstar.to_vec();
    sorted.sort_unstable();
    let stat = if sorted == (1..=cfg.d0).collect::<Vec<_>>() {
        Statistic::Size
    } else {
        Statistic::Power
    };
    let mut s = with_stats(spec, vec![stat]);
    s.jstar = Some(jstar.to_vec());
    replicate(&s)
}

/// Medians and bands of `S_n/n`, `S*_n/n`, `n^(1-lambda)` times the dominated
/// mass and `|Z_{n,j} - Z_{2n,j}|` at each checkpoint.
pub fn lemma_convergence_experiment(spec: &ExperimentSpec) -> Result<McReport> {
    replicate(&with_stats(spec, vec![Statistic::LemmaConvergence]))
}

/// Medians and bands of `sqrt(n)` times the dominated mass and of `D*_{n,j} - D_{n,j}`.
pub fn divergence_experiment(spec: &ExperimentSpec) -> Result<McReport> {
    replicate(&with_stats(spec, vec![Statistic::Divergence]))
}
