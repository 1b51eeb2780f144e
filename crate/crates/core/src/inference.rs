//! Plug-in variance estimators, confidence intervals and the `H0: J = J*` test.
//!
//! Color indices are 0-based in this API and 1-based in serialized reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal::two_sided_critical;
use crate::rng::SeedRecord;
use crate::urn::{ProxyMeta, UrnState};

/// Moment estimators computed from the observable sums of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimates {
    /// `m_n = sum_k sum_i X_{k,i} A_{k,i} / n`.
    pub pooled_mean: f64,
    /// `Q_{n,i} = sum_k X_{k,i} A_{k,i}^2 / n`.
    pub q: Vec<f64>,
    /// Per-color mean of the reinforcements actually received; `None` if never drawn.
    pub mhat: Vec<Option<f64>>,
    /// Per-color variance of the reinforcements received; `None` if never drawn.
    pub sigma2hat: Vec<Option<f64>>,
}

pub fn moment_estimators(state: &UrnState) -> MomentEstimates {
    let n = state.n as f64;
    let d = state.d();
    let mut mhat = Vec::with_capacity(d);
    let mut sigma2hat = Vec::with_capacity(d);
    for i in 0..d {
        let t = state.draws[i];
        if t == 0 {
            mhat.push(None);
            sigma2hat.push(None);
        } else {
            let t = t as f64;
            let mean = state.reinforcement[i] / t;
            mhat.push(Some(mean));
            sigma2hat.push(Some((state.reinforcement_sq[i] / t - mean * mean).max(0.0)));
        }
    }
    MomentEstimates {
        pooled_mean: state.reinforcement.iter().sum::<f64>() / n,
        q: state.reinforcement_sq.iter().map(|s| s / n).collect(),
        mhat,
        sigma2hat,
    }
}

/// `(1/m^2) { Q_j (1-Z_j)^2 + Z_j^2 sum_{i in members, i != j} Q_i }`.
pub fn v_formula(pooled_mean: f64, z: &[f64], q: &[f64], j: usize, members: &[usize]) -> f64 {
    let others: f64 = members.iter().filter(|&&i| i != j).map(|&i| q[i]).sum();
    let zj = z[j];
    (q[j] * (1.0 - zj) * (1.0 - zj) + zj * zj * others) / (pooled_mean * pooled_mean)
}

/// Estimator of the limiting variance of `D*_{n,j}` with non-dominated set
/// `0..d0`. `Z` is the full-urn proportion.
pub fn estimate_v(state: &UrnState, j: usize, d0: usize) -> Result<f64> {
    let members: Vec<usize> = (0..d0).collect();
    estimate_v_over(state, j, &members)
}

pub fn estimate_v_over(state: &UrnState, j: usize, members: &[usize]) -> Result<f64> {
    let est = moment_estimators(state);
    if !(est.pooled_mean > 0.0) {
        return Err(Error::ZeroPooledMean);
    }
    Ok(v_formula(
        est.pooled_mean,
        &state.proportions(),
        &est.q,
        j,
        members,
    ))
}

/// `(Z_j / mean^2) { (1-Z_j)^2 s_j + Z_j sum_{i in members, i != j} Z_i s_i }`.
pub fn u_formula(mean: f64, z: &[f64], sigma2: &[f64], j: usize, members: &[usize]) -> f64 {
    let zj = z[j];
    let others: f64 = members
        .iter()
        .filter(|&&i| i != j)
        .map(|&i| z[i] * sigma2[i])
        .sum();
    zj / (mean * mean) * ((1.0 - zj) * (1.0 - zj) * sigma2[j] + zj * others)
}

fn check_jstar(jstar: &[usize], d: usize) -> Result<()> {
    if jstar.len() < 2 {
        return Err(Error::SmallJstar(jstar.len()));
    }
    for (k, &i) in jstar.iter().enumerate() {
        if i >= d || jstar[..k].contains(&i) {
            return Err(Error::BadColor { color: i + 1, d });
        }
    }
    Ok(())
}

/// Per-color means and variances restricted to `jstar`; fails if any is undefined.
fn defined_moments(est: &MomentEstimates, jstar: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = est.mhat.len();
    let mut mhat = vec![0.0; d];
    let mut s2 = vec![0.0; d];
    for &i in jstar {
        match (est.mhat[i], est.sigma2hat[i]) {
            (Some(m), Some(s)) => {
                mhat[i] = m;
                s2[i] = s;
            }
            _ => return Err(Error::UndefinedEstimator(i + 1)),
        }
    }
    Ok((mhat, s2))
}

/// Estimator of the limiting variance of `C*_{n,j}` under `H0: J = jstar`.
pub fn estimate_u(state: &UrnState, jstar: &[usize], j: usize) -> Result<f64> {
    check_jstar(jstar, state.d())?;
    if !jstar.contains(&j) {
        return Err(Error::BadColor {
            color: j + 1,
            d: state.d(),
        });
    }
    let (mhat, s2) = defined_moments(&moment_estimators(state), jstar)?;
    let mean = jstar.iter().map(|&i| mhat[i]).sum::<f64>() / jstar.len() as f64;
    if !(mean > 0.0) {
        return Err(Error::ZeroMean);
    }
    Ok(u_formula(mean, &state.proportions(), &s2, j, jstar))
}

/// Limiting variance of `D*_j` at limit proportions `zlim` (on the d0-simplex).
pub fn theorem_v(zlim: &[f64], m: f64, q: &[f64], j: usize) -> f64 {
    let zj = zlim[j];
    let others: f64 = (0..zlim.len())
        .filter(|&i| i != j)
        .map(|i| q[i] * zlim[i])
        .sum();
    zj / (m * m) * (q[j] * (1.0 - zj) * (1.0 - zj) + zj * others)
}

/// Limiting variance of `C*_j` written with variances `sigma2_i = q_i - m^2`.
pub fn theorem_u(zlim: &[f64], m: f64, sigma2: &[f64], j: usize) -> f64 {
    let members: Vec<usize> = (0..zlim.len()).collect();
    u_formula(m, zlim, sigma2, j, &members)
}

/// `center -/+ u_alpha sqrt(variance / n)`.
pub fn confidence_interval(center: f64, variance: f64, n: u64, alpha: f64) -> Result<(f64, f64)> {
    if !(variance >= 0.0) {
        return Err(Error::InvalidSpec(format!(
            "variance estimate {variance} is negative"
        )));
    }
    let u = two_sided_critical(alpha)?;
    if variance == 0.0 {
        return Ok((center, center));
    }
    let half = u * (variance / n as f64).sqrt();
    Ok((center - half, center + half))
}

/// `K = C* / sqrt(U)` when `U > 0`, else 0.
pub fn k_statistic(cstar: f64, u: f64) -> f64 {
    if u > 0.0 {
        cstar / u.sqrt()
    } else {
        0.0
    }
}

/// Which critical region to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "color")]
pub enum TestMode {
    /// `{|K_{n,j}| >= u_alpha}` for one designated `j` in J* (0-based).
    Designated(usize),
    /// Union over all `j` in J* with the marginal critical value; its level is
    /// not calibrated.
    Union,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Reject,
    Accept,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorInference {
    /// 1-based color label.
    pub j: usize,
    pub zstar: f64,
    pub mstar: f64,
    pub cstar: f64,
    #[serde(rename = "V")]
    pub v: Option<f64>,
    #[serde(rename = "U")]
    pub u: f64,
    #[serde(rename = "K")]
    pub k: f64,
    /// Interval for the limit proportion centered at `Z*`.
    pub ci: Option<[f64; 2]>,
    /// Interval centered at `M*` with variance `G = U + V`.
    pub g_ci: Option<[f64; 2]>,
}

/// Aggregated decision over several auxiliary seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionFrequency {
    pub seeds: u64,
    pub rate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub n: u64,
    /// 1-based labels of the candidate set.
    #[serde(rename = "Jstar")]
    pub jstar: Vec<usize>,
    pub alpha: f64,
    pub u_alpha: f64,
    pub mode: TestMode,
    /// False in union mode.
    pub calibrated: bool,
    pub per_color: Vec<ColorInference>,
    pub decision: Decision,
    pub g_estimator: String,
    #[serde(default)]
    pub proxy: Option<ProxyMeta>,
    #[serde(default)]
    pub simulation_seed: Option<SeedRecord>,
    #[serde(default)]
    pub rejection_frequency: Option<RejectionFrequency>,
}

pub(crate) const G_ESTIMATOR: &str = "G = U_{n,j} + V_{n,j} with V summed over J*";

/// Starred statistics with `jstar` playing the role of the non-dominated set.
pub(crate) struct StarredUnder {
    pub zstar: Vec<f64>,
    pub mstar: Vec<f64>,
    pub cstar: Vec<f64>,
}

pub(crate) fn starred_under(state: &UrnState, jstar: &[usize]) -> StarredUnder {
    let s: f64 = jstar.iter().map(|&i| state.balls[i]).sum();
    let t: u64 = jstar.iter().map(|&i| state.draws[i]).sum();
    let rn = (state.n as f64).sqrt();
    let zstar: Vec<f64> = jstar.iter().map(|&i| state.balls[i] / s).collect();
    let mstar: Vec<f64> = jstar
        .iter()
        .map(|&i| state.draws[i] as f64 / (1 + t) as f64)
        .collect();
    let cstar = zstar.iter().zip(&mstar).map(|(z, m)| rn * (m - z)).collect();
    StarredUnder {
        zstar,
        mstar,
        cstar,
    }
}

/// Runs the test with externally supplied per-color means and variances.
pub(crate) fn test_with_moments(
    state: &UrnState,
    jstar: &[usize],
    mode: TestMode,
    alpha: f64,
    mhat: &[f64],
    sigma2hat: &[f64],
) -> Result<InferenceReport> {
    check_jstar(jstar, state.d())?;
    if let TestMode::Designated(j) = mode {
        if !jstar.contains(&j) {
            return Err(Error::BadColor {
                color: j + 1,
                d: state.d(),
            });
        }
    }
    if state.n == 0 {
        return Err(Error::BadCheckpoints("test needs n >= 1".into()));
    }
    let u_alpha = two_sided_critical(alpha)?;
    let mean = jstar.iter().map(|&i| mhat[i]).sum::<f64>() / jstar.len() as f64;
    if !(mean > 0.0) {
        return Err(Error::ZeroMean);
    }
    let z = state.proportions();
    let est = moment_estimators(state);
    let starred = starred_under(state, jstar);
    let mut per_color = Vec::with_capacity(jstar.len());
    for (pos, &j) in jstar.iter().enumerate() {
        let u = u_formula(mean, &z, sigma2hat, j, jstar);
        let v = (est.pooled_mean > 0.0).then(|| v_formula(est.pooled_mean, &z, &est.q, j, jstar));
        let ci = v
            .map(|v| confidence_interval(starred.zstar[pos], v, state.n, alpha))
            .transpose()?
            .map(|(lo, hi)| [lo, hi]);
        let g_ci = v
            .map(|v| confidence_interval(starred.mstar[pos], u + v, state.n, alpha))
            .transpose()?
            .map(|(lo, hi)| [lo, hi]);
        per_color.push(ColorInference {
            j: j + 1,
            zstar: starred.zstar[pos],
            mstar: starred.mstar[pos],
            cstar: starred.cstar[pos],
            v,
            u,
            k: k_statistic(starred.cstar[pos], u),
            ci,
            g_ci,
        });
    }
    let rejects = |c: &ColorInference| c.k.abs() >= u_alpha;
    let reject = match mode {
        TestMode::Designated(j) => per_color.iter().any(|c| c.j == j + 1 && rejects(c)),
        TestMode::Union => per_color.iter().any(rejects),
    };
    Ok(InferenceReport {
        n: state.n,
        jstar: jstar.iter().map(|i| i + 1).collect(),
        alpha,
        u_alpha,
        mode,
        calibrated: matches!(mode, TestMode::Designated(_)),
        per_color,
        decision: if reject {
            Decision::Reject
        } else {
            Decision::Accept
        },
        g_estimator: G_ESTIMATOR.to_string(),
        proxy: None,
        simulation_seed: None,
        rejection_frequency: None,
    })
}

/// Tests `H0: J = jstar` on an urn trajectory, using the reinforcements
/// observed on drawn colors only.
pub fn test_h0(
    state: &UrnState,
    jstar: &[usize],
    mode: TestMode,
    alpha: f64,
) -> Result<InferenceReport> {
    check_jstar(jstar, state.d())?;
    let (mhat, s2) = defined_moments(&moment_estimators(state), jstar)?;
    test_with_moments(state, jstar, mode, alpha, &mhat, &s2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::fixtures::e1;
    use crate::config::{validate_config, UrnConfig};
    use crate::schedule::{Family, ReinforcementSchedule};
    use crate::urn::run;
    use proptest::prelude::*;

    fn blank(d: usize) -> UrnState {
        UrnState::initial(&vec![1.0; d])
    }

    #[test]
    fn point_mass_estimators() {
        let cfg = UrnConfig {
            d0: 3,
            a: vec![1.0; 3],
            schedule: ReinforcementSchedule {
                beta: 3.0,
                colors: vec![Family::PointMass { value: 3.0 }; 3],
            },
            permutation: None,
            proxy_ceiling: None,
        };
        let v = validate_config(&cfg).unwrap();
        let s = run(&v, 500, &[500], 9, 0).unwrap().pop().unwrap();
        let est = moment_estimators(&s);
        assert_eq!(est.pooled_mean, 3.0);
        for i in 0..3 {
            assert_eq!(est.q[i], 9.0 * s.draws[i] as f64 / 500.0);
            assert_eq!(est.sigma2hat[i], Some(0.0));
        }
    }

    #[test]
    fn single_step_estimators() {
        let mut s = blank(2);
        s.apply_draw(0, 2.0);
        let est = moment_estimators(&s);
        assert_eq!(est.pooled_mean, 2.0);
        assert_eq!(est.q[0], 4.0);
        assert_eq!(est.mhat[0], Some(2.0));
        assert_eq!(est.sigma2hat[0], Some(0.0));
        assert_eq!(est.mhat[1], None);
        assert_eq!(est.sigma2hat[1], None);
        assert!(matches!(
            estimate_u(&s, &[0, 1], 0),
            Err(Error::UndefinedEstimator(2))
        ));
        assert!(matches!(
            test_h0(&s, &[0, 1], TestMode::Designated(0), 0.05),
            Err(Error::UndefinedEstimator(2))
        ));
    }

    #[test]
    fn v_formula_by_hand() {
        assert_eq!(v_formula(2.0, &[0.5, 0.5], &[2.0, 2.0], 0, &[0, 1]), 0.25);
        assert_eq!(v_formula(2.0, &[0.5, 0.5], &[0.0, 0.0], 0, &[0, 1]), 0.0);
        let s = blank(2);
        assert!(matches!(estimate_v(&s, 0, 2), Err(Error::ZeroPooledMean)));
    }

    #[test]
    fn v_limit_with_constant_reinforcement() {
        // q_i = m^2 substituted into the limiting formulas
        for &z in &[0.1, 0.37, 0.5, 0.9] {
            let zl = [z, 1.0 - z];
            let v = theorem_v(&zl, 2.0, &[4.0, 4.0], 0);
            assert!((v - z * (1.0 - z)).abs() < 1e-15);
            assert!(theorem_u(&zl, 2.0, &[0.0, 0.0], 0).abs() < 1e-15);
        }
    }

    #[test]
    fn u_formula_by_hand() {
        assert_eq!(u_formula(2.0, &[0.5, 0.5], &[1.0, 1.0], 0, &[0, 1]), 0.0625);
        assert_eq!(u_formula(2.0, &[0.5, 0.5], &[0.0, 0.0], 0, &[0, 1]), 0.0);
    }

    #[test]
    fn estimate_u_errors() {
        let mut s = blank(3);
        s.apply_draw(0, 0.0);
        s.apply_draw(1, 0.0);
        assert!(matches!(estimate_u(&s, &[0, 1], 0), Err(Error::ZeroMean)));
        assert!(matches!(estimate_u(&s, &[0], 0), Err(Error::SmallJstar(1))));
        assert!(matches!(estimate_u(&s, &[0, 1], 2), Err(Error::BadColor { .. })));
    }

    #[test]
    fn interval_examples() {
        assert_eq!(confidence_interval(0.3, 0.0, 50, 0.05).unwrap(), (0.3, 0.3));
        let (lo, hi) = confidence_interval(0.5, 0.25, 100, 0.05).unwrap();
        // u = 1.959964 from the quantile oracle; half width u * 0.5 / 10
        assert!((lo - 0.4020).abs() < 1e-4 && (hi - 0.5980).abs() < 1e-4);
        assert!((hi - 0.5 - 1.959_964 * 0.05).abs() < 1e-6);
        let (lo, hi) = confidence_interval(0.0, 1.0, 1, 0.5).unwrap();
        assert!((hi - 0.674_490).abs() < 1e-6 && (lo + 0.674_490).abs() < 1e-6);
        assert!(matches!(
            confidence_interval(0.5, 0.25, 100, 1.5),
            Err(Error::BadAlpha(_))
        ));
    }

    #[test]
    fn k_statistic_indicator() {
        assert_eq!(k_statistic(1.3, 0.0), 0.0);
        assert!((k_statistic(0.4, 0.04) - 2.0).abs() < 1e-15);
        assert!(k_statistic(-0.4, 0.04) < 0.0);
    }

    fn state_with(balls: Vec<f64>, draws: Vec<u64>, sxa: Vec<f64>, sxa2: Vec<f64>) -> UrnState {
        UrnState {
            n: draws.iter().sum(),
            balls,
            draws,
            reinforcement: sxa,
            reinforcement_sq: sxa2,
        }
    }

    #[test]
    fn decisions() {
        // reinforcement constant at 3 on both colors: sigma2hat = 0, U = 0, K = 0
        let s = state_with(vec![31.0, 22.0], vec![10, 7], vec![30.0, 21.0], vec![90.0, 63.0]);
        let r = test_h0(&s, &[0, 1], TestMode::Designated(0), 0.05).unwrap();
        assert_eq!(r.per_color[0].u, 0.0);
        assert_eq!(r.per_color[0].k, 0.0);
        assert_eq!(r.decision, Decision::Accept);
        assert_eq!(r.jstar, vec![1, 2]);
        assert!(r.calibrated);

        // Z*_1 = 0.5, M*_1 = 90/101, mhat = (2, 18), sigma2hat = (1, 1):
        // U = 0.5/100 * (0.25 + 0.25) = 0.0025
        let s = state_with(vec![181.0, 181.0], vec![90, 10], vec![180.0, 180.0], vec![450.0, 3250.0]);
        let r = test_h0(&s, &[0, 1], TestMode::Designated(0), 0.05).unwrap();
        let c = &r.per_color[0];
        assert!((c.u - 0.0025).abs() < 1e-15);
        let cstar = 10.0 * (90.0 / 101.0 - 0.5);
        assert!((c.cstar - cstar).abs() < 1e-12);
        assert!((c.k - cstar / 0.05).abs() < 1e-9);
        assert_eq!(r.decision, Decision::Reject);

        let union = test_h0(&s, &[0, 1], TestMode::Union, 0.05).unwrap();
        assert!(!union.calibrated);
        assert_eq!(union.decision, Decision::Reject);
        let never = test_h0(&s, &[0, 1], TestMode::Designated(0), 0.0).unwrap();
        assert_eq!(never.decision, Decision::Accept);
        assert!(matches!(
            test_h0(&s, &[0], TestMode::Union, 0.05),
            Err(Error::SmallJstar(1))
        ));
    }

    #[test]
    fn critical_region_boundary() {
        let u = two_sided_critical(0.05).unwrap();
        assert!((u - 1.959_964).abs() < 1e-6);
        assert!(3.0_f64.abs() >= u);
        assert!(0.0_f64.abs() < u);
        assert!(0.0_f64.abs() < two_sided_critical(0.999).unwrap() + 1e-3);
    }

    #[test]
    fn report_json_shape() {
        let v = validate_config(&e1()).unwrap();
        let r = (0..)
            .find_map(|seed| {
                let s = run(&v, 2000, &[2000], seed, 0).unwrap().pop().unwrap();
                test_h0(&s, &[0, 1], TestMode::Designated(0), 0.05).ok()
            })
            .unwrap();
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["Jstar"], serde_json::json!([1, 2]));
        let pc = &json["per_color"][0];
        for key in ["j", "V", "U", "K", "ci"] {
            assert!(pc.get(key).is_some(), "{key}");
        }
        assert_eq!(json["decision"].as_str().is_some(), true);
        let back: InferenceReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, r);
    }

    proptest! {
        #[test]
        fn u_equals_v_minus_binomial_variance(
            raw in proptest::collection::vec(0.01f64..1.0, 2..6),
            m in 0.1f64..10.0,
            s2 in proptest::collection::vec(0.0f64..20.0, 6),
        ) {
            let total: f64 = raw.iter().sum();
            let z: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let sigma2 = &s2[..z.len()];
            let q: Vec<f64> = sigma2.iter().map(|s| s + m * m).collect();
            for j in 0..z.len() {
                let lhs = theorem_u(&z, m, sigma2, j);
                let rhs = theorem_v(&z, m, &q, j) - z[j] * (1.0 - z[j]);
                let scale = theorem_v(&z, m, &q, j).max(1.0);
                prop_assert!((lhs - rhs).abs() < 1e-12 * scale);
            }
        }

        #[test]
        fn v_invariant_under_permutation_of_other_colors(seed in any::<u64>(), horizon in 50u64..2000) {
            let mut cfg = e1();
            cfg.d0 = 3;
            cfg.schedule.colors[2] = Family::DiscreteUniform { lo: 0, hi: 6 };
            cfg.schedule.beta = 6.0;
            let v = validate_config(&cfg).unwrap();
            let s = run(&v, horizon, &[horizon], seed, 0).unwrap().pop().unwrap();
            let perm = [0usize, 2, 1];
            let p = UrnState {
                n: s.n,
                balls: perm.iter().map(|&i| s.balls[i]).collect(),
                draws: perm.iter().map(|&i| s.draws[i]).collect(),
                reinforcement: perm.iter().map(|&i| s.reinforcement[i]).collect(),
                reinforcement_sq: perm.iter().map(|&i| s.reinforcement_sq[i]).collect(),
            };
            prop_assume!(s.reinforcement.iter().sum::<f64>() > 0.0);
            let a = estimate_v(&s, 0, 3).unwrap();
            let b = estimate_v(&p, 0, 3).unwrap();
            prop_assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
        }

        #[test]
        fn estimators_respect_bounds(seed in any::<u64>(), horizon in 1u64..2000) {
            let v = validate_config(&e1()).unwrap();
            let s = run(&v, horizon, &[horizon], seed, 0).unwrap().pop().unwrap();
            let est = moment_estimators(&s);
            let beta = v.beta();
            prop_assert!(est.pooled_mean >= 0.0 && est.pooled_mean <= beta);
            for i in 0..3 {
                prop_assert!(est.q[i] >= 0.0 && est.q[i] <= beta * beta);
                if let Some(m) = est.mhat[i] {
                    prop_assert!((0.0..=beta).contains(&m));
                    prop_assert!(est.sigma2hat[i].unwrap() >= 0.0);
                } else {
                    prop_assert_eq!(s.draws[i], 0);
                }
            }
        }
    }
}
