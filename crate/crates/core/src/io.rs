//! Config files, CSV artifacts, run manifests and threshold checks.
//!
//! CSV dialect: comma separated, `.` decimal point, LF line ends, one header
//! row, UTF-8. Floats are written in shortest round-trip form, so a replayed
//! run reproduces the bytes exactly.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anova::ObservedPanel;
use crate::config::UrnConfig;
use crate::error::{Error, Result};
use crate::harness::{McReport, ReplicationRow, Statistic};
use crate::statistics::Snapshot;
use crate::urn::UrnState;

/// A config file: the urn configuration plus optional acceptance thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigFile {
    #[serde(flatten)]
    pub config: UrnConfig,
    /// Keyed by statistic name (`dstar-normalized`, `coverage`, ...) or by
    /// series name (`sqrt_n_dominated`, `s_over_n`, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub checks: BTreeMap<String, Check>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trend {
    /// Every median strictly above the previous one.
    Increasing,
    /// No median above the previous one.
    Nonincreasing,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Check {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abs_mean_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_range: Option<[f64; 2]>,
    /// KS statistic below `1.628 / sqrt(R)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks_below_1pct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub median_trend: Option<Trend>,
    /// Minimum within-tolerance fraction at the last checkpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_within_tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub criterion: String,
    pub observed: String,
    pub passed: bool,
}

fn bad_json(what: &str, e: serde_json::Error) -> Error {
    Error::InvalidSpec(format!("{what}: {e}"))
}

pub fn parse_config(text: &str) -> Result<ConfigFile> {
    serde_json::from_str(text).map_err(|e| bad_json("config", e))
}

pub fn load_config(path: &Path) -> Result<(ConfigFile, Vec<u8>)> {
    let bytes = std::fs::read(path)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| Error::InvalidSpec(format!("config is not UTF-8: {e}")))?;
    Ok((parse_config(text)?, bytes))
}

fn outcome(name: &str, criterion: String, observed: String, passed: bool) -> CheckOutcome {
    CheckOutcome {
        name: name.to_string(),
        criterion,
        observed,
        passed,
    }
}

fn in_range(x: f64, r: [f64; 2]) -> bool {
    x >= r[0] && x <= r[1]
}

/// Evaluates every check whose statistic or series is present in `report`.
/// If none applies, a single failing outcome is returned.
pub fn evaluate_checks(report: &McReport, checks: &BTreeMap<String, Check>) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    for (name, c) in checks {
        let stat = Statistic::parse(name);
        if let Some(s) = stat.and_then(|s| report.summary(s)) {
            if let Some(max) = c.abs_mean_max {
                out.push(outcome(name, format!("|mean| <= {max}"), format!("{}", s.mean), s.mean.abs() <= max));
            }
            if let Some(r) = c.variance_range {
                out.push(outcome(
                    name,
                    format!("variance in [{}, {}]", r[0], r[1]),
                    format!("{}", s.variance),
                    in_range(s.variance, r),
                ));
            }
            if c.ks_below_1pct == Some(true) {
                let (obs, ok) = match &s.ks {
                    Some(k) => (format!("{} (critical {})", k.stat, s.ks_critical_1pct), k.stat < s.ks_critical_1pct),
                    None => ("not computed".to_string(), false),
                };
                out.push(outcome(name, "KS below 1% critical value".into(), obs, ok));
            }
        }
        if let (Some(r), Some(rate)) = (c.rate_range, stat.and_then(|s| report.rate(s))) {
            out.push(outcome(
                name,
                format!("rate in [{}, {}]", r[0], r[1]),
                format!("{} (se {})", rate.rate, rate.se),
                in_range(rate.rate, r),
            ));
        }
        if let Some(series) = report.series(name) {
            if let Some(t) = c.median_trend {
                let ok = series.median.windows(2).all(|w| match t {
                    Trend::Increasing => w[1] > w[0],
                    Trend::Nonincreasing => w[1] <= w[0],
                });
                out.push(outcome(name, format!("median {t:?}").to_lowercase(), format!("{:?}", series.median), ok));
            }
            if let Some(min) = c.min_within_tolerance {
                let last = series.within_tolerance.as_ref().and_then(|w| w.last().copied());
                out.push(outcome(
                    name,
                    format!("within tolerance at last checkpoint >= {min}"),
                    format!("{last:?}"),
                    last.is_some_and(|x| x >= min),
                ));
            }
        }
    }
    if out.is_empty() {
        out.push(outcome("checks", "at least one applicable check".into(), "none".into(), false));
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timestamps {
    /// Seconds since the Unix epoch.
    pub started: f64,
    pub finished: f64,
    pub wall_clock_seconds: f64,
}

/// Record of one CLI run. `manifest_hash` covers the command, arguments,
/// config contents, seeds and tool version; outputs and timestamps are
/// outside the hashed content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_path: Option<String>,
    pub config_sha256: Option<String>,
    pub seeds: serde_json::Value,
    pub tool_version: String,
    pub manifest_hash: String,
    pub outputs: Vec<OutputEntry>,
    pub timestamps: Timestamps,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

impl RunManifest {
    pub fn new(
        command: &str,
        args: Vec<String>,
        config: Option<(&Path, &[u8])>,
        seeds: serde_json::Value,
    ) -> Self {
        let config_sha256 = config.map(|(_, b)| sha256_hex(b));
        let hashed = serde_json::json!({
            "command": command,
            "args": args,
            "config_sha256": config_sha256,
            "seeds": seeds,
            "tool_version": env!("CARGO_PKG_VERSION"),
        });
        let manifest_hash = sha256_hex(hashed.to_string().as_bytes());
        let now = unix_now();
        RunManifest {
            command: command.to_string(),
            args,
            config_path: config.map(|(p, _)| p.display().to_string()),
            config_sha256,
            seeds,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            manifest_hash,
            outputs: Vec::new(),
            timestamps: Timestamps {
                started: now,
                finished: now,
                wall_clock_seconds: 0.0,
            },
        }
    }

    /// Writes `bytes` to `path` and records its digest.
    pub fn write_output(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, bytes)?;
        self.outputs.push(OutputEntry {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn finish(&mut self) {
        self.timestamps.finished = unix_now();
        self.timestamps.wall_clock_seconds = self.timestamps.finished - self.timestamps.started;
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }
}

/// Pretty JSON with `manifest_hash` inserted at the top level.
pub fn json_artifact<T: Serialize>(value: &T, manifest_hash: &str) -> Result<Vec<u8>> {
    let mut v = serde_json::to_value(value)?;
    if let serde_json::Value::Object(map) = &mut v {
        map.insert("manifest_hash".into(), manifest_hash.into());
    }
    let mut out = serde_json::to_vec_pretty(&v)?;
    out.push(b'\n');
    Ok(out)
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

fn opt_bool(x: Option<bool>) -> String {
    x.map_or_else(String::new, |v| u8::from(v).to_string())
}

fn csv_bytes<F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<()>>(f: F) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut w = writer(&mut buf);
        f(&mut w)?;
        w.flush()?;
    }
    Ok(buf)
}

/// Columns `n, N_1..N_d, T_1..T_d, SXA_1..SXA_d, SXA2_1..SXA2_d`.
pub fn states_csv(states: &[UrnState]) -> Result<Vec<u8>> {
    let d = states.first().map_or(0, UrnState::d);
    csv_bytes(|w| {
        let mut header = vec!["n".to_string()];
        for prefix in ["N", "T", "SXA", "SXA2"] {
            header.extend((1..=d).map(|j| format!("{prefix}_{j}")));
        }
        w.write_record(&header)?;
        for s in states {
            let mut rec = vec![s.n.to_string()];
            rec.extend(s.balls.iter().map(f64::to_string));
            rec.extend(s.draws.iter().map(u64::to_string));
            rec.extend(s.reinforcement.iter().map(f64::to_string));
            rec.extend(s.reinforcement_sq.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        Ok(())
    })
}

/// Reads a states CSV back. Row order is kept.
pub fn read_states<R: Read>(r: R) -> Result<Vec<UrnState>> {
    let mut rdr = csv::Reader::from_reader(r);
    let cols = rdr.headers()?.len();
    if cols < 9 || (cols - 1) % 4 != 0 {
        return Err(Error::InvalidSpec(format!(
            "trajectory CSV needs 1 + 4d columns with d >= 2, found {cols}"
        )));
    }
    let d = (cols - 1) / 4;
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::InvalidSpec(format!("trajectory CSV row {}: bad {what}", k + 1));
        let f = |i: usize| rec[i].trim().parse::<f64>().map_err(|_| bad("number"));
        let n: u64 = rec[0].trim().parse().map_err(|_| bad("n"))?;
        let mut s = UrnState::initial(&vec![1.0; d]);
        s.n = n;
        for j in 0..d {
            s.balls[j] = f(1 + j)?;
            s.draws[j] = rec[1 + d + j].trim().parse().map_err(|_| bad("draw count"))?;
            s.reinforcement[j] = f(1 + 2 * d + j)?;
            s.reinforcement_sq[j] = f(1 + 3 * d + j)?;
        }
        if s.draws.iter().sum::<u64>() != n {
            return Err(bad("draw counts (they must sum to n)"));
        }
        if s.balls.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(bad("ball count"));
        }
        out.push(s);
    }
    if out.is_empty() {
        return Err(Error::InvalidSpec("trajectory CSV has no rows".into()));
    }
    Ok(out)
}

/// One row per checkpoint and color, colors 1-based.
pub fn snapshots_csv(snaps: &[Snapshot]) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record(["n", "color", "zstar", "mstar", "cstar", "dstar", "dominated_mass", "proxy_horizon"])?;
        for s in snaps {
            for j in 0..s.zstar.len() {
                w.write_record([
                    s.n.to_string(),
                    (j + 1).to_string(),
                    s.zstar[j].to_string(),
                    s.mstar[j].to_string(),
                    s.cstar[j].to_string(),
                    opt(s.dstar.as_ref().map(|d| d[j])),
                    s.dominated_mass.to_string(),
                    s.proxy.as_ref().map_or_else(String::new, |p| p.proxy_horizon.to_string()),
                ])?;
            }
        }
        Ok(())
    })
}

/// Per-replication statistics; empty cells mark values that were not formed.
pub fn replications_csv(rows: &[ReplicationRow]) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record([
            "replication",
            "defined",
            "jstar_defined",
            "zstar",
            "zhat",
            "v",
            "dstar_raw",
            "dstar_normalized",
            "d_normalized",
            "cstar_normalized",
            "covered",
            "rejected",
        ])?;
        for r in rows {
            w.write_record([
                r.replication.to_string(),
                opt_bool(Some(r.defined)),
                opt_bool(Some(r.jstar_defined)),
                opt(r.zstar),
                opt(r.zhat),
                opt(r.v),
                opt(r.dstar_raw),
                opt(r.dstar_normalized),
                opt(r.d_normalized),
                opt(r.cstar_normalized),
                opt_bool(r.covered),
                opt_bool(r.rejected),
            ])?;
        }
        Ok(())
    })
}

/// Long format: `series, n, median, lower, upper, within_tolerance`.
pub fn series_csv(report: &McReport) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record(["series", "n", "median", "lower", "upper", "within_tolerance"])?;
        for s in &report.series {
            for k in 0..s.n.len() {
                w.write_record([
                    s.name.clone(),
                    s.n[k].to_string(),
                    s.median[k].to_string(),
                    s.lower[k].to_string(),
                    s.upper[k].to_string(),
                    opt(s.within_tolerance.as_ref().map(|v| v[k])),
                ])?;
            }
        }
        Ok(())
    })
}

pub fn x_matrix_csv(labels: &[String], x: &[Vec<u8>]) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record(labels)?;
        for row in x {
            w.write_record(row.iter().map(u8::to_string))?;
        }
        Ok(())
    })
}

/// Reads a panel: header row of color labels, then one row of reinforcements per step.
pub fn read_panel<R: Read>(r: R, beta: Option<f64>) -> Result<ObservedPanel> {
    let mut rdr = csv::Reader::from_reader(r);
    let labels: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::BadPanel(format!("row {}: {e}", k + 1)))?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, c)| {
                c.trim().parse::<f64>().map_err(|_| {
                    Error::BadPanel(format!("cell ({}, {}) = {c:?} is not a number", k + 1, j + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    ObservedPanel::new(labels, rows, beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::fixtures::e1;
    use crate::config::validate_config;
    use crate::harness::{replicate, ExperimentSpec};
    use crate::statistics::snapshot;
    use crate::urn::run;

    #[test]
    fn config_round_trip_with_checks() {
        let mut checks = BTreeMap::new();
        checks.insert(
            "coverage".to_string(),
            Check { rate_range: Some([0.93, 0.97]), ..Check::default() },
        );
        let file = ConfigFile { config: e1(), checks };
        let text = serde_json::to_string(&file).unwrap();
        assert!(text.contains("\"d0\":2"));
        assert_eq!(parse_config(&text).unwrap(), file);
        let plain = serde_json::to_string(&e1()).unwrap();
        assert!(parse_config(&plain).unwrap().checks.is_empty());
        assert!(parse_config("{\"d0\": 2}").is_err());
        let typo = text.replace("rate_range", "rate_rang");
        assert!(parse_config(&typo).is_err());
    }

    #[test]
    fn states_csv_round_trip() {
        let v = validate_config(&e1()).unwrap();
        let states = run(&v, 1000, &[1, 10, 1000], 3, 0).unwrap();
        let bytes = states_csv(&states).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("n,N_1,N_2,N_3,T_1,T_2,T_3,SXA_1,"));
        assert!(!text.contains('\r'));
        assert_eq!(read_states(&bytes[..]).unwrap(), states);
        let broken = text.replacen("\n1,", "\n2,", 1);
        assert!(read_states(broken.as_bytes()).is_err());
        assert!(read_states("n,a\n".as_bytes()).is_err());
    }

    #[test]
    fn snapshot_rows_per_color() {
        let v = validate_config(&e1()).unwrap();
        let states = run(&v, 100, &[10, 100], 3, 0).unwrap();
        let snaps: Vec<_> = states.iter().map(|s| snapshot(s, 2, None).unwrap()).collect();
        let text = String::from_utf8(snapshots_csv(&snaps).unwrap()).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 4);
        assert!(lines[1].starts_with("10,1,"));
        assert!(lines[2].starts_with("10,2,"));
        // no proxy: D* and proxy columns empty
        let cells: Vec<_> = lines[1].split(',').collect();
        assert_eq!(cells.len(), 8);
        assert_eq!((cells[5], cells[7]), ("", ""));
    }

    #[test]
    fn panel_reader() {
        let p = read_panel("a,b\n1,2\n3,0.5\n".as_bytes(), None).unwrap();
        assert_eq!(p.labels, vec!["a", "b"]);
        assert_eq!(p.rows, vec![vec![1.0, 2.0], vec![3.0, 0.5]]);
        assert_eq!(p.beta, 3.0);
        assert!(matches!(read_panel("a,b\n1,x\n".as_bytes(), None), Err(Error::BadPanel(_))));
        assert!(matches!(read_panel("a,b\n1\n".as_bytes(), None), Err(Error::BadPanel(_))));
        assert!(read_panel("a,b\n1,-1\n".as_bytes(), None).is_err());
    }

    #[test]
    fn x_matrix_layout() {
        let bytes = x_matrix_csv(&["a".into(), "b".into()], &[vec![1, 0], vec![0, 1]]).unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap(), "a,b\n1,0\n0,1\n");
    }

    #[test]
    fn manifest_hash_ignores_outputs_and_time() {
        let dir = tempdir();
        let mut a = RunManifest::new("simulate", vec!["--seed".into(), "7".into()], None, serde_json::json!({"base_seed": 7}));
        let out = dir.join("x.csv");
        a.write_output(&out, b"n\n1\n").unwrap();
        a.finish();
        let b = RunManifest::new("simulate", vec!["--seed".into(), "7".into()], None, serde_json::json!({"base_seed": 7}));
        assert_eq!(a.manifest_hash, b.manifest_hash);
        assert_eq!(a.outputs[0].sha256, sha256_hex(b"n\n1\n"));
        let c = RunManifest::new("simulate", vec!["--seed".into(), "8".into()], None, serde_json::json!({"base_seed": 8}));
        assert_ne!(a.manifest_hash, c.manifest_hash);
        let art = json_artifact(&serde_json::json!({"x": 1}), &a.manifest_hash).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&art).unwrap();
        assert_eq!(v["manifest_hash"], a.manifest_hash.as_str());
        std::fs::remove_dir_all(dir).unwrap();
    }

    fn tempdir() -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("domurn-io-{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn checks_against_report() {
        let mut spec = ExperimentSpec::new(e1(), 200, 100, 5, vec![Statistic::Coverage, Statistic::Divergence]);
        spec.proxy_horizon = Some(20_000);
        let rep = replicate(&spec).unwrap();
        let mut checks = BTreeMap::new();
        checks.insert("coverage".into(), Check { rate_range: Some([0.0, 1.0]), ..Check::default() });
        checks.insert("size".into(), Check { rate_range: Some([0.0, 0.0]), ..Check::default() });
        checks.insert(
            "sqrt_n_dominated".into(),
            Check { median_trend: Some(Trend::Increasing), ..Check::default() },
        );
        let out = evaluate_checks(&rep, &checks);
        assert_eq!(out.len(), 2);
        assert!(out[0].passed);
        let empty = evaluate_checks(&rep, &BTreeMap::new());
        assert_eq!(empty.len(), 1);
        assert!(!empty[0].passed);
        let csv = String::from_utf8(replications_csv(&rep.rows).unwrap()).unwrap();
        assert_eq!(csv.lines().count(), 101);
        let series = String::from_utf8(series_csv(&rep).unwrap()).unwrap();
        assert!(series.lines().nth(1).unwrap().starts_with("sqrt_n_dominated,1,"));
    }
}
