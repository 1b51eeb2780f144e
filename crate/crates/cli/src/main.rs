use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use domurn::anova::{anova_rejection_frequency, anova_test, simulate_assignments};
use domurn::harness::{replicate_with, ExperimentSpec, McReport, Statistic};
use domurn::inference::{test_h0, TestMode};
use domurn::io::{
    evaluate_checks, json_artifact, load_config, read_panel, read_states, replications_csv, series_csv,
    snapshots_csv, states_csv, x_matrix_csv, CheckOutcome, ConfigFile, RunManifest,
};
use domurn::rng::SeedRecord;
use domurn::statistics::snapshot;
use domurn::urn::{default_proxy_horizon, geometric_checkpoints, run as run_urn, Trajectory};
use domurn::{validate_config, Error};

const EXIT_VALIDATION: u8 = 2;
const EXIT_CHECK: u8 = 3;

const SCHEMA: &str = r#"Config file (JSON object):
  d0            integer, number of non-dominated colors (listed first)
  a             array of d positive numbers, initial composition
  schedule      { "beta": number, "colors": [family, ...] } with one family per color:
                  {"family": "point_mass", "value": x}
                  {"family": "coin", "p": p}                     values 0 or beta
                  {"family": "discrete_uniform", "lo": i, "hi": j}
                  {"family": "beta_grid", "shape": s, "points": k}
                the coin probability p is a number or
                  {"limit": L, "amplitude": c, "exponent": e}   meaning L + c n^-e
  permutation   optional, input label (1-based) of each canonical color
  proxy_ceiling optional cap on the default proxy horizon
  checks        optional map from a statistic or series name to thresholds:
                  abs_mean_max, variance_range [lo, hi], ks_below_1pct true,
                  rate_range [lo, hi], median_trend "increasing" | "nonincreasing",
                  min_within_tolerance x
Panel CSV: header row of color labels, one row of reinforcements per step."#;

#[derive(Parser)]
#[command(name = "domurn", version, about = "Randomly reinforced urn simulator and inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trajectory and write snapshots at geometric checkpoints.
    Simulate(SimulateArgs),
    /// Replicated normality suite for self-normalized statistics.
    McClt(McArgs),
    /// Coverage of the confidence interval for the limit proportion.
    Coverage(McArgs),
    /// Test H0: J = J* on a simulated or ingested trajectory.
    Test(TestArgs),
    /// Test H0: J = J* on an observed panel with simulated assignments.
    AnovaSim(AnovaArgs),
    /// Convergence of S_n/n, S*_n/n and the scaled dominated mass.
    Lemma(McArgs),
    /// Growth of sqrt(n) times the dominated mass.
    Diverge(McArgs),
    /// Re-run a manifest and compare output digests.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Print the config and panel schema.
    Schema,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    horizon: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    replication: u64,
    /// Continue to a proxy horizon and fill the D* column.
    #[arg(long)]
    proxy: bool,
    #[arg(long)]
    proxy_horizon: Option<u64>,
    #[arg(long, default_value = "domurn-out")]
    out: PathBuf,
}

#[derive(Args)]
struct McArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(short = 'n', long)]
    horizon: u64,
    #[arg(short = 'R', long, default_value_t = 2000)]
    replications: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Statistic(s) to compute; repeat or separate with commas.
    #[arg(long = "stat", value_delimiter = ',')]
    stats: Vec<String>,
    #[arg(long)]
    proxy_horizon: Option<u64>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// 1-based color.
    #[arg(long, default_value_t = 1)]
    color: usize,
    /// 1-based colors of J*, comma separated.
    #[arg(long, value_delimiter = ',')]
    jstar: Option<Vec<usize>>,
    #[arg(long)]
    union: bool,
    #[arg(long, value_delimiter = ',')]
    checkpoints: Option<Vec<u64>>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    variance_inflation: f64,
    #[arg(long, default_value_t = 0.1)]
    tolerance: f64,
    /// Worker threads; the report does not depend on this.
    #[arg(long)]
    threads: Option<usize>,
    /// Evaluate the config's checks and exit 3 if any fails.
    #[arg(long)]
    check: bool,
    #[arg(long, default_value = "domurn-out")]
    out: PathBuf,
}

#[derive(Args)]
struct TestArgs {
    /// Simulate with this config (requires --horizon).
    #[arg(long, conflicts_with = "trajectory")]
    config: Option<PathBuf>,
    /// States CSV; the last row is tested.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[arg(short = 'n', long)]
    horizon: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    replication: u64,
    #[arg(long, value_delimiter = ',', required = true)]
    jstar: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    color: usize,
    #[arg(long)]
    union: bool,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Attach proxy metadata from a same-trajectory continuation (simulated only).
    #[arg(long)]
    proxy: bool,
    #[arg(long, default_value = "domurn-out")]
    out: PathBuf,
}

#[derive(Args)]
struct AnovaArgs {
    #[arg(long)]
    panel: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    jstar: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    color: usize,
    #[arg(long)]
    union: bool,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also report the rejection frequency over this many auxiliary streams.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Write the simulated indicator matrix.
    #[arg(long)]
    x_matrix: bool,
    #[arg(long, default_value = "domurn-out")]
    out: PathBuf,
}

enum Failure {
    Validation(String),
    Checks,
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Other(e.to_string())
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match run(&argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}\n\nRun `domurn schema` for the config format.");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Checks) => ExitCode::from(EXIT_CHECK),
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(argv: &[String]) -> Outcome {
    let cli = match Cli::try_parse_from(std::iter::once("domurn".to_string()).chain(argv.iter().cloned())) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return if code == 0 {
                Ok(())
            } else {
                Err(Failure::Validation("invalid arguments".into()))
            };
        }
    };
    let args = argv.to_vec();
    match cli.command {
        Command::Simulate(a) => simulate(a, args),
        Command::McClt(a) => mc("mc-clt", a, args, &[Statistic::DstarNormalized]),
        Command::Coverage(a) => mc("coverage", a, args, &[Statistic::Coverage]),
        Command::Lemma(a) => mc("lemma", a, args, &[Statistic::LemmaConvergence]),
        Command::Diverge(a) => mc("diverge", a, args, &[Statistic::Divergence]),
        Command::Test(a) => test(a, args),
        Command::AnovaSim(a) => anova(a, args),
        Command::Replay { manifest } => replay(&manifest),
        Command::Schema => {
            println!("{SCHEMA}");
            Ok(())
        }
    }
}

fn load(path: &Path) -> Result<(ConfigFile, Vec<u8>), Failure> {
    load_config(path).map_err(|e| match e {
        Error::Io(io) => Failure::Validation(format!("cannot read {}: {io}", path.display())),
        other => other.into(),
    })
}

fn finish(mut manifest: RunManifest, out: &Path) -> Outcome {
    manifest.finish();
    let bytes = manifest.to_json()?;
    std::fs::create_dir_all(out).map_err(Error::from)?;
    std::fs::write(out.join("manifest.json"), bytes).map_err(Error::from)?;
    Ok(())
}

fn simulate(a: SimulateArgs, args: Vec<String>) -> Outcome {
    let (file, bytes) = load(&a.config)?;
    let cfg = validate_config(&file.config)?;
    let seeds = serde_json::json!({ "base_seed": a.seed, "replication": a.replication });
    let mut manifest = RunManifest::new("simulate", args, Some((&a.config, &bytes)), seeds);
    let checkpoints = geometric_checkpoints(a.horizon);
    let states = run_urn(&cfg, a.horizon, &checkpoints, a.seed, a.replication)?;
    let proxy = if a.proxy || a.proxy_horizon.is_some() {
        let n = a
            .proxy_horizon
            .unwrap_or_else(|| default_proxy_horizon(a.horizon, file.config.proxy_ceiling));
        let mut tr = Trajectory::new(&cfg, a.seed, a.replication);
        tr.advance_to(a.horizon);
        Some(tr.continue_to_proxy(n)?)
    } else {
        None
    };
    let snaps = states
        .iter()
        .filter(|s| s.n > 0)
        .map(|s| snapshot(s, cfg.d0, proxy.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    manifest.write_output(&a.out.join("snapshots.csv"), &snapshots_csv(&snaps)?)?;
    manifest.write_output(&a.out.join("states.csv"), &states_csv(&states)?)?;
    println!("{} checkpoints written to {}", snaps.len(), a.out.display());
    finish(manifest, &a.out)
}

fn report_checks(outcomes: &[CheckOutcome]) -> bool {
    for o in outcomes {
        println!(
            "{} {}: {} (observed {})",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.criterion,
            o.observed
        );
    }
    outcomes.iter().all(|o| o.passed)
}

fn mc(command: &str, a: McArgs, args: Vec<String>, default: &[Statistic]) -> Outcome {
    let (file, bytes) = load(&a.config)?;
    let stats = if a.stats.is_empty() {
        default.to_vec()
    } else {
        a.stats
            .iter()
            .map(|s| {
                Statistic::parse(s.trim()).ok_or_else(|| {
                    let names: Vec<_> = Statistic::ALL.iter().map(|x| x.name()).collect();
                    Failure::Validation(format!("unknown statistic {s:?}; expected one of {}", names.join(", ")))
                })
            })
            .collect::<Result<_, _>>()?
    };
    let mut spec = ExperimentSpec::new(file.config.clone(), a.horizon, a.replications, a.seed, stats);
    spec.proxy_horizon = a.proxy_horizon;
    spec.alpha = a.alpha;
    spec.color = a.color;
    spec.jstar = a.jstar;
    spec.union_test = a.union;
    spec.checkpoints = a.checkpoints;
    spec.lambda = a.lambda;
    spec.variance_inflation = a.variance_inflation;
    spec.lemma_tolerance = a.tolerance;
    let seeds = serde_json::json!({ "base_seed": a.seed, "replications": a.replications });
    let mut manifest = RunManifest::new(command, args, Some((&a.config, &bytes)), seeds);
    let mut report: McReport = replicate_with(&spec, a.threads)?;
    report.manifest_hash = Some(manifest.manifest_hash.clone());
    let hash = manifest.manifest_hash.clone();
    manifest.write_output(&a.out.join("report.json"), &json_artifact(&report, &hash)?)?;
    manifest.write_output(&a.out.join("replications.csv"), &replications_csv(&report.rows)?)?;
    if !report.series.is_empty() {
        manifest.write_output(&a.out.join("series.csv"), &series_csv(&report)?)?;
    }
    print_summary(&report);
    let passed = !a.check || report_checks(&evaluate_checks(&report, &file.checks));
    finish(manifest, &a.out)?;
    if passed {
        Ok(())
    } else {
        Err(Failure::Checks)
    }
}

fn print_summary(r: &McReport) {
    for s in &r.summaries {
        let ks = s.ks.map_or_else(|| "-".to_string(), |k| format!("{:.4} (p {:.3})", k.stat, k.p_value));
        println!(
            "{} n={} color={} samples={} undefined={} mean={:.4} var={:.4} ks={}",
            s.statistic.name(),
            s.n,
            s.color,
            s.samples,
            s.undefined,
            s.mean,
            s.variance,
            ks
        );
    }
    for x in &r.rates {
        println!(
            "{} rate={:.4} se={:.4} trials={} undefined={}",
            x.statistic.name(),
            x.rate,
            x.se,
            x.trials,
            x.undefined
        );
    }
    for s in &r.series {
        println!("{} medians {:?}", s.name, s.median);
    }
}

fn mode(union: bool, color: usize) -> Result<TestMode, Failure> {
    if union {
        Ok(TestMode::Union)
    } else if color == 0 {
        Err(Failure::Validation("colors are 1-based".into()))
    } else {
        Ok(TestMode::Designated(color - 1))
    }
}

fn zero_based(js: &[usize]) -> Result<Vec<usize>, Failure> {
    if js.contains(&0) {
        return Err(Failure::Validation("colors are 1-based".into()));
    }
    Ok(js.iter().map(|j| j - 1).collect())
}

fn test(a: TestArgs, args: Vec<String>) -> Outcome {
    let jstar = zero_based(&a.jstar)?;
    let mode = mode(a.union, a.color)?;
    let (report, manifest) = match (&a.config, &a.trajectory) {
        (Some(path), None) => {
            let n = a
                .horizon
                .ok_or_else(|| Failure::Validation("--horizon is required with --config".into()))?;
            let (file, bytes) = load(path)?;
            let cfg = validate_config(&file.config)?;
            let seeds = serde_json::json!({ "base_seed": a.seed, "replication": a.replication });
            let manifest = RunManifest::new("test", args, Some((path, &bytes)), seeds);
            let mut tr = Trajectory::new(&cfg, a.seed, a.replication);
            tr.advance_to(n);
            let state = tr.state().clone();
            let mut report = test_h0(&state, &jstar, mode, a.alpha)?;
            report.simulation_seed = Some(SeedRecord {
                base_seed: a.seed,
                replication: a.replication,
            });
            if a.proxy {
                let px = tr.continue_to_proxy(default_proxy_horizon(n, file.config.proxy_ceiling))?;
                report.proxy = Some(px.meta());
            }
            (report, manifest)
        }
        (None, Some(path)) => {
            let bytes = std::fs::read(path).map_err(|e| Failure::Validation(format!("cannot read {}: {e}", path.display())))?;
            let states = read_states(&bytes[..])?;
            let manifest = RunManifest::new("test", args, Some((path, &bytes)), serde_json::Value::Null);
            (test_h0(states.last().unwrap(), &jstar, mode, a.alpha)?, manifest)
        }
        _ => return Err(Failure::Validation("give exactly one of --config or --trajectory".into())),
    };
    let mut manifest = manifest;
    let hash = manifest.manifest_hash.clone();
    manifest.write_output(&a.out.join("inference.json"), &json_artifact(&report, &hash)?)?;
    println!("{:?} H0: J = {:?} at alpha = {}", report.decision, report.jstar, report.alpha);
    finish(manifest, &a.out)
}

fn anova(a: AnovaArgs, args: Vec<String>) -> Outcome {
    let bytes = std::fs::read(&a.panel)
        .map_err(|e| Failure::Validation(format!("cannot read {}: {e}", a.panel.display())))?;
    let panel = read_panel(&bytes[..], a.beta)?;
    let jstar = zero_based(&a.jstar)?;
    let mode = mode(a.union, a.color)?;
    let seeds = serde_json::json!({ "base_seed": a.seed, "seeds": a.seeds.unwrap_or(1) });
    let mut manifest = RunManifest::new("anova-sim", args, Some((&a.panel, &bytes)), seeds);
    let seed = SeedRecord {
        base_seed: a.seed,
        replication: 0,
    };
    let report = match a.seeds {
        Some(k) => anova_rejection_frequency(&panel, &jstar, mode, a.alpha, a.seed, k)?,
        None => anova_test(&panel, &jstar, mode, a.alpha, seed)?,
    };
    let hash = manifest.manifest_hash.clone();
    manifest.write_output(&a.out.join("inference.json"), &json_artifact(&report, &hash)?)?;
    if a.x_matrix {
        let x = simulate_assignments(&panel, seed).x_matrix();
        manifest.write_output(&a.out.join("x_matrix.csv"), &x_matrix_csv(&panel.labels, &x)?)?;
    }
    println!("{:?} H0: J = {:?} at alpha = {}", report.decision, report.jstar, report.alpha);
    if let Some(f) = &report.rejection_frequency {
        println!("rejection frequency {:.4} (se {:.4}) over {} streams", f.rate, f.se, f.seeds);
    }
    finish(manifest, &a.out)
}

fn replay(path: &Path) -> Outcome {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Validation(format!("cannot read {}: {e}", path.display())))?;
    let old: RunManifest =
        serde_json::from_str(&text).map_err(|e| Failure::Validation(format!("bad manifest: {e}")))?;
    if old.command == "replay" {
        return Err(Failure::Validation("cannot replay a replay".into()));
    }
    let before: Vec<_> = old.outputs.iter().map(|o| (o.path.clone(), o.sha256.clone())).collect();
    let result = run(&old.args);
    if let Err(Failure::Validation(m) | Failure::Other(m)) = &result {
        return Err(Failure::Other(format!("replayed run failed: {m}")));
    }
    let mut same = true;
    for (p, sha) in &before {
        let now = std::fs::read(p).map(|b| domurn::io::sha256_hex(&b)).unwrap_or_default();
        let ok = &now == sha;
        same &= ok;
        println!("{} {p}", if ok { "identical" } else { "DIFFERENT" });
    }
    if same {
        Ok(())
    } else {
        Err(Failure::Checks)
    }
}
