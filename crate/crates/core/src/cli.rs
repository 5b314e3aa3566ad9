//! Command line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::classifier::{classify, moment_criterion, ClassificationReport};
use crate::config::{Format, RunConfig};
use crate::drift::{geometric_grid, DriftSpec, GRID_RATIO, Z_MAX};
use crate::error::{CbdiError, Result};
use crate::generator::{
    default_margin_grid, drift_criterion_verdict, lyapunov_margin, residual_curve, DriftCriterion, Margin, Which,
};
use crate::mechanism::Extended;
use crate::output::{self, csv_f, Provenance};
use crate::passage::{cdi_certificate, explosion_probe, mean_hitting, mean_stderr};
use crate::simulator::{
    default_infinity_grid, simulate_from_infinity, NullObserver, Observer, PathRecord, Simulator, Status,
};

#[derive(Parser, Debug)]
#[command(
    name = "cbdi",
    version,
    about = "Boundary classification and simulation of branching processes with drift interaction"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Run configuration (TOML, or the output of an earlier run).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides `sim.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Cmd {
    /// Classification integrals, conditions and verdicts.
    Classify,
    /// Generator residual curves for the Lyapunov functions.
    Lyapunov,
    /// Simulate paths (or the from-infinity diagnostic).
    Simulate,
    /// Coupled runs: ordering in the initial value or in the drift.
    Compare,
    /// Mean first-passage time.
    Hitting,
    /// Coming-down-from-infinity certificate.
    Cdi,
    /// Explosion frequency at two caps.
    Explode,
}

impl Cmd {
    fn name(self) -> &'static str {
        match self {
            Cmd::Classify => "classify",
            Cmd::Lyapunov => "lyapunov",
            Cmd::Simulate => "simulate",
            Cmd::Compare => "compare",
            Cmd::Hitting => "hitting",
            Cmd::Cdi => "cdi",
            Cmd::Explode => "explode",
        }
    }

    fn default_format(self) -> Format {
        match self {
            Cmd::Simulate | Cmd::Lyapunov => Format::Csv,
            _ => Format::Json,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum FormatArg {
    Csv,
    Json,
    Bin,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
            FormatArg::Bin => Format::Bin,
        }
    }
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
    exit_code: i32,
}

fn report_error(e: &CbdiError) -> i32 {
    let code = e.exit_code();
    let r = ErrorReport {
        error: e.kind(),
        message: e.to_string(),
        exit_code: code,
    };
    eprint!("{}", output::to_json(&r));
    code
}

/// Runs the command line; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            return report_error(&CbdiError::Config(e.to_string()));
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => report_error(&e),
    }
}

fn execute(cli: &Cli) -> Result<i32> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CbdiError::Config("missing --config <path>".into()))?;
    let text =
        std::fs::read_to_string(path).map_err(|e| CbdiError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = RunConfig::from_any(&text)?;
    if let Some(s) = cli.seed {
        cfg.sim.seed = s;
    }
    let format = cli
        .format
        .map(Format::from)
        .or(cfg.output.format)
        .unwrap_or(cli.cmd.default_format());
    let out_path = cli.out.clone().or(cfg.output.path.clone().map(PathBuf::from));
    let prov = Provenance {
        tool: "cbdi",
        version: env!("CARGO_PKG_VERSION"),
        subcommand: cli.cmd.name().to_string(),
        seed: cfg.sim.seed,
        config_sha256: cfg.hash()?,
        config: cfg.canonical()?,
    };
    let threads = cli.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CbdiError::Config(format!("thread pool: {e}")))?;
    let (bytes, code) = pool.install(|| dispatch(cli.cmd, &cfg, format, &prov))?;
    match out_path {
        Some(p) => std::fs::write(&p, &bytes)?,
        None => std::io::stdout().write_all(&bytes)?,
    }
    Ok(code)
}

fn unsupported(cmd: Cmd, f: Format) -> CbdiError {
    CbdiError::Config(format!("format {f:?} is not available for {}", cmd.name()).to_lowercase())
}

fn dispatch(cmd: Cmd, cfg: &RunConfig, format: Format, prov: &Provenance) -> Result<(Vec<u8>, i32)> {
    let m = &cfg.mechanism;
    let d = &cfg.drift;
    let ex = &cfg.experiment;
    let json = |v: &dyn erased::Ser| output::json_document(prov, &erased::Wrap(v)).into_bytes();
    match cmd {
        Cmd::Classify => {
            let out = classify_full(cfg)?;
            match format {
                Format::Json => Ok((json(&out), 0)),
                Format::Csv => Ok((classify_table(prov, &out).into_bytes(), 0)),
                Format::Bin => Err(unsupported(cmd, format)),
            }
        }
        Cmd::Lyapunov => {
            let grid = ex.z_grid.clone().unwrap_or_else(|| default_margin_grid(d));
            let f1 = residual_curve(m, d, Which::F1, &grid);
            let f2 = residual_curve(m, d, Which::F2, &grid);
            let m1 = lyapunov_margin(m, d, Which::F1, Some(&grid));
            let m2 = lyapunov_margin(m, d, Which::F2, Some(&grid));
            let code = if m1.is_err() && m2.is_err() { 3 } else { 0 };
            let bytes = match format {
                Format::Csv => {
                    let mut s = output::csv_header(prov);
                    s.push_str("z,Xf1,Xf2,eps1,eps2\n");
                    for (i, z) in grid.iter().enumerate() {
                        let pick = |c: &Result<Vec<crate::generator::ResidualPoint>>, eps: bool| {
                            c.as_ref()
                                .ok()
                                .map(|v| if eps { v[i].eps } else { v[i].xf })
                                .unwrap_or(f64::NAN)
                        };
                        s.push_str(&format!(
                            "{},{},{},{},{}\n",
                            csv_f(*z),
                            csv_f(pick(&f1, false)),
                            csv_f(pick(&f2, false)),
                            csv_f(pick(&f1, true)),
                            csv_f(pick(&f2, true))
                        ));
                    }
                    s.into_bytes()
                }
                Format::Json => {
                    #[derive(Serialize)]
                    struct Out {
                        f1: MarginOutcome,
                        f2: MarginOutcome,
                    }
                    json(&Out {
                        f1: MarginOutcome::from(m1),
                        f2: MarginOutcome::from(m2),
                    })
                }
                Format::Bin => return Err(unsupported(cmd, format)),
            };
            Ok((bytes, code))
        }
        Cmd::Simulate => {
            let sim = Simulator::new(m, d, cfg.sim.clone())?;
            if ex.from_infinity {
                if format != Format::Json {
                    return Err(unsupported(cmd, format));
                }
                let grid = ex.x_grid.clone().unwrap_or_else(default_infinity_grid);
                let probes = ex.t_probes.clone().unwrap_or_else(|| vec![0.5]);
                let r = simulate_from_infinity(&sim, &grid, &probes, ex.tolerance)?;
                return Ok((json(&r), 0));
            }
            let paths = sim.simulate_ensemble(ex.x0, cfg.sim.n_paths)?;
            let bytes = match format {
                Format::Csv => output::paths_csv(prov, &paths).into_bytes(),
                Format::Bin => output::paths_bin(prov, &paths),
                Format::Json => json(&EnsembleSummary::new(&paths)),
            };
            Ok((bytes, 0))
        }
        Cmd::Compare => compare(cfg, format, prov),
        Cmd::Hitting => {
            if format != Format::Json {
                return Err(unsupported(cmd, format));
            }
            let level = ex
                .level
                .ok_or_else(|| CbdiError::Config("experiment.level is required for hitting".into()))?;
            let sim = Simulator::new(m, d, cfg.sim.clone())?;
            let e = mean_hitting(&sim, ex.x0, level, ex.direction)?;
            Ok((json(&e), 0))
        }
        Cmd::Cdi => {
            let sim = Simulator::new(m, d, cfg.sim.clone())?;
            let grid = ex.x_grid.clone().unwrap_or_else(default_infinity_grid);
            let r = cdi_certificate(&sim, &grid, ex.level.unwrap_or(1.0))?;
            let bytes = match format {
                Format::Json => json(&r),
                Format::Csv => {
                    let mut s = output::csv_header(prov);
                    s.push_str("x,mean_tau,stderr,censored_fraction\n");
                    for (x, e) in r.x_grid.iter().zip(&r.estimates) {
                        s.push_str(&format!(
                            "{},{},{},{}\n",
                            csv_f(*x),
                            csv_f(e.mean),
                            csv_f(e.stderr),
                            csv_f(e.censored_fraction)
                        ));
                    }
                    s.into_bytes()
                }
                Format::Bin => return Err(unsupported(cmd, format)),
            };
            Ok((bytes, 0))
        }
        Cmd::Explode => {
            if format != Format::Json {
                return Err(unsupported(cmd, format));
            }
            let sim = Simulator::new(m, d, cfg.sim.clone())?;
            let r = explosion_probe(&sim, ex.x0)?;
            Ok((json(&r), 0))
        }
    }
}

/// Type-erased serialisation so the dispatcher can share one closure.
mod erased {
    use serde::Serialize;

    pub trait Ser {
        fn json_value(&self) -> serde_json::Value;
    }

    impl<T: Serialize> Ser for T {
        fn json_value(&self) -> serde_json::Value {
            serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
        }
    }

    pub struct Wrap<'a>(pub &'a dyn Ser);

    impl Serialize for Wrap<'_> {
        fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            self.0.json_value().serialize(s)
        }
    }
}

#[derive(Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
enum MarginOutcome {
    Certified {
        threshold: f64,
        c: f64,
        points: Vec<crate::generator::ResidualPoint>,
    },
    Failed {
        error: String,
        message: String,
    },
}

impl From<Result<Margin>> for MarginOutcome {
    fn from(r: Result<Margin>) -> Self {
        match r {
            Ok(m) => MarginOutcome::Certified {
                threshold: m.threshold,
                c: m.c,
                points: m.points,
            },
            Err(e) => MarginOutcome::Failed {
                error: e.kind().into(),
                message: e.to_string(),
            },
        }
    }
}

#[derive(Serialize)]
pub struct ClassifyOutput {
    #[serde(flatten)]
    pub report: ClassificationReport,
    pub drift_criterion: DriftCriterion,
    /// `∫_{[κ,∞)} G dπ`; equals `i_value` when both are available.
    pub moment_criterion: Option<Extended>,
}

pub fn classify_full(cfg: &RunConfig) -> Result<ClassifyOutput> {
    let (m, d) = (&cfg.mechanism, &cfg.drift);
    let mut report = classify(m, d)?;
    report.x0_lyapunov_standin = lyapunov_margin(m, d, Which::F2, None).ok().map(|g| g.threshold);
    let moment = match moment_criterion(&m.levy, d) {
        Ok(v) => Some(v),
        Err(e @ CbdiError::Consistency(_)) => return Err(e),
        Err(_) => None,
    };
    Ok(ClassifyOutput {
        report,
        drift_criterion: drift_criterion_verdict(m, d),
        moment_criterion: moment,
    })
}

fn ext_cell(v: &Option<Extended>) -> String {
    match v {
        None => "n/a".into(),
        Some(Extended::Infinite) => "inf".into(),
        Some(Extended::Finite { value, residual }) => format!("{} +- {}", csv_f(*value), csv_f(*residual)),
    }
}

/// Two-column `quantity,value` rendering of a classification.
fn classify_table(prov: &Provenance, out: &ClassifyOutput) -> String {
    let r = &out.report;
    let check = |c: &crate::drift::Check| match c {
        crate::drift::Check::Pass => "pass".to_string(),
        crate::drift::Check::Fail { reason, .. } => format!("fail: {reason}"),
    };
    let name = |v: &dyn erased::Ser| match v.json_value() {
        serde_json::Value::String(s) => s,
        other => other.to_string(),
    };
    let rows: Vec<(&str, String)> = vec![
        ("kappa", format!("{} ({})", csv_f(r.kappa), name(&r.kappa_source))),
        ("I", ext_cell(&r.i_value)),
        ("flow", ext_cell(&r.flow_integral)),
        ("J", ext_cell(&r.j_value)),
        ("moment_criterion", ext_cell(&out.moment_criterion)),
        ("B1", check(&r.b1)),
        ("B2", check(&r.b2)),
        (
            "B3",
            r.b3.constant()
                .map_or_else(|| "fail".to_string(), |b| format!("pass, b = {}", csv_f(b))),
        ),
        ("non_explosion", name(&r.verdict_nonexplosion)),
        ("cdi", name(&r.verdict_cdi)),
        (
            "comparison",
            r.comparison
                .as_ref()
                .map_or("n/a".into(), |c| format!("c' = {}", csv_f(c.coeff))),
        ),
        (
            "table_rows",
            r.table_rows.iter().map(|r| r.tag()).collect::<Vec<_>>().join(" "),
        ),
        (
            "drift_criterion",
            match out.drift_criterion.x0() {
                Some(x0) => format!(
                    "{} (x0 = {})",
                    erased::Ser::json_value(&out.drift_criterion)["verdict"]
                        .as_str()
                        .unwrap_or(""),
                    csv_f(x0)
                ),
                None => "none".into(),
            },
        ),
        ("x0_lyapunov_standin", r.x0_lyapunov_standin.map_or("n/a".into(), csv_f)),
    ];
    let mut s = output::csv_header(prov);
    s.push_str("quantity,value\n");
    for (k, v) in rows {
        s.push_str(&format!("{k},\"{}\"\n", v.replace('"', "'")));
    }
    s
}

#[derive(Serialize)]
struct EnsembleSummary {
    n: usize,
    t_end: f64,
    mean_final: f64,
    stderr_final: f64,
    alive: usize,
    extinct: usize,
    exploded: usize,
}

impl EnsembleSummary {
    fn new(paths: &[PathRecord]) -> Self {
        let finite: Vec<f64> = paths
            .iter()
            .map(|p| p.final_value())
            .filter(|v| v.is_finite())
            .collect();
        let (mean_final, stderr_final) = mean_stderr(&finite);
        let count = |f: fn(&Status) -> bool| paths.iter().filter(|p| f(&p.status)).count();
        Self {
            n: paths.len(),
            t_end: paths.first().map(|p| *p.times.last().unwrap()).unwrap_or(0.0),
            mean_final,
            stderr_final,
            alive: count(|s| matches!(s, Status::Alive)),
            extinct: count(|s| matches!(s, Status::Extinct { .. })),
            exploded: count(|s| matches!(s, Status::Exploded { .. })),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareReport {
    pub mode: &'static str,
    pub initials: Vec<f64>,
    pub n_bundles: usize,
    pub checked: usize,
    pub violations: usize,
    /// Pathwise ordering is exact only without Gaussian noise.
    pub pathwise: bool,
}

/// Counts ordering violations `lower > upper` at the recorded times of both.
pub fn ordering_violations(lower: &PathRecord, upper: &PathRecord) -> (usize, usize) {
    let mut checked = 0;
    let mut bad = 0;
    for (t, x) in lower.times.iter().zip(&lower.values) {
        checked += 1;
        if *x > upper.value_at(*t) {
            bad += 1;
        }
    }
    for (t, y) in upper.times.iter().zip(&upper.values) {
        checked += 1;
        if lower.value_at(*t) > *y {
            bad += 1;
        }
    }
    (checked, bad)
}

/// Which of two drifts is pointwise larger on a grid: `Some(true)` if
/// `b ≥ a` everywhere.
fn drift_order(a: &DriftSpec, b: &DriftSpec) -> Option<bool> {
    let grid = geometric_grid(1e-3, Z_MAX, GRID_RATIO);
    if grid.iter().all(|&z| b.eval(z) >= a.eval(z)) {
        Some(true)
    } else if grid.iter().all(|&z| a.eval(z) >= b.eval(z)) {
        Some(false)
    } else {
        None
    }
}

fn compare(cfg: &RunConfig, format: Format, prov: &Provenance) -> Result<(Vec<u8>, i32)> {
    let (m, d, ex) = (&cfg.mechanism, &cfg.drift, &cfg.experiment);
    let sim = Simulator::new(m, d, cfg.sim.clone())?;
    let n = cfg.sim.n_paths;
    let pathwise = m.sigma == 0.0 && !(cfg.sim.gaussian_small_jumps && !m.levy.is_zero() && small_variance(&sim));
    let (mode, initials, bundles) = if let Some(d2) = &ex.drift_compare {
        let order =
            drift_order(d, d2).ok_or_else(|| CbdiError::InvalidParameter("drifts are not pointwise ordered".into()))?;
        // members sorted so that the first is expected below the second
        let members: Vec<(f64, &DriftSpec)> = if order {
            vec![(ex.x0, d2), (ex.x0, d)]
        } else {
            vec![(ex.x0, d), (ex.x0, d2)]
        };
        let b = sim.ensemble(n, |i| {
            let mut nulls = [NullObserver, NullObserver];
            let mut obs: Vec<&mut dyn Observer> = nulls.iter_mut().map(|o| o as &mut dyn Observer).collect();
            sim.simulate_coupled_members(&members, i, &mut obs)
        })?;
        ("drift", vec![ex.x0, ex.x0], b)
    } else {
        let initials = ex.initials.clone().unwrap_or_else(|| vec![1.0, 5.0]);
        let b = sim.ensemble(n, |i| sim.simulate_coupled(&initials, i))?;
        ("initial_value", initials, b)
    };
    let mut checked = 0;
    let mut violations = 0;
    for b in &bundles {
        for w in b.windows(2) {
            let (c, v) = ordering_violations(&w[0], &w[1]);
            checked += c;
            violations += v;
        }
    }
    if pathwise && violations > 0 {
        return Err(CbdiError::Consistency(format!(
            "{violations} pathwise ordering violations in {checked} comparisons"
        )));
    }
    let report = CompareReport {
        mode,
        initials,
        n_bundles: n,
        checked,
        violations,
        pathwise,
    };
    let flat: Vec<PathRecord> = bundles.into_iter().flatten().collect();
    let bytes = match format {
        Format::Json => output::json_document(prov, &report).into_bytes(),
        Format::Csv => output::paths_csv(prov, &flat).into_bytes(),
        Format::Bin => output::paths_bin(prov, &flat),
    };
    Ok((bytes, 0))
}

fn small_variance(sim: &Simulator<'_>) -> bool {
    sim.m
        .levy
        .moment(2.0, 0.0, false, sim.cfg.eps_jump, false)
        .map(|v| v.value() > 0.0)
        .unwrap_or(true)
}
