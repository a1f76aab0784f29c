//! Batch front-end: run configs, command dispatch and report emission.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    boundary_layer_study, coefficient_continuity_study, convergence_study, perturbation_study, Check, ConvergencePolicy,
    PerturbationMode, StudyKind, StudyPolicy, StudyReport,
};
use crate::cell::{coefficient_table_with, solve_cell_with};
use crate::direct::solve_direct_with;
use crate::error::{Error, Result};
use crate::fem::DEFAULT_TOL;
use crate::geometry::{parse_geometry, GeometryConfig, GeometrySpec, Side};
use crate::limit::{hat_f_from_f0, interface_flux_jump, solve_limit};
use crate::meshing::mesh_interval;

pub const SCHEMA: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_ACCEPTANCE: i32 = 4;
pub const EXIT_IO: i32 = 5;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } => EXIT_IO,
        e if e.is_solver_failure() => EXIT_SOLVER,
        _ => EXIT_CONFIG,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Cell,
    Limit,
    Direct,
    Converge,
    Perturb,
    Layer,
    Coeffcont,
}

impl Command {
    fn kind(self) -> StudyKind {
        match self {
            Command::Cell => StudyKind::Cell,
            Command::Limit => StudyKind::Limit,
            Command::Direct => StudyKind::Direct,
            Command::Converge => StudyKind::Converge,
            Command::Perturb => StudyKind::Perturb,
            Command::Layer => StudyKind::Layer,
            Command::Coeffcont => StudyKind::Coeffcont,
        }
    }

    pub fn name(self) -> &'static str {
        self.kind().name()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Plotdata,
}

/// `f₀(x) = constant + linear·x + Σ_k cos_pi[k−1] cos(kπx)`; direct
/// problems use `f(x1, x2) = f₀(x1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingConfig {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub linear: f64,
    #[serde(default)]
    pub cos_pi: Vec<f64>,
}

impl ForcingConfig {
    pub fn cosine(amplitude: f64) -> Self {
        ForcingConfig { constant: 0.0, linear: 0.0, cos_pi: vec![amplitude] }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let waves: f64 = self
            .cos_pi
            .iter()
            .enumerate()
            .map(|(k, a)| a * ((k + 1) as f64 * std::f64::consts::PI * x).cos())
            .sum();
        self.constant + self.linear * x + waves
    }
}

/// A fully resolved run: every parameter explicit, so the echo written into
/// the summary reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub geometry: PathBuf,
    pub out: PathBuf,
    pub formats: Vec<Format>,
    pub tol: f64,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_timestamp: Option<String>,
    pub epsilon: Vec<f64>,
    pub delta: Vec<f64>,
    pub eta: Vec<f64>,
    /// Cell stations (`cell`, `limit`, `converge`, `coeffcont` use the first).
    pub stations: Vec<f64>,
    /// Cell resolution.
    pub n: usize,
    pub columns_per_period: usize,
    pub limit_n: usize,
    pub mode: PerturbationMode,
    pub forcing: ForcingConfig,
}

/// What a config file or the command line may set; unset fields take the
/// per-command defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[arg(skip)]
    #[serde(default)]
    pub command: Option<Command>,
    /// Geometry config (TOML or JSON).
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated subset of csv,json,plotdata.
    #[arg(long, value_delimiter = ',')]
    pub formats: Option<Vec<Format>>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Use this string instead of the clock in file names and omit timing.
    #[arg(long)]
    pub fixed_timestamp: Option<String>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub epsilon: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub delta: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub eta: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub stations: Option<Vec<f64>>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub columns_per_period: Option<usize>,
    #[arg(long)]
    pub limit_n: Option<usize>,
    #[arg(long)]
    pub mode: Option<PerturbationMode>,
    #[arg(skip)]
    #[serde(default)]
    pub forcing: Option<ForcingConfig>,
}

impl ValueEnum for PerturbationMode {
    fn value_variants<'a>() -> &'a [Self] {
        &[PerturbationMode::Shift, PerturbationMode::Amplitude]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            PerturbationMode::Shift => "shift",
            PerturbationMode::Amplitude => "amplitude",
        }))
    }
}

#[derive(Debug, Parser)]
#[command(name = "thinhom", version, about = "Homogenization studies for thin domains with oscillating boundaries")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Effective coefficients r, p, q at cell stations.
    Cell(CommandArgs),
    /// The 1D homogenized problem.
    Limit(CommandArgs),
    /// The 2D ε-problem on the rescaled domain.
    Direct(CommandArgs),
    /// Homogenization error along an ε ladder.
    Converge(CommandArgs),
    /// Domain-perturbation uniformity over (ε, δ).
    Perturb(CommandArgs),
    /// Boundary-layer decay over (ε, η).
    Layer(CommandArgs),
    /// Continuity of the coefficients under profile perturbation.
    Coeffcont(CommandArgs),
}

#[derive(Debug, Args)]
pub struct CommandArgs {
    /// Run config (TOML); flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

impl CliCommand {
    fn split(self) -> (Command, CommandArgs) {
        match self {
            CliCommand::Cell(a) => (Command::Cell, a),
            CliCommand::Limit(a) => (Command::Limit, a),
            CliCommand::Direct(a) => (Command::Direct, a),
            CliCommand::Converge(a) => (Command::Converge, a),
            CliCommand::Perturb(a) => (Command::Perturb, a),
            CliCommand::Layer(a) => (Command::Layer, a),
            CliCommand::Coeffcont(a) => (Command::Coeffcont, a),
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Merge a config file (if any) and flag overrides into a resolved config.
pub fn load_config(command: Command, config: Option<&Path>, flags: Overrides) -> Result<RunConfig> {
    let mut file = match config {
        Some(path) => {
            let mut o: Overrides = toml::from_str(&read_text(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            // relative geometry paths are relative to the config file
            if let (Some(g), Some(dir)) = (&o.geometry, path.parent()) {
                if g.is_relative() {
                    o.geometry = Some(dir.join(g));
                }
            }
            o
        }
        None => Overrides::default(),
    };
    if file.command.is_some_and(|c| c != command) {
        return Err(Error::Config(format!("config is for '{}', not '{}'", file.command.unwrap().name(), command.name())));
    }
    macro_rules! take {
        ($($f:ident),*) => {$(if flags.$f.is_some() { file.$f = flags.$f; })*};
    }
    take!(geometry, out, formats, tol, threads, fixed_timestamp, epsilon, delta, eta, stations, n, columns_per_period, limit_n, mode, forcing);
    resolve(command, file)
}

/// Fill per-command defaults and validate.
pub fn resolve(command: Command, o: Overrides) -> Result<RunConfig> {
    let third = |v: &[f64]| v.to_vec();
    let (eps, delta, eta): (&[f64], &[f64], &[f64]) = match command {
        Command::Direct => (&[0.125], &[], &[]),
        Command::Converge => (&[0.25, 0.125, 0.0625, 0.03125], &[], &[]),
        Command::Perturb => (&[0.125, 0.0625, 0.03125], &[0.1, 0.05, 0.025], &[]),
        Command::Layer => (&[0.125, 0.0625], &[], &[0.4, 0.1, 0.025]),
        Command::Coeffcont => (&[], &[0.1, 0.05, 0.025], &[]),
        Command::Cell | Command::Limit => (&[], &[], &[]),
    };
    let forcing = match command {
        Command::Direct | Command::Perturb | Command::Layer => ForcingConfig::cosine(0.5),
        _ => ForcingConfig::cosine(1.0),
    };
    let mode = if command == Command::Coeffcont { PerturbationMode::Amplitude } else { PerturbationMode::Shift };
    let cfg = RunConfig {
        command,
        geometry: o.geometry.ok_or_else(|| Error::Config("no geometry given (--geometry or `geometry` in the config)".into()))?,
        out: o.out.unwrap_or_else(|| PathBuf::from("out")),
        formats: o.formats.unwrap_or_else(|| vec![Format::Csv, Format::Json]),
        tol: o.tol.unwrap_or(DEFAULT_TOL),
        threads: o.threads.unwrap_or(0),
        fixed_timestamp: o.fixed_timestamp,
        epsilon: o.epsilon.unwrap_or_else(|| third(eps)),
        delta: o.delta.unwrap_or_else(|| third(delta)),
        eta: o.eta.unwrap_or_else(|| third(eta)),
        stations: o.stations.unwrap_or_else(|| vec![0.0]),
        n: o.n.unwrap_or(128),
        columns_per_period: o.columns_per_period.unwrap_or(16),
        limit_n: o.limit_n.unwrap_or(2048),
        mode: o.mode.unwrap_or(mode),
        forcing: o.forcing.unwrap_or(forcing),
    };
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.tol > 0.0 && self.tol <= 1e-6) {
            return bad(format!("tol = {} outside (0, 1e-6]", self.tol));
        }
        if self.formats.is_empty() {
            return bad("no output formats".into());
        }
        if let Some(ts) = &self.fixed_timestamp {
            if ts.is_empty() || !ts.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
                return bad(format!("fixed timestamp '{ts}' must be nonempty and use only [A-Za-z0-9._-]"));
            }
        }
        if self.n < 8 {
            return bad(format!("n = {} is below 8", self.n));
        }
        let ladder = |name: &str, v: &[f64]| -> Result<()> {
            if v.is_empty() {
                return bad(format!("{name} ladder is empty"));
            }
            if v.windows(2).any(|w| !(w[1] < w[0])) {
                return bad(format!("{name} ladder must be strictly descending"));
            }
            Ok(())
        };
        match self.command {
            Command::Direct | Command::Converge => ladder("epsilon", &self.epsilon)?,
            Command::Perturb => {
                ladder("epsilon", &self.epsilon)?;
                ladder("delta", &self.delta)?;
            }
            Command::Layer => {
                ladder("epsilon", &self.epsilon)?;
                ladder("eta", &self.eta)?;
            }
            Command::Coeffcont => ladder("delta", &self.delta)?,
            Command::Cell | Command::Limit => {}
        }
        if self.stations.is_empty() {
            return bad("stations list is empty".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always serializable")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Runtime {
    pub seconds: f64,
    pub threads: usize,
}

/// The JSON document written by every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema: u32,
    pub version: String,
    pub command: Command,
    pub timestamp: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub config: RunConfig,
    pub geometry: GeometryConfig,
    pub artifacts: Vec<String>,
    pub report: StudyReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime: Option<Runtime>,
}

#[derive(Debug)]
pub struct Outcome {
    pub exit_code: i32,
    pub summary: Summary,
    pub files: Vec<PathBuf>,
}

fn single_station(cfg: &RunConfig) -> f64 {
    cfg.stations[0]
}

/// Coefficient stations for the limit problem: breakpoints alone when the
/// profile does not depend on `x`, otherwise a uniform grid.
fn limit_stations(spec: &GeometrySpec) -> Vec<f64> {
    if spec.is_x_independent() {
        Vec::new()
    } else {
        (0..=16).map(|k| k as f64 / 16.0).collect()
    }
}

fn run_cell(spec: &GeometrySpec, cfg: &RunConfig) -> Result<StudyReport> {
    let mut report = StudyReport::new(StudyKind::Cell, &["x", "r", "p", "q", "mean_of_x", "corrector_max", "residual", "iterations"]);
    report.grid.insert("stations".into(), cfg.stations.clone());
    report.grid.insert("n".into(), vec![cfg.n as f64]);
    for &x in &cfg.stations {
        let s = solve_cell_with(spec, x, Side::Left, cfg.n, cfg.tol)?;
        report.rows.push(vec![
            x,
            s.r,
            s.p,
            s.q,
            s.diagnostics.mean_of_x,
            s.corrector.max_abs(),
            s.diagnostics.residual,
            s.diagnostics.iterations as f64,
        ]);
    }
    let first = &report.rows[0];
    for (i, name) in [(1, "r"), (2, "p"), (3, "q")] {
        report.scalars.insert(name.into(), first[i]);
    }
    let ok = report.rows.iter().all(|r| r[6] <= cfg.tol && r[3] > 0.0);
    report.checks.push(Check { name: "solved".into(), passed: ok, detail: "residual within tol and q > 0 at every station".into() });
    Ok(report)
}

fn run_limit(spec: &GeometrySpec, cfg: &RunConfig) -> Result<StudyReport> {
    let table = coefficient_table_with(spec, &limit_stations(spec), cfg.n, cfg.tol)?;
    let mesh = mesh_interval(cfg.limit_n, spec.breakpoints())?;
    let f0 = |x: f64| cfg.forcing.eval(x);
    let fhat = hat_f_from_f0(&table, f0);
    let sol = solve_limit(&table, &fhat, &mesh)?;
    let mut report = StudyReport::new(StudyKind::Limit, &["x", "u"]);
    report.grid.insert("limit_n".into(), vec![cfg.limit_n as f64]);
    report.rows = sol.mesh.nodes.iter().zip(&sol.u).map(|(&x, &u)| vec![x, u]).collect();
    report.scalars.insert("residual".into(), sol.residual);
    report.scalars.insert("max_flux".into(), sol.max_flux());
    let bps = spec.breakpoints();
    let mut worst: f64 = 0.0;
    for &xi in &bps[1..bps.len() - 1] {
        worst = worst.max(interface_flux_jump(&sol, xi)?.abs());
    }
    report.scalars.insert("max_interface_jump".into(), worst);
    let scale = sol.max_flux();
    report.checks.push(Check {
        name: "interface_flux".into(),
        passed: worst <= 1e-2 * scale || worst <= 1e-12,
        detail: format!("max |jump| = {worst:e}, max |r u'| = {scale:e}"),
    });
    Ok(report)
}

fn run_direct(spec: &GeometrySpec, cfg: &RunConfig) -> Result<StudyReport> {
    let f = |x: f64, _y: f64| cfg.forcing.eval(x);
    let mut report = StudyReport::new(
        StudyKind::Direct,
        &["epsilon", "energy", "load_work", "l2", "dx1", "dx2_scaled", "f_norm", "energy_defect", "apriori_excess", "residual", "iterations"],
    );
    report.grid.insert("epsilon".into(), cfg.epsilon.clone());
    for &eps in &cfg.epsilon {
        let s = solve_direct_with(spec, eps, &f, cfg.columns_per_period, cfg.tol)?;
        report.rows.push(vec![
            eps,
            s.energy,
            s.load_work,
            s.norms.l2,
            s.norms.dx1,
            s.norms.dx2_scaled,
            s.f_norm,
            s.energy_defect() / (1.0 + s.energy.abs()),
            s.a_priori_excess(),
            s.stats.residual,
            s.stats.iterations as f64,
        ]);
    }
    let energy = report.column("energy_defect").unwrap().into_iter().fold(0.0, f64::max);
    let excess = report.column("apriori_excess").unwrap().into_iter().fold(f64::NEG_INFINITY, f64::max);
    report.checks.push(Check { name: "energy_identity".into(), passed: energy <= 1e-8, detail: format!("{energy:e}") });
    report.checks.push(Check { name: "apriori_bounds".into(), passed: excess <= 1e-8, detail: format!("{excess:e}") });
    Ok(report)
}

fn run_study(spec: &GeometrySpec, cfg: &RunConfig) -> Result<StudyReport> {
    let f0 = |x: f64| cfg.forcing.eval(x);
    let f = |x: f64, _y: f64| cfg.forcing.eval(x);
    let policy = StudyPolicy { columns_per_period: cfg.columns_per_period, tol: cfg.tol };
    match cfg.command {
        Command::Cell => run_cell(spec, cfg),
        Command::Limit => run_limit(spec, cfg),
        Command::Direct => run_direct(spec, cfg),
        Command::Converge => {
            let p = ConvergencePolicy {
                columns_per_period: cfg.columns_per_period,
                cell_n: cfg.n,
                limit_n: cfg.limit_n,
                table_stations: 16,
                tol: cfg.tol,
            };
            Ok(convergence_study(spec, &f0, &cfg.epsilon, &p)?.report)
        }
        Command::Perturb => perturbation_study(spec, &cfg.delta, &cfg.epsilon, &f, cfg.mode, &policy),
        Command::Layer => boundary_layer_study(spec, &cfg.epsilon, &cfg.eta, &f, &policy),
        Command::Coeffcont => coefficient_continuity_study(spec, &cfg.delta, cfg.n, single_station(cfg), cfg.mode, cfg.tol),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn plot_name(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect()
}

/// Write the requested formats into `dir` as `<command>_<timestamp>.*`; the
/// JSON summary is always written. Returns the file paths.
pub fn emit_report(summary: &mut Summary, formats: &[Format], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = format!("{}_{}", summary.command.name(), summary.timestamp);
    let mut files = Vec::new();
    let mut names = Vec::new();
    if formats.contains(&Format::Csv) {
        let mut buf = Vec::new();
        summary.report.write_csv(&mut buf).expect("writing to memory");
        let path = dir.join(format!("{stem}.csv"));
        write_file(&path, &buf)?;
        files.push(path);
        names.push(format!("{stem}.csv"));
    }
    if formats.contains(&Format::Plotdata) {
        for fit in &summary.report.fits {
            let mut buf = Vec::new();
            StudyReport::write_plotdata(fit, &mut buf).expect("writing to memory");
            let name = format!("{stem}_{}.dat", plot_name(&fit.name));
            let path = dir.join(&name);
            write_file(&path, &buf)?;
            files.push(path);
            names.push(name);
        }
    }
    names.push(format!("{stem}.json"));
    summary.artifacts = names;
    let path = dir.join(format!("{stem}.json"));
    let mut json = serde_json::to_string_pretty(summary).expect("summary is always serializable");
    json.push('\n');
    write_file(&path, json.as_bytes())?;
    files.push(path);
    Ok(files)
}

/// Run one resolved config. Errors before any artifact is written are
/// returned as `Err`; a finished run whose checks fail returns
/// [`EXIT_ACCEPTANCE`].
pub fn run_command(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let spec = parse_geometry(&read_text(&cfg.geometry)?)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let start = Instant::now();
    let report = pool.install(|| run_study(&spec, cfg))?;
    let (timestamp, runtime) = match &cfg.fixed_timestamp {
        Some(ts) => (ts.clone(), None),
        None => (
            chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string(),
            Some(Runtime { seconds: start.elapsed().as_secs_f64(), threads: pool.current_num_threads() }),
        ),
    };
    let mut summary = Summary {
        schema: SCHEMA,
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: cfg.command,
        timestamp,
        passed: report.passed(),
        checks: report.checks.clone(),
        config: cfg.clone(),
        geometry: spec.config().clone(),
        artifacts: Vec::new(),
        report,
        runtime,
    };
    let files = emit_report(&mut summary, &cfg.formats, &cfg.out)?;
    let exit_code = if summary.passed { EXIT_OK } else { EXIT_ACCEPTANCE };
    Ok(Outcome { exit_code, summary, files })
}

/// Entry point for the binary; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (command, args) = cli.command.split();
    let outcome = load_config(command, args.config.as_deref(), args.overrides).and_then(|cfg| run_command(&cfg));
    match outcome {
        Ok(o) => {
            for f in &o.files {
                println!("{}", f.display());
            }
            for c in o.summary.checks.iter().filter(|c| !c.passed) {
                eprintln!("check failed: {} ({})", c.name, c.detail);
            }
            o.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
