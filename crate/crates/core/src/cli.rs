//! `hvr` command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 invalid input, 3 solver or run failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::importance::{self, ImportanceError, ImportanceMap, Objective, VrMethod};
use crate::mc::{self, McError, Tally};
use crate::model::{self, DeckError, ProblemModel};
use crate::quadrature::{build_quadrature, QuadratureSet};
use crate::sn::{self, Mode, SnError, SolverOptions};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_FAILURE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "hvr", version, about = "Deterministic importance maps and Monte Carlo runs for 2-D shielding models")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Problem deck (JSON).
    #[arg(long, global = true, conflicts_with = "builtin")]
    pub deck: Option<PathBuf>,
    /// Bundled deck: labyrinth2d, box_scatter, infinite_medium, absorber_slab.
    #[arg(long, global = true)]
    pub builtin: Option<String>,
    /// Output path prefix; files are written as `<out>.<kind>.csv`.
    #[arg(long, global = true, default_value = "hvr")]
    pub out: PathBuf,
    /// Quadrature as "polar,azimuthal" angles per octant.
    #[arg(long, global = true, default_value = "4,4", value_parser = parse_quad)]
    pub quad: (usize, usize),
    /// Source-iteration tolerance.
    #[arg(long, global = true, default_value_t = 1e-6)]
    pub tol: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Forward Sn solve; writes the scalar (and optionally angular) flux.
    Forward {
        #[arg(long)]
        angular: bool,
    },
    /// Adjoint Sn solve with the detector response as source.
    Adjoint {
        #[arg(long)]
        angular: bool,
    },
    /// Builds source-biasing and weight-window files.
    Vr {
        /// cadis, cadis-omega, fw-cadis or fw-cadis-omega.
        #[arg(long)]
        method: VrMethod,
        /// FW-CADIS objective: flux-energy-space, flux-space or dose-space.
        #[arg(long, default_value = "dose-space")]
        objective: Objective,
        /// Weight-window ratio w_high / w_low.
        #[arg(long, default_value_t = importance::DEFAULT_RHO)]
        rho: f64,
    },
    /// Monte Carlo run, analog or with files written by `vr`.
    Mc {
        /// Prefix of a `vr` output pair (`<prefix>.ww.csv`, `<prefix>.src.csv`).
        #[arg(long)]
        vr: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
        /// Leave wall time and FOM out of the tally file.
        #[arg(long)]
        no_timing: bool,
    },
    /// Analog, CADIS and CADIS-Ω end to end at equal history counts.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = importance::DEFAULT_RHO)]
        rho: f64,
    },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, default_value = "1e6", value_parser = parse_count)]
    pub histories: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads (defaults to the available cores).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: Option<u64>,
}

impl RunArgs {
    fn workers(&self) -> usize {
        self.workers
            .map(|w| w as usize)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

fn parse_quad(s: &str) -> Result<(usize, usize), String> {
    let (p, a) = s.split_once(',').ok_or("expected \"P,A\"")?;
    let p = p.trim().parse::<usize>().map_err(|e| e.to_string())?;
    let a = a.trim().parse::<usize>().map_err(|e| e.to_string())?;
    if p == 0 || a == 0 {
        return Err("angle counts must be positive".into());
    }
    Ok((p, a))
}

/// Accepts integers and integral floats such as `1e6`.
fn parse_count(s: &str) -> Result<u64, String> {
    if let Ok(n) = s.parse::<u64>() {
        return Ok(n);
    }
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a count"))?;
    if v < 0.0 || v.fract() != 0.0 || v > u64::MAX as f64 {
        return Err(format!("`{s}` is not a whole number"));
    }
    Ok(v as u64)
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(m: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: m.into() }
    }

    fn invalid(m: impl Into<String>) -> Self {
        Self { code: EXIT_INVALID, message: m.into() }
    }
}

impl From<DeckError> for CliError {
    fn from(e: DeckError) -> Self {
        Self::invalid(e.to_string())
    }
}

impl From<SnError> for CliError {
    fn from(e: SnError) -> Self {
        let code = match e {
            SnError::NoAdjointSource
            | SnError::BadTolerance(_)
            | SnError::InvalidAdjointSource { .. }
            | SnError::NegativeAdjointSource => EXIT_INVALID,
            _ => EXIT_FAILURE,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<ImportanceError> for CliError {
    fn from(e: ImportanceError) -> Self {
        match e {
            ImportanceError::Solver(s) => s.into(),
            ImportanceError::MeshMismatch { .. } | ImportanceError::Malformed(_) | ImportanceError::BadWindowRatio(_) => {
                Self::invalid(e.to_string())
            }
            _ => Self { code: EXIT_FAILURE, message: e.to_string() },
        }
    }
}

impl From<McError> for CliError {
    fn from(e: McError) -> Self {
        match e {
            McError::Importance(i) => i.into(),
            McError::ZeroHistories | McError::ZeroWorkers | McError::ZeroSource(_) => Self::invalid(e.to_string()),
            _ => Self { code: EXIT_FAILURE, message: e.to_string() },
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::invalid(format!("{}: {e}", path.display()))
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn load_model(g: &GlobalArgs) -> Result<ProblemModel, CliError> {
    match (&g.deck, &g.builtin) {
        (Some(path), None) => Ok(model::load_deck(path)?),
        (None, Some(name)) => Ok(model::builtin_problem(name)?),
        _ => Err(CliError::usage("one of --deck or --builtin is required")),
    }
}

fn output_path(out: &Path, kind: &str) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(format!(".{kind}.csv"));
    PathBuf::from(s)
}

fn write(out: &Path, kind: &str, text: &str) -> Result<PathBuf, CliError> {
    let path = output_path(out, kind);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

fn solver_setup(g: &GlobalArgs) -> Result<(QuadratureSet, SolverOptions), CliError> {
    let quad = build_quadrature(g.quad.0, g.quad.1).map_err(|e| CliError::usage(e.to_string()))?;
    if !(g.tol > 0.0) {
        return Err(CliError::usage(format!("--tol must be positive, got {}", g.tol)));
    }
    Ok((quad, SolverOptions { tol: g.tol, ..SolverOptions::default() }))
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let g = &cli.global;
    let model = load_model(g)?;
    match &cli.command {
        Command::Forward { angular } => cmd_solve(g, &model, Mode::Forward, *angular),
        Command::Adjoint { angular } => cmd_solve(g, &model, Mode::Adjoint, *angular),
        Command::Vr { method, objective, rho } => cmd_vr(g, &model, *method, *objective, *rho),
        Command::Mc { vr, run, no_timing } => cmd_mc(g, &model, vr.as_deref(), run, *no_timing),
        Command::Compare { run, rho } => cmd_compare(g, &model, run, *rho),
    }
}

fn cmd_solve(g: &GlobalArgs, model: &ProblemModel, mode: Mode, angular: bool) -> Result<(), CliError> {
    let (quad, opts) = solver_setup(g)?;
    let sol = sn::solve(model, &quad, mode, None, &opts)?;
    let tag = match mode {
        Mode::Forward => "forward",
        Mode::Adjoint => "adjoint",
    };
    let r = &sol.report;
    println!(
        "{tag}: {} outer passes, max relative change {:.3e}, worst balance {:.3e}, {} fixups, {:.3} s",
        r.outer_iterations,
        r.max_rel_change,
        r.balance.iter().copied().fold(0.0, f64::max),
        r.fixups,
        r.wall_seconds
    );
    let path = write(&g.out, &format!("{tag}.scalar"), &sn::scalar_flux_csv(&sol.scalar))?;
    println!("wrote {}", path.display());
    if angular {
        let path = write(&g.out, &format!("{tag}.angular"), &sn::angular_flux_csv(&sol.angular))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_vr(g: &GlobalArgs, model: &ProblemModel, method: VrMethod, objective: Objective, rho: f64) -> Result<(), CliError> {
    let (quad, opts) = solver_setup(g)?;
    let vr = importance::make_vr(model, &quad, method, objective, &opts, rho)?;
    println!("method {method}: R = {:e}", vr.map.response);
    for (label, secs) in &vr.timings {
        println!("  {label} solve: {:.4} min", secs / 60.0);
    }
    println!("  deterministic total: {:.4} min", vr.deterministic_seconds() / 60.0);
    for (kind, text) in [
        ("ww", importance::wwfile_csv(&vr.map)),
        ("src", importance::biased_source_csv(&vr.map)),
        ("importance", sn::scalar_flux_csv(&vr.importance)),
    ] {
        let path = write(&g.out, kind, &text)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Reads the pair written by `hvr vr --out <prefix>`.
pub fn load_vr(prefix: &Path, model: &ProblemModel) -> Result<ImportanceMap, CliError> {
    let read = |kind: &str| {
        let path = output_path(prefix, kind);
        fs::read_to_string(&path).map_err(|e| io_err(&path, e))
    };
    Ok(importance::read_vr_files(&read("ww")?, &read("src")?, &model.mesh, model.n_groups())?)
}

fn cmd_mc(g: &GlobalArgs, model: &ProblemModel, vr: Option<&Path>, run: &RunArgs, no_timing: bool) -> Result<(), CliError> {
    let map = vr.map(|p| load_vr(p, model)).transpose()?;
    let tally = mc::run_histories(model, map.as_ref(), run.histories, run.seed, run.workers())?;
    println!(
        "total {:e} (RE {}) over {} histories in {:.4} min",
        tally.total.mean,
        tally.total.rel_err.map_or("no score".to_string(), |r| format!("{r:.4}")),
        tally.histories,
        tally.time_minutes
    );
    let path = write(&g.out, "tally", &tally.to_csv(!no_timing))?;
    println!("wrote {}", path.display());
    Ok(())
}

/// One row of the comparison table.
#[derive(Debug, Clone)]
pub struct CompareRow {
    pub method: String,
    pub t_mc: f64,
    pub t_det: f64,
    pub tally: Tally,
}

impl CompareRow {
    pub fn fom_mc(&self) -> Option<f64> {
        mc::fom(self.t_mc, self.tally.total.rel_err?).ok()
    }

    pub fn fom_adjusted(&self) -> Option<f64> {
        mc::fom(self.t_mc + self.t_det, self.tally.total.rel_err?).ok()
    }
}

/// Analog, CADIS and CADIS-Ω runs of one deck; times in minutes.
#[derive(Debug, Clone)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "no_score".into(), |x| format!("{x:e}"))
}

impl CompareReport {
    pub fn row(&self, method: &str) -> Option<&CompareRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<12} {:>12} {:>12} {:>10} {:>10} {:>26} {:>8}\n",
            "method", "FOM_MC", "FOM_adjusted", "T_MC", "T_det", "total mean ± sigma", "RE"
        );
        let num = |v: Option<f64>| v.map_or_else(|| "-".into(), |x| format!("{x:.4e}"));
        for r in &self.rows {
            let t = &r.tally.total;
            let _ = writeln!(
                s,
                "{:<12} {:>12} {:>12} {:>10.4} {:>10.4} {:>26} {:>8}",
                r.method,
                num(r.fom_mc()),
                num(r.fom_adjusted()),
                r.t_mc,
                r.t_det,
                format!("{:.4e} ± {:.2e}", t.mean, t.sigma()),
                t.rel_err.map_or("-".into(), |x| format!("{x:.4}"))
            );
        }
        s
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("method,fom_mc,fom_adjusted,t_mc_minutes,t_det_minutes,mean,sigma,rel_err\n");
        for r in &self.rows {
            let t = &r.tally.total;
            let _ = writeln!(
                s,
                "{},{},{},{:e},{:e},{:e},{:e},{}",
                r.method,
                opt(r.fom_mc()),
                opt(r.fom_adjusted()),
                r.t_mc,
                r.t_det,
                t.mean,
                t.sigma(),
                opt(t.rel_err)
            );
        }
        s
    }

    /// Per-group response and RE for every method.
    pub fn groups_csv(&self) -> String {
        let mut s = String::from("method,group,mean,rel_err\n");
        for r in &self.rows {
            for (g, e) in r.tally.groups.iter().enumerate() {
                let _ = writeln!(s, "{},{g},{:e},{}", r.method, e.mean, opt(e.rel_err));
            }
        }
        s
    }
}

/// Runs the three methods with the same histories and seed.
pub fn run_compare(
    model: &ProblemModel,
    quad: &QuadratureSet,
    opts: &SolverOptions,
    rho: f64,
    histories: u64,
    seed: u64,
    workers: usize,
) -> Result<CompareReport, CliError> {
    let mut rows = Vec::new();
    let analog = mc::run_histories(model, None, histories, seed, workers)?;
    rows.push(CompareRow {
        method: "analog".into(),
        t_mc: analog.time_minutes,
        t_det: 0.0,
        tally: analog,
    });
    for method in [VrMethod::Cadis, VrMethod::CadisOmega] {
        let start = Instant::now();
        let vr = importance::make_vr(model, quad, method, Objective::DoseSpace, opts, rho)?;
        let t_det = start.elapsed().as_secs_f64() / 60.0;
        let tally = mc::run_histories(model, Some(&vr.map), histories, seed, workers)?;
        rows.push(CompareRow {
            method: method.tag().into(),
            t_mc: tally.time_minutes,
            t_det,
            tally,
        });
    }
    Ok(CompareReport { rows })
}

fn cmd_compare(g: &GlobalArgs, model: &ProblemModel, run: &RunArgs, rho: f64) -> Result<(), CliError> {
    let (quad, opts) = solver_setup(g)?;
    let report = run_compare(model, &quad, &opts, rho, run.histories, run.seed, run.workers())?;
    print!("{}", report.table());
    for (kind, text) in [("compare", report.csv()), ("groups", report.groups_csv())] {
        let path = write(&g.out, kind, &text)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
