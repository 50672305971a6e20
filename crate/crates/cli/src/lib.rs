//! Batch driver: refinement studies, identity audits and the lid-driven
//! cavity demo, with CSV output.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, ValueEnum};
use thiserror::Error;

use hho_core::assembly::{Problem, State};
use hho_core::forms::{BcMode, FlowParams, RhoKind};
use hho_core::mesh::{build_cartesian, load_polymesh, validate, Mesh, MeshError, Point};
use hho_core::polybasis::BasisError;
use hho_core::solver::{solve_steady, PtcSettings, SolveReport, SparseLuSolver};
use hho_core::space::HhoSpace;
use hho_core::verification::{
    discrete_errors, identity_suite, ConvergenceRecord, ExactFlow, IdentityCheck, IdentityError, Kovasznay,
    KOVASZNAY_DOMAIN,
    LevelRecord, PolynomialStokes, IDENTITY_TOLERANCE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Case {
    Kovasznay,
    Cavity2d,
    StokesPoly,
    Audits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BcArg {
    Strong,
    WeakSkew,
    WeakSym,
    WeakInc,
}

impl From<BcArg> for BcMode {
    fn from(b: BcArg) -> Self {
        match b {
            BcArg::Strong => BcMode::Strong,
            BcArg::WeakSkew => BcMode::WeakSkew,
            BcArg::WeakSym => BcMode::WeakSymmetric,
            BcArg::WeakInc => BcMode::WeakIncomplete,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StabArg {
    None,
    Upwind,
    Theta,
    Sg,
}

impl From<StabArg> for RhoKind {
    fn from(s: StabArg) -> Self {
        match s {
            StabArg::None => RhoKind::Centered,
            StabArg::Upwind => RhoKind::Upwind,
            StabArg::Theta => RhoKind::theta(),
            StabArg::Sg => RhoKind::ScharfetterGummel,
        }
    }
}

#[derive(Debug, Clone, Parser)]
#[command(name = "hho", version, about = "HHO solver for the steady incompressible Navier-Stokes equations")]
pub struct Args {
    #[arg(long, value_enum)]
    pub case: Case,
    /// Polynomial degree (for audits: the largest degree checked).
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Grid sizes: a comma list (8,16,32) or a doubling range (4..128).
    #[arg(long, default_value = "8..32")]
    pub grids: String,
    /// Polygonal mesh file; replaces the grid sequence with a single level.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    #[arg(long)]
    pub re: Option<f64>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long, value_enum, default_value = "strong")]
    pub bc: BcArg,
    #[arg(long = "conv-stab", value_enum, default_value = "upwind")]
    pub conv_stab: StabArg,
    /// Nitsche penalty parameter.
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    /// Disable convective stabilisation on boundary faces.
    #[arg(long)]
    pub no_boundary_stab: bool,
    /// Tolerance on the momentum residual.
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    /// Initial pseudo-time step.
    #[arg(long, default_value_t = 1.0)]
    pub dtau0: f64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("solve failed on level {level}: {status}")]
    SolveFailed { level: String, status: String },
    #[error("{failed} identity checks exceeded the tolerance")]
    AuditFailed { failed: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeshSource {
    Grids(Vec<usize>),
    File(PathBuf),
}

/// Validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub case: Case,
    pub k: usize,
    pub meshes: MeshSource,
    pub nu: f64,
    pub params: FlowParams,
    pub ptc: PtcSettings,
    pub out: PathBuf,
}

/// Parses `"4,8,16"` or the doubling range `"4..32"`; sizes must strictly increase.
pub fn parse_grids(s: &str) -> Result<Vec<usize>, RunError> {
    let bad = |what: &str| RunError::Config(format!("grid list {s:?}: {what}"));
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad("not a positive integer"));
    let grids = if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b)?);
        if a == 0 || b < a {
            return Err(bad("empty range"));
        }
        std::iter::successors(Some(a), |&n| Some(2 * n)).take_while(|&n| n <= b).collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if grids.is_empty() || grids.contains(&0) {
        return Err(bad("grid sizes must be positive"));
    }
    if grids.windows(2).any(|w| w[1] <= w[0]) {
        return Err(bad("grids must be strictly refining"));
    }
    Ok(grids)
}

impl RunConfig {
    pub fn from_args(args: &Args) -> Result<Self, RunError> {
        let default_re = match args.case {
            Case::Kovasznay => 40.0,
            Case::Cavity2d => 1000.0,
            Case::StokesPoly | Case::Audits => 1.0,
        };
        let nu = match (args.re, args.nu) {
            (Some(re), Some(nu)) => {
                if (re * nu - 1.0).abs() > 1e-12 {
                    return Err(RunError::Config(format!("--re {re} and --nu {nu} disagree")));
                }
                nu
            }
            (Some(re), None) => 1.0 / re,
            (None, Some(nu)) => nu,
            (None, None) => 1.0 / default_re,
        };
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(RunError::Config(format!("viscosity {nu} must be positive")));
        }
        if !(args.eta > 0.0) || !(args.tol > 0.0) || !(args.dtau0 > 0.0) {
            return Err(RunError::Config("--eta, --tol and --dtau0 must be positive".into()));
        }
        let meshes = match &args.mesh {
            Some(p) => MeshSource::File(p.clone()),
            None => MeshSource::Grids(parse_grids(&args.grids)?),
        };
        let params = FlowParams {
            nu,
            convection: args.case != Case::StokesPoly,
            rho: args.conv_stab.into(),
            bc: args.bc.into(),
            eta: args.eta,
            boundary_stab: !args.no_boundary_stab,
        };
        let ptc = PtcSettings { tolerance: args.tol, dtau0: args.dtau0, ..Default::default() };
        Ok(RunConfig { case: args.case, k: args.k, meshes, nu, params, ptc, out: args.out.clone() })
    }

    fn levels(&self, domain: [f64; 4]) -> Result<Vec<(String, Mesh)>, RunError> {
        match &self.meshes {
            MeshSource::File(p) => {
                let mesh = load_polymesh(p)?;
                let report = validate(&mesh);
                if !report.is_valid() {
                    let list: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
                    return Err(RunError::Config(format!("invalid mesh {}: {}", p.display(), list.join("; "))));
                }
                Ok(vec![(p.display().to_string(), mesh)])
            }
            MeshSource::Grids(g) => g.iter().map(|&n| Ok((format!("{n}x{n}"), build_cartesian(n, n, domain)?))).collect(),
        }
    }
}

/// What a successful run produced.
#[derive(Debug, Clone, PartialEq)]
pub enum RunOutput {
    Convergence { record: ConvergenceRecord, path: PathBuf },
    Cavity { files: Vec<PathBuf> },
    Audits { checks: Vec<IdentityCheck>, path: PathBuf },
}

pub fn run(config: &RunConfig) -> Result<RunOutput, RunError> {
    fs::create_dir_all(&config.out)?;
    match config.case {
        Case::Kovasznay => {
            let exact = Kovasznay::new(1.0 / config.nu);
            study(config, &exact, KOVASZNAY_DOMAIN)
        }
        Case::StokesPoly => {
            let exact = PolynomialStokes { k: config.k, nu: config.nu };
            study(config, &exact, [0.0, 1.0, 0.0, 1.0])
        }
        Case::Cavity2d => cavity(config),
        Case::Audits => audits(config),
    }
}

fn solve(config: &RunConfig, problem: &Problem, level: &str, initial: Option<State>) -> Result<SolveReport, RunError> {
    let rep = solve_steady(problem, &config.ptc, &mut SparseLuSolver::default(), initial);
    if !rep.converged() {
        eprintln!("solve report for level {level}:");
        eprintln!("{:>4} {:>12} {:>12} {:>12} {:>10}", "it", "momentum", "continuity", "gauge", "dtau");
        for (i, r) in rep.history.iter().enumerate() {
            eprintln!(
                "{i:>4} {:>12.4e} {:>12.4e} {:>12.4e} {:>10.3e}",
                r.momentum_residual, r.continuity_residual, r.gauge_residual, r.dtau
            );
        }
        return Err(RunError::SolveFailed { level: level.to_string(), status: format!("{:?}", rep.status) });
    }
    Ok(rep)
}

fn study(config: &RunConfig, exact: &dyn ExactFlow, domain: [f64; 4]) -> Result<RunOutput, RunError> {
    let mut record = ConvergenceRecord::default();
    for (name, mesh) in config.levels(domain)? {
        let mesh = Arc::new(mesh);
        let h = mesh.h;
        let space = Arc::new(HhoSpace::new(mesh, config.k)?);
        let problem = Problem::new(space, config.params, |x| exact.forcing(x), |x| exact.velocity(x));
        let rep = solve(config, &problem, &name, None)?;
        let e = discrete_errors(&problem, &rep.state, exact);
        println!(
            "{name:>9} ndof={:>7} nnz={:>9} it={:>3} energy={:.2e} l2u={:.2e} l2p={:.2e}",
            rep.n_dof,
            rep.nnz,
            rep.iterations(),
            e.energy,
            e.l2_velocity,
            e.l2_pressure
        );
        if record.levels.last().is_some_and(|l| l.h <= h) {
            return Err(RunError::Config("mesh sizes must strictly decrease across levels".into()));
        }
        record.levels.push(LevelRecord {
            h,
            n_dof: rep.n_dof,
            nnz: rep.nnz,
            energy: e.energy,
            l2_velocity: e.l2_velocity,
            l2_pressure: e.l2_pressure,
            assembly_seconds: rep.assembly_seconds(),
            solve_seconds: rep.solve_seconds(),
        });
    }
    let path = config.out.join("convergence.csv");
    save_csv(&record, &path)?;
    Ok(RunOutput::Convergence { record, path })
}

/// Lid velocity `(1, 0)` on the top side of the unit square, no-slip elsewhere.
pub fn cavity_datum(x: Point) -> [f64; 2] {
    if x[1] >= 1.0 - 1e-12 {
        [1.0, 0.0]
    } else {
        [0.0, 0.0]
    }
}

const CENTERLINE_SAMPLES: usize = 129;

/// Velocity at `x`: element values inside, face values on the boundary.
fn sample_velocity(space: &HhoSpace, state: &State, x: Point) -> [f64; 2] {
    let mesh = &space.mesh;
    let on_boundary = x.iter().any(|&c| c.abs() < 1e-14 || (c - 1.0).abs() < 1e-14);
    if on_boundary {
        let hit = mesh.faces.iter().position(|f| {
            let [a, b] = f.vertex_ids.map(|v| mesh.vertices[v]);
            let cross = (b[0] - a[0]) * (x[1] - a[1]) - (b[1] - a[1]) * (x[0] - a[0]);
            let dot = (x[0] - a[0]) * (b[0] - a[0]) + (x[1] - a[1]) * (b[1] - a[1]);
            let len2 = (b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2);
            f.is_boundary() && cross.abs() <= 1e-12 * len2 && (0.0..=len2).contains(&dot)
        });
        if let Some(f) = hit {
            return space.eval_face_velocity(&state.u, f, x);
        }
    }
    let t = mesh.locate(x).expect("sample point inside the domain");
    space.eval_velocity(&state.u, t, x)
}

/// `u1` along the vertical centerline and `u2` along the horizontal one.
pub fn centerline_profiles(space: &HhoSpace, state: &State) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let s = |i: usize| i as f64 / (CENTERLINE_SAMPLES - 1) as f64;
    let vertical = (0..CENTERLINE_SAMPLES).map(|i| [s(i), sample_velocity(space, state, [0.5, s(i)])[0]]).collect();
    let horizontal = (0..CENTERLINE_SAMPLES).map(|i| [s(i), sample_velocity(space, state, [s(i), 0.5])[1]]).collect();
    (vertical, horizontal)
}

fn write_profile(path: &Path, header: [&str; 2], rows: &[[f64; 2]]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record([format!("{:.6}", r[0]), format!("{:.9e}", r[1])])?;
    }
    w.flush()?;
    Ok(())
}

/// Reynolds numbers of the continuation path towards `re`.
fn continuation(re: f64) -> Vec<f64> {
    let mut path: Vec<f64> = [100.0, 400.0].into_iter().filter(|&r| r < re).collect();
    path.push(re);
    path
}

fn cavity(config: &RunConfig) -> Result<RunOutput, RunError> {
    let mut files = Vec::new();
    for (name, mesh) in config.levels([0.0, 1.0, 0.0, 1.0])? {
        let space = Arc::new(HhoSpace::new(Arc::new(mesh), config.k)?);
        let mut state = None;
        for re in continuation(1.0 / config.nu) {
            let params = FlowParams { nu: 1.0 / re, ..config.params };
            let problem = Problem::new(space.clone(), params, |_| [0.0, 0.0], cavity_datum);
            let rep = solve(config, &problem, &format!("{name} Re={re}"), state.take())?;
            println!("{name:>9} Re={re:<6} ndof={:>7} it={:>3} residual={:.1e}", rep.n_dof, rep.iterations(), rep.final_residual());
            state = Some(rep.state);
        }
        let state = state.expect("continuation path is not empty");
        let (vertical, horizontal) = centerline_profiles(&space, &state);
        let tag = name.replace(['/', '\\'], "_");
        let v = config.out.join(format!("cavity_{tag}_u1_vertical.csv"));
        let h = config.out.join(format!("cavity_{tag}_u2_horizontal.csv"));
        write_profile(&v, ["y", "u1"], &vertical)?;
        write_profile(&h, ["x", "u2"], &horizontal)?;
        files.extend([v, h]);
    }
    Ok(RunOutput::Cavity { files })
}

const AUDIT_TRIALS: usize = 100;

fn audits(config: &RunConfig) -> Result<RunOutput, RunError> {
    let degrees: Vec<usize> = (0..=config.k).collect();
    let checks = identity_suite(&degrees, AUDIT_TRIALS, 2024)?;
    let path = config.out.join("audits.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["identity", "mesh", "k", "violation", "passed"])?;
    for c in &checks {
        println!("{:<24} {:<24} k={} {:.2e} {}", c.identity, c.mesh, c.k, c.violation, if c.passed() { "ok" } else { "FAIL" });
        w.write_record([c.identity.to_string(), c.mesh.clone(), c.k.to_string(), sci3(c.violation), c.passed().to_string()])?;
    }
    w.flush()?;
    let failed = checks.iter().filter(|c| !c.passed()).count();
    println!("{} checks, {failed} above {IDENTITY_TOLERANCE:.0e}", checks.len());
    if failed > 0 {
        return Err(RunError::AuditFailed { failed });
    }
    Ok(RunOutput::Audits { checks, path })
}

/// Scientific notation with three significant digits and a two-digit
/// exponent, e.g. `6.96e-03`.
pub fn sci3(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let s = format!("{v:.2e}");
    let (m, e) = s.split_once('e').expect("exponent present");
    let e: i32 = e.parse().expect("integer exponent");
    format!("{m}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs())
}

fn rate(r: Option<f64>) -> String {
    r.map_or_else(|| "--".to_string(), |r| format!("{r:.2}"))
}

pub const CSV_HEADER: [&str; 10] =
    ["n_dof", "n_nz", "err_energy", "eoc_energy", "err_l2_u", "eoc_l2_u", "err_l2_p", "eoc_l2_p", "t_ass", "t_sol"];

pub fn write_csv<W: io::Write>(record: &ConvergenceRecord, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for (l, r) in record.levels.iter().zip(record.eoc()) {
        w.write_record([
            l.n_dof.to_string(),
            l.nnz.to_string(),
            sci3(l.energy),
            rate(r[0]),
            sci3(l.l2_velocity),
            rate(r[1]),
            sci3(l.l2_pressure),
            rate(r[2]),
            sci3(l.assembly_seconds),
            sci3(l.solve_seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(record: &ConvergenceRecord, path: impl AsRef<Path>) -> Result<(), RunError> {
    let file = fs::File::create(path)?;
    write_csv(record, io::BufWriter::new(file))?;
    Ok(())
}

/// Caps the worker pool from `HHO_THREADS`, if set.
pub fn configure_threads() -> Result<(), RunError> {
    let Ok(v) = std::env::var("HHO_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| RunError::Config(format!("HHO_THREADS={v:?} is not a count")))?;
    if n == 0 {
        return Err(RunError::Config("HHO_THREADS must be positive".into()));
    }
    // fails only if the pool was already built, in which case it stays as is
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
