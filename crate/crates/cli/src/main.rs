use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use viscoadjoint::config::RunConfig;
use viscoadjoint::fwi::{self, Assembly};
use viscoadjoint::verify::{self, Scenario, Suite, TestReport};
use viscoadjoint::wave2d::io;
use viscoadjoint::wave2d::{AdjointMode, RecordedWavefield};
use viscoadjoint::Error;

const GRADIENT_SELFCHECK_TOL: f64 = 3e-3;
const HESSIAN_SELFCHECK_TOL: f64 = 1e-2;

#[derive(Parser)]
#[command(name = "viscoadjoint", version, about = "Viscoelastic forward, derivative and adjoint solver")]
struct Cli {
    /// Worker threads (falls back to VISCOADJOINT_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Forward run: receiver CSV and optional wavefield snapshots.
    Simulate {
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Write every `stride`-th state to `wavefield.vaf`.
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Misfit gradient for observed receiver data.
    Gradient {
        config: PathBuf,
        /// Observed receiver CSV.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "gradient.vaf")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Continuous)]
        mode: Mode,
        /// Log the duality gap on a random smooth direction.
        #[arg(long)]
        selfcheck: bool,
    },
    /// Second derivative along a direction, or its adjoint with `--adjoint`.
    Hessian {
        config: PathBuf,
        /// Direction as a 5-component parameter file.
        #[arg(long)]
        direction: PathBuf,
        /// Second direction (defaults to the first).
        #[arg(long)]
        direction2: Option<PathBuf>,
        /// Observed receiver CSV, required with `--adjoint`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        adjoint: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        selfcheck: bool,
    },
    /// Run a verification suite: all, oracle, pde or rheology.
    Check {
        suite: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Directory for CSV evidence.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Residuals of fixed-amplitude perturbations on shrinking balls.
    IllposedDemo {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Continuous,
    Discrete,
}

impl From<Mode> for AdjointMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Continuous => AdjointMode::Continuous,
            Mode::Discrete => AdjointMode::Discrete,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Inadmissible(_) | Error::NotInterior(_) | Error::SingularMap { .. } | Error::Nonpositive(_) => 3,
        Error::Instability { .. } | Error::Cfl { .. } | Error::Integrator(_) => 4,
        _ => 2,
    }
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, Error> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("VISCOADJOINT_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("VISCOADJOINT_THREADS=`{v}` is not a thread count"))),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = threads(cli.threads).and_then(|n| {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = n {
            b = b.num_threads(n);
        }
        b.build().map_err(|e| Error::Config(e.to_string()))
    });
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| run(cli.cmd)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// `Ok(false)` when a check ran but failed.
fn run(cmd: Cmd) -> Result<bool, Error> {
    match cmd {
        Cmd::Simulate { config, out, stride } => simulate(&config, &out, stride),
        Cmd::Gradient {
            config,
            data,
            out,
            mode,
            selfcheck,
        } => gradient(&config, &data, &out, mode.into(), selfcheck),
        Cmd::Hessian {
            config,
            direction,
            direction2,
            data,
            adjoint,
            out,
            selfcheck,
        } => hessian(&config, &direction, direction2.as_deref(), data.as_deref(), adjoint, out, selfcheck),
        Cmd::Check { suite, seed, out } => check(suite.parse()?, seed, out.as_deref()),
        Cmd::IllposedDemo { out } => report(verify::illposed_default()?, out.as_deref()),
    }
}

fn scenario(config: &Path) -> Result<Scenario, Error> {
    Scenario::new(RunConfig::load(config)?)
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn simulate(config: &Path, out: &Path, stride: Option<usize>) -> Result<bool, Error> {
    let sc = scenario(config)?;
    let rec = sc.forward()?;
    create_dir(out)?;
    io::write_seismogram_csv(out.join("seismogram.csv"), sc.dt(), &rec.seismogram(&sc.nodes))?;
    if let Some(s) = stride {
        io::write_wavefield(out.join("wavefield.vaf"), &sc.ops.grid, &rec, s.max(1))?;
    }
    eprintln!("{} steps of {} written to {}", sc.nt(), sc.dt(), out.display());
    Ok(true)
}

fn observed(sc: &Scenario, data: &Path) -> Result<Vec<Vec<f64>>, Error> {
    let (t, rows) = io::read_seismogram_csv(data)?;
    if rows.len() != sc.nt() + 1 {
        return Err(Error::Mismatch(format!(
            "{}: {} samples, the run has {}",
            data.display(),
            t.len(),
            sc.nt() + 1
        )));
    }
    if rows.first().map_or(0, Vec::len) != 2 * sc.nodes.len() {
        return Err(Error::Mismatch(format!(
            "{}: {} traces, the configuration has {} receivers",
            data.display(),
            rows.first().map_or(0, Vec::len),
            sc.nodes.len()
        )));
    }
    Ok(rows)
}

fn gradient(config: &Path, data: &Path, out: &Path, mode: AdjointMode, selfcheck: bool) -> Result<bool, Error> {
    let sc = scenario(config)?;
    let obs = observed(&sc, data)?;
    let base = sc.forward()?;
    let (j, g) = fwi::misfit(&sc.ops, &base, &sc.nodes, &obs)?;
    let grad = fwi::phi_prime_adjoint(&sc.ops, &g, &base, &sc.src, mode, Assembly::Formulas)?;
    io::write_parameters(out, &grad, sc.ops.grid.h)?;
    println!("misfit {j:.17e}");
    if !selfcheck {
        return Ok(true);
    }
    let dir = verify::smooth_direction(&sc.ops, sc.cfg.seed);
    let lin = fwi::phi_prime(&sc.ops, &dir, &base, &sc.src)?;
    let (lhs, rhs) = (lin.pair(&sc.ops.grid, &g), grad.dot(&dir));
    let gn = verify::trace_norm(&lin.seismogram(&sc.nodes), sc.dt()) * verify::trace_norm(&residuals(&g), sc.dt());
    Ok(selfcheck_line("gradient", lhs, rhs, gn, GRADIENT_SELFCHECK_TOL))
}

fn residuals(g: &fwi::AdjointData) -> Vec<Vec<f64>> {
    match g {
        fwi::AdjointData::Receivers { values, .. } => values.clone(),
        fwi::AdjointData::Dense(v) => v.clone(),
    }
}

fn selfcheck_line(what: &str, lhs: f64, rhs: f64, norm: f64, tol: f64) -> bool {
    let gap = if norm > 0.0 { (lhs - rhs).abs() / norm } else { (lhs - rhs).abs() };
    let ok = gap <= tol;
    println!(
        "{} {what}-selfcheck {gap:.3e} (derivative {lhs:.6e}, adjoint {rhs:.6e})",
        if ok { "PASS" } else { "FAIL" }
    );
    ok
}

fn read_direction(sc: &Scenario, path: &Path) -> Result<fwi::GradientField, Error> {
    let d = io::read_parameters(path)?;
    d.check_shape(sc.ops.grid.nx, sc.ops.grid.nz)?;
    Ok(d)
}

fn hessian(
    config: &Path,
    direction: &Path,
    direction2: Option<&Path>,
    data: Option<&Path>,
    adjoint: bool,
    out: Option<PathBuf>,
    selfcheck: bool,
) -> Result<bool, Error> {
    let sc = scenario(config)?;
    let d1 = read_direction(&sc, direction)?;
    let d2 = match direction2 {
        Some(p) => read_direction(&sc, p)?,
        None => d1.clone(),
    };
    let base = sc.forward()?;
    if !adjoint {
        let sec = fwi::phi_second(&sc.ops, &d1, &d2, &base, &sc.src)?;
        let out = out.unwrap_or_else(|| PathBuf::from("hessian.csv"));
        io::write_seismogram_csv(&out, sc.dt(), &sec.seismogram(&sc.nodes))?;
        return Ok(true);
    }
    let data = data.ok_or_else(|| Error::Config("--adjoint needs --data".into()))?;
    let obs = observed(&sc, data)?;
    let (_, g) = fwi::misfit(&sc.ops, &base, &sc.nodes, &obs)?;
    let field = fwi::phi_second_adjoint(&sc.ops, &d1, &g, &base, &sc.src, Assembly::Formulas)?;
    let total = field.total();
    let out = out.unwrap_or_else(|| PathBuf::from("hessian.vaf"));
    io::write_parameters(&out, &total, sc.ops.grid.h)?;
    if !selfcheck {
        return Ok(true);
    }
    let q = verify::smooth_direction(&sc.ops, sc.cfg.seed);
    let sec: RecordedWavefield = fwi::phi_second(&sc.ops, &d1, &q, &base, &sc.src)?;
    let (lhs, rhs) = (sec.pair(&sc.ops.grid, &g), total.dot(&q));
    let norm = verify::trace_norm(&sec.seismogram(&sc.nodes), sc.dt()) * verify::trace_norm(&residuals(&g), sc.dt());
    Ok(selfcheck_line("hessian", lhs, rhs, norm, HESSIAN_SELFCHECK_TOL))
}

fn emit(r: &TestReport, out: Option<&Path>) -> Result<(), Error> {
    println!("{}", r.verdict_line());
    if let Some(dir) = out {
        create_dir(dir)?;
        r.write_csv(dir)?;
    }
    Ok(())
}

fn check(suite: Suite, seed: u64, out: Option<&Path>) -> Result<bool, Error> {
    let mut io_err = None;
    let reports = verify::run_suite(suite, seed, |r| {
        if let Err(e) = emit(r, out) {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e);
    }
    Ok(reports.iter().all(TestReport::pass))
}

fn report(r: TestReport, out: Option<&Path>) -> Result<bool, Error> {
    emit(&r, out)?;
    for row in &r.rows {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:.6e}")).collect();
        eprintln!("  {}", cells.join("  "));
    }
    Ok(r.pass())
}
