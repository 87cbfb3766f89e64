mod config;

use std::fmt;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::Vector3;
use sadowsky::constructions::{build_interpolating_frame, planar_mobius_example};
use sadowsky::equilibrium::{minimize_sadowsky, Solution};
use sadowsky::export::{fmt17, write_table};
use sadowsky::laminate::{approximate_free, approximate_with_windows, Approximation};
use sadowsky::par::{self, Exec};
use sadowsky::ribbon::{
    build_ruled_surface, kirchhoff_energy, max_width, verify_gamma_limit, write_gamma_csv, GammaRow, Widths,
};
use sadowsky::{
    dqbar_dmu, dqbar_dtau, integrate_frame, qbar, qbar_via_min, sadowsky_energy, AdmissibilityReport,
    BoundaryData, CurvatureProfile, Rotation, SymField,
};
use serde::Serialize;

use config::{ConfigError, EpsSpec, RunConfig, AUTO_FRACTIONS};

#[derive(Parser)]
#[command(name = "sadowsky", version, about = "Narrow elastic ribbons with clamped ends")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for the parallel kernels.
    #[arg(long, global = true, value_name = "K")]
    threads: Option<usize>,
    /// Reserved; accepted and ignored.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Limiting energy density, optimal gamma and partial derivatives.
    Qbar {
        #[arg(allow_negative_numbers = true)]
        mu: f64,
        #[arg(allow_negative_numbers = true)]
        tau: f64,
    },
    /// Explicit admissible frame for the boundary data.
    Construct,
    /// Constrained minimization of the Sadowsky energy.
    Minimize,
    /// Developable ribbon of finite width from a laminated field.
    Ribbon,
    /// Ribbon energies against the limit functional over laminate refinements.
    GammaSweep,
    /// Runs construct, minimize, ribbon and gamma-sweep on the Mobius band.
    ExampleMobius,
}

enum Failure {
    Config(ConfigError),
    Lib(sadowsky::Error),
    Io(PathBuf, io::Error),
    NotConverged,
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Lib(e) => e.exit_code() as u8,
            Failure::Io(..) => 1,
            Failure::NotConverged => 5,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "config: {e}"),
            Failure::Lib(e) => write!(f, "{e}"),
            Failure::Io(p, e) => write!(f, "{}: {e}", p.display()),
            Failure::NotConverged => write!(f, "solver did not converge; partial results written"),
        }
    }
}

impl From<sadowsky::Error> for Failure {
    fn from(e: sadowsky::Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

type Outcome<T = ()> = Result<T, Failure>;

/// Output directory with atomic writes.
struct Sink {
    dir: PathBuf,
}

impl Sink {
    fn new(dir: PathBuf) -> Outcome<Self> {
        std::fs::create_dir_all(&dir).map_err(|e| Failure::Io(dir.clone(), e))?;
        Ok(Sink { dir })
    }

    /// Writes to a temporary file in the target directory, then renames.
    fn write(&self, name: &str, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Outcome {
        let path = self.dir.join(name);
        let io_err = |e: io::Error| Failure::Io(path.clone(), e);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(io_err)?;
        {
            let mut w = io::BufWriter::new(tmp.as_file_mut());
            f(&mut w).map_err(io_err)?;
            w.flush().map_err(io_err)?;
        }
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            tmp.as_file().set_permissions(std::fs::Permissions::from_mode(0o644)).map_err(io_err)?;
        }
        tmp.persist(&path).map_err(|e| io_err(e.error))?;
        println!("wrote {}", path.display());
        Ok(())
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Outcome {
        let v = serde_json::to_value(value).expect("serializable");
        self.write(name, |w| writeln!(w, "{}", json17(&v)))
    }
}

/// JSON with floats in 17 significant digits and keys in a fixed order.
fn json17(v: &serde_json::Value) -> String {
    use serde_json::Value;
    match v {
        Value::Number(n) if n.is_f64() => fmt17(n.as_f64().unwrap_or(f64::NAN)),
        Value::Array(a) => format!("[{}]", a.iter().map(json17).collect::<Vec<_>>().join(",")),
        Value::Object(o) => {
            let mut keys: Vec<&String> = o.keys().collect();
            keys.sort();
            let fields: Vec<String> = keys.iter().map(|k| format!("{}:{}", Value::String((*k).clone()), json17(&o[*k]))).collect();
            format!("{{{}}}", fields.join(","))
        }
        other => other.to_string(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let _ = cli.seed;
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(ConfigError("--threads must be positive".into()).into());
        }
        par::set_threads(k).map_err(ConfigError)?;
    }
    if let Command::Qbar { mu, tau } = cli.command {
        return cmd_qbar(mu, tau);
    }
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let dir = cli.out.clone().or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let sink = Sink::new(dir)?;
    match cli.command {
        Command::Qbar { .. } => unreachable!(),
        Command::Construct => cmd_construct(&cfg, &sink),
        Command::Minimize => cmd_minimize(&cfg, &sink).map(|_| ()),
        Command::Ribbon => cmd_ribbon(&cfg, &sink),
        Command::GammaSweep => cmd_gamma_sweep(&cfg, &sink),
        Command::ExampleMobius => cmd_example_mobius(&cfg, &sink),
    }
}

fn cmd_qbar(mu: f64, tau: f64) -> Outcome {
    if !(mu.is_finite() && tau.is_finite()) {
        return Err(ConfigError("mu and tau must be finite".into()).into());
    }
    let gamma = qbar_via_min(mu, tau).gamma;
    println!("Q={} gamma={} dQdmu={} dQdtau={}", qbar(mu, tau), gamma, dqbar_dmu(mu, tau), dqbar_dtau(mu, tau));
    Ok(())
}

fn print_value(name: &str, v: f64) {
    println!("{name}={}", fmt17(v));
}

#[derive(Serialize)]
struct ConstructReport {
    #[serde(flatten)]
    admissibility: AdmissibilityReport,
    ell: f64,
    energy: f64,
    pieces: usize,
    planarity: f64,
}

fn cmd_construct(cfg: &RunConfig, sink: &Sink) -> Outcome {
    let bd = cfg.boundary_data()?;
    let frame = build_interpolating_frame(&bd)?;
    let fc = frame.curve()?;
    let report = ConstructReport {
        admissibility: AdmissibilityReport::of_curve(&fc, &bd, sadowsky::curveframe::ADMISSIBLE_TOL)?,
        ell: bd.ell,
        energy: sadowsky_energy(&frame.piece_profile()?),
        pieces: frame.pieces().len(),
        planarity: sadowsky::planarity_measure(&fc),
    };
    sink.write("frame.csv", |w| fc.write_csv(w))?;
    sink.json("admissibility.json", &report)?;
    println!("admissible={}", report.admissibility.ok);
    print_value("energy", report.energy);
    if !report.admissibility.ok {
        return Err(sadowsky::Error::Internal("constructed frame misses the boundary data".into()).into());
    }
    Ok(())
}

/// Solves from each configured start; keeps the converged solution of lowest
/// energy, else the first one. Errors of later starts are dropped.
fn solve(cfg: &RunConfig, bd: &BoundaryData) -> Outcome<Solution> {
    let opts = cfg.solve_options();
    let mut best: Option<Solution> = None;
    for (k, start) in cfg.solver.starts.iter().enumerate() {
        let init = match start.as_str() {
            "straight" => CurvatureProfile::constant(bd.ell, opts.n_cells, 0.0, 0.0)?,
            _ => build_interpolating_frame(bd)?.profile()?,
        };
        let sol = match minimize_sadowsky(bd, &init, &opts) {
            Ok(sol) => sol,
            Err(e) if k == 0 => return Err(e.into()),
            Err(_) => continue,
        };
        println!("start={start} energy={} converged={}", fmt17(sol.report.energy), sol.report.converged);
        best = match best {
            Some(b) if !sol.report.converged || (b.report.converged && b.report.energy <= sol.report.energy) => Some(b),
            _ => Some(sol),
        };
    }
    Ok(best.expect("first start either solves or returns"))
}

fn cmd_minimize(cfg: &RunConfig, sink: &Sink) -> Outcome<Solution> {
    let bd = cfg.boundary_data()?;
    let sol = solve(cfg, &bd)?;
    let p = &sol.profile;
    let rows: Vec<Vec<f64>> = (0..p.n_cells())
        .map(|i| {
            let (mu, tau) = p.cell_values(i);
            vec![0.5 * (p.grid()[i] + p.grid()[i + 1]), mu, tau]
        })
        .collect();
    sink.write("solution.csv", |w| write_table(w, &["t", "mu", "tau"], &rows))?;
    sink.write("curve.csv", |w| sol.curve.write_csv(w))?;
    sink.json("multipliers.json", &sol.multipliers)?;
    sink.json("report.json", &sol.report)?;
    print_value("energy", sol.report.energy);
    print_value("init_energy", sol.report.init_energy);
    print_value("planarity", sol.report.planarity);
    println!("converged={}", sol.report.converged);
    if !sol.report.converged {
        return Err(Failure::NotConverged);
    }
    Ok(sol)
}

/// The relaxed field named by `laminate.field`, on the boundary length.
fn field(cfg: &RunConfig, bd: &BoundaryData) -> Outcome<SymField> {
    let l = &cfg.laminate;
    Ok(match l.field.as_str() {
        "planar-mobius" => SymField::relaxed_of(&planar_mobius_example().piece_profile()?)?,
        "minimizer" => {
            let sol = solve(cfg, bd)?;
            if !sol.report.converged {
                return Err(Failure::NotConverged);
            }
            SymField::relaxed_of(&sol.profile)?
        }
        "constant" => SymField::constant(bd.ell, l.cells, l.m[0], l.m[1], l.m[2])?,
        "zero" => SymField::constant(bd.ell, l.cells, 0.0, 0.0, 0.0)?,
        other => return Err(ConfigError(format!("laminate: unknown field {other:?}")).into()),
    })
}

fn approximate(cfg: &RunConfig, bd: &BoundaryData, m: &SymField) -> Outcome<Approximation> {
    let l = &cfg.laminate;
    let scale = l.scale.unwrap_or(m.length() / (4 * l.n) as f64);
    let windows = l.windows.as_ref().map(|w| w.iter().map(|[a, b]| (*a, *b)).collect());
    Ok(if cfg.ribbon.clamp {
        approximate_with_windows(m, bd, l.n, scale, windows)?
    } else {
        approximate_free(m, l.n, scale)?
    })
}

fn cmd_ribbon(cfg: &RunConfig, sink: &Sink) -> Outcome {
    let bd = cfg.boundary_data()?;
    let m = field(cfg, &bd)?;
    let approx = approximate(cfg, &bd, &m)?;
    let rp = &approx.profile;
    let fc = integrate_frame(&rp.induced_profile()?, Rotation::identity(), Vector3::zeros())?;
    let emax = max_width(rp, None)?;
    print_value("eps_max", emax);
    let widths: Vec<f64> = match &cfg.ribbon.eps {
        EpsSpec::Auto(_) => AUTO_FRACTIONS.iter().map(|f| f * emax).collect(),
        EpsSpec::List(v) => v.clone(),
    };
    let resolution = (cfg.ribbon.resolution[0], cfg.ribbon.resolution[1]);
    let mut rows = Vec::new();
    for (k, &eps) in widths.iter().enumerate() {
        let mesh = build_ruled_surface(&fc, rp, eps, resolution, Exec::Parallel)?;
        if k == 0 {
            sink.write("ribbon.obj", |w| mesh.write_obj(w, cfg.output.normals))?;
            sink.write("centerline.csv", |w| mesh.write_centerline_csv(w))?;
        }
        let row = GammaRow {
            n: cfg.laminate.n,
            eps,
            j_eps: kirchhoff_energy(&mesh),
            mn_energy: mesh.centerline_energy(),
            relaxed: approx.target_energy,
        };
        println!("eps={} j_eps={}", fmt17(row.eps), fmt17(row.j_eps));
        rows.push(row);
    }
    sink.write("j_eps.csv", |w| write_gamma_csv(w, &rows))
}

fn cmd_gamma_sweep(cfg: &RunConfig, sink: &Sink) -> Outcome {
    let bd = cfg.boundary_data()?;
    let m = field(cfg, &bd)?;
    let r = &cfg.ribbon;
    let rows = verify_gamma_limit(
        &m,
        r.clamp.then_some(&bd),
        &r.sweep_n,
        &Widths::OfMax(r.sweep_fractions.clone()),
        (r.resolution[0], r.resolution[1]),
    )?;
    for row in &rows {
        println!("n={} eps={} j_eps={} relaxed_f={}", row.n, fmt17(row.eps), fmt17(row.j_eps), fmt17(row.relaxed));
    }
    sink.write("gamma.csv", |w| write_gamma_csv(w, &rows))
}

fn cmd_example_mobius(cfg: &RunConfig, sink: &Sink) -> Outcome {
    let mut cfg = cfg.clone();
    cfg.boundary = Default::default();
    cfg.laminate.field = "planar-mobius".into();
    cfg.ribbon.clamp = true;
    let g = planar_mobius_example();
    let p = g.piece_profile()?;
    print_value("example_energy", sadowsky_energy(&p));
    cmd_construct(&cfg, sink)?;
    cmd_minimize(&cfg, sink)?;
    cmd_ribbon(&cfg, sink)?;
    cmd_gamma_sweep(&cfg, sink)
}
