use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;

use nlspectral::flows::{
    gradient_flow_exact, gradient_flow_gridded, iss_exact_from_gf, iss_gridded, variational_path,
    variational_path_exact, FlowTrajectory,
};
use nlspectral::generate::{self, Disk, Peak};
use nlspectral::io;
use nlspectral::prox::extinction_time_vm;
use nlspectral::spectral::{
    decompose, filter, reconstruct, spectrum_s1, spectrum_s2, spectrum_s3, SpectralDecomposition,
    Spectrum,
};
use nlspectral::verify::{
    check_eigendecomposition, check_eigenvectors, check_orthogonality, check_parseval,
    correlation_matrix, verify_all, Check, VerificationReport,
};
use nlspectral::{Regularizer, Shape, Signal, SolverConfig};

#[derive(Parser)]
#[command(
    name = "nlspectral",
    version,
    about = "Nonlinear spectral decompositions of signals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a test signal.
    Gen(GenArgs),
    /// Run a flow and write its spectral decomposition as JSON.
    Decompose(FlowArgs),
    /// Power spectra S1, S2 and S3 as CSV.
    Spectrum(SpectrumArgs),
    /// Apply a spectral filter to a decomposition.
    Filter(FilterArgs),
    /// Reconstruct the signal from a decomposition.
    Recon(ReconArgs),
    /// Check orthogonality, eigenvector atoms and equivalence of the methods.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Spike,
    Peaks,
    Disks,
    Random,
    Constant,
}

#[derive(Args)]
struct GenArgs {
    kind: GenKind,
    /// Length of a 1D signal.
    #[arg(long, default_value_t = 128)]
    n: usize,
    /// Image size; a random or constant signal is 2D when given.
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    value: f64,
    /// JSON list of peaks `{"start", "width", "height"}` or disks
    /// `{"center": [i, j], "radius", "contrast"}`; defaults to three of each.
    #[arg(long)]
    items: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum MethodArg {
    Vm,
    Gf,
    Iss,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum ModeArg {
    Exact,
    Gridded,
}

#[derive(Args)]
struct SolverArgs {
    /// Relative duality gap at which dual solves stop.
    #[arg(long, default_value_t = 1e-10)]
    tol_gap: f64,
    #[arg(long, default_value_t = 200_000)]
    max_iters: usize,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            tol_gap: self.tol_gap,
            max_iters: self.max_iters,
            ..SolverConfig::default()
        }
    }
}

#[derive(Args)]
struct FlowArgs {
    /// Signal (CSV or PGM).
    input: PathBuf,
    /// Regularizer spec JSON; defaults to TV on the signal's shape
    /// (isotropic in 2D).
    #[arg(long)]
    reg: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "gf")]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "exact")]
    mode: ModeArg,
    /// Time step of gridded VM and GF runs; defaults to T/500 with T the
    /// extinction time.
    #[arg(long)]
    dt: Option<f64>,
    /// Step in s = 1/t of gridded ISS runs; defaults to 1/(50 T).
    #[arg(long)]
    ds: Option<f64>,
    #[arg(long, default_value_t = 1_000_000)]
    max_steps: usize,
    /// Also write the trajectory JSON here.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum SpectrumKindArg {
    S1,
    S2,
    S3,
}

#[derive(Args)]
struct SpectrumArgs {
    #[command(flatten)]
    flow: FlowArgs,
    /// Spectra to compute; with several kinds `--out` is a prefix and
    /// `_s1.csv` etc. is appended.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "s3")]
    kind: Vec<SpectrumKindArg>,
    /// Mollifier width of S1.
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Args)]
struct FilterArgs {
    /// Decomposition JSON.
    input: PathBuf,
    /// Filter spec JSON.
    #[arg(long)]
    filter: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReconArgs {
    /// Decomposition JSON.
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Figure {
    Decomp,
    Spectrum,
}

#[derive(Args)]
struct VerifyArgs {
    /// Signal (CSV or PGM); figures default to their own test signals.
    input: Option<PathBuf>,
    #[arg(long)]
    reg: Option<PathBuf>,
    /// Reproduce the data of a figure into the `--out` directory.
    #[arg(long, value_enum)]
    figure: Option<Figure>,
    /// Report JSON, or the output directory with `--figure`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gen(a) => gen(&a)?,
        Command::Decompose(a) => {
            let dec = decompose(&run_flow(&a)?)?;
            emit(a.out.as_deref(), &io::to_json(&dec)?)?;
        }
        Command::Spectrum(a) => spectrum(&a)?,
        Command::Filter(a) => {
            let dec: SpectralDecomposition = io::read_json(&a.input)?;
            let text = fs::read_to_string(&a.filter)
                .with_context(|| format!("reading {}", a.filter.display()))?;
            let spec = io::parse_filter_spec(&text)?;
            let out = filter(&dec, &spec)?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            write_signal(a.out.as_deref(), &Signal::new(out.signal, dec.shape)?)?;
        }
        Command::Recon(a) => {
            let dec: SpectralDecomposition = io::read_json(&a.input)?;
            write_signal(
                a.out.as_deref(),
                &Signal::new(reconstruct(&dec), dec.shape)?,
            )?;
        }
        Command::Verify(a) => return verify(&a),
    }
    Ok(true)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_signal(out: Option<&Path>, s: &Signal) -> Result<()> {
    match out {
        Some(p) => Ok(io::write_signal(p, s)?),
        None => emit(None, &io::signal_to_csv(s)),
    }
}

fn read_signal(path: &Path) -> Result<Signal> {
    io::read_signal(path).with_context(|| format!("reading signal {}", path.display()))
}

fn regularizer_for(reg: Option<&Path>, shape: Shape) -> Result<Regularizer> {
    let reg = match reg {
        Some(p) => io::read_operator_spec(p).with_context(|| format!("reading {}", p.display()))?,
        None => match shape {
            Shape::D1(n) => Regularizer::tv1d(n)?,
            Shape::D2(r, c) => Regularizer::tv2d_iso(r, c)?,
        },
    };
    if reg.n() != shape.len() {
        bail!(
            "regularizer acts on {} values, signal has {}",
            reg.n(),
            shape.len()
        );
    }
    Ok(reg)
}

#[derive(Serialize)]
struct GenMeta<'a> {
    disks: &'a [generate::DiskInfo],
}

fn gen(a: &GenArgs) -> Result<()> {
    let shape = match (a.rows, a.cols) {
        (Some(r), Some(c)) => Shape::D2(r, c),
        (None, None) => Shape::D1(a.n),
        _ => bail!("give both --rows and --cols"),
    };
    let items = a
        .items
        .as_ref()
        .map(|p| fs::read_to_string(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    let signal = match a.kind {
        GenKind::Spike => generate::spike_1d(a.n)?,
        GenKind::Peaks => match &items {
            Some(text) => generate::flat_peaks_1d(a.n, &serde_json::from_str::<Vec<Peak>>(text)?)?,
            None => generate::three_peaks(a.n)?,
        },
        GenKind::Disks => {
            let (signal, info) = match (&items, shape) {
                (Some(text), Shape::D2(r, c)) => {
                    generate::disks_2d(r, c, &serde_json::from_str::<Vec<Disk>>(text)?)?
                }
                (Some(_), Shape::D1(_)) => bail!("disks need --rows and --cols"),
                (None, Shape::D2(r, c)) if r == c => generate::three_disks(r)?,
                (None, Shape::D2(..)) => bail!("the default disks need a square image"),
                (None, Shape::D1(_)) => generate::three_disks(32)?,
            };
            eprintln!("{}", serde_json::to_string(&GenMeta { disks: &info })?);
            signal
        }
        GenKind::Random => generate::random(shape, a.seed)?,
        GenKind::Constant => generate::constant(shape, a.value)?,
    };
    write_signal(a.out.as_deref(), &signal)
}

fn run_flow(a: &FlowArgs) -> Result<FlowTrajectory> {
    let signal = read_signal(&a.input)?;
    let reg = regularizer_for(a.reg.as_deref(), signal.shape())?;
    let cfg = a.solver.config();
    let f = signal.values();
    let traj = flow(&reg, f, a, &cfg)?;
    if let Some(p) = &a.trajectory {
        io::write_json(p, &traj)?;
    }
    Ok(traj)
}

fn flow(
    reg: &Regularizer,
    f: &DVector<f64>,
    a: &FlowArgs,
    cfg: &SolverConfig,
) -> Result<FlowTrajectory> {
    let exact = a.mode == ModeArg::Exact;
    if exact && (a.dt.is_some() || a.ds.is_some()) {
        bail!("--dt and --ds apply to gridded runs");
    }
    if exact && !reg.is_polyhedral() {
        bail!("exact mode needs a polyhedral regularizer; use --mode gridded");
    }
    let big_t = || -> Result<f64> { Ok(extinction_time_vm(reg, f, cfg)?) };
    let traj = match (a.method, a.mode) {
        (MethodArg::Gf, ModeArg::Exact) => gradient_flow_exact(reg, f, cfg)?,
        (MethodArg::Vm, ModeArg::Exact) => variational_path_exact(reg, f, cfg)?,
        (MethodArg::Iss, ModeArg::Exact) => {
            if !reg.satisfies_ddl1() {
                bail!("exact ISS needs a diagonally dominant regularizer; use --mode gridded");
            }
            iss_exact_from_gf(&gradient_flow_exact(reg, f, cfg)?)?
        }
        (MethodArg::Gf, ModeArg::Gridded) => {
            let dt = match a.dt {
                Some(dt) => dt,
                None => default_step(big_t()?)?,
            };
            gradient_flow_gridded(reg, f, dt, a.max_steps, cfg)?
        }
        (MethodArg::Vm, ModeArg::Gridded) => {
            let t = big_t()?;
            let dt = match a.dt {
                Some(dt) => dt,
                None => default_step(t)?,
            };
            let steps = ((1.25 * t / dt).ceil() as usize).max(1);
            if steps > a.max_steps {
                bail!("{steps} grid points exceed --max-steps");
            }
            let grid: Vec<f64> = (1..=steps).map(|k| k as f64 * dt).collect();
            variational_path(reg, f, &grid, cfg)?
        }
        (MethodArg::Iss, ModeArg::Gridded) => {
            let ds = match a.ds {
                Some(ds) => ds,
                None => 1.0 / (50.0 * big_t()?.max(f64::MIN_POSITIVE)),
            };
            iss_gridded(reg, f, ds, a.max_steps, cfg)?
        }
    };
    Ok(traj)
}

fn default_step(big_t: f64) -> Result<f64> {
    if big_t == 0.0 {
        return Ok(1.0);
    }
    Ok(big_t / 500.0)
}

fn spectrum(a: &SpectrumArgs) -> Result<()> {
    let traj = run_flow(&a.flow)?;
    let dec = decompose(&traj)?;
    let mut kinds = a.kind.clone();
    kinds.dedup();
    let several = kinds.len() > 1;
    for k in kinds {
        let (spec, suffix): (Spectrum, &str) = match k {
            SpectrumKindArg::S1 => (spectrum_s1(&dec, a.sigma)?, "s1"),
            SpectrumKindArg::S2 => (spectrum_s2(&traj)?, "s2"),
            SpectrumKindArg::S3 => (spectrum_s3(&dec), "s3"),
        };
        let out = match (&a.flow.out, several) {
            (Some(p), true) => Some(suffixed(p, suffix)),
            (p, _) => p.clone(),
        };
        emit(out.as_deref(), &spec.to_csv())?;
    }
    Ok(())
}

fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(format!("_{suffix}.csv"));
    PathBuf::from(name)
}

fn verify(a: &VerifyArgs) -> Result<bool> {
    let cfg = a.solver.config();
    let input = |default: fn() -> nlspectral::Result<Signal>| -> Result<Signal> {
        match &a.input {
            Some(p) => read_signal(p),
            None => Ok(default()?),
        }
    };
    let report = match a.figure {
        None => {
            let Some(path) = &a.input else {
                bail!("verify needs an input signal or --figure");
            };
            let signal = read_signal(path)?;
            let reg = regularizer_for(a.reg.as_deref(), signal.shape())?;
            if !reg.is_polyhedral() {
                bail!("the checks need a polyhedral regularizer");
            }
            let (report, _) = verify_all(&reg, signal.values(), &cfg)?;
            if let Some(out) = &a.out {
                io::write_json(out, &report)?;
            }
            report
        }
        Some(fig) => {
            let dir = a.out.clone().unwrap_or_else(|| PathBuf::from("."));
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            let report = match fig {
                Figure::Decomp => {
                    let signal = input(|| generate::three_peaks(128))?;
                    figure_decomp(&signal, a.reg.as_deref(), &cfg, &dir)?
                }
                Figure::Spectrum => {
                    let signal = input(|| generate::three_disks(32).map(|d| d.0))?;
                    figure_spectrum(&signal, a.reg.as_deref(), &cfg, &dir)?
                }
            };
            io::write_json(&dir.join("report.json"), &report)?;
            report
        }
    };
    println!("{report}");
    Ok(report.passed())
}

fn matrix_csv(m: &[Vec<f64>]) -> String {
    m.iter()
        .map(|row| row.iter().map(f64::to_string).collect::<Vec<_>>().join(",") + "\n")
        .collect()
}

/// Exact gradient flow of the input: atoms, correlation matrix and the
/// eigenvector checks.
fn figure_decomp(
    signal: &Signal,
    reg: Option<&Path>,
    cfg: &SolverConfig,
    dir: &Path,
) -> Result<VerificationReport> {
    let reg = regularizer_for(reg, signal.shape())?;
    let gf = gradient_flow_exact(&reg, signal.values(), cfg)?;
    let dec = decompose(&gf)?;
    let mut report = check_orthogonality(&dec)?;
    report.extend(check_parseval(&dec)?);
    report.extend(check_eigenvectors(&reg, &gf)?);
    report.extend(check_eigendecomposition(&gf)?);
    report.checks.push(Check {
        name: "at_least_three_atoms".into(),
        passed: dec.atoms.len() >= 3,
        residual: dec.atoms.len() as f64,
        tolerance: 3.0,
        context: "atom count (passes when >= tolerance)".into(),
        matrix: None,
    });
    let (_, corr) = correlation_matrix(&dec);
    let rows: Vec<Vec<f64>> = (0..corr.nrows())
        .map(|i| corr.row(i).iter().copied().collect())
        .collect();
    fs::write(dir.join("correlation.csv"), matrix_csv(&rows))?;
    let mut atoms = String::from("t,norm,s3\n");
    for a in &dec.atoms {
        atoms.push_str(&format!(
            "{},{},{}\n",
            a.t,
            a.phi.norm(),
            a.phi.dot(&dec.initial)
        ));
    }
    fs::write(dir.join("atoms.csv"), atoms)?;
    let phis: Vec<Vec<f64>> = dec
        .atoms
        .iter()
        .map(|a| a.phi.iter().copied().collect())
        .collect();
    fs::write(dir.join("phi.csv"), matrix_csv(&phis))?;
    io::write_json(&dir.join("decomposition.json"), &dec)?;
    Ok(report)
}

/// Gridded gradient flow with step T/500 and the three spectra.
fn figure_spectrum(
    signal: &Signal,
    reg: Option<&Path>,
    cfg: &SolverConfig,
    dir: &Path,
) -> Result<VerificationReport> {
    let reg = regularizer_for(reg, signal.shape())?;
    let f = signal.values();
    let dt = default_step(extinction_time_vm(&reg, f, cfg)?)?;
    let traj = gradient_flow_gridded(&reg, f, dt, 1_000_000, cfg)?;
    let dec = decompose(&traj)?;
    let s1 = spectrum_s1(&dec, None)?;
    let s2 = spectrum_s2(&traj)?;
    let s3 = spectrum_s3(&dec);
    for (s, name) in [(&s1, "s1.csv"), (&s2, "s2.csv"), (&s3, "s3.csv")] {
        fs::write(dir.join(name), s.to_csv())?;
    }
    let dev = s2
        .density
        .iter()
        .zip(&s3.density)
        .map(|(a, b)| (a.1 - b.1).abs())
        .fold(0.0, f64::max);
    let scale = s3.max_value();
    Ok(VerificationReport {
        checks: vec![Check {
            name: "s2_vs_s3".into(),
            passed: dev <= 0.05 * scale,
            residual: dev,
            tolerance: 0.05 * scale,
            context: format!("{} grid points, dt = {dt}", traj.grid.len()),
            matrix: None,
        }],
    })
}
