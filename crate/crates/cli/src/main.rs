//! `crossinv` command-line tool.
//!
//! Exit codes: 0 on success, 1 on invalid input, 2 on numerical failure or a
//! failed verification.

mod config;

use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use crossinv::covariance::build_v;
use crossinv::inverse::neumann_inverse_report;
use crossinv::sim::{self, bench_timing, inversion_residual, Case, DEFAULT_DENSE_CAP};
use crossinv::verify::{run_suite, Suite};
use crossinv::{eigenvalue_spectrum, Design, Method, SimConfig, VarianceComponents};

use config::{pick_list, FileConfig};

#[derive(Parser, Debug)]
#[command(name = "crossinv", version, about = "Inverses of crossed random-effects covariance matrices")]
struct Cli {
    /// TOML file of default flag values; command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Invert V with one method and report the residual as CSV.
    Invert(InvertArgs),
    /// Print the closed-form eigenvalues of the scaled modified covariance.
    Spectrum(SpectrumArgs),
    /// Run a Monte Carlo accuracy experiment and write per-replicate CSV.
    Simulate(SimulateArgs),
    /// Run randomized identity and inequality checks.
    Verify(VerifyArgs),
    /// Time each inversion method on one design.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Default)]
struct ThetaArgs {
    /// Row effect variance σ²_α.
    #[arg(long)]
    sa2: Option<f64>,
    /// Column effect variance σ²_β.
    #[arg(long)]
    sb2: Option<f64>,
    /// Interaction variance σ²_γ.
    #[arg(long)]
    sg2: Option<f64>,
    /// Error variance σ²_e.
    #[arg(long)]
    se2: Option<f64>,
}

/// A design from a file, a balanced size, or a sampling rule.
#[derive(Args, Debug, Default)]
struct DesignArgs {
    /// Design file: `g h` on the first line, then g lines of h cell counts.
    #[arg(long, value_name = "FILE")]
    cells: Option<PathBuf>,
    #[arg(long)]
    g: Option<usize>,
    #[arg(long)]
    h: Option<usize>,
    /// Balanced design with m observations per cell.
    #[arg(long)]
    m: Option<usize>,
    /// Cell counts uniform on lo..=hi.
    #[arg(long)]
    lo: Option<usize>,
    #[arg(long)]
    hi: Option<usize>,
    /// Cell counts uniform on m_L..=floor(m_L/(1-delta)).
    #[arg(long = "mL")]
    m_l: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    /// Seed for sampled designs.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct InvertArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[command(flatten)]
    theta: ThetaArgs,
    /// exact-dense, exact-structured, exact-sm, vcheck, vcheck-truncated, asymptotic, neumann, balanced.
    #[arg(long)]
    method: Option<String>,
    /// Neumann truncation order.
    #[arg(long)]
    r: Option<usize>,
    /// Also write the dense inverse estimate as CSV.
    #[arg(long, value_name = "FILE")]
    matrix: Option<PathBuf>,
    /// n above which residuals are computed in compressed form.
    #[arg(long)]
    dense_cap: Option<usize>,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SpectrumArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[command(flatten)]
    theta: ThetaArgs,
    /// Write CSV instead of a table.
    #[arg(long)]
    csv: bool,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// case1 (growing grid) or case2 (imbalance and truncation order).
    case: String,
    #[command(flatten)]
    theta: ThetaArgs,
    /// Grid rows; zipped with --h, a single value is broadcast.
    #[arg(long, value_delimiter = ',')]
    g: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    h: Vec<usize>,
    /// Case 1 cell-size range.
    #[arg(long)]
    lo: Option<usize>,
    #[arg(long)]
    hi: Option<usize>,
    #[arg(long = "mL", value_delimiter = ',')]
    m_l: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    delta: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    r: Vec<usize>,
    /// Replicates per setting.
    #[arg(long = "N")]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    dense_cap: Option<usize>,
    /// Record wall-clock time per replicate (output is then not reproducible).
    #[arg(long)]
    timing: bool,
    /// Write per-setting means instead of per-replicate rows.
    #[arg(long)]
    summary: bool,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// lemma1, lemma2, lemma3, lemma4, lemma5, spectral or all.
    #[arg(long)]
    suite: Option<String>,
    /// Random instances per suite.
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[command(flatten)]
    theta: ThetaArgs,
    /// Comma-separated methods; defaults to every structured method.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    #[arg(long)]
    dense_cap: Option<usize>,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Lib(crossinv::Error),
    Io(io::Error),
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Lib(e) if e.is_numerical() => 2,
            CliError::Failed(_) => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failed(m) => f.write_str(m),
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<crossinv::Error> for CliError {
    fn from(e: crossinv::Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = match &cli.config {
        Some(path) => FileConfig::load(path).map_err(CliError::Usage)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Invert(a) => invert(a, &cfg),
        Command::Spectrum(a) => spectrum(a, &cfg),
        Command::Simulate(a) => simulate(a, &cfg),
        Command::Verify(a) => verify(a, &cfg),
        Command::Bench(a) => bench(a, &cfg),
    }
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// θ from flags, then config, then the default (5, 7, 3, 4), with a note
/// naming any defaulted component.
fn resolve_theta(a: &ThetaArgs, cfg: &FileConfig) -> CliResult<(VarianceComponents, String)> {
    let base = VarianceComponents::default();
    let picks = [
        ("sa2", a.sa2.or(cfg.sa2), base.sigma2_alpha),
        ("sb2", a.sb2.or(cfg.sb2), base.sigma2_beta),
        ("sg2", a.sg2.or(cfg.sg2), base.sigma2_gamma),
        ("se2", a.se2.or(cfg.se2), base.sigma2_e),
    ];
    let v: Vec<f64> = picks.iter().map(|p| p.1.unwrap_or(p.2)).collect();
    let theta = VarianceComponents::new(v[0], v[1], v[2], v[3])?;
    let defaulted: Vec<&str> = picks.iter().filter(|p| p.1.is_none()).map(|p| p.0).collect();
    let mut note = format!("theta: sa2={} sb2={} sg2={} se2={}", v[0], v[1], v[2], v[3]);
    if defaulted.len() == 4 {
        note.push_str(" (default)");
    } else if !defaulted.is_empty() {
        note.push_str(&format!(" (default for {})", defaulted.join(", ")));
    }
    Ok((theta, note))
}

fn resolve_design(a: &DesignArgs, cfg: &FileConfig) -> CliResult<Arc<Design>> {
    let g = a.g.or(FileConfig::first(&cfg.g));
    let h = a.h.or(FileConfig::first(&cfg.h));
    let seed = a.seed.or(cfg.seed).unwrap_or(2024);
    if let Some(path) = a.cells.as_ref().or(cfg.cells.as_ref()) {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read design file {}: {e}", path.display())))?;
        let d: Design = text.parse()?;
        if g.is_some_and(|g| g != d.g()) || h.is_some_and(|h| h != d.h()) {
            return Err(CliError::Usage(format!(
                "--g/--h disagree with the {}x{} design in {}",
                d.g(),
                d.h(),
                path.display()
            )));
        }
        return Ok(Arc::new(d));
    }
    let (Some(g), Some(h)) = (g, h) else {
        return Err(CliError::Usage("pass --cells FILE, or --g and --h with a sampling rule".into()));
    };
    let d = if let Some(m) = a.m.or(cfg.m) {
        Design::balanced(g, h, m)?
    } else if let (Some(lo), Some(hi)) = (a.lo.or(cfg.lo), a.hi.or(cfg.hi)) {
        Design::sample_uniform(g, h, lo, hi, seed)?
    } else if let (Some(m_l), Some(delta)) = (a.m_l.or(FileConfig::first(&cfg.m_l)), a.delta.or(FileConfig::first(&cfg.delta))) {
        Design::sample_delta(g, h, m_l, delta, seed)?
    } else {
        return Err(CliError::Usage("no design: pass --cells, --m, --lo/--hi or --mL/--delta".into()));
    };
    Ok(Arc::new(d))
}

fn parse_method(s: &str, r: Option<usize>) -> CliResult<Method> {
    let m: Method = s.parse()?;
    match (m, r) {
        (Method::Neumann(_), Some(r)) => Ok(Method::Neumann(r)),
        (_, Some(_)) => Err(CliError::Usage(format!("--r applies to neumann only, not {}", m.name()))),
        (m, None) => Ok(m),
    }
}

fn invert(a: InvertArgs, cfg: &FileConfig) -> CliResult<()> {
    let design = resolve_design(&a.design, cfg)?;
    let (theta, note) = resolve_theta(&a.theta, cfg)?;
    let method_name = a.method.or_else(|| cfg.method.clone()).unwrap_or_else(|| "exact-structured".into());
    let r = a.r.or(FileConfig::first(&cfg.r));
    let method = parse_method(&method_name, r)?;
    let dense_cap = a.dense_cap.or(cfg.dense_cap).unwrap_or(DEFAULT_DENSE_CAP);
    eprintln!("# {note}");
    if let Method::Neumann(r) = method {
        if neumann_inverse_report(&design, &theta, r)?.outside_theorem_hypothesis {
            eprintln!("# delta = {} >= 0.5: no error bound for the Neumann series", design.delta());
        }
    }

    let estimate = method.compute(&design, &theta)?;
    let v = build_v(&design, &theta)?;
    let res = inversion_residual(&v, &estimate, dense_cap)?;

    if let Some(path) = &a.matrix {
        let dense = estimate.to_dense();
        let mut w = BufWriter::new(File::create(path)?);
        for row in dense.to_row_major().chunks(dense.cols()) {
            let line: Vec<String> = row.iter().map(f64::to_string).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        w.flush()?;
    }

    let mut w = output(a.out.as_deref().or(cfg.out.as_deref()))?;
    writeln!(w, "method,g,h,n,realized_delta,air,max_resid")?;
    writeln!(
        w,
        "{},{},{},{},{},{:e},{:e}",
        method,
        design.g(),
        design.h(),
        design.n(),
        design.delta(),
        res.air,
        res.max_resid
    )?;
    w.flush()?;
    Ok(())
}

fn spectrum(a: SpectrumArgs, cfg: &FileConfig) -> CliResult<()> {
    let design = resolve_design(&a.design, cfg)?;
    let (theta, note) = resolve_theta(&a.theta, cfg)?;
    let s = eigenvalue_spectrum(&design, &theta)?;
    let rows = [
        ("lambda0", s.lambda0, s.mult0),
        ("lambda7", s.lambda7, s.mult7),
        ("lambda3", s.lambda3, s.mult3),
        ("lambda5", s.lambda5, s.mult5),
        ("lambda1", s.lambda1, s.mult1),
    ];
    let mut w = output(a.out.as_deref().or(cfg.out.as_deref()))?;
    if a.csv {
        eprintln!("# {note}");
        writeln!(w, "eigenvalue,value,multiplicity")?;
        for (name, v, k) in rows {
            writeln!(w, "{name},{v},{k}")?;
        }
    } else {
        writeln!(w, "# {note}")?;
        writeln!(w, "# design: g={} h={} n={} m_U={}", design.g(), design.h(), design.n(), design.m_max())?;
        writeln!(w, "{:<10} {:>16} {:>12}", "eigenvalue", "value", "multiplicity")?;
        for (name, v, k) in rows {
            writeln!(w, "{name:<10} {v:>16} {k:>12}")?;
        }
    }
    w.flush()?;
    Ok(())
}

fn simulate(a: SimulateArgs, cfg: &FileConfig) -> CliResult<()> {
    let case: Case = a.case.parse()?;
    let mut sc = SimConfig::for_case(case);
    let (theta, note) = resolve_theta(&a.theta, cfg)?;
    sc.theta = theta;

    let gs = pick_list(&a.g, &cfg.g);
    let hs = pick_list(&a.h, &cfg.h);
    match (gs.len(), hs.len()) {
        (0, 0) => {}
        (0, _) | (_, 0) => return Err(CliError::Usage("--g and --h must be given together".into())),
        (x, y) if x == y => sc.grid = gs.into_iter().zip(hs).collect(),
        (1, _) => sc.grid = hs.into_iter().map(|h| (gs[0], h)).collect(),
        (_, 1) => sc.grid = gs.into_iter().map(|g| (g, hs[0])).collect(),
        (x, y) => return Err(CliError::Usage(format!("--g has {x} values but --h has {y}"))),
    }
    if let Some(lo) = a.lo.or(cfg.lo) {
        sc.cell_range.0 = lo;
    }
    if let Some(hi) = a.hi.or(cfg.hi) {
        sc.cell_range.1 = hi;
    }
    let m_l = pick_list(&a.m_l, &cfg.m_l);
    let deltas = pick_list(&a.delta, &cfg.delta);
    let r = pick_list(&a.r, &cfg.r);
    if case == Case::Case1 && !(m_l.is_empty() && deltas.is_empty() && r.is_empty()) {
        return Err(CliError::Usage("--mL, --delta and --r apply to case2 only".into()));
    }
    if !m_l.is_empty() {
        sc.m_l = m_l;
    }
    if !deltas.is_empty() {
        sc.deltas = deltas;
    }
    if !r.is_empty() {
        sc.r = r;
    }
    if let Some(n) = a.replicates.or(cfg.replicates) {
        sc.replicates = n;
    }
    if let Some(seed) = a.seed.or(cfg.seed) {
        sc.seed = seed;
    }
    if let Some(m) = a.method.as_ref().or(cfg.method.as_ref()) {
        sc.method = m.parse()?;
    }
    if let Some(cap) = a.dense_cap.or(cfg.dense_cap) {
        sc.dense_cap = cap;
    }
    sc.threads = a.threads.or(cfg.threads);
    sc.record_timing = a.timing;
    sc.validate()?;
    eprintln!("# {note}");

    let report = sim::run(&sc)?;
    let mut w = output(a.out.as_deref().or(cfg.out.as_deref()))?;
    if a.summary {
        writeln!(w, "case,g,h,m_L,delta_target,r,method,replicates,mean_air,sd_air,mean_realized_delta")?;
        for s in report.summary() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{:e},{:e},{}",
                s.case, s.g, s.h, s.m_l, s.delta_target, s.r, s.method, s.replicates, s.mean_air, s.sd_air,
                s.mean_realized_delta
            )?;
        }
    } else {
        report.write_csv(&mut w)?;
    }
    w.flush()?;
    Ok(())
}

fn verify(a: VerifyArgs, cfg: &FileConfig) -> CliResult<()> {
    let name = a.suite.or_else(|| cfg.suite.clone()).unwrap_or_else(|| "all".into());
    let suites = Suite::parse_list(&name)?;
    let instances = a.instances.or(cfg.instances).unwrap_or(50);
    if instances == 0 {
        return Err(CliError::Usage("--instances must be positive".into()));
    }
    let seed = a.seed.or(cfg.seed).unwrap_or(1);
    let mut failed = Vec::new();
    let mut out = io::stdout().lock();
    for suite in suites {
        let outcome = run_suite(suite, instances, seed)?;
        writeln!(out, "{outcome}")?;
        if !outcome.passed {
            failed.push(suite.name());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("failed suites: {}", failed.join(", "))))
    }
}

fn bench(a: BenchArgs, cfg: &FileConfig) -> CliResult<()> {
    let design = resolve_design(&a.design, cfg)?;
    let (theta, note) = resolve_theta(&a.theta, cfg)?;
    let names = pick_list(&a.methods, &cfg.methods);
    let methods = if names.is_empty() {
        vec![
            Method::ExactStructured,
            Method::Vcheck,
            Method::VcheckTruncated,
            Method::Asymptotic,
            Method::Neumann(2),
            Method::Balanced,
        ]
    } else {
        names.iter().map(|s| s.parse()).collect::<Result<Vec<Method>, _>>()?
    };
    let dense_cap = a.dense_cap.or(cfg.dense_cap).unwrap_or(DEFAULT_DENSE_CAP);
    eprintln!("# {note}");
    eprintln!("# design: g={} h={} n={}", design.g(), design.h(), design.n());
    let entries = bench_timing(&design, &theta, &methods, dense_cap)?;
    let mut w = output(a.out.as_deref().or(cfg.out.as_deref()))?;
    writeln!(w, "method,n,elapsed_ms,max_resid")?;
    for e in entries {
        writeln!(w, "{},{},{:.3},{:e}", e.method, design.n(), e.elapsed_ms, e.max_resid)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let numerical = CliError::Lib(crossinv::Error::DegenerateUpdate { index: 3, denominator: 0.0 });
        assert_eq!(numerical.exit_code(), 2);
        assert_eq!(CliError::Lib(crossinv::Error::Singular("x".into())).exit_code(), 2);
        assert_eq!(CliError::Failed("lemma1".into()).exit_code(), 2);
        assert_eq!(CliError::Lib(crossinv::Error::InvalidVariance("x".into())).exit_code(), 1);
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
    }

    #[test]
    fn method_and_order() {
        assert_eq!(parse_method("neumann", Some(3)).unwrap(), Method::Neumann(3));
        assert_eq!(parse_method("neumann-2", None).unwrap(), Method::Neumann(2));
        assert!(parse_method("vcheck", Some(1)).is_err());
    }

    #[test]
    fn partial_theta_names_defaults() {
        let a = ThetaArgs { sa2: Some(1.0), ..Default::default() };
        let (theta, note) = resolve_theta(&a, &FileConfig::default()).unwrap();
        assert_eq!(theta.sigma2_alpha, 1.0);
        assert_eq!(theta.sigma2_e, 4.0);
        assert!(note.ends_with("(default for sb2, sg2, se2)"));
    }
}
