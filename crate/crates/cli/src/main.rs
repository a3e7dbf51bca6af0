use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use momentloop::engine::{exact_moments, MomentTable};
use momentloop::pce::BasisOptions;
use momentloop::prog::{classify, LoopClass};
use momentloop::sim::simulate;
use momentloop::transform::{pce_all, rewrite_all, PceMode, PceSiteReport};
use momentloop::{parse_program, pretty_print, Error, Program};

/// Writes to stdout, ignoring a closed pipe.
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout(), $($t)*);
    }};
}

macro_rules! outln {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

mod bench;

use bench::{BenchMeta, CompareRow};

/// Environment variable that switches PCE basis construction to compensated
/// arithmetic and raises the degree cap.
const EXTENDED_ENV: &str = "MOMENTLOOP_EXTENDED_PRECISION";

#[derive(Parser)]
#[command(name = "momentloop", version, about = "Moment analysis of probabilistic loops")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Classify a program and print the report as JSON.
    Check { file: PathBuf },
    /// Exact moments after exact rewrites.
    Exact {
        file: PathBuf,
        #[command(flatten)]
        q: Query,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Print the rewritten program instead of moments.
        #[arg(long)]
        emit_rewritten: bool,
    },
    /// Moments after replacing non-polynomial sites by their PCE.
    Approx {
        file: PathBuf,
        #[command(flatten)]
        q: Query,
        /// Expansion degree; a comma separated list runs several.
        #[arg(long, value_delimiter = ',', required = true)]
        degree: Vec<u32>,
        /// `stable` or `conditional:N`.
        #[arg(long, default_value = "stable", value_parser = parse_mode)]
        mode: PceMode,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long)]
        emit_rewritten: bool,
    },
    /// Monte Carlo estimate of the moments.
    Simulate {
        file: PathBuf,
        #[command(flatten)]
        q: Query,
        #[command(flatten)]
        s: SimArgs,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Run every applicable method on one program.
    Compare {
        file: PathBuf,
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        n: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        degree: Vec<u32>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<PceMode>,
        #[command(flatten)]
        s: SimArgs,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Run `compare` on every benchmark in a directory.
    Bench {
        #[arg(long, default_value = "benchmarks")]
        dir: PathBuf,
        #[command(flatten)]
        s: SimArgs,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

#[derive(Args)]
struct Query {
    /// Target monomial such as `x` or `x^2*y`; repeatable.
    #[arg(long = "target", required = true)]
    targets: Vec<String>,
    #[arg(long)]
    n: u64,
}

#[derive(Args, Clone, Copy)]
struct SimArgs {
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
    Text,
}

fn parse_mode(s: &str) -> Result<PceMode, String> {
    match s.split_once(':') {
        None if s == "stable" => Ok(PceMode::Stable),
        Some(("conditional", n)) => match n.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(PceMode::Conditional(n)),
            _ => Err(format!("bad iteration count `{n}`")),
        },
        _ => Err(format!("unknown mode `{s}`, expected stable or conditional:N")),
    }
}

fn basis_options() -> BasisOptions {
    let on = std::env::var(EXTENDED_ENV).is_ok_and(|v| !v.is_empty() && v != "0");
    BasisOptions { extended_precision: on }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn load(path: &Path) -> anyhow::Result<Program> {
    let src = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_program(&src)?)
}

fn targets(q: &Query) -> Vec<&str> {
    q.targets.iter().map(String::as_str).collect()
}

#[derive(Serialize)]
struct ExactReport {
    table: MomentTable,
    rewrite_ms: f64,
    engine_ms: f64,
}

#[derive(Serialize)]
struct ApproxRun {
    degree: u32,
    mode: PceMode,
    table: MomentTable,
    sites: Vec<PceSiteReport>,
    pce_ms: f64,
    engine_ms: f64,
}

/// Exact rewrites followed by the moment engine.
pub(crate) fn run_exact(p: &Program, targets: &[&str], n: u64) -> momentloop::Result<(Program, MomentTable, f64, f64)> {
    let t = Instant::now();
    let q = rewrite_all(p)?;
    let rewrite_ms = ms(t);
    let t = Instant::now();
    let table = exact_moments(&q, targets, n)?;
    Ok((q, table, rewrite_ms, ms(t)))
}

pub(crate) fn run_approx(
    p: &Program,
    targets: &[&str],
    n: u64,
    degree: u32,
    mode: PceMode,
) -> momentloop::Result<(Program, MomentTable, Vec<PceSiteReport>, f64, f64)> {
    let t = Instant::now();
    let (q, sites) = pce_all(p, &[degree], mode, basis_options())?;
    let pce_ms = ms(t);
    let t = Instant::now();
    let mut table = exact_moments(&q, targets, n)?;
    table.method = momentloop::engine::Method::Pce { degree };
    Ok((q, table, sites, pce_ms, ms(t)))
}

fn print_table(t: &MomentTable, format: Format) {
    match format {
        Format::Json => outln!("{}", t.to_json()),
        _ => out!("{}", t.to_csv()),
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("reports serialize")
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.cmd {
        Cmd::Check { file } => {
            let p = load(&file)?;
            let r = classify(&p);
            outln!("{}", json(&r));
            Ok(if r.class == LoopClass::Unsupported { ExitCode::from(3) } else { ExitCode::SUCCESS })
        }
        Cmd::Exact { file, q, format, emit_rewritten } => {
            let p = load(&file)?;
            if emit_rewritten {
                out!("{}", pretty_print(&rewrite_all(&p)?));
                return Ok(ExitCode::SUCCESS);
            }
            let (_, table, rewrite_ms, engine_ms) = run_exact(&p, &targets(&q), q.n)?;
            match format {
                Format::Csv => out!("{}", table.to_csv()),
                _ => outln!("{}", json(&ExactReport { table, rewrite_ms, engine_ms })),
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Approx { file, q, degree, mode, format, emit_rewritten } => {
            let p = load(&file)?;
            let mut runs = Vec::new();
            for d in degree {
                let (rewritten, table, sites, pce_ms, engine_ms) = run_approx(&p, &targets(&q), q.n, d, mode)?;
                if emit_rewritten {
                    out!("{}", pretty_print(&rewritten));
                    continue;
                }
                runs.push(ApproxRun { degree: d, mode, table, sites, pce_ms, engine_ms });
            }
            match format {
                _ if emit_rewritten => {}
                Format::Csv => {
                    outln!("degree,n,monomial,value,se,bound,pce_ms,engine_ms");
                    for r in &runs {
                        let se: f64 = r.sites.iter().flat_map(|s| s.se.iter()).fold(0.0, |a, b| a.max(*b));
                        let bound = r.sites.iter().map(|s| s.bound).try_fold(0.0f64, |a, b| b.map(|b| a.max(b)));
                        for row in &r.table.rows {
                            outln!(
                                "{},{},{},{:e},{:e},{},{:.3},{:.3}",
                                r.degree,
                                row.n,
                                row.monomial,
                                row.value,
                                se,
                                bound.map_or(String::new(), |b| format!("{b:e}")),
                                r.pce_ms,
                                r.engine_ms
                            );
                        }
                    }
                }
                _ => outln!("{}", json(&runs)),
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Simulate { file, q, s, format } => {
            let p = load(&file)?;
            let t = simulate(&p, q.n, s.samples, s.seed, &targets(&q))?;
            print_table(&t, format);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Compare { file, target, n, degree, mode, s, format } => {
            let mut meta = BenchMeta::read(&file)?;
            if let Some(t) = target {
                meta.target = t;
            }
            if let Some(n) = n {
                meta.n = n;
            }
            if !degree.is_empty() {
                meta.degrees = degree;
            }
            if let Some(m) = mode {
                meta.mode = m;
            }
            let row = bench::compare(&meta, s.samples, s.seed)?;
            match format {
                Format::Text => out!("{}", bench::text_table(std::slice::from_ref(&row))),
                Format::Csv => out!("{}", bench::csv_table(std::slice::from_ref(&row))),
                Format::Json => outln!("{}", json(&row)),
            }
            Ok(if row.errors.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Cmd::Bench { dir, s, out, format } => {
            let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
                .with_context(|| format!("reading {}", dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "pp"))
                .collect();
            files.sort();
            if files.is_empty() {
                bail!(Input(format!("no .pp files in {}", dir.display())));
            }
            let mut rows: Vec<CompareRow> = Vec::new();
            for f in &files {
                let meta = BenchMeta::read(f)?;
                eprintln!("running {}", meta.name);
                rows.push(bench::compare(&meta, s.samples, s.seed)?);
            }
            if let Some(path) = out {
                std::fs::write(&path, json(&rows)).with_context(|| format!("writing {}", path.display()))?;
            }
            match format {
                Format::Text => out!("{}", bench::text_table(&rows)),
                Format::Csv => out!("{}", bench::csv_table(&rows)),
                Format::Json => outln!("{}", json(&rows)),
            }
            let failed = rows.iter().any(|r| !r.errors.is_empty());
            Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
        }
    }
}

/// An input problem detected by the front end itself.
#[derive(Debug)]
pub(crate) struct Input(pub String);

impl std::fmt::Display for Input {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Input {}

/// 1 numeric failure, 2 input error, 3 unsupported construct.
pub(crate) fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse(_) | Error::Invalid(_) | Error::MissingMoment(_) | Error::DegreeTooHigh { .. } => 2,
        Error::NotAnAccumulator(_)
        | Error::ConditionsViolated(_)
        | Error::NonLinearCycle(_)
        | Error::NotProbSolvable(_)
        | Error::ClosureExplosion { .. }
        | Error::UnsupportedOrder { .. } => 3,
        Error::MomentDiverges(_)
        | Error::MgfDiverges(_)
        | Error::QuadratureNotConverged(_)
        | Error::ImaginaryResidueTooLarge(_)
        | Error::IllConditionedBasis(_)
        | Error::UnboundedSupport
        | Error::NonFiniteSample { .. } => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = match e.downcast_ref::<Error>() {
                Some(err) => exit_code(err),
                None => 2,
            };
            ExitCode::from(code)
        }
    }
}
