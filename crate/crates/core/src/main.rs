use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use radau_ocp::harness::{
    convergence_study, fit_slope, plot_script, write_convergence_csv, write_nodes_table,
    write_properties_csv, write_solution_csv, ErrorKind,
};
use radau_ocp::matrices::property_table;
use radau_ocp::problems::lookup;
use radau_ocp::{compute_lgr_scheme, solve, Error, Execution, SolverConfig};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;

const PROPERTIES_RANGE: (usize, usize, usize) = (25, 300, 25);
const CONVERGE_RANGE: (usize, usize, usize) = (4, 24, 1);

#[derive(Parser)]
#[command(
    name = "radau-ocp",
    version,
    about = "Radau pseudospectral optimal control experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the collocation nodes and quadrature weights.
    Nodes {
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
    },
    /// Matrix norms of the inverted differentiation matrices as CSV.
    Properties {
        /// Explicit list of N; overrides the range flags (default 25..300 step 25).
        ns: Vec<usize>,
        #[command(flatten)]
        range: Range,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        parallel: bool,
    },
    /// Solve one problem and print a summary.
    Solve {
        name: String,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Fill control and costate at the initial node.
        #[arg(long)]
        extrapolate_initial: bool,
        #[arg(long)]
        allow_failure: bool,
    },
    /// Error against the exact solution over a range of N, with slope fits.
    Converge {
        name: String,
        #[command(flatten)]
        range: Range,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write a gnuplot script for the CSV.
        #[arg(long, requires = "csv")]
        plot: Option<PathBuf>,
        /// Independent cold starts instead of a warm-start chain.
        #[arg(long)]
        parallel: bool,
        #[arg(long)]
        allow_failure: bool,
    },
}

#[derive(Args)]
struct Range {
    #[arg(long)]
    n_min: Option<usize>,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    step: Option<usize>,
}

impl Range {
    fn values(&self, defaults: (usize, usize, usize)) -> Result<Vec<usize>, String> {
        let lo = self.n_min.unwrap_or(defaults.0);
        let hi = self.n_max.unwrap_or(defaults.1);
        let step = self.step.unwrap_or(defaults.2);
        if lo < 1 || step < 1 || hi < lo {
            return Err(format!("invalid range: n-min {lo} n-max {hi} step {step}"));
        }
        Ok((lo..=hi).step_by(step).collect())
    }
}

#[derive(Args)]
struct SolverArgs {
    /// Residual sup-norm tolerance.
    #[arg(long, default_value_t = 1e-11)]
    tol: f64,
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            max_iters: self.max_iters,
            residual_tol: self.tol,
            ..SolverConfig::default()
        }
    }
}

enum Failure {
    Usage(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::UnknownProblem(_) | Error::InvalidConfig(_) | Error::ZeroCollocationPoints => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Run(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

fn output(path: &Option<PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn execution(parallel: bool) -> Execution {
    if parallel {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Nodes { n } => {
            let scheme = compute_lgr_scheme(n as usize)?;
            let mut out = io::stdout().lock();
            write_nodes_table(&mut out, &scheme)?;
        }
        Command::Properties {
            ns,
            range,
            csv,
            parallel,
        } => {
            let ns = if ns.is_empty() {
                range.values(PROPERTIES_RANGE).map_err(Failure::Usage)?
            } else {
                ns
            };
            if ns.contains(&0) {
                return Err(Failure::Usage("N must be at least 1".into()));
            }
            let reports = property_table(&ns, execution(parallel));
            let mut out = output(&csv)?;
            write_properties_csv(&mut out, &ns, &reports)?;
            out.flush()?;
        }
        Command::Solve {
            name,
            n,
            solver,
            csv,
            extrapolate_initial,
            allow_failure,
        } => {
            let (p, _) = lookup(&name)?;
            let report = solve(&p, n as usize, &solver.config())?;
            println!("problem      {name}");
            println!("N            {n}");
            println!("converged    {}", report.converged);
            println!("iterations   {}", report.iterations);
            println!("residual     {:.3e}", report.final_residual);
            println!("second order {}", report.hessian_spd);
            println!("blockwise PD {}", report.blocks_spd);
            if let Some(path) = &csv {
                let mut out = BufWriter::new(File::create(path)?);
                write_solution_csv(&mut out, &p, &report, extrapolate_initial)?;
                out.flush()?;
            }
            if !report.converged && !allow_failure {
                return Err(Failure::Run(format!(
                    "no convergence after {} iterations (residual {:.3e})",
                    report.iterations, report.final_residual
                )));
            }
        }
        Command::Converge {
            name,
            range,
            solver,
            csv,
            plot,
            parallel,
            allow_failure,
        } => {
            let ns = range.values(CONVERGE_RANGE).map_err(Failure::Usage)?;
            let (p, exact) = lookup(&name)?;
            let exact =
                exact.ok_or_else(|| Failure::Usage(format!("{name} has no exact solution")))?;
            let rows = convergence_study(&p, &exact, &ns, &solver.config(), execution(parallel));

            let mut out = output(&csv)?;
            write_convergence_csv(&mut out, &rows)?;
            out.flush()?;
            drop(out);

            // keep stdout pure CSV when no file was given
            let mut summary: Box<dyn Write> = if csv.is_some() {
                Box::new(io::stdout().lock())
            } else {
                Box::new(io::stderr().lock())
            };
            for kind in ErrorKind::ALL {
                match fit_slope(&rows, kind) {
                    Some(f) => writeln!(
                        summary,
                        "{:<8} alpha {:.4}  c {:.4}  r^2 {:.4}  ({} rows)",
                        kind.name(),
                        f.alpha,
                        f.c,
                        f.r_squared,
                        f.points
                    )?,
                    None => writeln!(summary, "{:<8} not enough rows to fit", kind.name())?,
                }
            }
            let failed: Vec<usize> = rows.iter().filter(|r| !r.converged).map(|r| r.n).collect();
            if !failed.is_empty() {
                writeln!(summary, "not converged: {failed:?}")?;
            }

            if let (Some(plot), Some(csv)) = (&plot, &csv) {
                let title = format!("{name}: sup-norm error at the nodes");
                std::fs::write(plot, plot_script(&csv.to_string_lossy(), &title))?;
            }
            if !failed.is_empty() && !allow_failure {
                return Err(Failure::Run(format!(
                    "{} solves did not converge",
                    failed.len()
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
