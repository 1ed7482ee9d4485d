//! Command-line front end.
//!
//! Results go to stdout as `key=value` lines (plans as `t x_t tier I_t`
//! rows followed by `total N`); diagnostics go to stderr.
//!
//! Exit codes: 0 success, 1 infeasible instance, 2 verification mismatch,
//! 3 bad input.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::harness::{benchmark_scaling, case_instance, differential_test, generate_instance, GenConfig};
use crate::model::{parse_instance, render_instance, validate_instance, Fuel, Plan, ValidatedInstance};
use crate::oracle::solve_naive;
use crate::solver::{query_dp, solve, SolveOptions, SolverError, SolverState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 1;
pub const EXIT_MISMATCH: i32 = 2;
pub const EXIT_BAD_INPUT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "lotsize", version, about = "Capacitated lot sizing with an all-units discount")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve an instance file.
    Solve {
        #[arg(long = "in")]
        input: PathBuf,
        /// Print the order plan.
        #[arg(long)]
        plan: bool,
        /// Write per-station statistics as CSV.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Compare the solver with the reference DP on random instances.
    Verify {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: usize,
        /// Largest horizon drawn.
        #[arg(long)]
        n: usize,
        /// Write the per-case report as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write the reference table of the first case as CSV.
        #[arg(long)]
        oracle_csv: Option<PathBuf>,
    },
    /// Write a random instance file.
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the solver on growing horizons.
    Bench {
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Evaluate dp(station, fuel) for any fuel up to the capacity.
    Query {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        station: usize,
        #[arg(long)]
        fuel: Fuel,
    },
}

struct Failure(i32, String);

impl Failure {
    fn bad(msg: impl ToString) -> Failure {
        Failure(EXIT_BAD_INPUT, msg.to_string())
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Failure {
        let code = match e {
            SolverError::Infeasible { .. } => EXIT_INFEASIBLE,
            SolverError::QueryOutOfRange { .. } => EXIT_BAD_INPUT,
            SolverError::LogCorrupt(_) | SolverError::Audit { .. } => EXIT_MISMATCH,
        };
        Failure(code, e.to_string())
    }
}

pub fn run_cli<I: IntoIterator<Item = OsString>>(argv: I) -> i32 {
    run_cli_with(argv, &mut io::stdout().lock())
}

/// Like [`run_cli`], writing results to `out`.
pub fn run_cli_with<I: IntoIterator<Item = OsString>>(argv: I, out: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_BAD_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            code
        }
    }
}

fn read_instance(path: &Path) -> Result<ValidatedInstance, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::bad(format!("{}: {e}", path.display())))?;
    let raw = parse_instance(&text).map_err(Failure::bad)?;
    validate_instance(raw).map_err(Failure::bad)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::bad(format!("{}: {e}", path.display())))
}

fn io_err(e: impl ToString) -> Failure {
    Failure::bad(e)
}

fn write_plan(out: &mut dyn Write, inst: &ValidatedInstance, plan: &Plan) -> io::Result<()> {
    for (t, (&x, &inv)) in plan.orders.iter().zip(&plan.inventory).enumerate() {
        let tier = match x {
            0 => "none",
            x if x >= inst.q() => "p2",
            _ => "p1",
        };
        writeln!(out, "{} {x} {tier} {inv}", t + 1)?;
    }
    writeln!(out, "total {}", plan.total)
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<i32, Failure> {
    match cmd {
        Command::Solve { input, plan, stats } => {
            let inst = read_instance(&input)?;
            let res = solve(&inst, plan)?;
            match &res.plan {
                Some(p) => write_plan(out, &inst, p).map_err(io_err)?,
                None => writeln!(out, "total={}", res.total).map_err(io_err)?,
            }
            if let Some(path) = stats {
                res.stats.write_csv(create(&path)?).map_err(io_err)?;
            }
            Ok(EXIT_OK)
        }
        Command::Verify {
            seed,
            count,
            n,
            csv,
            oracle_csv,
        } => {
            if n == 0 {
                return Err(Failure::bad("--n must be positive"));
            }
            let cfg = GenConfig::small(seed, n);
            let report = differential_test(&cfg, count);
            if let Some(path) = csv {
                report.write_csv(create(&path)?).map_err(io_err)?;
            }
            if let Some(path) = oracle_csv {
                let (_, inst) = case_instance(&cfg, 0);
                let table = solve_naive(&inst).map_err(Failure::bad)?;
                table.write_csv(create(&path)?).map_err(io_err)?;
            }
            write!(out, "{}", report.summary()).map_err(io_err)?;
            eprint!("{}", report.failure_dumps());
            Ok(if report.passed() { EXIT_OK } else { EXIT_MISMATCH })
        }
        Command::Gen { seed, n, out: path } => {
            if n == 0 {
                return Err(Failure::bad("--n must be positive"));
            }
            let inst = generate_instance(&GenConfig::small(seed, n));
            fs::write(&path, render_instance(inst.raw())).map_err(|e| Failure::bad(format!("{}: {e}", path.display())))?;
            writeln!(out, "wrote={}", path.display()).map_err(io_err)?;
            Ok(EXIT_OK)
        }
        Command::Bench {
            sizes,
            out: path,
            reps,
            seed,
        } => {
            if sizes.is_empty() || sizes.contains(&0) || sizes.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Failure::bad("--sizes must be positive and ascending"));
            }
            let report = benchmark_scaling(&sizes, reps, seed);
            report.write_csv(create(&path)?).map_err(io_err)?;
            for r in &report.rows {
                writeln!(out, "median_us_{}={}", r.n, r.median_us).map_err(io_err)?;
            }
            if let Some(m) = report.median_ratio() {
                writeln!(out, "median_ratio={m:.3}").map_err(io_err)?;
            }
            writeln!(out, "edits_per_n={:.3}", report.edit_constant()).map_err(io_err)?;
            Ok(EXIT_OK)
        }
        Command::Query { input, station, fuel } => {
            let inst = read_instance(&input)?;
            if station == 0 || station > inst.n() {
                return Err(SolverError::QueryOutOfRange { i: station, x: fuel }.into());
            }
            let mut st = SolverState::new(&inst, &SolveOptions::default());
            while st.station() < station {
                st.build_station()?;
            }
            let v = query_dp(&st, station, fuel)?;
            writeln!(out, "value={v}").map_err(io_err)?;
            Ok(EXIT_OK)
        }
    }
}
