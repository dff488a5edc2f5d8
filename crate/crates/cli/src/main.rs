use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use netalloc::experiment::csv::{ensemble_csv, number, trace_csv};
use netalloc::experiment::oracle::{exhaustive_assignment, grid_search_power, MAX_ASSIGNMENTS, MAX_GRID_SUBCARRIERS};
use netalloc::experiment::{run_ensemble, EnsembleConfig, EnsembleRow, Method};
use netalloc::ocd::ocd_solve;
use netalloc::rates::wsmr;
use netalloc::scenario::{db_to_linear, generate_scenario, load_scenario, save_scenario};
use netalloc::subcarrier::solve_exact;
use netalloc::{Assignment, PowerMatrix, PowerMethod, RunConfig, ScenarioParams, SubcarrierMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const THREADS_VAR: &str = "NETALLOC_THREADS";

#[derive(Parser)]
#[command(name = "netalloc", version, about = "Multi-cell OFDMA max-min resource allocation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random scenario as JSON.
    Generate {
        #[command(flatten)]
        scenario: ScenarioFlags,
        #[arg(long, default_value = "scenario.json")]
        out: PathBuf,
    },
    /// Run the alternating optimization on a scenario file.
    Solve {
        scenario: PathBuf,
        #[command(flatten)]
        run: RunFlags,
        #[arg(long, default_value = "ocd")]
        method: PowerMethod,
        /// Write 0 in the elapsed_s column so output is reproducible.
        #[arg(long)]
        no_timing: bool,
        /// Trace CSV path; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ensemble over channel realizations: baseline, LR and OCD.
    Montecarlo {
        #[command(flatten)]
        scenario: ScenarioFlags,
        #[command(flatten)]
        run: RunFlags,
        #[arg(long, default_value_t = 500)]
        realizations: usize,
        /// Comma-separated per-BS budgets in watts.
        #[arg(long, value_delimiter = ',')]
        pmax_sweep: Vec<f64>,
        /// Ensemble CSV path; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare solvers against brute-force oracles on small random instances.
    Oracle {
        #[arg(long, value_enum, default_value = "assignment")]
        kind: OracleKind,
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long, default_value_t = 2)]
        users: usize,
        #[arg(long, default_value_t = 10)]
        subcarriers: usize,
        #[arg(long, default_value_t = 200)]
        grid: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleKind {
    Assignment,
    Power,
}

#[derive(Args)]
struct ScenarioFlags {
    #[arg(long, default_value_t = 3)]
    cells: usize,
    #[arg(long, default_value_t = 32)]
    subcarriers: usize,
    /// One value for every cell, or one per cell.
    #[arg(long, value_delimiter = ',', default_value = "2")]
    users_per_cell: Vec<usize>,
    /// Meters.
    #[arg(long, default_value_t = 40.0)]
    radius: f64,
    /// Watts per BS; one value or one per cell.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pmax: Vec<f64>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    gap_db: f64,
    #[arg(long, default_value_t = -60.0, allow_negative_numbers = true)]
    noise_dbw: f64,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    weights: Vec<f64>,
    #[arg(long, default_value_t = 3.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ScenarioFlags {
    fn params(&self) -> ScenarioParams {
        let per_cell = |v: &[f64]| if v.len() == 1 { vec![v[0]; self.cells] } else { v.to_vec() };
        ScenarioParams {
            num_cells: self.cells,
            num_subcarriers: self.subcarriers,
            users_per_cell: if self.users_per_cell.len() == 1 {
                vec![self.users_per_cell[0]; self.cells]
            } else {
                self.users_per_cell.clone()
            },
            cell_radius: self.radius,
            p_max: per_cell(&self.pmax),
            noise_power: db_to_linear(self.noise_dbw),
            snr_gap: db_to_linear(self.gap_db),
            weights: per_cell(&self.weights),
            pathloss_exponent: self.alpha,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct RunFlags {
    #[arg(long, default_value_t = 0.1)]
    psi: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long, default_value_t = 10)]
    rounds: usize,
    #[arg(long, default_value = "exact")]
    subcarrier: SubcarrierMode,
}

impl RunFlags {
    fn config(&self, method: PowerMethod) -> RunConfig {
        RunConfig {
            psi: self.psi,
            max_iter: self.max_iter,
            max_rounds: self.rounds,
            power_method: method,
            subcarrier_mode: self.subcarrier,
            ..RunConfig::default()
        }
    }
}

/// Exit code 2: bad input. Exit code 1: a solver gave up.
enum Failure {
    Usage(String),
    Solver(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Self::Usage(e.to_string())
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", p.display()))),
        None => io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Usage(format!("cannot write to stdout: {e}"))),
    }
}

fn generate(flags: &ScenarioFlags, out: &Path) -> Result<(), Failure> {
    let scenario = generate_scenario(&flags.params())?;
    save_scenario(&scenario, out)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn solve(path: &Path, cfg: RunConfig, timing: bool, out: Option<&Path>) -> Result<(), Failure> {
    cfg.validate()?;
    let scenario = load_scenario(path)?;
    match netalloc::run(&scenario, &cfg) {
        Ok(outcome) => {
            write_output(out, &trace_csv(&outcome.trace, timing))?;
            eprintln!(
                "method={} wsmr={} converged={} iterations={} rounds={}",
                cfg.power_method,
                number(outcome.wsmr),
                outcome.converged,
                outcome.trace.power_iterations(),
                outcome.rounds
            );
            Ok(())
        }
        Err(abort) => {
            write_output(out, &trace_csv(&abort.trace, timing))?;
            Err(Failure::Solver(abort.to_string()))
        }
    }
}

fn mean_line(label: &str, rows: &[&EnsembleRow]) -> String {
    let mut parts = vec![label.to_string()];
    for method in [Method::Init, Method::Lr, Method::Ocd] {
        let vals: Vec<f64> = rows.iter().filter(|r| r.method == method && r.wsmr.is_finite()).map(|r| r.wsmr).collect();
        let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
        let conv = rows.iter().filter(|r| r.method == method && r.converged).count();
        parts.push(format!("{method}={} ({conv} converged)", number(mean)));
    }
    parts.join(" ")
}

fn montecarlo(cfg: EnsembleConfig, out: Option<&Path>) -> Result<(), Failure> {
    cfg.run.validate()?;
    cfg.params.validate()?;
    if cfg.pmax_sweep.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
        return Err(Failure::Usage("--pmax-sweep values must be positive".into()));
    }
    let ensemble = run_ensemble(&cfg);
    let sweep = !cfg.pmax_sweep.is_empty();
    write_output(out, &ensemble_csv(&ensemble.rows, sweep))?;
    if sweep {
        for &b in &cfg.pmax_sweep {
            let rows: Vec<&EnsembleRow> = ensemble.rows.iter().filter(|r| r.p_max == b).collect();
            eprintln!("{}", mean_line(&format!("p_max={}", number(b)), &rows));
        }
    } else {
        let rows: Vec<&EnsembleRow> = ensemble.rows.iter().collect();
        eprintln!("{}", mean_line(&format!("realizations={}", cfg.realizations), &rows));
    }
    Ok(())
}

fn oracle_assignment(count: usize, users: usize, subcarriers: usize, seed: u64) -> Result<(), Failure> {
    let size = (users as f64).powi(subcarriers as i32);
    if users == 0 || subcarriers == 0 || size > MAX_ASSIGNMENTS as f64 {
        return Err(Failure::Usage(format!(
            "assignment oracle needs 1 <= users^subcarriers <= {MAX_ASSIGNMENTS} (got {users}^{subcarriers})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let table: Vec<Vec<f64>> = (0..users).map(|_| (0..subcarriers).map(|_| 5.0 * rng.gen::<f64>()).collect()).collect();
        let exact = solve_exact(&table)?;
        let brute = exhaustive_assignment(&table)?;
        worst = worst.max((exact.min_rate - brute.min_rate).abs() / brute.min_rate.abs().max(f64::MIN_POSITIVE));
    }
    println!("assignment tables={count} users={users} subcarriers={subcarriers} max_relative_gap={}", number(worst));
    Ok(())
}

fn oracle_power(count: usize, users: usize, subcarriers: usize, grid: usize, seed: u64) -> Result<(), Failure> {
    if subcarriers == 0 || subcarriers > MAX_GRID_SUBCARRIERS || grid < 2 {
        return Err(Failure::Usage(format!(
            "power oracle needs 1 <= subcarriers <= {MAX_GRID_SUBCARRIERS} and grid >= 2 (got {subcarriers}, {grid})"
        )));
    }
    let mut worst = 0.0f64;
    for i in 0..count as u64 {
        let params = ScenarioParams::uniform(1, subcarriers, users, 1.0).with_seed(seed.wrapping_add(i));
        let s = generate_scenario(&params)?;
        let a = Assignment::even(&s);
        let out = ocd_solve(&s, &a, &PowerMatrix::uniform(&s), 1e-10, 500).map_err(|e| Failure::Solver(e.to_string()))?;
        let got = wsmr(&s, &out.power, &a).value;
        let best = grid_search_power(&s, &a, grid)?.value;
        worst = worst.max((best - got) / best.abs().max(f64::MIN_POSITIVE));
    }
    println!("power instances={count} users={users} subcarriers={subcarriers} grid={grid} max_relative_gap={}", number(worst));
    Ok(())
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("{THREADS_VAR} must be a positive integer (got {raw:?})")))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Generate { scenario, out } => generate(&scenario, &out),
        Command::Solve {
            scenario,
            run,
            method,
            no_timing,
            out,
        } => solve(&scenario, run.config(method), !no_timing, out.as_deref()),
        Command::Montecarlo {
            scenario,
            run,
            realizations,
            pmax_sweep,
            out,
        } => montecarlo(
            EnsembleConfig {
                params: scenario.params(),
                realizations,
                run: run.config(PowerMethod::Ocd),
                pmax_sweep,
            },
            out.as_deref(),
        ),
        Command::Oracle {
            kind,
            count,
            users,
            subcarriers,
            grid,
            seed,
        } => match kind {
            OracleKind::Assignment => oracle_assignment(count, users, subcarriers, seed),
            OracleKind::Power => oracle_power(count, users, subcarriers, grid, seed),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
