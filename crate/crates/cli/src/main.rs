use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sweeps_cli::commands::run;
use sweeps_cli::config::{ArrivalChoice, ConventionChoice, IntervalChoice, Method, Mode, RunConfig};
use sweeps_cli::CliError;

/// Competing selective sweeps: Moran-model simulation and large-population
/// theory.
#[derive(Parser, Debug)]
#[command(name = "sweeps", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte Carlo estimate of the fixation probability at each grid point.
    Simulate(RunArgs),
    /// Analytical estimate at each grid point.
    Theory(RunArgs),
    /// Simulation against theory, with a z-score per point and a verdict.
    Compare(RunArgs),
    /// Fixation of 11 across population sizes at fixed rho.
    Figure1(RunArgs),
    /// Fixation of 11 across population sizes at fixed rho * 2N, with theory.
    Figure3a(RunArgs),
    /// Fixation of 11 across rho * 2N, with theory.
    Figure3b(RunArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Auto,
    Thm31,
    Case1b,
    #[value(alias = "moderate_n")]
    ModerateN,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ConventionArg {
    #[value(alias = "large_n")]
    LargeN,
    #[value(alias = "finite_n")]
    FiniteN,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum IntervalArg {
    Wilson,
    Normal,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ArrivalArg {
    #[value(name = "in00", alias = "in_00")]
    In00,
    #[value(name = "in01", alias = "in_01")]
    In01,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Population size 2N (replaces any 2N grid).
    #[arg(long)]
    two_n: Option<u64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Recombination rate.
    #[arg(long, conflicts_with = "rho_2n")]
    rho: Option<f64>,
    /// Recombination rate times 2N (replaces any rho * 2N grid).
    #[arg(long)]
    rho_2n: Option<f64>,
    /// Arrival time: X01 = (2N)^-zeta when the second mutation appears.
    #[arg(long, conflicts_with = "u")]
    zeta: Option<f64>,
    /// Number of type-01 individuals when the second mutation appears.
    #[arg(long)]
    u: Option<u64>,
    /// Comma-separated population sizes.
    #[arg(long, value_delimiter = ',')]
    two_n_grid: Option<Vec<u64>>,
    /// Comma-separated rho * 2N values.
    #[arg(long, value_delimiter = ',')]
    rho_2n_grid: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "SWEEPS_THREADS")]
    threads: Option<usize>,
    /// Output CSV (default: standard output).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Half-width of the normal interval in standard errors; also the
    /// Wilson z.
    #[arg(long)]
    ci_mult: Option<f64>,
    #[arg(long, value_enum)]
    interval: Option<IntervalArg>,
    /// Absorbing (true) or verbatim (false) threshold row in the finite-N
    /// forward equation.
    #[arg(long, action = clap::ArgAction::Set)]
    absorbing_delta11: Option<bool>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Shorthand for `--method moderate-n`.
    #[arg(long, conflicts_with = "method")]
    moderate_n: bool,
    #[arg(long, value_enum)]
    convention: Option<ConventionArg>,
    #[arg(long, value_enum)]
    arrival: Option<ArrivalArg>,
    /// Haplotype whose fixation is estimated.
    #[arg(long)]
    target: Option<String>,
    /// compare: read simulation rows from this CSV.
    #[arg(long, value_name = "PATH")]
    sim_csv: Option<PathBuf>,
    /// compare: read theory rows from this CSV.
    #[arg(long, value_name = "PATH")]
    theory_csv: Option<PathBuf>,
    /// compare: largest |z| that passes.
    #[arg(long)]
    z_limit: Option<f64>,
    /// Write 0 for wall_time_s so repeated runs are byte-identical.
    #[arg(long)]
    no_timing: bool,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long)]
    print_config: bool,
}

impl RunArgs {
    fn resolve(&self, mode: Mode) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(mode, path)?,
            None => RunConfig::defaults(mode),
        };
        if let Some(v) = self.two_n {
            c.params.two_n = v;
            c.two_n_grid = None;
        }
        if let Some(v) = self.sigma {
            c.params.sigma = v;
        }
        if let Some(v) = self.gamma {
            c.params.gamma = v;
        }
        if let Some(v) = self.rho {
            c.params.rho = Some(v);
            c.params.rho_2n = None;
            c.rho_2n_grid = None;
        }
        if let Some(v) = self.rho_2n {
            c.params.rho_2n = Some(v);
            c.params.rho = None;
            c.rho_2n_grid = None;
        }
        if let Some(v) = self.zeta {
            c.zeta = Some(v);
            c.u_count = None;
        }
        if let Some(v) = self.u {
            c.u_count = Some(v);
            c.zeta = None;
        }
        if let Some(v) = &self.two_n_grid {
            c.two_n_grid = Some(v.clone());
        }
        if let Some(v) = &self.rho_2n_grid {
            c.rho_2n_grid = Some(v.clone());
        }
        if let Some(v) = self.trials {
            c.n_trials = v;
        }
        if let Some(v) = self.seed {
            c.master_seed = v;
        }
        if let Some(v) = self.threads {
            c.threads = Some(v);
        }
        if let Some(v) = &self.out {
            c.output_path = Some(v.clone());
        }
        if let Some(v) = self.ci_mult {
            c.ci_multiplier = v;
        }
        if let Some(v) = self.interval {
            c.interval = match v {
                IntervalArg::Wilson => IntervalChoice::Wilson,
                IntervalArg::Normal => IntervalChoice::Normal,
            };
        }
        if let Some(v) = self.absorbing_delta11 {
            c.absorbing_delta11 = v;
        }
        if let Some(v) = self.method {
            c.method = match v {
                MethodArg::Auto => Method::Auto,
                MethodArg::Thm31 => Method::Thm31,
                MethodArg::Case1b => Method::Case1b,
                MethodArg::ModerateN => Method::ModerateN,
            };
        }
        if self.moderate_n {
            c.method = Method::ModerateN;
        }
        if let Some(v) = self.convention {
            c.convention = match v {
                ConventionArg::LargeN => ConventionChoice::LargeN,
                ConventionArg::FiniteN => ConventionChoice::FiniteN,
            };
        }
        if let Some(v) = self.arrival {
            c.arrival = match v {
                ArrivalArg::In00 => ArrivalChoice::In00,
                ArrivalArg::In01 => ArrivalChoice::In01,
            };
        }
        if let Some(v) = &self.target {
            c.target = v.clone();
        }
        if let Some(v) = &self.sim_csv {
            c.sim_csv = Some(v.clone());
        }
        if let Some(v) = &self.theory_csv {
            c.theory_csv = Some(v.clone());
        }
        if let Some(v) = self.z_limit {
            c.z_limit = v;
        }
        if self.no_timing {
            c.record_timing = false;
        }
        Ok(c)
    }
}

fn execute(mode: Mode, args: &RunArgs) -> Result<(), CliError> {
    let config = args.resolve(mode)?;
    if args.print_config {
        config.validate()?;
        println!("{}", config.to_json());
        return Ok(());
    }
    let output = run(&config)?;
    for w in &output.warnings {
        eprintln!("warning: {w}");
    }
    match &config.output_path {
        Some(path) => {
            let file =
                File::create(path).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))?;
            let mut w = BufWriter::new(file);
            output.table.write(&mut w)?;
            w.flush().map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
        }
        None => output.table.write(io::stdout().lock())?,
    }
    if let Some(v) = &output.verdict {
        eprintln!("verdict {v}");
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let (mode, args) = match &cli.command {
        Command::Simulate(a) => (Mode::Simulate, a),
        Command::Theory(a) => (Mode::Theory, a),
        Command::Compare(a) => (Mode::Compare, a),
        Command::Figure1(a) => (Mode::Figure1, a),
        Command::Figure3a(a) => (Mode::Figure3a, a),
        Command::Figure3b(a) => (Mode::Figure3b, a),
    };
    if let Err(e) = execute(mode, args) {
        eprintln!("sweeps {}: {e}", mode.label());
        std::process::exit(e.exit_code());
    }
}
