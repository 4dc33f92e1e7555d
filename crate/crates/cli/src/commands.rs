//! Subcommand execution. Every command returns a [`Table`]; `compare` also
//! returns a verdict line.
//!
//! Column layouts (fixed):
//!
//! - point prefix: `two_n,sigma,gamma,rho,rho_2n,zeta,u_count`
//! - simulate / figure1: prefix, `arrival,target,seed,p_hat,se,ci_low,ci_high,
//!   n_trials,n_hits,n_censored,wall_time_s,events_total,status`
//! - figure3a / figure3b: the simulate columns, then `large_n,moderate_n`
//! - theory: prefix, `method,convention,value,status`
//! - compare: prefix, `p_hat,se,theory,method,abs_diff,z_score,pass`

use std::collections::HashMap;

use competing_sweeps::branching::{case1b_fixation_prob, moderate_n_fixation_prob, CaseOneBOptions, ModerateOptions};
use competing_sweeps::forward::{theorem_fixation_prob, Boundary, Convention, TheoremOptions};
use competing_sweeps::harness::{sweep, EstimateWithCI, HarnessOptions, SweepRow};
use competing_sweeps::scenarios::{InitialCondition, ScenarioConfig};
use competing_sweeps::SweepError;

use crate::config::{ConventionChoice, GridPoint, Method, Mode, RunConfig};
use crate::table::{read_records, Cell, Table};
use crate::CliError;

pub const POINT_COLUMNS: [&str; 7] = ["two_n", "sigma", "gamma", "rho", "rho_2n", "zeta", "u_count"];
pub const SIM_COLUMNS: [&str; 13] = [
    "arrival",
    "target",
    "seed",
    "p_hat",
    "se",
    "ci_low",
    "ci_high",
    "n_trials",
    "n_hits",
    "n_censored",
    "wall_time_s",
    "events_total",
    "status",
];
pub const THEORY_COLUMNS: [&str; 4] = ["method", "convention", "value", "status"];
pub const COMPARE_COLUMNS: [&str; 7] = ["p_hat", "se", "theory", "method", "abs_diff", "z_score", "pass"];

/// Result of a command.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub table: Table,
    /// Verdict line for `compare`.
    pub verdict: Option<String>,
    /// Per-row problems, reported on standard error.
    pub warnings: Vec<String>,
}

pub fn run(config: &RunConfig) -> Result<Output, CliError> {
    config.validate()?;
    match config.mode {
        Mode::Simulate | Mode::Figure1 => simulate(config, false),
        Mode::Figure3a | Mode::Figure3b => simulate(config, true),
        Mode::Theory => theory(config),
        Mode::Compare => compare(config),
    }
}

fn columns(parts: &[&[&'static str]]) -> Vec<&'static str> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

fn point_cells(p: &GridPoint) -> Vec<Cell> {
    vec![
        Cell::Int(p.params.two_n),
        Cell::Num(p.params.sigma),
        Cell::Num(p.params.gamma),
        Cell::Num(p.params.rho),
        Cell::Num(p.params.rho_2n()),
        Cell::opt_num(p.zeta),
        Cell::Int(p.resolved_u()),
    ]
}

/// Identity of a grid point as rendered in the CSV prefix columns.
fn point_key(cells: &[Cell]) -> String {
    let rendered: Vec<String> = cells.iter().map(Cell::render).collect();
    [0, 1, 2, 3, 5, 6].map(|i| rendered[i].as_str()).join(",")
}

fn record_key(rec: &HashMap<String, String>) -> Result<String, CliError> {
    let fields = ["two_n", "sigma", "gamma", "rho", "zeta", "u_count"];
    let mut parts = Vec::new();
    for f in fields {
        parts.push(rec.get(f).cloned().ok_or_else(|| CliError::Config(format!("CSV is missing column {f}")))?);
    }
    Ok(parts.join(","))
}

fn status_of(e: &SweepError) -> &'static str {
    match e {
        SweepError::RegimeMismatch(_) => "regime_mismatch",
        SweepError::EstimationFailed(_) => "estimation_failed",
        SweepError::InvalidParameter(_) | SweepError::InvalidState(_) => "invalid",
        _ => "error",
    }
}

fn harness_options(config: &RunConfig) -> HarnessOptions {
    HarnessOptions {
        threads: config.threads,
        interval: config.interval.into(),
        ci_multiplier: config.ci_multiplier,
        ..HarnessOptions::default()
    }
}

fn run_sweep(config: &RunConfig, points: &[GridPoint]) -> Result<Vec<SweepRow>, CliError> {
    let scenarios: Vec<ScenarioConfig> = points
        .iter()
        .map(|p| {
            let initial = match (p.zeta, p.u_count) {
                (Some(z), _) => InitialCondition::Zeta(z),
                (None, Some(u)) => InitialCondition::UCount(u),
                (None, None) => unreachable!("validated"),
            };
            ScenarioConfig::new(p.params, initial, config.arrival.into(), config.master_seed)
        })
        .collect();
    sweep(&scenarios, config.target()?, config.n_trials, config.master_seed, &harness_options(config))
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn sim_cells(config: &RunConfig, row: &SweepRow) -> Vec<Cell> {
    let wall = if config.record_timing { row.wall_time_s } else { 0.0 };
    let head = vec![Cell::text(row.config.arrival.label()), Cell::text(config.target.clone()), Cell::Int(row.seed)];
    let body = match &row.result {
        Ok(e) => vec![
            Cell::Num(e.p_hat),
            Cell::Num(e.se),
            Cell::Num(e.ci_low),
            Cell::Num(e.ci_high),
            Cell::Int(e.n_trials),
            Cell::Int(e.n_hits),
            Cell::Int(e.n_censored),
            Cell::Num(wall),
            Cell::Int(e.events_total),
            Cell::text("ok"),
        ],
        Err(e) => {
            let mut v = vec![Cell::Empty; 4];
            v.extend([Cell::Int(config.n_trials), Cell::Empty, Cell::Empty, Cell::Num(wall), Cell::Empty]);
            v.push(Cell::text(status_of(e)));
            v
        }
    };
    head.into_iter().chain(body).collect()
}

fn simulate(config: &RunConfig, with_theory: bool) -> Result<Output, CliError> {
    let points = config.grid()?;
    let mut cols = columns(&[&POINT_COLUMNS, &SIM_COLUMNS]);
    if with_theory {
        cols.extend(["large_n", "moderate_n"]);
    }
    let mut table = Table::new(cols);
    let mut warnings = Vec::new();
    for (p, row) in points.iter().zip(run_sweep(config, &points)?) {
        if let Err(e) = &row.result {
            warnings.push(format!("row {}: {e}", row.index));
        }
        let mut cells = point_cells(p);
        cells.extend(sim_cells(config, &row));
        if with_theory {
            for method in [Method::Thm31, Method::ModerateN] {
                match evaluate(config, p, method) {
                    Ok(v) => cells.push(Cell::Num(v)),
                    Err(e) => {
                        warnings.push(format!("row {} {}: {e}", row.index, method.label()));
                        cells.push(Cell::Num(f64::NAN));
                    }
                }
            }
        }
        table.push(cells);
    }
    Ok(Output { table, verdict: None, warnings })
}

/// Evaluates one estimator at one grid point. `method` must be resolved.
pub fn evaluate(config: &RunConfig, p: &GridPoint, method: Method) -> Result<f64, SweepError> {
    let zeta = p.resolved_zeta();
    match method.resolve(zeta, p.params.gamma) {
        Method::Thm31 => {
            let opts = TheoremOptions {
                convention: match config.convention {
                    ConventionChoice::LargeN => Convention::LargeN,
                    ConventionChoice::FiniteN => Convention::FiniteN,
                },
                boundary: if config.absorbing_delta11 { Boundary::Absorbing } else { Boundary::Verbatim },
                ..TheoremOptions::default()
            };
            theorem_fixation_prob(&p.params, zeta, &opts)
        }
        Method::Case1b => case1b_fixation_prob(&p.params, zeta, &CaseOneBOptions::default()),
        Method::ModerateN => moderate_n_fixation_prob(&p.params, zeta, &ModerateOptions::default()),
        Method::Auto => unreachable!("resolved above"),
    }
}

fn convention_label(config: &RunConfig, method: Method) -> &'static str {
    match (method, config.convention) {
        (Method::Thm31, ConventionChoice::LargeN) => "large_n",
        (Method::Thm31, ConventionChoice::FiniteN) => "finite_n",
        _ => "none",
    }
}

fn theory(config: &RunConfig) -> Result<Output, CliError> {
    let mut table = Table::new(columns(&[&POINT_COLUMNS, &THEORY_COLUMNS]));
    let mut warnings = Vec::new();
    for (i, p) in config.grid()?.iter().enumerate() {
        let method = config.method.resolve(p.resolved_zeta(), p.params.gamma);
        let mut cells = point_cells(p);
        cells.push(Cell::text(method.label()));
        cells.push(Cell::text(convention_label(config, method)));
        match evaluate(config, p, method) {
            Ok(v) => cells.extend([Cell::Num(v), Cell::text("ok")]),
            Err(e) => {
                warnings.push(format!("row {i}: {e}"));
                cells.extend([Cell::Num(f64::NAN), Cell::text(status_of(&e))]);
            }
        }
        table.push(cells);
    }
    Ok(Output { table, verdict: None, warnings })
}

/// One side of a comparison: value, standard error and a label per key.
struct Side {
    keys: Vec<String>,
    prefix: HashMap<String, Vec<Cell>>,
    values: HashMap<String, (f64, f64, String)>,
}

fn parse_num(rec: &HashMap<String, String>, col: &str) -> Result<f64, CliError> {
    let raw = rec.get(col).ok_or_else(|| CliError::Config(format!("CSV is missing column {col}")))?;
    if raw.is_empty() {
        return Ok(f64::NAN);
    }
    raw.parse().map_err(|_| CliError::Config(format!("column {col}: {raw:?} is not a number")))
}

/// Loads a simulate or theory CSV. Simulation rows give `(p_hat, se)`;
/// theory rows give `(value, 0)`.
fn load_side(path: &std::path::Path) -> Result<Side, CliError> {
    let records = read_records(path)?;
    let mut side = Side { keys: Vec::new(), prefix: HashMap::new(), values: HashMap::new() };
    for rec in records {
        let key = record_key(&rec)?;
        let (value, se, label) = if rec.contains_key("p_hat") {
            (parse_num(&rec, "p_hat")?, parse_num(&rec, "se")?, "simulation".to_string())
        } else {
            (parse_num(&rec, "value")?, 0.0, rec.get("method").cloned().unwrap_or_else(|| "csv".into()))
        };
        let prefix = POINT_COLUMNS.iter().map(|c| Cell::text(rec.get(*c).cloned().unwrap_or_default())).collect();
        if side.values.insert(key.clone(), (value, se, label)).is_some() {
            return Err(CliError::Config(format!("{}: duplicate grid point {key}", path.display())));
        }
        side.prefix.insert(key.clone(), prefix);
        side.keys.push(key);
    }
    Ok(side)
}

fn computed_side(config: &RunConfig, simulate: bool) -> Result<(Side, Vec<String>), CliError> {
    let points = config.grid()?;
    let mut side = Side { keys: Vec::new(), prefix: HashMap::new(), values: HashMap::new() };
    let mut warnings = Vec::new();
    let rows: Vec<(f64, f64, String)> = if simulate {
        run_sweep(config, &points)?
            .into_iter()
            .map(|row| match row.result {
                Ok(EstimateWithCI { p_hat, se, .. }) => (p_hat, se, "simulation".to_string()),
                Err(e) => {
                    warnings.push(format!("row {}: {e}", row.index));
                    (f64::NAN, f64::NAN, "simulation".to_string())
                }
            })
            .collect()
    } else {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let method = config.method.resolve(p.resolved_zeta(), p.params.gamma);
                let v = evaluate(config, p, method).unwrap_or_else(|e| {
                    warnings.push(format!("row {i}: {e}"));
                    f64::NAN
                });
                (v, 0.0, method.label().to_string())
            })
            .collect()
    };
    for (p, value) in points.iter().zip(rows) {
        let cells = point_cells(p);
        let key = point_key(&cells);
        side.prefix.insert(key.clone(), cells);
        side.values.insert(key.clone(), value);
        side.keys.push(key);
    }
    Ok((side, warnings))
}

fn compare(config: &RunConfig) -> Result<Output, CliError> {
    let mut warnings = Vec::new();
    // Files are read before any simulation so that bad inputs fail fast.
    let loaded_theory = config.theory_csv.as_deref().map(load_side).transpose()?;
    let loaded_sim = config.sim_csv.as_deref().map(load_side).transpose()?;
    let sim = match loaded_sim {
        Some(s) => s,
        None => {
            let (s, w) = computed_side(config, true)?;
            warnings.extend(w);
            s
        }
    };
    let theory = match loaded_theory {
        Some(t) => t,
        None => {
            let (t, w) = computed_side(config, false)?;
            warnings.extend(w);
            t
        }
    };
    let mut a = sim.keys.clone();
    let mut b = theory.keys.clone();
    a.sort();
    b.sort();
    if a != b {
        return Err(CliError::Config(format!(
            "simulation and theory grids differ ({} vs {} points, or different points)",
            sim.keys.len(),
            theory.keys.len()
        )));
    }
    let mut table = Table::new(columns(&[&POINT_COLUMNS, &COMPARE_COLUMNS]));
    let mut passed = 0;
    for key in &sim.keys {
        let (p_hat, se, _) = sim.values[key].clone();
        let (reference, _, method) = theory.values[key].clone();
        let diff = (p_hat - reference).abs();
        let z = if se > 0.0 {
            (p_hat - reference) / se
        } else if diff == 0.0 {
            0.0
        } else if diff.is_nan() {
            f64::NAN
        } else {
            f64::INFINITY.copysign(p_hat - reference)
        };
        let ok = z.abs() <= config.z_limit;
        passed += usize::from(ok);
        let mut cells = sim.prefix[key].clone();
        cells.extend([
            Cell::Num(p_hat),
            Cell::Num(se),
            Cell::Num(reference),
            Cell::text(method),
            Cell::Num(diff),
            Cell::Num(z),
            Cell::text(if ok { "true" } else { "false" }),
        ]);
        table.push(cells);
    }
    let total = sim.keys.len();
    let verdict = format!(
        "{}: {passed}/{total} points with |z| <= {}",
        if passed == total { "PASS" } else { "FAIL" },
        config.z_limit
    );
    Ok(Output { table, verdict: Some(verdict), warnings })
}
