//! Run configuration: defaults per mode, JSON config files and flag
//! overrides.
//!
//! Precedence, lowest first: mode defaults, `--config` file, environment
//! (`SWEEPS_THREADS` for the thread count only), flags.

use std::path::{Path, PathBuf};

use competing_sweeps::harness::Interval;
use competing_sweeps::scenarios::{u_from_zeta, Arrival};
use competing_sweeps::{Haplotype, ModelParams};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simulate,
    Theory,
    Compare,
    Figure1,
    Figure3a,
    Figure3b,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Theory => "theory",
            Mode::Compare => "compare",
            Mode::Figure1 => "figure1",
            Mode::Figure3a => "figure3a",
            Mode::Figure3b => "figure3b",
        }
    }
}

/// Which estimator `theory` evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// `thm31` when `zeta < gamma`, `case1b` otherwise.
    #[default]
    Auto,
    Thm31,
    Case1b,
    ModerateN,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Auto => "auto",
            Method::Thm31 => "thm31",
            Method::Case1b => "case1b",
            Method::ModerateN => "moderate_n",
        }
    }

    pub fn resolve(self, zeta: f64, gamma: f64) -> Method {
        match self {
            Method::Auto if zeta > gamma => Method::Case1b,
            Method::Auto => Method::Thm31,
            m => m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConventionChoice {
    #[default]
    LargeN,
    FiniteN,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IntervalChoice {
    #[default]
    Wilson,
    Normal,
}

impl From<IntervalChoice> for Interval {
    fn from(c: IntervalChoice) -> Self {
        match c {
            IntervalChoice::Wilson => Interval::Wilson,
            IntervalChoice::Normal => Interval::Normal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalChoice {
    #[default]
    In00,
    In01,
}

impl From<ArrivalChoice> for Arrival {
    fn from(c: ArrivalChoice) -> Self {
        match c {
            ArrivalChoice::In00 => Arrival::In00,
            ArrivalChoice::In01 => Arrival::In01,
        }
    }
}

/// Model parameters with recombination given either as `rho` or `rho_2n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub two_n: u64,
    pub sigma: f64,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_2n: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub params: ParamsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_count: Option<u64>,
    pub arrival: ArrivalChoice,
    /// Haplotype whose fixation is estimated, e.g. `"11"`.
    pub target: String,
    pub n_trials: u64,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
    pub ci_multiplier: f64,
    pub interval: IntervalChoice,
    pub method: Method,
    pub convention: ConventionChoice,
    pub absorbing_delta11: bool,
    /// Population sizes to run; defaults to `params.two_n` alone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub two_n_grid: Option<Vec<u64>>,
    /// `rho * 2N` values to run; overrides the recombination in `params`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_2n_grid: Option<Vec<f64>>,
    /// `compare`: read simulation rows from this CSV instead of simulating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_csv: Option<PathBuf>,
    /// `compare`: read theory rows from this CSV instead of evaluating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theory_csv: Option<PathBuf>,
    /// `compare`: largest |z| that passes.
    pub z_limit: f64,
    /// Record wall-clock time per row; off gives byte-identical output.
    pub record_timing: bool,
}

impl RunConfig {
    pub fn defaults(mode: Mode) -> Self {
        let base = RunConfig {
            mode,
            params: ParamsConfig { two_n: 1000, sigma: 0.02, gamma: 0.6, rho: None, rho_2n: Some(0.2) },
            zeta: Some(0.3),
            u_count: None,
            arrival: ArrivalChoice::In00,
            target: "11".into(),
            n_trials: 1000,
            master_seed: 1,
            threads: None,
            output_path: None,
            ci_multiplier: 2.0,
            interval: IntervalChoice::Wilson,
            method: Method::Auto,
            convention: ConventionChoice::LargeN,
            absorbing_delta11: true,
            two_n_grid: None,
            rho_2n_grid: None,
            sim_csv: None,
            theory_csv: None,
            z_limit: 3.0,
            record_timing: true,
        };
        match mode {
            Mode::Simulate | Mode::Theory | Mode::Compare => base,
            Mode::Figure1 => RunConfig {
                params: ParamsConfig { rho: Some(4e-5), rho_2n: None, ..base.params },
                two_n_grid: Some(vec![500, 1000, 2000, 4000, 8000, 16000]),
                n_trials: 20_000,
                ..base
            },
            Mode::Figure3a => RunConfig {
                two_n_grid: Some(vec![1000, 2000, 4000, 8000, 16000]),
                n_trials: 20_000,
                ci_multiplier: 1.0,
                ..base
            },
            Mode::Figure3b => RunConfig {
                params: ParamsConfig { two_n: 4000, ..base.params },
                rho_2n_grid: Some(vec![0.05, 0.1, 0.2, 0.5, 1.0, 2.0]),
                n_trials: 5000,
                ci_multiplier: 1.0,
                ..base
            },
        }
    }

    /// Mode defaults overlaid with a partial JSON document.
    pub fn from_json_overlay(mode: Mode, text: &str) -> Result<Self, CliError> {
        let overlay: Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config file: {e}")))?;
        let Value::Object(overlay) = overlay else {
            return Err(CliError::Config("config file must hold a JSON object".into()));
        };
        if let Some(m) = overlay.get("mode") {
            let file_mode: Mode =
                serde_json::from_value(m.clone()).map_err(|e| CliError::Config(format!("config file mode: {e}")))?;
            if file_mode != mode {
                return Err(CliError::Config(format!(
                    "config file is for mode {} but the subcommand is {}",
                    file_mode.label(),
                    mode.label()
                )));
            }
        }
        let mut merged = serde_json::to_value(RunConfig::defaults(mode)).expect("defaults serialize");
        let obj = merged.as_object_mut().expect("config is an object");
        for (key, value) in overlay {
            if key == "params" {
                let Value::Object(p) = value else {
                    return Err(CliError::Config("config file: params must be an object".into()));
                };
                let params = obj.get_mut("params").and_then(Value::as_object_mut).expect("params object");
                if p.contains_key("rho") || p.contains_key("rho_2n") {
                    params.remove("rho");
                    params.remove("rho_2n");
                }
                params.extend(p);
            } else {
                if key == "zeta" || key == "u_count" {
                    obj.remove("zeta");
                    obj.remove("u_count");
                }
                obj.insert(key, value);
            }
        }
        serde_json::from_value(merged).map_err(|e| CliError::Config(format!("config file: {e}")))
    }

    pub fn load(mode: Mode, path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::from_json_overlay(mode, &text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn target(&self) -> Result<Haplotype, CliError> {
        self.target
            .parse()
            .map_err(|_| CliError::Config(format!("target {:?} is not one of 00, 01, 10, 11", self.target)))
    }

    /// Checks the fields that do not depend on the grid point.
    pub fn validate(&self) -> Result<(), CliError> {
        let p = &self.params;
        if p.rho.is_some() == p.rho_2n.is_some() {
            return Err(CliError::Config("exactly one of rho and rho_2n must be set".into()));
        }
        if self.zeta.is_some() == self.u_count.is_some() {
            return Err(CliError::Config("exactly one of zeta and u_count must be set".into()));
        }
        if self.n_trials == 0 && !matches!(self.mode, Mode::Theory) {
            return Err(CliError::Config("n_trials must be >= 1".into()));
        }
        if self.threads == Some(0) {
            return Err(CliError::Config("threads must be >= 1".into()));
        }
        if !(self.ci_multiplier > 0.0 && self.ci_multiplier.is_finite()) {
            return Err(CliError::Config(format!("ci_multiplier = {} must be positive", self.ci_multiplier)));
        }
        if !(self.z_limit > 0.0) {
            return Err(CliError::Config(format!("z_limit = {} must be positive", self.z_limit)));
        }
        if let Some(z) = self.zeta {
            if !(z > 0.0 && z < 1.0) {
                return Err(CliError::Config(format!("zeta = {z} must lie in (0, 1)")));
            }
        }
        if matches!(&self.two_n_grid, Some(g) if g.is_empty()) || matches!(&self.rho_2n_grid, Some(g) if g.is_empty()) {
            return Err(CliError::Config("grids must not be empty".into()));
        }
        self.target()?;
        for point in self.grid()? {
            point.params.validate().map_err(|e| CliError::Config(e.to_string()))?;
            if let Some(u) = self.u_count {
                if u + 1 > point.params.two_n {
                    return Err(CliError::Config(format!("u_count {u} leaves no room at 2N = {}", point.params.two_n)));
                }
            }
        }
        Ok(())
    }

    /// The grid: every population size crossed with every `rho * 2N`.
    pub fn grid(&self) -> Result<Vec<GridPoint>, CliError> {
        let sizes = self.two_n_grid.clone().unwrap_or_else(|| vec![self.params.two_n]);
        let mut out = Vec::new();
        for &two_n in &sizes {
            let rhos: Vec<Recomb> = match (&self.rho_2n_grid, self.params.rho, self.params.rho_2n) {
                (Some(g), _, _) => g.iter().map(|&r| Recomb::Scaled(r)).collect(),
                (None, Some(r), _) => vec![Recomb::Absolute(r)],
                (None, None, Some(r)) => vec![Recomb::Scaled(r)],
                (None, None, None) => return Err(CliError::Config("no recombination rate given".into())),
            };
            for rho in rhos {
                let rho_abs = match rho {
                    Recomb::Absolute(r) => r,
                    Recomb::Scaled(r) => r / two_n as f64,
                };
                let params = ModelParams { two_n, sigma: self.params.sigma, gamma: self.params.gamma, rho: rho_abs };
                out.push(GridPoint { params, zeta: self.zeta, u_count: self.u_count });
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy)]
enum Recomb {
    Absolute(f64),
    Scaled(f64),
}

/// One grid point with its initial condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub params: ModelParams,
    pub zeta: Option<f64>,
    pub u_count: Option<u64>,
}

impl GridPoint {
    /// Number of type-01 individuals at arrival.
    pub fn resolved_u(&self) -> u64 {
        match (self.u_count, self.zeta) {
            (Some(u), _) => u,
            (None, Some(z)) => u_from_zeta(self.params.two_n, z),
            (None, None) => 0,
        }
    }

    /// `zeta`, or the value implied by `u_count` (`U / 2N = (2N)^-zeta`).
    pub fn resolved_zeta(&self) -> f64 {
        match (self.zeta, self.u_count) {
            (Some(z), _) => z,
            (None, Some(u)) => {
                let m = self.params.two_n as f64;
                -(u as f64 / m).ln() / m.ln()
            }
            (None, None) => f64::NAN,
        }
    }
}
