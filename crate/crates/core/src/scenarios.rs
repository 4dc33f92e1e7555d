//! Initial conditions for competing-sweep experiments and single fixation
//! trials.

use rand::Rng;

use crate::error::{invalid, Result};
use crate::moran::{simulate_until, Haplotype, ModelParams, PopulationState, SimEnd, DEFAULT_EVENT_CAP};
use crate::rng::trial_rng;

/// Where the second mutation lands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arrival {
    /// Hits a type-00 individual, creating one 10.
    In00,
    /// Hits a type-01 individual, creating one 11.
    In01,
}

impl Arrival {
    pub fn label(self) -> &'static str {
        match self {
            Arrival::In00 => "in_00",
            Arrival::In01 => "in_01",
        }
    }
}

/// How far the first sweep has progressed when the second mutation arrives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialCondition {
    /// `X01(0) = (2N)^-zeta`.
    Zeta(f64),
    /// Exactly `U` type-01 individuals.
    UCount(u64),
    /// An explicit composition; the arrival type is ignored.
    State(PopulationState),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioConfig {
    pub params: ModelParams,
    pub initial: InitialCondition,
    pub arrival: Arrival,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(params: ModelParams, initial: InitialCondition, arrival: Arrival, seed: u64) -> Self {
        ScenarioConfig { params, initial, arrival, seed }
    }

    /// Number of type-01 individuals at arrival, when defined.
    pub fn u_count(&self) -> Option<u64> {
        match self.initial {
            InitialCondition::Zeta(z) => Some(u_from_zeta(self.params.two_n, z)),
            InitialCondition::UCount(u) => Some(u),
            InitialCondition::State(_) => None,
        }
    }

    pub fn zeta(&self) -> Option<f64> {
        match self.initial {
            InitialCondition::Zeta(z) => Some(z),
            _ => None,
        }
    }
}

/// `round((2N)^(1 - zeta))`, clamped to `[1, 2N - 2]`.
pub fn u_from_zeta(two_n: u64, zeta: f64) -> u64 {
    let raw = (two_n as f64).powf(1.0 - zeta).round();
    let hi = two_n.saturating_sub(2).max(1) as f64;
    raw.clamp(1.0, hi) as u64
}

pub fn build_initial_state(config: &ScenarioConfig) -> Result<PopulationState> {
    let two_n = config.params.two_n;
    if let InitialCondition::State(s) = config.initial {
        if s.two_n() != two_n {
            return invalid(format!("initial state has {} individuals, expected {two_n}", s.two_n()));
        }
        return Ok(s);
    }
    if two_n < 4 {
        return invalid(format!("2N = {two_n} is too small for a two-sweep scenario (need >= 4)"));
    }
    if let InitialCondition::Zeta(z) = config.initial {
        if !(z > 0.0 && z < 1.0) {
            return invalid(format!("zeta = {z} must lie in (0, 1)"));
        }
    }
    let u = config.u_count().expect("zeta or U");
    if u < 1 || u > two_n - 1 {
        return invalid(format!("U = {u} must lie in [1, {}]", two_n - 1));
    }
    match config.arrival {
        Arrival::In00 => PopulationState::new(two_n - u - 1, u, 1, 0),
        Arrival::In01 => PopulationState::new(two_n - u, u - 1, 0, 1),
    }
}

/// Whether the first sweep is still in its first half (`X01 < 1/2`).
/// Analysis metadata only; trials never branch on it.
pub fn in_first_half(state: &PopulationState) -> bool {
    2 * state.count(Haplotype::H01) < state.two_n()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialEnd {
    Fixed(Haplotype),
    /// Stopped early because the target type can no longer fix.
    TargetLost(Haplotype),
    Censored,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    pub end: TrialEnd,
    /// Model time at termination.
    pub time: f64,
    pub events: u64,
}

impl TrialOutcome {
    pub fn fixed_type(&self) -> Option<Haplotype> {
        match self.end {
            TrialEnd::Fixed(h) => Some(h),
            _ => None,
        }
    }

    pub fn censored(&self) -> bool {
        self.end == TrialEnd::Censored
    }

    /// True if `target` fixed; false if another type fixed or the target was
    /// lost. `None` for censored trials.
    pub fn hit(&self, target: Haplotype) -> Option<bool> {
        match self.end {
            TrialEnd::Fixed(h) => Some(h == target),
            TrialEnd::TargetLost(_) => Some(false),
            TrialEnd::Censored => None,
        }
    }
}

/// When a trial stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopRule {
    /// Run until some type fixes.
    Fixation,
    /// Run until some type fixes or `target` has become unreachable.
    TargetDecided(Haplotype),
}

pub fn run_trial<R: Rng + ?Sized>(
    start: PopulationState,
    params: &ModelParams,
    rng: &mut R,
    rule: StopRule,
    max_events: u64,
) -> TrialOutcome {
    let out = match rule {
        StopRule::Fixation => simulate_until(start, params, rng, |s, _| s.fixed_type().is_some(), max_events),
        StopRule::TargetDecided(target) => simulate_until(
            start,
            params,
            rng,
            |s, _| s.target_unreachable(target) || s.fixed_type().is_some(),
            max_events,
        ),
    };
    let end = match out.end {
        SimEnd::Censored => TrialEnd::Censored,
        SimEnd::Stopped | SimEnd::Absorbed => match out.state.fixed_type() {
            Some(h) => TrialEnd::Fixed(h),
            None => match rule {
                StopRule::TargetDecided(target) => TrialEnd::TargetLost(target),
                StopRule::Fixation => unreachable!("only monomorphic states are absorbing"),
            },
        },
    };
    TrialOutcome { end, time: out.time, events: out.events }
}

/// Runs one trial from the scenario's initial state to fixation, using the
/// scenario seed.
pub fn run_fixation_trial(config: &ScenarioConfig) -> Result<TrialOutcome> {
    let start = build_initial_state(config)?;
    let mut rng = trial_rng(config.seed, 0);
    Ok(run_trial(start, &config.params, &mut rng, StopRule::Fixation, DEFAULT_EVENT_CAP))
}

/// Draws a scenario with the arrival time uniform over the first sweep:
/// `zeta ~ Unif(0, 1)`, and the mutation hits a 01 individual with
/// probability `(2N)^-zeta`.
pub fn draw_arrival<R: Rng + ?Sized>(params: &ModelParams, rng: &mut R) -> ScenarioConfig {
    let zeta = loop {
        let z: f64 = rng.random();
        if z > 0.0 {
            break z;
        }
    };
    let x01 = (params.two_n as f64).powf(-zeta);
    let arrival = if rng.random::<f64>() < x01 { Arrival::In01 } else { Arrival::In00 };
    ScenarioConfig { params: *params, initial: InitialCondition::Zeta(zeta), arrival, seed: rng.random() }
}
