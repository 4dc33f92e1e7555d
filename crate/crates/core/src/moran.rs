//! Exact continuous-time simulation of the two-locus, four-haplotype Moran
//! model with selection and recombination.
//!
//! The chain is simulated event by event with aggregate rates: for every
//! ordered pair of distinct haplotypes `(a, b)` we keep the total rate at
//! which one `a` individual is replaced by a new `b` individual. Resampling
//! contributes `n_a n_b p(b, a) / 2N`; recombination contributes
//! `rho / 4N * n_a * m` where `b` differs from `a` at exactly one locus and
//! `m` is the number of individuals carrying `b`'s allele at that locus.
//! Summing the table over rows and columns reproduces the per-type
//! increase/decrease rates of the model exactly.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::Exp1;

use crate::error::{invalid, Result, SweepError};

/// One of the four two-locus types. The first digit marks the newer
/// (second) beneficial mutation, the second digit the older one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Haplotype {
    H00 = 0,
    H01 = 1,
    H10 = 2,
    H11 = 3,
}

impl Haplotype {
    pub const ALL: [Haplotype; 4] = [Haplotype::H00, Haplotype::H01, Haplotype::H10, Haplotype::H11];

    pub fn from_bits(first: u8, second: u8) -> Haplotype {
        Haplotype::from_index(usize::from(first & 1) * 2 + usize::from(second & 1))
    }

    pub fn from_index(idx: usize) -> Haplotype {
        Haplotype::ALL[idx]
    }

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    /// Allele at the locus of the second (newer) mutation.
    #[inline]
    pub fn first(self) -> u8 {
        (self as u8) >> 1
    }

    /// Allele at the locus of the first (older) mutation.
    #[inline]
    pub fn second(self) -> u8 {
        (self as u8) & 1
    }

    pub fn label(self) -> &'static str {
        match self {
            Haplotype::H00 => "00",
            Haplotype::H01 => "01",
            Haplotype::H10 => "10",
            Haplotype::H11 => "11",
        }
    }
}

impl fmt::Display for Haplotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Haplotype {
    type Err = SweepError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "00" => Ok(Haplotype::H00),
            "01" => Ok(Haplotype::H01),
            "10" => Ok(Haplotype::H10),
            "11" => Ok(Haplotype::H11),
            other => invalid(format!("unknown haplotype {other:?}")),
        }
    }
}

/// Model parameters. `sigma` is the advantage of the second mutation and
/// `sigma * gamma` that of the first; `rho` is the recombination rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub two_n: u64,
    pub sigma: f64,
    pub gamma: f64,
    pub rho: f64,
}

impl ModelParams {
    pub fn new(two_n: u64, sigma: f64, gamma: f64, rho: f64) -> Result<Self> {
        let params = ModelParams { two_n, sigma, gamma, rho };
        params.validate()?;
        Ok(params)
    }

    /// Parameters with the recombination rate given as the product `rho * 2N`.
    pub fn with_rho_2n(two_n: u64, sigma: f64, gamma: f64, rho_2n: f64) -> Result<Self> {
        ModelParams::new(two_n, sigma, gamma, rho_2n / two_n as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.two_n < 2 {
            return invalid(format!("population size 2N = {} must be at least 2", self.two_n));
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            return invalid(format!("sigma = {} must lie in [0, 1]", self.sigma));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return invalid(format!("gamma = {} must be non-negative", self.gamma));
        }
        if self.sigma * (1.0 + self.gamma) > 1.0 + 1e-12 {
            return invalid(format!("sigma * (1 + gamma) = {} exceeds 1", self.sigma * (1.0 + self.gamma)));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return invalid(format!("rho = {} must be non-negative", self.rho));
        }
        Ok(())
    }

    pub fn n(&self) -> f64 {
        self.two_n as f64 / 2.0
    }

    pub fn rho_2n(&self) -> f64 {
        self.rho * self.two_n as f64
    }
}

/// Counts of the four haplotypes, indexed by [`Haplotype::index`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PopulationState {
    counts: [u64; 4],
}

impl PopulationState {
    pub fn new(n00: u64, n01: u64, n10: u64, n11: u64) -> Result<Self> {
        let state = PopulationState { counts: [n00, n01, n10, n11] };
        if state.two_n() == 0 {
            return Err(SweepError::InvalidState("empty population".into()));
        }
        Ok(state)
    }

    /// Monomorphic population of size `two_n`.
    pub fn monomorphic(kind: Haplotype, two_n: u64) -> Self {
        let mut counts = [0; 4];
        counts[kind.index()] = two_n;
        PopulationState { counts }
    }

    #[inline]
    pub fn count(&self, h: Haplotype) -> u64 {
        self.counts[h.index()]
    }

    #[inline]
    pub fn counts(&self) -> [u64; 4] {
        self.counts
    }

    #[inline]
    pub fn two_n(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn frequency(&self, h: Haplotype) -> f64 {
        self.count(h) as f64 / self.two_n() as f64
    }

    pub fn frequencies(&self) -> [f64; 4] {
        let total = self.two_n() as f64;
        self.counts.map(|c| c as f64 / total)
    }

    /// The fixed type, if the population is monomorphic.
    pub fn fixed_type(&self) -> Option<Haplotype> {
        let total = self.two_n();
        Haplotype::ALL.into_iter().find(|&h| self.count(h) == total)
    }

    /// Number of individuals carrying `allele` at the locus of the second
    /// mutation.
    #[inline]
    pub fn first_locus_count(&self, allele: u8) -> u64 {
        if allele == 0 {
            self.counts[0] + self.counts[1]
        } else {
            self.counts[2] + self.counts[3]
        }
    }

    /// Number of individuals carrying `allele` at the locus of the first
    /// mutation.
    #[inline]
    pub fn second_locus_count(&self, allele: u8) -> u64 {
        if allele == 0 {
            self.counts[0] + self.counts[2]
        } else {
            self.counts[1] + self.counts[3]
        }
    }

    /// True once `target` can no longer fix: neither resampling nor
    /// recombination can recreate an allele that has been lost.
    pub fn target_unreachable(&self, target: Haplotype) -> bool {
        self.first_locus_count(target.first()) == 0 || self.second_locus_count(target.second()) == 0
    }

    /// `from` loses one individual and `to` gains one.
    #[inline]
    pub(crate) fn apply(&mut self, from: Haplotype, to: Haplotype) {
        debug_assert!(self.counts[from.index()] > 0);
        self.counts[from.index()] -= 1;
        self.counts[to.index()] += 1;
    }
}

/// Probability that a `replacer` individual replaces a `replaced` one in a
/// resampling event between the two.
pub fn replacement_probability(replacer: Haplotype, replaced: Haplotype, params: &ModelParams) -> f64 {
    let di = f64::from(replacer.first()) - f64::from(replaced.first());
    let dj = f64::from(replacer.second()) - f64::from(replaced.second());
    0.5 * (1.0 + params.sigma * di + params.sigma * params.gamma * dj)
}

/// The twelve ordered pairs of distinct haplotypes, `(replaced, replacer)`.
pub const TRANSITIONS: [(Haplotype, Haplotype); 12] = {
    use Haplotype::*;
    [
        (H00, H01),
        (H00, H10),
        (H00, H11),
        (H01, H00),
        (H01, H10),
        (H01, H11),
        (H10, H00),
        (H10, H01),
        (H10, H11),
        (H11, H00),
        (H11, H01),
        (H11, H10),
    ]
};

/// Aggregate rates: `rate[a][b]` is the rate at which an `a` individual is
/// replaced by a `b` individual. Diagonal entries are zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionRateTable {
    pub rate: [[f64; 4]; 4],
    pub total_rate: f64,
}

impl TransitionRateTable {
    pub fn get(&self, from: Haplotype, to: Haplotype) -> f64 {
        self.rate[from.index()][to.index()]
    }

    /// Rate at which the count of `h` increases by one.
    pub fn increase_rate(&self, h: Haplotype) -> f64 {
        Haplotype::ALL.iter().filter(|&&a| a != h).map(|&a| self.get(a, h)).sum()
    }

    /// Rate at which the count of `h` decreases by one.
    pub fn decrease_rate(&self, h: Haplotype) -> f64 {
        Haplotype::ALL.iter().filter(|&&b| b != h).map(|&b| self.get(h, b)).sum()
    }
}

/// Precomputed per-parameter coefficients for the hot simulation loop.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RateKernel {
    /// `p(to, from) / 2N` for each entry of [`TRANSITIONS`].
    resample: [f64; 12],
    /// `rho / 4N`.
    recomb: f64,
}

impl RateKernel {
    pub(crate) fn new(params: &ModelParams) -> Self {
        let two_n = params.two_n as f64;
        let resample = TRANSITIONS.map(|(from, to)| replacement_probability(to, from, params) / two_n);
        RateKernel { resample, recomb: params.rho / (2.0 * two_n) }
    }

    /// Fills `out` with the rates of [`TRANSITIONS`] and returns their sum.
    #[inline]
    pub(crate) fn rates(&self, state: &PopulationState, out: &mut [f64; 12]) -> f64 {
        let c = state.counts.map(|x| x as f64);
        let first = [c[0] + c[1], c[2] + c[3]];
        let second = [c[0] + c[2], c[1] + c[3]];
        let mut total = 0.0;
        for (k, &(from, to)) in TRANSITIONS.iter().enumerate() {
            let na = c[from.index()];
            let mut r = na * c[to.index()] * self.resample[k];
            let first_differs = from.first() != to.first();
            let second_differs = from.second() != to.second();
            if first_differs != second_differs {
                let carriers =
                    if first_differs { first[usize::from(to.first())] } else { second[usize::from(to.second())] };
                r += self.recomb * na * carriers;
            }
            out[k] = r;
            total += r;
        }
        total
    }
}

/// Aggregate transition rates out of `state`.
pub fn transition_rates(state: &PopulationState, params: &ModelParams) -> TransitionRateTable {
    let kernel = RateKernel::new(params);
    let mut flat = [0.0; 12];
    let total_rate = kernel.rates(state, &mut flat);
    let mut rate = [[0.0; 4]; 4];
    for (k, &(from, to)) in TRANSITIONS.iter().enumerate() {
        rate[from.index()][to.index()] = flat[k];
    }
    TransitionRateTable { rate, total_rate }
}

/// One exact event of the chain. Returns the new state and the waiting time.
pub fn step<R: Rng + ?Sized>(
    state: &PopulationState,
    params: &ModelParams,
    rng: &mut R,
) -> Result<(PopulationState, f64)> {
    let kernel = RateKernel::new(params);
    let mut rates = [0.0; 12];
    let total = kernel.rates(state, &mut rates);
    if total <= 0.0 {
        return Err(SweepError::AbsorbingState);
    }
    let dt = rng.sample::<f64, _>(Exp1) / total;
    let (from, to) = TRANSITIONS[pick(&rates, total, rng)];
    let mut next = *state;
    next.apply(from, to);
    Ok((next, dt))
}

/// Default cap on the number of simulated events.
pub const DEFAULT_EVENT_CAP: u64 = 1_000_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimEnd {
    /// The stop predicate became true.
    Stopped,
    /// No further events are possible.
    Absorbed,
    /// The event cap was reached before either of the above.
    Censored,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOutcome {
    pub state: PopulationState,
    pub time: f64,
    pub events: u64,
    pub end: SimEnd,
}

/// Runs the chain until `stop(state, time)` holds, an absorbing state is
/// reached, or `max_events` events have been simulated.
pub fn simulate_until<R, F>(
    start: PopulationState,
    params: &ModelParams,
    rng: &mut R,
    mut stop: F,
    max_events: u64,
) -> SimOutcome
where
    R: Rng + ?Sized,
    F: FnMut(&PopulationState, f64) -> bool,
{
    let kernel = RateKernel::new(params);
    let mut rates = [0.0; 12];
    let mut state = start;
    let mut time = 0.0;
    let mut events = 0u64;
    loop {
        if stop(&state, time) {
            return SimOutcome { state, time, events, end: SimEnd::Stopped };
        }
        let total = kernel.rates(&state, &mut rates);
        if total <= 0.0 {
            return SimOutcome { state, time, events, end: SimEnd::Absorbed };
        }
        if events >= max_events {
            return SimOutcome { state, time, events, end: SimEnd::Censored };
        }
        time += rng.sample::<f64, _>(Exp1) / total;
        let (from, to) = TRANSITIONS[pick(&rates, total, rng)];
        state.apply(from, to);
        events += 1;
    }
}

#[inline]
fn pick<R: Rng + ?Sized>(rates: &[f64; 12], total: f64, rng: &mut R) -> usize {
    let mut u = rng.random::<f64>() * total;
    for (k, &r) in rates.iter().enumerate() {
        if u < r {
            return k;
        }
        u -= r;
    }
    rates.iter().rposition(|&r| r > 0.0).unwrap_or(11)
}
