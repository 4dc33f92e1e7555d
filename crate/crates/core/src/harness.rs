//! Reproducible Monte Carlo estimation of fixation probabilities.
//!
//! Trial `i` always draws from `trial_rng(master_seed, i)`, and trials are
//! assigned to workers in contiguous static blocks, so every estimate is
//! identical for any thread count. With the `parallel` feature disabled all
//! trials run on the calling thread.

use std::time::Instant;

use crate::error::{invalid, Result, SweepError};
use crate::moran::{Haplotype, DEFAULT_EVENT_CAP};
use crate::rng::{derive_seed, trial_rng, TrialRng};
use crate::scenarios::{build_initial_state, run_trial, ScenarioConfig, StopRule, TrialOutcome};

/// Which interval `ci_low`/`ci_high` report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interval {
    #[default]
    Wilson,
    /// `p_hat +- multiplier * se`, clipped to `[0, 1]`.
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarnessOptions {
    /// Worker threads; `None` uses the global default.
    pub threads: Option<usize>,
    pub max_events: u64,
    pub interval: Interval,
    /// Standard errors per side of the interval (the z of the Wilson interval).
    pub ci_multiplier: f64,
    /// Stop a trial as soon as the target can no longer fix.
    pub early_stop: bool,
}

impl Default for HarnessOptions {
    fn default() -> Self {
        HarnessOptions {
            threads: None,
            max_events: DEFAULT_EVENT_CAP,
            interval: Interval::Wilson,
            ci_multiplier: 2.0,
            early_stop: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateWithCI {
    pub p_hat: f64,
    /// `sqrt(p_hat (1 - p_hat) / n)` over completed trials.
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    /// Trials run, including censored ones.
    pub n_trials: u64,
    pub n_hits: u64,
    pub n_censored: u64,
    pub events_total: u64,
}

impl EstimateWithCI {
    /// Builds the estimate from `hits` successes among `completed` trials.
    pub fn from_counts(
        hits: u64,
        completed: u64,
        censored: u64,
        events_total: u64,
        interval: Interval,
        multiplier: f64,
    ) -> Result<Self> {
        if completed == 0 {
            return Err(SweepError::EstimationFailed(format!("all {censored} trials were censored")));
        }
        if hits > completed {
            return invalid(format!("{hits} hits out of {completed} trials"));
        }
        let n = completed as f64;
        let p = hits as f64 / n;
        let se = (p * (1.0 - p) / n).sqrt();
        let (wilson_low, wilson_high) = wilson_interval(hits, completed, multiplier);
        let (ci_low, ci_high) = match interval {
            Interval::Wilson => (wilson_low, wilson_high),
            Interval::Normal => ((p - multiplier * se).max(0.0), (p + multiplier * se).min(1.0)),
        };
        Ok(EstimateWithCI {
            p_hat: p,
            se,
            ci_low,
            ci_high,
            wilson_low,
            wilson_high,
            n_trials: completed + censored,
            n_hits: hits,
            n_censored: censored,
            events_total,
        })
    }

    pub fn completed(&self) -> u64 {
        self.n_trials - self.n_censored
    }

    /// `(p_hat - reference) / se`, with the binomial se at `reference` when
    /// the estimate is degenerate.
    pub fn z_score(&self, reference: f64) -> f64 {
        let n = self.completed() as f64;
        let se = if self.se > 0.0 { self.se } else { (reference * (1.0 - reference) / n).sqrt() };
        if se == 0.0 {
            if self.p_hat == reference {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.p_hat - reference) / se
        }
    }
}

/// Wilson score interval with `z` standard errors.
pub fn wilson_interval(hits: u64, n: u64, z: f64) -> (f64, f64) {
    let nf = n as f64;
    let p = hits as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    let low = if hits == 0 { 0.0 } else { (centre - half).clamp(0.0, p) };
    let high = if hits == n { 1.0 } else { (centre + half).clamp(p, 1.0) };
    (low, high)
}

/// Runs `f(index, rng)` for `index in 0..n_trials` with the per-trial
/// generator and returns the results in index order.
pub fn run_trials<T, F>(n_trials: u64, master_seed: u64, threads: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, &mut TrialRng) -> T + Sync,
{
    let block = |lo: u64, hi: u64| -> Vec<T> {
        (lo..hi)
            .map(|i| {
                let mut rng = trial_rng(master_seed, i);
                f(i, &mut rng)
            })
            .collect()
    };
    let workers = match threads {
        Some(0) => return invalid("thread count must be >= 1"),
        Some(t) => t,
        None => default_threads(),
    };
    if workers == 1 || n_trials <= 1 {
        return Ok(block(0, n_trials));
    }
    parallel_blocks(n_trials, workers, &block)
}

#[cfg(feature = "parallel")]
fn default_threads() -> usize {
    rayon::current_num_threads()
}

#[cfg(not(feature = "parallel"))]
fn default_threads() -> usize {
    1
}

#[cfg(feature = "parallel")]
fn parallel_blocks<T: Send>(n: u64, workers: usize, block: &(dyn Fn(u64, u64) -> Vec<T> + Sync)) -> Result<Vec<T>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| SweepError::ThreadPool(e.to_string()))?;
    let w = workers as u64;
    let bounds: Vec<(u64, u64)> = (0..w).map(|j| (n * j / w, n * (j + 1) / w)).collect();
    let parts: Vec<Vec<T>> = pool.install(|| bounds.par_iter().map(|&(lo, hi)| block(lo, hi)).collect());
    Ok(parts.into_iter().flatten().collect())
}

#[cfg(not(feature = "parallel"))]
fn parallel_blocks<T: Send>(n: u64, _workers: usize, block: &(dyn Fn(u64, u64) -> Vec<T> + Sync)) -> Result<Vec<T>> {
    Ok(block(0, n))
}

/// Summary of a batch of trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSummary {
    pub estimate: EstimateWithCI,
    /// Mean time at which trials ending in fixation of the target fixed.
    pub mean_target_time: Option<f64>,
}

/// Estimates the probability that `target` fixes from the scenario's
/// initial state. Censored trials are excluded from the denominator.
pub fn estimate_fixation_probability(
    config: &ScenarioConfig,
    target: Haplotype,
    n_trials: u64,
    master_seed: u64,
    opts: &HarnessOptions,
) -> Result<EstimateWithCI> {
    estimate_with_summary(config, target, n_trials, master_seed, opts).map(|s| s.estimate)
}

pub fn estimate_with_summary(
    config: &ScenarioConfig,
    target: Haplotype,
    n_trials: u64,
    master_seed: u64,
    opts: &HarnessOptions,
) -> Result<TrialSummary> {
    if n_trials == 0 {
        return invalid("n_trials must be >= 1");
    }
    let start = build_initial_state(config)?;
    let rule = if opts.early_stop { StopRule::TargetDecided(target) } else { StopRule::Fixation };
    let params = config.params;
    let outcomes: Vec<TrialOutcome> = run_trials(n_trials, master_seed, opts.threads, |_, rng| {
        run_trial(start, &params, rng, rule, opts.max_events)
    })?;
    summarize(&outcomes, target, opts)
}

/// Tallies outcomes into an estimate.
pub fn summarize(outcomes: &[TrialOutcome], target: Haplotype, opts: &HarnessOptions) -> Result<TrialSummary> {
    let (mut hits, mut completed, mut censored, mut events) = (0u64, 0u64, 0u64, 0u64);
    let mut time_sum = 0.0;
    for o in outcomes {
        events += o.events;
        match o.hit(target) {
            Some(true) => {
                hits += 1;
                completed += 1;
                time_sum += o.time;
            }
            Some(false) => completed += 1,
            None => censored += 1,
        }
    }
    let estimate = EstimateWithCI::from_counts(hits, completed, censored, events, opts.interval, opts.ci_multiplier)?;
    let mean_target_time = (hits > 0).then(|| time_sum / hits as f64);
    Ok(TrialSummary { estimate, mean_target_time })
}

/// One row of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub index: usize,
    pub config: ScenarioConfig,
    /// Master seed used for this point.
    pub seed: u64,
    pub result: std::result::Result<EstimateWithCI, SweepError>,
    pub wall_time_s: f64,
}

/// Estimates every grid point with its own derived seed. Failures are
/// recorded in the row and do not stop the sweep.
pub fn sweep(
    grid: &[ScenarioConfig],
    target: Haplotype,
    n_trials: u64,
    master_seed: u64,
    opts: &HarnessOptions,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return invalid("sweep grid is empty");
    }
    Ok(grid
        .iter()
        .enumerate()
        .map(|(index, config)| {
            let seed = derive_seed(master_seed, index as u64);
            let clock = Instant::now();
            let result = estimate_fixation_probability(config, target, n_trials, seed, opts);
            SweepRow { index, config: *config, seed, result, wall_time_s: clock.elapsed().as_secs_f64() }
        })
        .collect())
}
