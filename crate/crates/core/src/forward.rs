//! Forward (Kolmogorov) equations for the birth-death process that
//! approximates the number of double mutants, and the large-population
//! fixation probability of the double mutant built on them.
//!
//! The lattice is the set of counts `0..=K`, where `K` is the establishment
//! threshold (`ceil(log 2N)` for a literal finite-N evaluation). Count `k`
//! corresponds to frequency `k / 2N`. Level 0 is absorbing once births from
//! zero stop; level `K` is either absorbing or, in the verbatim variant,
//! only loses mass through deaths.
//!
//! Integration is explicit fixed-step RK4 with `h * max_k(birth + death)`
//! at most `cfl` on every segment, with a grid point at every rate
//! discontinuity and requested output time.

use crate::deterministic::{logistic, middle_phase_length, phase_schedule, PhaseSchedule};
use crate::error::{Result, SweepError};
use crate::moran::ModelParams;

/// Treatment of the top level of the lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    /// Mass arriving at the threshold stays there.
    #[default]
    Absorbing,
    /// The threshold row loses mass through deaths back to the level below.
    Verbatim,
}

/// Frequency of type 10 at which the middle phase starts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum EntryLevel {
    /// `c1 = (2N)^-b_10_3` exactly. Degenerate (`c1 >= 1/2`) unless
    /// `log 2N` is in the hundreds.
    Literal,
    /// `c1 = 1/2N`: the middle phase covers the whole logistic displacement.
    #[default]
    SingleIndividual,
    Fixed(f64),
}

impl EntryLevel {
    pub fn resolve(self, schedule: &PhaseSchedule, two_n: u64) -> f64 {
        match self {
            EntryLevel::Literal => schedule.c1,
            EntryLevel::SingleIndividual => 1.0 / two_n as f64,
            EntryLevel::Fixed(c) => c,
        }
    }
}

/// A birth-death chain on levels `0..=K` whose rates may depend on time and
/// on an auxiliary deterministic ODE state.
pub trait RateModel {
    /// Top level `K`.
    fn top(&self) -> usize;
    fn boundary(&self) -> Boundary {
        Boundary::Absorbing
    }
    fn aux_dim(&self) -> usize {
        0
    }
    fn aux_deriv(&self, _t: f64, _aux: &[f64], _daux: &mut [f64]) {}
    /// Fills `birth[k]`, `death[k]` for `k in 0..=K`.
    fn rates(&self, t: f64, aux: &[f64], birth: &mut [f64], death: &mut [f64]);
    /// Upper bound on `max_k(birth + death)` over `[t0, t1]`.
    fn rate_bound(&self, t0: f64, t1: f64, aux: &[f64]) -> f64;
    /// Times at which the rates jump.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Initial bound on `h * max rate`.
    pub cfl: f64,
    /// Halve the step until the final threshold probability is stable.
    pub refine: bool,
    pub rel_tol: f64,
    pub max_halvings: u32,
    /// Allowed drift of total probability.
    pub conservation_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { cfl: 0.1, refine: true, rel_tol: 1e-8, max_halvings: 6, conservation_tol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardSolution {
    /// Output times, strictly increasing.
    pub t_grid: Vec<f64>,
    /// `p[i][k]`: probability of level `k` at `t_grid[i]`, clipped at 0.
    pub p: Vec<Vec<f64>>,
    /// Auxiliary state at each output time.
    pub aux: Vec<Vec<f64>>,
    /// Most negative raw probability seen at an output time.
    pub min_raw: f64,
    /// Step bound actually used.
    pub cfl: f64,
}

impl ForwardSolution {
    pub fn top(&self) -> usize {
        self.p[0].len() - 1
    }

    pub fn last(&self) -> &[f64] {
        self.p.last().expect("non-empty solution")
    }

    /// Probability of the threshold level at the final time.
    pub fn threshold_probability(&self) -> f64 {
        self.last()[self.top()]
    }

    pub fn threshold_series(&self) -> Vec<f64> {
        let top = self.top();
        self.p.iter().map(|row| row[top]).collect()
    }
}

struct Workspace {
    birth: Vec<f64>,
    death: Vec<f64>,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

fn deriv<M: RateModel>(model: &M, t: f64, y: &[f64], dy: &mut [f64], birth: &mut [f64], death: &mut [f64]) {
    let top = model.top();
    let (p, aux) = y.split_at(top + 1);
    let (dp, daux) = dy.split_at_mut(top + 1);
    model.aux_deriv(t, aux, daux);
    model.rates(t, aux, birth, death);
    for r in birth.iter_mut().chain(death.iter_mut()) {
        if *r < 0.0 {
            *r = 0.0;
        }
    }
    birth[top] = 0.0;
    let verbatim = model.boundary() == Boundary::Verbatim;
    if !verbatim {
        death[top] = 0.0;
    }
    // Outflow from each level; inflow from neighbours.
    for k in 0..=top {
        let mut v = -(birth[k] + death[k]) * p[k];
        if k > 0 {
            v += birth[k - 1] * p[k - 1];
        }
        if k < top {
            v += death[k + 1] * p[k + 1];
        }
        dp[k] = v;
    }
}

fn rk4_step<M: RateModel>(model: &M, t: f64, h: f64, y: &mut [f64], ws: &mut Workspace) {
    let n = y.len();
    let Workspace { birth, death, k, tmp } = ws;
    deriv(model, t, y, &mut k[0], birth, death);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k[0][i];
    }
    deriv(model, t + 0.5 * h, tmp, &mut k[1], birth, death);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k[1][i];
    }
    deriv(model, t + 0.5 * h, tmp, &mut k[2], birth, death);
    for i in 0..n {
        tmp[i] = y[i] + h * k[2][i];
    }
    deriv(model, t + h, tmp, &mut k[3], birth, death);
    for i in 0..n {
        y[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
    }
}

/// Maximum number of RK4 steps in one solve.
const MAX_STEPS: u64 = 20_000_000_000;

/// Integrates the forward equation of `model` from `t = 0` with initial
/// distribution `p0` and auxiliary state `aux0`, reporting at
/// `output_times` (which must be non-negative; 0 and `horizon` are always
/// included).
pub fn integrate<M: RateModel>(
    model: &M,
    p0: &[f64],
    aux0: &[f64],
    horizon: f64,
    output_times: &[f64],
    cfl: f64,
    conservation_tol: f64,
) -> Result<ForwardSolution> {
    let top = model.top();
    if p0.len() != top + 1 || aux0.len() != model.aux_dim() {
        return Err(SweepError::InvalidParameter("initial condition has the wrong dimension".into()));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(SweepError::InvalidParameter(format!("horizon {horizon} must be finite and >= 0")));
    }
    let mut outputs: Vec<f64> = output_times.iter().copied().filter(|&t| t >= 0.0 && t <= horizon).collect();
    outputs.push(0.0);
    outputs.push(horizon);
    outputs.sort_by(f64::total_cmp);
    outputs.dedup();
    let mut stops: Vec<f64> = outputs.clone();
    stops.extend(model.breakpoints().into_iter().filter(|&t| t > 0.0 && t < horizon));
    stops.sort_by(f64::total_cmp);
    stops.dedup();

    let n = top + 1 + model.aux_dim();
    let mut ws = Workspace {
        birth: vec![0.0; top + 1],
        death: vec![0.0; top + 1],
        k: std::array::from_fn(|_| vec![0.0; n]),
        tmp: vec![0.0; n],
    };
    let mut y: Vec<f64> = p0.iter().chain(aux0).copied().collect();

    let mut sol = ForwardSolution { t_grid: Vec::new(), p: Vec::new(), aux: Vec::new(), min_raw: 0.0, cfl };
    let record = |t: f64, y: &[f64], sol: &mut ForwardSolution| -> Result<()> {
        let (p, aux) = y.split_at(top + 1);
        let mass: f64 = p.iter().sum();
        if (mass - 1.0).abs() > conservation_tol || !mass.is_finite() {
            return Err(SweepError::ConservationViolation { time: t, mass });
        }
        let min = p.iter().copied().fold(0.0, f64::min);
        sol.min_raw = sol.min_raw.min(min);
        sol.t_grid.push(t);
        sol.p.push(p.iter().map(|&v| v.max(0.0)).collect());
        sol.aux.push(aux.to_vec());
        Ok(())
    };

    let mut t = 0.0;
    let mut total_steps = 0u64;
    let mut next_out = 0;
    for &stop in &stops {
        if stop > t {
            let len = stop - t;
            let bound = model.rate_bound(t, stop, &y[top + 1..]).max(1e-300);
            let steps = (len * bound / cfl).ceil().max(1.0);
            total_steps += steps as u64;
            if !steps.is_finite() || total_steps > MAX_STEPS {
                return Err(SweepError::StepUnderflow { time: t });
            }
            let steps = steps as u64;
            let h = len / steps as f64;
            for i in 0..steps {
                rk4_step(model, t + i as f64 * h, h, &mut y, &mut ws);
            }
            t = stop;
        }
        if next_out < outputs.len() && outputs[next_out] == stop {
            record(stop, &y, &mut sol)?;
            next_out += 1;
        }
    }
    Ok(sol)
}

/// Like [`integrate`], halving the step bound until the final threshold
/// probability changes by less than `rel_tol` (relative).
pub fn integrate_refined<M: RateModel>(
    model: &M,
    p0: &[f64],
    aux0: &[f64],
    horizon: f64,
    output_times: &[f64],
    opts: &SolverOptions,
) -> Result<ForwardSolution> {
    let mut cfl = opts.cfl;
    let mut sol = integrate(model, p0, aux0, horizon, output_times, cfl, opts.conservation_tol)?;
    if !opts.refine {
        return Ok(sol);
    }
    let mut change = f64::INFINITY;
    for _ in 0..opts.max_halvings {
        cfl /= 2.0;
        let finer = integrate(model, p0, aux0, horizon, output_times, cfl, opts.conservation_tol)?;
        let (a, b) = (sol.threshold_probability(), finer.threshold_probability());
        change = (a - b).abs() / b.abs().max(1e-300);
        sol = finer;
        if (a - b).abs() <= opts.rel_tol * b.abs() + 1e-15 {
            return Ok(sol);
        }
    }
    Err(SweepError::RefinementFailed { halvings: opts.max_halvings, change })
}

/// Probability that a linear birth-death chain with constant birth/death
/// ratio `ratio = death / birth` ever hits `top`, averaged over `p`.
pub fn eventual_hit_probability(p: &[f64], ratio: f64) -> f64 {
    let top = p.len() - 1;
    if (ratio - 1.0).abs() < 1e-15 {
        return p.iter().enumerate().map(|(k, &pk)| pk * k as f64 / top as f64).sum();
    }
    let denom = 1.0 - ratio.powi(top as i32);
    p.iter().enumerate().map(|(k, &pk)| pk * (1.0 - ratio.powi(k as i32)) / denom).sum()
}

/// The approximating process for the double mutant after type 10 has
/// reached the entry level `c1`: birth and death rates are driven by the
/// deterministic logistic displacement of 01 by 10 until `t_mid`, and by a
/// pure-10 background afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Y11Process {
    pub sigma: f64,
    pub gamma: f64,
    /// Recombination rate; 0 in the large-population scaling.
    pub rho: f64,
    /// `rho * 2N`, the scale of the recombinant birth rate.
    pub rho_2n: f64,
    /// `1 / 2N`; 0 in the large-population scaling.
    pub inv_two_n: f64,
    pub c1: f64,
    pub t_mid: f64,
    /// Threshold count `K`.
    pub levels: usize,
    pub boundary: Boundary,
}

impl Y11Process {
    /// Literal finite-N process built from a phase schedule.
    pub fn from_schedule(
        schedule: &PhaseSchedule,
        params: &ModelParams,
        entry: EntryLevel,
        boundary: Boundary,
    ) -> Result<Self> {
        let c1 = entry.resolve(schedule, params.two_n);
        let theta = params.sigma * (1.0 - params.gamma);
        if !(c1 > 0.0 && c1 < 0.5) {
            return Err(SweepError::RegimeMismatch(format!(
                "middle-phase entry level c1 = {c1} must lie in (0, 1/2); the literal constant is degenerate at 2N = {}",
                params.two_n
            )));
        }
        Ok(Y11Process {
            sigma: params.sigma,
            gamma: params.gamma,
            rho: params.rho,
            rho_2n: params.rho_2n(),
            inv_two_n: 1.0 / params.two_n as f64,
            c1,
            t_mid: middle_phase_length(c1, theta),
            levels: schedule.delta11_count as usize,
            boundary,
        })
    }

    /// The `N -> infinity` scaling with `rho * 2N` held fixed, on a count
    /// lattice with threshold `levels`.
    pub fn large_population(sigma: f64, gamma: f64, rho_2n: f64, c1: f64, levels: usize) -> Result<Self> {
        if !(c1 > 0.0 && c1 < 0.5) {
            return Err(SweepError::InvalidParameter(format!("entry level {c1} must lie in (0, 1/2)")));
        }
        let theta = sigma * (1.0 - gamma);
        if !(theta > 0.0) {
            return Err(SweepError::InvalidParameter("sigma (1 - gamma) must be positive".into()));
        }
        Ok(Y11Process {
            sigma,
            gamma,
            rho: 0.0,
            rho_2n,
            inv_two_n: 0.0,
            c1,
            t_mid: middle_phase_length(c1, theta),
            levels,
            boundary: Boundary::Absorbing,
        })
    }

    pub fn y10(&self, t: f64) -> f64 {
        if t < self.t_mid {
            logistic(self.c1, self.sigma * (1.0 - self.gamma), t)
        } else {
            1.0
        }
    }

    /// Frequency of the threshold level.
    pub fn delta11(&self) -> f64 {
        self.levels as f64 * self.inv_two_n
    }

    /// Coefficients `(base_birth, base_death, shift, immigration)` at time
    /// `t`: the rates at count `k` are `k/2 * (base * (1 - z) -+ shift)`
    /// plus immigration for births.
    #[inline]
    fn coefficients(&self, t: f64) -> (f64, f64, f64, f64) {
        let (s, g, rho) = (self.sigma, self.gamma, self.rho);
        if t < self.t_mid {
            let y = self.y10(t);
            let shift = (s - rho) * y + (s * g - rho) * (1.0 - y);
            (1.0 + s * (1.0 + g), 1.0 - s * (1.0 + g) + 2.0 * rho, shift, self.rho_2n * y * (1.0 - y))
        } else {
            (1.0 + s * g + rho, 1.0 - s * g + rho, 0.0, 0.0)
        }
    }

    #[inline]
    fn level_rates(&self, k: usize, c: (f64, f64, f64, f64)) -> (f64, f64) {
        let (base_b, base_d, shift, imm) = c;
        let one_minus_z = 1.0 - k as f64 * self.inv_two_n;
        let half_k = 0.5 * k as f64;
        let birth = half_k * (base_b * one_minus_z - shift) + imm;
        let death = half_k * (base_d * one_minus_z + shift);
        (birth.max(0.0), death.max(0.0))
    }

    /// `(birth, death)` at count `k` and time `t`.
    pub fn rates_at_level(&self, k: usize, t: f64) -> (f64, f64) {
        self.level_rates(k, self.coefficients(t))
    }

    /// `(beta+, beta-)` at frequency `z` and time `t`.
    pub fn beta_rates(&self, z: f64, t: f64) -> Result<(f64, f64)> {
        let zmax = self.delta11();
        if !(z >= 0.0 && z <= zmax * (1.0 + 1e-12)) || (self.inv_two_n == 0.0 && z != 0.0) {
            return Err(SweepError::InvalidParameter(format!("z = {z} outside the lattice [0, {zmax}]")));
        }
        let (s, g, rho) = (self.sigma, self.gamma, self.rho);
        let nz = if self.inv_two_n > 0.0 { 0.5 * z / self.inv_two_n } else { 0.0 };
        let (birth, death) = if t < self.t_mid {
            let y = self.y10(t);
            let shift = (s - rho) * y + (s * g - rho) * (1.0 - y);
            (
                nz * ((1.0 + s * (1.0 + g)) * (1.0 - z) - shift) + self.rho_2n * y * (1.0 - y),
                nz * ((1.0 - s * (1.0 + g) + 2.0 * rho) * (1.0 - z) + shift),
            )
        } else {
            (nz * (1.0 + s * g + rho) * (1.0 - z), nz * (1.0 - s * g + rho) * (1.0 - z))
        };
        Ok((birth.max(0.0), death.max(0.0)))
    }

    /// Death/birth ratio after the middle phase (independent of the level).
    pub fn late_ratio(&self) -> f64 {
        (1.0 - self.sigma * self.gamma + self.rho) / (1.0 + self.sigma * self.gamma + self.rho)
    }

    pub fn point_mass_at_zero(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.levels + 1];
        p[0] = 1.0;
        p
    }
}

impl RateModel for Y11Process {
    fn top(&self) -> usize {
        self.levels
    }

    fn boundary(&self) -> Boundary {
        self.boundary
    }

    fn rates(&self, t: f64, _aux: &[f64], birth: &mut [f64], death: &mut [f64]) {
        let c = self.coefficients(t);
        for k in 0..=self.levels {
            (birth[k], death[k]) = self.level_rates(k, c);
        }
    }

    fn rate_bound(&self, t0: f64, t1: f64, _aux: &[f64]) -> f64 {
        // Segments never straddle t_mid. Within a segment the total rate is
        // affine in Y10 plus the concave immigration term, and affine plus
        // concave in k, so checking the endpoints, Y10 = 1/2 and every level
        // at those times bounds it.
        let inside = |t: f64| if t0 < self.t_mid && t >= self.t_mid { self.t_mid * (1.0 - 1e-15) } else { t };
        let mut times = vec![inside(t0), inside(t1)];
        if t0 < self.t_mid {
            let half = 0.5 * self.t_mid;
            if half > t0 && half < t1 {
                times.push(half);
            }
        }
        let mut worst: f64 = 0.0;
        for &t in &times {
            let c = self.coefficients(t);
            for k in 0..=self.levels {
                let (b, d) = self.level_rates(k, c);
                worst = worst.max(b + d);
            }
        }
        worst * 1.01
    }

    fn breakpoints(&self) -> Vec<f64> {
        if self.t_mid > 0.0 {
            vec![self.t_mid]
        } else {
            Vec::new()
        }
    }
}

/// Solves the forward equation of `process` from the point mass at 0 up to
/// `horizon`, with dense output at `output_times`.
pub fn solve_forward(
    process: &Y11Process,
    horizon: f64,
    output_times: &[f64],
    opts: &SolverOptions,
) -> Result<ForwardSolution> {
    integrate_refined(process, &process.point_mass_at_zero(), &[], horizon, output_times, opts)
}

/// Which expression a theorem evaluation returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Convention {
    /// The `N -> infinity` limit with `rho * 2N` fixed: entry level to 0,
    /// establishment threshold to infinity.
    #[default]
    LargeN,
    /// The threshold probability at `t_mid + t_late` evaluated at the given
    /// 2N.
    FiniteN,
}

/// How the large-N limit is computed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LimitMethod {
    /// Survival equation of a single recombinant lineage.
    #[default]
    SurvivalEquation,
    /// Forward equation on a count lattice with threshold `K` chosen so that
    /// an established lineage is lost with probability at most `tol`, and
    /// entry level `tol`.
    Lattice { tol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoremOptions {
    pub convention: Convention,
    /// Entry level for the finite-N convention.
    pub entry: EntryLevel,
    /// Boundary for the finite-N convention.
    pub boundary: Boundary,
    pub solver: SolverOptions,
    pub limit: LimitMethod,
    /// Entry level for the survival-equation limit.
    pub limit_entry: f64,
}

impl Default for TheoremOptions {
    fn default() -> Self {
        TheoremOptions {
            convention: Convention::LargeN,
            entry: EntryLevel::SingleIndividual,
            boundary: Boundary::Absorbing,
            solver: SolverOptions::default(),
            limit: LimitMethod::SurvivalEquation,
            limit_entry: 1e-9,
        }
    }
}

/// Establishment probability of a single new type-10 mutant in a type-00
/// background, `2 sigma / (1 + sigma)`.
pub fn type10_establishment(sigma: f64) -> f64 {
    2.0 * sigma / (1.0 + sigma)
}

/// Threshold count for the lattice limit: the smallest `K` with
/// `ratio^K <= tol`, where `ratio` is the late death/birth ratio.
pub fn large_n_levels(sigma: f64, gamma: f64, tol: f64) -> Result<usize> {
    let sg = sigma * gamma;
    if !(sg > 0.0) {
        return Err(SweepError::InvalidParameter("large-N threshold needs sigma * gamma > 0".into()));
    }
    let ratio = (1.0 - sg) / (1.0 + sg);
    Ok(((tol.ln() / ratio.ln()).ceil() as usize).max(2))
}

/// Detailed result of a theorem evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoremValue {
    /// `2 sigma / (1 + sigma) * establishment`.
    pub fixation_probability: f64,
    /// Establishment probability of the double mutant given type 10
    /// establishes.
    pub establishment: f64,
    /// Threshold count; 0 when no lattice was used.
    pub levels: usize,
    pub c1: f64,
    pub horizon: f64,
}

/// Fixation probability of the double mutant in the regime
/// `zeta < gamma < 1`, `rho = O(1/N)`.
pub fn theorem_fixation_prob(params: &ModelParams, zeta: f64, opts: &TheoremOptions) -> Result<f64> {
    theorem_value(params, zeta, opts).map(|v| v.fixation_probability)
}

pub fn theorem_value(params: &ModelParams, zeta: f64, opts: &TheoremOptions) -> Result<TheoremValue> {
    params.validate()?;
    let schedule = phase_schedule(params, zeta)?;
    let factor = type10_establishment(params.sigma);
    let (sigma, gamma, rho_2n) = (params.sigma, params.gamma, params.rho_2n());
    let value = |p: f64, levels, c1, horizon| TheoremValue {
        fixation_probability: factor * p,
        establishment: p,
        levels,
        c1,
        horizon,
    };
    match (opts.convention, opts.limit) {
        (Convention::FiniteN, _) => {
            let process = Y11Process::from_schedule(&schedule, params, opts.entry, opts.boundary)?;
            let horizon = process.t_mid + schedule.t_late;
            let sol = solve_forward(&process, horizon, &[], &opts.solver)?;
            Ok(value(sol.threshold_probability(), process.levels, process.c1, horizon))
        }
        (Convention::LargeN, LimitMethod::Lattice { tol }) => {
            let levels = large_n_levels(sigma, gamma, tol)?;
            let process = Y11Process::large_population(sigma, gamma, rho_2n, tol, levels)?;
            let sol = solve_forward(&process, process.t_mid, &[], &opts.solver)?;
            Ok(value(eventual_hit_probability(sol.last(), process.late_ratio()), levels, tol, f64::INFINITY))
        }
        (Convention::LargeN, LimitMethod::SurvivalEquation) => {
            let c1 = opts.limit_entry;
            if !(c1 > 0.0 && c1 < 0.5) {
                return Err(SweepError::InvalidParameter(format!("entry level {c1} must lie in (0, 1/2)")));
            }
            let p = survival_equation_refined(sigma, gamma, rho_2n, c1, &opts.solver)?;
            Ok(value(p, 0, c1, f64::INFINITY))
        }
    }
}

/// Large-N establishment probability of the double mutant computed from the
/// survival equation of a single recombinant lineage: with `u(t)` the
/// extinction probability of a lineage born at `t`, the probability that no
/// recombinant lineage survives is `exp(-int rho 2N Y(1 - Y) (1 - u) dt)`.
/// `steps` fixed RK4 steps, integrated backwards from `t_mid`.
pub fn survival_equation_limit(sigma: f64, gamma: f64, rho_2n: f64, c1: f64, steps: usize) -> f64 {
    let theta = sigma * (1.0 - gamma);
    let t_mid = middle_phase_length(c1, theta);
    let f = |t: f64, u: f64| {
        let y = logistic(c1, theta, t);
        let shift = sigma * y + sigma * gamma * (1.0 - y);
        let b = 0.5 * (1.0 + sigma * (1.0 + gamma) - shift);
        let d = 0.5 * (1.0 - sigma * (1.0 + gamma) + shift);
        ((b + d) * u - b * u * u - d, -rho_2n * y * (1.0 - y) * (1.0 - u))
    };
    let sg = sigma * gamma;
    let mut u = (1.0 - sg) / (1.0 + sg);
    let mut integral = 0.0;
    let h = -t_mid / steps as f64;
    for i in 0..steps {
        let t = t_mid + i as f64 * h;
        let (k1u, k1i) = f(t, u);
        let (k2u, k2i) = f(t + 0.5 * h, u + 0.5 * h * k1u);
        let (k3u, k3i) = f(t + 0.5 * h, u + 0.5 * h * k2u);
        let (k4u, k4i) = f(t + h, u + h * k3u);
        u += h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
        integral += h / 6.0 * (k1i + 2.0 * k2i + 2.0 * k3i + k4i);
    }
    1.0 - (-integral).exp()
}

/// [`survival_equation_limit`] with the step count doubled until the result
/// is stable to `opts.rel_tol`. The initial step is `opts.cfl` model time
/// units scaled by the unit per-capita rate.
pub fn survival_equation_refined(sigma: f64, gamma: f64, rho_2n: f64, c1: f64, opts: &SolverOptions) -> Result<f64> {
    let t_mid = middle_phase_length(c1, sigma * (1.0 - gamma));
    let mut steps = ((t_mid / opts.cfl.max(1e-6)).ceil() as usize).max(16);
    let mut prev = survival_equation_limit(sigma, gamma, rho_2n, c1, steps);
    let mut change = f64::INFINITY;
    for _ in 0..opts.max_halvings.max(1) {
        steps *= 2;
        let next = survival_equation_limit(sigma, gamma, rho_2n, c1, steps);
        change = (next - prev).abs() / next.abs().max(1e-300);
        if (next - prev).abs() <= opts.rel_tol * next.abs() + 1e-15 {
            return Ok(next);
        }
        prev = next;
    }
    Err(SweepError::RefinementFailed { halvings: opts.max_halvings, change })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig3(two_n: u64, rho_2n: f64) -> ModelParams {
        ModelParams::with_rho_2n(two_n, 0.02, 0.6, rho_2n).unwrap()
    }

    fn finite(two_n: u64, rho_2n: f64, boundary: Boundary) -> Y11Process {
        let p = fig3(two_n, rho_2n);
        let s = phase_schedule(&p, 0.3).unwrap();
        Y11Process::from_schedule(&s, &p, EntryLevel::SingleIndividual, boundary).unwrap()
    }

    #[test]
    fn beta_regimes() {
        let y = finite(10_000, 0.2, Boundary::Absorbing);
        let (bp, _) = y.beta_rates(0.0, 0.0).unwrap();
        assert!((bp - 0.2 * y.c1 * (1.0 - y.c1)).abs() < 1e-18);
        let t = 0.5 * y.t_mid;
        let (bp, _) = y.beta_rates(0.0, t).unwrap();
        let yt = y.y10(t);
        assert!((bp - 0.2 * yt * (1.0 - yt)).abs() < 1e-15 && bp > 0.0);
        assert_eq!(y.beta_rates(0.0, y.t_mid).unwrap().0, 0.0);
        assert_eq!(y.beta_rates(0.0, y.t_mid + 10.0).unwrap().0, 0.0);
        let z = 3.0 / 10_000.0;
        let (bp, bm) = y.beta_rates(z, y.t_mid + 1.0).unwrap();
        let n = 5000.0;
        assert!((bp - n * (1.0 + 0.012 + 0.2e-4) * z * (1.0 - z)).abs() < 1e-12);
        assert!((bm - n * (1.0 - 0.012 + 0.2e-4) * z * (1.0 - z)).abs() < 1e-12);
        assert!(y.beta_rates(0.002, 0.0).is_err());
        assert!(y.beta_rates(-1e-6, 0.0).is_err());
        let none = finite(10_000, 0.0, Boundary::Absorbing);
        for t in [0.0, 100.0, none.t_mid * 0.99, none.t_mid * 2.0] {
            assert_eq!(none.beta_rates(0.0, t).unwrap().0, 0.0);
        }
    }

    #[test]
    fn beta_at_time_zero_with_literal_hand_value() {
        // Literal entry level at 2N = 10^4: c1 = (10^4)^(-0.6 * 0.25 / 90).
        let p = fig3(10_000, 0.2);
        let c1 = phase_schedule(&p, 0.3).unwrap().c1;
        assert!((c1 - 0.984_767).abs() < 1e-6);
        let y = Y11Process {
            sigma: 0.02,
            gamma: 0.6,
            rho: p.rho,
            rho_2n: 0.2,
            inv_two_n: 1e-4,
            c1,
            t_mid: 1.0,
            levels: 10,
            boundary: Boundary::Absorbing,
        };
        let (bp, _) = y.beta_rates(0.0, 0.0).unwrap();
        assert!((bp - 0.2 * 0.984_767 * 0.015_233).abs() < 1e-6);
    }

    #[test]
    fn level_rates_match_frequency_rates() {
        let y = finite(4000, 0.5, Boundary::Absorbing);
        let mut birth = vec![0.0; y.levels + 1];
        let mut death = vec![0.0; y.levels + 1];
        for t in [0.0, 10.0, y.t_mid * 0.5, y.t_mid, y.t_mid + 5.0] {
            y.rates(t, &[], &mut birth, &mut death);
            for k in 0..=y.levels {
                let (b, d) = y.beta_rates(k as f64 / 4000.0, t).unwrap();
                let (b2, d2) = y.rates_at_level(k, t);
                assert!((birth[k].max(0.0) - b).abs() < 1e-12 && (death[k].max(0.0) - d).abs() < 1e-12);
                assert!((b2 - b).abs() < 1e-12 && (d2 - d).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn initial_condition_and_no_recombination() {
        let y = finite(10_000, 0.0, Boundary::Absorbing);
        let sol = solve_forward(&y, y.t_mid + 50.0, &[1.0, 100.0, y.t_mid + 1.0], &SolverOptions::default()).unwrap();
        assert_eq!(sol.p[0][0], 1.0);
        assert!(sol.p[0][1..].iter().all(|&v| v == 0.0));
        for row in &sol.p {
            assert_eq!(row[0], 1.0);
        }
    }

    #[test]
    fn conservation_and_monotone_absorption() {
        for boundary in [Boundary::Absorbing, Boundary::Verbatim] {
            let y = finite(400, 0.5, boundary);
            let horizon = y.t_mid + 200.0;
            let times: Vec<f64> = (1..60).map(|i| horizon * i as f64 / 60.0).collect();
            let sol = solve_forward(&y, horizon, &times, &SolverOptions::default()).unwrap();
            for row in &sol.p {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            assert!(sol.min_raw >= -1e-12);
            if boundary == Boundary::Absorbing {
                let series = sol.threshold_series();
                assert!(series.windows(2).all(|w| w[1] >= w[0] - 1e-15));
            }
        }
    }

    #[test]
    fn refinement_stability() {
        let y = finite(10_000, 0.2, Boundary::Absorbing);
        let horizon = y.t_mid + 300.0;
        let opts = SolverOptions::default();
        let refined = solve_forward(&y, horizon, &[], &opts).unwrap();
        let finer = integrate(&y, &y.point_mass_at_zero(), &[], horizon, &[], refined.cfl / 2.0, 1e-9).unwrap();
        let (a, b) = (refined.threshold_probability(), finer.threshold_probability());
        assert!((a - b).abs() < 1e-8 * b, "{a} vs {b}");
    }

    #[test]
    fn threshold_probability_against_two_level_closed_form() {
        // K = 1 with constant immigration a and no deaths from 1: p1(t) = 1 - e^{-a t}.
        struct Imm;
        impl RateModel for Imm {
            fn top(&self) -> usize {
                1
            }
            fn rates(&self, _t: f64, _aux: &[f64], birth: &mut [f64], death: &mut [f64]) {
                birth[0] = 0.3;
                birth[1] = 0.0;
                death[0] = 0.0;
                death[1] = 0.0;
            }
            fn rate_bound(&self, _: f64, _: f64, _: &[f64]) -> f64 {
                0.3
            }
        }
        let sol = integrate(&Imm, &[1.0, 0.0], &[], 5.0, &[], 0.01, 1e-12).unwrap();
        assert!((sol.threshold_probability() - (1.0 - (-1.5f64).exp())).abs() < 1e-7);
    }

    #[test]
    fn gamblers_ruin_limit() {
        let p = vec![0.0, 1.0, 0.0, 0.0];
        let r: f64 = 0.5;
        assert!((eventual_hit_probability(&p, r) - (1.0 - r) / (1.0 - r.powi(3))).abs() < 1e-15);
        assert!((eventual_hit_probability(&[0.0, 0.0, 1.0, 0.0], 1.0) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn theorem_zero_without_recombination() {
        let p = fig3(10_000, 0.0);
        for convention in [Convention::LargeN, Convention::FiniteN] {
            let opts = TheoremOptions { convention, ..TheoremOptions::default() };
            assert_eq!(theorem_fixation_prob(&p, 0.3, &opts).unwrap(), 0.0);
        }
    }

    #[test]
    fn theorem_rejects_case_1b_and_degenerate_literal_entry() {
        let p = fig3(10_000, 0.2);
        assert!(matches!(
            theorem_fixation_prob(&p, 0.7, &TheoremOptions::default()),
            Err(SweepError::RegimeMismatch(_))
        ));
        let literal =
            TheoremOptions { convention: Convention::FiniteN, entry: EntryLevel::Literal, ..TheoremOptions::default() };
        assert!(matches!(theorem_fixation_prob(&p, 0.3, &literal), Err(SweepError::RegimeMismatch(_))));
    }

    #[test]
    fn large_n_forward_matches_survival_equation() {
        // Coarse truncation keeps this quick; the acceptance suite runs the
        // default tolerance.
        let tol = 0.02;
        let levels = large_n_levels(0.02, 0.6, tol).unwrap();
        let y = Y11Process::large_population(0.02, 0.6, 0.2, tol, levels).unwrap();
        let sol =
            solve_forward(&y, y.t_mid, &[], &SolverOptions { refine: false, ..SolverOptions::default() }).unwrap();
        let forward = eventual_hit_probability(sol.last(), y.late_ratio());
        let survival = survival_equation_limit(0.02, 0.6, 0.2, tol, 20_000);
        // Hitting a finite threshold overestimates survival by O(ratio^K).
        assert!(forward >= survival);
        assert!((forward - survival) / survival < 4.0 * tol, "{forward} vs {survival}");
    }

    #[test]
    fn survival_equation_converges_in_entry_level() {
        let a = survival_equation_limit(0.02, 0.6, 0.2, 1e-6, 40_000);
        let b = survival_equation_limit(0.02, 0.6, 0.2, 1e-9, 60_000);
        assert!((a - b).abs() < 1e-5 * b);
        let c = survival_equation_limit(0.02, 0.6, 0.2, 1e-9, 120_000);
        assert!((b - c).abs() < 1e-9);
    }
}
