//! Closed-form binary branching quantities and the heuristic estimators for
//! late arrivals (`zeta > gamma`) and moderate population sizes.
//!
//! Both estimators follow the same recipe: the establishment of type 10 is
//! treated as a supercritical branching process whose normalised limit `W`
//! is exponential given survival; each draw of `W` fixes a deterministic
//! background `(X10, X01)` that drives a birth-death process for the double
//! mutant, whose eventual establishment probability is obtained from its
//! forward equation and integrated against the law of `W`.

use crate::deterministic::{establishment_count, logistic, phase_schedule};
use crate::error::{invalid, Result, SweepError};
use crate::forward::{eventual_hit_probability, integrate_refined, RateModel, SolverOptions};
use crate::moran::ModelParams;
use crate::quadrature::GaussLegendre;

/// Binary branching process: each individual splits in two at rate `a` and
/// dies at rate `b`, started from `k` individuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryBranching {
    pub a: f64,
    pub b: f64,
    pub k: u64,
}

impl BinaryBranching {
    pub fn new(a: f64, b: f64, k: u64) -> Result<Self> {
        if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
            return invalid(format!("branching rates must be finite and >= 0 (a = {a}, b = {b})"));
        }
        if a == b {
            return invalid("critical branching (a = b) has no closed form here");
        }
        if k == 0 {
            return invalid("branching process needs k >= 1");
        }
        Ok(BinaryBranching { a, b, k })
    }
}

/// `E[s^xi(t)]` for a process started from `k` individuals.
pub fn generating_function(bp: &BinaryBranching, s: f64, t: f64) -> Result<f64> {
    let BinaryBranching { a, b, k } = *bp;
    if a == b {
        return invalid("critical branching (a = b) has no closed form here");
    }
    if !(0.0..=1.0).contains(&s) {
        return invalid(format!("s = {s} must lie in [0, 1]"));
    }
    if !(t >= 0.0) {
        return invalid(format!("t = {t} must be >= 0"));
    }
    if s == 1.0 {
        return Ok(1.0);
    }
    // Numerator and denominator scaled by min(1, e^((a - b) t)) to avoid
    // overflow when b > a.
    let (num, den) = if a > b {
        let x = (-(a - b) * t).exp();
        (b * (s - 1.0) - (a * s - b) * x, a * (s - 1.0) - (a * s - b) * x)
    } else {
        let y = ((a - b) * t).exp();
        (b * (s - 1.0) * y - (a * s - b), a * (s - 1.0) * y - (a * s - b))
    };
    let g = (num / den).clamp(0.0, 1.0);
    Ok(g.powf(k as f64))
}

/// Extinction probability by time `t` with the analytic bound available for
/// the given sign of `a - b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtinctionBounds {
    /// `P(xi(t) = 0) = G(0, t)`.
    pub extinction: f64,
    /// `P(xi(t) > 0) = 1 - G(0, t)`.
    pub survival: f64,
    /// Supercritical: bound `(b/a) e^-(a-b)t` on the distance of the
    /// single-ancestor extinction probability from `b/a`.
    /// Subcritical: bound `1.2 k e^-(b-a)t` on the survival probability.
    pub bound: f64,
}

pub fn extinction_bounds(bp: &BinaryBranching, t: f64) -> Result<ExtinctionBounds> {
    let extinction = generating_function(bp, 0.0, t)?;
    let BinaryBranching { a, b, k } = *bp;
    let bound = if a > b { b / a * (-(a - b) * t).exp() } else { 1.2 * k as f64 * (-(b - a) * t).exp() };
    Ok(ExtinctionBounds { extinction, survival: 1.0 - extinction, bound })
}

/// Law of the normalised limit `W = lim e^-sigma t Z(t)` of the type-10
/// branching approximation: an atom at 0 of mass `(1 - sigma + rho) /
/// (1 + sigma + rho)` and, given `W > 0`, an exponential with mean
/// `(1 + sigma + rho) / (2 sigma)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivorLimit {
    pub atom: f64,
    pub mean: f64,
}

impl SurvivorLimit {
    pub fn new(sigma: f64, rho: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return invalid("branching limit needs sigma > 0");
        }
        Ok(SurvivorLimit { atom: (1.0 - sigma + rho) / (1.0 + sigma + rho), mean: (1.0 + sigma + rho) / (2.0 * sigma) })
    }

    pub fn survival(&self) -> f64 {
        1.0 - self.atom
    }

    /// Conditional density of `W` given `W > 0`.
    pub fn density(&self, w: f64) -> f64 {
        if w < 0.0 {
            0.0
        } else {
            (-w / self.mean).exp() / self.mean
        }
    }

    /// Conditional quantile of `W` given `W > 0`.
    pub fn quantile(&self, u: f64) -> f64 {
        -self.mean * (-u).ln_1p()
    }
}

/// Birth-death process for the double mutant driven by a deterministic
/// background `(X10, X01)`, with `X00 = 1 - X10 - X01 - X11` clipped at 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecombinantProcess {
    pub sigma: f64,
    pub gamma: f64,
    pub rho: f64,
    pub two_n: f64,
    pub levels: usize,
}

impl RecombinantProcess {
    pub fn new(params: &ModelParams) -> Self {
        RecombinantProcess {
            sigma: params.sigma,
            gamma: params.gamma,
            rho: params.rho,
            two_n: params.two_n as f64,
            levels: establishment_count(params.two_n) as usize,
        }
    }

    /// `(dX10, dX01)` of the background.
    pub fn background_drift(&self, x10: f64, x01: f64) -> (f64, f64) {
        let (s, g) = (self.sigma, self.gamma);
        (x10 * (s * (1.0 - x10) - s * g * x01), x01 * (s * g * (1.0 - x01) - s * x10))
    }

    /// `(birth, death)` at count `k` with background `(x10, x01)`.
    pub fn rates_at_level(&self, k: usize, x10: f64, x01: f64) -> (f64, f64) {
        let (s, g, rho) = (self.sigma, self.gamma, self.rho);
        let z = k as f64 / self.two_n;
        let nz = 0.5 * k as f64;
        let n = 0.5 * self.two_n;
        let x00 = (1.0 - x10 - x01 - z).max(0.0);
        let birth = nz * ((1.0 + s * (1.0 + g)) * (1.0 - z) - s * x10 - s * g * x01)
            + rho * n * (2.0 * x10 * x01 + x10 * z + x01 * z);
        let death =
            nz * ((1.0 - s * (1.0 + g)) * (1.0 - z) + s * x10 + s * g * x01) + rho * n * z * (2.0 * x00 + x01 + x10);
        (birth.max(0.0), death.max(0.0))
    }

    /// Death/birth ratio once type 10 has fixed in the background.
    pub fn late_ratio(&self) -> f64 {
        let sg = self.sigma * self.gamma;
        (1.0 - sg + self.rho) / (1.0 + sg + self.rho)
    }

    /// Time after which the background is within `tol` of pure type 10.
    pub fn settle_time(&self, x10: f64, x01: f64, tol: f64) -> Result<f64> {
        let h = 0.1 / self.sigma.max(1e-12);
        let max_t = 1e4 / (self.sigma * self.gamma.min(1.0 - self.gamma)).max(1e-12);
        let (mut a, mut b, mut t) = (x10, x01, 0.0);
        let f = |a: f64, b: f64| self.background_drift(a, b);
        while t < max_t {
            if b < tol && (1.0 - a - b).abs() < tol {
                return Ok(t);
            }
            let (k1a, k1b) = f(a, b);
            let (k2a, k2b) = f(a + 0.5 * h * k1a, b + 0.5 * h * k1b);
            let (k3a, k3b) = f(a + 0.5 * h * k2a, b + 0.5 * h * k2b);
            let (k4a, k4b) = f(a + h * k3a, b + h * k3b);
            a += h / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a);
            b += h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b);
            t += h;
        }
        Err(SweepError::EstimationFailed(format!("background did not settle by t = {max_t}")))
    }

    /// Probability that the double mutant, absent at the start, eventually
    /// reaches the threshold count, with the background started at
    /// `(x10, x01)`.
    pub fn threshold_probability(&self, x10: f64, x01: f64, solver: &SolverOptions) -> Result<f64> {
        let horizon = self.settle_time(x10, x01, 1e-8)?;
        let mut p0 = vec![0.0; self.levels + 1];
        p0[0] = 1.0;
        let sol = integrate_refined(self, &p0, &[x10, x01], horizon, &[], solver)?;
        Ok(eventual_hit_probability(sol.last(), self.late_ratio()))
    }

    /// Probability that some recombinant lineage survives forever, from the
    /// survival equation of the linearised process (`X11 -> 0` in the
    /// rates), with the background started at `(x10, x01)`.
    pub fn survival_probability(&self, x10: f64, x01: f64, solver: &SolverOptions) -> Result<f64> {
        let horizon = self.settle_time(x10, x01, 1e-8)?;
        let mut steps = ((horizon * self.sigma / solver.cfl.max(1e-6)).ceil() as usize).max(64);
        let mut prev = self.survival_with_steps(x10, x01, horizon, steps);
        let mut change = f64::INFINITY;
        for _ in 0..solver.max_halvings.max(1) {
            steps *= 2;
            let next = self.survival_with_steps(x10, x01, horizon, steps);
            change = (next - prev).abs() / next.abs().max(1e-300);
            if (next - prev).abs() <= solver.rel_tol * next.abs() + 1e-15 {
                return Ok(next);
            }
            prev = next;
        }
        Err(SweepError::RefinementFailed { halvings: solver.max_halvings, change })
    }

    /// Per-capita `(birth, death)` of a small recombinant lineage and the
    /// recombinant immigration rate.
    fn linear_rates(&self, x10: f64, x01: f64) -> (f64, f64, f64) {
        let (s, g, rho) = (self.sigma, self.gamma, self.rho);
        let x00 = (1.0 - x10 - x01).max(0.0);
        let birth = 0.5 * ((1.0 + s * (1.0 + g)) - s * x10 - s * g * x01) + 0.5 * rho * (x10 + x01);
        let death = 0.5 * ((1.0 - s * (1.0 + g)) + s * x10 + s * g * x01) + 0.5 * rho * (2.0 * x00 + x01 + x10);
        (birth.max(0.0), death.max(0.0), rho * self.two_n * x10 * x01)
    }

    fn survival_with_steps(&self, x10: f64, x01: f64, horizon: f64, steps: usize) -> f64 {
        // Background forward on the half-step grid, then the extinction
        // probability of one lineage backwards from the pure-10 terminal value.
        let h = horizon / steps as f64;
        let mut bg = Vec::with_capacity(2 * steps + 1);
        let (mut a, mut b) = (x10, x01);
        bg.push((a, b));
        let hh = 0.5 * h;
        for _ in 0..2 * steps {
            let (k1a, k1b) = self.background_drift(a, b);
            let (k2a, k2b) = self.background_drift(a + 0.5 * hh * k1a, b + 0.5 * hh * k1b);
            let (k3a, k3b) = self.background_drift(a + 0.5 * hh * k2a, b + 0.5 * hh * k2b);
            let (k4a, k4b) = self.background_drift(a + hh * k3a, b + hh * k3b);
            a += hh / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a);
            b += hh / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b);
            bg.push((a, b));
        }
        let f = |idx: usize, u: f64| {
            let (p, q) = bg[idx];
            let (birth, death, imm) = self.linear_rates(p, q);
            ((birth + death) * u - birth * u * u - death, imm * (1.0 - u))
        };
        let mut u = self.late_ratio();
        let mut integral = 0.0;
        for i in (0..steps).rev() {
            let (hi, mid, lo) = (2 * i + 2, 2 * i + 1, 2 * i);
            // Backwards in time: step -h.
            let (k1u, k1i) = f(hi, u);
            let (k2u, k2i) = f(mid, u - 0.5 * h * k1u);
            let (k3u, k3i) = f(mid, u - 0.5 * h * k2u);
            let (k4u, k4i) = f(lo, u - h * k3u);
            u -= h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
            integral += h / 6.0 * (k1i + 2.0 * k2i + 2.0 * k3i + k4i);
        }
        1.0 - (-integral).exp()
    }

    /// Establishment probability under the chosen success criterion.
    pub fn establishment_probability(
        &self,
        x10: f64,
        x01: f64,
        threshold: Threshold,
        solver: &SolverOptions,
    ) -> Result<f64> {
        match threshold {
            Threshold::Establishment => self.survival_probability(x10, x01, solver),
            Threshold::Delta11 => self.threshold_probability(x10, x01, solver),
        }
    }
}

/// What counts as success for the double mutant in the heuristic estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Threshold {
    /// Some recombinant lineage survives forever.
    #[default]
    Establishment,
    /// The count eventually reaches `ceil(log 2N)`. Far from establishment
    /// when `sigma * gamma * log 2N` is small.
    Delta11,
}

impl RateModel for RecombinantProcess {
    fn top(&self) -> usize {
        self.levels
    }

    fn aux_dim(&self) -> usize {
        2
    }

    fn aux_deriv(&self, _t: f64, aux: &[f64], daux: &mut [f64]) {
        (daux[0], daux[1]) = self.background_drift(aux[0], aux[1]);
    }

    fn rates(&self, _t: f64, aux: &[f64], birth: &mut [f64], death: &mut [f64]) {
        for k in 0..=self.levels {
            (birth[k], death[k]) = self.rates_at_level(k, aux[0], aux[1]);
        }
    }

    fn rate_bound(&self, _t0: f64, _t1: f64, aux: &[f64]) -> f64 {
        // The background stays within [0, max(1, start)], and the rates are
        // bounded by their values with every background term at that cap.
        let (s, g, rho) = (self.sigma, self.gamma, self.rho);
        let xm = aux.iter().copied().fold(1.0, f64::max);
        let kf = self.levels as f64;
        let n = 0.5 * self.two_n;
        let zk = kf / self.two_n;
        let birth = 0.5 * kf * (1.0 + s * (1.0 + g)) + rho * n * (2.0 * xm * xm + 2.0 * xm * zk);
        let death = 0.5 * kf * (1.0 + s * xm + s * g * xm) + rho * n * zk * (2.0 + 2.0 * xm);
        (birth + death) * 1.01
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseOneBOptions {
    /// Exponent of the branching phase length; defaults to the largest value
    /// allowed, `(zeta - gamma) / (2 - gamma)`.
    pub epsilon: Option<f64>,
    pub threshold: Threshold,
    pub nodes: usize,
    pub solver: SolverOptions,
}

impl Default for CaseOneBOptions {
    fn default() -> Self {
        CaseOneBOptions { epsilon: None, threshold: Threshold::default(), nodes: 64, solver: SolverOptions::default() }
    }
}

/// Largest branching-phase exponent for which `X01(t1) <= (2N)^(-2 eps)`.
pub fn case1b_max_epsilon(zeta: f64, gamma: f64) -> f64 {
    (zeta - gamma) / (2.0 - gamma)
}

/// Background at the end of the branching phase for a late arrival.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseOneBState {
    pub z10: f64,
    pub z01: f64,
}

/// Heuristic fixation probability of the double mutant when the second
/// mutation arrives after the first sweep has passed `(2N)^-gamma`
/// (`gamma < zeta < 1`).
pub fn case1b_fixation_prob(params: &ModelParams, zeta: f64, opts: &CaseOneBOptions) -> Result<f64> {
    params.validate()?;
    let (s, g) = (params.sigma, params.gamma);
    if !(g < zeta && zeta < 1.0) {
        return Err(SweepError::RegimeMismatch(format!(
            "late-arrival estimate needs gamma < zeta < 1 (zeta = {zeta}, gamma = {g})"
        )));
    }
    if !(s > 0.0 && g > 0.0) {
        return invalid("late-arrival estimate needs sigma > 0 and gamma > 0");
    }
    let max_eps = case1b_max_epsilon(zeta, g);
    let eps = opts.epsilon.unwrap_or(max_eps);
    if !(eps > 0.0 && eps <= max_eps * (1.0 + 1e-12)) {
        return invalid(format!("epsilon = {eps} must lie in (0, {max_eps}]"));
    }
    if params.rho == 0.0 {
        return Ok(0.0);
    }
    let big = params.two_n as f64;
    let w = SurvivorLimit::new(s, params.rho)?;
    let z01 = big.powf((1.0 - eps) * g - zeta);
    let scale = big.powf(-eps);
    let process = RecombinantProcess::new(params);
    // Type 10 cannot exceed the room left by type 01; draws beyond that are
    // lumped at the cap.
    let x_cap = 1.0 - z01;
    let u_cap = 1.0 - (-x_cap / (w.mean * scale)).exp();
    let rule = GaussLegendre::new(opts.nodes);
    let mut total = 0.0;
    for (u, weight) in rule.mapped(0.0, u_cap) {
        let x10 = scale * w.quantile(u);
        total += weight * process.establishment_probability(x10, z01, opts.threshold, &opts.solver)?;
    }
    if u_cap < 1.0 {
        total += (1.0 - u_cap) * process.establishment_probability(x_cap, z01, opts.threshold, &opts.solver)?;
    }
    Ok(w.survival() * total)
}

/// Level at which type 10 is handed from the branching approximation to the
/// deterministic background in the moderate-N estimate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Delta10 {
    /// `(2N)^-1/2`.
    #[default]
    InverseSqrt,
    /// The schedule constant `c_10_3`, close to 1 for realistic 2N.
    Schedule,
    Fixed(f64),
}

/// Source of the law of the hand-over time.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum HittingTime {
    /// From the exponential branching limit.
    #[default]
    Branching,
    /// Empirical hand-over times, for example from simulation.
    Samples(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModerateOptions {
    pub delta10: Delta10,
    pub hitting_time: HittingTime,
    pub threshold: Threshold,
    pub nodes: usize,
    pub solver: SolverOptions,
}

impl Default for ModerateOptions {
    fn default() -> Self {
        ModerateOptions {
            delta10: Delta10::default(),
            hitting_time: HittingTime::default(),
            threshold: Threshold::default(),
            nodes: 64,
            solver: SolverOptions::default(),
        }
    }
}

/// Law of the time `T` at which type 10 reaches `delta10`, from
/// `X10(t) ~ e^(sigma t) W / 2N` with `W` conditioned on survival.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandOverTime {
    pub sigma: f64,
    /// `2N * delta10`.
    pub level: f64,
    pub w: SurvivorLimit,
}

impl HandOverTime {
    pub fn time_for(&self, w: f64) -> f64 {
        (self.level / w).ln() / self.sigma
    }

    pub fn density(&self, t: f64) -> f64 {
        let w = self.level * (-self.sigma * t).exp();
        self.w.density(w) * self.sigma * w
    }
}

pub fn resolve_delta10(params: &ModelParams, zeta: f64, d: Delta10) -> Result<f64> {
    let v = match d {
        Delta10::InverseSqrt => (params.two_n as f64).powf(-0.5),
        Delta10::Schedule => phase_schedule(params, zeta)?.c_10_3,
        Delta10::Fixed(v) => v,
    };
    if !(v > 0.0 && v < 1.0) {
        return invalid(format!("delta10 = {v} must lie in (0, 1)"));
    }
    Ok(v)
}

/// Heuristic fixation probability of the double mutant for moderate 2N, for
/// a second mutation arriving in a type-00 individual when `X01 =
/// (2N)^-zeta`.
pub fn moderate_n_fixation_prob(params: &ModelParams, zeta: f64, opts: &ModerateOptions) -> Result<f64> {
    params.validate()?;
    let s = params.sigma;
    if !(zeta > 0.0 && zeta < 1.0) {
        return invalid(format!("zeta = {zeta} must lie in (0, 1)"));
    }
    if !(s > 0.0) {
        return invalid("moderate-N estimate needs sigma > 0");
    }
    if params.rho == 0.0 {
        return Ok(0.0);
    }
    let big = params.two_n as f64;
    let delta10 = resolve_delta10(params, zeta, opts.delta10)?;
    let w = SurvivorLimit::new(s, params.rho)?;
    let law = HandOverTime { sigma: s, level: big * delta10, w };
    let x01_start = big.powf(-zeta);
    let process = RecombinantProcess::new(params);
    let p_est = |t: f64| {
        let x01 = logistic(x01_start, s * params.gamma, t).min(1.0 - delta10);
        process.establishment_probability(delta10, x01, opts.threshold, &opts.solver)
    };
    let mean = match &opts.hitting_time {
        HittingTime::Branching => {
            let rule = GaussLegendre::new(opts.nodes);
            let mut total = 0.0;
            for (u, weight) in rule.mapped(0.0, 1.0) {
                total += weight * p_est(law.time_for(w.quantile(u)))?;
            }
            total
        }
        HittingTime::Samples(times) => {
            if times.is_empty() {
                return invalid("empirical hand-over law needs at least one sample");
            }
            let mut total = 0.0;
            for &t in times {
                total += p_est(t)?;
            }
            total / times.len() as f64
        }
    };
    Ok(w.survival() * mean)
}
