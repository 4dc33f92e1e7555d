//! Logistic curves, the phase times of the first and second sweep, and the
//! constants that parameterize the large-population fixation probability.
//!
//! All logarithms are natural. The constants are asymptotic objects; at a
//! finite population size they are evaluated literally and
//! [`consistency_check`] reports which of the large-N inequalities fail.

use crate::error::{Result, SweepError};
use crate::moran::ModelParams;

/// Solution of `y' = theta * y * (1 - y)` with `y(0) = y0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticCurve {
    pub y0: f64,
    pub theta: f64,
}

impl LogisticCurve {
    pub fn new(y0: f64, theta: f64) -> Result<Self> {
        if !(y0 > 0.0 && y0 < 1.0) {
            return Err(SweepError::InvalidParameter(format!("logistic y0 = {y0} must lie in (0, 1)")));
        }
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(SweepError::InvalidParameter(format!("logistic rate {theta} must be positive")));
        }
        Ok(LogisticCurve { y0, theta })
    }

    pub fn value(&self, t: f64) -> f64 {
        logistic(self.y0, self.theta, t)
    }

    /// Time at which the curve reaches `y`.
    pub fn time_to(&self, y: f64) -> f64 {
        ((1.0 / self.y0 - 1.0) / (1.0 / y - 1.0)).ln() / self.theta
    }
}

/// `[1 + (1/y0 - 1) e^(-theta t)]^-1`, valid for any real `t`.
pub fn logistic(y0: f64, theta: f64, t: f64) -> f64 {
    1.0 / (1.0 + (1.0 / y0 - 1.0) * (-theta * t).exp())
}

/// Time for `L(.; c1, theta)` to go from `c1` to `1 - c1`,
/// `2 log((1 - c1) / c1) / theta`. Negative when `c1 > 1/2`.
pub fn middle_phase_length(c1: f64, theta: f64) -> f64 {
    2.0 * ((1.0 - c1) / c1).ln() / theta
}

/// Phase times and constants for the regime `zeta < gamma < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSchedule {
    pub log_two_n: f64,
    pub a0: f64,
    pub a1: f64,
    pub b_10_0: f64,
    pub b_10_2: f64,
    pub b_10_3: f64,
    pub b_01_0: f64,
    pub b_01_1: f64,
    pub b_01_2: f64,
    pub delta_01_1: f64,
    pub delta_10_0: f64,
    pub delta_10_1: f64,
    pub delta_10_2: f64,
    pub c_10_0: f64,
    pub c_10_2: f64,
    pub c_10_3: f64,
    pub c_01_0: f64,
    pub c_01_1: f64,
    pub c_01_2: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// Establishment threshold `ceil(log 2N) / 2N`.
    pub delta11: f64,
    /// `ceil(log 2N)`, the establishment threshold as a count.
    pub delta11_count: u64,
    pub t0: f64,
    pub t_early: f64,
    /// Time for `L(.; c1, sigma (1 - gamma))` to go from `c1` to `1 - c1`.
    /// Non-positive when the literal `c1` is at least 1/2.
    pub t_mid: f64,
    pub t_late: f64,
}

pub fn establishment_count(two_n: u64) -> u64 {
    (two_n as f64).ln().ceil() as u64
}

pub fn phase_schedule(params: &ModelParams, zeta: f64) -> Result<PhaseSchedule> {
    let ModelParams { two_n, sigma, gamma, rho } = *params;
    if !(zeta > 0.0 && zeta < gamma && gamma < 1.0) {
        return Err(SweepError::RegimeMismatch(format!(
            "phase schedule needs 0 < zeta < gamma < 1 (zeta = {zeta}, gamma = {gamma})"
        )));
    }
    if sigma <= 0.0 {
        return Err(SweepError::InvalidParameter("phase schedule needs sigma > 0".into()));
    }
    if sigma * (1.0 - gamma) <= rho {
        return Err(SweepError::RegimeMismatch(format!(
            "sigma (1 - gamma) = {} must exceed rho = {rho}",
            sigma * (1.0 - gamma)
        )));
    }
    let big = two_n as f64;
    let log_two_n = big.ln();
    let pow = |b: f64| (-b * log_two_n).exp();
    let ratio = zeta / gamma;

    let a0 = zeta / (3.0 * gamma);
    let a1 = (zeta / (4.0 * gamma)).min((1.0 - ratio) / 4.0);
    let b_10_0 = a0 + a1 - 1.0;
    let b_10_2 = (1.0 - ratio) / 2.0;
    let b_10_3 = gamma * b_10_2 / 90.0;
    let b_01_0 = zeta / 3.0;
    let b_01_1 = gamma * b_10_2 / 3.0;
    let b_01_2 = b_01_1;
    let delta_01_1 = gamma * b_10_2 / 9.0;
    let delta_10_2 = delta_01_1 / 60.0;
    let delta_10_1 = (a0 - a1) / 4.0;
    let c_10_0 = pow(b_10_0);
    let c_01_0 = pow(b_01_0);
    let delta_10_0 = big * c_10_0 * (c_10_0 + c_01_0);
    let c_10_2 = pow(b_10_2);
    let c_10_3 = pow(b_10_3);
    let c_01_1 = pow(b_01_1);
    let c_01_2 = pow(b_01_2);
    let c1 = c_10_3;
    let c2 = pow(delta_01_1 / 2.0);
    let c3 = pow(delta_10_2);

    let delta11_count = establishment_count(two_n);
    let mid_rate = sigma * (1.0 - gamma);
    Ok(PhaseSchedule {
        log_two_n,
        a0,
        a1,
        b_10_0,
        b_10_2,
        b_10_3,
        b_01_0,
        b_01_1,
        b_01_2,
        delta_01_1,
        delta_10_0,
        delta_10_1,
        delta_10_2,
        c_10_0,
        c_10_2,
        c_10_3,
        c_01_0,
        c_01_1,
        c_01_2,
        c1,
        c2,
        c3,
        delta11: delta11_count as f64 / big,
        delta11_count,
        t0: a0 / sigma * log_two_n,
        t_early: 1.01 * log_two_n / (mid_rate - rho),
        t_mid: middle_phase_length(c1, mid_rate),
        t_late: 1.02 / (sigma * gamma) * log_two_n,
    })
}

/// One inequality of the large-N family, evaluated at a finite 2N.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
}

/// Evaluates the inequalities the constants must satisfy for sufficiently
/// large N and returns the ones that fail (or cannot be evaluated) at the
/// schedule's population size.
pub fn consistency_check(schedule: &PhaseSchedule, params: &ModelParams, zeta: f64) -> Vec<Violation> {
    let gamma = params.gamma;
    let s = schedule;
    let ln = s.log_two_n;
    let mut out = Vec::new();
    let mut require = |name: &'static str, lhs: f64, rhs: f64, strict: bool| {
        let ok = if strict { lhs > rhs } else { lhs >= rhs };
        if !ok || !lhs.is_finite() || !rhs.is_finite() {
            out.push(Violation { name, lhs, rhs });
        }
    };

    // Exponent bookkeeping behind the three displayed inequalities.
    require("exponent_budget", 1.0 - zeta / gamma, s.a1 + s.b_10_2 + s.b_01_2 / gamma, true);
    // c1, c2, c3 decay as positive powers of 1/2N.
    for (name, exponent) in [("c1_decays", s.b_10_3), ("c2_decays", s.delta_01_1 / 2.0), ("c3_decays", s.delta_10_2)] {
        require(name, exponent, 0.0, true);
    }

    let zeta_term = ((zeta * ln).exp() - 1.0).ln() / gamma;
    // log((2N)^(1 - a1) - (2N)^a0), NaN when the difference is not positive.
    let head = ((1.0 - s.a1) * ln).exp() - (s.a0 * ln).exp();
    let log_head = if head > 0.0 { head.ln() } else { f64::NAN };
    let c102_term = (1.0 / (0.9 * s.c_10_2) - 1.0).ln();
    let c012_term = (1.0 / s.c_01_2 - 1.0).ln();

    require("growth_before_c10_2", (1.0 - s.a1) * ln + s.c_10_2.ln() + s.c_01_2.ln() / gamma, zeta_term, true);
    require(
        "margin_over_01_sweep",
        log_head - c102_term - c012_term / gamma,
        zeta_term + (1.0f64 / 0.9).ln() / gamma,
        true,
    );
    let overlap = ((1.0 / (0.9 * s.c_01_1) - 1.0) / (1.0 / s.c_01_1 - 1.0)).ln();
    let sigma_t01 = (((zeta * ln).exp() - 1.0).ln() + c012_term + overlap) / gamma;
    require("reaches_c10_2_after_01_late", log_head - c102_term, sigma_t01, false);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(two_n: u64) -> ModelParams {
        ModelParams::with_rho_2n(two_n, 0.02, 0.6, 0.2).unwrap()
    }

    #[test]
    fn logistic_basics() {
        let c = LogisticCurve::new(0.2, 0.7).unwrap();
        assert_eq!(c.value(0.0), 0.2);
        for t in [-3.0, 0.5, 4.0] {
            let sym = logistic(0.5, 1.3, t);
            assert!((sym - 1.0 / (1.0 + (-1.3f64 * t).exp())).abs() < 1e-15);
        }
        let c1: f64 = 0.01;
        let theta = 0.02 * 0.4;
        let t_mid = middle_phase_length(c1, theta);
        assert!((logistic(c1, theta, t_mid) - (1.0 - c1)).abs() < 1e-12);
        let c = LogisticCurve::new(c1, theta).unwrap();
        assert!((c.time_to(1.0 - c1) - t_mid).abs() < 1e-9);
    }

    #[test]
    fn logistic_solves_its_ode() {
        let (y0, theta) = (0.05, 0.3);
        for h in [1e-2, 5e-3] {
            let mut worst: f64 = 0.0;
            for k in 0..40 {
                let t = k as f64 * 0.5;
                let fd = (logistic(y0, theta, t + h) - logistic(y0, theta, t - h)) / (2.0 * h);
                let y = logistic(y0, theta, t);
                worst = worst.max((fd - theta * y * (1.0 - y)).abs());
            }
            // Central differences are O(h^2) with a small constant here.
            assert!(worst < 1e-2 * h * h, "h = {h}: {worst}");
        }
    }

    #[test]
    fn logistic_time_additivity() {
        let (y0, theta) = (0.03, 0.8);
        for &(s, t) in &[(0.0, 1.0), (2.5, 3.0), (7.0, 0.1), (-1.0, 4.0)] {
            let direct = logistic(y0, theta, s + t);
            let composed = logistic(logistic(y0, theta, s), theta, t);
            assert!((direct - composed).abs() < 1e-12);
        }
    }

    #[test]
    fn schedule_values() {
        let s = phase_schedule(&p(10_000), 0.3).unwrap();
        assert!((s.a0 - 1.0 / 6.0).abs() < 1e-15);
        assert!((s.t0 - (1.0 / 6.0) / 0.02 * 1e4f64.ln()).abs() < 1e-9);
        assert!((s.t0 - 76.75).abs() < 0.01);
        assert_eq!(s.delta11_count, 10);
        assert!((s.delta11 - 0.001).abs() < 1e-15);
        assert!((s.b_10_2 - 0.25).abs() < 1e-15);
        assert!((s.b_10_3 - 0.6 * 0.25 / 90.0).abs() < 1e-15);
        assert!((s.c1 - 1e4f64.powf(-0.6 * 0.25 / 90.0)).abs() < 1e-15);
        let t_mid = 2.0 * ((1.0 - s.c1) / s.c1).ln() / (0.02 * 0.4);
        assert_eq!(s.t_mid, t_mid);
        assert!((s.c2 - 1e4f64.powf(-s.delta_01_1 / 2.0)).abs() < 1e-15);
        assert!((s.c3 - 1e4f64.powf(-s.delta_10_2)).abs() < 1e-15);
        assert!((s.t_late - 1.02 / 0.012 * 1e4f64.ln()).abs() < 1e-9);
        assert!((s.t_early - 1.01 * 1e4f64.ln() / (0.008 - 0.2 / 1e4)).abs() < 1e-9);
    }

    #[test]
    fn schedule_rejects_other_regimes() {
        assert!(matches!(phase_schedule(&p(10_000), 0.7), Err(SweepError::RegimeMismatch(_))));
        let fast_rec = ModelParams::new(10_000, 0.02, 0.6, 0.01).unwrap();
        assert!(matches!(phase_schedule(&fast_rec, 0.3), Err(SweepError::RegimeMismatch(_))));
    }

    #[test]
    fn schedule_is_continuous() {
        let base = phase_schedule(&ModelParams::new(10_000, 0.02, 0.6, 1e-5).unwrap(), 0.3).unwrap();
        let near =
            phase_schedule(&ModelParams::new(10_000, 0.02 + 1e-9, 0.6 + 1e-9, 1e-5).unwrap(), 0.3 + 1e-9).unwrap();
        for (a, b) in [(base.t0, near.t0), (base.t_mid, near.t_mid), (base.t_late, near.t_late), (base.c1, near.c1)] {
            assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0));
        }
    }

    #[test]
    fn consistency_at_large_and_small_n() {
        let big = p(100_000_000);
        let s = phase_schedule(&big, 0.3).unwrap();
        assert!(consistency_check(&s, &big, 0.3).is_empty(), "{:?}", consistency_check(&s, &big, 0.3));
        let small = ModelParams::new(8, 0.02, 0.6, 0.0).unwrap();
        let s = phase_schedule(&small, 0.3).unwrap();
        let _ = consistency_check(&s, &small, 0.3);
    }

    #[test]
    fn consistency_is_monotone_in_population_size() {
        let sizes: Vec<u64> = (2..=38).map(|k| 10f64.powf(k as f64 / 2.0) as u64).collect();
        for &(sigma, gamma) in &[(0.02, 0.6), (0.05, 0.8), (0.1, 0.3)] {
            for &zeta in &[0.05, 0.1, 0.2] {
                if zeta >= gamma {
                    continue;
                }
                let mut passed = false;
                for &two_n in &sizes {
                    let params = ModelParams::new(two_n, sigma, gamma, 0.0).unwrap();
                    let s = phase_schedule(&params, zeta).unwrap();
                    let ok = consistency_check(&s, &params, zeta).is_empty();
                    assert!(!(passed && !ok), "regressed at 2N = {two_n}, ({sigma}, {gamma}, {zeta})");
                    passed |= ok;
                }
            }
        }
    }
}
