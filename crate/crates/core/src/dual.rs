//! Population-averaged metrics under a uniform initial belief, per-patient
//! Lagrangians, and the bisection dual bound for a capacity-constrained cohort.

use serde::{Deserialize, Serialize};

use crate::dynamics::{powu, Horizon, PatientParams, Threshold};
use crate::error::{ModelError, Result};
use crate::metrics::{MetricPair, RegimeTag};

/// Below this `|beta - rho|` the critical-case closed form is used.
pub const CRITICAL_GAP: f64 = 1e-9;

/// Initial belief of one patient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Initial {
    Uniform,
    Fixed(f64),
}

/// Initial beliefs of a cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CohortInitial {
    Uniform,
    Fixed(Vec<f64>),
}

impl CohortInitial {
    fn patient(&self, n: usize) -> Initial {
        match self {
            CohortInitial::Uniform => Initial::Uniform,
            CohortInitial::Fixed(x) => Initial::Fixed(x[n]),
        }
    }
}

impl PatientParams {
    /// `(F, G)` averaged over a uniform initial belief.
    pub fn uniform_metrics(&self, z: Threshold) -> MetricPair {
        let (r, b, rho, zi) = (self.r(), self.beta(), self.rho(), self.z_inf());
        let phi_p = self.disc_passive_sum(self.p(), Horizon::Infinite);
        match self.classify_threshold(z) {
            RegimeTag::BelowP => {
                let z = z.value().max(0.0);
                MetricPair::new(r / (1.0 - b) - 0.5 * r * z * z, 1.0 / (1.0 - b) - z)
            }
            RegimeTag::Middle(s) => {
                let zv = z.value();
                let c = self.cycle_consts(s);
                let t = s + 1;
                let share = self.hitting_discount_mass(zv, t);
                MetricPair::new(r * self.passive_mass(zv, t) + c.k_f * share, c.k_g * share)
            }
            RegimeTag::AboveZinf => {
                let zv = z.value();
                let integral = zv * (1.0 - zi) / (1.0 - b) + (zi * zv - 0.5 * zv * zv) / (1.0 - b * rho);
                MetricPair::new(r * (integral + (1.0 - zv) * (1.0 + b * phi_p)), 1.0 - zv)
            }
            RegimeTag::AlwaysPassive => {
                MetricPair::new(r * ((1.0 - zi) / (1.0 - b) + (zi - 0.5) / (1.0 - b * rho)), 0.0)
            }
        }
    }

    // Integral over x in [0, 1] of beta^{tau(x, z)}; t = tau(0, z).
    fn hitting_discount_mass(&self, z: f64, t: u64) -> f64 {
        let (b, rho, zi) = (self.beta(), self.rho(), self.z_inf());
        let head = 1.0 - z;
        if (b - rho).abs() < CRITICAL_GAP {
            return head + powu(rho, t) * zi + (zi - z) * ((1.0 - rho) * (t - 1) as f64 - rho);
        }
        // sum_{k=1}^{t-1} (beta/rho)^k, evaluated without cancellation near beta = rho
        let d = (b - rho) / rho;
        let n = (t - 1) as f64;
        let ratio_pow = (n * d.ln_1p()).exp();
        let geom = (1.0 + d) * (n * d.ln_1p()).exp_m1() / d;
        head + powu(b, t) * zi + (zi - z) * ((1.0 - rho) * geom - b * ratio_pow)
    }

    // Integral over x in [0, z] of Phi_{tau(x, z)}(x); t = tau(0, z).
    fn passive_mass(&self, z: f64, t: u64) -> f64 {
        let (b, rho, zi) = (self.beta(), self.rho(), self.z_inf());
        let preimage = |k: u64| -> f64 {
            if k >= t {
                0.0
            } else {
                zi + (z - zi) / powu(rho, k)
            }
        };
        let mut total = 0.0;
        let mut upper = preimage(0);
        for k in 1..=t {
            let lower = preimage(k);
            let bk = (1.0 - powu(b * rho, k)) / (1.0 - b * rho);
            let ak = (1.0 - powu(b, k)) / (1.0 - b) * (1.0 - zi) + bk * zi;
            total += ak * (upper - lower) - 0.5 * bk * (upper * upper - lower * lower);
            upper = lower;
        }
        total
    }

    /// `(F, G)` of the `z`-policy from the given initial belief.
    pub fn initial_metrics(&self, z: Threshold, initial: Initial) -> MetricPair {
        match initial {
            Initial::Uniform => self.uniform_metrics(z),
            Initial::Fixed(x) => self.threshold_metrics(x, z),
        }
    }

    /// Single-patient Lagrangian `sup_z F(z) - (lambda + cost) G(z)`.
    pub fn patient_lagrangian(&self, lambda: f64, initial: Initial) -> f64 {
        let m = self.initial_metrics(self.optimal_threshold(lambda), initial);
        m.reward - (lambda + self.cost()) * m.work
    }
}

/// How the minimizing price was located.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DualMode {
    AtZero,
    AtMax,
    Interior,
}

/// Outcome of the bisection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualResult {
    pub lambda_star: f64,
    /// Certified upper bound on the optimal discounted cohort reward.
    pub bound: f64,
    /// Dual function at `lambda_star`.
    pub bound_at_star: f64,
    pub bracket: (f64, f64),
    pub bracket_width: f64,
    pub derivative_at_star: f64,
    pub iterations: u32,
    pub iteration_cap: u32,
    pub lambda_max: f64,
    pub mode: DualMode,
}

impl DualResult {
    /// Bound per patient per period, `(1 - beta) bound / N`.
    pub fn normalized(&self, cohort_size: usize, beta: f64) -> f64 {
        (1.0 - beta) * self.bound / cohort_size as f64
    }
}

/// Common discount factor of a nonempty cohort.
pub fn cohort_beta(cohort: &[PatientParams]) -> Result<f64> {
    let first = cohort.first().ok_or(ModelError::EmptyCohort)?.beta();
    match cohort.iter().find(|m| m.beta() != first) {
        Some(m) => Err(ModelError::MixedDiscount(first, m.beta())),
        None => Ok(first),
    }
}

fn check_cohort(cohort: &[PatientParams], capacity: usize, initial: &CohortInitial) -> Result<f64> {
    let beta = cohort_beta(cohort)?;
    if capacity > cohort.len() {
        return Err(ModelError::CapacityExceedsCohort { capacity, size: cohort.len() });
    }
    if let CohortInitial::Fixed(x) = initial {
        if x.len() != cohort.len() {
            return Err(ModelError::InitialLength { expected: cohort.len(), got: x.len() });
        }
        if let Some(&bad) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ModelError::BeliefOutOfRange(bad));
        }
    }
    Ok(beta)
}

fn derivative(cohort: &[PatientParams], budget: f64, lambda: f64, initial: &CohortInitial) -> f64 {
    let work: f64 = cohort
        .iter()
        .enumerate()
        .map(|(n, m)| m.initial_metrics(m.optimal_threshold(lambda), initial.patient(n)).work)
        .sum();
    budget - work
}

fn dual_value(cohort: &[PatientParams], budget: f64, lambda: f64, initial: &CohortInitial) -> f64 {
    let total: f64 = cohort
        .iter()
        .enumerate()
        .map(|(n, m)| m.patient_lagrangian(lambda, initial.patient(n)))
        .sum();
    total + budget * lambda
}

/// Right derivative `M / (1 - beta) - sum_n G_n(z_n*(lambda))` of the dual.
pub fn dual_derivative(cohort: &[PatientParams], capacity: usize, lambda: f64, initial: &CohortInitial) -> Result<f64> {
    let beta = check_cohort(cohort, capacity, initial)?;
    Ok(derivative(cohort, capacity as f64 / (1.0 - beta), lambda, initial))
}

/// Dual function `sum_n L_n(lambda) + M lambda / (1 - beta)`.
pub fn dual_function(cohort: &[PatientParams], capacity: usize, lambda: f64, initial: &CohortInitial) -> Result<f64> {
    let beta = check_cohort(cohort, capacity, initial)?;
    Ok(dual_value(cohort, capacity as f64 / (1.0 - beta), lambda, initial))
}

/// Minimizes the dual over `[0, lambda_max]` by bisection on its right
/// derivative.
pub fn dual_bound(cohort: &[PatientParams], capacity: usize, epsilon: f64, initial: &CohortInitial) -> Result<DualResult> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(ModelError::NonPositiveTolerance(epsilon));
    }
    let beta = check_cohort(cohort, capacity, initial)?;
    let budget = capacity as f64 / (1.0 - beta);
    let lambda_max = cohort.iter().map(|m| m.lambda_max()).fold(0.0, f64::max);
    let iteration_cap = ((lambda_max / epsilon).log2().ceil().max(0.0) as u32) + 2;
    let finish = |lambda_star: f64, bound: f64, bracket: (f64, f64), deriv: f64, iterations: u32, mode: DualMode| {
        DualResult {
            lambda_star,
            bound,
            bound_at_star: dual_value(cohort, budget, lambda_star, initial),
            bracket,
            bracket_width: bracket.1 - bracket.0,
            derivative_at_star: deriv,
            iterations,
            iteration_cap,
            lambda_max,
            mode,
        }
    };

    let at_zero = derivative(cohort, budget, 0.0, initial);
    if at_zero >= 0.0 {
        let v = dual_value(cohort, budget, 0.0, initial);
        return Ok(finish(0.0, v, (0.0, 0.0), at_zero, 0, DualMode::AtZero));
    }
    let at_max = derivative(cohort, budget, lambda_max, initial);
    if at_max <= 0.0 {
        let v = dual_value(cohort, budget, lambda_max, initial);
        return Ok(finish(lambda_max, v, (lambda_max, lambda_max), at_max, 0, DualMode::AtMax));
    }

    let (mut lo, mut hi) = (0.0, lambda_max);
    let mut iterations = 0;
    while iterations < iteration_cap {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let d = derivative(cohort, budget, mid, initial);
        if d.abs() <= epsilon {
            let v = dual_value(cohort, budget, mid, initial);
            return Ok(finish(mid, v, (lo, hi), d, iterations, DualMode::Interior));
        }
        if d < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= epsilon {
            break;
        }
    }
    let star = 0.5 * (lo + hi);
    let d = derivative(cohort, budget, star, initial);
    let bound = dual_value(cohort, budget, hi, initial).max(dual_value(cohort, budget, star, initial));
    Ok(finish(star, bound, (lo, hi), d, iterations, DualMode::Interior))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn base() -> PatientParams {
        PatientParams::new(0.3, 0.2, 1.0, 0.95).unwrap()
    }

    fn at(z: f64) -> Threshold {
        Threshold::new(z).unwrap()
    }

    // Midpoint rule on a fine grid, refined around the policy switch points.
    fn brute_uniform(m: &PatientParams, z: Threshold, cells: usize) -> MetricPair {
        let mut acc = MetricPair::new(0.0, 0.0);
        let h = 1.0 / cells as f64;
        for i in 0..cells {
            let v = m.threshold_metrics((i as f64 + 0.5) * h, z);
            acc.reward += v.reward * h;
            acc.work += v.work * h;
        }
        acc
    }

    #[test]
    fn uniform_examples() {
        let m = base();
        let a = m.uniform_metrics(at(0.2));
        assert_abs_diff_eq!(a.reward, 19.98, epsilon = 1e-12);
        assert_abs_diff_eq!(a.work, 19.8, epsilon = 1e-12);
        let d = m.uniform_metrics(Threshold::AlwaysPassive);
        assert_abs_diff_eq!(d.reward, 8.190476190476, epsilon = 1e-9);
        assert_eq!(d.work, 0.0);
        let c = m.uniform_metrics(at(0.7));
        assert_abs_diff_eq!(c.reward, 8.676190476190, epsilon = 1e-9);
        assert_abs_diff_eq!(c.work, 0.3, epsilon = 1e-15);
        for z in [0.2, 0.35, 0.5, 0.55, 0.59, 0.7, 1.0] {
            let exact = m.uniform_metrics(at(z));
            let brute = brute_uniform(&m, at(z), 200_000);
            assert_abs_diff_eq!(exact.reward, brute.reward, epsilon = 1e-3);
            assert_abs_diff_eq!(exact.work, brute.work, epsilon = 1e-3);
        }
    }

    #[test]
    fn critical_branch_is_continuous_in_beta() {
        let m = PatientParams::new(0.03, 0.02, 1.0, 0.95).unwrap();
        for z in [0.1, 0.3, 0.5, 0.59] {
            let crit = m.uniform_metrics(at(z));
            for gap in [1e-8, -1e-8, 1e-6, -1e-6] {
                let near = m.with_beta(0.95 + gap).unwrap().uniform_metrics(at(z));
                let scale = gap.abs() * 1e4;
                assert!((near.work - crit.work).abs() <= scale, "z={z} gap={gap}");
                assert!((near.reward - crit.reward).abs() <= scale);
            }
        }
    }

    #[test]
    fn lagrangian_examples() {
        let m = base();
        let passive = m.uniform_metrics(Threshold::AlwaysPassive).reward;
        assert_abs_diff_eq!(m.patient_lagrangian(2.5, Initial::Uniform), passive, epsilon = 1e-12);
        assert_abs_diff_eq!(m.patient_lagrangian(0.0, Initial::Uniform), 20.0, epsilon = 1e-12);
        for i in 0..50 {
            let (l1, l2) = (i as f64 * 0.04, 2.0 - i as f64 * 0.03);
            let mid = m.patient_lagrangian(0.5 * (l1 + l2), Initial::Uniform);
            let avg = 0.5 * (m.patient_lagrangian(l1, Initial::Uniform) + m.patient_lagrangian(l2, Initial::Uniform));
            assert!(mid <= avg + 1e-12);
        }
    }

    #[test]
    fn derivative_examples() {
        let cohort = vec![base(); 10];
        let d = dual_derivative(&cohort, 5, 0.0, &CohortInitial::Uniform).unwrap();
        assert_abs_diff_eq!(d, -100.0, epsilon = 1e-9);
        let top = dual_derivative(&cohort, 5, 3.0, &CohortInitial::Uniform).unwrap();
        assert_abs_diff_eq!(top, 100.0, epsilon = 1e-12);
        assert!(dual_derivative(&cohort, 10, 0.3, &CohortInitial::Uniform).unwrap() >= 0.0);
        assert!(dual_derivative(&cohort, 11, 0.3, &CohortInitial::Uniform).is_err());
        let mixed = vec![base(), base().with_beta(0.9).unwrap()];
        assert!(matches!(
            dual_derivative(&mixed, 1, 0.3, &CohortInitial::Uniform),
            Err(ModelError::MixedDiscount(..))
        ));
    }

    #[test]
    fn bound_modes() {
        let cohort = vec![base(); 10];
        let full = dual_bound(&cohort, 10, 1e-6, &CohortInitial::Uniform).unwrap();
        assert_eq!(full.mode, DualMode::AtZero);
        assert_abs_diff_eq!(full.bound, 200.0, epsilon = 1e-9);
        let none = dual_bound(&cohort, 0, 1e-6, &CohortInitial::Uniform).unwrap();
        assert_eq!(none.mode, DualMode::AtMax);
        assert_abs_diff_eq!(none.bound, 10.0 * 8.190476190476, epsilon = 1e-8);
        let half = dual_bound(&cohort, 5, 1e-6, &CohortInitial::Uniform).unwrap();
        assert_eq!(half.mode, DualMode::Interior);
        assert!(half.iterations <= half.iteration_cap);
        assert!(half.bracket_width <= 1e-6 || half.derivative_at_star.abs() <= 1e-6);
        assert!(half.bound >= half.bound_at_star);
        assert!(dual_bound(&cohort, 5, 0.0, &CohortInitial::Uniform).is_err());
        assert!(dual_bound(&[], 0, 1e-6, &CohortInitial::Uniform).is_err());
    }

    #[test]
    fn fixed_initial_mode() {
        let cohort = vec![base(); 4];
        let x = CohortInitial::Fixed(vec![0.1, 0.4, 0.7, 0.9]);
        let res = dual_bound(&cohort, 2, 1e-8, &x).unwrap();
        assert!(res.bound.is_finite());
        assert!(dual_bound(&cohort, 2, 1e-8, &CohortInitial::Fixed(vec![0.1])).is_err());
    }
}
