//! Monotonicity of the index in the lapse and recovery probabilities.

use serde::{Deserialize, Serialize};

use crate::dynamics::{PatientParams, Threshold};
use crate::error::Result;

/// Finite-difference tolerance of the sign checks.
pub const SIGN_TOL: f64 = 1e-12;

/// Index branch containing the belief at given parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchTag {
    First,
    Middle(u64),
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trend {
    Flat,
    Increasing,
    Decreasing,
    /// Nonincreasing without a strictness requirement.
    NonIncreasing,
}

/// One consecutive-pair check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepCheck {
    pub from: f64,
    pub to: f64,
    pub diff: f64,
    pub expected: Trend,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub x: f64,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub tags: Vec<BranchTag>,
    pub steps: Vec<StepCheck>,
}

impl MonotonicityReport {
    pub fn passed(&self) -> bool {
        self.steps.iter().all(|s| s.passed)
    }

    pub fn violations(&self) -> impl Iterator<Item = &StepCheck> {
        self.steps.iter().filter(|s| !s.passed)
    }
}

fn holds(trend: Trend, diff: f64) -> bool {
    match trend {
        Trend::Flat => diff.abs() <= SIGN_TOL,
        Trend::Increasing => diff > SIGN_TOL,
        Trend::Decreasing => diff < -SIGN_TOL,
        Trend::NonIncreasing => diff <= SIGN_TOL,
    }
}

impl PatientParams {
    pub fn branch_tag(&self, x: f64) -> BranchTag {
        if x < self.p() {
            BranchTag::First
        } else if x >= self.z_inf() {
            BranchTag::Last
        } else {
            match self.crossing_time(self.p(), Threshold::At(x)).finite() {
                Some(t) => BranchTag::Middle(t),
                None => BranchTag::Last,
            }
        }
    }

    /// Index at `x` across an ascending grid of lapse probabilities: strictly
    /// decreasing while `p < x`, constant once `p >= x`.
    pub fn sensitivity_p(&self, x: f64, p_grid: &[f64]) -> Result<MonotonicityReport> {
        let models = p_grid.iter().map(|&p| self.with_p(p)).collect::<Result<Vec<_>>>()?;
        let values: Vec<f64> = models.iter().map(|m| m.mp_index(x)).collect();
        let tags = models.iter().map(|m| m.branch_tag(x)).collect();
        let steps = (1..p_grid.len())
            .map(|i| {
                let (a, b) = (p_grid[i - 1], p_grid[i]);
                let expected = if b < x {
                    Trend::Decreasing
                } else if a >= x {
                    Trend::Flat
                } else {
                    Trend::NonIncreasing
                };
                let diff = values[i] - values[i - 1];
                StepCheck { from: a, to: b, diff, expected, passed: holds(expected, diff) }
            })
            .collect();
        Ok(MonotonicityReport { x, grid: p_grid.to_vec(), values, tags, steps })
    }

    /// Index at `x` across an ascending grid of recovery probabilities,
    /// checked within branches only: flat on the first and first middle
    /// branch, increasing on later middle branches, decreasing on the last.
    pub fn sensitivity_q(&self, x: f64, q_grid: &[f64]) -> Result<MonotonicityReport> {
        let models = q_grid.iter().map(|&q| self.with_q(q)).collect::<Result<Vec<_>>>()?;
        let values: Vec<f64> = models.iter().map(|m| m.mp_index(x)).collect();
        let tags: Vec<BranchTag> = models.iter().map(|m| m.branch_tag(x)).collect();
        let steps = (1..q_grid.len())
            .filter(|&i| tags[i] == tags[i - 1])
            .map(|i| {
                let expected = match tags[i] {
                    BranchTag::First | BranchTag::Middle(1) => Trend::Flat,
                    BranchTag::Middle(_) => Trend::Increasing,
                    BranchTag::Last => Trend::Decreasing,
                };
                let diff = values[i] - values[i - 1];
                StepCheck {
                    from: q_grid[i - 1],
                    to: q_grid[i],
                    diff,
                    expected,
                    passed: holds(expected, diff),
                }
            })
            .collect();
        Ok(MonotonicityReport { x, grid: q_grid.to_vec(), values, tags, steps })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(p: f64, q: f64) -> PatientParams {
        PatientParams::new(p, q, 1.0, 0.95).unwrap()
    }

    #[test]
    fn p_examples() {
        let m = params(0.3, 0.2);
        let flat = m.sensitivity_p(0.3, &[0.3, 0.4, 0.5, 0.6, 0.7]).unwrap();
        assert!(flat.passed());
        assert!(flat.values.iter().all(|&v| (v - 0.3).abs() < 1e-15));
        let dec = m.sensitivity_p(0.5, &[0.05, 0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!(dec.passed(), "{dec:?}");
        assert!(dec.values.windows(2).all(|w| w[1] < w[0]));
        let origin = m.sensitivity_p(0.0, &[0.05, 0.1, 0.2]).unwrap();
        assert!(origin.passed() && origin.values.iter().all(|&v| v == 0.0));
        assert!(m.sensitivity_p(0.5, &[0.9]).is_err());
    }

    #[test]
    fn q_examples() {
        let low = params(0.3, 0.2).sensitivity_q(0.2, &[0.05, 0.1, 0.2, 0.4]).unwrap();
        assert!(low.passed() && low.values.iter().all(|&v| (v - 0.2).abs() < 1e-15));
        let last = params(0.1, 0.2).sensitivity_q(0.5, &[0.12, 0.2, 0.3, 0.5, 0.8]).unwrap();
        assert!(last.tags.iter().all(|&t| t == BranchTag::Last));
        assert!(last.passed(), "{last:?}");
        let grid: Vec<f64> = (1..60).map(|i| i as f64 * 0.01).collect();
        let mid = params(0.1, 0.2).sensitivity_q(0.3, &grid).unwrap();
        assert!(mid.passed(), "{:?}", mid.violations().collect::<Vec<_>>());
        assert!(mid.steps.iter().any(|s| s.expected == Trend::Increasing));
    }
}
