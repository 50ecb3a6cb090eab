//! Numerical checks of the three partial-conservation-law conditions that
//! certify threshold-indexability.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{PatientParams, Threshold};
use crate::index::steps_below;

/// Countable closed set containing every belief reachable from `origin`
/// under any threshold policy, truncated near its accumulation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachableSet {
    pub origin: f64,
    pub points: Vec<f64>,
    /// Points of the set inside `(z_inf - tol, z_inf)` are not enumerated.
    pub tol: f64,
}

impl ReachableSet {
    // Points of the set strictly inside (lo, hi].
    fn within(&self, lo: f64, hi: f64) -> impl Iterator<Item = (usize, f64)> + '_ {
        let start = self.points.partition_point(|&c| c <= lo);
        self.points[start..]
            .iter()
            .copied()
            .take_while(move |&c| c <= hi)
            .enumerate()
            .map(move |(k, c)| (start + k, c))
    }

    // Thresholds strictly inside the constant pieces left and right of point i.
    fn straddle(&self, i: usize) -> (f64, f64) {
        let c = self.points[i];
        let left = if i == 0 { c - 0.5 } else { c - 0.25 * (c - self.points[i - 1]) };
        let right = match self.points.get(i + 1) {
            Some(&next) => c + 0.25 * (next - c),
            None => c + 0.5,
        };
        (left, right)
    }
}

impl PatientParams {
    /// Enumerates `{h_t(x)}`, `{z_t}`, `z_inf`, `0` and `1`, stopping each
    /// sequence once it is within `tol` of `z_inf`.
    pub fn reachable_set(&self, x: f64, tol: f64) -> ReachableSet {
        let zi = self.z_inf();
        let mut points = vec![0.0, 1.0, zi];
        let mut push_orbit = |start: f64| {
            let scale = (start - zi).abs();
            if scale < tol {
                points.push(start);
                return;
            }
            let steps = steps_below(self.rho(), tol / scale);
            points.extend((0..steps).map(|t| self.trajectory_point(start, t)));
        };
        push_orbit(x);
        push_orbit(self.p());
        points.sort_by(f64::total_cmp);
        points.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
        ReachableSet { origin: x, points, tol }
    }

    /// Residual of `F(x, z2) - F(x, z1) = sum_c m(c) [G(x, c) - G(x, c-)]`
    /// over `c` in the reachable set within `(z1, z2]`. `None` when the
    /// interval reaches into the unenumerated neighbourhood of `z_inf`.
    pub fn pcl_stieltjes_residual(&self, x: f64, z1: f64, z2: f64, reach_tol: f64) -> Option<f64> {
        let set = self.reachable_set(x, reach_tol);
        stieltjes_residual(
            &set,
            self.z_inf(),
            z1,
            z2,
            |z| self.threshold_metrics(x, threshold_at(z)).reward,
            |z| self.threshold_metrics(x, threshold_at(z)).work,
            |c| self.raw_index(c),
        )
    }

    /// Runs the three condition checks on grids.
    pub fn verify_pcl(&self, spec: &GridSpec) -> VerificationReport {
        let mut report = VerificationReport::new();
        let floor = 1.0 - self.beta();

        let mut min_work = f64::INFINITY;
        for x in unit_grid(spec.x_points) {
            for z in extended_grid(spec.z_points) {
                min_work = min_work.min(self.marginal_metrics(x, z).work);
            }
        }
        report.pcli1 = CheckResult::new(min_work >= floor - 1e-12, min_work);

        let decrease = max_decrease(unit_grid(spec.index_points).map(|x| self.raw_index(x)));
        let continuity = self.index_continuity_residual();
        report.pcli2 = CheckResult::new(decrease <= 1e-12 && continuity <= 1e-10, decrease.max(continuity));
        report.max_index_decrease = decrease;
        report.max_continuity_residual = continuity;

        let (pcli3, checked, resampled) = sample_triples(spec, |x, z1, z2| {
            self.pcl_stieltjes_residual(x, z1, z2, spec.reach_tol)
        });
        report.pcli3 = CheckResult::new(pcli3 <= spec.tol, pcli3);
        report.triples_checked = checked;
        report.triples_resampled = resampled;
        report
    }

    // Adjacent index branches compared at each shared breakpoint.
    fn index_continuity_residual(&self) -> f64 {
        let depth = crate::index::IndexTable::default_depth(self);
        let mut worst = (self.r() * self.p() - self.middle_branch(1, self.p())).abs();
        for t in 0..=depth {
            let z = self.state_breakpoint(t as i64);
            if t >= 1 {
                worst = worst.max((self.middle_branch(t, z) - self.middle_branch(t + 1, z)).abs());
            }
        }
        worst.max((self.middle_branch(depth + 1, self.z_inf()) - self.lambda_inf()).abs())
    }
}

pub(crate) fn threshold_at(z: f64) -> Threshold {
    Threshold::new(z).expect("finite threshold")
}

pub(crate) fn stieltjes_residual(
    set: &ReachableSet,
    z_inf: f64,
    z1: f64,
    z2: f64,
    reward: impl Fn(f64) -> f64,
    work: impl Fn(f64) -> f64,
    index: impl Fn(f64) -> f64,
) -> Option<f64> {
    if z1 >= z2 {
        return Some(0.0);
    }
    if z1 < z_inf && z2 > z_inf - 2.0 * set.tol {
        return None;
    }
    let lhs = reward(z2) - reward(z1);
    let rhs: f64 = set
        .within(z1, z2)
        .map(|(i, c)| {
            let (left, right) = set.straddle(i);
            index(c) * (work(right) - work(left))
        })
        .sum();
    Some((lhs - rhs).abs())
}

// Draws (x, z1, z2) triples until `spec.triples` resolvable ones are checked.
pub(crate) fn sample_triples(
    spec: &GridSpec,
    residual: impl Fn(f64, f64, f64) -> Option<f64>,
) -> (f64, usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (mut worst, mut checked, mut resampled) = (0.0f64, 0, 0);
    let budget = spec.triples * 100;
    while checked < spec.triples && checked + resampled < budget {
        let x: f64 = rng.random();
        let (a, b): (f64, f64) = (rng.random(), rng.random());
        let (z1, z2) = if a <= b { (a, b) } else { (b, a) };
        match residual(x, z1, z2) {
            Some(r) => {
                worst = worst.max(r);
                checked += 1;
            }
            None => resampled += 1,
        }
    }
    (worst, checked, resampled)
}

pub(crate) fn unit_grid(n: usize) -> impl Iterator<Item = f64> + Clone {
    let last = n.max(2) - 1;
    (0..=last).map(move |i| i as f64 / last as f64)
}

// Unit grid plus both sentinels.
pub(crate) fn extended_grid(n: usize) -> impl Iterator<Item = Threshold> {
    std::iter::once(Threshold::AlwaysActive)
        .chain(unit_grid(n).map(Threshold::At))
        .chain(std::iter::once(Threshold::AlwaysPassive))
}

pub(crate) fn max_decrease(values: impl Iterator<Item = f64>) -> f64 {
    let mut prev = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for v in values {
        worst = worst.max(prev - v);
        prev = v;
    }
    worst
}

/// Grid sizes and tolerances for the verification suites.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_points: usize,
    pub z_points: usize,
    pub index_points: usize,
    pub triples: usize,
    /// Tolerance on the Stieltjes residual.
    pub tol: f64,
    /// Truncation tolerance of the reachable sets.
    pub reach_tol: f64,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            x_points: 101,
            z_points: 101,
            index_points: 2000,
            triples: 200,
            tol: 1e-6,
            reach_tol: 1e-10,
            seed: 20_240_601,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub passed: bool,
    pub residual: f64,
}

impl CheckResult {
    pub fn new(passed: bool, residual: f64) -> Self {
        Self { passed, residual }
    }
}

/// Outcome of a verification suite. A failing check is reported, not raised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// Smallest marginal work on the grid.
    pub pcli1: CheckResult,
    /// Largest of index decrease and branch-continuity residual.
    pub pcli2: CheckResult,
    /// Largest Stieltjes residual.
    pub pcli3: CheckResult,
    pub max_index_decrease: f64,
    pub max_continuity_residual: f64,
    pub triples_checked: usize,
    pub triples_resampled: usize,
    /// `(beta, reward residual, work residual)`; average criterion only.
    pub bridge: Vec<(f64, f64, f64)>,
    pub bridge_passed: Option<bool>,
}

impl VerificationReport {
    fn new() -> Self {
        let blank = CheckResult::new(false, f64::NAN);
        Self {
            pcli1: blank,
            pcli2: blank,
            pcli3: blank,
            max_index_decrease: f64::NAN,
            max_continuity_residual: f64::NAN,
            triples_checked: 0,
            triples_resampled: 0,
            bridge: Vec::new(),
            bridge_passed: None,
        }
    }

    pub(crate) fn blank() -> Self {
        Self::new()
    }

    pub fn passed(&self) -> bool {
        self.pcli1.passed && self.pcli2.passed && self.pcli3.passed && self.bridge_passed.unwrap_or(true)
    }
}
