//! Long-run average counterparts of the threshold metrics and the index.
//!
//! The average-criterion index is a priority rule only; its optimality as a
//! Whittle index is conjectural.

use serde::{Deserialize, Serialize};

use crate::dynamics::{PatientParams, Threshold};
use crate::metrics::RegimeTag;
use crate::verify::{
    extended_grid, max_decrease, sample_triples, stieltjes_residual, threshold_at, unit_grid, CheckResult,
    GridSpec, VerificationReport,
};

/// Per-period reward and work rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AvgMetricPair {
    pub reward_rate: f64,
    pub work_rate: f64,
}

impl AvgMetricPair {
    pub fn new(reward_rate: f64, work_rate: f64) -> Self {
        Self { reward_rate, work_rate }
    }
}

/// Discount factors of the Abelian-limit check.
pub const BRIDGE_BETAS: [f64; 3] = [0.99, 0.999, 0.9999];

impl PatientParams {
    /// Long-run average reward and work of the `z`-policy (independent of the
    /// initial belief).
    pub fn avg_metrics(&self, z: Threshold) -> AvgMetricPair {
        let r = self.r();
        match self.classify_threshold(z) {
            RegimeTag::BelowP => AvgMetricPair::new(r, 1.0),
            RegimeTag::Middle(s) => {
                let cycle = (s + 1) as f64;
                AvgMetricPair::new(r * (1.0 + self.avg_passive_sum(self.p(), s)) / cycle, 1.0 / cycle)
            }
            RegimeTag::AboveZinf | RegimeTag::AlwaysPassive => AvgMetricPair::new(r * (1.0 - self.z_inf()), 0.0),
        }
    }

    /// Long-run average marginal reward and work of activating once at `x`.
    pub fn avg_marginal_metrics(&self, x: f64, z: Threshold) -> AvgMetricPair {
        let r = self.r();
        match self.classify_threshold(z) {
            RegimeTag::BelowP => AvgMetricPair::new(r * x, 1.0),
            RegimeTag::Middle(s) => {
                let cycle = (s + 1) as f64;
                if z.is_active(x) {
                    let rate = self.avg_metrics(z).reward_rate;
                    AvgMetricPair::new(r * (x - 1.0) + rate, 1.0 / cycle)
                } else {
                    let t = self.crossing_time(x, z).finite().unwrap_or(0);
                    let share = t as f64 / cycle;
                    let f = r * (share * (1.0 + self.avg_passive_sum(self.p(), s)) - self.avg_passive_sum(x, t));
                    AvgMetricPair::new(f, share)
                }
            }
            RegimeTag::AboveZinf | RegimeTag::AlwaysPassive => {
                AvgMetricPair::new(r * (self.z_inf() + (x - self.p()) / (1.0 - self.rho())), 1.0)
            }
        }
    }

    /// Middle branch `t >= 1` of the average index.
    pub fn avg_middle_branch(&self, t: u64, x: f64) -> f64 {
        self.r() * ((t + 1) as f64 * x + self.avg_passive_sum(self.p(), t) - t as f64)
    }

    /// Average-criterion MP index (cost-free).
    pub fn avg_mp_index(&self, x: f64) -> f64 {
        if x < self.p() {
            return self.r() * x;
        }
        match self.crossing_time(self.p(), Threshold::At(x)).finite() {
            Some(t) if x < self.z_inf() => self.avg_middle_branch(t, x),
            _ => self.r() * x / (1.0 - self.rho()),
        }
    }

    /// Largest `|(1 - beta) F_beta(x, z) - F_avg(z)|` and the work analogue
    /// over the grids, at discount `beta`.
    pub fn abelian_residual(&self, beta: f64, x_points: usize, z_points: usize) -> crate::Result<(f64, f64)> {
        let disc = self.with_beta(beta)?;
        let (mut fr, mut gr) = (0.0f64, 0.0f64);
        for z in extended_grid(z_points) {
            let avg = self.avg_metrics(z);
            for x in unit_grid(x_points) {
                let d = disc.threshold_metrics(x, z);
                fr = fr.max(((1.0 - beta) * d.reward - avg.reward_rate).abs());
                gr = gr.max(((1.0 - beta) * d.work - avg.work_rate).abs());
            }
        }
        Ok((fr, gr))
    }

    /// Average-criterion analogue of the jump identity.
    pub fn apcl_stieltjes_residual(&self, x: f64, z1: f64, z2: f64, reach_tol: f64) -> Option<f64> {
        let set = self.reachable_set(x, reach_tol);
        stieltjes_residual(
            &set,
            self.z_inf(),
            z1,
            z2,
            |z| self.avg_metrics(threshold_at(z)).reward_rate,
            |z| self.avg_metrics(threshold_at(z)).work_rate,
            |c| self.avg_mp_index(c),
        )
    }

    /// Average-criterion condition checks plus the Abelian-limit bridge.
    pub fn verify_apcli(&self, spec: &GridSpec) -> VerificationReport {
        let mut report = VerificationReport::blank();
        let mut min_work = f64::INFINITY;
        for x in unit_grid(spec.x_points) {
            for z in extended_grid(spec.z_points) {
                min_work = min_work.min(self.avg_marginal_metrics(x, z).work_rate);
            }
        }
        report.pcli1 = CheckResult::new(min_work > 0.0, min_work);

        let decrease = max_decrease(unit_grid(spec.index_points).map(|x| self.avg_mp_index(x)));
        let continuity = self.avg_continuity_residual();
        report.pcli2 = CheckResult::new(decrease <= 1e-12 && continuity <= 1e-10, decrease.max(continuity));
        report.max_index_decrease = decrease;
        report.max_continuity_residual = continuity;

        let (worst, checked, resampled) =
            sample_triples(spec, |x, z1, z2| self.apcl_stieltjes_residual(x, z1, z2, spec.reach_tol));
        report.pcli3 = CheckResult::new(worst <= spec.tol, worst);
        report.triples_checked = checked;
        report.triples_resampled = resampled;

        let mut ok = true;
        let mut prev = (f64::INFINITY, f64::INFINITY);
        for beta in BRIDGE_BETAS {
            match self.abelian_residual(beta, spec.x_points, spec.z_points) {
                Ok((fr, gr)) => {
                    ok &= fr <= prev.0 + 1e-12 && gr <= prev.1 + 1e-12;
                    prev = (fr, gr);
                    report.bridge.push((beta, fr, gr));
                }
                Err(_) => ok = false,
            }
        }
        ok &= prev.0 <= 1e-2 && prev.1 <= 1e-2;
        report.bridge_passed = Some(ok);
        report
    }

    fn avg_continuity_residual(&self) -> f64 {
        let depth = crate::index::IndexTable::default_depth(self);
        let mut worst = (self.r() * self.p() - self.avg_middle_branch(1, self.p())).abs();
        for t in 1..=depth {
            let z = self.state_breakpoint(t as i64);
            worst = worst.max((self.avg_middle_branch(t, z) - self.avg_middle_branch(t + 1, z)).abs());
        }
        let limit = self.r() * self.z_inf() / (1.0 - self.rho());
        worst.max((self.avg_middle_branch(depth + 1, self.z_inf()) - limit).abs())
    }
}
