//! Discounted reward/work metrics of threshold policies and their one-step
//! activation deviations.

use serde::{Deserialize, Serialize};

use crate::dynamics::{powu, CrossingTime, Horizon, PatientParams, Threshold};

/// A reward/work pair: `(F, G)` for a threshold policy, or `(f, g)` for its
/// marginal deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub reward: f64,
    pub work: f64,
}

impl MetricPair {
    pub fn new(reward: f64, work: f64) -> Self {
        Self { reward, work }
    }
}

/// Which closed-form case a threshold falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegimeTag {
    /// `z < p`: every reset state is above the threshold.
    BelowP,
    /// `z_{t-1} <= z < z_t`: after a reset the arm idles `t` periods.
    Middle(u64),
    /// `z_inf <= z < 1`: after a reset the arm is never active again.
    AboveZinf,
    /// `z >= 1`.
    AlwaysPassive,
}

// Case (b) quantities shared by every x at a fixed middle threshold.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CycleConsts {
    pub k_f: f64,
    pub k_g: f64,
}

impl PatientParams {
    pub fn classify_threshold(&self, z: Threshold) -> RegimeTag {
        match z {
            Threshold::AlwaysActive => RegimeTag::BelowP,
            Threshold::AlwaysPassive => RegimeTag::AlwaysPassive,
            Threshold::At(z) if z >= 1.0 => RegimeTag::AlwaysPassive,
            Threshold::At(z) if z < self.p() => RegimeTag::BelowP,
            Threshold::At(z) if z >= self.z_inf() => RegimeTag::AboveZinf,
            Threshold::At(z) => match self.crossing_time(self.p(), Threshold::At(z)) {
                CrossingTime::Finite(t) => RegimeTag::Middle(t),
                CrossingTime::Never => RegimeTag::AboveZinf,
            },
        }
    }

    pub(crate) fn cycle_consts(&self, t: u64) -> CycleConsts {
        let b = self.beta();
        let bt = powu(b, t);
        let denom = 1.0 - bt * b;
        let f_p = self.r() * (self.disc_passive_sum(self.p(), Horizon::Finite(t)) + bt) / denom;
        let g_p = bt / denom;
        CycleConsts {
            k_f: self.r() + b * f_p,
            k_g: 1.0 + b * g_p,
        }
    }

    fn passive_forever(&self, x: f64) -> f64 {
        self.r() * self.disc_passive_sum(x, Horizon::Infinite)
    }

    /// `(F(x, z), G(x, z))`: discounted reward and work from belief `x` under
    /// the `z`-policy.
    pub fn threshold_metrics(&self, x: f64, z: Threshold) -> MetricPair {
        let (r, b) = (self.r(), self.beta());
        let active = z.is_active(x);
        let pair = match self.classify_threshold(z) {
            RegimeTag::BelowP => {
                if active {
                    MetricPair::new(r / (1.0 - b), 1.0 / (1.0 - b))
                } else {
                    MetricPair::new(r * (1.0 / (1.0 - b) - x), b / (1.0 - b))
                }
            }
            RegimeTag::Middle(t) => {
                let c = self.cycle_consts(t);
                if active {
                    MetricPair::new(c.k_f, c.k_g)
                } else {
                    let s = self.crossing_time(x, z).finite().unwrap_or(0);
                    let bs = powu(b, s);
                    MetricPair::new(
                        r * self.disc_passive_sum(x, Horizon::Finite(s)) + bs * c.k_f,
                        bs * c.k_g,
                    )
                }
            }
            RegimeTag::AboveZinf => {
                if active {
                    MetricPair::new(r * (1.0 + b * self.disc_passive_sum(self.p(), Horizon::Infinite)), 1.0)
                } else {
                    MetricPair::new(self.passive_forever(x), 0.0)
                }
            }
            RegimeTag::AlwaysPassive => MetricPair::new(self.passive_forever(x), 0.0),
        };
        debug_assert!(pair.work >= -1e-12 && pair.work <= 1.0 / (1.0 - b) + 1e-9);
        pair
    }

    /// `(f(x, z), g(x, z))`: gain in reward and work from activating once at
    /// `x` and following the `z`-policy afterwards, versus staying passive.
    pub fn marginal_metrics(&self, x: f64, z: Threshold) -> MetricPair {
        let (r, b) = (self.r(), self.beta());
        let passive_slope = r * x / (1.0 - b * self.rho());
        match self.classify_threshold(z) {
            RegimeTag::BelowP => MetricPair::new(r * x, 1.0),
            RegimeTag::Middle(t) => {
                let c = self.cycle_consts(t);
                if z.is_active(x) {
                    MetricPair::new((1.0 - b) * c.k_f - r * (1.0 - x), (1.0 - b) * c.k_g)
                } else {
                    let s = self.crossing_time(x, z).finite().unwrap_or(0);
                    let shrink = 1.0 - powu(b, s);
                    MetricPair::new(
                        shrink * c.k_f - r * self.disc_passive_sum(x, Horizon::Finite(s)),
                        shrink * c.k_g,
                    )
                }
            }
            RegimeTag::AboveZinf => {
                if z.is_active(x) && z.is_active(self.passive_step(x)) {
                    let k_f = r * (1.0 + b * self.disc_passive_sum(self.p(), Horizon::Infinite));
                    MetricPair::new(r * (x - 1.0) + (1.0 - b) * k_f, 1.0 - b)
                } else {
                    MetricPair::new(passive_slope, 1.0)
                }
            }
            RegimeTag::AlwaysPassive => MetricPair::new(passive_slope, 1.0),
        }
    }

    /// Marginal productivity `m(x, z) = f(x, z) / g(x, z)`.
    pub fn mp_metric(&self, x: f64, z: Threshold) -> f64 {
        let m = self.marginal_metrics(x, z);
        m.reward / m.work
    }

    /// Forward simulation of the `z`-policy for `horizon` periods. Independent
    /// of the closed forms; error at most `max(r, 1) beta^horizon / (1 - beta)`.
    pub fn truncated_oracle(&self, x: f64, z: Threshold, horizon: u64) -> MetricPair {
        let (mut belief, mut disc) = (x, 1.0);
        let mut acc = MetricPair::new(0.0, 0.0);
        for _ in 0..horizon {
            let active = z.is_active(belief);
            acc.reward += disc * self.reward(belief, active);
            if active {
                acc.work += disc;
                belief = self.p();
            } else {
                belief = self.passive_step(belief);
            }
            disc *= self.beta();
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn base() -> PatientParams {
        PatientParams::new(0.3, 0.2, 1.0, 0.95).unwrap()
    }

    fn at(z: f64) -> Threshold {
        Threshold::new(z).unwrap()
    }

    // Marginal metrics from two truncated forward simulations.
    fn marginal_oracle(m: &PatientParams, x: f64, z: Threshold) -> MetricPair {
        let b = m.beta();
        let act = m.truncated_oracle(m.p(), z, 3000);
        let pas = m.truncated_oracle(m.passive_step(x), z, 3000);
        MetricPair::new(
            m.reward(x, true) + b * act.reward - m.reward(x, false) - b * pas.reward,
            1.0 + b * act.work - b * pas.work,
        )
    }

    #[test]
    fn regime_examples() {
        let m = base();
        assert_eq!(m.classify_threshold(at(0.2)), RegimeTag::BelowP);
        assert_eq!(m.classify_threshold(at(0.3)), RegimeTag::Middle(1));
        assert_eq!(m.classify_threshold(at(0.45)), RegimeTag::Middle(2));
        assert_eq!(m.classify_threshold(at(0.5)), RegimeTag::Middle(2));
        assert_eq!(m.classify_threshold(at(0.6)), RegimeTag::AboveZinf);
        assert_eq!(m.classify_threshold(at(1.0)), RegimeTag::AlwaysPassive);
        assert_eq!(m.classify_threshold(Threshold::AlwaysPassive), RegimeTag::AlwaysPassive);
        assert_eq!(m.classify_threshold(Threshold::AlwaysActive), RegimeTag::BelowP);
    }

    #[test]
    fn threshold_metric_examples() {
        let m = base();
        let a = m.threshold_metrics(0.5, at(0.2));
        assert_abs_diff_eq!(a.reward, 20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.work, 20.0, epsilon = 1e-12);
        let c = m.threshold_metrics(0.3, at(0.7));
        assert_abs_diff_eq!(c.reward, 8.571428571428571, epsilon = 1e-12);
        assert_eq!(c.work, 0.0);
        let b = m.threshold_metrics(0.3, at(0.5));
        let oracle = m.truncated_oracle(0.3, at(0.5), 2000);
        assert_abs_diff_eq!(b.reward, oracle.reward, epsilon = 1e-9);
        assert_abs_diff_eq!(b.work, oracle.work, epsilon = 1e-9);
        assert_abs_diff_eq!(b.reward, 14.899211218, epsilon = 1e-8);
        assert_abs_diff_eq!(b.work, 6.327782646, epsilon = 1e-8);
    }

    #[test]
    fn oracle_single_step() {
        let m = base();
        assert_eq!(m.truncated_oracle(0.4, at(0.2), 1), MetricPair::new(1.0, 1.0));
        let p = m.truncated_oracle(0.4, at(0.5), 1);
        assert_abs_diff_eq!(p.reward, 0.6, epsilon = 1e-15);
        assert_eq!(p.work, 0.0);
    }

    #[test]
    fn marginal_metric_examples() {
        let m = base();
        assert_eq!(m.marginal_metrics(0.4, at(0.2)), MetricPair::new(0.4, 1.0));
        let d = m.marginal_metrics(0.42, Threshold::AlwaysPassive);
        assert_abs_diff_eq!(d.reward, 0.8, epsilon = 1e-12);
        assert_eq!(d.work, 1.0);
        let o = marginal_oracle(&m, 0.42, Threshold::AlwaysPassive);
        assert_abs_diff_eq!(o.reward, 0.8, epsilon = 1e-9);
        let b = m.marginal_metrics(0.6, at(0.5));
        assert_abs_diff_eq!(b.work, 0.05 * (1.0 + 0.95 * 6.327782646), epsilon = 1e-8);
        assert_abs_diff_eq!(b.work, 0.350569676, epsilon = 1e-8);
        let ob = marginal_oracle(&m, 0.6, at(0.5));
        assert_abs_diff_eq!(b.reward, ob.reward, epsilon = 1e-9);
        assert_abs_diff_eq!(b.work, ob.work, epsilon = 1e-9);
    }

    #[test]
    fn mp_metric_examples() {
        let m = base();
        assert_abs_diff_eq!(m.mp_metric(0.2, at(0.25)), 0.2, epsilon = 1e-15);
        let phi_p = m.disc_passive_sum(0.3, Horizon::Infinite);
        let phi_0 = m.disc_passive_sum(0.0, Horizon::Infinite);
        assert_abs_diff_eq!(m.mp_metric(0.0, at(0.8)), 1.0 + 0.95 * phi_p - phi_0, epsilon = 1e-12);
        // above the threshold the ratio is the deviation's f/g, not r x
        let above = m.mp_metric(0.7, at(0.5));
        let o = marginal_oracle(&m, 0.7, at(0.5));
        assert_abs_diff_eq!(above, o.reward / o.work, epsilon = 1e-9);
        assert_abs_diff_eq!(above, 1.305625, epsilon = 1e-9);
    }

    fn params_strategy() -> impl Strategy<Value = PatientParams> {
        (0.01f64..0.5, 0.01f64..0.5, 0.5f64..2.0, 0.5f64..0.97)
            .prop_filter("persistence", |(p, q, _, _)| p + q < 0.95)
            .prop_map(|(p, q, r, b)| PatientParams::new(p, q, r, b).unwrap())
    }

    proptest! {
        #[test]
        fn closed_forms_match_simulation(m in params_strategy(), x in 0.0f64..=1.0, z in -0.1f64..1.1) {
            let z = Threshold::new(z).unwrap();
            let exact = m.threshold_metrics(x, z);
            let sim = m.truncated_oracle(x, z, 2000);
            let tol = m.r().max(1.0) * m.beta().powi(2000) / (1.0 - m.beta()) + 1e-9;
            prop_assert!((exact.reward - sim.reward).abs() <= tol);
            prop_assert!((exact.work - sim.work).abs() <= tol);
        }

        #[test]
        fn one_step_deviation_consistency(m in params_strategy(), x in 0.0f64..=1.0, z in -0.1f64..1.1) {
            let z = Threshold::new(z).unwrap();
            let b = m.beta();
            let act = m.threshold_metrics(m.p(), z);
            let pas = m.threshold_metrics(m.passive_step(x), z);
            let marg = m.marginal_metrics(x, z);
            let f = m.r() + b * act.reward - m.reward(x, false) - b * pas.reward;
            let g = 1.0 + b * act.work - b * pas.work;
            prop_assert!((marg.reward - f).abs() <= 1e-9 * (1.0 + f.abs()));
            prop_assert!((marg.work - g).abs() <= 1e-9 * (1.0 + g.abs()));
            prop_assert!(marg.work >= 1.0 - b - 1e-12);
        }
    }
}
