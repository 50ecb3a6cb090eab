//! The marginal productivity (Whittle) index and its inverse, the optimal
//! threshold map.

use serde::{Deserialize, Serialize};

use crate::dynamics::{powu, CrossingTime, Horizon, PatientParams, Threshold};
use crate::error::{ModelError, Result};

impl PatientParams {
    /// Intercept `C_t = beta^{t+1} - beta + beta (1 - beta) Phi_t(p)` of the
    /// `t`-th middle branch (scaled by `r / (1 - beta)`).
    pub fn branch_intercept(&self, t: u64) -> f64 {
        let b = self.beta();
        powu(b, t + 1) - b + b * (1.0 - b) * self.disc_passive_sum(self.p(), Horizon::Finite(t))
    }

    /// Middle branch `t >= 1` of the index, valid on `[z_{t-1}, z_t)`.
    pub fn middle_branch(&self, t: u64, x: f64) -> f64 {
        let b = self.beta();
        self.r() / (1.0 - b) * ((1.0 - powu(b, t + 1)) * x + self.branch_intercept(t))
    }

    /// Cost-free index `m(x)`.
    pub fn raw_index(&self, x: f64) -> f64 {
        let r = self.r();
        if x < self.p() {
            return r * x;
        }
        match self.crossing_time(self.p(), Threshold::At(x)) {
            CrossingTime::Finite(t) if x < self.z_inf() => self.middle_branch(t, x),
            _ => r * x / (1.0 - self.beta() * self.rho()),
        }
    }

    /// Whittle index of belief `x`, net of the per-intervention cost.
    pub fn mp_index(&self, x: f64) -> f64 {
        self.raw_index(x) - self.cost()
    }

    /// Price breakpoint `lambda_t = m(z_t)` for `t >= 0`.
    pub fn price_breakpoint(&self, t: u64) -> f64 {
        self.middle_branch(t + 1, self.state_breakpoint(t as i64))
    }

    /// `lambda_inf = m(z_inf)`.
    pub fn lambda_inf(&self) -> f64 {
        self.r() * self.z_inf() / (1.0 - self.beta() * self.rho())
    }

    /// `lambda_max = r / (1 - beta rho)`; above it passivity is optimal everywhere.
    pub fn lambda_max(&self) -> f64 {
        self.r() / (1.0 - self.beta() * self.rho())
    }

    /// Optimal threshold at intervention price `lambda`; the cost is added to
    /// the price first.
    pub fn optimal_threshold(&self, lambda: f64) -> Threshold {
        let price = lambda + self.cost();
        let (r, b) = (self.r(), self.beta());
        if price < 0.0 {
            return Threshold::AlwaysActive;
        }
        if price > self.lambda_max() {
            return Threshold::AlwaysPassive;
        }
        if price < r * self.p() {
            return Threshold::At(price / r);
        }
        if price >= self.lambda_inf() {
            return Threshold::At(((1.0 - b * self.rho()) * price / r).min(1.0));
        }
        let t = self.price_branch(price);
        let z = ((1.0 - b) * price / r - self.branch_intercept(t)) / (1.0 - powu(b, t + 1));
        Threshold::At(z.clamp(0.0, self.z_inf()))
    }

    // Smallest t >= 1 with price < lambda_t, for lambda_0 <= price < lambda_inf.
    fn price_branch(&self, price: f64) -> u64 {
        let cap = self.saturation_steps();
        let mut hi = 1;
        while self.price_breakpoint(hi) <= price {
            if hi >= cap {
                return cap;
            }
            hi = (hi * 2).min(cap);
        }
        let mut lo = 0;
        // invariant: lambda_lo <= price < lambda_hi
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.price_breakpoint(mid) <= price {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    // Steps after which z_t is indistinguishable from z_inf in double precision.
    pub(crate) fn saturation_steps(&self) -> u64 {
        steps_below(self.rho(), 1e-17)
    }
}

/// Smallest `t >= 1` with `rho^t < tol`.
pub(crate) fn steps_below(rho: f64, tol: f64) -> u64 {
    ((tol.ln() / rho.ln()).floor() as u64 + 1).max(1)
}

/// One affine piece `y = slope * x + intercept` on `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineBranch {
    pub lo: f64,
    pub hi: f64,
    pub slope: f64,
    pub intercept: f64,
}

impl AffineBranch {
    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Tabulated breakpoints and branches of the index and the threshold map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexTable {
    pub params: PatientParams,
    /// `[0, z_0, ..., z_T, z_inf, 1]`.
    pub state_breakpoints: Vec<f64>,
    /// `[lambda_0, ..., lambda_T, lambda_inf, lambda_max]`.
    pub price_breakpoints: Vec<f64>,
    /// Index branches over the state breakpoints, cost-free.
    pub index_branches: Vec<AffineBranch>,
    /// Threshold-map branches over the price breakpoints.
    pub threshold_branches: Vec<AffineBranch>,
    /// Largest disagreement between adjacent index branches at a breakpoint.
    pub max_continuity_residual: f64,
}

impl IndexTable {
    /// Default depth: smallest `T` with `rho^T < 1e-14`.
    pub fn default_depth(params: &PatientParams) -> u64 {
        steps_below(params.rho(), 1e-14)
    }

    pub fn build(params: PatientParams, t_max: Option<u64>) -> Result<Self> {
        let depth = t_max.unwrap_or_else(|| Self::default_depth(&params));
        if depth == 0 {
            return Err(ModelError::NonPositiveCount("t_max"));
        }
        let (r, b) = (params.r(), params.beta());
        let mut index_branches = vec![AffineBranch {
            lo: 0.0,
            hi: params.p(),
            slope: r,
            intercept: 0.0,
        }];
        for t in 1..=depth + 1 {
            let hi = if t == depth + 1 {
                params.z_inf()
            } else {
                params.state_breakpoint(t as i64)
            };
            index_branches.push(AffineBranch {
                lo: params.state_breakpoint(t as i64 - 1),
                hi,
                slope: r * (1.0 - powu(b, t + 1)) / (1.0 - b),
                intercept: r / (1.0 - b) * params.branch_intercept(t),
            });
        }
        index_branches.push(AffineBranch {
            lo: params.z_inf(),
            hi: 1.0,
            slope: r / (1.0 - b * params.rho()),
            intercept: 0.0,
        });

        let mut residual: f64 = 0.0;
        for pair in index_branches.windows(2) {
            let x = pair[1].lo;
            let gap = (pair[0].eval(x) - pair[1].eval(x)).abs();
            residual = residual.max(gap);
            if gap > 1e-8 {
                return Err(ModelError::Continuity { breakpoint: x, residual: gap });
            }
        }

        let mut state_breakpoints = vec![0.0];
        state_breakpoints.extend((0..=depth as i64).map(|t| params.state_breakpoint(t)));
        state_breakpoints.extend([params.z_inf(), 1.0]);

        let mut price_breakpoints: Vec<f64> = (0..=depth).map(|t| params.price_breakpoint(t)).collect();
        price_breakpoints.extend([params.lambda_inf(), params.lambda_max()]);

        let threshold_branches = index_branches
            .iter()
            .map(|br| AffineBranch {
                lo: br.eval(br.lo),
                hi: br.eval(br.hi),
                slope: 1.0 / br.slope,
                intercept: -br.intercept / br.slope,
            })
            .collect();

        Ok(Self {
            params,
            state_breakpoints,
            price_breakpoints,
            index_branches,
            threshold_branches,
            max_continuity_residual: residual,
        })
    }

    /// Index by branch lookup; beliefs in `[z_T, z_inf)` use the last
    /// tabulated middle branch.
    pub fn index(&self, x: f64) -> f64 {
        let k = self.index_branches.partition_point(|br| br.hi <= x);
        let br = &self.index_branches[k.min(self.index_branches.len() - 1)];
        br.eval(x) - self.params.cost()
    }

    /// Threshold map by branch lookup.
    pub fn threshold(&self, lambda: f64) -> Threshold {
        let price = lambda + self.params.cost();
        if price < 0.0 {
            return Threshold::AlwaysActive;
        }
        if price > self.params.lambda_max() {
            return Threshold::AlwaysPassive;
        }
        let k = self.threshold_branches.partition_point(|br| br.hi <= price);
        let br = &self.threshold_branches[k.min(self.threshold_branches.len() - 1)];
        Threshold::At(br.eval(price).clamp(0.0, 1.0))
    }
}
