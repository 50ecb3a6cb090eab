//! Model constants and the deterministic passive belief dynamics.
//!
//! A patient's latent state is adherent/nonadherent; the controller tracks the
//! belief `x`, the posterior probability of nonadherence. Under passivity the
//! belief follows the affine map `h(x) = p + rho * x`, which contracts toward
//! `z_inf = p / (p + q)`. Activation resets the next-period belief to `p`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

/// One arm's model constants.
///
/// `rho` and `z_inf` are derived once at construction; every formula reads the
/// stored values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct PatientParams {
    p: f64,
    q: f64,
    r: f64,
    beta: f64,
    cost: f64,
    rho: f64,
    z_inf: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    p: f64,
    q: f64,
    r: f64,
    beta: f64,
    #[serde(default)]
    cost: f64,
}

impl TryFrom<RawParams> for PatientParams {
    type Error = ModelError;

    fn try_from(raw: RawParams) -> Result<Self> {
        PatientParams::new(raw.p, raw.q, raw.r, raw.beta)?.with_cost(raw.cost)
    }
}

impl From<PatientParams> for RawParams {
    fn from(params: PatientParams) -> Self {
        RawParams {
            p: params.p,
            q: params.q,
            r: params.r,
            beta: params.beta,
            cost: params.cost,
        }
    }
}

fn open_unit(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            value,
            reason: "must lie in (0, 1)",
        })
    }
}

impl PatientParams {
    /// Lapse probability `p`, recovery probability `q`, reward `r` per adherent
    /// period, discount factor `beta`. Requires positive persistence `p + q < 1`.
    pub fn new(p: f64, q: f64, r: f64, beta: f64) -> Result<Self> {
        open_unit("p", p)?;
        open_unit("q", q)?;
        open_unit("beta", beta)?;
        if !(r > 0.0 && r.is_finite()) {
            return Err(ModelError::InvalidParameter {
                name: "r",
                value: r,
                reason: "must be positive and finite",
            });
        }
        let rho = 1.0 - p - q;
        if rho <= 0.0 {
            return Err(ModelError::InvalidParameter {
                name: "q",
                value: q,
                reason: "requires 1 - p > q (positive persistence)",
            });
        }
        Ok(Self {
            p,
            q,
            r,
            beta,
            cost: 0.0,
            rho,
            z_inf: p / (1.0 - rho),
        })
    }

    /// Per-intervention cost, subtracted from the index at the output boundary.
    pub fn with_cost(mut self, cost: f64) -> Result<Self> {
        if !(cost >= 0.0 && cost.is_finite()) {
            return Err(ModelError::InvalidParameter {
                name: "cost",
                value: cost,
                reason: "must be nonnegative and finite",
            });
        }
        self.cost = cost;
        Ok(self)
    }

    /// Same patient with a different lapse probability.
    pub fn with_p(&self, p: f64) -> Result<Self> {
        Self::new(p, self.q, self.r, self.beta)?.with_cost(self.cost)
    }

    /// Same patient with a different recovery probability.
    pub fn with_q(&self, q: f64) -> Result<Self> {
        Self::new(self.p, q, self.r, self.beta)?.with_cost(self.cost)
    }

    /// Same patient with a different discount factor.
    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(self.p, self.q, self.r, beta)?.with_cost(self.cost)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    /// Persistence `1 - p - q`.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Fixed point of the passive map.
    pub fn z_inf(&self) -> f64 {
        self.z_inf
    }

    /// One passive step `h(x) = p + rho * x`.
    pub fn passive_step(&self, x: f64) -> f64 {
        self.p + self.rho * x
    }

    /// `h_t(x) = z_inf + (x - z_inf) rho^t`.
    pub fn trajectory_point(&self, x: f64, t: u64) -> f64 {
        if t == 0 {
            return x;
        }
        self.z_inf + (x - self.z_inf) * powu(self.rho, t)
    }

    /// First time the passive trajectory from `x` strictly exceeds `z`.
    pub fn crossing_time(&self, x: f64, z: Threshold) -> CrossingTime {
        let z = match z {
            Threshold::AlwaysActive => return CrossingTime::Finite(0),
            Threshold::AlwaysPassive => return CrossingTime::Never,
            Threshold::At(z) => z,
        };
        if x > z {
            return CrossingTime::Finite(0);
        }
        if z >= self.z_inf {
            return CrossingTime::Never;
        }
        // x <= z < z_inf: h_t(x) > z  <=>  rho^t < (z_inf - z) / (z_inf - x)
        let ratio = (self.z_inf - z) / (self.z_inf - x);
        let steps = ratio.ln() / self.rho.ln();
        let nearest = steps.round();
        if (steps - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            return CrossingTime::Finite(self.crossing_by_iteration(x, z, nearest as u64 + 2));
        }
        CrossingTime::Finite(steps.floor() as u64 + 1)
    }

    // Resolves log-ratios that land on an integer, where the ceiling is
    // ill-conditioned. Falls back to the rounded count if iteration stalls.
    fn crossing_by_iteration(&self, x: f64, z: f64, cap: u64) -> u64 {
        let mut belief = x;
        let mut t = 0;
        while belief <= z {
            if t > cap {
                return cap - 1;
            }
            belief = self.passive_step(belief);
            t += 1;
        }
        t
    }

    /// Threshold breakpoints `z_{-1} = 0`, `z_t = h_t(p)` for `t >= 0`.
    pub fn state_breakpoint(&self, t: i64) -> f64 {
        if t < 0 {
            0.0
        } else {
            self.trajectory_point(self.p, t as u64)
        }
    }

    /// Discounted passive sum `sum_{s<t} (1 - h_s(x)) beta^s`, in closed form.
    pub fn disc_passive_sum(&self, x: f64, horizon: Horizon) -> f64 {
        let (b, br) = (self.beta, self.beta * self.rho);
        match horizon {
            Horizon::Finite(0) => 0.0,
            Horizon::Finite(t) => {
                (1.0 - powu(b, t)) / (1.0 - b) * (1.0 - self.z_inf)
                    + (1.0 - powu(br, t)) / (1.0 - br) * (self.z_inf - x)
            }
            Horizon::Infinite => (1.0 - self.z_inf) / (1.0 - b) + (self.z_inf - x) / (1.0 - br),
        }
    }

    /// Undiscounted passive sum `sum_{s<t} (1 - h_s(x))`.
    pub fn avg_passive_sum(&self, x: f64, t: u64) -> f64 {
        if t == 0 {
            return 0.0;
        }
        t as f64 * (1.0 - self.z_inf) + (1.0 - powu(self.rho, t)) / (1.0 - self.rho) * (self.z_inf - x)
    }

    /// One-period expected reward `r [(1 - x) + a x]`.
    pub fn reward(&self, x: f64, active: bool) -> f64 {
        if active {
            self.r
        } else {
            self.r * (1.0 - x)
        }
    }
}

/// `base^t` for unsigned exponents.
pub(crate) fn powu(base: f64, t: u64) -> f64 {
    if t <= i32::MAX as u64 {
        base.powi(t as i32)
    } else {
        base.powf(t as f64)
    }
}

/// Posterior probability of nonadherence.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Belief(f64);

impl Belief {
    pub fn new(x: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&x) {
            Ok(Self(x))
        } else {
            Err(ModelError::BeliefOutOfRange(x))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Belief {
    type Error = ModelError;

    fn try_from(x: f64) -> Result<Self> {
        Belief::new(x)
    }
}

impl From<Belief> for f64 {
    fn from(b: Belief) -> f64 {
        b.0
    }
}

/// Threshold of a `z`-policy: active exactly when `x > z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// Active in every state (any `z < 0`).
    AlwaysActive,
    /// Finite threshold in `[0, 1]`.
    At(f64),
    /// Passive in every state (any `z > 1`).
    AlwaysPassive,
}

impl Threshold {
    /// Normalizes any real `z`: below 0 maps to `AlwaysActive`, above 1 to
    /// `AlwaysPassive`.
    pub fn new(z: f64) -> Result<Self> {
        if z.is_nan() {
            Err(ModelError::NanThreshold)
        } else if z < 0.0 {
            Ok(Threshold::AlwaysActive)
        } else if z > 1.0 {
            Ok(Threshold::AlwaysPassive)
        } else {
            Ok(Threshold::At(z))
        }
    }

    /// Whether the policy takes the active action at belief `x`.
    pub fn is_active(self, x: f64) -> bool {
        match self {
            Threshold::AlwaysActive => true,
            Threshold::AlwaysPassive => false,
            Threshold::At(z) => x > z,
        }
    }

    /// Real-line representative; sentinels map to the infinities.
    pub fn value(self) -> f64 {
        match self {
            Threshold::AlwaysActive => f64::NEG_INFINITY,
            Threshold::At(z) => z,
            Threshold::AlwaysPassive => f64::INFINITY,
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::AlwaysActive => write!(f, "always-active"),
            Threshold::At(z) => write!(f, "{z}"),
            Threshold::AlwaysPassive => write!(f, "always-passive"),
        }
    }
}

/// First threshold-crossing time of the passive trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossingTime {
    Finite(u64),
    /// The trajectory never exceeds the threshold.
    Never,
}

impl CrossingTime {
    pub fn finite(self) -> Option<u64> {
        match self {
            CrossingTime::Finite(t) => Some(t),
            CrossingTime::Never => None,
        }
    }
}

/// Length of a passive sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    Finite(u64),
    Infinite,
}

impl From<CrossingTime> for Horizon {
    fn from(t: CrossingTime) -> Self {
        match t {
            CrossingTime::Finite(t) => Horizon::Finite(t),
            CrossingTime::Never => Horizon::Infinite,
        }
    }
}
