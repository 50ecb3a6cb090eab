//! Monte-Carlo evaluation of priority policies on a capacity-constrained
//! cohort.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dual::cohort_beta;
use crate::dynamics::PatientParams;
use crate::error::{ModelError, Result};

/// Rule choosing which patients to treat each period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Policy {
    /// Largest nonnegative Whittle indices.
    Whittle,
    /// Largest nonnegative average-criterion indices.
    WhittleAvg,
    /// Largest one-step gains `r x`.
    Myopic,
    /// Cyclic blocks of `M` consecutive patients.
    RoundRobin,
    /// `M` patients uniformly at random.
    Random,
    /// Patients with belief above `z`, highest beliefs first.
    Threshold(f64),
}

impl Policy {
    /// The four benchmark policies.
    pub const BENCHMARK: [Policy; 4] = [Policy::Whittle, Policy::Myopic, Policy::RoundRobin, Policy::Random];

    pub fn name(&self) -> String {
        match self {
            Policy::Whittle => "whittle".into(),
            Policy::WhittleAvg => "whittle-avg".into(),
            Policy::Myopic => "myopic".into(),
            Policy::RoundRobin => "round-robin".into(),
            Policy::Random => "random".into(),
            Policy::Threshold(z) => format!("threshold:{z}"),
        }
    }

    fn priority(&self, m: &PatientParams, x: f64) -> Option<f64> {
        match self {
            Policy::Whittle => Some(m.mp_index(x)).filter(|v| *v >= 0.0),
            Policy::WhittleAvg => Some(m.avg_mp_index(x) - m.cost()).filter(|v| *v >= 0.0),
            Policy::Myopic => Some(m.r() * x - m.cost()),
            Policy::Threshold(z) => Some(x).filter(|&x| x > *z),
            Policy::RoundRobin | Policy::Random => None,
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "whittle" => Ok(Policy::Whittle),
            "whittle-avg" | "whittle_avg" => Ok(Policy::WhittleAvg),
            "myopic" => Ok(Policy::Myopic),
            "round-robin" | "round_robin" | "roundrobin" => Ok(Policy::RoundRobin),
            "random" => Ok(Policy::Random),
            other => match other.strip_prefix("threshold:") {
                Some(z) => z.parse().map(Policy::Threshold).map_err(|e| format!("bad threshold {z:?}: {e}")),
                None => Err(format!("unknown policy {other:?}")),
            },
        }
    }
}

/// Distribution of the initial beliefs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialSampler {
    Uniform,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: usize,
    pub runs: usize,
    pub capacity: usize,
    pub seed: u64,
    pub policy: Policy,
    pub initial: InitialSampler,
}

/// A cohort and its current beliefs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub patients: Vec<PatientParams>,
    pub beliefs: Vec<f64>,
}

impl Cohort {
    pub fn new(patients: Vec<PatientParams>, beliefs: Vec<f64>) -> Result<Self> {
        if patients.len() != beliefs.len() {
            return Err(ModelError::InitialLength { expected: patients.len(), got: beliefs.len() });
        }
        if let Some(&bad) = beliefs.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(ModelError::BeliefOutOfRange(bad));
        }
        Ok(Self { patients, beliefs })
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    /// One period: rewards net of costs, then the belief update.
    pub fn step(&mut self, actions: &[bool]) -> f64 {
        let mut reward = 0.0;
        for ((m, x), &a) in self.patients.iter().zip(self.beliefs.iter_mut()).zip(actions) {
            reward += m.reward(*x, a) - if a { m.cost() } else { 0.0 };
            *x = if a { m.p() } else { m.passive_step(*x) };
        }
        reward
    }
}

/// Marks at most `capacity` patients active for this period.
pub fn select_actions(
    policy: Policy,
    cohort: &Cohort,
    capacity: usize,
    period: usize,
    rng: &mut impl Rng,
    actions: &mut Vec<bool>,
) {
    let n = cohort.len();
    actions.clear();
    actions.resize(n, false);
    let m = capacity.min(n);
    if m == 0 {
        return;
    }
    match policy {
        Policy::RoundRobin => {
            let start = (period * m) % n;
            for k in 0..m {
                actions[(start + k) % n] = true;
            }
        }
        Policy::Random => {
            for i in sample(rng, n, m) {
                actions[i] = true;
            }
        }
        _ => {
            let mut ranked: Vec<(f64, usize)> = cohort
                .patients
                .iter()
                .zip(&cohort.beliefs)
                .enumerate()
                .filter_map(|(i, (p, &x))| policy.priority(p, x).map(|v| (v, i)))
                .collect();
            let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
            if ranked.len() > m {
                ranked.select_nth_unstable_by(m - 1, order);
                ranked.truncate(m);
            }
            for (_, i) in ranked {
                actions[i] = true;
            }
        }
    }
}

/// Estimated normalized reward of one policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimResult {
    pub policy: Policy,
    /// Mean over runs of `(1 - beta) / N` times the discounted cohort reward.
    pub vbar_mean: f64,
    pub vbar_stderr: f64,
    pub runs: usize,
    pub horizon: usize,
    /// Mean number of active patients per period.
    pub mean_active: f64,
    /// Largest reward lost by stopping at the horizon, `max_n r_n beta^T`.
    pub truncation_bias: f64,
    pub elapsed_secs: f64,
}

impl PartialEq for SimResult {
    fn eq(&self, other: &Self) -> bool {
        self.policy == other.policy
            && self.vbar_mean.to_bits() == other.vbar_mean.to_bits()
            && self.vbar_stderr.to_bits() == other.vbar_stderr.to_bits()
            && self.runs == other.runs
            && self.horizon == other.horizon
            && self.mean_active.to_bits() == other.mean_active.to_bits()
            && self.truncation_bias.to_bits() == other.truncation_bias.to_bits()
    }
}

/// Validated simulation setup.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    patients: &'a [PatientParams],
    config: SimConfig,
    beta: f64,
}

impl<'a> Simulator<'a> {
    pub fn new(patients: &'a [PatientParams], config: SimConfig) -> Result<Self> {
        let beta = cohort_beta(patients)?;
        if config.horizon == 0 {
            return Err(ModelError::NonPositiveCount("horizon"));
        }
        if config.runs == 0 {
            return Err(ModelError::NonPositiveCount("runs"));
        }
        if config.capacity > patients.len() {
            return Err(ModelError::CapacityExceedsCohort { capacity: config.capacity, size: patients.len() });
        }
        if let InitialSampler::Explicit(x) = &config.initial {
            Cohort::new(patients.to_vec(), x.clone())?;
        }
        Ok(Self { patients, config, beta })
    }

    /// Initial beliefs of run `run`; identical across policies.
    pub fn initial_beliefs(&self, run: usize) -> Vec<f64> {
        match &self.config.initial {
            InitialSampler::Explicit(x) => x.clone(),
            InitialSampler::Uniform => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
                rng.set_stream(2 * run as u64);
                (0..self.patients.len()).map(|_| rng.random::<f64>()).collect()
            }
        }
    }

    /// Simulates one run, reporting each period's beliefs and actions, and
    /// returns the normalized discounted reward and the activation count.
    pub fn run_once(&self, run: usize, mut observe: impl FnMut(usize, &[f64], &[bool])) -> (f64, usize) {
        let mut cohort = Cohort {
            patients: self.patients.to_vec(),
            beliefs: self.initial_beliefs(run),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(2 * run as u64 + 1);
        let mut actions = Vec::with_capacity(cohort.len());
        let (mut total, mut disc, mut active) = (0.0, 1.0, 0);
        for period in 0..self.config.horizon {
            select_actions(self.config.policy, &cohort, self.config.capacity, period, &mut rng, &mut actions);
            observe(period, &cohort.beliefs, &actions);
            active += actions.iter().filter(|&&a| a).count();
            total += disc * cohort.step(&actions);
            disc *= self.beta;
        }
        ((1.0 - self.beta) * total / cohort.len() as f64, active)
    }

    pub fn run(&self) -> SimResult {
        let start = Instant::now();
        let per_run: Vec<(f64, usize)> = (0..self.config.runs)
            .into_par_iter()
            .map(|run| self.run_once(run, |_, _, _| {}))
            .collect();
        let runs = per_run.len() as f64;
        let mean = per_run.iter().map(|r| r.0).sum::<f64>() / runs;
        let stderr = if per_run.len() > 1 {
            let var = per_run.iter().map(|r| (r.0 - mean).powi(2)).sum::<f64>() / (runs - 1.0);
            (var / runs).sqrt()
        } else {
            0.0
        };
        let activations: usize = per_run.iter().map(|r| r.1).sum();
        let max_r = self.patients.iter().map(|m| m.r()).fold(0.0, f64::max);
        SimResult {
            policy: self.config.policy,
            vbar_mean: mean,
            vbar_stderr: stderr,
            runs: self.config.runs,
            horizon: self.config.horizon,
            mean_active: activations as f64 / (runs * self.config.horizon as f64),
            truncation_bias: max_r * self.beta.powf(self.config.horizon as f64),
            elapsed_secs: start.elapsed().as_secs_f64(),
        }
    }
}

pub fn simulate(config: &SimConfig, patients: &[PatientParams]) -> Result<SimResult> {
    Ok(Simulator::new(patients, config.clone())?.run())
}

/// Relative Lagrangian gap `(dbar - vbar) / dbar`; slightly negative values
/// within Monte-Carlo noise are returned as-is.
pub fn relative_gap(vbar: f64, dbar: f64) -> Result<f64> {
    if dbar.is_nan() || dbar <= 0.0 {
        return Err(ModelError::NonPositiveBound(dbar));
    }
    Ok((dbar - vbar) / dbar)
}
