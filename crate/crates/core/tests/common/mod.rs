#![allow(dead_code)]

use adherence_core::{PatientParams, Threshold};

/// Parameter sets shared by the verification tests. Index 1 has `beta = rho`.
pub fn parameter_sets() -> Vec<PatientParams> {
    [
        (0.3, 0.2, 1.0, 0.95),
        (0.1, 0.2, 1.0, 0.7),
        (0.05, 0.05, 1.0, 0.99),
        (0.01, 0.35, 1.0, 0.9),
        (0.35, 0.01, 1.0, 0.9),
        (0.2, 0.3, 1.0, 0.5),
        (0.1, 0.05, 1.0, 0.99),
        (0.35, 0.01, 1.0, 0.99),
        (0.6, 0.3, 1.0, 0.8),
        (0.5, 0.45, 1.0, 0.95),
        (0.3, 0.2, 2.0, 0.9),
        (0.2, 0.1, 0.5, 0.97),
    ]
    .iter()
    .map(|&(p, q, r, b)| PatientParams::new(p, q, r, b).unwrap())
    .collect()
}

/// Plain belief recursion, written from the transition probabilities.
pub struct Chain {
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub beta: f64,
}

impl Chain {
    pub fn of(m: &PatientParams) -> Self {
        Chain { p: m.p(), q: m.q(), r: m.r(), beta: m.beta() }
    }

    pub fn passive(&self, x: f64) -> f64 {
        x * (1.0 - self.q) + (1.0 - x) * self.p
    }

    pub fn next(&self, x: f64, active: bool) -> f64 {
        if active {
            self.p
        } else {
            self.passive(x)
        }
    }

    /// Discounted reward and work of a `z`-policy over `horizon` periods,
    /// with the first action optionally forced.
    pub fn run(&self, x: f64, z: Threshold, first: Option<bool>, horizon: usize) -> (f64, f64) {
        let (f, g, _) = self.run_flagged(x, z, first, horizon);
        (f, g)
    }

    /// As [`Chain::run`], also reporting whether some policy decision was
    /// taken at a belief within `TIE` of the threshold, where the exact
    /// action is decided by rounding.
    pub fn run_flagged(&self, x: f64, z: Threshold, first: Option<bool>, horizon: usize) -> (f64, f64, bool) {
        let (mut belief, mut disc, mut reward, mut work) = (x, 1.0, 0.0, 0.0);
        let mut tie = false;
        for t in 0..horizon {
            let forced = if t == 0 { first } else { None };
            tie |= forced.is_none() && near(belief, z);
            let active = forced.unwrap_or(z.is_active(belief));
            if active {
                reward += disc * self.r;
                work += disc;
            } else {
                reward += disc * self.r * (1.0 - belief);
            }
            belief = self.next(belief, active);
            disc *= self.beta;
        }
        (reward, work, tie)
    }

    pub fn metrics(&self, x: f64, z: Threshold, horizon: usize) -> (f64, f64) {
        self.run(x, z, None, horizon)
    }

    /// One-step deviation: active-first minus passive-first.
    pub fn marginal(&self, x: f64, z: Threshold, horizon: usize) -> (f64, f64) {
        let a = self.run(x, z, Some(true), horizon);
        let b = self.run(x, z, Some(false), horizon);
        (a.0 - b.0, a.1 - b.1)
    }

    /// Horizon after which the discounted tail is below `tol`.
    pub fn horizon_for(&self, tol: f64) -> usize {
        ((tol * (1.0 - self.beta) / self.r.max(1.0)).ln() / self.beta.ln()).ceil() as usize + 1
    }

    /// Average reward and work rates over whole cycles of `periods` steps,
    /// started from `p` (or from the fixed point when never active).
    pub fn cycle_average(&self, z: Threshold, periods: usize) -> (f64, f64) {
        let (f, g, _) = self.cycle_average_flagged(z, periods);
        (f, g)
    }

    pub fn cycle_average_flagged(&self, z: Threshold, periods: usize) -> (f64, f64, bool) {
        let zinf = self.p / (self.p + self.q);
        let mut x = self.p;
        let mut probe = self.p;
        let mut activates = false;
        for _ in 0..100_000 {
            if z.is_active(probe) {
                activates = true;
                break;
            }
            probe = self.passive(probe);
        }
        if !activates {
            x = zinf;
        }
        let (mut reward, mut work) = (0.0, 0.0);
        let mut closed = (0.0, 0.0, 0usize);
        let mut tie = false;
        for t in 0..periods {
            tie |= near(x, z);
            let active = z.is_active(x);
            reward += if active { self.r } else { self.r * (1.0 - x) };
            if active {
                work += 1.0;
                closed = (reward, work, t + 1);
            }
            x = self.next(x, active);
        }
        if closed.2 == 0 {
            closed = (reward, work, periods);
        }
        (closed.0 / closed.2 as f64, closed.1 / closed.2 as f64, tie)
    }

    // Piece key of the integrand in the initial belief: the first action and
    // the step at which the policy first activates (capped).
    fn key(&self, x: f64, z: Threshold) -> (bool, usize) {
        if z.is_active(x) {
            return (true, 0);
        }
        let mut b = x;
        for t in 1..=20_000 {
            b = self.passive(b);
            if z.is_active(b) {
                return (false, t);
            }
        }
        (false, usize::MAX)
    }

    fn pieces(&self, z: Threshold, a: f64, b: f64, ka: (bool, usize), kb: (bool, usize), out: &mut Vec<f64>) {
        if ka == kb || b - a < 1e-14 {
            if ka != kb {
                out.push(0.5 * (a + b));
            }
            return;
        }
        let m = 0.5 * (a + b);
        let km = self.key(m, z);
        self.pieces(z, a, m, ka, km, out);
        self.pieces(z, m, b, km, kb, out);
    }

    /// `int_0^1 (F, G)(x, z) dx` by locating every jump of the piecewise
    /// affine integrand and applying the midpoint rule per piece.
    pub fn uniform_quadrature(&self, z: Threshold, seeds: usize) -> (f64, f64) {
        let horizon = self.horizon_for(1e-11);
        let grid: Vec<f64> = (0..=seeds).map(|i| i as f64 / seeds as f64).collect();
        let keys: Vec<_> = grid.iter().map(|&x| self.key(x, z)).collect();
        let mut cuts = vec![0.0];
        for i in 0..seeds {
            let mut found = Vec::new();
            self.pieces(z, grid[i], grid[i + 1], keys[i], keys[i + 1], &mut found);
            cuts.extend(found);
        }
        cuts.push(1.0);
        let (mut f, mut g) = (0.0, 0.0);
        for w in cuts.windows(2) {
            let len = w[1] - w[0];
            if len <= 0.0 {
                continue;
            }
            let (fr, gr) = self.metrics(0.5 * (w[0] + w[1]), z, horizon);
            f += len * fr;
            g += len * gr;
        }
        (f, g)
    }
}

/// Distance below which a belief and a threshold count as tied.
pub const TIE: f64 = 1e-9;

fn near(x: f64, z: Threshold) -> bool {
    matches!(z, Threshold::At(v) if (x - v).abs() <= TIE)
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

pub fn at(z: f64) -> Threshold {
    Threshold::new(z).unwrap()
}
