//! Two-type instance grids, batch studies and summary tables.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dual::{dual_bound, CohortInitial, DualMode};
use crate::dynamics::PatientParams;
use crate::error::{ModelError, Result};
use crate::sim::{relative_gap, simulate, InitialSampler, Policy, SimConfig};

/// Grids spanned by the instance design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub p_grid: Vec<f64>,
    pub q_grid: Vec<f64>,
    pub prop_a: Vec<f64>,
    pub capacity_ratios: Vec<f64>,
    pub n: usize,
    pub r: f64,
    pub beta: f64,
    /// Minimum persistence `1 - p - q` of every type.
    pub delta_rho: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        let levels = vec![0.01, 0.05, 0.10, 0.20, 0.30, 0.35];
        Self {
            p_grid: levels.clone(),
            q_grid: levels,
            prop_a: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            capacity_ratios: vec![0.05, 0.1, 0.2, 0.3, 0.4, 0.5],
            n: 1000,
            r: 1.0,
            beta: 0.99,
            delta_rho: 0.05,
        }
    }
}

/// One two-type cohort configuration. Type A lapses less and recovers more.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub id: usize,
    pub pa: f64,
    pub qa: f64,
    pub pb: f64,
    pub qb: f64,
    pub prop_a: f64,
    pub capacity_ratio: f64,
    pub n: usize,
    pub r: f64,
    pub beta: f64,
    pub seed: u64,
}

impl InstanceSpec {
    /// Type-A head count, at least one patient of each type.
    pub fn n_a(&self) -> usize {
        ((self.prop_a * self.n as f64).round() as usize).clamp(1, self.n.saturating_sub(1).max(1))
    }

    pub fn capacity(&self) -> usize {
        ((self.capacity_ratio * self.n as f64).round() as usize).min(self.n)
    }

    /// Patients in id order, type A first.
    pub fn cohort(&self) -> Result<Vec<PatientParams>> {
        let a = PatientParams::new(self.pa, self.qa, self.r, self.beta)?;
        let b = PatientParams::new(self.pb, self.qb, self.r, self.beta)?;
        let n_a = self.n_a();
        Ok((0..self.n).map(|i| if i < n_a { a } else { b }).collect())
    }
}

fn instance_seed(base: u64, id: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(id as u64);
    rng.next_u64()
}

fn check_levels(name: &str, values: &[f64], lo_open: f64, hi_open: f64) -> Result<()> {
    if values.is_empty() {
        return Err(ModelError::InvalidGrid(format!("{name} is empty")));
    }
    match values.iter().find(|&&v| !(v > lo_open && v < hi_open)) {
        Some(v) => Err(ModelError::InvalidGrid(format!("{name} value {v} outside ({lo_open}, {hi_open})"))),
        None => Ok(()),
    }
}

/// Enumerated instances and the number of type pairs dropped as infeasible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceGrid {
    pub instances: Vec<InstanceSpec>,
    pub infeasible_pairs: usize,
}

/// All ordered type pairs with `pA < pB`, `qA > qB` and persistence at least
/// `delta_rho`, crossed with the mix and capacity levels.
pub fn build_instance_grid(cfg: &GridConfig, seed: u64) -> Result<InstanceGrid> {
    check_levels("p_grid", &cfg.p_grid, 0.0, 1.0)?;
    check_levels("q_grid", &cfg.q_grid, 0.0, 1.0)?;
    check_levels("prop_a", &cfg.prop_a, 0.0, 1.0)?;
    check_levels("capacity_ratios", &cfg.capacity_ratios, -1e-300, 1.0 + 1e-12)?;
    if cfg.n < 2 {
        return Err(ModelError::InvalidGrid("cohort size must be at least 2".into()));
    }
    if !(0.0..1.0).contains(&cfg.beta) || cfg.beta == 0.0 || cfg.r.is_nan() || cfg.r <= 0.0 || !(0.0..1.0).contains(&cfg.delta_rho) {
        return Err(ModelError::InvalidGrid("beta, r or delta_rho out of range".into()));
    }
    let feasible = |p: f64, q: f64| p + q <= 1.0 - cfg.delta_rho + 1e-12;
    if !cfg.p_grid.iter().any(|&p| cfg.q_grid.iter().any(|&q| feasible(p, q))) {
        return Err(ModelError::InvalidGrid(format!(
            "no (p, q) combination satisfies p + q <= {}",
            1.0 - cfg.delta_rho
        )));
    }
    let mut pairs = Vec::new();
    let mut infeasible = 0;
    for &pa in &cfg.p_grid {
        for &qa in &cfg.q_grid {
            for &pb in &cfg.p_grid {
                for &qb in &cfg.q_grid {
                    if !(pa < pb && qa > qb) {
                        continue;
                    }
                    if feasible(pa, qa) && feasible(pb, qb) {
                        pairs.push((pa, qa, pb, qb));
                    } else {
                        infeasible += 1;
                    }
                }
            }
        }
    }
    let mut instances = Vec::with_capacity(pairs.len() * cfg.prop_a.len() * cfg.capacity_ratios.len());
    for (pa, qa, pb, qb) in pairs {
        for &prop_a in &cfg.prop_a {
            for &capacity_ratio in &cfg.capacity_ratios {
                let id = instances.len();
                instances.push(InstanceSpec {
                    id,
                    pa,
                    qa,
                    pb,
                    qb,
                    prop_a,
                    capacity_ratio,
                    n: cfg.n,
                    r: cfg.r,
                    beta: cfg.beta,
                    seed: instance_seed(seed, id),
                });
            }
        }
    }
    Ok(InstanceGrid { instances, infeasible_pairs: infeasible })
}

/// Type pairs, mixes and capacities of the ten instances where the myopic
/// policy fares worst relative to the index policy at full scale.
pub const WORST_MYOPIC_ROWS: [(f64, f64, f64, f64, f64, f64); 10] = [
    (0.10, 0.05, 0.35, 0.01, 0.70, 0.10),
    (0.05, 0.05, 0.35, 0.01, 0.70, 0.10),
    (0.05, 0.05, 0.35, 0.01, 0.90, 0.05),
    (0.05, 0.05, 0.30, 0.01, 0.70, 0.10),
    (0.10, 0.05, 0.35, 0.01, 0.70, 0.05),
    (0.05, 0.05, 0.30, 0.01, 0.90, 0.05),
    (0.05, 0.05, 0.35, 0.01, 0.50, 0.20),
    (0.05, 0.05, 0.30, 0.01, 0.50, 0.20),
    (0.10, 0.05, 0.35, 0.01, 0.50, 0.10),
    (0.05, 0.10, 0.35, 0.05, 0.70, 0.30),
];

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

/// Grid instance matching a `(pA, qA, pB, qB, propA, M/N)` row.
pub fn find_instance(grid: &[InstanceSpec], row: (f64, f64, f64, f64, f64, f64)) -> Option<&InstanceSpec> {
    grid.iter().find(|s| {
        close(s.pa, row.0)
            && close(s.qa, row.1)
            && close(s.pb, row.2)
            && close(s.qb, row.3)
            && close(s.prop_a, row.4)
            && close(s.capacity_ratio, row.5)
    })
}

/// Scale presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    /// Small cohorts, the ten worst-myopic rows plus sampled instances.
    Desk,
    /// Full grid at full scale.
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(format!("unknown profile {other:?} (expected desk or paper)")),
        }
    }
}

/// Simulation settings shared by every instance of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub horizon: usize,
    pub runs: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub policies: Vec<Policy>,
}

impl StudyConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let (horizon, runs) = match profile {
            Profile::Desk => (300, 200),
            Profile::Paper => (300, 1000),
        };
        Self { horizon, runs, epsilon: 1e-6, seed: 2024, policies: Policy::BENCHMARK.to_vec() }
    }
}

/// Grid defaults for a profile.
pub fn profile_grid(profile: Profile) -> GridConfig {
    match profile {
        Profile::Desk => GridConfig { n: 200, ..GridConfig::default() },
        Profile::Paper => GridConfig::default(),
    }
}

/// Number of sampled grid instances added to the worst-myopic rows in the
/// desk profile.
pub const DESK_SAMPLES: usize = 20;

/// Instances studied under a profile.
pub fn profile_instances(profile: Profile, grid: &GridConfig, seed: u64) -> Result<Vec<InstanceSpec>> {
    let all = build_instance_grid(grid, seed)?.instances;
    if profile == Profile::Paper {
        return Ok(all);
    }
    let mut chosen: Vec<usize> = WORST_MYOPIC_ROWS.iter().filter_map(|&row| find_instance(&all, row)).map(|s| s.id).collect();
    let rest: Vec<usize> = all.iter().map(|s| s.id).filter(|id| !chosen.contains(id)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take = DESK_SAMPLES.min(rest.len());
    chosen.extend(rand::seq::index::sample(&mut rng, rest.len(), take).into_iter().map(|k| rest[k]));
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|id| all[id].clone()).collect())
}

/// One policy's estimate on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutcome {
    pub policy: Policy,
    pub vbar: f64,
    pub stderr: f64,
    /// Relative gap against the normalized dual bound.
    pub gamma: f64,
    /// Gap after rescaling `vbar` by `1 / (1 - beta^T)`.
    pub gamma_adjusted: f64,
}

/// One instance's results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub spec: InstanceSpec,
    pub n_a: usize,
    pub capacity: usize,
    pub dbar: f64,
    pub lambda_star: f64,
    pub dual_iterations: u32,
    pub dual_mode: Option<DualMode>,
    pub truncation_bias: f64,
    pub outcomes: Vec<PolicyOutcome>,
    pub runtime_secs: f64,
    pub error: Option<String>,
}

impl StudyRecord {
    pub fn outcome(&self, policy: Policy) -> Option<&PolicyOutcome> {
        self.outcomes.iter().find(|o| o.policy == policy)
    }
}

/// Dual bound and all policy simulations for one instance.
pub fn run_instance(spec: &InstanceSpec, cfg: &StudyConfig) -> StudyRecord {
    let start = Instant::now();
    let mut record = StudyRecord {
        spec: spec.clone(),
        n_a: spec.n_a(),
        capacity: spec.capacity(),
        dbar: f64::NAN,
        lambda_star: f64::NAN,
        dual_iterations: 0,
        dual_mode: None,
        truncation_bias: f64::NAN,
        outcomes: Vec::new(),
        runtime_secs: 0.0,
        error: None,
    };
    if let Err(e) = fill_instance(spec, cfg, &mut record) {
        record.outcomes.clear();
        record.error = Some(e.to_string());
    }
    record.runtime_secs = start.elapsed().as_secs_f64();
    record
}

fn fill_instance(spec: &InstanceSpec, cfg: &StudyConfig, record: &mut StudyRecord) -> Result<()> {
    let cohort = spec.cohort()?;
    let capacity = spec.capacity();
    let dual = dual_bound(&cohort, capacity, cfg.epsilon, &CohortInitial::Uniform)?;
    let dbar = dual.normalized(cohort.len(), spec.beta);
    record.dbar = dbar;
    record.lambda_star = dual.lambda_star;
    record.dual_iterations = dual.iterations;
    record.dual_mode = Some(dual.mode);
    let scale = 1.0 - spec.beta.powf(cfg.horizon as f64);
    for &policy in &cfg.policies {
        let sim = simulate(
            &SimConfig {
                horizon: cfg.horizon,
                runs: cfg.runs,
                capacity,
                seed: spec.seed,
                policy,
                initial: InitialSampler::Uniform,
            },
            &cohort,
        )?;
        record.truncation_bias = sim.truncation_bias;
        record.outcomes.push(PolicyOutcome {
            policy,
            vbar: sim.vbar_mean,
            stderr: sim.vbar_stderr,
            gamma: relative_gap(sim.vbar_mean, dbar)?,
            gamma_adjusted: relative_gap(sim.vbar_mean / scale, dbar)?,
        });
    }
    Ok(())
}

fn partial_path(dir: &Path, id: usize) -> PathBuf {
    dir.join("partial").join(format!("instance-{id:05}.json"))
}

/// Runs every instance in parallel. With an output directory, each finished
/// instance is saved immediately and instances already saved are reused.
pub fn run_study(instances: &[InstanceSpec], cfg: &StudyConfig, out_dir: Option<&Path>) -> Result<Vec<StudyRecord>> {
    if instances.is_empty() {
        return Err(ModelError::InvalidGrid("no instances to run".into()));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir.join("partial"))?;
    }
    let mut records: Vec<StudyRecord> = instances
        .par_iter()
        .map(|spec| -> Result<StudyRecord> {
            if let Some(dir) = out_dir {
                let path = partial_path(dir, spec.id);
                if let Ok(text) = fs::read_to_string(&path) {
                    if let Ok(saved) = serde_json::from_str::<StudyRecord>(&text) {
                        if saved.spec == *spec {
                            return Ok(saved);
                        }
                    }
                }
                let record = run_instance(spec, cfg);
                let tmp = path.with_extension("tmp");
                fs::write(&tmp, serde_json::to_vec(&record)?)?;
                fs::rename(&tmp, &path)?;
                Ok(record)
            } else {
                Ok(run_instance(spec, cfg))
            }
        })
        .collect::<Result<_>>()?;
    records.sort_by_key(|r| r.spec.id);
    Ok(records)
}

/// Formats with 12 significant digits, shortest round-trip form.
pub fn fmt_sig(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() { String::new() } else { v.to_string() };
    }
    let rounded: f64 = format!("{v:.11e}").parse().expect("formatted float parses");
    rounded.to_string()
}

/// Writes the per-instance table.
pub fn write_records_csv(records: &[StudyRecord], policies: &[Policy], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = [
        "id", "pA", "qA", "pB", "qB", "propA", "capacity_ratio", "N", "nA", "M", "r", "beta", "seed", "dbar",
        "lambda_star", "dual_iterations", "dual_mode", "truncation_bias",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for p in policies {
        for field in ["vbar", "stderr", "gamma", "gamma_adj"] {
            header.push(format!("{field}_{}", p.name()));
        }
    }
    header.push("error".into());
    w.write_record(&header)?;
    for rec in records {
        let s = &rec.spec;
        let mut row = vec![
            s.id.to_string(),
            fmt_sig(s.pa),
            fmt_sig(s.qa),
            fmt_sig(s.pb),
            fmt_sig(s.qb),
            fmt_sig(s.prop_a),
            fmt_sig(s.capacity_ratio),
            s.n.to_string(),
            rec.n_a.to_string(),
            rec.capacity.to_string(),
            fmt_sig(s.r),
            fmt_sig(s.beta),
            s.seed.to_string(),
            fmt_sig(rec.dbar),
            fmt_sig(rec.lambda_star),
            rec.dual_iterations.to_string(),
            rec.dual_mode.map(|m| format!("{m:?}")).unwrap_or_default(),
            fmt_sig(rec.truncation_bias),
        ];
        for p in policies {
            match rec.outcome(*p) {
                Some(o) => row.extend([fmt_sig(o.vbar), fmt_sig(o.stderr), fmt_sig(o.gamma), fmt_sig(o.gamma_adjusted)]),
                None => row.extend(std::iter::repeat_n(String::new(), 4)),
            }
        }
        row.push(rec.error.clone().unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a table written by [`write_records_csv`].
pub fn read_records_csv(input: impl std::io::Read) -> Result<Vec<StudyRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let policies: Vec<Policy> = headers
        .iter()
        .filter_map(|h| h.strip_prefix("vbar_"))
        .filter_map(|p| p.parse().ok())
        .collect();
    let num = |row: &csv::StringRecord, name: &str| -> f64 {
        col(name).and_then(|i| row.get(i)).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN)
    };
    let int = |row: &csv::StringRecord, name: &str| -> usize {
        col(name).and_then(|i| row.get(i)).and_then(|v| v.parse().ok()).unwrap_or(0)
    };
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let error = col("error").and_then(|i| row.get(i)).filter(|v| !v.is_empty()).map(str::to_string);
        let outcomes = if error.is_some() {
            Vec::new()
        } else {
            policies
                .iter()
                .map(|p| PolicyOutcome {
                    policy: *p,
                    vbar: num(&row, &format!("vbar_{}", p.name())),
                    stderr: num(&row, &format!("stderr_{}", p.name())),
                    gamma: num(&row, &format!("gamma_{}", p.name())),
                    gamma_adjusted: num(&row, &format!("gamma_adj_{}", p.name())),
                })
                .collect()
        };
        out.push(StudyRecord {
            spec: InstanceSpec {
                id: int(&row, "id"),
                pa: num(&row, "pA"),
                qa: num(&row, "qA"),
                pb: num(&row, "pB"),
                qb: num(&row, "qB"),
                prop_a: num(&row, "propA"),
                capacity_ratio: num(&row, "capacity_ratio"),
                n: int(&row, "N"),
                r: num(&row, "r"),
                beta: num(&row, "beta"),
                seed: col("seed").and_then(|i| row.get(i)).and_then(|v| v.parse().ok()).unwrap_or(0),
            },
            n_a: int(&row, "nA"),
            capacity: int(&row, "M"),
            dbar: num(&row, "dbar"),
            lambda_star: num(&row, "lambda_star"),
            dual_iterations: int(&row, "dual_iterations") as u32,
            dual_mode: None,
            truncation_bias: num(&row, "truncation_bias"),
            outcomes,
            runtime_secs: 0.0,
            error,
        });
    }
    Ok(out)
}

/// Run metadata written next to the CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyMetadata {
    pub code_version: String,
    pub profile: Option<Profile>,
    pub grid: GridConfig,
    pub config: StudyConfig,
    pub instances: usize,
    pub failed_instances: Vec<usize>,
    pub runtime_secs: BTreeMap<usize, f64>,
}

impl StudyMetadata {
    pub fn new(profile: Option<Profile>, grid: GridConfig, config: StudyConfig, records: &[StudyRecord]) -> Self {
        Self {
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            profile,
            grid,
            config,
            instances: records.len(),
            failed_instances: records.iter().filter(|r| r.error.is_some()).map(|r| r.spec.id).collect(),
            runtime_secs: records.iter().map(|r| (r.spec.id, r.runtime_secs)).collect(),
        }
    }
}

/// Writes `records.csv` and `metadata.json` into `dir`.
pub fn write_study(dir: &Path, records: &[StudyRecord], meta: &StudyMetadata) -> Result<()> {
    fs::create_dir_all(dir)?;
    let file = fs::File::create(dir.join("records.csv"))?;
    write_records_csv(records, &meta.config.policies, std::io::BufWriter::new(file))?;
    fs::write(dir.join("metadata.json"), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

/// Summary statistics of one column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub label: String,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Linear interpolation between order statistics at rank `(n - 1) q`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn describe(label: &str, values: &[f64]) -> Result<StatRow> {
    if values.is_empty() {
        return Err(ModelError::EmptyRecords);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let std = if sorted.len() > 1 {
        (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(StatRow {
        label: label.to_string(),
        count: sorted.len(),
        mean,
        std,
        min: sorted[0],
        q25: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q75: quantile(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
    })
}

/// One row of the worst-myopic table; gaps in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstRow {
    pub id: usize,
    pub pa: f64,
    pub qa: f64,
    pub pb: f64,
    pub qb: f64,
    pub prop_a: f64,
    pub capacity_ratio: f64,
    pub gamma_whittle: f64,
    pub gamma_myopic: f64,
    pub gamma_random: f64,
    pub gamma_round_robin: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportKind {
    /// Per-policy gap statistics, in percent.
    Gaps,
    /// Statistics of the index-to-myopic reward ratio.
    Ratios,
    /// Instances with the largest myopic-to-index gap ratio.
    WorstMyopic(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Summary {
    Stats(Vec<StatRow>),
    Worst(Vec<WorstRow>),
}

fn gap_pct(rec: &StudyRecord, policy: Policy) -> f64 {
    rec.outcome(policy).map(|o| 100.0 * o.gamma).unwrap_or(f64::NAN)
}

pub fn summarize(records: &[StudyRecord], kind: ReportKind) -> Result<Summary> {
    let ok: Vec<&StudyRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    if ok.is_empty() {
        return Err(ModelError::EmptyRecords);
    }
    match kind {
        ReportKind::Gaps => {
            let mut policies: Vec<Policy> = Vec::new();
            for r in &ok {
                for o in &r.outcomes {
                    if !policies.contains(&o.policy) {
                        policies.push(o.policy);
                    }
                }
            }
            policies
                .iter()
                .map(|&p| {
                    let values: Vec<f64> = ok.iter().filter_map(|r| r.outcome(p)).map(|o| 100.0 * o.gamma).collect();
                    describe(&p.name(), &values)
                })
                .collect::<Result<_>>()
                .map(Summary::Stats)
        }
        ReportKind::Ratios => {
            let values: Vec<f64> = ok
                .iter()
                .filter_map(|r| Some(r.outcome(Policy::Whittle)?.vbar / r.outcome(Policy::Myopic)?.vbar))
                .collect();
            Ok(Summary::Stats(vec![describe("whittle/myopic", &values)?]))
        }
        ReportKind::WorstMyopic(k) => {
            let mut rows: Vec<WorstRow> = ok
                .iter()
                .filter(|r| r.outcome(Policy::Whittle).is_some() && r.outcome(Policy::Myopic).is_some())
                .map(|r| {
                    let s = &r.spec;
                    let (w, m) = (gap_pct(r, Policy::Whittle), gap_pct(r, Policy::Myopic));
                    WorstRow {
                        id: s.id,
                        pa: s.pa,
                        qa: s.qa,
                        pb: s.pb,
                        qb: s.qb,
                        prop_a: s.prop_a,
                        capacity_ratio: s.capacity_ratio,
                        gamma_whittle: w,
                        gamma_myopic: m,
                        gamma_random: gap_pct(r, Policy::Random),
                        gamma_round_robin: gap_pct(r, Policy::RoundRobin),
                        ratio: m / w,
                    }
                })
                .collect();
            if rows.is_empty() {
                return Err(ModelError::EmptyRecords);
            }
            rows.sort_by(|a, b| b.ratio.total_cmp(&a.ratio).then(a.id.cmp(&b.id)));
            rows.truncate(k);
            Ok(Summary::Worst(rows))
        }
    }
}

/// Writes a summary as CSV.
pub fn write_summary_csv(summary: &Summary, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    match summary {
        Summary::Stats(rows) => {
            w.write_record(["label", "count", "mean", "std", "min", "q25", "median", "q75", "max", "quantile_method"])?;
            for r in rows {
                w.write_record([
                    r.label.clone(),
                    r.count.to_string(),
                    fmt_sig(r.mean),
                    fmt_sig(r.std),
                    fmt_sig(r.min),
                    fmt_sig(r.q25),
                    fmt_sig(r.median),
                    fmt_sig(r.q75),
                    fmt_sig(r.max),
                    "linear".to_string(),
                ])?;
            }
        }
        Summary::Worst(rows) => {
            w.write_record([
                "id", "pA", "qA", "pB", "qB", "propA", "capacity_ratio", "gamma_whittle", "gamma_myopic", "gamma_random",
                "gamma_round_robin", "ratio",
            ])?;
            for r in rows {
                w.write_record([
                    r.id.to_string(),
                    fmt_sig(r.pa),
                    fmt_sig(r.qa),
                    fmt_sig(r.pb),
                    fmt_sig(r.qb),
                    fmt_sig(r.prop_a),
                    fmt_sig(r.capacity_ratio),
                    fmt_sig(r.gamma_whittle),
                    fmt_sig(r.gamma_myopic),
                    fmt_sig(r.gamma_random),
                    fmt_sig(r.gamma_round_robin),
                    fmt_sig(r.ratio),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn default_grid_size() {
        let grid = build_instance_grid(&GridConfig::default(), 1).unwrap();
        assert_eq!(grid.instances.len(), 6750);
        assert_eq!(grid.infeasible_pairs, 0);
        assert!(grid.instances.iter().all(|s| s.pa < s.pb && s.qa > s.qb));
        assert!(WORST_MYOPIC_ROWS.iter().all(|&row| find_instance(&grid.instances, row).is_some()));
    }

    #[test]
    fn degenerate_grid_is_empty() {
        let cfg = GridConfig { p_grid: vec![0.1], q_grid: vec![0.2], ..GridConfig::default() };
        assert!(build_instance_grid(&cfg, 1).unwrap().instances.is_empty());
    }

    #[test]
    fn small_grid_matches_enumeration() {
        let cfg = GridConfig { p_grid: vec![0.1, 0.3], q_grid: vec![0.05, 0.2], ..GridConfig::default() };
        let grid = build_instance_grid(&cfg, 1).unwrap();
        let mut pairs = 0;
        for pa in [0.1, 0.3] {
            for pb in [0.1, 0.3] {
                for qa in [0.05, 0.2] {
                    for qb in [0.05, 0.2] {
                        if pa < pb && qa > qb && pa + qa <= 0.95 && pb + qb <= 0.95 {
                            pairs += 1;
                        }
                    }
                }
            }
        }
        assert_eq!(grid.instances.len(), pairs * 30);
    }

    #[test]
    fn infeasible_grids() {
        let cfg = GridConfig { p_grid: vec![0.6, 0.7], q_grid: vec![0.5, 0.6], ..GridConfig::default() };
        assert!(build_instance_grid(&cfg, 1).is_err());
        let cfg = GridConfig { p_grid: vec![0.1, 0.5], q_grid: vec![0.05, 0.9], ..GridConfig::default() };
        let grid = build_instance_grid(&cfg, 1).unwrap();
        assert_eq!(grid.infeasible_pairs, 1);
        let cfg = GridConfig { p_grid: vec![], ..GridConfig::default() };
        assert!(build_instance_grid(&cfg, 1).is_err());
    }

    #[test]
    fn counts_keep_both_types() {
        let mut s = build_instance_grid(&GridConfig { n: 10, ..GridConfig::default() }, 1).unwrap().instances[0].clone();
        s.prop_a = 0.99;
        assert_eq!(s.n_a(), 9);
        s.prop_a = 0.01;
        assert_eq!(s.n_a(), 1);
    }

    #[test]
    fn desk_instances() {
        let grid = profile_grid(Profile::Desk);
        let inst = profile_instances(Profile::Desk, &grid, 5).unwrap();
        assert_eq!(inst.len(), 30);
        assert!(inst.windows(2).all(|w| w[0].id < w[1].id));
        assert_eq!(inst, profile_instances(Profile::Desk, &grid, 5).unwrap());
    }

    #[test]
    fn statistics() {
        let one = describe("x", &[3.0]).unwrap();
        assert_eq!((one.mean, one.median, one.min, one.max, one.std), (3.0, 3.0, 3.0, 3.0, 0.0));
        let s = describe("x", &[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_abs_diff_eq!(s.q25, 1.75, epsilon = 1e-15);
        assert_abs_diff_eq!(s.median, 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.std, (5.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert!(describe("x", &[]).is_err());
        assert!(summarize(&[], ReportKind::Gaps).is_err());
    }

    #[test]
    fn sig_formatting() {
        assert_eq!(fmt_sig(0.1 + 0.2), "0.3");
        assert_eq!(fmt_sig(1234.56789012345), "1234.56789012");
        assert_eq!(fmt_sig(f64::NAN), "");
    }

    #[test]
    fn tiny_study_round_trip() {
        let cfg = GridConfig { p_grid: vec![0.1, 0.3], q_grid: vec![0.05, 0.2], n: 10, ..GridConfig::default() };
        let inst: Vec<_> = build_instance_grid(&cfg, 3).unwrap().instances.into_iter().take(2).collect();
        let study = StudyConfig { horizon: 20, runs: 4, epsilon: 1e-6, seed: 3, policies: Policy::BENCHMARK.to_vec() };
        let records = run_study(&inst, &study, None).unwrap();
        for r in &records {
            assert!(r.error.is_none());
            for o in &r.outcomes {
                assert_eq!(o.gamma, relative_gap(o.vbar, r.dbar).unwrap());
            }
        }
        let mut buf = Vec::new();
        write_records_csv(&records, &study.policies, &mut buf).unwrap();
        let back = read_records_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_abs_diff_eq!(back[1].outcomes[0].vbar, records[1].outcomes[0].vbar, epsilon = 1e-11);
        let gaps = summarize(&records, ReportKind::Gaps).unwrap();
        let Summary::Stats(rows) = gaps else { panic!() };
        assert_eq!(rows.len(), 4);
        assert!(matches!(summarize(&records, ReportKind::WorstMyopic(1)).unwrap(), Summary::Worst(v) if v.len() == 1));
    }
}
