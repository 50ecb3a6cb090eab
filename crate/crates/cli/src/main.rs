use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adherence_core::study::{
    fmt_sig, profile_grid, profile_instances, read_records_csv, write_study, write_summary_csv, StudyMetadata,
};
use adherence_core::{
    dual_bound, relative_gap, simulate, CohortInitial, GridConfig, GridSpec, InitialSampler, PatientParams, Policy,
    Profile, ReportKind, SimConfig, StudyConfig, Threshold,
};
use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "adherence", version, about = "Adherence restless-bandit index, bounds and simulations")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the index on a belief grid.
    Index {
        #[command(flatten)]
        patient: PatientArg,
        #[arg(long, default_value_t = 101)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate the optimal threshold on a price grid.
    ThresholdMap {
        #[command(flatten)]
        patient: PatientArg,
        #[arg(long, default_value_t = 101)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reward and work metrics at given beliefs and thresholds.
    Metrics {
        #[command(flatten)]
        patient: PatientArg,
        /// Comma-separated initial beliefs.
        #[arg(long, value_delimiter = ',', required = true)]
        x: Vec<f64>,
        /// Comma-separated thresholds.
        #[arg(long, value_delimiter = ',', required = true)]
        z: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Lagrangian dual bound of a cohort.
    DualBound {
        #[command(flatten)]
        cohort: CohortArgs,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
    },
    /// Monte-Carlo policy evaluation of a cohort.
    Simulate {
        #[command(flatten)]
        cohort: CohortArgs,
        #[arg(long, value_delimiter = ',', default_value = "whittle,myopic,round-robin,random")]
        policies: Vec<Policy>,
        #[arg(long, default_value_t = 300)]
        horizon: usize,
        #[arg(long, default_value_t = 200)]
        runs: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Batch study over a two-type instance grid.
    Study {
        #[arg(long, value_enum, default_value_t = ProfileArg::Desk)]
        profile: ProfileArg,
        /// JSON grid overriding the profile grid.
        #[arg(long)]
        grid_file: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        policies: Option<Vec<Policy>>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        /// Cohort size override.
        #[arg(long)]
        n: Option<usize>,
        /// Run only the first K instances.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Summary tables of a study CSV.
    Summarize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportArg::Gaps)]
        report: ReportArg,
        #[arg(long, default_value_t = 10)]
        top: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Indexability condition checks.
    Verify {
        #[command(flatten)]
        patient: PatientArg,
        #[arg(long, value_enum, default_value_t = Suite::Both)]
        suite: Suite,
        #[arg(long, default_value_t = 200)]
        triples: usize,
        #[arg(long, default_value_t = 20240601)]
        seed: u64,
    },
    /// Columnar data for staircase, index, threshold-map and sensitivity curves.
    Curves {
        #[command(flatten)]
        patient: PatientArg,
        /// Initial belief of the staircase curves.
        #[arg(long, default_value_t = 0.5)]
        x: f64,
        #[arg(long, default_value_t = 201)]
        points: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct PatientArg {
    /// p,q,r,beta[,cost]
    #[arg(long)]
    params: String,
}

#[derive(Args)]
struct CohortArgs {
    /// One p,q,r,beta[,cost] per patient type.
    #[arg(long, required = true)]
    params: Vec<String>,
    /// Comma-separated head count per type (default one each).
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long)]
    capacity: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportArg {
    Gaps,
    Ratios,
    WorstMyopic,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Suite {
    Discounted,
    Average,
    Both,
}

/// Invalid input or configuration; exit code 2.
#[derive(Debug)]
struct Usage(anyhow::Error);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<T, E: Into<anyhow::Error>>(r: std::result::Result<T, E>) -> Result<T> {
    r.map_err(|e| Usage(e.into()).into())
}

fn parse_params(s: &str) -> Result<PatientParams> {
    let v: Vec<f64> = usage(
        s.split(',').map(|t| t.trim().parse::<f64>()).collect::<std::result::Result<_, _>>(),
    )
    .with_context(|| format!("--params {s:?}"))?;
    let m = match v.as_slice() {
        [p, q, r, b] => PatientParams::new(*p, *q, *r, *b),
        [p, q, r, b, c] => PatientParams::new(*p, *q, *r, *b).and_then(|m| m.with_cost(*c)),
        _ => return Err(Usage(anyhow!("--params expects p,q,r,beta[,cost], got {s:?}")).into()),
    };
    usage(m)
}

fn cohort(args: &CohortArgs) -> Result<Vec<PatientParams>> {
    let types = args.params.iter().map(|s| parse_params(s)).collect::<Result<Vec<_>>>()?;
    let counts = args.n.clone().unwrap_or_else(|| vec![1; types.len()]);
    if counts.len() != types.len() {
        return Err(Usage(anyhow!("--n has {} counts for {} types", counts.len(), types.len())).into());
    }
    Ok(types.iter().zip(&counts).flat_map(|(m, &k)| std::iter::repeat_n(*m, k)).collect())
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(io::BufWriter::new(
            fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_table(out: impl Write, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn emit_json(value: &impl serde::Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn grid(points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Usage(anyhow!("--points must be at least 2")).into());
    }
    Ok((0..points).map(|i| i as f64 / (points - 1) as f64).collect())
}

fn threshold_cell(z: Threshold) -> String {
    match z {
        Threshold::At(v) => fmt_sig(v),
        other => other.to_string(),
    }
}

fn index_rows(m: &PatientParams, xs: &[f64]) -> Vec<Vec<String>> {
    xs.iter().map(|&x| vec![fmt_sig(x), fmt_sig(m.mp_index(x)), fmt_sig(m.avg_mp_index(x))]).collect()
}

fn threshold_rows(m: &PatientParams, points: usize) -> Result<Vec<Vec<String>>> {
    Ok(grid(points)?
        .into_iter()
        .map(|u| {
            let lam = u * m.lambda_max();
            vec![fmt_sig(lam), threshold_cell(m.optimal_threshold(lam))]
        })
        .collect())
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        usage(rayon::ThreadPoolBuilder::new().num_threads(n).build_global())?;
    }
    match cli.command {
        Command::Index { patient, points, out } => {
            let m = parse_params(&patient.params)?;
            write_table(sink(out.as_deref())?, &["x", "index", "avg_index"], index_rows(&m, &grid(points)?))?;
        }
        Command::ThresholdMap { patient, points, out } => {
            let m = parse_params(&patient.params)?;
            write_table(sink(out.as_deref())?, &["lambda", "threshold"], threshold_rows(&m, points)?)?;
        }
        Command::Metrics { patient, x, z, out } => {
            let m = parse_params(&patient.params)?;
            if let Some(bad) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Usage(anyhow!("belief {bad} outside [0, 1]")).into());
            }
            let mut rows = Vec::new();
            for &xv in &x {
                for &zv in &z {
                    let zt = usage(Threshold::new(zv))?;
                    let (big, small) = (m.threshold_metrics(xv, zt), m.marginal_metrics(xv, zt));
                    rows.push(vec![
                        fmt_sig(xv),
                        threshold_cell(zt),
                        fmt_sig(big.reward),
                        fmt_sig(big.work),
                        fmt_sig(small.reward),
                        fmt_sig(small.work),
                        fmt_sig(small.reward / small.work),
                    ]);
                }
            }
            write_table(sink(out.as_deref())?, &["x", "z", "F", "G", "f", "g", "mp"], rows)?;
        }
        Command::DualBound { cohort: args, eps } => {
            let patients = cohort(&args)?;
            let res = usage(dual_bound(&patients, args.capacity, eps, &CohortInitial::Uniform))?;
            let beta = patients[0].beta();
            let mut value = serde_json::to_value(&res)?;
            value["normalized_bound"] = serde_json::json!(res.normalized(patients.len(), beta));
            emit_json(&value)?;
        }
        Command::Simulate { cohort: args, policies, horizon, runs, seed, eps, out } => {
            let patients = cohort(&args)?;
            let dual = usage(dual_bound(&patients, args.capacity, eps, &CohortInitial::Uniform))?;
            let dbar = dual.normalized(patients.len(), patients[0].beta());
            let mut rows = Vec::new();
            for policy in policies {
                let config = SimConfig {
                    horizon,
                    runs,
                    capacity: args.capacity,
                    seed,
                    policy,
                    initial: InitialSampler::Uniform,
                };
                let res = usage(simulate(&config, &patients))?;
                rows.push(vec![
                    policy.name(),
                    fmt_sig(res.vbar_mean),
                    fmt_sig(res.vbar_stderr),
                    fmt_sig(dbar),
                    fmt_sig(relative_gap(res.vbar_mean, dbar)?),
                    fmt_sig(res.mean_active),
                    fmt_sig(res.truncation_bias),
                ]);
            }
            write_table(
                sink(out.as_deref())?,
                &["policy", "vbar", "stderr", "dbar", "gamma", "mean_active", "truncation_bias"],
                rows,
            )?;
        }
        Command::Study { profile, grid_file, out_dir, seed, eps, policies, runs, horizon, n, limit } => {
            let profile = match profile {
                ProfileArg::Desk => Profile::Desk,
                ProfileArg::Paper => Profile::Paper,
            };
            let mut grid_cfg = match grid_file {
                Some(path) => {
                    let text = usage(fs::read_to_string(&path)).with_context(|| format!("reading {}", path.display()))?;
                    usage(serde_json::from_str::<GridConfig>(&text)).context("parsing grid file")?
                }
                None => profile_grid(profile),
            };
            if let Some(n) = n {
                grid_cfg.n = n;
            }
            let mut config = StudyConfig::for_profile(profile);
            config.seed = seed.unwrap_or(config.seed);
            config.epsilon = eps.unwrap_or(config.epsilon);
            config.runs = runs.unwrap_or(config.runs);
            config.horizon = horizon.unwrap_or(config.horizon);
            if let Some(p) = policies {
                config.policies = p;
            }
            let mut instances = usage(profile_instances(profile, &grid_cfg, config.seed))?;
            if let Some(k) = limit {
                instances.truncate(k);
            }
            if instances.is_empty() {
                return Err(Usage(anyhow!("the grid yields no instances")).into());
            }
            let records = adherence_core::run_study(&instances, &config, Some(&out_dir))?;
            let meta = StudyMetadata::new(Some(profile), grid_cfg, config, &records);
            write_study(&out_dir, &records, &meta)?;
            let failed = meta.failed_instances.len();
            eprintln!("{} instances, {failed} failed, results in {}", records.len(), out_dir.display());
            if failed > 0 {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Summarize { input, report, top, out } => {
            let file = usage(fs::File::open(&input)).with_context(|| format!("opening {}", input.display()))?;
            let records = usage(read_records_csv(file))?;
            let kind = match report {
                ReportArg::Gaps => ReportKind::Gaps,
                ReportArg::Ratios => ReportKind::Ratios,
                ReportArg::WorstMyopic => ReportKind::WorstMyopic(top),
            };
            let summary = usage(adherence_core::summarize(&records, kind))?;
            write_summary_csv(&summary, sink(out.as_deref())?)?;
        }
        Command::Verify { patient, suite, triples, seed } => {
            let m = parse_params(&patient.params)?;
            let spec = GridSpec { triples, seed, ..GridSpec::default() };
            let mut passed = true;
            let mut value = serde_json::Map::new();
            if suite != Suite::Average {
                let r = m.verify_pcl(&spec);
                passed &= r.passed();
                value.insert("discounted".into(), serde_json::to_value(&r)?);
            }
            if suite != Suite::Discounted {
                let r = m.verify_apcli(&spec);
                passed &= r.passed();
                value.insert("average".into(), serde_json::to_value(&r)?);
            }
            value.insert("passed".into(), passed.into());
            emit_json(&value)?;
            if !passed {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Curves { patient, x, points, out_dir } => {
            let m = parse_params(&patient.params)?;
            if !(0.0..=1.0).contains(&x) {
                return Err(Usage(anyhow!("belief {x} outside [0, 1]")).into());
            }
            fs::create_dir_all(&out_dir)?;
            let xs = grid(points)?;
            let open = |name: &str| sink(Some(&out_dir.join(name)));
            let staircase = xs.iter().map(|&z| {
                let (big, small) = (m.threshold_metrics(x, Threshold::At(z)), m.marginal_metrics(x, Threshold::At(z)));
                vec![fmt_sig(z), fmt_sig(big.reward), fmt_sig(big.work), fmt_sig(small.reward), fmt_sig(small.work)]
            });
            write_table(open("staircase.csv")?, &["z", "F", "G", "f", "g"], staircase)?;
            write_table(open("index.csv")?, &["x", "index", "avg_index"], index_rows(&m, &xs))?;
            write_table(open("threshold_map.csv")?, &["lambda", "threshold"], threshold_rows(&m, points)?)?;
            let sens = |vary_p: bool| -> Result<Vec<Vec<String>>> {
                let other = if vary_p { m.q() } else { m.p() };
                let axis: Vec<f64> = (1..50).map(|i| i as f64 / 50.0 * (1.0 - other)).collect();
                let mut rows = Vec::new();
                for xv in [0.1, 0.3, 0.5, 0.7, 0.9] {
                    let report = if vary_p { m.sensitivity_p(xv, &axis)? } else { m.sensitivity_q(xv, &axis)? };
                    for (v, idx) in axis.iter().zip(&report.values) {
                        rows.push(vec![fmt_sig(xv), fmt_sig(*v), fmt_sig(*idx)]);
                    }
                }
                Ok(rows)
            };
            write_table(open("sensitivity_p.csv")?, &["x", "p", "index"], sens(true)?)?;
            write_table(open("sensitivity_q.csv")?, &["x", "q", "index"], sens(false)?)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<Usage>()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
