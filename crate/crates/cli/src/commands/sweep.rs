//! Scalability sweeps over the sensor count or the state dimension, and the
//! SNR sweep of a fixed optimized schedule.
//!
//! The main CSV holds only deterministic columns so identical flags give
//! identical bytes; wall-clock columns go to `<stem>.timings.csv` and the
//! per-point medians and interquartile ranges to `<stem>.summary.csv`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;

use cdkf_sched::bounds;
use cdkf_sched::model::{random_instance, GenSpec};
use cdkf_sched::montecarlo::{self, child_seed, McConfig};
use cdkf_sched::optimize::{self, Initial, ShootingProblem, SolveOptions, DEFAULT_SUBSTEPS};
use cdkf_sched::{Instance, SurrogateKind};

use super::bracket::LogGridSpec;
use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    /// Vary the sensor count M at fixed n.
    Sensors,
    /// Vary the state dimension n at fixed M.
    Dimension,
    /// Reuse one optimized schedule across noise scales.
    Snr,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    pub sweep: SweepKind,
    /// Comma-separated grid values (M or n).
    #[arg(long)]
    pub grid: Option<String>,
    /// Noise-scale grid for the SNR sweep.
    #[arg(long = "snr-sweep", default_value = "1e-2..1e2,9")]
    pub snr_sweep: LogGridSpec,
    #[arg(long, default_value_t = 3)]
    pub instances: usize,
    /// State dimension for the sensors and SNR sweeps.
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    /// Sensor count for the dimension and SNR sweeps.
    #[arg(long = "M", default_value_t = 30)]
    pub m: usize,
    /// Sensor output dimension.
    #[arg(long, default_value_t = 1)]
    pub p: usize,
    #[arg(long = "N", default_value_t = 30)]
    pub intervals: usize,
    #[arg(long = "T", default_value_t = 3.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 5.0)]
    pub budget: f64,
    #[arg(long, default_value_t = DEFAULT_SUBSTEPS)]
    pub substeps: usize,
    #[arg(long = "max-iters", default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long = "grad-tol", default_value_t = 1e-6)]
    pub grad_tol: f64,
    #[arg(long, default_value_t = 50)]
    pub runs: usize,
    #[arg(long = "n-eval", default_value_t = 300)]
    pub n_eval: usize,
    #[arg(long = "mc-substeps", default_value_t = 4)]
    pub mc_substeps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for Monte Carlo; timed solves always run on one thread.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Full-size grids: M up to 100, n up to 20, 10 instances, 100 runs.
    #[arg(long)]
    pub full: bool,
    /// Refuse sweeps whose predicted runtime exceeds this many seconds.
    #[arg(long = "max-runtime", default_value_t = 1800.0)]
    pub max_runtime: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
struct Row {
    sweep: &'static str,
    point: usize,
    value: usize,
    instance: usize,
    instance_seed: u64,
    kind: &'static str,
    n: usize,
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "N")]
    intervals: usize,
    iterations: Option<usize>,
    termination: String,
    objective: Option<f64>,
    norm_objective: Option<f64>,
    norm_mc_mean: Option<f64>,
    norm_mc_stderr: Option<f64>,
    status: String,
}

#[derive(Debug, Clone, Serialize)]
struct TimingRow {
    point: usize,
    value: usize,
    instance: usize,
    kind: &'static str,
    forward_s: f64,
    gradient_assembly_s: f64,
    adjoint_s: f64,
    projection_s: f64,
    total_s: f64,
    gradient_assembly_per_iter_s: f64,
}

#[derive(Debug, Clone, Serialize)]
struct SummaryRow {
    point: usize,
    value: usize,
    kind: &'static str,
    completed: usize,
    failed: usize,
    median_total_s: f64,
    iqr_total_s: f64,
    median_gradient_assembly_s: f64,
    iqr_gradient_assembly_s: f64,
    median_iterations: f64,
    median_norm_mc_mean: f64,
    iqr_norm_mc_mean: f64,
}

const KINDS: [SurrogateKind; 2] = [SurrogateKind::Info, SurrogateKind::Cov];

fn parse_grid(s: &str) -> Result<Vec<usize>> {
    let v = s
        .split(',')
        .map(|x| x.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Failure::Usage(format!("--grid: {e}")))?;
    if v.is_empty() || v.contains(&0) {
        return Err(Failure::Usage("--grid needs positive values".into()).into());
    }
    Ok(v)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "sweep".into());
    path.with_file_name(format!("{stem}.{suffix}.csv"))
}

/// Linear-interpolated quantile of a sample.
fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn iqr(values: &[f64]) -> f64 {
    quantile(values, 0.75) - quantile(values, 0.25)
}

struct Plan {
    values: Vec<usize>,
    instances: usize,
    runs: usize,
}

fn plan(a: &SweepArgs) -> Result<Plan> {
    let (default, full): (Vec<usize>, Vec<usize>) = match a.sweep {
        SweepKind::Sensors => (vec![10, 20, 40], (3..=10).map(|k| 10 * k).collect()),
        SweepKind::Dimension => (vec![2, 4, 8], (1..=10).map(|k| 2 * k).collect()),
        SweepKind::Snr => (vec![a.m], vec![a.m]),
    };
    let values = match &a.grid {
        Some(g) => parse_grid(g)?,
        None if a.full => full,
        None => default,
    };
    let (instances, runs) = if a.full { (a.instances.max(10), a.runs.max(100)) } else { (a.instances, a.runs) };
    if instances == 0 {
        return Err(Failure::Usage("--instances must be at least 1".into()).into());
    }
    Ok(Plan { values, instances, runs })
}

fn gen_spec(a: &SweepArgs, value: usize, seed: u64) -> GenSpec {
    let (n, m) = match a.sweep {
        SweepKind::Sensors => (a.n, value),
        SweepKind::Dimension => (value, a.m),
        SweepKind::Snr => (a.n, a.m),
    };
    GenSpec { horizon: a.horizon, budget: a.budget, ..GenSpec::new(n, m, a.p, seed) }
}

fn mc_config(a: &SweepArgs, runs: usize, seed: u64) -> McConfig {
    McConfig { n_runs: runs, n_eval: a.n_eval, substeps: a.mc_substeps, seed, threads: a.jobs }
}

fn instance_seed(master: u64, point: usize, instance: usize) -> u64 {
    child_seed(master, ((point as u64) << 32) | instance as u64)
}

/// Upper estimate: two evaluations per iteration at the iteration cap plus
/// the Monte Carlo runs, timed on the first instance of each point.
fn predict_runtime(a: &SweepArgs, plan: &Plan) -> Result<f64> {
    let mut total = 0.0;
    let threads = a.jobs.unwrap_or_else(rayon_threads).max(1) as f64;
    for (p, &value) in plan.values.iter().enumerate() {
        let inst = random_instance(&gen_spec(a, value, instance_seed(a.seed, p, 0)))?;
        let sched = optimize::centered_schedule(&inst, a.intervals)?;
        for kind in KINDS {
            let problem = ShootingProblem::new(&inst, a.intervals, a.substeps, kind)?;
            let start = Instant::now();
            problem.evaluate(sched.rates())?;
            total += plan.instances as f64 * start.elapsed().as_secs_f64() * 2.0 * a.max_iters as f64;
        }
        let start = Instant::now();
        montecarlo::mc_objective(&inst, &sched, &mc_config(a, 1, 0))?;
        total += 2.0 * plan.instances as f64 * start.elapsed().as_secs_f64() * plan.runs as f64 / threads;
    }
    Ok(total)
}

fn rayon_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

pub fn run(a: &SweepArgs) -> Result<()> {
    let plan = plan(a)?;
    if a.full {
        eprintln!("warning: --full runs the large grids; expect a long runtime");
    }
    let predicted = predict_runtime(a, &plan)?;
    eprintln!("predicted runtime upper estimate: {predicted:.1} s (cap {:.1} s)", a.max_runtime);
    if predicted > a.max_runtime {
        return Err(Failure::Usage(format!(
            "predicted runtime {predicted:.1} s exceeds the cap of {:.1} s; shrink the grid or raise --max-runtime",
            a.max_runtime
        ))
        .into());
    }
    match a.sweep {
        SweepKind::Snr => run_snr(a, &plan),
        _ => run_scaling(a, &plan),
    }
}

struct Outcome {
    row: Row,
    timing: Option<TimingRow>,
}

fn solve_one(a: &SweepArgs, inst: &Instance, kind: SurrogateKind, mc_seed: u64, runs: usize) -> Result<(Row, TimingRow)> {
    let problem = ShootingProblem::new(inst, a.intervals, a.substeps, kind)?;
    let opts = SolveOptions { max_iters: a.max_iters, grad_tol: a.grad_tol, ..Default::default() };
    let report = optimize::solve(&problem, Initial::Centered, &opts)?;
    let mc = montecarlo::mc_objective(inst, &report.schedule, &mc_config(a, runs, mc_seed))?;
    let tr = inst.trace_p0();
    let t = report.timings;
    let row = Row {
        sweep: "",
        point: 0,
        value: 0,
        instance: 0,
        instance_seed: 0,
        kind: kind.as_str(),
        n: inst.dim(),
        m: inst.num_sensors(),
        intervals: a.intervals,
        iterations: Some(report.iterations),
        termination: format!("{:?}", report.termination),
        objective: Some(report.objective),
        norm_objective: Some(report.objective / tr),
        norm_mc_mean: Some(mc.mean / tr),
        norm_mc_stderr: Some(mc.stderr / tr),
        status: "ok".into(),
    };
    let timing = TimingRow {
        point: 0,
        value: 0,
        instance: 0,
        kind: kind.as_str(),
        forward_s: t.forward_s,
        gradient_assembly_s: t.gradient_assembly_s,
        adjoint_s: t.adjoint_s,
        projection_s: t.projection_s,
        total_s: t.total_s,
        gradient_assembly_per_iter_s: t.gradient_assembly_per_iter_s,
    };
    Ok((row, timing))
}

fn run_scaling(a: &SweepArgs, plan: &Plan) -> Result<()> {
    let sweep = match a.sweep {
        SweepKind::Sensors => "sensors",
        _ => "dimension",
    };
    let mut outcomes = Vec::new();
    for (p, &value) in plan.values.iter().enumerate() {
        for i in 0..plan.instances {
            let seed = instance_seed(a.seed, p, i);
            let mc_seed = instance_seed(a.seed ^ 0x6d63_5f65_7661_6c00, p, i);
            let g = gen_spec(a, value, seed);
            for kind in KINDS {
                let result = random_instance(&g).map_err(anyhow::Error::from).and_then(|inst| solve_one(a, &inst, kind, mc_seed, plan.runs));
                let (mut row, timing) = match result {
                    Ok((row, timing)) => (row, Some(timing)),
                    Err(e) => {
                        eprintln!("point {p} ({sweep}={value}) instance {i} kind {kind}: {e:#}");
                        let row = Row {
                            sweep,
                            point: p,
                            value,
                            instance: i,
                            instance_seed: seed,
                            kind: kind.as_str(),
                            n: g.n,
                            m: g.m,
                            intervals: a.intervals,
                            iterations: None,
                            termination: String::new(),
                            objective: None,
                            norm_objective: None,
                            norm_mc_mean: None,
                            norm_mc_stderr: None,
                            status: format!("error: {e:#}"),
                        };
                        (row, None)
                    }
                };
                row.sweep = sweep;
                row.point = p;
                row.value = value;
                row.instance = i;
                row.instance_seed = seed;
                let timing = timing.map(|t| TimingRow { point: p, value, instance: i, ..t });
                if let (Some(t), Some(obj)) = (&timing, row.norm_mc_mean) {
                    eprintln!(
                        "{sweep}={value} instance {i} {kind}: iterations={} total_s={:.3} norm_mc={obj:.6e}",
                        row.iterations.unwrap_or(0),
                        t.total_s
                    );
                }
                outcomes.push(Outcome { row, timing });
            }
        }
    }
    write_csv(&a.out, outcomes.iter().map(|o| &o.row))?;
    write_csv(&sibling(&a.out, "timings"), outcomes.iter().filter_map(|o| o.timing.as_ref()))?;
    let mut summary = Vec::new();
    for (p, &value) in plan.values.iter().enumerate() {
        for kind in KINDS {
            let sel: Vec<&Outcome> = outcomes.iter().filter(|o| o.row.point == p && o.row.kind == kind.as_str()).collect();
            let ok: Vec<&Outcome> = sel.iter().copied().filter(|o| o.timing.is_some()).collect();
            let col = |f: &dyn Fn(&Outcome) -> f64| ok.iter().map(|o| f(o)).collect::<Vec<f64>>();
            let total = col(&|o| o.timing.as_ref().unwrap().total_s);
            let grad = col(&|o| o.timing.as_ref().unwrap().gradient_assembly_s);
            let iters = col(&|o| o.row.iterations.unwrap_or(0) as f64);
            let mc = col(&|o| o.row.norm_mc_mean.unwrap_or(f64::NAN));
            summary.push(SummaryRow {
                point: p,
                value,
                kind: kind.as_str(),
                completed: ok.len(),
                failed: sel.len() - ok.len(),
                median_total_s: quantile(&total, 0.5),
                iqr_total_s: iqr(&total),
                median_gradient_assembly_s: quantile(&grad, 0.5),
                iqr_gradient_assembly_s: iqr(&grad),
                median_iterations: quantile(&iters, 0.5),
                median_norm_mc_mean: quantile(&mc, 0.5),
                iqr_norm_mc_mean: iqr(&mc),
            });
        }
    }
    write_csv(&sibling(&a.out, "summary"), summary.iter())?;
    let failed = outcomes.iter().filter(|o| o.timing.is_none()).count();
    println!("wrote {} rows to {} ({failed} failed)", outcomes.len(), a.out.display());
    Ok(())
}

fn run_snr(a: &SweepArgs, plan: &Plan) -> Result<()> {
    let inst = random_instance(&gen_spec(a, a.m, a.seed))?;
    let problem = ShootingProblem::new(&inst, a.intervals, a.substeps, SurrogateKind::Info)?;
    let opts = SolveOptions { max_iters: a.max_iters, grad_tol: a.grad_tol, ..Default::default() };
    let report = optimize::solve(&problem, Initial::Centered, &opts)?;
    let cfg = mc_config(a, plan.runs, child_seed(a.seed, 1));
    let points = bounds::snr_sweep(&inst, &report.schedule, &a.snr_sweep.values(), &cfg, a.substeps)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let file = std::fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    bounds::write_snr_csv(&points, file)?;
    for p in &points {
        println!(
            "r_scale={:.3e} normalized lower_dev={:.3e} upper_dev={:.3e} width={:.3e} contained={}",
            p.r_scale, p.report.norm_lower_dev, p.report.norm_upper_dev, p.report.norm_width, p.report.contained
        );
    }
    Ok(())
}

fn write_csv<'a, T: Serialize + 'a>(path: &Path, rows: impl Iterator<Item = &'a T>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
