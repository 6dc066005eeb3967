use std::path::PathBuf;

use anyhow::Result;
use clap::Args;

use cdkf_sched::io;
use cdkf_sched::model::validate_schedule;
use cdkf_sched::optimize::{self, Initial, ShootingProblem, SolveOptions, DEFAULT_SUBSTEPS};
use cdkf_sched::SurrogateKind;

use crate::args::{emit, load_schedule, InstanceArgs};
use crate::Failure;

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    /// Control intervals.
    #[arg(long = "N", default_value_t = 30)]
    pub intervals: usize,
    /// Integration substeps per control interval.
    #[arg(long, default_value_t = DEFAULT_SUBSTEPS)]
    pub substeps: usize,
    #[arg(long, default_value = "info")]
    pub kind: SurrogateKind,
    #[arg(long = "max-iters", default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long = "grad-tol", default_value_t = 1e-6)]
    pub grad_tol: f64,
    /// Starting schedule; defaults to the centered uniform schedule.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Output directory for schedule.json and solve_report.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(a: &SolveArgs) -> Result<()> {
    let inst = a.instance.load()?;
    let problem = ShootingProblem::new(&inst, a.intervals, a.substeps, a.kind).map_err(|e| Failure::Usage(e.to_string()))?;
    let initial = match &a.init {
        Some(p) => Initial::Schedule(load_schedule(p, &inst)?),
        None => Initial::Centered,
    };
    let opts = SolveOptions { max_iters: a.max_iters, grad_tol: a.grad_tol, ..Default::default() };
    let report = optimize::solve(&problem, initial, &opts)?;
    let feas = validate_schedule(&report.schedule, &inst.polytope, 1e-9)?;
    let tr = inst.trace_p0();
    println!(
        "kind={} objective={:.10e} normalized={:.10e} iterations={} termination={:?} pg_norm={:.3e} total_s={:.3}",
        a.kind,
        report.objective,
        report.objective / tr,
        report.iterations,
        report.termination,
        report.projected_gradient_norm,
        report.timings.total_s
    );
    if let Some(dir) = &a.out {
        emit(Some(&dir.join("schedule.json")), &io::schedule_to_json(&report.schedule)?)?;
        emit(Some(&dir.join("solve_report.json")), &io::solve_report_to_json(&report, a.kind.as_str(), tr)?)?;
    }
    if !feas.feasible {
        return Err(Failure::Check(format!(
            "returned schedule is infeasible (budget violation {:e}, negativity {:e})",
            feas.max_budget_violation, feas.max_negativity
        ))
        .into());
    }
    Ok(())
}
