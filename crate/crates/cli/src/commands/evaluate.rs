use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde::Serialize;

use cdkf_sched::io;
use cdkf_sched::montecarlo::{self, McEstimate};

use crate::args::{emit, load_schedule, InstanceArgs, McArgs};

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[arg(long)]
    pub schedule: PathBuf,
    #[command(flatten)]
    pub mc: McArgs,
    /// Report JSON path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct EvaluateReport {
    pub seed: u64,
    pub n_eval: usize,
    pub substeps: usize,
    pub trace_p0: f64,
    pub normalized_mean: f64,
    pub normalized_stderr: f64,
    #[serde(flatten)]
    pub mc: McEstimate,
}

pub fn run(a: &EvaluateArgs) -> Result<()> {
    let inst = a.instance.load()?;
    let sched = load_schedule(&a.schedule, &inst)?;
    let cfg = a.mc.config();
    let mc = montecarlo::mc_objective(&inst, &sched, &cfg)?;
    let tr = inst.trace_p0();
    let report = EvaluateReport {
        seed: cfg.seed,
        n_eval: cfg.n_eval,
        substeps: cfg.substeps,
        trace_p0: tr,
        normalized_mean: mc.mean / tr,
        normalized_stderr: mc.stderr / tr,
        mc,
    };
    if a.out.is_some() {
        eprintln!(
            "mean={:.10e} normalized={:.10e} stderr={:.3e} std={:.3e} runs={}",
            report.mc.mean, report.normalized_mean, report.mc.stderr, report.mc.std, report.mc.n_runs
        );
    }
    emit(a.out.as_deref(), &io::to_json(&report)?)
}
