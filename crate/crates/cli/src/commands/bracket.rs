use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;

use cdkf_sched::bounds::{self, BracketReport};
use cdkf_sched::io;
use cdkf_sched::optimize::DEFAULT_SUBSTEPS;

use crate::args::{emit, load_schedule, InstanceArgs, McArgs};
use crate::Failure;

/// `lo..hi,count`, log-spaced.
#[derive(Debug, Clone, PartialEq)]
pub struct LogGridSpec {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl std::str::FromStr for LogGridSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (range, count) = s.split_once(',').ok_or("expected lo..hi,count")?;
        let (lo, hi) = range.split_once("..").ok_or("expected lo..hi,count")?;
        let spec = Self {
            lo: lo.trim().parse().map_err(|e| format!("lo: {e}"))?,
            hi: hi.trim().parse().map_err(|e| format!("hi: {e}"))?,
            count: count.trim().parse().map_err(|e| format!("count: {e}"))?,
        };
        bounds::log_grid(spec.lo, spec.hi, spec.count).map_err(|e| e.to_string())?;
        Ok(spec)
    }
}

impl LogGridSpec {
    pub fn values(&self) -> Vec<f64> {
        bounds::log_grid(self.lo, self.hi, self.count).expect("validated on parse")
    }
}

#[derive(Debug, Clone, Args)]
pub struct BracketArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[arg(long)]
    pub schedule: PathBuf,
    #[command(flatten)]
    pub mc: McArgs,
    /// Surrogate substeps per control interval.
    #[arg(long, default_value_t = DEFAULT_SUBSTEPS)]
    pub substeps: usize,
    /// Also compute nodewise Loewner margins.
    #[arg(long)]
    pub trajectory: bool,
    /// Re-certify under `R_j → s·R_j` for log-spaced s, e.g. "1e-2..1e2,9".
    #[arg(long = "snr-sweep")]
    pub snr_sweep: Option<LogGridSpec>,
    /// Output directory for bracket.json and snr.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn summary(label: &str, r: &BracketReport) {
    println!(
        "{label} J_lower={:.6e} mc={:.6e}±{:.2e} J_upper={:.6e} normalized=[{:.6e}, {:.6e}, {:.6e}] width={:.3e} contained={}",
        r.j_lower, r.mc.mean, r.mc.stderr, r.j_upper, r.norm_lower, r.norm_mc_mean, r.norm_upper, r.norm_width, r.contained
    );
}

pub fn run(a: &BracketArgs) -> Result<()> {
    let inst = a.instance.load()?;
    let sched = load_schedule(&a.schedule, &inst)?;
    let cfg = a.mc.config();
    let report = if a.trajectory {
        bounds::full_bracket(&inst, &sched, &cfg, a.substeps)?
    } else {
        bounds::objective_bracket(&inst, &sched, &cfg, a.substeps)?
    };
    summary("base", &report);
    let mut failures = Vec::new();
    if !report.ordered {
        failures.push("J_lower > J_upper".to_string());
    }
    if !report.contained {
        failures.push("Monte Carlo mean outside the bracket".to_string());
    }
    if let Some(m) = &report.margins {
        println!(
            "margins deterministic={:.3e} covariance={:.3e} information={:.3e}",
            m.worst_deterministic(),
            m.worst_covariance(),
            m.worst_information()
        );
        if !m.deterministic_ok {
            failures.push("P_cov − P_info has a negative eigenvalue beyond tolerance".into());
        }
        if !(m.covariance_ok && m.information_ok) {
            failures.push("trajectory margins beyond statistical slack".into());
        }
    }
    let points = match &a.snr_sweep {
        Some(grid) => {
            let pts = bounds::snr_sweep(&inst, &sched, &grid.values(), &cfg, a.substeps)?;
            for p in &pts {
                summary(&format!("r_scale={:.3e}", p.r_scale), &p.report);
                if !p.report.contained {
                    failures.push(format!("not contained at r_scale={}", p.r_scale));
                }
            }
            Some(pts)
        }
        None => None,
    };
    match &a.out {
        Some(dir) => {
            emit(Some(&dir.join("bracket.json")), &io::to_json(&report)?)?;
            if let Some(pts) = &points {
                let path = dir.join("snr.csv");
                let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                bounds::write_snr_csv(pts, file)?;
            }
        }
        None if points.is_some() => bounds::write_snr_csv(points.as_deref().unwrap(), std::io::stdout())?,
        None => {}
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(failures.join("; ")).into())
    }
}
