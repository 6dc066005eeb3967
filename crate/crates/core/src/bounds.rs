//! Two-sided certification of a fixed schedule: the information surrogate
//! bounds the expected cost from below, the covariance surrogate from
//! above, and Monte Carlo estimates the middle term.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::model::{validate_schedule, Instance, Schedule};
use crate::montecarlo::{self, McConfig, McEstimate};
use crate::riccati;
use crate::surrogate::{self, SurrogateKind};

/// Slack in standard errors for the statistical containment checks.
pub const STAT_SLACK: f64 = 3.0;
/// Relative tolerance on the deterministic ordering `J_lower ≤ J_upper`.
pub const ORDER_TOL: f64 = 1e-9;
/// Scale-relative integration tolerance on margins and containment.
pub const MARGIN_TOL: f64 = 1e-7;
/// Feasibility tolerance for certified schedules.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Nodewise minimum eigenvalues of the Loewner differences on a common grid.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryMargins {
    pub times: Vec<f64>,
    /// `λ_min(P_cov − P_info)`.
    pub cov_minus_info: Vec<f64>,
    /// `λ_min(P̄_mc − P_info)`.
    pub mc_minus_info: Vec<f64>,
    /// `λ_min(P_cov − P̄_mc)`.
    pub cov_minus_mc: Vec<f64>,
    /// `λ_min(Y_info − Ȳ_mc)`.
    pub yinfo_minus_ymc: Vec<f64>,
    /// Standard error of `tr P` and `tr Y` across runs.
    pub p_stderr: Vec<f64>,
    pub y_stderr: Vec<f64>,
    /// `tr(P_cov)/n` and `tr(Y_info)/n`, the per-node tolerance scales.
    pub p_scale: Vec<f64>,
    pub y_scale: Vec<f64>,
    pub n_runs: usize,
    /// `cov_minus_info ≥ −1e-7·p_scale` at every node.
    pub deterministic_ok: bool,
    /// Both covariance-side statistical margins within `3·stderr`.
    pub covariance_ok: bool,
    /// Information-side margin within `3·stderr`.
    pub information_ok: bool,
}

impl TrajectoryMargins {
    /// Smallest value of `margin + slack` over the grid.
    fn worst(margins: &[f64], slack: impl Fn(usize) -> f64) -> f64 {
        margins.iter().enumerate().map(|(i, m)| m + slack(i)).fold(f64::INFINITY, f64::min)
    }
    pub fn worst_deterministic(&self) -> f64 {
        Self::worst(&self.cov_minus_info, |i| MARGIN_TOL * self.p_scale[i])
    }
    pub fn worst_covariance(&self) -> f64 {
        let a = Self::worst(&self.mc_minus_info, |i| self.p_slack(i));
        let b = Self::worst(&self.cov_minus_mc, |i| self.p_slack(i));
        a.min(b)
    }
    pub fn worst_information(&self) -> f64 {
        Self::worst(&self.yinfo_minus_ymc, |i| STAT_SLACK * self.y_stderr[i] + MARGIN_TOL * self.y_scale[i])
    }
    fn p_slack(&self, i: usize) -> f64 {
        STAT_SLACK * self.p_stderr[i] + MARGIN_TOL * self.p_scale[i]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BracketReport {
    #[serde(rename = "J_lower")]
    pub j_lower: f64,
    #[serde(rename = "J_upper")]
    pub j_upper: f64,
    pub mc: McEstimate,
    pub trace_p0: f64,
    pub norm_lower: f64,
    pub norm_upper: f64,
    pub norm_mc_mean: f64,
    pub norm_mc_stderr: f64,
    /// `(mc.mean − J_lower) / tr(P0)`.
    pub norm_lower_dev: f64,
    /// `(J_upper − mc.mean) / tr(P0)`.
    pub norm_upper_dev: f64,
    /// `(J_upper − J_lower) / tr(P0)`.
    pub norm_width: f64,
    /// `J_lower ≤ J_upper + 1e-9·scale`.
    pub ordered: bool,
    pub lower_contained: bool,
    pub upper_contained: bool,
    /// `J_lower − 3·stderr ≤ mc.mean ≤ J_upper + 3·stderr`.
    pub contained: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margins: Option<TrajectoryMargins>,
}

fn check_feasible(instance: &Instance, schedule: &Schedule) -> Result<()> {
    instance.check_schedule(schedule)?;
    let report = validate_schedule(schedule, &instance.polytope, FEASIBILITY_TOL)?;
    if !report.feasible {
        return Err(Error::Validation(format!(
            "schedule is infeasible (budget violation {:e}, negativity {:e})",
            report.max_budget_violation, report.max_negativity
        )));
    }
    Ok(())
}

/// Surrogate bounds and the Monte Carlo middle term.
pub fn objective_bracket(
    instance: &Instance,
    schedule: &Schedule,
    cfg: &McConfig,
    substeps: usize,
) -> Result<BracketReport> {
    check_feasible(instance, schedule)?;
    let j_lower = surrogate::surrogate_objective(instance, schedule, SurrogateKind::Info, substeps)?;
    let j_upper = surrogate::surrogate_objective(instance, schedule, SurrogateKind::Cov, substeps)?;
    let mc = montecarlo::mc_objective(instance, schedule, cfg)?;
    Ok(assemble(instance, j_lower, j_upper, mc))
}

fn assemble(instance: &Instance, j_lower: f64, j_upper: f64, mc: McEstimate) -> BracketReport {
    let tr = instance.trace_p0();
    let scale = j_lower.abs().max(j_upper.abs()).max(f64::MIN_POSITIVE);
    let slack = STAT_SLACK * mc.stderr + MARGIN_TOL * scale;
    let lower_contained = j_lower - slack <= mc.mean;
    let upper_contained = mc.mean <= j_upper + slack;
    BracketReport {
        j_lower,
        j_upper,
        trace_p0: tr,
        norm_lower: j_lower / tr,
        norm_upper: j_upper / tr,
        norm_mc_mean: mc.mean / tr,
        norm_mc_stderr: mc.stderr / tr,
        norm_lower_dev: (mc.mean - j_lower) / tr,
        norm_upper_dev: (j_upper - mc.mean) / tr,
        norm_width: (j_upper - j_lower) / tr,
        ordered: j_lower <= j_upper + ORDER_TOL * scale,
        lower_contained,
        upper_contained,
        contained: lower_contained && upper_contained,
        mc,
        margins: None,
    }
}

/// Loewner margins between the surrogates and the Monte Carlo mean paths.
///
/// The surrogates are integrated on a grid refining the evaluation grid, so
/// `cfg.n_eval` must be a multiple of the schedule's interval count.
pub fn trajectory_bracket(
    instance: &Instance,
    schedule: &Schedule,
    cfg: &McConfig,
    substeps: usize,
) -> Result<TrajectoryMargins> {
    check_feasible(instance, schedule)?;
    let intervals = schedule.intervals();
    if !cfg.n_eval.is_multiple_of(intervals) {
        return Err(Error::InvalidArgument(format!(
            "n_eval ({}) must be a multiple of the schedule's interval count ({intervals})",
            cfg.n_eval
        )));
    }
    let per = cfg.n_eval / intervals;
    let sub = substeps.max(1).div_ceil(per) * per;
    let stride = sub / per;
    let p_info = riccati::invert_trajectory(&surrogate::integrate_info_surrogate(instance, schedule, sub)?)?
        .subsample(stride);
    let y_info = surrogate::integrate_info_surrogate(instance, schedule, sub)?.subsample(stride);
    let p_cov = surrogate::integrate_cov_surrogate(instance, schedule, sub)?.subsample(stride);
    let mc = montecarlo::mc_mean_trajectories(instance, schedule, cfg)?;

    let nodes = mc.p_mean.len();
    debug_assert_eq!(nodes, p_cov.len());
    let n = instance.dim() as f64;
    let diff_min = |a: &Mat, b: &Mat| linalg::min_eigenvalue(&linalg::symmetrize(&(a - b)));
    let mut m = TrajectoryMargins {
        times: mc.p_mean.times().to_vec(),
        cov_minus_info: Vec::with_capacity(nodes),
        mc_minus_info: Vec::with_capacity(nodes),
        cov_minus_mc: Vec::with_capacity(nodes),
        yinfo_minus_ymc: Vec::with_capacity(nodes),
        p_stderr: mc.p_stderr.clone(),
        y_stderr: mc.y_stderr.clone(),
        p_scale: Vec::with_capacity(nodes),
        y_scale: Vec::with_capacity(nodes),
        n_runs: mc.n_runs,
        deterministic_ok: false,
        covariance_ok: false,
        information_ok: false,
    };
    for i in 0..nodes {
        let (pc, pi, pm) = (&p_cov.values()[i], &p_info.values()[i], &mc.p_mean.values()[i]);
        let (yi, ym) = (&y_info.values()[i], &mc.y_mean.values()[i]);
        m.cov_minus_info.push(diff_min(pc, pi));
        m.mc_minus_info.push(diff_min(pm, pi));
        m.cov_minus_mc.push(diff_min(pc, pm));
        m.yinfo_minus_ymc.push(diff_min(yi, ym));
        m.p_scale.push(pc.trace() / n);
        m.y_scale.push(yi.trace() / n);
    }
    m.deterministic_ok = m.worst_deterministic() >= 0.0;
    m.covariance_ok = m.worst_covariance() >= 0.0;
    m.information_ok = m.worst_information() >= 0.0;
    Ok(m)
}

/// Objective bracket with trajectory margins attached.
pub fn full_bracket(
    instance: &Instance,
    schedule: &Schedule,
    cfg: &McConfig,
    substeps: usize,
) -> Result<BracketReport> {
    let mut report = objective_bracket(instance, schedule, cfg, substeps)?;
    report.margins = Some(trajectory_bracket(instance, schedule, cfg, substeps)?);
    Ok(report)
}

/// `count` points log-spaced on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && lo.is_finite() && hi.is_finite()) || count == 0 {
        return Err(Error::InvalidArgument(format!("bad log grid {lo}..{hi} with {count} points")));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.log10(), hi.log10());
    Ok((0..count)
        .map(|i| {
            if i == count - 1 {
                hi
            } else {
                10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64)
            }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct SnrPoint {
    pub r_scale: f64,
    pub report: BracketReport,
}

/// Re-certifies one schedule with every `R_j` multiplied by each scale.
pub fn snr_sweep(
    base: &Instance,
    schedule: &Schedule,
    r_scales: &[f64],
    cfg: &McConfig,
    substeps: usize,
) -> Result<Vec<SnrPoint>> {
    r_scales
        .iter()
        .map(|&r| {
            let inst = base.with_noise_scale(r)?;
            Ok(SnrPoint { r_scale: r, report: objective_bracket(&inst, schedule, cfg, substeps)? })
        })
        .collect()
}

/// One CSV row per scale.
pub fn write_snr_csv<W: Write>(points: &[SnrPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "r_scale",
        "J_lower",
        "mc_mean",
        "mc_stderr",
        "J_upper",
        "norm_lower_dev",
        "norm_upper_dev",
        "contained",
    ])
    .map_err(csv_err)?;
    for p in points {
        let r = &p.report;
        w.write_record([
            p.r_scale.to_string(),
            r.j_lower.to_string(),
            r.mc.mean.to_string(),
            r.mc.stderr.to_string(),
            r.j_upper.to_string(),
            r.norm_lower_dev.to_string(),
            r.norm_upper_dev.to_string(),
            r.contained.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Validation(format!("csv: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{random_instance, GenSpec, ResourcePolytope, Sensor, SystemModel, WeightSpec};
    use nalgebra::DVector;

    fn scalar() -> Instance {
        let s = |v: f64| Mat::from_element(1, 1, v);
        Instance::new(
            SystemModel::new(s(0.0), s(0.0), DVector::zeros(1), s(1.0), 1.0).unwrap(),
            vec![Sensor::new(s(1.0), s(1.0)).unwrap()],
            ResourcePolytope::budget(1, 5.0).unwrap(),
            WeightSpec::terminal_trace(1),
        )
        .unwrap()
    }

    fn cfg(n_runs: usize, n_eval: usize, seed: u64) -> McConfig {
        McConfig { n_runs, n_eval, substeps: 4, seed, threads: None }
    }

    #[test]
    fn zero_schedule_is_degenerate() {
        let inst = random_instance(&GenSpec::new(3, 4, 1, 2)).unwrap();
        let sched = Schedule::zeros(inst.horizon(), 30, 4).unwrap();
        let r = full_bracket(&inst, &sched, &cfg(5, 300, 1), 10).unwrap();
        assert_eq!(r.mc.std, 0.0);
        for v in [r.j_upper, r.mc.mean] {
            assert!((v - r.j_lower).abs() <= 1e-7 * r.j_lower, "{v} vs {}", r.j_lower);
        }
        let m = r.margins.unwrap();
        for (i, p) in m.p_scale.iter().enumerate() {
            for d in [m.cov_minus_info[i], m.mc_minus_info[i], m.cov_minus_mc[i]] {
                assert!(d.abs() <= 1e-7 * p, "node {i}: {d}");
            }
            assert!(m.yinfo_minus_ymc[i].abs() <= 1e-7 * m.y_scale[i]);
        }
    }

    #[test]
    fn scalar_closed_form_bracket() {
        let inst = scalar();
        let sched = Schedule::constant(1.0, 4, &[2.0]).unwrap();
        let r = objective_bracket(&inst, &sched, &cfg(2000, 20, 5), 20).unwrap();
        assert!((r.j_lower - 1.0 / 3.0).abs() < 1e-10);
        assert!((r.j_upper - 0.452_9).abs() < 1e-4, "{}", r.j_upper);
        assert!(r.ordered && r.contained, "{r:?}");
    }

    #[test]
    fn infeasible_schedule_rejected() {
        let inst = scalar();
        let sched = Schedule::constant(1.0, 2, &[6.0]).unwrap();
        assert!(matches!(objective_bracket(&inst, &sched, &cfg(2, 10, 0), 4), Err(Error::Validation(_))));
    }

    #[test]
    fn trajectory_margins_on_small_instance() {
        let inst = random_instance(&GenSpec::new(2, 2, 1, 3)).unwrap();
        let sched = Schedule::constant(inst.horizon(), 3, &[1.5, 1.0]).unwrap();
        let m = trajectory_bracket(&inst, &sched, &cfg(200, 30, 9), 10).unwrap();
        assert_eq!(m.times.len(), 31);
        assert!(m.deterministic_ok && m.covariance_ok && m.information_ok, "{m:?}");
        assert!(trajectory_bracket(&inst, &sched, &cfg(2, 31, 9), 10).is_err());
    }

    #[test]
    fn containment_is_scale_free() {
        let inst = random_instance(&GenSpec::new(2, 3, 1, 6)).unwrap();
        let sched = Schedule::constant(inst.horizon(), 3, &[1.0, 1.0, 1.0]).unwrap();
        let a = objective_bracket(&inst, &sched, &cfg(100, 30, 2), 10).unwrap();
        let scaled = inst.with_scaled_system(7.0, 7.0).unwrap();
        let b = objective_bracket(&scaled, &sched, &cfg(100, 30, 2), 10).unwrap();
        assert_eq!(a.contained, b.contained);
        assert!((a.j_lower - b.j_lower).abs() > 1e-6);
    }

    #[test]
    fn snr_limit_collapses_bracket() {
        let inst = random_instance(&GenSpec::new(2, 3, 1, 1)).unwrap();
        let sched = Schedule::constant(inst.horizon(), 3, &[1.0, 1.0, 1.0]).unwrap();
        let pts = snr_sweep(&inst, &sched, &[1.0, 1e6], &cfg(50, 30, 4), 10).unwrap();
        assert!(pts[1].report.norm_width < 1e-4 * pts[0].report.norm_width.max(1e-12) + 1e-9);
        let mut buf = Vec::new();
        write_snr_csv(&pts, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("r_scale,J_lower,mc_mean"));
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-2, 1e2, 9).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], 1e-2);
        assert_eq!(g[8], 1e2);
        assert!((g[4] - 1.0).abs() < 1e-12);
    }
}
