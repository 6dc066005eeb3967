//! Deterministic surrogates of the conditional-mean filter dynamics.
//!
//! The information form integrates `Ẏ = ψ(Y) + Σ_j λ_j S_j` with
//! `ψ(Y) = −YA − AᵀY − YQY`; because the rates enter only through the
//! constant increments `S_j`, the input `U_k = Σ_j λ_kj S_j` is formed once
//! per control interval. The covariance form integrates
//! `Ṗ = AP + PAᵀ + Q − Σ_j λ_j g_j(P)`, whose input directions depend on the
//! state and must be re-evaluated at every stage of every substep.
//!
//! The [`Dynamics`] trait exposes the right-hand side together with its
//! vector-Jacobian product so that the optimizer can run an exact discrete
//! adjoint of the very same forward map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::model::{Instance, Schedule, Sensor};
use crate::riccati::{self, Coordinates, Scheme, Trajectory};

/// Which surrogate to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateKind {
    /// Information form; its objective is a lower bound.
    Info,
    /// Covariance form; its objective is an upper bound.
    Cov,
}

impl SurrogateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Info => "info",
            Self::Cov => "cov",
        }
    }
}

impl std::fmt::Display for SurrogateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SurrogateKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "info" => Ok(Self::Info),
            "cov" => Ok(Self::Cov),
            other => Err(Error::InvalidArgument(format!("unknown surrogate kind {other:?}"))),
        }
    }
}

/// Right-hand side of a rate-driven matrix ODE and its adjoint.
pub(crate) trait Dynamics {
    /// Per-interval input, built once from the stage's rate vector.
    type Stage;
    /// Accumulator for the rate adjoint within one interval.
    type Acc;

    fn coordinates(&self) -> Coordinates;
    fn initial(&self) -> Result<Mat>;
    fn stage(&self, rates: &[f64]) -> Self::Stage;
    fn rhs(&self, x: &Mat, stage: &Self::Stage) -> Result<Mat>;
    fn new_acc(&self) -> Self::Acc;
    /// Returns `J_F(x)ᵀ[g]` and adds `⟨g, ∂F/∂λ_j⟩` into `acc`.
    fn vjp(&self, x: &Mat, stage: &Self::Stage, g: &Mat, acc: &mut Self::Acc) -> Result<Mat>;
    /// Adds the accumulated rate adjoint into one gradient row.
    fn flush(&self, acc: &Self::Acc, row: &mut [f64]);
    /// The covariance-like matrix scored by the objective.
    fn scored(&self, x: &Mat, time: f64) -> Result<Mat>;
    /// `∇_x ⟨w, scored(x)⟩`.
    fn scored_grad(&self, x: &Mat, w: &Mat) -> Result<Mat>;
}

pub(crate) struct InfoDynamics<'a> {
    instance: &'a Instance,
}

impl<'a> InfoDynamics<'a> {
    pub(crate) fn new(instance: &'a Instance) -> Self {
        Self { instance }
    }
}

impl Dynamics for InfoDynamics<'_> {
    type Stage = Mat;
    type Acc = Mat;

    fn coordinates(&self) -> Coordinates {
        Coordinates::Information
    }

    fn initial(&self) -> Result<Mat> {
        linalg::spd_inverse(self.instance.system.p0(), "P0", Some(0.0))
    }

    fn stage(&self, rates: &[f64]) -> Mat {
        let n = self.instance.dim();
        let mut u = Mat::zeros(n, n);
        for (lam, sensor) in rates.iter().zip(&self.instance.sensors) {
            if *lam != 0.0 {
                u += sensor.info() * *lam;
            }
        }
        u
    }

    fn rhs(&self, y: &Mat, u: &Mat) -> Result<Mat> {
        let sys = &self.instance.system;
        Ok(riccati::info_rhs(sys.a(), sys.q(), y) + u)
    }

    fn new_acc(&self) -> Mat {
        let n = self.instance.dim();
        Mat::zeros(n, n)
    }

    fn vjp(&self, y: &Mat, _u: &Mat, g: &Mat, acc: &mut Mat) -> Result<Mat> {
        let sys = &self.instance.system;
        let (a, q) = (sys.a(), sys.q());
        *acc += g;
        let ga = g * a.transpose();
        let gyq = g * y * q;
        let mut out = -(&ga + ga.transpose()) - (&gyq + gyq.transpose());
        linalg::symmetrize_in_place(&mut out);
        Ok(out)
    }

    fn flush(&self, acc: &Mat, row: &mut [f64]) {
        for (out, sensor) in row.iter_mut().zip(&self.instance.sensors) {
            *out += linalg::frob(acc, sensor.info());
        }
    }

    fn scored(&self, y: &Mat, time: f64) -> Result<Mat> {
        linalg::spd_inverse(y, "information surrogate", Some(time))
    }

    fn scored_grad(&self, y: &Mat, w: &Mat) -> Result<Mat> {
        let p = linalg::spd_inverse(y, "information surrogate", None)?;
        let mut out = -(&p * w * &p);
        linalg::symmetrize_in_place(&mut out);
        Ok(out)
    }
}

pub(crate) struct CovDynamics<'a> {
    instance: &'a Instance,
}

impl<'a> CovDynamics<'a> {
    pub(crate) fn new(instance: &'a Instance) -> Self {
        Self { instance }
    }
}

/// Pieces of the Kalman update at one state: `g(P)` and `Γ = I − KH`.
struct UpdateParts {
    g: Mat,
    gamma: Mat,
}

fn update_parts(p: &Mat, sensor: &Sensor, index: usize, with_gamma: bool) -> Result<UpdateParts> {
    let h = sensor.h();
    let hp = h * p;
    let innov = linalg::symmetrize(&(&hp * h.transpose() + sensor.r()));
    let chol = innov.cholesky().ok_or(Error::SingularInnovation { sensor: index })?;
    // L = (HPHᵀ + R)⁻¹ H P, so the gain is K = Lᵀ
    let l = chol.solve(&hp);
    let mut g = hp.transpose() * &l;
    linalg::symmetrize_in_place(&mut g);
    let gamma = if with_gamma {
        let n = p.nrows();
        Mat::identity(n, n) - l.transpose() * h
    } else {
        Mat::zeros(0, 0)
    };
    Ok(UpdateParts { g, gamma })
}

impl Dynamics for CovDynamics<'_> {
    type Stage = Vec<f64>;
    type Acc = Vec<f64>;

    fn coordinates(&self) -> Coordinates {
        Coordinates::Covariance
    }

    fn initial(&self) -> Result<Mat> {
        Ok(self.instance.system.p0().clone())
    }

    fn stage(&self, rates: &[f64]) -> Vec<f64> {
        rates.to_vec()
    }

    fn rhs(&self, p: &Mat, rates: &Vec<f64>) -> Result<Mat> {
        let sys = &self.instance.system;
        let mut out = riccati::lyapunov_rhs(sys.a(), sys.q(), p);
        for (j, (lam, sensor)) in rates.iter().zip(&self.instance.sensors).enumerate() {
            if *lam != 0.0 {
                out -= update_parts(p, sensor, j, false)?.g * *lam;
            }
        }
        linalg::symmetrize_in_place(&mut out);
        Ok(out)
    }

    fn new_acc(&self) -> Vec<f64> {
        vec![0.0; self.instance.num_sensors()]
    }

    fn vjp(&self, p: &Mat, rates: &Vec<f64>, g: &Mat, acc: &mut Vec<f64>) -> Result<Mat> {
        let a = self.instance.system.a();
        let mut out = a.transpose() * g + g * a;
        for (j, (lam, sensor)) in rates.iter().zip(&self.instance.sensors).enumerate() {
            let parts = update_parts(p, sensor, j, *lam != 0.0)?;
            acc[j] -= linalg::frob(g, &parts.g);
            if *lam != 0.0 {
                // adjoint of E ↦ E − ΓEΓᵀ
                out -= (g - parts.gamma.transpose() * g * &parts.gamma) * *lam;
            }
        }
        linalg::symmetrize_in_place(&mut out);
        Ok(out)
    }

    fn flush(&self, acc: &Vec<f64>, row: &mut [f64]) {
        for (out, v) in row.iter_mut().zip(acc) {
            *out += v;
        }
    }

    fn scored(&self, p: &Mat, _time: f64) -> Result<Mat> {
        Ok(p.clone())
    }

    fn scored_grad(&self, _p: &Mat, w: &Mat) -> Result<Mat> {
        Ok(w.clone())
    }
}

/// Uniform grid of `intervals × substeps` integration steps over `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Grid {
    pub horizon: f64,
    pub intervals: usize,
    pub substeps: usize,
    pub scheme: Scheme,
}

impl Grid {
    pub(crate) fn steps(&self) -> usize {
        self.intervals * self.substeps
    }
    pub(crate) fn h(&self) -> f64 {
        self.horizon / self.steps() as f64
    }
    pub(crate) fn time(&self, node: usize) -> f64 {
        if node == self.steps() {
            self.horizon
        } else {
            self.horizon * node as f64 / self.steps() as f64
        }
    }
    pub(crate) fn times(&self) -> Vec<f64> {
        (0..=self.steps()).map(|i| self.time(i)).collect()
    }
}

/// Integrates the dynamics on the grid and returns every node.
pub(crate) fn forward<D: Dynamics>(dynamics: &D, rates: &Mat, grid: &Grid) -> Result<Vec<Mat>> {
    if grid.substeps == 0 {
        return Err(Error::InvalidArgument("substeps must be at least 1".into()));
    }
    let h = grid.h();
    let what = match dynamics.coordinates() {
        Coordinates::Information => "information surrogate",
        Coordinates::Covariance => "covariance surrogate",
    };
    let mut nodes = Vec::with_capacity(grid.steps() + 1);
    nodes.push(dynamics.initial()?);
    for k in 0..grid.intervals {
        let row: Vec<f64> = rates.row(k).iter().copied().collect();
        let stage = dynamics.stage(&row);
        for _ in 0..grid.substeps {
            let x = nodes.last().unwrap();
            let next = riccati::step(x, h, grid.scheme, &|x: &Mat| dynamics.rhs(x, &stage))?;
            linalg::check_pd(&next, what, Some(grid.time(nodes.len())))?;
            nodes.push(next);
        }
    }
    Ok(nodes)
}

/// Scored trajectory used for the cost: all nodes when a running weight is
/// present, otherwise only the endpoints.
pub(crate) fn scored_trajectory<D: Dynamics>(
    dynamics: &D,
    nodes: &[Mat],
    grid: &Grid,
    running: bool,
) -> Result<Trajectory> {
    let last = nodes.len() - 1;
    let idx: Vec<usize> = if running { (0..=last).collect() } else { vec![0, last] };
    let times = idx.iter().map(|&i| grid.time(i)).collect();
    let values = idx
        .iter()
        .map(|&i| dynamics.scored(&nodes[i], grid.time(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory::from_parts(Coordinates::Covariance, times, values))
}

fn check_inputs(instance: &Instance, schedule: &Schedule, substeps: usize) -> Result<Grid> {
    instance.check_schedule(schedule)?;
    if substeps == 0 {
        return Err(Error::InvalidArgument("substeps must be at least 1".into()));
    }
    Ok(Grid {
        horizon: instance.horizon(),
        intervals: schedule.intervals(),
        substeps,
        scheme: Scheme::Rk4,
    })
}

/// Information-form surrogate sampled at every substep node.
pub fn integrate_info_surrogate(instance: &Instance, schedule: &Schedule, substeps: usize) -> Result<Trajectory> {
    integrate_info_surrogate_with(instance, schedule, substeps, Scheme::Rk4)
}

pub fn integrate_info_surrogate_with(
    instance: &Instance,
    schedule: &Schedule,
    substeps: usize,
    scheme: Scheme,
) -> Result<Trajectory> {
    let grid = Grid { scheme, ..check_inputs(instance, schedule, substeps)? };
    let nodes = forward(&InfoDynamics::new(instance), schedule.rates(), &grid)?;
    Ok(Trajectory::from_parts(Coordinates::Information, grid.times(), nodes))
}

/// Covariance-form surrogate sampled at every substep node.
pub fn integrate_cov_surrogate(instance: &Instance, schedule: &Schedule, substeps: usize) -> Result<Trajectory> {
    integrate_cov_surrogate_with(instance, schedule, substeps, Scheme::Rk4)
}

pub fn integrate_cov_surrogate_with(
    instance: &Instance,
    schedule: &Schedule,
    substeps: usize,
    scheme: Scheme,
) -> Result<Trajectory> {
    let grid = Grid { scheme, ..check_inputs(instance, schedule, substeps)? };
    let nodes = forward(&CovDynamics::new(instance), schedule.rates(), &grid)?;
    Ok(Trajectory::from_parts(Coordinates::Covariance, grid.times(), nodes))
}

/// Surrogate covariance path in covariance coordinates (`Y⁻¹` for the
/// information form).
pub fn surrogate_covariance(
    instance: &Instance,
    schedule: &Schedule,
    kind: SurrogateKind,
    substeps: usize,
) -> Result<Trajectory> {
    match kind {
        SurrogateKind::Info => riccati::invert_trajectory(&integrate_info_surrogate(instance, schedule, substeps)?),
        SurrogateKind::Cov => integrate_cov_surrogate(instance, schedule, substeps),
    }
}

/// Cost of the surrogate path: a lower bound on the expected cost for
/// [`SurrogateKind::Info`], an upper bound for [`SurrogateKind::Cov`].
pub fn surrogate_objective(
    instance: &Instance,
    schedule: &Schedule,
    kind: SurrogateKind,
    substeps: usize,
) -> Result<f64> {
    let traj = surrogate_covariance(instance, schedule, kind, substeps)?;
    riccati::pathwise_cost(&traj, &instance.weights, instance.horizon())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{random_instance, GenSpec, ResourcePolytope, SystemModel, WeightSpec};
    use nalgebra::DVector;

    fn s(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    fn scalar(a: f64, q: f64, p0: f64, h: f64, r: f64) -> Instance {
        Instance::new(
            SystemModel::new(s(a), s(q), DVector::zeros(1), s(p0), 1.0).unwrap(),
            vec![Sensor::new(s(h), s(r)).unwrap()],
            ResourcePolytope::budget(1, 5.0).unwrap(),
            WeightSpec::terminal_trace(1),
        )
        .unwrap()
    }

    /// Solves `ln p − 1/p = c` for `p > 0` by bisection.
    fn implicit_cov_solution(c: f64) -> f64 {
        let f = |p: f64| p.ln() - 1.0 / p - c;
        let (mut lo, mut hi) = (1e-6, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn info_surrogate_is_linear_without_dynamics() {
        let inst = scalar(0.0, 0.0, 1.0, 1.0, 1.0);
        let sched = Schedule::constant(1.0, 4, &[2.0]).unwrap();
        let y = integrate_info_surrogate(&inst, &sched, 3).unwrap();
        assert!((y.last()[(0, 0)] - 3.0).abs() < 1e-14);
        let j = surrogate_objective(&inst, &sched, SurrogateKind::Info, 3).unwrap();
        assert!((j - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn zero_rates_reduce_to_free_flows() {
        let inst = random_instance(&GenSpec::new(3, 2, 1, 3)).unwrap();
        let sched = Schedule::zeros(3.0, 10, 2).unwrap();
        let sys = &inst.system;
        let y = integrate_info_surrogate(&inst, &sched, 10).unwrap();
        let y_direct = riccati::flow_info(&sys.p0().clone().try_inverse().unwrap(), sys.a(), sys.q(), 3.0, 100).unwrap();
        assert!(linalg::rel_err(y.last(), &y_direct) < 1e-12);
        let p = integrate_cov_surrogate(&inst, &sched, 10).unwrap();
        let p_direct = riccati::flow_cov(sys.p0(), sys.a(), sys.q(), 3.0, 100).unwrap();
        assert!(linalg::rel_err(p.last(), &p_direct) < 1e-12);
        let pi = riccati::invert_trajectory(&y).unwrap();
        for (a, b) in pi.values().iter().zip(p.values()) {
            let e = linalg::rel_err(a, b);
            assert!(e <= 1e-8, "{e}");
        }
        let ji = surrogate_objective(&inst, &sched, SurrogateKind::Info, 10).unwrap();
        let jc = surrogate_objective(&inst, &sched, SurrogateKind::Cov, 10).unwrap();
        assert!((ji - jc).abs() / jc <= 1e-7);
        assert!((jc - p_direct.trace()).abs() / jc <= 1e-7);
    }

    #[test]
    fn cov_surrogate_matches_implicit_solution() {
        let inst = scalar(0.0, 0.0, 1.0, 1.0, 1.0);
        let sched = Schedule::constant(1.0, 10, &[2.0]).unwrap();
        let p = integrate_cov_surrogate(&inst, &sched, 10).unwrap().last()[(0, 0)];
        let oracle = implicit_cov_solution(-3.0);
        assert!((p - oracle).abs() <= 1e-9, "{p} vs {oracle}");
        assert!((oracle - 0.4529).abs() <= 1e-4);
    }

    #[test]
    fn extreme_snr_keeps_ordering() {
        let inst = scalar(0.0, 0.0, 1.0, 1.0, 1e-4);
        let sched = Schedule::constant(1.0, 10, &[2.0]).unwrap();
        let pi = surrogate_covariance(&inst, &sched, SurrogateKind::Info, 10).unwrap().last()[(0, 0)];
        let pc = surrogate_covariance(&inst, &sched, SurrogateKind::Cov, 10).unwrap().last()[(0, 0)];
        assert!((pi - 1.0 / (1.0 + 2.0 / 1e-4)).abs() < 1e-12);
        assert!(pc > 1e-2, "cov surrogate should stay away from zero: {pc}");
        assert!(pi <= pc);
    }

    #[test]
    fn surrogates_are_ordered_on_random_instances() {
        for seed in 0..6 {
            let inst = random_instance(&GenSpec::new(4, 5, 1, seed)).unwrap();
            let rates = Mat::from_fn(6, 5, |k, j| ((k * 5 + j + seed as usize) % 7) as f64 * 0.15);
            let sched = Schedule::new(3.0, rates).unwrap();
            let pi = surrogate_covariance(&inst, &sched, SurrogateKind::Info, 10).unwrap();
            let pc = surrogate_covariance(&inst, &sched, SurrogateKind::Cov, 10).unwrap();
            for (a, b) in pi.values().iter().zip(pc.values()) {
                let scale = b.trace() / 4.0;
                assert!(linalg::min_eigenvalue(&(b - a)) >= -1e-7 * scale);
            }
            let ji = surrogate_objective(&inst, &sched, SurrogateKind::Info, 10).unwrap();
            let jc = surrogate_objective(&inst, &sched, SurrogateKind::Cov, 10).unwrap();
            assert!(ji <= jc + 1e-9);
        }
    }

    #[test]
    fn info_surrogate_monotone_in_rates() {
        let inst = random_instance(&GenSpec::new(3, 4, 2, 5)).unwrap();
        let lo = Mat::from_fn(5, 4, |k, j| 0.1 * (k + j) as f64);
        let hi = lo.map(|v| v + 0.3);
        let y_lo = integrate_info_surrogate(&inst, &Schedule::new(3.0, lo).unwrap(), 10).unwrap();
        let y_hi = integrate_info_surrogate(&inst, &Schedule::new(3.0, hi).unwrap(), 10).unwrap();
        assert!(linalg::min_eigenvalue(&(y_hi.last() - y_lo.last())) >= -1e-9);
    }

    #[test]
    fn euler_option_converges_to_rk4() {
        let inst = random_instance(&GenSpec::new(2, 2, 1, 1)).unwrap();
        let sched = Schedule::constant(3.0, 6, &[1.0, 1.0]).unwrap();
        let rk = integrate_info_surrogate(&inst, &sched, 20).unwrap();
        let eu = integrate_info_surrogate_with(&inst, &sched, 2000, Scheme::Euler).unwrap();
        assert!(linalg::rel_err(eu.last(), rk.last()) < 1e-3);
    }

    #[test]
    fn rejects_mismatched_schedule() {
        let inst = random_instance(&GenSpec::new(2, 2, 1, 1)).unwrap();
        assert!(integrate_info_surrogate(&inst, &Schedule::zeros(3.0, 4, 3).unwrap(), 2).is_err());
        assert!(integrate_info_surrogate(&inst, &Schedule::zeros(2.0, 4, 2).unwrap(), 2).is_err());
    }
}
