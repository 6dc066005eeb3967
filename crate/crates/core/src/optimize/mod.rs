//! Schedule optimization over the surrogate objectives.
//!
//! [`ShootingProblem`] packages a surrogate, a control grid and an
//! integrator; it evaluates the discretized objective and its exact
//! gradient by a reverse sweep through the integrator. [`solve`] runs
//! projected gradient descent with Armijo backtracking over the per-stage
//! resource polytope.

mod adjoint;
mod bench;
mod projection;
mod solver;

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{Instance, Schedule};
use crate::riccati::Scheme;
use crate::surrogate::{self, CovDynamics, Dynamics, Grid, InfoDynamics, SurrogateKind};

pub use bench::{benchmark_assembly, AssemblyBenchmark};
pub use projection::{project_rates, project_stage, DYKSTRA_MAX_SWEEPS, DYKSTRA_TOL};
pub use solver::{centered_schedule, solve, Initial, SolveOptions, SolveReport, Termination, Timings};

/// Default substeps per control interval for surrogate integration.
pub const DEFAULT_SUBSTEPS: usize = 10;

/// A surrogate objective discretized on `N` control intervals.
#[derive(Debug, Clone, Copy)]
pub struct ShootingProblem<'a> {
    instance: &'a Instance,
    kind: SurrogateKind,
    grid: Grid,
}

/// Objective and gradient at one point, with wall-clock split.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: Mat,
    pub forward_s: f64,
    pub adjoint_s: f64,
}

impl<'a> ShootingProblem<'a> {
    pub fn new(instance: &'a Instance, intervals: usize, substeps: usize, kind: SurrogateKind) -> Result<Self> {
        if intervals == 0 {
            return Err(Error::InvalidArgument("the number of control intervals must be at least 1".into()));
        }
        if substeps == 0 {
            return Err(Error::InvalidArgument("substeps must be at least 1".into()));
        }
        Ok(Self {
            instance,
            kind,
            grid: Grid { horizon: instance.horizon(), intervals, substeps, scheme: Scheme::Rk4 },
        })
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.grid.scheme = scheme;
        self
    }

    pub fn instance(&self) -> &'a Instance {
        self.instance
    }
    pub fn kind(&self) -> SurrogateKind {
        self.kind
    }
    pub fn intervals(&self) -> usize {
        self.grid.intervals
    }
    pub fn substeps(&self) -> usize {
        self.grid.substeps
    }
    pub fn scheme(&self) -> Scheme {
        self.grid.scheme
    }
    pub fn sensors(&self) -> usize {
        self.instance.num_sensors()
    }

    fn check_rates(&self, rates: &Mat) -> Result<()> {
        if rates.nrows() != self.intervals() || rates.ncols() != self.sensors() {
            return Err(Error::DimensionMismatch {
                what: "rate matrix".into(),
                expected: format!("{}x{}", self.intervals(), self.sensors()),
                got: format!("{}x{}", rates.nrows(), rates.ncols()),
            });
        }
        if rates.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("rates must be finite".into()));
        }
        Ok(())
    }

    /// Schedule wrapper for a rate matrix of this problem's shape.
    pub fn schedule(&self, rates: Mat) -> Result<Schedule> {
        self.check_rates(&rates)?;
        Schedule::new(self.grid.horizon, rates)
    }

    /// Surrogate objective `J(λ)`.
    pub fn objective(&self, rates: &Mat) -> Result<f64> {
        self.check_rates(rates)?;
        match self.kind {
            SurrogateKind::Info => self.value_with(&InfoDynamics::new(self.instance), rates),
            SurrogateKind::Cov => self.value_with(&CovDynamics::new(self.instance), rates),
        }
    }

    /// `J(λ)` and `∇J(λ)` by the discrete adjoint.
    pub fn evaluate(&self, rates: &Mat) -> Result<Evaluation> {
        self.check_rates(rates)?;
        match self.kind {
            SurrogateKind::Info => self.evaluate_with(&InfoDynamics::new(self.instance), rates),
            SurrogateKind::Cov => self.evaluate_with(&CovDynamics::new(self.instance), rates),
        }
    }

    pub fn objective_and_gradient(&self, rates: &Mat) -> Result<(f64, Mat)> {
        let e = self.evaluate(rates)?;
        Ok((e.value, e.gradient))
    }

    fn value_with<D: Dynamics>(&self, dynamics: &D, rates: &Mat) -> Result<f64> {
        let nodes = surrogate::forward(dynamics, rates, &self.grid)?;
        adjoint::objective_of(dynamics, &nodes, &self.grid, &self.instance.weights)
    }

    fn evaluate_with<D: Dynamics>(&self, dynamics: &D, rates: &Mat) -> Result<Evaluation> {
        let start = Instant::now();
        let nodes = surrogate::forward(dynamics, rates, &self.grid)?;
        let value = adjoint::objective_of(dynamics, &nodes, &self.grid, &self.instance.weights)?;
        let forward_s = start.elapsed().as_secs_f64();
        let start = Instant::now();
        let gradient = adjoint::gradient(dynamics, rates, &nodes, &self.grid, &self.instance.weights)?;
        let adjoint_s = start.elapsed().as_secs_f64();
        Ok(Evaluation { value, gradient, forward_s, adjoint_s })
    }
}

/// Default relative step for central differences.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Central-difference gradient with step `fd_step · max(1, |λ_kj|)`.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn finite_difference_gradient(problem: &ShootingProblem<'_>, rates: &Mat, fd_step: f64) -> Result<Mat> {
    problem.check_rates(rates)?;
    if !(fd_step > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let (rows, cols) = (rates.nrows(), rates.ncols());
    let entries = (0..rows * cols)
        .into_par_iter()
        .map(|idx| {
            let (k, j) = (idx % rows, idx / rows);
            let h = fd_step * rates[(k, j)].abs().max(1.0);
            let mut plus = rates.clone();
            plus[(k, j)] += h;
            let mut minus = rates.clone();
            minus[(k, j)] -= h;
            Ok((problem.objective(&plus)? - problem.objective(&minus)?) / (2.0 * h))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Mat::from_vec(rows, cols, entries))
}

/// Outcome of comparing the adjoint gradient with central differences.
#[derive(Debug, Clone, Serialize)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    /// `(interval, sensor)` of the worst entry.
    pub worst: (usize, usize),
    pub adjoint_norm: f64,
    pub fd_norm: f64,
}

/// Entrywise relative error `|a − f| / max(|a|, |f|, 1e-3‖f‖_∞)`.
pub fn compare_gradients(adjoint: &Mat, fd: &Mat) -> GradientCheck {
    let scale = 1e-3 * fd.amax();
    let mut worst = (0, 0);
    let mut max_rel_error = 0.0f64;
    for k in 0..adjoint.nrows() {
        for j in 0..adjoint.ncols() {
            let (a, f) = (adjoint[(k, j)], fd[(k, j)]);
            let denom = a.abs().max(f.abs()).max(scale).max(f64::MIN_POSITIVE);
            let rel = (a - f).abs() / denom;
            if rel > max_rel_error {
                max_rel_error = rel;
                worst = (k, j);
            }
        }
    }
    GradientCheck { max_rel_error, worst, adjoint_norm: adjoint.norm(), fd_norm: fd.norm() }
}

pub fn gradient_check(problem: &ShootingProblem<'_>, rates: &Mat, fd_step: f64) -> Result<GradientCheck> {
    let (_, adjoint) = problem.objective_and_gradient(rates)?;
    let fd = finite_difference_gradient(problem, rates, fd_step)?;
    Ok(compare_gradients(&adjoint, &fd))
}
