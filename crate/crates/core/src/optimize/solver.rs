//! Projected gradient descent with Barzilai–Borwein trial steps and Armijo
//! backtracking along the projection arc.

use std::time::Instant;

use serde::Serialize;

use super::projection::project_rates;
use super::ShootingProblem;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{Instance, Schedule};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Stop once `‖λ − Π(λ − ∇J)‖_F / √(NM)` falls below this.
    pub grad_tol: f64,
    pub armijo_c1: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub step_min: f64,
    pub step_max: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            grad_tol: 1e-6,
            armijo_c1: 1e-4,
            backtrack: 0.5,
            max_backtracks: 60,
            step_min: 1e-8,
            step_max: 1e8,
        }
    }
}

/// Starting point of the solver.
#[derive(Debug, Clone)]
pub enum Initial {
    /// Every rate equal to half the largest uniform feasible rate.
    Centered,
    Schedule(Schedule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    /// No sufficient decrease along the projection arc.
    LineSearch,
}

/// Cumulative wall-clock split of a solve, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Timings {
    /// Objective-only evaluations during line search.
    pub forward_s: f64,
    /// Forward integration plus reverse sweep for each gradient.
    pub gradient_assembly_s: f64,
    /// Share of `gradient_assembly_s` spent in the reverse sweep.
    pub adjoint_s: f64,
    pub projection_s: f64,
    pub total_s: f64,
    pub forward_per_iter_s: f64,
    pub gradient_assembly_per_iter_s: f64,
    pub projection_per_iter_s: f64,
    pub gradient_evaluations: usize,
    pub objective_evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub schedule: Schedule,
    pub objective: f64,
    pub iterations: usize,
    pub projected_gradient_norm: f64,
    /// Objective after each accepted iterate, starting with the initial one.
    pub history: Vec<f64>,
    pub termination: Termination,
    pub timings: Timings,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

/// Constant schedule at `½ t*` with `t* = min_i b_i / Σ_j C_ij`.
pub fn centered_schedule(instance: &Instance, intervals: usize) -> Result<Schedule> {
    let level = 0.5 * instance.polytope.uniform_limit();
    Schedule::constant(instance.horizon(), intervals, &vec![level; instance.num_sensors()])
}

fn inner(a: &Mat, b: &Mat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

#[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail
pub fn solve(problem: &ShootingProblem<'_>, initial: Initial, options: &SolveOptions) -> Result<SolveReport> {
    if !(options.grad_tol >= 0.0) || !(0.0 < options.backtrack && options.backtrack < 1.0) {
        return Err(Error::InvalidArgument("invalid solver options".into()));
    }
    let instance = problem.instance();
    let polytope = &instance.polytope;
    let start = Instant::now();
    let mut t = Timings::default();

    let x0 = match initial {
        Initial::Centered => centered_schedule(instance, problem.intervals())?,
        Initial::Schedule(s) => s,
    };
    let clock = Instant::now();
    let mut x = project_rates(x0.rates(), polytope)?;
    t.projection_s += clock.elapsed().as_secs_f64();

    let mut eval = problem.evaluate(&x)?;
    t.gradient_assembly_s += eval.forward_s + eval.adjoint_s;
    t.adjoint_s += eval.adjoint_s;
    t.gradient_evaluations += 1;
    let mut j = eval.value;
    let mut g = eval.gradient;
    let mut history = vec![j];
    let scale = ((x.nrows() * x.ncols()) as f64).sqrt();
    let mut alpha = (1.0 / g.amax().max(1e-12)).clamp(options.step_min, options.step_max);
    let mut iterations = 0;

    let termination = loop {
        let clock = Instant::now();
        let pg = &x - project_rates(&(&x - &g), polytope)?;
        t.projection_s += clock.elapsed().as_secs_f64();
        if pg.norm() / scale <= options.grad_tol {
            break Termination::Converged;
        }
        if iterations >= options.max_iters {
            break Termination::MaxIterations;
        }

        let mut accepted = None;
        let mut step = alpha;
        for _ in 0..=options.max_backtracks {
            let clock = Instant::now();
            let trial = project_rates(&(&x - &g * step), polytope)?;
            t.projection_s += clock.elapsed().as_secs_f64();
            let d = &trial - &x;
            if d.amax() == 0.0 {
                break;
            }
            let clock = Instant::now();
            let value = problem.objective(&trial);
            t.forward_s += clock.elapsed().as_secs_f64();
            t.objective_evaluations += 1;
            match value {
                Ok(v) if v <= j + options.armijo_c1 * inner(&g, &d) => {
                    accepted = Some(trial);
                    break;
                }
                Ok(_) | Err(Error::NotPositiveDefinite { .. }) => {}
                Err(e) => return Err(e),
            }
            step *= options.backtrack;
            if step < options.step_min * 1e-8 {
                break;
            }
        }
        let Some(next) = accepted else {
            break Termination::LineSearch;
        };

        eval = problem.evaluate(&next)?;
        t.gradient_assembly_s += eval.forward_s + eval.adjoint_s;
        t.adjoint_s += eval.adjoint_s;
        t.gradient_evaluations += 1;
        let s = &next - &x;
        let y = &eval.gradient - &g;
        let sy = inner(&s, &y);
        alpha = if sy > 0.0 { inner(&s, &s) / sy } else { options.step_max };
        alpha = alpha.clamp(options.step_min, options.step_max);
        x = next;
        j = eval.value;
        g = eval.gradient;
        history.push(j);
        iterations += 1;
    };

    let clock = Instant::now();
    let pg = &x - project_rates(&(&x - &g), polytope)?;
    t.projection_s += clock.elapsed().as_secs_f64();
    t.total_s = start.elapsed().as_secs_f64();
    let per = iterations.max(1) as f64;
    t.forward_per_iter_s = t.forward_s / per;
    t.gradient_assembly_per_iter_s = t.gradient_assembly_s / per;
    t.projection_per_iter_s = t.projection_s / per;

    Ok(SolveReport {
        schedule: problem.schedule(x)?,
        objective: j,
        iterations,
        projected_gradient_norm: pg.norm() / scale,
        history,
        termination,
        timings: t,
    })
}
