//! Reverse-mode discrete adjoint of the fixed-step surrogate integrators.
//!
//! The forward map is the exact sequence of RK4 (or Euler) steps taken by
//! `surrogate::forward`; the reverse sweep differentiates every stage of
//! every step, so the gradient is exact for the discretized objective.

use crate::error::Result;
use crate::linalg::{self, Mat};
use crate::model::WeightSpec;
use crate::riccati::{self, Scheme};
use crate::surrogate::{self, Dynamics, Grid};

/// Trapezoid weights per node: `½h(W_left + W_right)` plus `W_T` at the end.
pub(crate) fn node_weights(weights: &WeightSpec, grid: &Grid) -> Vec<Option<Mat>> {
    let steps = grid.steps();
    let mut out: Vec<Option<Mat>> = vec![None; steps + 1];
    let mut add = |i: usize, w: Mat| {
        out[i] = Some(match out[i].take() {
            Some(acc) => acc + w,
            None => w,
        });
    };
    if weights.stages().is_some() {
        for i in 0..steps {
            let (t0, t1) = (grid.time(i), grid.time(i + 1));
            let w = weights.running_at(0.5 * (t0 + t1), grid.horizon).unwrap();
            let c = 0.5 * (t1 - t0);
            add(i, w * c);
            add(i + 1, w * c);
        }
    }
    add(steps, weights.terminal().clone());
    out
}

/// Pulls the adjoint of `x_{i+1}` back through one step from `x_i`.
fn step_vjp<D: Dynamics>(
    dynamics: &D,
    x: &Mat,
    h: f64,
    scheme: Scheme,
    stage: &D::Stage,
    bar_next: &Mat,
    acc: &mut D::Acc,
) -> Result<Mat> {
    let g = linalg::symmetrize(bar_next);
    match scheme {
        Scheme::Euler => {
            let pulled = dynamics.vjp(x, stage, &(&g * h), acc)?;
            Ok(g + pulled)
        }
        Scheme::Rk4 => {
            let k1 = dynamics.rhs(x, stage)?;
            let x2 = x + &k1 * (0.5 * h);
            let k2 = dynamics.rhs(&x2, stage)?;
            let x3 = x + &k2 * (0.5 * h);
            let k3 = dynamics.rhs(&x3, stage)?;
            let x4 = x + &k3 * h;

            let mut xbar = g.clone();
            let mut k1bar = &g * (h / 6.0);
            let mut k2bar = &g * (h / 3.0);
            let mut k3bar = &g * (h / 3.0);
            let k4bar = &g * (h / 6.0);

            let x4bar = dynamics.vjp(&x4, stage, &k4bar, acc)?;
            k3bar += &x4bar * h;
            xbar += x4bar;

            let x3bar = dynamics.vjp(&x3, stage, &k3bar, acc)?;
            k2bar += &x3bar * (0.5 * h);
            xbar += x3bar;

            let x2bar = dynamics.vjp(&x2, stage, &k2bar, acc)?;
            k1bar += &x2bar * (0.5 * h);
            xbar += x2bar;

            xbar += dynamics.vjp(x, stage, &k1bar, acc)?;
            Ok(xbar)
        }
    }
}

/// Objective of an already integrated forward pass.
pub(crate) fn objective_of<D: Dynamics>(
    dynamics: &D,
    nodes: &[Mat],
    grid: &Grid,
    weights: &WeightSpec,
) -> Result<f64> {
    let traj = surrogate::scored_trajectory(dynamics, nodes, grid, weights.stages().is_some())?;
    riccati::pathwise_cost(&traj, weights, grid.horizon)
}

/// Gradient of the discretized objective with respect to the `N × M` rates.
pub(crate) fn gradient<D: Dynamics>(
    dynamics: &D,
    rates: &Mat,
    nodes: &[Mat],
    grid: &Grid,
    weights: &WeightSpec,
) -> Result<Mat> {
    let (intervals, sensors) = (rates.nrows(), rates.ncols());
    let steps = grid.steps();
    let h = grid.h();
    let wn = node_weights(weights, grid);
    let n = nodes[0].nrows();

    let mut grad = Mat::zeros(intervals, sensors);
    let mut row = vec![0.0; sensors];
    let mut bar = match &wn[steps] {
        Some(w) => dynamics.scored_grad(&nodes[steps], w)?,
        None => Mat::zeros(n, n),
    };
    let mut acc = dynamics.new_acc();
    let mut stage = None;
    for i in (0..steps).rev() {
        let k = i / grid.substeps;
        if i % grid.substeps == grid.substeps - 1 {
            let lam: Vec<f64> = rates.row(k).iter().copied().collect();
            stage = Some(dynamics.stage(&lam));
        }
        let st = stage.as_ref().expect("stage set at the end of each interval");
        bar = step_vjp(dynamics, &nodes[i], h, grid.scheme, st, &bar, &mut acc)?;
        if let Some(w) = &wn[i] {
            bar += dynamics.scored_grad(&nodes[i], w)?;
        }
        if i % grid.substeps == 0 {
            row.iter_mut().for_each(|v| *v = 0.0);
            dynamics.flush(&acc, &mut row);
            for (j, v) in row.iter().enumerate() {
                grad[(k, j)] = *v;
            }
            acc = dynamics.new_acc();
        }
    }
    Ok(grad)
}
