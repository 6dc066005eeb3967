//! Fixed-step matrix ODE kernels: the Lyapunov flow in covariance
//! coordinates, the Riccati flow in information coordinates, the two jump
//! maps at measurement arrivals, and trapezoidal cost quadrature.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::model::{Sensor, WeightSpec};

/// Fixed-step integration scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Rk4,
    Euler,
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rk4" => Ok(Self::Rk4),
            "euler" => Ok(Self::Euler),
            other => Err(Error::InvalidArgument(format!("unknown scheme {other:?}"))),
        }
    }
}

/// Which matrix a trajectory stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coordinates {
    /// Error covariance `P`.
    Covariance,
    /// Information matrix `Y = P⁻¹`.
    Information,
}

impl Coordinates {
    pub fn flipped(self) -> Self {
        match self {
            Self::Covariance => Self::Information,
            Self::Information => Self::Covariance,
        }
    }
}

/// Symmetric positive-definite matrices sampled on a strictly increasing grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    coordinates: Coordinates,
    times: Vec<f64>,
    values: Vec<Mat>,
}

impl Trajectory {
    pub fn new(coordinates: Coordinates, times: Vec<f64>, values: Vec<Mat>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::DimensionMismatch {
                what: "trajectory nodes".into(),
                expected: times.len().to_string(),
                got: values.len().to_string(),
            });
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation("trajectory times must be strictly increasing".into()));
        }
        for (t, v) in times.iter().zip(&values) {
            linalg::check_pd(v, "trajectory node", Some(*t))?;
        }
        let values = values.iter().map(linalg::symmetrize).collect();
        Ok(Self { coordinates, times, values })
    }

    pub(crate) fn from_parts(coordinates: Coordinates, times: Vec<f64>, values: Vec<Mat>) -> Self {
        debug_assert_eq!(times.len(), values.len());
        Self { coordinates, times, values }
    }

    pub fn coordinates(&self) -> Coordinates {
        self.coordinates
    }
    pub fn times(&self) -> &[f64] {
        &self.times
    }
    pub fn values(&self) -> &[Mat] {
        &self.values
    }
    pub fn len(&self) -> usize {
        self.times.len()
    }
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
    pub fn last(&self) -> &Mat {
        self.values.last().expect("trajectory is non-empty")
    }
    pub fn dim(&self) -> usize {
        self.values[0].nrows()
    }

    /// Every `stride`-th node, always keeping both endpoints.
    pub fn subsample(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        let last = self.len() - 1;
        let idx: Vec<usize> = (0..=last).step_by(stride).collect();
        let mut idx = idx;
        if *idx.last().unwrap() != last {
            idx.push(last);
        }
        Self {
            coordinates: self.coordinates,
            times: idx.iter().map(|&i| self.times[i]).collect(),
            values: idx.iter().map(|&i| self.values[i].clone()).collect(),
        }
    }

    /// CSV with a header `t,x00,x01,…` and one row per node, row-major entries.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.dim();
        let mut header = String::from("t");
        for i in 0..n {
            for j in 0..n {
                header.push_str(&format!(",x{i}{j}"));
            }
        }
        writeln!(out, "{header}")?;
        for (t, v) in self.times.iter().zip(&self.values) {
            let mut line = t.to_string();
            for i in 0..n {
                for j in 0..n {
                    line.push(',');
                    line.push_str(&v[(i, j)].to_string());
                }
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// One fixed step of `ẋ = f(x)`; the result is symmetrized.
pub(crate) fn step<F>(x: &Mat, h: f64, scheme: Scheme, f: &F) -> Result<Mat>
where
    F: Fn(&Mat) -> Result<Mat>,
{
    let mut next = match scheme {
        Scheme::Euler => x + f(x)? * h,
        Scheme::Rk4 => {
            let k1 = f(x)?;
            let k2 = f(&(x + &k1 * (0.5 * h)))?;
            let k3 = f(&(x + &k2 * (0.5 * h)))?;
            let k4 = f(&(x + &k3 * h))?;
            x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
        }
    };
    linalg::symmetrize_in_place(&mut next);
    Ok(next)
}

fn integrate<F>(x0: &Mat, dt: f64, substeps: usize, scheme: Scheme, what: &str, f: F) -> Result<Mat>
where
    F: Fn(&Mat) -> Result<Mat>,
{
    if !(dt >= 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("duration must be nonnegative, got {dt}")));
    }
    if substeps == 0 {
        return Err(Error::InvalidArgument("substeps must be at least 1".into()));
    }
    if dt == 0.0 {
        return Ok(x0.clone());
    }
    let h = dt / substeps as f64;
    let mut x = x0.clone();
    for i in 0..substeps {
        x = step(&x, h, scheme, &f)?;
        linalg::check_pd(&x, what, Some(h * (i + 1) as f64))?;
    }
    Ok(x)
}

/// `AP + PAᵀ + Q` for symmetric `P`.
pub(crate) fn lyapunov_rhs(a: &Mat, q: &Mat, p: &Mat) -> Mat {
    let ap = a * p;
    let mut out = &ap + ap.transpose() + q;
    linalg::symmetrize_in_place(&mut out);
    out
}

/// `−YA − AᵀY − YQY` for symmetric `Y`.
pub(crate) fn info_rhs(a: &Mat, q: &Mat, y: &Mat) -> Mat {
    let ya = y * a;
    let mut out = -(&ya + ya.transpose()) - y * q * y;
    linalg::symmetrize_in_place(&mut out);
    out
}

/// Propagate a covariance through `Ṗ = AP + PAᵀ + Q` over `dt` with RK4.
pub fn flow_cov(p: &Mat, a: &Mat, q: &Mat, dt: f64, substeps: usize) -> Result<Mat> {
    flow_cov_with(p, a, q, dt, substeps, Scheme::Rk4)
}

pub fn flow_cov_with(p: &Mat, a: &Mat, q: &Mat, dt: f64, substeps: usize, scheme: Scheme) -> Result<Mat> {
    integrate(p, dt, substeps, scheme, "covariance", |x| Ok(lyapunov_rhs(a, q, x)))
}

/// Propagate an information matrix through `Ẏ = −YA − AᵀY − YQY` with RK4.
pub fn flow_info(y: &Mat, a: &Mat, q: &Mat, dt: f64, substeps: usize) -> Result<Mat> {
    flow_info_with(y, a, q, dt, substeps, Scheme::Rk4)
}

pub fn flow_info_with(y: &Mat, a: &Mat, q: &Mat, dt: f64, substeps: usize, scheme: Scheme) -> Result<Mat> {
    integrate(y, dt, substeps, scheme, "information", |x| Ok(info_rhs(a, q, x)))
}

/// Kalman covariance update map `g(P) = P Hᵀ (HPHᵀ + R)⁻¹ H P`.
pub fn update_map(p: &Mat, sensor: &Sensor, index: usize) -> Result<Mat> {
    let h = sensor.h();
    let hp = h * p;
    let innov = &hp * h.transpose() + sensor.r();
    let chol = linalg::symmetrize(&innov)
        .cholesky()
        .ok_or(Error::SingularInnovation { sensor: index })?;
    let l = chol.solve(&hp);
    let mut g = hp.transpose() * l;
    linalg::symmetrize_in_place(&mut g);
    Ok(g)
}

/// Measurement update in covariance coordinates: `P − g(P)`.
pub fn jump_cov(p: &Mat, sensor: &Sensor) -> Result<Mat> {
    jump_cov_indexed(p, sensor, 0)
}

pub(crate) fn jump_cov_indexed(p: &Mat, sensor: &Sensor, index: usize) -> Result<Mat> {
    if p.nrows() != sensor.dim() {
        return Err(Error::DimensionMismatch {
            what: "jump state".into(),
            expected: sensor.dim().to_string(),
            got: p.nrows().to_string(),
        });
    }
    let mut out = p - update_map(p, sensor, index)?;
    linalg::symmetrize_in_place(&mut out);
    Ok(out)
}

/// Measurement update in information coordinates: `Y + S`.
pub fn jump_info(y: &Mat, sensor: &Sensor) -> Result<Mat> {
    if y.nrows() != sensor.dim() {
        return Err(Error::DimensionMismatch {
            what: "jump state".into(),
            expected: sensor.dim().to_string(),
            got: y.nrows().to_string(),
        });
    }
    Ok(y + sensor.info())
}

/// Trapezoidal `∫⟨W(t), P(t)⟩ dt + ⟨W_T, P(T)⟩` on the trajectory grid.
///
/// The running weight on each segment is the stage containing the segment
/// midpoint.
pub fn pathwise_cost(traj: &Trajectory, weights: &WeightSpec, horizon: f64) -> Result<f64> {
    if traj.coordinates() != Coordinates::Covariance {
        return Err(Error::InvalidArgument("pathwise cost needs covariance coordinates".into()));
    }
    let t_end = *traj.times().last().unwrap();
    if (t_end - horizon).abs() > 1e-9 * horizon.max(1.0) || traj.times()[0].abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::Validation(format!(
            "trajectory spans [{}, {t_end}], expected [0, {horizon}]",
            traj.times()[0]
        )));
    }
    if weights.dim() != traj.dim() {
        return Err(Error::DimensionMismatch {
            what: "weights".into(),
            expected: traj.dim().to_string(),
            got: weights.dim().to_string(),
        });
    }
    let mut running = 0.0;
    if weights.stages().is_some() {
        let (t, v) = (traj.times(), traj.values());
        for i in 0..t.len() - 1 {
            let w = weights.running_at(0.5 * (t[i] + t[i + 1]), horizon).unwrap();
            running += 0.5 * (t[i + 1] - t[i]) * (linalg::frob(w, &v[i]) + linalg::frob(w, &v[i + 1]));
        }
    }
    Ok(running + linalg::frob(weights.terminal(), traj.last()))
}

/// Nodewise inverse, switching between covariance and information coordinates.
pub fn invert_trajectory(traj: &Trajectory) -> Result<Trajectory> {
    let values = traj
        .times()
        .iter()
        .zip(traj.values())
        .map(|(t, v)| {
            linalg::check_pd(v, "trajectory node", Some(*t))?;
            linalg::spd_inverse(v, "trajectory node", Some(*t))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory::from_parts(traj.coordinates().flipped(), traj.times().to_vec(), values))
}
