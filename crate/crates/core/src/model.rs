//! Problem instances: the linear system, the sensor bank, the per-stage
//! resource polytope and the cost weights, plus the randomized instance
//! generator used by the experiments.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

/// Relative asymmetry accepted on ingestion before re-symmetrizing.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Absolute slack on the minimum eigenvalue for PSD checks.
pub const PSD_TOL: f64 = 1e-10;

fn ingest_symmetric(x: &Mat, what: &str) -> Result<Mat> {
    if !x.is_square() {
        return Err(Error::DimensionMismatch {
            what: what.to_string(),
            expected: "square matrix".into(),
            got: format!("{}x{}", x.nrows(), x.ncols()),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("{what} has non-finite entries")));
    }
    let asym = linalg::asymmetry(x);
    if asym > SYMMETRY_TOL {
        return Err(Error::Validation(format!(
            "{what} is not symmetric (relative asymmetry {asym:e})"
        )));
    }
    Ok(linalg::symmetrize(x))
}

fn ingest_psd(x: &Mat, what: &str) -> Result<Mat> {
    let x = ingest_symmetric(x, what)?;
    let min_eig = linalg::min_eigenvalue(&x);
    if min_eig < -PSD_TOL * x.norm().max(1.0) {
        return Err(Error::NotPositiveDefinite {
            what: format!("{what} (PSD required)"),
            min_eig,
            time: None,
        });
    }
    Ok(x)
}

fn ingest_pd(x: &Mat, what: &str) -> Result<Mat> {
    let x = ingest_symmetric(x, what)?;
    let min_eig = linalg::min_eigenvalue(&x);
    if min_eig <= 0.0 || x.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite {
            what: what.to_string(),
            min_eig,
            time: None,
        });
    }
    Ok(x)
}

fn check_shape(x: &Mat, rows: usize, cols: usize, what: &str) -> Result<()> {
    if x.nrows() != rows || x.ncols() != cols {
        return Err(Error::DimensionMismatch {
            what: what.to_string(),
            expected: format!("{rows}x{cols}"),
            got: format!("{}x{}", x.nrows(), x.ncols()),
        });
    }
    Ok(())
}

/// Linear SDE `dx = A x dt + Σ_w dW` with `Q = Σ_w Σ_wᵀ`, observed on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    a: Mat,
    q: Mat,
    m0: DVector<f64>,
    p0: Mat,
    horizon: f64,
}

impl SystemModel {
    pub fn new(a: Mat, q: Mat, m0: DVector<f64>, p0: Mat, horizon: f64) -> Result<Self> {
        let n = a.nrows();
        if n == 0 {
            return Err(Error::Validation("state dimension must be positive".into()));
        }
        check_shape(&a, n, n, "A")?;
        check_shape(&q, n, n, "Q")?;
        check_shape(&p0, n, n, "P0")?;
        if m0.len() != n {
            return Err(Error::DimensionMismatch {
                what: "m0".into(),
                expected: n.to_string(),
                got: m0.len().to_string(),
            });
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Validation(format!("horizon must be positive, got {horizon}")));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("A has non-finite entries".into()));
        }
        let q = ingest_psd(&q, "Q")?;
        let p0 = ingest_pd(&p0, "P0")?;
        Ok(Self { a, q, m0, p0, horizon })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn a(&self) -> &Mat {
        &self.a
    }
    pub fn q(&self) -> &Mat {
        &self.q
    }
    pub fn m0(&self) -> &DVector<f64> {
        &self.m0
    }
    pub fn p0(&self) -> &Mat {
        &self.p0
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// A factor `L` with `L Lᵀ = Q`, used only for truth simulation.
    pub fn noise_factor(&self) -> Mat {
        linalg::psd_factor(&self.q)
    }

    pub(crate) fn with_scaled(&self, p0_scale: f64, q_scale: f64) -> Result<Self> {
        Self::new(
            self.a.clone(),
            &self.q * q_scale,
            self.m0.clone(),
            &self.p0 * p0_scale,
            self.horizon,
        )
    }
}

/// One sensor `z = H x + v`, `v ~ N(0, R)`, with its cached information
/// increment `S = Hᵀ R⁻¹ H`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensor {
    h: Mat,
    r: Mat,
    s: Mat,
}

impl Sensor {
    pub fn new(h: Mat, r: Mat) -> Result<Self> {
        let p = h.nrows();
        if p == 0 || h.ncols() == 0 {
            return Err(Error::Validation("H must be non-empty".into()));
        }
        check_shape(&r, p, p, "R")?;
        let r = ingest_symmetric(&r, "R")?;
        let s = information_increment(&h, &r)?;
        Ok(Self { h, r, s })
    }

    pub fn h(&self) -> &Mat {
        &self.h
    }
    pub fn r(&self) -> &Mat {
        &self.r
    }
    /// Information increment `Hᵀ R⁻¹ H`.
    pub fn info(&self) -> &Mat {
        &self.s
    }
    pub fn dim(&self) -> usize {
        self.h.ncols()
    }
    pub fn outputs(&self) -> usize {
        self.h.nrows()
    }

    /// The same sensor with `R` multiplied by `scale`.
    pub fn with_noise_scale(&self, scale: f64) -> Result<Self> {
        Self::new(self.h.clone(), &self.r * scale)
    }
}

/// `Hᵀ R⁻¹ H`, symmetrized.
pub fn information_increment(h: &Mat, r: &Mat) -> Result<Mat> {
    if r.nrows() != h.nrows() || !r.is_square() {
        return Err(Error::DimensionMismatch {
            what: "R".into(),
            expected: format!("{0}x{0}", h.nrows()),
            got: format!("{}x{}", r.nrows(), r.ncols()),
        });
    }
    let min_eig = linalg::min_eigenvalue(r);
    let chol = match r.clone().cholesky() {
        Some(c) if min_eig > 0.0 => c,
        _ => {
            return Err(Error::NotPositiveDefinite {
                what: "measurement noise covariance R".into(),
                min_eig,
                time: None,
            })
        }
    };
    let rinv_h = chol.solve(h);
    Ok(linalg::symmetrize(&(h.transpose() * rinv_h)))
}

/// Per-stage admissible set `{λ : Cλ ≤ b, λ ≥ 0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourcePolytope {
    c: Mat,
    b: DVector<f64>,
    caps: Vec<f64>,
}

impl ResourcePolytope {
    pub fn new(c: Mat, b: DVector<f64>) -> Result<Self> {
        if c.nrows() != b.len() {
            return Err(Error::DimensionMismatch {
                what: "constraint rows".into(),
                expected: c.nrows().to_string(),
                got: b.len().to_string(),
            });
        }
        if c.nrows() == 0 || c.ncols() == 0 {
            return Err(Error::Validation("constraint matrix must be non-empty".into()));
        }
        if c.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
            return Err(Error::Validation("C must have finite nonnegative entries".into()));
        }
        if b.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
            return Err(Error::Validation("b must have finite nonnegative entries".into()));
        }
        let caps = rate_caps(&c, &b)?;
        Ok(Self { c, b, caps })
    }

    /// Single budget row `1ᵀλ ≤ budget`.
    pub fn budget(sensors: usize, budget: f64) -> Result<Self> {
        Self::new(Mat::from_element(1, sensors, 1.0), DVector::from_element(1, budget))
    }

    pub fn c(&self) -> &Mat {
        &self.c
    }
    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }
    pub fn sensors(&self) -> usize {
        self.c.ncols()
    }
    /// Per-sensor rate caps `λ̄_j`.
    pub fn caps(&self) -> &[f64] {
        &self.caps
    }

    /// True when `C` is one row of ones.
    pub fn is_simplex_budget(&self) -> bool {
        self.c.nrows() == 1 && self.c.iter().all(|&v| v == 1.0)
    }

    /// Largest `t` with `C (t·1) ≤ b`.
    pub fn uniform_limit(&self) -> f64 {
        (0..self.c.nrows())
            .filter_map(|i| {
                let row: f64 = self.c.row(i).sum();
                (row > 0.0).then(|| self.b[i] / row)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// `λ̄_j = min over {i : C_ij > 0} of b_i / C_ij`.
pub fn rate_caps(c: &Mat, b: &DVector<f64>) -> Result<Vec<f64>> {
    (0..c.ncols())
        .map(|j| {
            let cap = (0..c.nrows())
                .filter(|&i| c[(i, j)] > 0.0)
                .map(|i| b[i] / c[(i, j)])
                .fold(f64::INFINITY, f64::min);
            if cap.is_finite() {
                Ok(cap)
            } else {
                Err(Error::Validation(format!(
                    "sensor {j} has no positive entry in C (unbounded rate)"
                )))
            }
        })
        .collect()
}

/// Cost weights: a piecewise-constant running weight (absent means zero) and
/// a terminal weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSpec {
    stages: Option<Vec<Mat>>,
    terminal: Mat,
}

impl WeightSpec {
    pub fn new(stages: Option<Vec<Mat>>, terminal: Mat) -> Result<Self> {
        let n = terminal.nrows();
        let terminal = ingest_psd(&terminal, "W_T")?;
        let stages = match stages {
            Some(ws) if ws.is_empty() => {
                return Err(Error::Validation("W_stages must be non-empty when present".into()))
            }
            Some(ws) => Some(
                ws.iter()
                    .enumerate()
                    .map(|(k, w)| {
                        check_shape(w, n, n, &format!("W[{k}]"))?;
                        ingest_psd(w, &format!("W[{k}]"))
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        Ok(Self { stages, terminal })
    }

    /// `W ≡ 0`, `W_T = I`.
    pub fn terminal_trace(n: usize) -> Self {
        Self {
            stages: None,
            terminal: Mat::identity(n, n),
        }
    }

    pub fn stages(&self) -> Option<&[Mat]> {
        self.stages.as_deref()
    }
    pub fn terminal(&self) -> &Mat {
        &self.terminal
    }
    pub fn dim(&self) -> usize {
        self.terminal.nrows()
    }

    /// Running weight active on the segment with midpoint `t_mid`.
    pub fn running_at(&self, t_mid: f64, horizon: f64) -> Option<&Mat> {
        let ws = self.stages.as_ref()?;
        let k = ((t_mid / horizon) * ws.len() as f64).floor();
        let k = (k.max(0.0) as usize).min(ws.len() - 1);
        Some(&ws[k])
    }
}

/// Piecewise-constant rate profile on a uniform grid of `N` intervals over
/// `[0, T]`; row `k` holds the rates on `[kΔ, (k+1)Δ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    horizon: f64,
    rates: Mat,
}

impl Schedule {
    pub fn new(horizon: f64, rates: Mat) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Validation(format!("horizon must be positive, got {horizon}")));
        }
        if rates.nrows() == 0 || rates.ncols() == 0 {
            return Err(Error::Validation("schedule needs N ≥ 1 intervals and M ≥ 1 sensors".into()));
        }
        if rates.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
            return Err(Error::Validation("rates must be finite and nonnegative".into()));
        }
        Ok(Self { horizon, rates })
    }

    pub fn zeros(horizon: f64, intervals: usize, sensors: usize) -> Result<Self> {
        Self::new(horizon, Mat::zeros(intervals, sensors))
    }

    /// Every stage equal to `row`.
    pub fn constant(horizon: f64, intervals: usize, row: &[f64]) -> Result<Self> {
        Self::new(horizon, Mat::from_fn(intervals, row.len(), |_, j| row[j]))
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn intervals(&self) -> usize {
        self.rates.nrows()
    }
    pub fn sensors(&self) -> usize {
        self.rates.ncols()
    }
    pub fn step(&self) -> f64 {
        self.horizon / self.intervals() as f64
    }
    pub fn rates(&self) -> &Mat {
        &self.rates
    }
    pub fn rate(&self, stage: usize, sensor: usize) -> f64 {
        self.rates[(stage, sensor)]
    }
    pub fn stage(&self, k: usize) -> Vec<f64> {
        self.rates.row(k).iter().copied().collect()
    }
}

/// Per-stage constraint violations of a schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// `max_i (Cλ_k − b)_i` per stage.
    pub budget_violation: Vec<f64>,
    /// `max_j (−λ_kj)` per stage.
    pub negativity: Vec<f64>,
    pub max_budget_violation: f64,
    pub max_negativity: f64,
    pub feasible: bool,
}

pub fn validate_rates(rates: &Mat, polytope: &ResourcePolytope, tol: f64) -> Result<FeasibilityReport> {
    if rates.ncols() != polytope.sensors() {
        return Err(Error::DimensionMismatch {
            what: "schedule sensors".into(),
            expected: polytope.sensors().to_string(),
            got: rates.ncols().to_string(),
        });
    }
    let mut budget_violation = Vec::with_capacity(rates.nrows());
    let mut negativity = Vec::with_capacity(rates.nrows());
    for k in 0..rates.nrows() {
        let lam = rates.row(k).transpose();
        let used = polytope.c() * &lam - polytope.b();
        budget_violation.push(used.max());
        negativity.push(-lam.min());
    }
    let max_budget_violation = budget_violation.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let max_negativity = negativity.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(FeasibilityReport {
        feasible: max_budget_violation <= tol && max_negativity <= tol,
        budget_violation,
        negativity,
        max_budget_violation,
        max_negativity,
    })
}

pub fn validate_schedule(schedule: &Schedule, polytope: &ResourcePolytope, tol: f64) -> Result<FeasibilityReport> {
    validate_rates(schedule.rates(), polytope, tol)
}

/// A complete scheduling problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub system: SystemModel,
    pub sensors: Vec<Sensor>,
    pub polytope: ResourcePolytope,
    pub weights: WeightSpec,
}

impl Instance {
    pub fn new(
        system: SystemModel,
        sensors: Vec<Sensor>,
        polytope: ResourcePolytope,
        weights: WeightSpec,
    ) -> Result<Self> {
        let n = system.dim();
        if sensors.is_empty() {
            return Err(Error::Validation("at least one sensor is required".into()));
        }
        for (j, s) in sensors.iter().enumerate() {
            if s.dim() != n {
                return Err(Error::DimensionMismatch {
                    what: format!("sensor {j} H columns"),
                    expected: n.to_string(),
                    got: s.dim().to_string(),
                });
            }
        }
        if polytope.sensors() != sensors.len() {
            return Err(Error::DimensionMismatch {
                what: "constraint columns".into(),
                expected: sensors.len().to_string(),
                got: polytope.sensors().to_string(),
            });
        }
        if weights.dim() != n {
            return Err(Error::DimensionMismatch {
                what: "W_T".into(),
                expected: n.to_string(),
                got: weights.dim().to_string(),
            });
        }
        Ok(Self { system, sensors, polytope, weights })
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }
    pub fn num_sensors(&self) -> usize {
        self.sensors.len()
    }
    pub fn horizon(&self) -> f64 {
        self.system.horizon()
    }
    /// `tr(P0)`, the normalization used in every reported cost.
    pub fn trace_p0(&self) -> f64 {
        self.system.p0().trace()
    }

    /// Every `R_j` multiplied by `scale`.
    pub fn with_noise_scale(&self, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidArgument(format!("noise scale must be positive, got {scale}")));
        }
        let sensors = self
            .sensors
            .iter()
            .map(|s| s.with_noise_scale(scale))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.system.clone(), sensors, self.polytope.clone(), self.weights.clone())
    }

    /// Same instance with `P0 → αP0`, `Q → βQ`.
    pub fn with_scaled_system(&self, p0_scale: f64, q_scale: f64) -> Result<Self> {
        Self::new(
            self.system.with_scaled(p0_scale, q_scale)?,
            self.sensors.clone(),
            self.polytope.clone(),
            self.weights.clone(),
        )
    }

    /// Replace the resource polytope.
    pub fn with_polytope(&self, polytope: ResourcePolytope) -> Result<Self> {
        Self::new(self.system.clone(), self.sensors.clone(), polytope, self.weights.clone())
    }

    pub(crate) fn check_schedule(&self, schedule: &Schedule) -> Result<()> {
        if schedule.sensors() != self.num_sensors() {
            return Err(Error::DimensionMismatch {
                what: "schedule sensors".into(),
                expected: self.num_sensors().to_string(),
                got: schedule.sensors().to_string(),
            });
        }
        let dt = (schedule.horizon() - self.horizon()).abs();
        if dt > 1e-12 * self.horizon() {
            return Err(Error::DimensionMismatch {
                what: "schedule horizon".into(),
                expected: self.horizon().to_string(),
                got: schedule.horizon().to_string(),
            });
        }
        Ok(())
    }
}

/// Parameters of the randomized instance recipe.
///
/// `A = V diag(μ) Vᵀ` with `V` Haar-orthogonal, `n_stable` entries of `μ`
/// uniform on `[−1, −0.1]` and the rest uniform on `[0.1, 1]`; `Q = I`,
/// `P0 = 100 I`, `m0 = 0`; each `H_j` has orthonormal rows and each `R_j`
/// has eigenvalues uniform on `[1, 10]` in a Haar-random basis. The
/// constraint is the single budget row `1ᵀλ ≤ budget` and the cost is
/// `tr P(T)`.
///
/// Randomness comes from `ChaCha8Rng::seed_from_u64(seed)`, consumed in a
/// fixed order (spectrum, eigenbasis, then per sensor `H` and `R`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub seed: u64,
    /// Number of stable modes; defaults to `⌈n/2⌉`.
    pub n_stable: Option<usize>,
    pub horizon: f64,
    pub budget: f64,
}

impl GenSpec {
    pub fn new(n: usize, m: usize, p: usize, seed: u64) -> Self {
        Self {
            n,
            m,
            p,
            seed,
            n_stable: None,
            horizon: 3.0,
            budget: 5.0,
        }
    }
}

pub fn random_instance(gen: &GenSpec) -> Result<Instance> {
    let GenSpec { n, m, p, .. } = *gen;
    if n == 0 || m == 0 || p == 0 {
        return Err(Error::InvalidArgument("n, M and p must be at least 1".into()));
    }
    if p > n {
        return Err(Error::InvalidArgument(format!(
            "sensor output dimension p={p} exceeds state dimension n={n}"
        )));
    }
    let n_stable = gen.n_stable.unwrap_or(n.div_ceil(2));
    if n_stable > n {
        return Err(Error::InvalidArgument(format!("n_stable={n_stable} exceeds n={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(gen.seed);

    let mu: Vec<f64> = (0..n)
        .map(|i| {
            if i < n_stable {
                rng.random_range(-1.0..=-0.1)
            } else {
                rng.random_range(0.1..=1.0)
            }
        })
        .collect();
    let v = linalg::random_orthogonal(&mut rng, n);
    let a = linalg::symmetrize(&(&v * Mat::from_diagonal(&DVector::from_vec(mu)) * v.transpose()));

    let system = SystemModel::new(
        a,
        Mat::identity(n, n),
        DVector::zeros(n),
        Mat::identity(n, n) * 100.0,
        gen.horizon,
    )?;

    let sensors = (0..m)
        .map(|_| {
            let g = linalg::gaussian_matrix(&mut rng, n, p);
            let h = g.qr().q().transpose();
            let u = linalg::random_orthogonal(&mut rng, p);
            let d: Vec<f64> = (0..p).map(|_| rng.random_range(1.0..=10.0)).collect();
            let r = linalg::symmetrize(&(&u * Mat::from_diagonal(&DVector::from_vec(d)) * u.transpose()));
            Sensor::new(h, r)
        })
        .collect::<Result<Vec<_>>>()?;

    Instance::new(
        system,
        sensors,
        ResourcePolytope::budget(m, gen.budget)?,
        WeightSpec::terminal_trace(n),
    )
}
