//! Poisson arrival sampling and Monte Carlo evaluation of the exact filter.
//!
//! Seeding: run `r` of a study with master seed `s` uses
//! `child_seed(s, r)` (a SplitMix64 mix of both), and every arrival record
//! is drawn from `ChaCha8Rng::seed_from_u64` of that child seed. Results are
//! collected in run order and reduced with pairwise summation, so they do
//! not depend on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cdkf::{self, Arrival, ArrivalRecord};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::model::{Instance, Schedule};
use crate::riccati::{self, Coordinates, Trajectory};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th independent stream under `master`.
pub fn child_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(index.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

/// Draws one arrival record: for every sensor and interval a Poisson count
/// with mean `λ_kj Δ`, each arrival placed uniformly on the interval.
pub fn sample_arrivals(schedule: &Schedule, seed: u64) -> ArrivalRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = schedule.step();
    let mut events = Vec::new();
    for j in 0..schedule.sensors() {
        for k in 0..schedule.intervals() {
            let mean = schedule.rate(k, j) * dt;
            if mean <= 0.0 {
                continue;
            }
            let count = Poisson::new(mean).expect("positive finite mean").sample(&mut rng) as usize;
            let start = dt * k as f64;
            let end = if k + 1 == schedule.intervals() { schedule.horizon() } else { dt * (k + 1) as f64 };
            let within = Uniform::new(start, end).expect("non-empty interval");
            events.extend((0..count).map(|_| Arrival { time: within.sample(&mut rng), sensor: j }));
        }
    }
    ArrivalRecord::new(events).expect("sampled times are finite")
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        n if n <= 8 => xs.iter().sum(),
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

fn pairwise_sum_mat(xs: &[&Mat]) -> Mat {
    match xs.len() {
        1 => xs[0].clone(),
        n => pairwise_sum_mat(&xs[..n / 2]) + pairwise_sum_mat(&xs[n / 2..]),
    }
}

/// Sample mean, sample standard deviation and standard error.
fn moments(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    // shifted by the first sample so that constant data gives exact zeros
    let x0 = xs.first().copied().unwrap_or(0.0);
    let d: Vec<f64> = xs.iter().map(|x| x - x0).collect();
    let mean = x0 + pairwise_sum(&d) / n;
    if xs.len() < 2 {
        return (mean, 0.0, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let std = (pairwise_sum(&sq) / (n - 1.0)).sqrt();
    (mean, std, std / n.sqrt())
}

/// Monte Carlo estimate of the expected pathwise cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
    pub n_runs: usize,
    #[serde(rename = "costs")]
    pub per_run_costs: Vec<f64>,
}

impl McEstimate {
    pub fn from_costs(per_run_costs: Vec<f64>) -> Self {
        let (mean, std, stderr) = moments(&per_run_costs);
        Self { mean, std, stderr, n_runs: per_run_costs.len(), per_run_costs }
    }
}

/// Monte Carlo settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_runs: usize,
    /// Evaluation grid intervals over `[0, T]`.
    pub n_eval: usize,
    /// Integration substeps per evaluation interval.
    pub substeps: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { n_runs: 100, n_eval: 300, substeps: 4, seed: 0, threads: None }
    }
}

impl McConfig {
    fn check(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(Error::InvalidArgument("n_runs must be at least 1".into()));
        }
        if self.n_eval == 0 || self.substeps == 0 {
            return Err(Error::InvalidArgument("n_eval and substeps must be at least 1".into()));
        }
        Ok(())
    }
}

fn run_all<T, F>(cfg: &McConfig, run: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let job = || (0..cfg.n_runs).into_par_iter().map(&run).collect::<Result<Vec<T>>>();
    match cfg.threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(job),
        None => job(),
    }
}

fn realization(schedule: &Schedule, cfg: &McConfig, run: usize) -> ArrivalRecord {
    sample_arrivals(schedule, child_seed(cfg.seed, run as u64))
}

/// Expected pathwise cost of the exact filter under `schedule`.
pub fn mc_objective(instance: &Instance, schedule: &Schedule, cfg: &McConfig) -> Result<McEstimate> {
    cfg.check()?;
    instance.check_schedule(schedule)?;
    let costs = run_all(cfg, |r| {
        let arrivals = realization(schedule, cfg, r);
        let traj = cdkf::rollout_covariance(instance, &arrivals, cfg.n_eval, cfg.substeps)?;
        riccati::pathwise_cost(&traj, &instance.weights, instance.horizon())
    })?;
    Ok(McEstimate::from_costs(costs))
}

/// Nodewise sample means of the covariance and information paths.
#[derive(Debug, Clone)]
pub struct MeanTrajectories {
    /// Sample mean of `P(t)`.
    pub p_mean: Trajectory,
    /// Sample mean of `Y(t) = P(t)⁻¹` over the same realizations.
    pub y_mean: Trajectory,
    /// Standard error of `tr P(t)` per node.
    pub p_stderr: Vec<f64>,
    /// Standard error of `tr Y(t)` per node.
    pub y_stderr: Vec<f64>,
    pub n_runs: usize,
}

pub fn mc_mean_trajectories(instance: &Instance, schedule: &Schedule, cfg: &McConfig) -> Result<MeanTrajectories> {
    cfg.check()?;
    instance.check_schedule(schedule)?;
    let paths = run_all(cfg, |r| {
        let arrivals = realization(schedule, cfg, r);
        let p = cdkf::rollout_covariance(instance, &arrivals, cfg.n_eval, cfg.substeps)?;
        let y = riccati::invert_trajectory(&p)?;
        Ok((p, y))
    })?;
    let times = paths[0].0.times().to_vec();
    let runs = paths.len() as f64;
    let nodes = times.len();
    let mut p_mean = Vec::with_capacity(nodes);
    let mut y_mean = Vec::with_capacity(nodes);
    let mut p_stderr = Vec::with_capacity(nodes);
    let mut y_stderr = Vec::with_capacity(nodes);
    for i in 0..nodes {
        let ps: Vec<&Mat> = paths.iter().map(|(p, _)| &p.values()[i]).collect();
        let ys: Vec<&Mat> = paths.iter().map(|(_, y)| &y.values()[i]).collect();
        p_mean.push(linalg::symmetrize(&(pairwise_sum_mat(&ps) / runs)));
        y_mean.push(linalg::symmetrize(&(pairwise_sum_mat(&ys) / runs)));
        p_stderr.push(moments(&ps.iter().map(|m| m.trace()).collect::<Vec<_>>()).2);
        y_stderr.push(moments(&ys.iter().map(|m| m.trace()).collect::<Vec<_>>()).2);
    }
    Ok(MeanTrajectories {
        p_mean: Trajectory::from_parts(Coordinates::Covariance, times.clone(), p_mean),
        y_mean: Trajectory::from_parts(Coordinates::Information, times, y_mean),
        p_stderr,
        y_stderr,
        n_runs: paths.len(),
    })
}
