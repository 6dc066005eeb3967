//! Exact continuous-discrete Kalman filter along one realized arrival record.
//!
//! Between arrivals the covariance follows the Lyapunov flow; at an arrival
//! from sensor `j` it jumps by the Kalman update. The covariance path depends
//! only on arrival times and sensor identities, never on measurement values.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::model::{Instance, Schedule};
use crate::riccati::{self, Coordinates, Trajectory};

/// One measurement arrival.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub time: f64,
    pub sensor: usize,
}

/// Time-sorted arrivals of one realization. Simultaneous arrivals are kept
/// in ascending sensor order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ArrivalRecord {
    events: Vec<Arrival>,
}

impl ArrivalRecord {
    pub fn new(mut events: Vec<Arrival>) -> Result<Self> {
        if events.iter().any(|e| !(e.time.is_finite() && e.time >= 0.0)) {
            return Err(Error::Validation("arrival times must be finite and nonnegative".into()));
        }
        events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.sensor.cmp(&b.sensor)));
        Ok(Self { events })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn events(&self) -> &[Arrival] {
        &self.events
    }
    pub fn len(&self) -> usize {
        self.events.len()
    }
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Check that every event lies in `[0, horizon]` and names a known sensor.
    pub fn check(&self, horizon: f64, sensors: usize) -> Result<()> {
        for e in &self.events {
            if e.time > horizon * (1.0 + 1e-12) {
                return Err(Error::Validation(format!("arrival at t={} is past the horizon {horizon}", e.time)));
            }
            if e.sensor >= sensors {
                return Err(Error::Validation(format!(
                    "arrival names sensor {} but only {sensors} exist",
                    e.sensor
                )));
            }
        }
        Ok(())
    }
}

/// Conditional mean and covariance at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub t: f64,
    pub m: DVector<f64>,
    pub p: Mat,
}

/// Walks the uniform evaluation grid with `n_eval` intervals, stopping at
/// every arrival and every grid node. Arrivals at a node are applied before
/// the node is recorded.
#[allow(clippy::too_many_arguments)]
pub(crate) fn walk_events<S>(
    state: &mut S,
    arrivals: &ArrivalRecord,
    horizon: f64,
    n_eval: usize,
    substeps: usize,
    mut advance: impl FnMut(&mut S, f64, usize) -> Result<()>,
    mut jump: impl FnMut(&mut S, &Arrival) -> Result<()>,
    mut record: impl FnMut(&S, f64) -> Result<()>,
) -> Result<()> {
    if n_eval == 0 || substeps == 0 {
        return Err(Error::InvalidArgument("n_eval and substeps must be at least 1".into()));
    }
    let spacing = horizon / n_eval as f64;
    let steps_for = |dt: f64| ((substeps as f64 * dt / spacing) - 1e-9).ceil().max(1.0) as usize;
    let events = arrivals.events();
    let mut next = 0;
    let mut t = 0.0;
    for i in 0..=n_eval {
        let node = if i == n_eval { horizon } else { spacing * i as f64 };
        while next < events.len() && events[next].time <= node {
            let tau = events[next].time;
            if tau > t {
                advance(state, tau - t, steps_for(tau - t))?;
                t = tau;
            }
            jump(state, &events[next])?;
            next += 1;
        }
        if node > t {
            advance(state, node - t, steps_for(node - t))?;
            t = node;
        }
        record(state, node)?;
    }
    Ok(())
}

/// Covariance path of the exact filter sampled on `n_eval + 1` uniform nodes.
pub fn rollout_covariance(
    instance: &Instance,
    arrivals: &ArrivalRecord,
    n_eval: usize,
    substeps: usize,
) -> Result<Trajectory> {
    arrivals.check(instance.horizon(), instance.num_sensors())?;
    let (a, q) = (instance.system.a(), instance.system.q());
    let mut times = Vec::with_capacity(n_eval + 1);
    let mut values = Vec::with_capacity(n_eval + 1);
    let mut p = instance.system.p0().clone();
    walk_events(
        &mut p,
        arrivals,
        instance.horizon(),
        n_eval,
        substeps,
        |p, dt, steps| {
            *p = riccati::flow_cov(p, a, q, dt, steps)?;
            Ok(())
        },
        |p, e| {
            *p = riccati::jump_cov_indexed(p, &instance.sensors[e.sensor], e.sensor)?;
            Ok(())
        },
        |p, t| {
            times.push(t);
            values.push(p.clone());
            Ok(())
        },
    )?;
    Ok(Trajectory::from_parts(Coordinates::Covariance, times, values))
}

/// Information path `Y = P⁻¹` of the exact filter, propagated directly in
/// information coordinates.
pub fn rollout_information(
    instance: &Instance,
    arrivals: &ArrivalRecord,
    n_eval: usize,
    substeps: usize,
) -> Result<Trajectory> {
    arrivals.check(instance.horizon(), instance.num_sensors())?;
    let (a, q) = (instance.system.a(), instance.system.q());
    let mut times = Vec::with_capacity(n_eval + 1);
    let mut values = Vec::with_capacity(n_eval + 1);
    let mut y = linalg::spd_inverse(instance.system.p0(), "P0", Some(0.0))?;
    walk_events(
        &mut y,
        arrivals,
        instance.horizon(),
        n_eval,
        substeps,
        |y, dt, steps| {
            *y = riccati::flow_info(y, a, q, dt, steps)?;
            Ok(())
        },
        |y, e| {
            *y = riccati::jump_info(y, &instance.sensors[e.sensor])?;
            Ok(())
        },
        |y, t| {
            times.push(t);
            values.push(y.clone());
            Ok(())
        },
    )?;
    Ok(Trajectory::from_parts(Coordinates::Information, times, values))
}

/// Where the arrivals of a simulated realization come from.
#[derive(Debug, Clone, Copy)]
pub enum ArrivalSource<'a> {
    Fixed(&'a ArrivalRecord),
    /// Sampled from the schedule with a stream derived from the seed.
    Sampled(&'a Schedule),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub time: f64,
    pub sensor: usize,
    pub z: DVector<f64>,
}

/// Truth path, received measurements, and filter estimates on the
/// simulation grid.
#[derive(Debug, Clone)]
pub struct Realization {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub measurements: Vec<Measurement>,
    pub filter: Vec<FilterState>,
    pub arrivals: ArrivalRecord,
}

impl Realization {
    pub fn covariance_path(&self) -> Trajectory {
        Trajectory::from_parts(
            Coordinates::Covariance,
            self.times.clone(),
            self.filter.iter().map(|f| f.p.clone()).collect(),
        )
    }
}

struct SimState {
    x: DVector<f64>,
    m: DVector<f64>,
    p: Mat,
}

/// Euler–Maruyama truth simulation with the full Kalman filter running on
/// noisy measurements. Demo and consistency-check only: no bound or
/// optimizer depends on it.
pub fn simulate_realization(
    instance: &Instance,
    source: ArrivalSource<'_>,
    seed: u64,
    dt_sde: f64,
    substeps: usize,
) -> Result<Realization> {
    if !(dt_sde.is_finite() && dt_sde > 0.0) {
        return Err(Error::InvalidArgument(format!("dt_sde must be positive, got {dt_sde}")));
    }
    let horizon = instance.horizon();
    let arrivals = match source {
        ArrivalSource::Fixed(rec) => rec.clone(),
        ArrivalSource::Sampled(schedule) => {
            instance.check_schedule(schedule)?;
            crate::montecarlo::sample_arrivals(schedule, crate::montecarlo::child_seed(seed, u64::MAX))
        }
    };
    arrivals.check(horizon, instance.num_sensors())?;
    let n_steps = (horizon / dt_sde).round().max(1.0) as usize;

    let sys = &instance.system;
    let (a, q) = (sys.a(), sys.q());
    let n = sys.dim();
    let noise = sys.noise_factor();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let x0 = sys.m0() + linalg::psd_factor(sys.p0()) * normal(&mut rng, n);
    let mut state = SimState { x: x0, m: sys.m0().clone(), p: sys.p0().clone() };
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut filter = Vec::with_capacity(n_steps + 1);
    let mut measurements = Vec::with_capacity(arrivals.len());

    let rng = std::cell::RefCell::new(rng);
    walk_events(
        &mut state,
        &arrivals,
        horizon,
        n_steps,
        substeps,
        |s, dt, steps| {
            let xi = normal(&mut rng.borrow_mut(), n);
            s.x = &s.x + a * &s.x * dt + &noise * xi * dt.sqrt();
            s.m = flow_mean(&s.m, a, dt, steps);
            s.p = riccati::flow_cov(&s.p, a, q, dt, steps)?;
            Ok(())
        },
        |s, e| {
            let sensor = &instance.sensors[e.sensor];
            let h = sensor.h();
            let v = linalg::psd_factor(sensor.r()) * normal(&mut rng.borrow_mut(), sensor.outputs());
            let z = h * &s.x + v;
            let innov = linalg::symmetrize(&(h * &s.p * h.transpose() + sensor.r()));
            let chol = innov.cholesky().ok_or(Error::SingularInnovation { sensor: e.sensor })?;
            let gain = chol.solve(&(h * &s.p)).transpose();
            s.m = &s.m + gain * (&z - h * &s.m);
            s.p = riccati::jump_cov_indexed(&s.p, sensor, e.sensor)?;
            measurements.push(Measurement { time: e.time, sensor: e.sensor, z });
            Ok(())
        },
        |s, t| {
            times.push(t);
            states.push(s.x.clone());
            filter.push(FilterState { t, m: s.m.clone(), p: s.p.clone() });
            Ok(())
        },
    )?;

    Ok(Realization { times, states, measurements, filter, arrivals })
}

fn normal(rng: &mut ChaCha8Rng, k: usize) -> DVector<f64> {
    DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn flow_mean(m: &DVector<f64>, a: &Mat, dt: f64, steps: usize) -> DVector<f64> {
    let h = dt / steps as f64;
    let mut m = m.clone();
    for _ in 0..steps {
        let k1 = a * &m;
        let k2 = a * (&m + &k1 * (0.5 * h));
        let k3 = a * (&m + &k2 * (0.5 * h));
        let k4 = a * (&m + &k3 * h);
        m += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
    }
    m
}
