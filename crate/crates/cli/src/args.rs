//! Shared flag groups and input loading.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::Args;
use nalgebra::DVector;

use cdkf_sched::io;
use cdkf_sched::linalg::Mat;
use cdkf_sched::model::{random_instance, GenSpec};
use cdkf_sched::montecarlo::McConfig;
use cdkf_sched::{Instance, ResourcePolytope, Schedule, Sensor, SystemModel, WeightSpec};

use crate::Failure;

/// `n=5,M=30,p=1,seed=7`; unspecified keys take the reference values.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomSpec(pub GenSpec);

impl Default for RandomSpec {
    fn default() -> Self {
        Self(GenSpec::new(5, 30, 1, 0))
    }
}

impl FromStr for RandomSpec {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut g = Self::default().0;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part.split_once('=').ok_or_else(|| format!("expected key=value, got {part:?}"))?;
            let bad = |e: &dyn fmt::Display| format!("bad value for {key}: {e}");
            match key.trim() {
                "n" => g.n = value.parse().map_err(|e| bad(&e))?,
                "M" | "m" => g.m = value.parse().map_err(|e| bad(&e))?,
                "p" => g.p = value.parse().map_err(|e| bad(&e))?,
                "seed" => g.seed = value.parse().map_err(|e| bad(&e))?,
                "stable" => g.n_stable = Some(value.parse().map_err(|e| bad(&e))?),
                "T" => g.horizon = value.parse().map_err(|e| bad(&e))?,
                "budget" => g.budget = value.parse().map_err(|e| bad(&e))?,
                other => return Err(format!("unknown key {other:?} (expected n, M, p, seed, stable, T, budget)")),
            }
        }
        Ok(Self(g))
    }
}

impl fmt::Display for RandomSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = &self.0;
        write!(f, "n={},M={},p={},seed={},T={},budget={}", g.n, g.m, g.p, g.seed, g.horizon, g.budget)?;
        if let Some(s) = g.n_stable {
            write!(f, ",stable={s}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Args)]
pub struct InstanceArgs {
    /// Instance JSON file.
    #[arg(long, conflicts_with = "random")]
    pub instance: Option<PathBuf>,
    /// Random instance, e.g. "n=5,M=30,p=1,seed=7".
    #[arg(long)]
    pub random: Option<RandomSpec>,
    /// Replace the constraints with the single budget row `1ᵀλ ≤ budget`.
    #[arg(long)]
    pub budget: Option<f64>,
    /// Override the horizon.
    #[arg(long = "T")]
    pub horizon: Option<f64>,
}

impl InstanceArgs {
    pub fn load(&self) -> Result<Instance> {
        let base = match (&self.instance, &self.random) {
            (Some(path), _) => read_input(path, io::read_instance)?,
            (None, Some(spec)) => random_instance(&spec.0)?,
            (None, None) => return Err(Failure::Usage("either --instance or --random is required".into()).into()),
        };
        let mut inst = base;
        if let Some(t) = self.horizon {
            let s = &inst.system;
            let system = SystemModel::new(s.a().clone(), s.q().clone(), s.m0().clone(), s.p0().clone(), t)
                .map_err(|e| Failure::Usage(format!("--T: {e}")))?;
            inst = Instance::new(system, inst.sensors.clone(), inst.polytope.clone(), inst.weights.clone())?;
        }
        if let Some(b) = self.budget {
            let polytope = ResourcePolytope::budget(inst.num_sensors(), b).map_err(|e| Failure::Usage(format!("--budget: {e}")))?;
            inst = inst.with_polytope(polytope)?;
        }
        Ok(inst)
    }
}

/// Reads an input file; unreadable or malformed inputs are usage errors.
pub fn read_input<T>(path: &Path, read: impl Fn(&Path) -> cdkf_sched::Result<T>) -> Result<T> {
    read(path).map_err(|e| match e {
        cdkf_sched::Error::Json(_) | cdkf_sched::Error::Io(_) => {
            anyhow::Error::new(Failure::Usage(format!("{}: {e}", path.display())))
        }
        other => anyhow::Error::new(other).context(format!("invalid input {}", path.display())),
    })
}

pub fn load_schedule(path: &Path, instance: &Instance) -> Result<Schedule> {
    let s = read_input(path, io::read_schedule)?;
    if s.sensors() != instance.num_sensors() || (s.horizon() - instance.horizon()).abs() > 1e-12 * instance.horizon() {
        return Err(Failure::Usage(format!(
            "schedule {} ({} sensors, T={}) does not match the instance ({} sensors, T={})",
            path.display(),
            s.sensors(),
            s.horizon(),
            instance.num_sensors(),
            instance.horizon()
        ))
        .into());
    }
    Ok(s)
}

/// `a=0, q=0, h=1, r=1, p0=1, T=1` with `λ ≤ 5` and cost `P(T)`.
pub fn scalar_instance() -> Instance {
    let s = |v: f64| Mat::from_element(1, 1, v);
    Instance::new(
        SystemModel::new(s(0.0), s(0.0), DVector::zeros(1), s(1.0), 1.0).expect("valid scalar system"),
        vec![Sensor::new(s(1.0), s(1.0)).expect("valid scalar sensor")],
        ResourcePolytope::budget(1, 5.0).expect("valid budget"),
        WeightSpec::terminal_trace(1),
    )
    .expect("valid scalar instance")
}

#[derive(Debug, Clone, Args)]
pub struct McArgs {
    /// Monte Carlo runs.
    #[arg(long, default_value_t = 100)]
    pub runs: usize,
    /// Evaluation grid intervals over [0, T].
    #[arg(long = "n-eval", default_value_t = 300)]
    pub n_eval: usize,
    /// Integration substeps per evaluation interval for the rollouts.
    #[arg(long = "mc-substeps", default_value_t = 4)]
    pub mc_substeps: usize,
    /// Master seed for the arrival streams.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for Monte Carlo runs.
    #[arg(long)]
    pub jobs: Option<usize>,
}

impl McArgs {
    pub fn config(&self) -> McConfig {
        McConfig { n_runs: self.runs, n_eval: self.n_eval, substeps: self.mc_substeps, seed: self.seed, threads: self.jobs }
    }
}

/// Writes to `path`, or to stdout when absent.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => io::write_string(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_spec_parsing() {
        let s: RandomSpec = "n=5,M=30,p=1,seed=7".parse().unwrap();
        assert_eq!((s.0.n, s.0.m, s.0.p, s.0.seed), (5, 30, 1, 7));
        let t: RandomSpec = s.to_string().parse().unwrap();
        assert_eq!(s, t);
        assert!("n=5,Q=3".parse::<RandomSpec>().is_err());
        assert!("n=x".parse::<RandomSpec>().is_err());
        assert!("n5".parse::<RandomSpec>().is_err());
    }
}
