//! Timing of gradient assembly for the two surrogates at a common point.

use std::time::Instant;

use serde::Serialize;

use super::ShootingProblem;
use crate::error::{Error, Result};
use crate::model::{Instance, Schedule};
use crate::surrogate::SurrogateKind;

#[derive(Debug, Clone, Serialize)]
pub struct AssemblyBenchmark {
    pub n: usize,
    pub m: usize,
    pub intervals: usize,
    pub substeps: usize,
    pub repetitions: usize,
    /// Wall-clock of one objective-plus-gradient evaluation per repetition.
    pub info_s: Vec<f64>,
    pub cov_s: Vec<f64>,
    /// `cov_s[r] / info_s[r]`.
    pub ratios: Vec<f64>,
    pub median_info_s: f64,
    pub median_cov_s: f64,
    pub median_ratio: f64,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Times `repetitions` interleaved gradient evaluations of both surrogates
/// after `warmup` untimed ones, on the calling thread.
pub fn benchmark_assembly(
    instance: &Instance,
    schedule: &Schedule,
    substeps: usize,
    repetitions: usize,
    warmup: usize,
) -> Result<AssemblyBenchmark> {
    if repetitions == 0 {
        return Err(Error::InvalidArgument("repetitions must be at least 1".into()));
    }
    instance.check_schedule(schedule)?;
    let info = ShootingProblem::new(instance, schedule.intervals(), substeps, SurrogateKind::Info)?;
    let cov = ShootingProblem::new(instance, schedule.intervals(), substeps, SurrogateKind::Cov)?;
    let rates = schedule.rates();
    for _ in 0..warmup {
        info.evaluate(rates)?;
        cov.evaluate(rates)?;
    }
    let time = |p: &ShootingProblem<'_>| -> Result<f64> {
        let start = Instant::now();
        std::hint::black_box(p.evaluate(std::hint::black_box(rates))?);
        Ok(start.elapsed().as_secs_f64())
    };
    let mut info_s = Vec::with_capacity(repetitions);
    let mut cov_s = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        info_s.push(time(&info)?);
        cov_s.push(time(&cov)?);
    }
    let ratios: Vec<f64> = cov_s.iter().zip(&info_s).map(|(c, i)| c / i).collect();
    Ok(AssemblyBenchmark {
        n: instance.dim(),
        m: instance.num_sensors(),
        intervals: schedule.intervals(),
        substeps,
        repetitions,
        median_info_s: median(&info_s),
        median_cov_s: median(&cov_s),
        median_ratio: median(&ratios),
        info_s,
        cov_s,
        ratios,
    })
}
