//! JSON interchange for instances, schedules, arrival records and reports.
//!
//! Matrices are nested arrays of rows; sensor indices are 0-based.

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::cdkf::{Arrival, ArrivalRecord};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{Instance, ResourcePolytope, Schedule, Sensor, SystemModel, WeightSpec};
use crate::optimize::{SolveReport, Termination, Timings};

type Rows = Vec<Vec<f64>>;

pub fn mat_from_rows(rows: &Rows, what: &str) -> Result<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(Error::Validation(format!("{what} is empty")));
    }
    if let Some(bad) = rows.iter().position(|row| row.len() != c) {
        return Err(Error::DimensionMismatch {
            what: format!("{what} row {bad}"),
            expected: c.to_string(),
            got: rows[bad].len().to_string(),
        });
    }
    Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn mat_to_rows(m: &Mat) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[allow(non_snake_case)]
struct SensorFile {
    H: Rows,
    R: Rows,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[allow(non_snake_case)]
struct ConstraintFile {
    C: Rows,
    b: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[allow(non_snake_case)]
struct WeightFile {
    #[serde(default)]
    W_stages: Option<Vec<Rows>>,
    #[serde(default)]
    WT: Option<Rows>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[allow(non_snake_case)]
struct InstanceFile {
    n: usize,
    T: f64,
    A: Rows,
    Q: Rows,
    P0: Rows,
    #[serde(default)]
    m0: Option<Vec<f64>>,
    sensors: Vec<SensorFile>,
    constraints: ConstraintFile,
    #[serde(default)]
    weights: Option<WeightFile>,
}

pub fn instance_from_json(text: &str) -> Result<Instance> {
    let f: InstanceFile = serde_json::from_str(text)?;
    let a = mat_from_rows(&f.A, "A")?;
    if a.nrows() != f.n {
        return Err(Error::DimensionMismatch { what: "A".into(), expected: f.n.to_string(), got: a.nrows().to_string() });
    }
    let m0 = DVector::from_vec(f.m0.unwrap_or_else(|| vec![0.0; f.n]));
    let system = SystemModel::new(a, mat_from_rows(&f.Q, "Q")?, m0, mat_from_rows(&f.P0, "P0")?, f.T)?;
    let sensors = f
        .sensors
        .iter()
        .enumerate()
        .map(|(j, s)| Sensor::new(mat_from_rows(&s.H, &format!("H[{j}]"))?, mat_from_rows(&s.R, &format!("R[{j}]"))?))
        .collect::<Result<Vec<_>>>()?;
    let polytope = ResourcePolytope::new(mat_from_rows(&f.constraints.C, "C")?, DVector::from_vec(f.constraints.b))?;
    let weights = match f.weights {
        None => WeightSpec::terminal_trace(f.n),
        Some(w) => {
            let stages = w
                .W_stages
                .map(|ws| ws.iter().map(|m| mat_from_rows(m, "W_stages")).collect::<Result<Vec<_>>>())
                .transpose()?;
            let terminal = match w.WT {
                Some(t) => mat_from_rows(&t, "WT")?,
                None => Mat::zeros(f.n, f.n),
            };
            WeightSpec::new(stages, terminal)?
        }
    };
    Instance::new(system, sensors, polytope, weights)
}

pub fn instance_to_json(instance: &Instance) -> Result<String> {
    let sys = &instance.system;
    let f = InstanceFile {
        n: instance.dim(),
        T: instance.horizon(),
        A: mat_to_rows(sys.a()),
        Q: mat_to_rows(sys.q()),
        P0: mat_to_rows(sys.p0()),
        m0: Some(sys.m0().iter().copied().collect()),
        sensors: instance
            .sensors
            .iter()
            .map(|s| SensorFile { H: mat_to_rows(s.h()), R: mat_to_rows(s.r()) })
            .collect(),
        constraints: ConstraintFile {
            C: mat_to_rows(instance.polytope.c()),
            b: instance.polytope.b().iter().copied().collect(),
        },
        weights: Some(WeightFile {
            W_stages: instance.weights.stages().map(|ws| ws.iter().map(mat_to_rows).collect()),
            WT: Some(mat_to_rows(instance.weights.terminal())),
        }),
    };
    Ok(serde_json::to_string_pretty(&f)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[allow(non_snake_case)]
struct ScheduleFile {
    T: f64,
    N: usize,
    rates: Rows,
}

pub fn schedule_from_json(text: &str) -> Result<Schedule> {
    let f: ScheduleFile = serde_json::from_str(text)?;
    let rates = mat_from_rows(&f.rates, "rates")?;
    if rates.nrows() != f.N {
        return Err(Error::DimensionMismatch {
            what: "schedule rows".into(),
            expected: f.N.to_string(),
            got: rates.nrows().to_string(),
        });
    }
    Schedule::new(f.T, rates)
}

fn schedule_file(s: &Schedule) -> ScheduleFile {
    ScheduleFile { T: s.horizon(), N: s.intervals(), rates: mat_to_rows(s.rates()) }
}

pub fn schedule_to_json(s: &Schedule) -> Result<String> {
    Ok(serde_json::to_string_pretty(&schedule_file(s))?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArrivalFile {
    events: Vec<(f64, usize)>,
}

pub fn arrivals_from_json(text: &str) -> Result<ArrivalRecord> {
    let f: ArrivalFile = serde_json::from_str(text)?;
    ArrivalRecord::new(f.events.into_iter().map(|(time, sensor)| Arrival { time, sensor }).collect())
}

pub fn arrivals_to_json(rec: &ArrivalRecord) -> Result<String> {
    let f = ArrivalFile { events: rec.events().iter().map(|a| (a.time, a.sensor)).collect() };
    Ok(serde_json::to_string(&f)?)
}

#[derive(Serialize)]
struct SolveReportFile<'a> {
    kind: &'a str,
    objective: f64,
    normalized_objective: f64,
    iterations: usize,
    projected_gradient_norm: f64,
    termination: Termination,
    history: &'a [f64],
    timings: Timings,
    schedule: ScheduleFile,
}

/// Solve report with the objective normalized by `tr(P0)`.
pub fn solve_report_to_json(report: &SolveReport, kind: &str, trace_p0: f64) -> Result<String> {
    let f = SolveReportFile {
        kind,
        objective: report.objective,
        normalized_objective: report.objective / trace_p0,
        iterations: report.iterations,
        projected_gradient_norm: report.projected_gradient_norm,
        termination: report.termination,
        history: &report.history,
        timings: report.timings,
        schedule: schedule_file(&report.schedule),
    };
    Ok(serde_json::to_string_pretty(&f)?)
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

pub fn read_to_string(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path)?)
}

pub fn read_instance(path: &Path) -> Result<Instance> {
    instance_from_json(&read_to_string(path)?)
}

pub fn read_schedule(path: &Path) -> Result<Schedule> {
    schedule_from_json(&read_to_string(path)?)
}

pub fn write_string(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(fs::write(path, text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{random_instance, GenSpec};

    #[test]
    fn instance_round_trip() {
        let inst = random_instance(&GenSpec::new(3, 4, 2, 1)).unwrap();
        let back = instance_from_json(&instance_to_json(&inst).unwrap()).unwrap();
        assert_eq!(inst, back);
    }

    #[test]
    fn minimal_instance_defaults() {
        let text = r#"{"n":1,"T":1.0,"A":[[0]],"Q":[[0]],"P0":[[1]],
            "sensors":[{"H":[[1]],"R":[[1]]}],"constraints":{"C":[[1]],"b":[5]}}"#;
        let inst = instance_from_json(text).unwrap();
        assert_eq!(inst.weights.terminal()[(0, 0)], 1.0);
        assert_eq!(inst.system.m0()[0], 0.0);
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(instance_from_json("{"), Err(Error::Json(_))));
        let ragged = r#"{"T":1,"N":2,"rates":[[1,2],[3]]}"#;
        assert!(matches!(schedule_from_json(ragged), Err(Error::DimensionMismatch { .. })));
        let wrong_n = r#"{"T":1,"N":3,"rates":[[1],[3]]}"#;
        assert!(schedule_from_json(wrong_n).is_err());
    }

    #[test]
    fn schedule_and_arrivals_round_trip() {
        let s = Schedule::new(2.0, Mat::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 2.0])).unwrap();
        assert_eq!(schedule_from_json(&schedule_to_json(&s).unwrap()).unwrap(), s);
        let rec = ArrivalRecord::new(vec![Arrival { time: 0.7, sensor: 1 }, Arrival { time: 0.2, sensor: 0 }]).unwrap();
        let back = arrivals_from_json(&arrivals_to_json(&rec).unwrap()).unwrap();
        assert_eq!(back.events(), rec.events());
    }
}
