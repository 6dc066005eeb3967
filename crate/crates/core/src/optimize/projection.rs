//! Euclidean projection onto the per-stage admissible set
//! `{x : Cx ≤ b, x ≥ 0}`.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::ResourcePolytope;

/// Dykstra convergence tolerance on the per-sweep change and the residual.
pub const DYKSTRA_TOL: f64 = 1e-10;
pub const DYKSTRA_MAX_SWEEPS: usize = 10_000;

/// Projects one stage's rate vector onto the admissible set.
///
/// A single all-ones budget row uses the exact sort-based simplex
/// projection; every other polytope goes through Dykstra's alternating
/// projections over the halfspaces and the nonnegative orthant.
pub fn project_stage(v: &[f64], polytope: &ResourcePolytope) -> Result<Vec<f64>> {
    if v.len() != polytope.sensors() {
        return Err(Error::DimensionMismatch {
            what: "stage vector".into(),
            expected: polytope.sensors().to_string(),
            got: v.len().to_string(),
        });
    }
    if polytope.is_simplex_budget() {
        Ok(project_budget(v, polytope.b()[0]))
    } else {
        dykstra(v, polytope)
    }
}

/// Projects every row of an `N × M` rate matrix.
pub fn project_rates(rates: &Mat, polytope: &ResourcePolytope) -> Result<Mat> {
    let mut out = rates.clone();
    for k in 0..rates.nrows() {
        let row: Vec<f64> = rates.row(k).iter().copied().collect();
        for (j, v) in project_stage(&row, polytope)?.into_iter().enumerate() {
            out[(k, j)] = v;
        }
    }
    Ok(out)
}

/// Projection onto `{x ≥ 0, 1ᵀx ≤ budget}`.
fn project_budget(v: &[f64], budget: f64) -> Vec<f64> {
    let clipped: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= budget {
        return clipped;
    }
    if budget <= 0.0 {
        return vec![0.0; v.len()];
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - budget) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

fn dykstra(v: &[f64], polytope: &ResourcePolytope) -> Result<Vec<f64>> {
    let (c, b) = (polytope.c(), polytope.b());
    let rows = c.nrows();
    let m = v.len();
    let norms: Vec<f64> = (0..rows).map(|i| c.row(i).norm_squared()).collect();
    let mut x = v.to_vec();
    let mut incr = vec![vec![0.0; m]; rows + 1];
    let mut y = vec![0.0; m];
    let mut residual = f64::INFINITY;
    for _ in 0..DYKSTRA_MAX_SWEEPS {
        let prev = x.clone();
        for i in 0..=rows {
            for j in 0..m {
                y[j] = x[j] + incr[i][j];
            }
            if i < rows {
                let excess: f64 = (0..m).map(|j| c[(i, j)] * y[j]).sum::<f64>() - b[i];
                let shift = if excess > 0.0 { excess / norms[i] } else { 0.0 };
                for j in 0..m {
                    x[j] = y[j] - shift * c[(i, j)];
                }
            } else {
                for j in 0..m {
                    x[j] = y[j].max(0.0);
                }
            }
            for j in 0..m {
                incr[i][j] = y[j] - x[j];
            }
        }
        let change = prev.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let violation = (0..rows)
            .map(|i| (0..m).map(|j| c[(i, j)] * x[j]).sum::<f64>() - b[i])
            .fold(0.0f64, f64::max);
        residual = change.max(violation);
        if residual <= DYKSTRA_TOL {
            return Ok(x);
        }
    }
    Err(Error::ProjectionStalled { iterations: DYKSTRA_MAX_SWEEPS, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn budget(m: usize, b: f64) -> ResourcePolytope {
        ResourcePolytope::budget(m, b).unwrap()
    }

    /// Brute-force QP oracle: enumerate active sets of the budget simplex.
    fn brute_force_budget(v: &[f64], b: f64) -> Vec<f64> {
        let m = v.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 0u32..(1 << m) {
            for tight in [false, true] {
                let free: Vec<usize> = (0..m).filter(|j| mask & (1 << j) != 0).collect();
                let mut x = vec![0.0; m];
                if tight {
                    if free.is_empty() {
                        continue;
                    }
                    let theta = (free.iter().map(|&j| v[j]).sum::<f64>() - b) / free.len() as f64;
                    for &j in &free {
                        x[j] = v[j] - theta;
                    }
                } else {
                    for &j in &free {
                        x[j] = v[j];
                    }
                }
                if x.iter().any(|&xi| xi < -1e-12) || x.iter().sum::<f64>() > b + 1e-12 {
                    continue;
                }
                let d: f64 = x.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
                if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                    best = Some((d, x));
                }
            }
        }
        best.unwrap().1
    }

    #[test]
    fn budget_projection_example() {
        let x = project_stage(&[4.0, 4.0, 0.0], &budget(3, 5.0)).unwrap();
        assert_eq!(x, vec![2.5, 2.5, 0.0]);
        assert_eq!(brute_force_budget(&[4.0, 4.0, 0.0], 5.0), vec![2.5, 2.5, 0.0]);
    }

    #[test]
    fn feasible_point_is_fixed() {
        let v = [1.0, 0.5, 2.0];
        assert_eq!(project_stage(&v, &budget(3, 5.0)).unwrap(), v.to_vec());
        let box3 = ResourcePolytope::new(Mat::identity(3, 3), DVector::from_element(3, 5.0)).unwrap();
        assert_eq!(project_stage(&v, &box3).unwrap(), v.to_vec());
    }

    #[test]
    fn box_clipping() {
        let p = ResourcePolytope::new(Mat::identity(2, 2), DVector::from_element(2, 5.0)).unwrap();
        let x = project_stage(&[-1.0, 6.0], &p).unwrap();
        assert!((x[0] - 0.0).abs() < 1e-10 && (x[1] - 5.0).abs() < 1e-10);
    }

    #[test]
    fn dykstra_agrees_with_simplex_rule() {
        // same set written with a scaled row to force the general path
        let general = ResourcePolytope::new(Mat::from_element(1, 4, 2.0), DVector::from_element(1, 10.0)).unwrap();
        for v in [[3.0, 4.0, -1.0, 2.0], [0.1, 0.2, 0.3, 0.4], [9.0, -3.0, 0.0, 1.0]] {
            let a = project_stage(&v, &general).unwrap();
            let b = project_stage(&v, &budget(4, 5.0)).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-8, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn overlapping_constraints() {
        let c = Mat::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
        let p = ResourcePolytope::new(c.clone(), DVector::from_vec(vec![1.0, 1.0])).unwrap();
        let x = project_stage(&[2.0, 2.0, 2.0], &p).unwrap();
        let cx = &c * DVector::from_vec(x.clone());
        assert!(cx.iter().all(|&v| v <= 1.0 + 1e-9));
        assert!(x.iter().all(|&v| v >= 0.0));
        // optimality: x = (1, 0, 1) by symmetry and KKT
        assert!((x[0] - 1.0).abs() < 1e-6 && x[1].abs() < 1e-6 && (x[2] - 1.0).abs() < 1e-6, "{x:?}");
    }

    proptest! {
        #[test]
        fn budget_projection_matches_brute_force(v in proptest::collection::vec(-3.0f64..6.0, 1..6), b in 0.5f64..6.0) {
            let x = project_stage(&v, &budget(v.len(), b)).unwrap();
            let oracle = brute_force_budget(&v, b);
            for (a, o) in x.iter().zip(&oracle) {
                prop_assert!((a - o).abs() < 1e-9);
            }
        }

        #[test]
        fn projection_is_idempotent_and_nonexpansive(
            u in proptest::collection::vec(-3.0f64..6.0, 3),
            v in proptest::collection::vec(-3.0f64..6.0, 3),
            general in any::<bool>(),
        ) {
            let p = if general {
                ResourcePolytope::new(
                    Mat::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, 2.0]),
                    DVector::from_vec(vec![2.0, 3.0]),
                ).unwrap()
            } else {
                budget(3, 4.0)
            };
            let pu = project_stage(&u, &p).unwrap();
            let pv = project_stage(&v, &p).unwrap();
            let ppu = project_stage(&pu, &p).unwrap();
            for (a, b) in pu.iter().zip(&ppu) {
                prop_assert!((a - b).abs() < 1e-8);
            }
            let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            prop_assert!(d(&pu, &pv) <= d(&u, &v) + 1e-8);
        }
    }
}
