//! Acceptance criteria 1–10. Each test prints one `PASS`/`FAIL` line to
//! stderr (bypassing output capture) before asserting.

use std::io::Write;
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use cdkf_sched::bounds;
use cdkf_sched::linalg::{self, Mat};
use cdkf_sched::model::{random_instance, validate_schedule, GenSpec};
use cdkf_sched::montecarlo::{self, child_seed, sample_arrivals, McConfig};
use cdkf_sched::optimize::{self, Initial, ShootingProblem, SolveOptions};
use cdkf_sched::riccati;
use cdkf_sched::surrogate;
use cdkf_sched::{Instance, ResourcePolytope, Schedule, Sensor, SurrogateKind, SystemModel, WeightSpec};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, DiscreteCDF, Poisson};

static SERIAL: Mutex<()> = Mutex::new(());

fn lock() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: u32, pass: bool, elapsed: Duration, cap: Duration, detail: &str) {
    let pass = pass && elapsed <= cap;
    let line = format!(
        "[criterion {id:>2}] {} ({:.1} s, cap {} s) {detail}\n",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        cap.as_secs()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {id} failed: {detail}");
}

fn s(v: f64) -> Mat {
    Mat::from_element(1, 1, v)
}

fn scalar_instance() -> Instance {
    Instance::new(
        SystemModel::new(s(0.0), s(0.0), DVector::zeros(1), s(1.0), 1.0).unwrap(),
        vec![Sensor::new(s(1.0), s(1.0)).unwrap()],
        ResourcePolytope::budget(1, 5.0).unwrap(),
        WeightSpec::terminal_trace(1),
    )
    .unwrap()
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Mat {
    let u = linalg::random_orthogonal(rng, n);
    let d: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    linalg::symmetrize(&(&u * Mat::from_diagonal(&DVector::from_vec(d)) * u.transpose()))
}

/// Random feasible schedule: each stage is a random point of the budget simplex.
fn random_feasible(inst: &Instance, intervals: usize, rng: &mut ChaCha8Rng) -> Schedule {
    let m = inst.num_sensors();
    let b = inst.polytope.b()[0];
    let rates = Mat::from_fn(intervals, m, |_, _| rng.random_range(0.0..1.0));
    let rates = Mat::from_fn(intervals, m, |k, j| b * rng.random_range(0.3..1.0) * rates[(k, j)] / rates.row(k).sum());
    Schedule::new(inst.horizon(), rates).unwrap()
}

fn reference_instance() -> Instance {
    random_instance(&GenSpec::new(5, 30, 1, 0)).unwrap()
}

fn reference_solve(inst: &Instance) -> optimize::SolveReport {
    let p = ShootingProblem::new(inst, 30, optimize::DEFAULT_SUBSTEPS, SurrogateKind::Info).unwrap();
    optimize::solve(&p, Initial::Centered, &SolveOptions::default()).unwrap()
}

fn reference_mc(seed: u64) -> McConfig {
    McConfig { n_runs: 100, n_eval: 300, substeps: 4, seed, threads: None }
}

#[test]
fn criterion_01_jump_consistency() {
    let _g = lock();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let n = 1 + i % 8;
        let p = rng.random_range(1..=n);
        let cov = random_spd(&mut rng, n, 0.1, 10.0);
        let h = linalg::gaussian_matrix(&mut rng, p, n);
        let r = random_spd(&mut rng, p, 0.5, 5.0);
        let sensor = Sensor::new(h, r).unwrap();
        let jumped = riccati::jump_cov(&cov, &sensor).unwrap();
        let lhs = jumped.try_inverse().unwrap();
        let rhs = cov.try_inverse().unwrap() + sensor.info();
        worst = worst.max(linalg::rel_err(&lhs, &rhs));
    }
    report(1, worst <= 1e-8, start.elapsed(), Duration::from_secs(5), &format!("max relative error {worst:.2e} over 200 pairs"));
}

/// Direct RK4 of `Ṗ = AP + PAᵀ + Q − P U_k P` with a fine step.
fn direct_p_info(inst: &Instance, sched: &Schedule, substeps: usize) -> Vec<Mat> {
    let (a, q) = (inst.system.a(), inst.system.q());
    let f = |p: &Mat, u: &Mat| a * p + p * a.transpose() + q - p * u * p;
    let h = sched.step() / substeps as f64;
    let mut p = inst.system.p0().clone();
    let mut nodes = vec![p.clone()];
    for k in 0..sched.intervals() {
        let mut u = Mat::zeros(inst.dim(), inst.dim());
        for (j, sensor) in inst.sensors.iter().enumerate() {
            u += sensor.info() * sched.rate(k, j);
        }
        for _ in 0..substeps {
            let k1 = f(&p, &u);
            let k2 = f(&(&p + &k1 * (0.5 * h)), &u);
            let k3 = f(&(&p + &k2 * (0.5 * h)), &u);
            let k4 = f(&(&p + &k3 * h), &u);
            p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            p = linalg::symmetrize(&p);
        }
        nodes.push(p.clone());
    }
    nodes
}

#[test]
fn criterion_02_coordinate_duality() {
    let _g = lock();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for i in 0..20u64 {
        let n = 2 + (i as usize % 5);
        let m = 3 + (i as usize % 8);
        let inst = random_instance(&GenSpec::new(n, m, 1, 100 + i)).unwrap();
        let sched = random_feasible(&inst, 10, &mut rng);
        assert!(validate_schedule(&sched, &inst.polytope, 1e-12).unwrap().feasible);
        let y = surrogate::integrate_info_surrogate(&inst, &sched, 20).unwrap();
        let p_info = riccati::invert_trajectory(&y).unwrap();
        let direct = direct_p_info(&inst, &sched, 2000);
        for (k, d) in direct.iter().enumerate() {
            worst = worst.max(linalg::rel_err(&p_info.values()[20 * k], d));
        }
    }
    report(
        2,
        worst <= 1e-7,
        start.elapsed(),
        Duration::from_secs(30),
        &format!("max nodewise relative error {worst:.2e} on 20 instances (20 RK4 substeps vs direct reference)"),
    );
}

#[test]
fn criterion_03_gradient_exactness() {
    let _g = lock();
    let start = Instant::now();
    let bin = env!("CARGO_BIN_EXE_cdkf-sched");
    let mut cases: Vec<Vec<String>> = vec![vec!["--scalar".into()]];
    for (n, m, seed) in [(1, 2, 0), (2, 3, 1), (3, 5, 2), (4, 6, 3), (5, 8, 4), (6, 10, 5)] {
        cases.push(vec!["--random".into(), format!("n={n},M={m},p=1,seed={seed}")]);
    }
    cases.push(vec!["--random".into(), "n=6,M=10,p=2,seed=6".into()]);
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for case in &cases {
        let out = Command::new(bin).arg("gradcheck").args(case).args(["--N", "10"]).output().unwrap();
        let text = String::from_utf8_lossy(&out.stdout);
        for line in text.lines() {
            if let Some(v) = line.split_whitespace().find_map(|w| w.strip_prefix("max_rel_error=")) {
                worst = worst.max(v.parse::<f64>().unwrap());
            }
        }
        if !out.status.success() {
            failures.push(format!("{case:?}: {}", String::from_utf8_lossy(&out.stderr)));
        }
    }
    report(
        3,
        failures.is_empty() && worst <= 1e-6,
        start.elapsed(),
        Duration::from_secs(60),
        &format!("{} gradcheck runs, both kinds, worst relative error {worst:.2e}; failures {failures:?}", cases.len()),
    );
}

/// Root of `ln p − 1/p = −3` by bisection.
fn implicit_upper() -> f64 {
    let f = |p: f64| p.ln() - 1.0 / p + 3.0;
    let (mut lo, mut hi) = (1e-3, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn criterion_04_scalar_objective_bracket() {
    let _g = lock();
    let start = Instant::now();
    let inst = scalar_instance();
    let sched = Schedule::constant(1.0, 10, &[2.0]).unwrap();
    let cfg = McConfig { n_runs: 5000, n_eval: 100, substeps: 4, seed: 4, threads: None };
    let r = bounds::objective_bracket(&inst, &sched, &cfg, 20).unwrap();
    let exact = (1.0 - (-2.0f64).exp()) / 2.0;
    let upper = implicit_upper();
    let lower_ok = (r.j_lower - 1.0 / 3.0).abs() <= 1e-12;
    let upper_ok = (r.j_upper - upper).abs() <= 1e-8;
    let mc_ok = (r.mc.mean - exact).abs() <= 3.0 * r.mc.stderr;
    report(
        4,
        lower_ok && upper_ok && mc_ok && r.contained && r.ordered,
        start.elapsed(),
        Duration::from_secs(60),
        &format!(
            "J_lower={:.10} (1/3), mc={:.5}±{:.5} (exact {exact:.5}), J_upper={:.6} (root {upper:.6}), contained={}",
            r.j_lower, r.mc.mean, r.mc.stderr, r.j_upper, r.contained
        ),
    );
}

#[test]
fn criterion_05_reference_bracket() {
    let _g = lock();
    let start = Instant::now();
    let inst = reference_instance();
    let sol = reference_solve(&inst);
    let cfg = reference_mc(5);
    let r = bounds::full_bracket(&inst, &sol.schedule, &cfg, optimize::DEFAULT_SUBSTEPS).unwrap();
    let m = r.margins.as_ref().unwrap();
    report(
        5,
        r.contained && m.deterministic_ok,
        start.elapsed(),
        Duration::from_secs(300),
        &format!(
            "normalized J_lower={:.4e} mc={:.4e}±{:.1e} J_upper={:.4e}; contained={}; min-eig(P_cov−P_info)+tol worst {:.2e}; statistical margins cov {:.2e} info {:.2e}",
            r.norm_lower,
            r.norm_mc_mean,
            r.norm_mc_stderr,
            r.norm_upper,
            r.contained,
            m.worst_deterministic(),
            m.worst_covariance(),
            m.worst_information()
        ),
    );
}

#[test]
fn criterion_06_snr_sweep() {
    let _g = lock();
    let start = Instant::now();
    let inst = reference_instance();
    let sol = reference_solve(&inst);
    let scales = bounds::log_grid(1e-2, 1e2, 9).unwrap();
    let pts = bounds::snr_sweep(&inst, &sol.schedule, &scales, &reference_mc(6), optimize::DEFAULT_SUBSTEPS).unwrap();
    let widths: Vec<String> = pts.iter().map(|p| format!("{:.0e}:{:.2e}", p.r_scale, p.report.norm_width)).collect();
    let all = pts.iter().all(|p| p.report.contained);
    report(
        6,
        all && pts.len() == 9,
        start.elapsed(),
        Duration::from_secs(900),
        &format!("containment at all 9 scales: {all}; normalized widths {widths:?} (reference observation: below ~5e-3)"),
    );
}

#[test]
fn criterion_07_optimizer_quality() {
    let _g = lock();
    let start = Instant::now();
    let inst = reference_instance();
    let sol = reference_solve(&inst);
    let baseline = optimize::centered_schedule(&inst, 30).unwrap();
    let cfg = reference_mc(7);
    let opt = montecarlo::mc_objective(&inst, &sol.schedule, &cfg).unwrap();
    let base = montecarlo::mc_objective(&inst, &baseline, &cfg).unwrap();
    let slack = 3.0 * (opt.stderr.powi(2) + base.stderr.powi(2)).sqrt();
    let monotone = sol.history.windows(2).all(|w| w[1] <= w[0]);
    let tr = inst.trace_p0();
    report(
        7,
        opt.mean <= base.mean + slack && monotone,
        start.elapsed(),
        Duration::from_secs(300),
        &format!(
            "normalized MC optimized {:.4e}±{:.1e} vs centered {:.4e}±{:.1e}; history nonincreasing over {} iterates: {monotone}",
            opt.mean / tr,
            opt.stderr / tr,
            base.mean / tr,
            base.stderr / tr,
            sol.history.len()
        ),
    );
}

#[test]
fn criterion_08_assembly_cost_trend() {
    let _g = lock();
    let start = Instant::now();
    let mut medians = Vec::new();
    let mut all_above_one = true;
    for m in [30, 60, 100] {
        let inst = random_instance(&GenSpec::new(5, m, 1, 8)).unwrap();
        let sched = optimize::centered_schedule(&inst, 30).unwrap();
        let b = optimize::benchmark_assembly(&inst, &sched, optimize::DEFAULT_SUBSTEPS, 10, 2).unwrap();
        all_above_one &= b.ratios.iter().all(|r| *r > 1.0);
        medians.push(b.median_ratio);
    }
    let nondecreasing = medians.windows(2).all(|w| w[1] >= w[0]);
    report(
        8,
        all_above_one && nondecreasing,
        start.elapsed(),
        Duration::from_secs(600),
        &format!("median cov/info ratios at M=30,60,100: {medians:.2?}; every repetition > 1: {all_above_one}"),
    );
}

fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

#[test]
fn criterion_09_poisson_statistics() {
    let _g = lock();
    let start = Instant::now();
    const SEEDS: u64 = 2000;
    const ALPHA: f64 = 0.01;
    let counts = |sched: &Schedule, master: u64| -> Vec<f64> {
        (0..SEEDS).map(|i| sample_arrivals(sched, child_seed(master, i)).len() as f64).collect()
    };

    let single = counts(&Schedule::constant(3.0, 6, &[5.0]).unwrap(), 91);
    let n = single.len() as f64;
    let mean = single.iter().sum::<f64>() / n;
    let var = single.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let moments_ok = (mean - 15.0).abs() <= 4.0 * (15.0 / n).sqrt() && (var - 15.0).abs() <= 0.15 * 15.0;

    let merged = counts(&Schedule::constant(3.0, 3, &[1.0, 1.0]).unwrap(), 92);
    let law = Poisson::new(6.0).unwrap();
    let (lo, hi) = (2u64, 11u64);
    let mut observed = vec![0.0; (hi - lo + 1) as usize];
    for &k in &merged {
        observed[((k as u64).clamp(lo, hi) - lo) as usize] += 1.0;
    }
    let expected: Vec<f64> = (lo..=hi)
        .map(|k| {
            n * if k == lo {
                law.cdf(lo)
            } else if k == hi {
                1.0 - law.cdf(hi - 1)
            } else {
                law.pmf(k)
            }
        })
        .collect();
    assert!(expected.iter().all(|e| *e >= 5.0));
    let chi2: f64 = observed.iter().zip(&expected).map(|(o, e)| (o - e).powi(2) / e).sum();
    let p_chi = 1.0 - ChiSquared::new((expected.len() - 1) as f64).unwrap().cdf(chi2);

    let rates = Mat::from_row_slice(2, 2, &[1.0, 2.0, 0.5, 0.5]);
    let per_sensor = Schedule::new(3.0, rates.clone()).unwrap();
    let aggregate = Schedule::new(3.0, Mat::from_fn(2, 1, |k, _| rates.row(k).sum())).unwrap();
    let gaps = |sched: &Schedule, master: u64| -> Vec<f64> {
        (0..SEEDS)
            .flat_map(|i| {
                let rec = sample_arrivals(sched, child_seed(master, i));
                rec.events().windows(2).map(|w| w[1].time - w[0].time).collect::<Vec<_>>()
            })
            .collect()
    };
    let (ga, gb) = (gaps(&per_sensor, 93), gaps(&aggregate, 94));
    let (na, nb) = (ga.len() as f64, gb.len() as f64);
    let d = ks_statistic(ga, gb);
    let crit = (-(ALPHA / 2.0).ln() / 2.0).sqrt() * ((na + nb) / (na * nb)).sqrt();

    report(
        9,
        moments_ok && p_chi > ALPHA && d <= crit,
        start.elapsed(),
        Duration::from_secs(60),
        &format!("mean {mean:.3} var {var:.3} (15); chi-square p={p_chi:.3}; KS D={d:.4} (critical {crit:.4})"),
    );
}

#[test]
fn criterion_10_information_side() {
    let _g = lock();
    let start = Instant::now();
    let inst = random_instance(&GenSpec::new(2, 2, 1, 10)).unwrap();
    let problem = ShootingProblem::new(&inst, 10, optimize::DEFAULT_SUBSTEPS, SurrogateKind::Info).unwrap();
    let solved = optimize::solve(&problem, Initial::Centered, &SolveOptions::default()).unwrap().schedule;
    let centered = optimize::centered_schedule(&inst, 10).unwrap();
    let cfg = McConfig { n_runs: 500, n_eval: 100, substeps: 4, seed: 10, threads: None };
    let mut worst = f64::INFINITY;
    let mut ok = true;
    for sched in [&centered, &solved] {
        let m = bounds::trajectory_bracket(&inst, sched, &cfg, optimize::DEFAULT_SUBSTEPS).unwrap();
        ok &= m.information_ok;
        worst = worst.min(m.worst_information());
    }
    report(
        10,
        ok,
        start.elapsed(),
        Duration::from_secs(120),
        &format!("min over nodes of λ_min(Y_info − Ȳ_mc) + 3·stderr: {worst:.3e} (two schedules, 500 runs)"),
    );
}
