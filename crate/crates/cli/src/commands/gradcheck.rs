use anyhow::Result;
use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cdkf_sched::linalg::Mat;
use cdkf_sched::optimize::{self, ShootingProblem, DEFAULT_FD_STEP};
use cdkf_sched::{Instance, SurrogateKind};

use crate::args::{scalar_instance, InstanceArgs};
use crate::Failure;

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    /// Use the scalar closed-form instance.
    #[arg(long, conflicts_with_all = ["instance", "random"])]
    pub scalar: bool,
    /// Surrogate to check; both when absent.
    #[arg(long)]
    pub kind: Option<SurrogateKind>,
    #[arg(long = "N", default_value_t = 10)]
    pub intervals: usize,
    #[arg(long, default_value_t = optimize::DEFAULT_SUBSTEPS)]
    pub substeps: usize,
    /// Seed for the evaluation point.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "fd-step", default_value_t = DEFAULT_FD_STEP)]
    pub fd_step: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Scales the adjoint gradient before comparison (negative control).
    #[arg(long = "corrupt-gradient", hide = true)]
    pub corrupt_gradient: Option<f64>,
}

/// Interior feasible point: entries uniform on `[0.2, 0.9]·t*`.
pub fn evaluation_point(inst: &Instance, intervals: usize, seed: u64) -> Mat {
    let t = inst.polytope.uniform_limit();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mat::from_fn(intervals, inst.num_sensors(), |_, _| t * rng.random_range(0.2..0.9))
}

pub fn run(a: &GradcheckArgs) -> Result<()> {
    let inst = if a.scalar { scalar_instance() } else { a.instance.load()? };
    let kinds = match a.kind {
        Some(k) => vec![k],
        None => vec![SurrogateKind::Info, SurrogateKind::Cov],
    };
    let rates = evaluation_point(&inst, a.intervals, a.seed);
    let mut worst = 0.0f64;
    for kind in kinds {
        let problem = ShootingProblem::new(&inst, a.intervals, a.substeps, kind).map_err(|e| Failure::Usage(e.to_string()))?;
        let (_, mut adjoint) = problem.objective_and_gradient(&rates)?;
        if let Some(f) = a.corrupt_gradient {
            adjoint *= f;
        }
        let fd = optimize::finite_difference_gradient(&problem, &rates, a.fd_step)?;
        let c = optimize::compare_gradients(&adjoint, &fd);
        println!(
            "kind={kind} n={} M={} N={} max_rel_error={:.3e} worst=({}, {}) |grad|={:.6e}",
            inst.dim(),
            inst.num_sensors(),
            a.intervals,
            c.max_rel_error,
            c.worst.0,
            c.worst.1,
            c.adjoint_norm
        );
        worst = worst.max(c.max_rel_error);
    }
    if worst <= a.tol {
        Ok(())
    } else {
        Err(Failure::Check(format!("max relative error {worst:.3e} exceeds {:.1e}", a.tol)).into())
    }
}
