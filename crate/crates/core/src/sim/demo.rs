//! The scalar static demo: one state, `p` unit-noise sensors.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{
    affine_mse, assemble_nominal_joint, solve_static_estimator, AffineEstimator,
    EstimatorDocument,
};
use crate::linalg::{schur_trace, BlockLayout, JointSecondMoment, SymMatrix};
use crate::solver::{brute_force_worst_case, GridSpec, SolverConfig};
use crate::uncertainty::{
    feasibility_residual, project_feasible, GaussianMoments, ProjectionOptions,
    SensorConstraint, UncertaintySet,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoOptions {
    pub gamma1: f64,
    pub gamma2: f64,
    pub sensors: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for DemoOptions {
    fn default() -> Self {
        DemoOptions {
            gamma1: 1.0,
            gamma2: 1.0,
            sensors: 2,
            samples: 100,
            seed: 0,
        }
    }
}

/// `x ~ N(0, 1)` and `yⁱ = x + vⁱ` with `var vⁱ = 1`, band `[γ1, γ2]`.
pub fn demo_set(gamma1: f64, gamma2: f64, sensors: usize) -> Result<UncertaintySet> {
    if sensors == 0 {
        return Err(Error::invalid("at least one sensor is required"));
    }
    let layout = BlockLayout::new(1, vec![1; sensors])?;
    let nominal = GaussianMoments::new(
        DVector::zeros(2),
        SymMatrix::from_row_slice(2, &[1.0, 1.0, 1.0, 2.0])?,
    )?;
    let c = SensorConstraint::new(nominal, gamma1, gamma2, 0.0);
    UncertaintySet::new(layout, vec![c; sensors])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SaddleCheck {
    pub samples: usize,
    /// `max J(Q, ψ*) − J*` over sampled feasible `Q`.
    pub max_excess: f64,
    /// `min J(Q*, ψ) − J*` over sampled affine `ψ`.
    pub min_gap: f64,
}

/// Samples feasible Gaussians around `S*` (symmetric noise of Frobenius size
/// `0.1‖S*‖`, projected back onto the set) and perturbed affine rules.
pub fn saddle_check(
    set: &UncertaintySet,
    est: &AffineEstimator,
    samples: usize,
    seed: u64,
) -> Result<SaddleCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = est.s_star.matrix();
    let d = s.dim();
    let scale = 0.1 * s.frobenius_norm();
    let opts = ProjectionOptions {
        max_cycles: 20_000,
        ..ProjectionOptions::default()
    };
    let j_star = est.worst_case_mse;
    let mut max_excess = f64::NEG_INFINITY;
    for _ in 0..samples {
        let e = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
        let e = (&e + e.transpose()) * 0.5;
        let e = &e * (scale / e.norm().max(f64::MIN_POSITIVE));
        let start = SymMatrix::new(s.matrix() + e)?;
        let q = project_feasible(&start, set, &opts)?.matrix;
        let q = GaussianMoments {
            mean: est.mu.clone(),
            cov: q,
        };
        max_excess = max_excess.max(est.evaluate_mse(&q)? - j_star);
    }
    let lf = est.least_favorable();
    let a_scale = 0.1 * (est.a.norm() + 1.0);
    let mut min_gap = f64::INFINITY;
    for _ in 0..samples {
        let da = DMatrix::<f64>::from_fn(est.a.nrows(), est.a.ncols(), |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            a_scale * v
        });
        let db = DVector::<f64>::from_fn(est.b.len(), |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            a_scale * v
        });
        let j = affine_mse(&(&est.a + da), &(&est.b + db), &lf)?;
        min_gap = min_gap.min(j - j_star);
    }
    Ok(SaddleCheck {
        samples,
        max_excess,
        min_gap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoReport {
    pub gamma1: f64,
    pub gamma2: f64,
    pub sensors: usize,
    pub nominal_mse: f64,
    pub worst_case_mse: f64,
    pub oracle_mse: Option<f64>,
    pub feasibility_residual: f64,
    pub estimator: EstimatorDocument,
    pub saddle: SaddleCheck,
    pub checks: Vec<Check>,
    pub passed: bool,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        passed,
        detail,
    }
}

pub fn static_demo(opts: &DemoOptions) -> Result<DemoReport> {
    let set = demo_set(opts.gamma1, opts.gamma2, opts.sensors)?;
    let (_, s0) = assemble_nominal_joint(&set)?;
    let nominal_mse = schur_trace(&JointSecondMoment::new(set.layout().clone(), s0)?)?;
    let est = solve_static_estimator(&set, &SolverConfig::default())?;
    let residual = feasibility_residual(est.s_star.matrix(), &set)?;
    let saddle = saddle_check(&set, &est, opts.samples, opts.seed)?;
    let p = opts.sensors as f64;
    let wc = est.worst_case_mse;

    let mut checks = vec![
        check(
            "nominal_mse",
            (nominal_mse - 1.0 / (1.0 + p)).abs() <= 1e-9,
            format!("{nominal_mse} vs 1/{}", opts.sensors + 1),
        ),
        check(
            "worst_case_dominates_nominal",
            wc >= nominal_mse - 1e-6,
            format!("{wc} >= {nominal_mse}"),
        ),
        check("feasibility", residual <= 1e-6, format!("residual {residual:e}")),
        check(
            "saddle_upper",
            saddle.max_excess <= 1e-4,
            format!("max J(Q, psi*) - J* = {:e}", saddle.max_excess),
        ),
        check(
            "saddle_lower",
            saddle.min_gap >= -1e-9,
            format!("min J(Q*, psi) - J* = {:e}", saddle.min_gap),
        ),
    ];
    let equality = opts.gamma1 == 1.0 && opts.gamma2 == 1.0;
    let oracle_mse = if equality && opts.sensors <= 2 {
        let oracle = brute_force_worst_case(&set, &GridSpec::uniform(1e-4))?.value;
        checks.push(check(
            "oracle",
            (wc - oracle).abs() <= 1e-3,
            format!("{wc} vs grid {oracle}"),
        ));
        Some(oracle)
    } else {
        None
    };
    if equality && opts.sensors == 1 {
        checks.push(check(
            "singleton",
            (wc - nominal_mse).abs() <= 1e-9,
            format!("{wc} vs {nominal_mse}"),
        ));
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(DemoReport {
        gamma1: opts.gamma1,
        gamma2: opts.gamma2,
        sensors: opts.sensors,
        nominal_mse,
        worst_case_mse: wc,
        oracle_mse,
        feasibility_residual: residual,
        estimator: est.to_document(),
        saddle,
        checks,
        passed,
    })
}
