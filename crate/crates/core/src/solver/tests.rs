use super::*;
use crate::estimator::assemble_nominal_joint;
use crate::linalg::{min_eigenvalue, schur_trace, BlockLayout};
use crate::uncertainty::{feasibility_residual, GaussianMoments, SensorConstraint};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn two_sensor(g1: f64, g2: f64) -> UncertaintySet {
    let layout = BlockLayout::new(1, vec![1, 1]).unwrap();
    let nominal = GaussianMoments::new(
        DVector::zeros(2),
        SymMatrix::from_row_slice(2, &[1.0, 1.0, 1.0, 2.0]).unwrap(),
    )
    .unwrap();
    let c = SensorConstraint::new(nominal, g1, g2, 0.0);
    UncertaintySet::new(layout, vec![c.clone(), c]).unwrap()
}

/// Three scalar sensors on a 3-state prior, sensor i reading state i.
fn three_sensor(g1: f64, g2: f64) -> UncertaintySet {
    let layout = BlockLayout::new(3, vec![1, 1, 1]).unwrap();
    let p = [2.0, 0.8, 0.2, 0.8, 1.5, 0.5, 0.2, 0.5, 1.0];
    let r = [1.0, 4.0, 9.0];
    let sensors = (0..3)
        .map(|i| {
            let mut m = DMatrix::zeros(4, 4);
            for a in 0..3 {
                for b in 0..3 {
                    m[(a, b)] = p[a * 3 + b];
                }
                m[(a, 3)] = p[a * 3 + i];
                m[(3, a)] = p[a * 3 + i];
            }
            m[(3, 3)] = p[i * 3 + i] + r[i];
            let g = GaussianMoments::new(DVector::zeros(4), SymMatrix::new(m).unwrap()).unwrap();
            SensorConstraint::new(g, g1, g2, 0.0)
        })
        .collect();
    UncertaintySet::new(layout, sensors).unwrap()
}

fn solve(set: &UncertaintySet, cfg: &SolverConfig) -> (JointSecondMoment, SolverReport) {
    let (_, s0) = assemble_nominal_joint(set).unwrap();
    solve_worst_case(set, &s0, cfg).unwrap()
}

fn projected() -> SolverConfig {
    SolverConfig {
        method: SolverMethod::ProjectedAscent,
        ..Default::default()
    }
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> SymMatrix {
    let b = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    SymMatrix::new(&b * b.transpose() + DMatrix::identity(d, d) * 0.1).unwrap()
}

fn random_direction(rng: &mut ChaCha8Rng, d: usize) -> SymMatrix {
    SymMatrix::new(DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(rng))).unwrap()
}

#[test]
fn supergradient_without_cross_terms() {
    let layout = BlockLayout::new(2, vec![1]).unwrap();
    let s = SymMatrix::from_diagonal(&[2.0, 3.0, 4.0]);
    let g = supergradient(&JointSecondMoment::new(layout, s).unwrap()).unwrap();
    assert_eq!(g, SymMatrix::from_diagonal(&[1.0, 1.0, 0.0]));
}

#[test]
fn supergradient_scalar_case() {
    let layout = BlockLayout::new(1, vec![1]).unwrap();
    let s = SymMatrix::from_row_slice(2, &[1.0, 0.5, 0.5, 1.0]).unwrap();
    let g = supergradient(&JointSecondMoment::new(layout, s).unwrap()).unwrap();
    let expected = SymMatrix::from_row_slice(2, &[1.0, -0.5, -0.5, 0.25]).unwrap();
    assert!(g.sub(&expected).frobenius_norm() < 1e-15);
}

#[test]
fn supergradient_rejects_singular_block() {
    let layout = BlockLayout::new(1, vec![1]).unwrap();
    let s = SymMatrix::from_diagonal(&[1.0, 0.0]);
    let err = supergradient(&JointSecondMoment::new(layout, s).unwrap()).unwrap_err();
    assert!(matches!(err, Error::SingularBlock { .. }));
}

#[test]
fn supergradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let layout = BlockLayout::new(2, vec![1, 2]).unwrap();
    for _ in 0..10 {
        let s = random_spd(&mut rng, 5);
        let g = supergradient(&JointSecondMoment::new(layout.clone(), s.clone()).unwrap()).unwrap();
        let h = 1e-6 * s.frobenius_norm();
        let f = |m: SymMatrix| schur_trace(&JointSecondMoment::new(layout.clone(), m).unwrap()).unwrap();
        for _ in 0..20 {
            let dir = random_direction(&mut rng, 5);
            let fd = (f(s.add(&dir.scale(h))) - f(s.sub(&dir.scale(h)))) / (2.0 * h);
            let exact = g.inner(&dir);
            assert!((fd - exact).abs() <= 1e-5 * exact.abs().max(1.0), "{fd} vs {exact}");
        }
    }
}

#[test]
fn singleton_set_returns_nominal() {
    let layout = BlockLayout::new(1, vec![1]).unwrap();
    let sigma = SymMatrix::from_row_slice(2, &[2.0, 0.7, 0.7, 1.5]).unwrap();
    let c = SensorConstraint::new(GaussianMoments::new(DVector::zeros(2), sigma.clone()).unwrap(), 1.0, 1.0, 0.0);
    let set = UncertaintySet::new(layout.clone(), vec![c]).unwrap();
    for cfg in [SolverConfig::default(), projected()] {
        let (s, rep) = solve(&set, &cfg);
        assert_eq!(s.matrix(), &sigma);
        let expected = schur_trace(&JointSecondMoment::new(layout.clone(), sigma.clone()).unwrap()).unwrap();
        assert_eq!(rep.objective, expected);
    }
}

#[test]
fn two_sensor_instance_matches_oracle() {
    let set = two_sensor(1.0, 1.0);
    let oracle = brute_force_worst_case(&set, &GridSpec::uniform(1e-4)).unwrap();
    assert!((oracle.value - 0.5).abs() < 1e-6);
    for cfg in [SolverConfig::default(), projected()] {
        let (s, rep) = solve(&set, &cfg);
        assert!((rep.objective - oracle.value).abs() <= 1e-3, "{cfg:?}: {}", rep.objective);
        assert!(rep.converged);
        // perfectly correlated sensor noise: S_y1y2 at its PSD limit 2
        assert!((s.matrix().get(1, 2) - 2.0).abs() < 1e-4);
    }
    let (_, nominal) = assemble_nominal_joint(&set).unwrap();
    let layout = set.layout().clone();
    let independent = schur_trace(&JointSecondMoment::new(layout, nominal).unwrap()).unwrap();
    assert!((independent - 1.0 / 3.0).abs() < 1e-12);
}

/// Lower bound for the widened instance by a grid over a common block
/// scaling `k` and the cross term `c` of the y block.
fn widened_grid_bound(g1: f64, g2: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    let steps = 200;
    for a in 0..=steps {
        let k = g1 + (g2 - g1) * a as f64 / steps as f64;
        for b in 0..steps {
            let c = 2.0 * k * (-1.0 + 2.0 * b as f64 / steps as f64);
            let y = nalgebra::Matrix2::new(2.0 * k, c, c, 2.0 * k);
            let Some(inv) = y.try_inverse() else { continue };
            let sxy = nalgebra::RowVector2::new(k, k);
            best = best.max(k - (sxy * inv * sxy.transpose())[(0, 0)]);
        }
    }
    best
}

#[test]
fn widened_band_dominates_grid_bound() {
    let narrow = solve(&two_sensor(1.0, 1.0), &SolverConfig::default()).1.objective;
    let bound = widened_grid_bound(0.8, 1.2);
    assert!(bound > 0.59);
    for cfg in [SolverConfig::default(), projected()] {
        let wide = solve(&two_sensor(0.8, 1.2), &cfg).1.objective;
        assert!(wide >= narrow - 1e-6);
        assert!(wide >= bound - 1e-4, "{cfg:?}: {wide} < {bound}");
    }
}

#[test]
fn nested_bands_are_monotone() {
    let ladder = [(1.0, 1.0), (0.95, 1.05), (0.9, 1.1), (0.8, 1.25), (0.6, 1.5)];
    let mut last = f64::NEG_INFINITY;
    for (g1, g2) in ladder {
        let f = solve(&three_sensor(g1, g2), &SolverConfig::default()).1.objective;
        assert!(f >= last - 1e-6, "{g1},{g2}: {f} < {last}");
        last = f;
    }
}

#[test]
fn methods_agree_on_three_sensors() {
    for (g1, g2) in [(1.0, 1.0), (0.5, 2.0)] {
        let set = three_sensor(g1, g2);
        let a = solve(&set, &SolverConfig::default()).1.objective;
        let cfg = SolverConfig {
            step_rule: StepRule::Fixed(2.0),
            ..projected()
        };
        let b = solve(&set, &cfg).1.objective;
        assert!((a - b).abs() <= 1e-6 * a, "{g1},{g2}: {a} vs {b}");
    }
}

#[test]
fn output_is_feasible() {
    for set in [two_sensor(0.8, 1.2), three_sensor(0.5, 2.0), three_sensor(1.0, 1.0)] {
        for cfg in [SolverConfig::default(), projected()] {
            let (s, rep) = solve(&set, &cfg);
            assert!(rep.feasibility_residual <= cfg.feas_tol);
            assert!(feasibility_residual(s.matrix(), &set).unwrap() <= cfg.feas_tol);
            assert!(min_eigenvalue(&s.s_yy()).unwrap() >= cfg.pd_floor * (1.0 - 1e-6));
            assert_eq!(s.matrix().matrix(), &s.matrix().matrix().transpose());
        }
    }
}

#[test]
fn touching_bands_pin_the_shared_block() {
    // [0.8, 1] and [1, 1.2] meet only at 1, so S_xx and S_xy are pinned
    let layout = BlockLayout::new(1, vec![1, 1]).unwrap();
    let nominal = GaussianMoments::new(
        DVector::zeros(2),
        SymMatrix::from_row_slice(2, &[1.0, 1.0, 1.0, 2.0]).unwrap(),
    )
    .unwrap();
    let set = UncertaintySet::new(
        layout,
        vec![
            SensorConstraint::new(nominal.clone(), 0.8, 1.0, 0.0),
            SensorConstraint::new(nominal, 1.0, 1.2, 0.0),
        ],
    )
    .unwrap();
    let (s, rep) = solve(&set, &SolverConfig::default());
    assert_eq!(rep.projection_cycles, 0);
    assert!(rep.converged);
    assert!(feasibility_residual(s.matrix(), &set).unwrap() <= 1e-8);
    assert_eq!(s.matrix().get(0, 0), 1.0);
    assert_eq!(s.matrix().get(0, 1), 1.0);
    // With Z = S_yy − 11ᵀ the objective is 1 / (1 + 1ᵀZ⁻¹1). The bands leave
    // Z₁₁ ≤ 1, Z₂₂ ≤ 1.2, and min over the cross term of 1ᵀZ⁻¹1 is then 1.
    assert!((rep.objective - 0.5).abs() < 1e-6, "{}", rep.objective);
}

#[test]
fn bit_identical_reruns() {
    for cfg in [SolverConfig::default(), projected()] {
        let set = two_sensor(0.8, 1.2);
        let (a, ra) = solve(&set, &cfg);
        let (b, rb) = solve(&set, &cfg);
        assert_eq!(a.matrix(), b.matrix());
        assert_eq!(ra.objective_trace, rb.objective_trace);
    }
}

#[test]
fn objective_trace_is_monotone_after_burn_in() {
    for cfg in [SolverConfig::default(), projected()] {
        let (_, rep) = solve(&two_sensor(0.8, 1.2), &cfg);
        for w in rep.objective_trace.windows(2).skip(10) {
            assert!(w[1] >= w[0] - 1e-9, "{cfg:?}");
        }
    }
}

#[test]
fn trace_csv_layout() {
    let (_, rep) = solve(&two_sensor(1.0, 1.0), &projected());
    let mut buf = Vec::new();
    rep.write_trace_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "iter,objective,feas_residual");
    assert_eq!(lines.len(), rep.objective_trace.len() + 1);
    assert!(lines[1].starts_with("0,"));
}

#[test]
fn config_validation() {
    assert!(SolverConfig::default().validate().is_ok());
    let bad = [
        SolverConfig { max_iter: 0, ..Default::default() },
        SolverConfig { obj_tol: 0.0, ..Default::default() },
        SolverConfig { step_rule: StepRule::Fixed(-1.0), ..Default::default() },
        SolverConfig { step_rule: StepRule::Diminishing { eta0: None, power: 1.5 }, ..Default::default() },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
}

#[test]
fn start_dimension_is_checked() {
    let set = two_sensor(1.0, 1.0);
    let err = solve_worst_case(&set, &SymMatrix::identity(2), &SolverConfig::default()).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)));
}

