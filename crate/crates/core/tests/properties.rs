use mcmdrkf::estimator::solve_static_estimator;
use mcmdrkf::filter::{ci_fuse, step_uncertainty_set, Band, FilterState, SensorModel, StateSpaceModel};
use mcmdrkf::linalg::{min_eigenvalue, psd_project};
use mcmdrkf::sim::truth::TruthModel;
use mcmdrkf::solver::SolverConfig;
use mcmdrkf::uncertainty::{band_residual, project_band};
use mcmdrkf::SymMatrix;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn symmetric(dim: usize) -> impl Strategy<Value = SymMatrix> {
    prop::collection::vec(-5.0..5.0f64, dim * dim).prop_map(move |v| {
        let m = DMatrix::from_column_slice(dim, dim, &v);
        SymMatrix::new((&m + m.transpose()) * 0.5).unwrap()
    })
}

fn positive_definite(dim: usize) -> impl Strategy<Value = SymMatrix> {
    prop::collection::vec(-2.0..2.0f64, dim * dim).prop_map(move |v| {
        let m = DMatrix::from_column_slice(dim, dim, &v);
        let pd = &m * m.transpose() + DMatrix::identity(dim, dim) * 0.1;
        SymMatrix::new((&pd + pd.transpose()) * 0.5).unwrap()
    })
}

fn band() -> impl Strategy<Value = (f64, f64)> {
    (0.2..1.0f64, 1.0..3.0f64)
}

fn scalar_model(r: [f64; 3]) -> StateSpaceModel {
    let ts = 0.1;
    let f = DMatrix::from_row_slice(3, 3, &[1.0, ts, ts * ts / 2.0, 0.0, 1.0, ts, 0.0, 0.0, 1.0]);
    let g = DMatrix::from_column_slice(3, 1, &[ts * ts / 2.0, ts, 1.0]);
    let sensors = r
        .iter()
        .map(|&r| SensorModel {
            h: DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
            r: SymMatrix::from_diagonal(&[r]),
        })
        .collect();
    StateSpaceModel::new(
        f,
        g,
        SymMatrix::identity(1),
        sensors,
        DVector::zeros(3),
        SymMatrix::identity(3).scale(100.0),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn psd_projection_is_idempotent(m in symmetric(4)) {
        let p = psd_project(&m).unwrap();
        prop_assert!(min_eigenvalue(&p).unwrap() >= -1e-10);
        let pp = psd_project(&p).unwrap();
        prop_assert!(pp.sub(&p).frobenius_norm() <= 1e-9 * (1.0 + p.frobenius_norm()));
    }

    #[test]
    fn band_projection_lands_in_the_band(x in symmetric(3), sigma in positive_definite(3), (g1, g2) in band()) {
        let p = project_band(&x, &sigma, g1, g2).unwrap();
        let scale = 1.0 + sigma.frobenius_norm();
        prop_assert!(band_residual(&p, &sigma, g1, g2).unwrap() <= 1e-9 * scale);
        let pp = project_band(&p, &sigma, g1, g2).unwrap();
        prop_assert!(pp.sub(&p).frobenius_norm() <= 1e-8 * scale);
    }

    #[test]
    fn ci_weights_are_on_the_simplex(
        v in prop::collection::vec(positive_definite(2), 2..=4),
        x in prop::collection::vec(-3.0..3.0f64, 8),
    ) {
        let estimates: Vec<_> = v
            .iter()
            .enumerate()
            .map(|(i, v)| (DVector::from_column_slice(&x[2 * i..2 * i + 2]), v.clone()))
            .collect();
        let fused = ci_fuse(&estimates).unwrap();
        prop_assert!(fused.omega.iter().all(|&w| w >= 0.0));
        prop_assert!((fused.omega.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let best_single = v.iter().map(|v| v.trace()).fold(f64::INFINITY, f64::min);
        prop_assert!(fused.v.trace() <= best_single * (1.0 + 1e-9));
    }

    #[test]
    fn simulation_is_a_function_of_seed_and_run(seed in any::<u64>(), run in 0u64..1000) {
        let truth = TruthModel::new(&scalar_model([1.0, 4.0, 9.0]), &[1.0, 0.5, 0.25]).unwrap();
        let a = truth.simulate(seed, run, 5);
        let b = truth.simulate(seed, run, 5);
        prop_assert_eq!(&a.measurements, &b.measurements);
        let c = truth.simulate(seed, run + 1, 5);
        prop_assert_ne!(&a.measurements, &c.measurements);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn widening_the_band_never_lowers_the_worst_case(
        r in prop::array::uniform3(0.2..10.0f64),
        (g1, g2) in band(),
        shrink in 0.3..1.0f64,
    ) {
        let model = scalar_model(r);
        let prev = FilterState::initial(&model);
        let cfg = SolverConfig::default();
        let inner = Band::new(1.0 - (1.0 - g1) * shrink, 1.0 + (g2 - 1.0) * shrink);
        let outer = Band::new(g1, g2);
        let solve = |b: Band| {
            let set = step_uncertainty_set(&model, &prev, &[b; 3]).unwrap();
            solve_static_estimator(&set, &cfg).unwrap().worst_case_mse
        };
        let (a, b) = (solve(inner), solve(outer));
        prop_assert!(b >= a - 1e-6 * a.abs().max(1.0), "inner {a} outer {b}");
    }
}
