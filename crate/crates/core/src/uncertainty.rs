//! The moment-constrained marginal uncertainty set.
//!
//! Each sensor `i` contributes a nominal Gaussian marginal `N(μ_i, Σ_i)` of
//! `(x, y_i)` and a Loewner band `γ1 Σ_i ⪯ S_[i] ⪯ γ2 Σ_i` on the matching
//! principal submatrix `S_[i]` of the joint second moment. The mean is pinned
//! to the nominal, so the mean-ellipsoid radius `γ3` is stored and validated
//! but never constrains `S`. Cross-sensor blocks are left free apart from the
//! global requirement `S ⪰ 0`.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{
    positive_part, select_block, sym_eig, write_block, BlockLayout, SymMatrix, PD_EPS,
};

/// Mean and covariance of a Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub cov: SymMatrix,
}

impl GaussianMoments {
    pub fn new(mean: DVector<f64>, cov: SymMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::invalid(format!(
                "mean has dimension {} but covariance has dimension {}",
                mean.len(),
                cov.dim()
            )));
        }
        let eig = sym_eig(&cov)?;
        if eig.min_value() < -1e-10 * eig.max_value().abs().max(1.0) {
            return Err(Error::invalid(format!(
                "covariance is not PSD (min eigenvalue {:e})",
                eig.min_value()
            )));
        }
        Ok(GaussianMoments { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Nominal marginal of `(x, y_i)` and its band parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorConstraint {
    pub nominal: GaussianMoments,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
}

impl SensorConstraint {
    pub fn new(nominal: GaussianMoments, gamma1: f64, gamma2: f64, gamma3: f64) -> Self {
        SensorConstraint {
            nominal,
            gamma1,
            gamma2,
            gamma3,
        }
    }
}

/// A condition under which a set fails [`UncertaintySet::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DimensionMismatch {
        sensor: usize,
        expected: usize,
        got: usize,
    },
    NonFiniteGamma {
        sensor: usize,
    },
    NegativeGamma {
        sensor: usize,
    },
    GammaOrder {
        sensor: usize,
        gamma1: f64,
        gamma2: f64,
    },
    BandExcludesNominal {
        sensor: usize,
        gamma1: f64,
        gamma2: f64,
    },
    NominalNotPositiveDefinite {
        sensor: usize,
        min_eigenvalue: f64,
    },
    InconsistentXMarginal {
        sensor: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DimensionMismatch {
                sensor,
                expected,
                got,
            } => write!(
                f,
                "sensor {sensor}: nominal dimension {got}, layout expects {expected}"
            ),
            Violation::NonFiniteGamma { sensor } => write!(f, "sensor {sensor}: non-finite gamma"),
            Violation::NegativeGamma { sensor } => write!(f, "sensor {sensor}: negative gamma"),
            Violation::GammaOrder {
                sensor,
                gamma1,
                gamma2,
            } => write!(
                f,
                "sensor {sensor}: gamma1 > gamma2 ({gamma1} > {gamma2})"
            ),
            Violation::BandExcludesNominal {
                sensor,
                gamma1,
                gamma2,
            } => write!(
                f,
                "sensor {sensor}: band [{gamma1}, {gamma2}] does not contain 1, nominal assembly may be infeasible"
            ),
            Violation::NominalNotPositiveDefinite {
                sensor,
                min_eigenvalue,
            } => write!(
                f,
                "sensor {sensor}: nominal covariance not positive definite (min eigenvalue {min_eigenvalue:e})"
            ),
            Violation::InconsistentXMarginal { sensor } => write!(
                f,
                "sensor {sensor}: inconsistent x marginal with sensor 0"
            ),
        }
    }
}

/// Per-sensor nominal marginals and bands over a common [`BlockLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintySet {
    layout: BlockLayout,
    sensors: Vec<SensorConstraint>,
}

impl UncertaintySet {
    pub fn new(layout: BlockLayout, sensors: Vec<SensorConstraint>) -> Result<Self> {
        if sensors.len() != layout.num_sensors() {
            return Err(Error::invalid(format!(
                "layout has {} sensors but {} constraints were given",
                layout.num_sensors(),
                sensors.len()
            )));
        }
        Ok(UncertaintySet { layout, sensors })
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn sensors(&self) -> &[SensorConstraint] {
        &self.sensors
    }

    /// Checks structure, band ordering, strict positive definiteness of the
    /// nominals, a shared `x` marginal and `γ1 ≤ 1 ≤ γ2` (which makes the
    /// block-diagonal nominal assembly feasible).
    pub fn validate(&self) -> std::result::Result<(), Vec<Violation>> {
        let mut out = Vec::new();
        let n = self.layout.n();
        let reference = &self.sensors[0].nominal;
        for (i, s) in self.sensors.iter().enumerate() {
            let expected = n + self.layout.sensor_dims()[i];
            if s.nominal.dim() != expected {
                out.push(Violation::DimensionMismatch {
                    sensor: i,
                    expected,
                    got: s.nominal.dim(),
                });
                continue;
            }
            let gammas = [s.gamma1, s.gamma2, s.gamma3];
            if gammas.iter().any(|g| !g.is_finite()) {
                out.push(Violation::NonFiniteGamma { sensor: i });
            } else {
                if gammas.iter().any(|&g| g < 0.0) {
                    out.push(Violation::NegativeGamma { sensor: i });
                }
                if s.gamma1 > s.gamma2 {
                    out.push(Violation::GammaOrder {
                        sensor: i,
                        gamma1: s.gamma1,
                        gamma2: s.gamma2,
                    });
                } else if s.gamma1 > 1.0 || s.gamma2 < 1.0 {
                    out.push(Violation::BandExcludesNominal {
                        sensor: i,
                        gamma1: s.gamma1,
                        gamma2: s.gamma2,
                    });
                }
            }
            match sym_eig(&s.nominal.cov) {
                Ok(e) if e.min_value() > 0.0 => {}
                Ok(e) => out.push(Violation::NominalNotPositiveDefinite {
                    sensor: i,
                    min_eigenvalue: e.min_value(),
                }),
                Err(_) => out.push(Violation::NominalNotPositiveDefinite {
                    sensor: i,
                    min_eigenvalue: f64::NAN,
                }),
            }
            if i > 0 && reference.dim() >= n && !same_x_marginal(reference, &s.nominal, n) {
                out.push(Violation::InconsistentXMarginal { sensor: i });
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    /// [`validate`](Self::validate) as a `Result` with joined diagnostics.
    pub fn ensure_valid(&self) -> Result<()> {
        self.validate().map_err(|v| {
            Error::invalid(
                v.iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join("; "),
            )
        })
    }
}

fn same_x_marginal(a: &GaussianMoments, b: &GaussianMoments, n: usize) -> bool {
    let close = |u: f64, v: f64| (u - v).abs() <= 1e-12 * (1.0 + u.abs().max(v.abs()));
    (0..n).all(|r| close(a.mean[r], b.mean[r]))
        && (0..n).all(|r| (0..n).all(|c| close(a.cov.get(r, c), b.cov.get(r, c))))
}

/// Unnormalized violation of `γ1 Σ ⪯ X ⪯ γ2 Σ`: the largest negative
/// eigenvalue magnitude of `γ2 Σ − X` and `X − γ1 Σ`, or zero.
pub fn band_residual(x: &SymMatrix, sigma: &SymMatrix, gamma1: f64, gamma2: f64) -> Result<f64> {
    if x.dim() != sigma.dim() {
        return Err(Error::invalid("band residual: dimension mismatch"));
    }
    let upper = sym_eig(&sigma.scale(gamma2).sub(x))?.min_value();
    let lower = sym_eig(&x.sub(&sigma.scale(gamma1)))?.min_value();
    Ok((-upper).max(-lower).max(0.0))
}

/// Feasibility residual of `S` with per-sensor scale normalization by `‖Σ_i‖₂`.
pub fn feasibility_residual(s: &SymMatrix, set: &UncertaintySet) -> Result<f64> {
    feasibility_residual_with(s, set, true)
}

/// Largest violation across every sensor band and the global `S ⪰ 0`
/// constraint. Zero means feasible. With `normalized`, band violations are
/// divided by `‖Σ_i‖₂` and the PSD violation by `max_i ‖Σ_i‖₂`.
pub fn feasibility_residual_with(
    s: &SymMatrix,
    set: &UncertaintySet,
    normalized: bool,
) -> Result<f64> {
    let opts = ProjectionOptions {
        metric: BandMetric::Euclidean,
        ..Default::default()
    };
    Projector::new(set, &opts)?.residual_with(s, normalized)
}

fn spectral_norm(m: &SymMatrix) -> Result<f64> {
    let e = sym_eig(m)?;
    Ok(e.max_value().abs().max(e.min_value().abs()))
}

/// Projection onto `γ1 Σ ⪯ X ⪯ γ2 Σ` in the Σ-weighted metric: whiten with
/// `Σ^{-1/2}`, clamp the eigenvalues into `[γ1, γ2]`, unwhiten.
pub fn project_band(x: &SymMatrix, sigma: &SymMatrix, gamma1: f64, gamma2: f64) -> Result<SymMatrix> {
    if x.dim() != sigma.dim() {
        return Err(Error::invalid("band projection: dimension mismatch"));
    }
    if gamma1 > gamma2 {
        return Err(Error::invalid("band projection: gamma1 > gamma2"));
    }
    if gamma1 == gamma2 {
        return Ok(sigma.scale(gamma1));
    }
    let (root, inv_root) = whitening(sigma)?;
    Ok(SymMatrix::symmetrized(whitened_clamp(
        x.matrix(),
        &root,
        &inv_root,
        gamma1,
        gamma2,
    )?))
}

fn whitening(sigma: &SymMatrix) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let eig = sym_eig(sigma)?;
    if eig.min_value() <= PD_EPS * eig.max_value().abs().max(1.0) {
        return Err(Error::singular("nominal covariance", eig.min_value()));
    }
    Ok((
        eig.map(f64::sqrt).into_matrix(),
        eig.map(|l| 1.0 / l.sqrt()).into_matrix(),
    ))
}

fn whitened_clamp(
    x: &DMatrix<f64>,
    root: &DMatrix<f64>,
    inv_root: &DMatrix<f64>,
    gamma1: f64,
    gamma2: f64,
) -> Result<DMatrix<f64>> {
    let w = SymMatrix::symmetrized(inv_root * x * inv_root);
    let eig = sym_eig(&w)?;
    if eig.min_value() >= gamma1 && eig.max_value() <= gamma2 {
        return Ok(x.clone());
    }
    let clamped = eig.map(|l| l.clamp(gamma1, gamma2));
    Ok(root * clamped.matrix() * root)
}

/// How the per-sensor bands are projected inside Dykstra's scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BandMetric {
    /// Closed-form Σ-weighted clamp ([`project_band`]); one set per sensor.
    Whitened,
    /// Exact Frobenius projections onto the two half-bands `X ⪯ γ2 Σ` and
    /// `X ⪰ γ1 Σ`, treated as separate sets. Dykstra then converges to the
    /// Euclidean projection onto the intersection.
    #[default]
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionOptions {
    pub max_cycles: usize,
    pub tol: f64,
    pub metric: BandMetric,
    /// Replaces the PSD cone by `{S ⪰ eig_floor·I}`.
    pub eig_floor: f64,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        ProjectionOptions {
            max_cycles: 500,
            tol: 1e-8,
            metric: BandMetric::default(),
            eig_floor: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Projection {
    pub matrix: SymMatrix,
    pub residual: f64,
    pub cycles: usize,
    /// Residual after each completed cycle (empty when the input was feasible).
    pub residual_trace: Vec<f64>,
}

struct PreparedSensor {
    idx: Vec<usize>,
    sigma: DMatrix<f64>,
    sigma_sym: SymMatrix,
    norm: f64,
    gamma1: f64,
    gamma2: f64,
    whitening: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

enum ConvexSet {
    Band(usize),
    Upper(usize),
    Lower(usize),
    Psd(f64),
}

/// Dykstra's alternating projections onto the per-sensor bands and the PSD
/// cone, until [`feasibility_residual`] drops to `opts.tol`.
pub fn project_feasible(
    s: &SymMatrix,
    set: &UncertaintySet,
    opts: &ProjectionOptions,
) -> Result<Projection> {
    Projector::new(set, opts)?.project(s)
}

/// Dykstra correction terms carried between [`Projector::project_warm`] calls.
#[derive(Debug, Clone, Default)]
pub struct DykstraState {
    increments: Vec<DMatrix<f64>>,
}

/// [`project_feasible`] with the per-sensor setup (norms, whitening) done
/// once, for callers that project repeatedly onto the same set.
pub struct Projector {
    dim: usize,
    sensors: Vec<PreparedSensor>,
    sets: Vec<ConvexSet>,
    max_norm: f64,
    opts: ProjectionOptions,
}

impl Projector {
    pub fn new(set: &UncertaintySet, opts: &ProjectionOptions) -> Result<Self> {
        let layout = set.layout();
        let mut sensors = Vec::with_capacity(set.sensors().len());
        let mut max_norm: f64 = 0.0;
        for (i, c) in set.sensors().iter().enumerate() {
            let idx = layout.sensor_indices(i)?;
            if c.nominal.dim() != idx.len() {
                return Err(Error::invalid(format!(
                    "sensor {i}: nominal dimension {} does not match layout",
                    c.nominal.dim()
                )));
            }
            if c.gamma1 > c.gamma2 {
                return Err(Error::invalid(format!("sensor {i}: gamma1 > gamma2")));
            }
            let equality = c.gamma1 == c.gamma2;
            let whitening = if opts.metric == BandMetric::Whitened && !equality {
                Some(whitening(&c.nominal.cov)?)
            } else {
                None
            };
            let norm = spectral_norm(&c.nominal.cov)?;
            max_norm = max_norm.max(norm);
            sensors.push(PreparedSensor {
                idx,
                sigma: c.nominal.cov.matrix().clone(),
                sigma_sym: c.nominal.cov.clone(),
                norm,
                gamma1: c.gamma1,
                gamma2: c.gamma2,
                whitening,
            });
        }
        let mut sets = Vec::new();
        for (i, p) in sensors.iter().enumerate() {
            if p.gamma1 == p.gamma2 || opts.metric == BandMetric::Whitened {
                sets.push(ConvexSet::Band(i));
            } else {
                sets.push(ConvexSet::Upper(i));
                sets.push(ConvexSet::Lower(i));
            }
        }
        sets.push(ConvexSet::Psd(opts.eig_floor));
        Ok(Projector {
            dim: layout.total(),
            sensors,
            sets,
            max_norm,
            opts: *opts,
        })
    }

    pub fn options(&self) -> &ProjectionOptions {
        &self.opts
    }

    /// Normalized feasibility residual (see [`feasibility_residual_with`]).
    pub fn residual(&self, s: &SymMatrix) -> Result<f64> {
        self.residual_with(s, true)
    }

    pub fn residual_with(&self, s: &SymMatrix, normalized: bool) -> Result<f64> {
        if s.dim() != self.dim {
            return Err(Error::invalid(format!(
                "matrix dimension {} does not match layout dimension {}",
                s.dim(),
                self.dim
            )));
        }
        let mut worst: f64 = 0.0;
        for p in &self.sensors {
            let block = SymMatrix::symmetrized(select_block(s.matrix(), &p.idx));
            let r = band_residual(&block, &p.sigma_sym, p.gamma1, p.gamma2)?;
            worst = worst.max(if normalized {
                r / p.norm.max(f64::MIN_POSITIVE)
            } else {
                r
            });
        }
        let psd = (self.opts.eig_floor - sym_eig(s)?.min_value()).max(0.0);
        worst = worst.max(if normalized {
            psd / self.max_norm.max(f64::MIN_POSITIVE)
        } else {
            psd
        });
        Ok(worst)
    }

    pub fn project(&self, s: &SymMatrix) -> Result<Projection> {
        self.project_warm(s, &mut DykstraState::default())
    }

    /// Projection that starts Dykstra from the correction terms left in
    /// `state` by an earlier call and stores the final ones back. Nearby
    /// inputs then need far fewer cycles; the limit point is unchanged since
    /// the cycle is coordinate ascent on a dual that any start converges on.
    pub fn project_warm(&self, s: &SymMatrix, state: &mut DykstraState) -> Result<Projection> {
        let residual = self.residual(s)?;
        if residual <= self.opts.tol {
            state.increments.clear();
            return Ok(Projection {
                matrix: s.clone(),
                residual,
                cycles: 0,
                residual_trace: Vec::new(),
            });
        }
        let d = self.dim;
        let mut increments = std::mem::take(&mut state.increments);
        if increments.len() != self.sets.len() {
            increments = vec![DMatrix::<f64>::zeros(d, d); self.sets.len()];
        }
        // Dykstra keeps x + Σ increments equal to the input.
        let mut x = s.matrix().clone();
        for q in &increments {
            x -= q;
        }
        let mut trace = Vec::new();
        let mut residual = residual;
        let scale = self.max_norm.max(f64::MIN_POSITIVE);
        for cycle in 1..=self.opts.max_cycles {
            let previous = x.clone();
            for (k, c) in self.sets.iter().enumerate() {
                let y = &x + &increments[k];
                let projected = apply_set(c, &y, &self.sensors)?;
                increments[k] = &y - &projected;
                x = projected;
            }
            let last = SymMatrix::symmetrized(x.clone());
            residual = self.residual(&last)?;
            trace.push(residual);
            // Feasibility alone is not enough: an early feasible iterate can
            // sit far from the nearest point, so also wait for x to settle.
            let moved = (&x - &previous).norm() / scale;
            if residual <= self.opts.tol && moved <= self.opts.tol {
                state.increments = increments;
                return Ok(Projection {
                    matrix: last,
                    residual,
                    cycles: cycle,
                    residual_trace: trace,
                });
            }
        }
        Err(Error::ProjectionNotConverged {
            residual,
            cycles: self.opts.max_cycles,
        })
    }
}

fn apply_set(c: &ConvexSet, y: &DMatrix<f64>, prepared: &[PreparedSensor]) -> Result<DMatrix<f64>> {
    let mut out = y.clone();
    match *c {
        ConvexSet::Psd(floor) => {
            if floor == 0.0 {
                return Ok(positive_part(&SymMatrix::symmetrized(out))?.into_matrix());
            }
            for i in 0..out.nrows() {
                out[(i, i)] -= floor;
            }
            let mut m = positive_part(&SymMatrix::symmetrized(out))?.into_matrix();
            for i in 0..m.nrows() {
                m[(i, i)] += floor;
            }
            return Ok(m);
        }
        ConvexSet::Band(i) => {
            let p = &prepared[i];
            let block = if p.gamma1 == p.gamma2 {
                &p.sigma * p.gamma1
            } else {
                let x = select_block(y, &p.idx);
                let (root, inv_root) = p.whitening.as_ref().expect("whitening prepared");
                whitened_clamp(&x, root, inv_root, p.gamma1, p.gamma2)?
            };
            write_block(&mut out, &p.idx, &block);
        }
        ConvexSet::Upper(i) => {
            // X - (X - γ2 Σ)_+
            let p = &prepared[i];
            let x = select_block(y, &p.idx);
            let excess = positive_part(&SymMatrix::symmetrized(&x - &p.sigma * p.gamma2))?;
            write_block(&mut out, &p.idx, &(x - excess.matrix()));
        }
        ConvexSet::Lower(i) => {
            // X + (γ1 Σ - X)_+
            let p = &prepared[i];
            let x = select_block(y, &p.idx);
            let deficit = positive_part(&SymMatrix::symmetrized(&p.sigma * p.gamma1 - &x))?;
            write_block(&mut out, &p.idx, &(x + deficit.matrix()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gm(mean: &[f64], cov: &[f64]) -> GaussianMoments {
        let d = mean.len();
        GaussianMoments::new(
            DVector::from_column_slice(mean),
            SymMatrix::from_row_slice(d, cov).unwrap(),
        )
        .unwrap()
    }

    /// x ~ N(0,1), y_i = x + v_i with unit noise; Σ_i = [[1,1],[1,2]].
    fn two_sensor(g1: f64, g2: f64) -> UncertaintySet {
        let layout = BlockLayout::new(1, vec![1, 1]).unwrap();
        let c = SensorConstraint::new(gm(&[0.0, 0.0], &[1.0, 1.0, 1.0, 2.0]), g1, g2, 0.0);
        UncertaintySet::new(layout, vec![c.clone(), c]).unwrap()
    }

    fn nominal_assembly() -> SymMatrix {
        SymMatrix::from_row_slice(3, &[1.0, 1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 1.0, 2.0]).unwrap()
    }

    #[test]
    fn validate_ok_and_ordering() {
        assert!(two_sensor(1.0, 1.0).validate().is_ok());
        let bad = two_sensor(1.5, 1.0).validate().unwrap_err();
        assert!(bad
            .iter()
            .any(|v| v.to_string().contains("gamma1 > gamma2")));
    }

    #[test]
    fn validate_inconsistent_x() {
        let layout = BlockLayout::new(1, vec![1, 1]).unwrap();
        let a = SensorConstraint::new(gm(&[0.0, 0.0], &[1.0, 1.0, 1.0, 2.0]), 1.0, 1.0, 0.0);
        let b = SensorConstraint::new(gm(&[0.0, 0.0], &[2.0, 1.0, 1.0, 2.0]), 1.0, 1.0, 0.0);
        let v = UncertaintySet::new(layout, vec![a, b])
            .unwrap()
            .validate()
            .unwrap_err();
        assert!(v
            .iter()
            .any(|v| v.to_string().contains("inconsistent x marginal")));
    }

    #[test]
    fn validate_band_must_contain_one() {
        let v = two_sensor(1.1, 1.5).validate().unwrap_err();
        assert!(matches!(v[0], Violation::BandExcludesNominal { .. }));
    }

    #[test]
    fn residual_of_nominal_is_zero() {
        let r = feasibility_residual(&nominal_assembly(), &two_sensor(1.0, 1.0)).unwrap();
        assert!(r <= 1e-10);
    }

    #[test]
    fn residual_detects_upper_violation() {
        let r = feasibility_residual(&nominal_assembly().scale(2.0), &two_sensor(0.5, 1.0)).unwrap();
        assert!(r > 0.0);
    }

    #[test]
    fn residual_scalar_band() {
        let r = band_residual(
            &SymMatrix::from_diagonal(&[2.0]),
            &SymMatrix::from_diagonal(&[1.0]),
            0.5,
            1.5,
        )
        .unwrap();
        assert!((r - 0.5).abs() < 1e-15);
    }

    #[test]
    fn residual_dimension_mismatch() {
        assert!(feasibility_residual(&SymMatrix::identity(2), &two_sensor(1.0, 1.0)).is_err());
    }

    #[test]
    fn band_scalar_clamp() {
        let out = project_band(
            &SymMatrix::from_diagonal(&[2.0]),
            &SymMatrix::from_diagonal(&[1.0]),
            0.5,
            1.5,
        )
        .unwrap();
        assert!((out.get(0, 0) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn band_per_eigenvalue_clamp() {
        let out = project_band(
            &SymMatrix::from_diagonal(&[3.0, 0.1]),
            &SymMatrix::identity(2),
            0.5,
            2.0,
        )
        .unwrap();
        let expected = SymMatrix::from_diagonal(&[2.0, 0.5]);
        assert!(out.sub(&expected).frobenius_norm() < 1e-14);
    }

    #[test]
    fn band_fixed_point() {
        let sigma = SymMatrix::from_row_slice(2, &[2.0, 0.5, 0.5, 1.0]).unwrap();
        let x = sigma.scale(1.1);
        let out = project_band(&x, &sigma, 0.9, 1.2).unwrap();
        assert!(out.sub(&x).frobenius_norm() < 1e-12);
    }

    #[test]
    fn band_singular_sigma() {
        let r = project_band(
            &SymMatrix::identity(2),
            &SymMatrix::from_diagonal(&[1.0, 0.0]),
            0.5,
            2.0,
        );
        assert!(matches!(r, Err(Error::SingularBlock { .. })));
    }

    #[test]
    fn feasible_input_is_returned_unchanged() {
        let set = two_sensor(0.8, 1.2);
        let s = nominal_assembly();
        let p = project_feasible(&s, &set, &ProjectionOptions::default()).unwrap();
        assert_eq!(p.matrix, s);
        assert_eq!(p.cycles, 0);
    }

    #[test]
    fn scaled_block_is_pulled_back() {
        for metric in [BandMetric::Whitened, BandMetric::Euclidean] {
            let set = two_sensor(0.5, 1.0);
            let mut s = nominal_assembly().into_matrix();
            for &(r, c) in &[(0, 0), (0, 1), (1, 0), (1, 1)] {
                s[(r, c)] *= 3.0;
            }
            let s = SymMatrix::new(s).unwrap();
            let opts = ProjectionOptions {
                metric,
                ..Default::default()
            };
            let p = project_feasible(&s, &set, &opts).unwrap();
            assert!(feasibility_residual(&p.matrix, &set).unwrap() <= 1e-8);
            for w in p.residual_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{metric:?}: {:?}", p.residual_trace);
            }
        }
    }

    #[test]
    fn single_sensor_equality_band_pins_sigma() {
        let layout = BlockLayout::new(1, vec![1]).unwrap();
        let sigma = SymMatrix::from_row_slice(2, &[1.0, 1.0, 1.0, 2.0]).unwrap();
        let c = SensorConstraint::new(
            GaussianMoments::new(DVector::zeros(2), sigma.clone()).unwrap(),
            1.0,
            1.0,
            0.0,
        );
        let set = UncertaintySet::new(layout, vec![c]).unwrap();
        let start = SymMatrix::from_row_slice(2, &[-3.0, 7.0, 7.0, 0.5]).unwrap();
        let p = project_feasible(&start, &set, &ProjectionOptions::default()).unwrap();
        assert_eq!(p.matrix, sigma);
    }

    #[test]
    fn warm_projection_reaches_the_cold_limit_faster() {
        let set = two_sensor(0.8, 1.25);
        let proj = Projector::new(&set, &ProjectionOptions::default()).unwrap();
        let base = nominal_assembly();
        let bump = SymMatrix::from_row_slice(3, &[0.6, -0.4, 0.3, -0.4, 0.9, 0.5, 0.3, 0.5, -0.7]).unwrap();
        let first = base.add(&bump.scale(2.0));
        let second = base.add(&bump.scale(2.05));
        let mut state = DykstraState::default();
        proj.project_warm(&first, &mut state).unwrap();
        let warm = proj.project_warm(&second, &mut state).unwrap();
        let cold = proj.project(&second).unwrap();
        assert!(warm.matrix.sub(&cold.matrix).frobenius_norm() < 1e-6);
        assert!(warm.cycles <= cold.cycles, "warm {} cold {}", warm.cycles, cold.cycles);
    }
}
