//! Static minimax affine estimator.
//!
//! Over the uncertainty set the minimax estimator is affine,
//! `ψ*(y) = A* y + b*`, with `A* = S*_xy (S*_yy)⁻¹` and `b* = μ_x − A* μ_y`,
//! where `S*` maximizes the Schur-complement trace. The least-favorable
//! distribution is the Gaussian `N(μ, S*)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{condition, inverse_pd, JointSecondMoment, SymMatrix};
use crate::solver::{solve_worst_case, SolverConfig, SolverReport};
use crate::uncertainty::{GaussianMoments, UncertaintySet};

/// Stacks the per-sensor nominal marginals into one joint mean and second
/// moment. Cross-sensor blocks are completed as if the sensor noises were
/// conditionally independent given `x`:
/// `S_{y_i y_j} = Σ_{y_i x} Σ_xx⁻¹ Σ_{x y_j}`.
pub fn assemble_nominal_joint(set: &UncertaintySet) -> Result<(DVector<f64>, SymMatrix)> {
    let layout = set.layout();
    let n = layout.n();
    let d = layout.total();
    let sensors = set.sensors();
    for (i, c) in sensors.iter().enumerate() {
        if c.nominal.dim() != n + layout.sensor_dims()[i] {
            return Err(Error::invalid(format!(
                "sensor {i}: nominal dimension {} does not match layout",
                c.nominal.dim()
            )));
        }
    }
    let first = sensors[0].nominal.cov.matrix();
    let sigma_xx = SymMatrix::symmetrized(first.view((0, 0), (n, n)).into_owned());
    let sigma_xx_inv = inverse_pd(&sigma_xx, "Sigma_xx")?;

    let mut mu = DVector::zeros(d);
    mu.rows_mut(0, n)
        .copy_from(&sensors[0].nominal.mean.rows(0, n));
    let mut s = DMatrix::zeros(d, d);
    s.view_mut((0, 0), (n, n)).copy_from(sigma_xx.matrix());

    // Σ_{y_i x} Σ_xx⁻¹ for every sensor
    let mut regressions = Vec::with_capacity(sensors.len());
    for (i, c) in sensors.iter().enumerate() {
        let mi = layout.sensor_dims()[i];
        let off = layout.sensor_offset(i);
        let cov = c.nominal.cov.matrix();
        mu.rows_mut(off, mi).copy_from(&c.nominal.mean.rows(n, mi));
        let cross = cov.view((0, n), (n, mi)).into_owned();
        s.view_mut((0, off), (n, mi)).copy_from(&cross);
        s.view_mut((off, 0), (mi, n)).copy_from(&cross.transpose());
        s.view_mut((off, off), (mi, mi))
            .copy_from(&cov.view((n, n), (mi, mi)));
        regressions.push((cross.transpose() * sigma_xx_inv.matrix(), cross));
    }
    for i in 0..sensors.len() {
        for j in 0..sensors.len() {
            if i == j {
                continue;
            }
            let block = &regressions[i].0 * &regressions[j].1;
            let (oi, oj) = (layout.sensor_offset(i), layout.sensor_offset(j));
            s.view_mut((oi, oj), (block.nrows(), block.ncols()))
                .copy_from(&block);
        }
    }
    Ok((mu, SymMatrix::symmetrized(s)))
}

/// `ψ(y) = A y + b` together with the least-favorable second moment it was
/// derived from.
#[derive(Debug, Clone)]
pub struct AffineEstimator {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub worst_case_mse: f64,
    pub s_star: JointSecondMoment,
    pub mu: DVector<f64>,
}

impl AffineEstimator {
    /// Builds the optimal affine rule for a given second moment and mean.
    pub fn from_second_moment(s_star: JointSecondMoment, mu: DVector<f64>) -> Result<Self> {
        let layout = s_star.layout();
        if mu.len() != layout.total() {
            return Err(Error::invalid("mean dimension does not match layout"));
        }
        let cond = condition(&s_star, 0.0)?;
        let n = layout.n();
        let mu_x = mu.rows(0, n).into_owned();
        let mu_y = mu.rows(n, layout.m_total()).into_owned();
        let b = mu_x - &cond.gain * mu_y;
        Ok(AffineEstimator {
            a: cond.gain,
            b,
            worst_case_mse: cond.covariance.trace(),
            s_star,
            mu,
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.a.ncols()
    }

    /// `A y + b`.
    pub fn estimate(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.m() {
            return Err(Error::invalid(format!(
                "measurement has dimension {}, estimator expects {}",
                y.len(),
                self.m()
            )));
        }
        Ok(&self.a * y + &self.b)
    }

    /// Posterior covariance `S*_xx − S*_xy (S*_yy)⁻¹ S*_yx`.
    pub fn posterior_covariance(&self) -> Result<SymMatrix> {
        Ok(condition(&self.s_star, 0.0)?.covariance)
    }

    /// The least-favorable Gaussian `N(μ, S*)`.
    pub fn least_favorable(&self) -> GaussianMoments {
        GaussianMoments {
            mean: self.mu.clone(),
            cov: self.s_star.matrix().clone(),
        }
    }

    /// Closed-form MSE of this rule when `z ~ q`:
    /// `Tr(S_xx − A S_yx − S_xy Aᵀ + A S_yy Aᵀ) + ‖c_x − A c_y − b‖²`.
    pub fn evaluate_mse(&self, q: &GaussianMoments) -> Result<f64> {
        affine_mse(&self.a, &self.b, q)
    }

    pub fn to_document(&self) -> EstimatorDocument {
        EstimatorDocument {
            n: self.n(),
            m: self.s_star.layout().sensor_dims().to_vec(),
            mu: self.mu.iter().copied().collect(),
            a: self.a.row_iter().map(|r| r.iter().copied().collect()).collect(),
            b: self.b.iter().copied().collect(),
            worst_case_mse: self.worst_case_mse,
        }
    }
}

/// MSE of an arbitrary affine rule under a Gaussian law of `z`.
pub fn affine_mse(a: &DMatrix<f64>, b: &DVector<f64>, q: &GaussianMoments) -> Result<f64> {
    let n = a.nrows();
    let m = a.ncols();
    if q.dim() != n + m || b.len() != n {
        return Err(Error::invalid(format!(
            "distribution dimension {} does not match estimator {n}x{m}",
            q.dim()
        )));
    }
    let s = q.cov.matrix();
    let s_xx = s.view((0, 0), (n, n));
    let s_xy = s.view((0, n), (n, m));
    let s_yy = s.view((n, n), (m, m));
    let a_syx = a * s_xy.transpose();
    let quad = a * s_yy * a.transpose();
    let cov_term = s_xx.trace() - 2.0 * a_syx.trace() + quad.trace();
    let bias = q.mean.rows(0, n) - a * q.mean.rows(n, m) - b;
    Ok(cov_term + bias.norm_squared())
}

/// JSON form of an estimator: `{n, m[], mu[], A[][], b[], worst_case_mse}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorDocument {
    pub n: usize,
    pub m: Vec<usize>,
    pub mu: Vec<f64>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub worst_case_mse: f64,
}

impl EstimatorDocument {
    pub fn estimate(&self, y: &[f64]) -> Result<Vec<f64>> {
        let m: usize = self.m.iter().sum();
        if y.len() != m || self.a.len() != self.n || self.b.len() != self.n {
            return Err(Error::invalid("estimator document dimensions are inconsistent"));
        }
        Ok(self
            .a
            .iter()
            .zip(&self.b)
            .map(|(row, bi)| row.iter().zip(y).map(|(a, y)| a * y).sum::<f64>() + bi)
            .collect())
    }
}

/// Solves the static minimax problem from the nominal assembly.
pub fn solve_static_estimator(set: &UncertaintySet, cfg: &SolverConfig) -> Result<AffineEstimator> {
    Ok(solve_static_estimator_from(set, None, cfg)?.0)
}

/// As [`solve_static_estimator`], optionally warm-starting the solver from
/// `start` (projected onto the set first if needed).
pub fn solve_static_estimator_from(
    set: &UncertaintySet,
    start: Option<&SymMatrix>,
    cfg: &SolverConfig,
) -> Result<(AffineEstimator, SolverReport)> {
    set.ensure_valid()?;
    let (mu, nominal) = assemble_nominal_joint(set)?;
    let s0 = start.unwrap_or(&nominal);
    let (s_star, report) = solve_worst_case(set, s0, cfg)?;
    let est = AffineEstimator::from_second_moment(s_star, mu)?;
    Ok((est, report))
}
