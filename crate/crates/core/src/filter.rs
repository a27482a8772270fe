//! Recursive filters: the robust filter, Kalman baselines and covariance
//! intersection.
//!
//! All filters share the same prediction from `(x̂_{t−1}, V_{t−1})`. The
//! robust filter then forms, per sensor, the pseudo-nominal joint Gaussian of
//! `(x_t, y_tⁱ)`, solves the static minimax problem over the band set around
//! those marginals and conditions on `y_t` under the least-favorable joint.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimator::solve_static_estimator_from;
use crate::linalg::{block_diag, sqrt_psd, sym_eig, BlockLayout, SymMatrix};
use crate::solver::SolverConfig;
use crate::uncertainty::{GaussianMoments, SensorConstraint, UncertaintySet};

/// Tolerance for "PSD" on filter covariances, relative to their scale.
const PSD_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    pub h: DMatrix<f64>,
    pub r: SymMatrix,
}

/// `x_t = F x_{t−1} + G w`, `y_tⁱ = H_i x_t + vⁱ`, `w ~ N(0, Q)`,
/// `vⁱ ~ N(0, R_i)`, `x_0 ~ N(x̂_0, V_0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub q: SymMatrix,
    pub sensors: Vec<SensorModel>,
    pub x0: DVector<f64>,
    pub v0: SymMatrix,
}

fn check_psd(m: &SymMatrix, what: &str) -> Result<()> {
    let eig = sym_eig(m)?;
    if eig.min_value() < -PSD_SLACK * eig.max_value().abs().max(1.0) {
        return Err(Error::invalid(format!(
            "{what} is not PSD (min eigenvalue {:e})",
            eig.min_value()
        )));
    }
    Ok(())
}

impl StateSpaceModel {
    pub fn new(
        f: DMatrix<f64>,
        g: DMatrix<f64>,
        q: SymMatrix,
        sensors: Vec<SensorModel>,
        x0: DVector<f64>,
        v0: SymMatrix,
    ) -> Result<Self> {
        let n = f.nrows();
        if n == 0 || f.ncols() != n {
            return Err(Error::invalid("F must be square and non-empty"));
        }
        if g.nrows() != n || g.ncols() != q.dim() {
            return Err(Error::invalid(format!(
                "G is {}x{}, expected {n}x{}",
                g.nrows(),
                g.ncols(),
                q.dim()
            )));
        }
        if x0.len() != n || v0.dim() != n {
            return Err(Error::invalid("x0 and V0 must match the state dimension"));
        }
        if sensors.is_empty() {
            return Err(Error::invalid("at least one sensor is required"));
        }
        for (i, s) in sensors.iter().enumerate() {
            if s.h.ncols() != n || s.h.nrows() == 0 || s.r.dim() != s.h.nrows() {
                return Err(Error::invalid(format!(
                    "sensor {i}: H is {}x{} and R is {}x{}, state dimension {n}",
                    s.h.nrows(),
                    s.h.ncols(),
                    s.r.dim(),
                    s.r.dim()
                )));
            }
            check_psd(&s.r, &format!("R of sensor {i}"))?;
        }
        check_psd(&q, "Q")?;
        check_psd(&v0, "V0")?;
        let all_finite = f.iter().chain(g.iter()).chain(x0.iter()).all(|v| v.is_finite())
            && sensors.iter().all(|s| s.h.iter().all(|v| v.is_finite()));
        if !all_finite {
            return Err(Error::invalid("model matrices must be finite"));
        }
        Ok(StateSpaceModel { f, g, q, sensors, x0, v0 })
    }

    pub fn n(&self) -> usize {
        self.f.nrows()
    }

    pub fn sensor_dims(&self) -> Vec<usize> {
        self.sensors.iter().map(|s| s.h.nrows()).collect()
    }

    pub fn m_total(&self) -> usize {
        self.sensors.iter().map(|s| s.h.nrows()).sum()
    }

    pub fn layout(&self) -> BlockLayout {
        BlockLayout::new(self.n(), self.sensor_dims()).expect("validated model")
    }

    /// `[H_1; …; H_p]`.
    pub fn stacked_h(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.m_total(), self.n());
        let mut at = 0;
        for s in &self.sensors {
            h.rows_mut(at, s.h.nrows()).copy_from(&s.h);
            at += s.h.nrows();
        }
        h
    }

    /// `blockdiag(R_1, …, R_p)`.
    pub fn stacked_r(&self) -> SymMatrix {
        let blocks: Vec<&DMatrix<f64>> = self.sensors.iter().map(|s| s.r.matrix()).collect();
        SymMatrix::symmetrized(block_diag(&blocks))
    }

    /// The model seen by sensor `i` alone.
    pub fn single_sensor(&self, i: usize) -> Result<StateSpaceModel> {
        let s = self
            .sensors
            .get(i)
            .ok_or_else(|| Error::invalid(format!("sensor {i} out of range")))?;
        Ok(StateSpaceModel {
            sensors: vec![s.clone()],
            ..self.clone()
        })
    }
}

/// Posterior `N(x̂_{t|t}, V_{t|t})`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub xhat: DVector<f64>,
    pub v: SymMatrix,
    pub t: usize,
}

impl FilterState {
    pub fn initial(model: &StateSpaceModel) -> Self {
        FilterState {
            xhat: model.x0.clone(),
            v: model.v0.clone(),
            t: 0,
        }
    }
}

/// Predicted state covariance `F V Fᵀ + G Q Gᵀ`.
pub fn predict_covariance(model: &StateSpaceModel, v: &SymMatrix) -> SymMatrix {
    let p = &model.f * v.matrix() * model.f.transpose()
        + &model.g * model.q.matrix() * model.g.transpose();
    SymMatrix::symmetrized(p)
}

fn check_prev(model: &StateSpaceModel, prev: &FilterState) -> Result<()> {
    if prev.xhat.len() != model.n() || prev.v.dim() != model.n() {
        return Err(Error::invalid("filter state does not match the model dimension"));
    }
    Ok(())
}

/// Joint Gaussian of `(x_t, y_tⁱ)` given the previous posterior:
/// `Σ_xx = F V Fᵀ + G Q Gᵀ`, `Σ_xy = Σ_xx H_iᵀ`, `Σ_yy = H_i Σ_xx H_iᵀ + R_i`.
pub fn predict_sensor(model: &StateSpaceModel, prev: &FilterState, i: usize) -> Result<GaussianMoments> {
    check_prev(model, prev)?;
    let s = model
        .sensors
        .get(i)
        .ok_or_else(|| Error::invalid(format!("sensor {i} out of range")))?;
    let n = model.n();
    let mi = s.h.nrows();
    let mu_x = &model.f * &prev.xhat;
    let mu_y = &s.h * &mu_x;
    let p = predict_covariance(model, &prev.v);
    let cross = p.matrix() * s.h.transpose();
    let yy = &s.h * &cross + s.r.matrix();
    let mut cov = DMatrix::zeros(n + mi, n + mi);
    cov.view_mut((0, 0), (n, n)).copy_from(p.matrix());
    cov.view_mut((0, n), (n, mi)).copy_from(&cross);
    cov.view_mut((n, 0), (mi, n)).copy_from(&cross.transpose());
    cov.view_mut((n, n), (mi, mi)).copy_from(&yy);
    let mut mean = DVector::zeros(n + mi);
    mean.rows_mut(0, n).copy_from(&mu_x);
    mean.rows_mut(n, mi).copy_from(&mu_y);
    Ok(GaussianMoments {
        mean,
        cov: SymMatrix::symmetrized(cov),
    })
}

/// Same joint as [`predict_sensor`], built from the stacked factors
/// `[F; H_i F] V [F; H_i F]ᵀ + L Lᵀ` with
/// `L = [[G Q^{1/2}, 0], [H_i G Q^{1/2}, R_i^{1/2}]]`.
pub fn predict_sensor_factored(
    model: &StateSpaceModel,
    prev: &FilterState,
    i: usize,
) -> Result<GaussianMoments> {
    check_prev(model, prev)?;
    let s = model
        .sensors
        .get(i)
        .ok_or_else(|| Error::invalid(format!("sensor {i} out of range")))?;
    let n = model.n();
    let mi = s.h.nrows();
    let r = model.q.dim();
    let mut top = DMatrix::zeros(n + mi, n);
    top.view_mut((0, 0), (n, n)).copy_from(&model.f);
    top.view_mut((n, 0), (mi, n)).copy_from(&(&s.h * &model.f));
    let gq = &model.g * sqrt_psd(&model.q)?.matrix();
    let mut l = DMatrix::zeros(n + mi, r + mi);
    l.view_mut((0, 0), (n, r)).copy_from(&gq);
    l.view_mut((n, 0), (mi, r)).copy_from(&(&s.h * &gq));
    l.view_mut((n, r), (mi, mi)).copy_from(sqrt_psd(&s.r)?.matrix());
    let cov = &top * prev.v.matrix() * top.transpose() + &l * l.transpose();
    Ok(GaussianMoments {
        mean: &top * &prev.xhat,
        cov: SymMatrix::symmetrized(cov),
    })
}

/// Band parameters of one sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
}

impl Band {
    pub fn new(gamma1: f64, gamma2: f64) -> Self {
        Band { gamma1, gamma2, gamma3: 0.0 }
    }

    /// `γ1 = γ2 = 1`: the nominal marginal only.
    pub fn nominal() -> Self {
        Band::new(1.0, 1.0)
    }
}

/// The band set around the pseudo-nominal marginals of step `prev.t + 1`.
pub fn step_uncertainty_set(
    model: &StateSpaceModel,
    prev: &FilterState,
    bands: &[Band],
) -> Result<UncertaintySet> {
    if bands.len() != model.sensors.len() {
        return Err(Error::invalid(format!(
            "{} bands for {} sensors",
            bands.len(),
            model.sensors.len()
        )));
    }
    let sensors = bands
        .iter()
        .enumerate()
        .map(|(i, b)| {
            Ok(SensorConstraint::new(
                predict_sensor(model, prev, i)?,
                b.gamma1,
                b.gamma2,
                b.gamma3,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    UncertaintySet::new(model.layout(), sensors)
}

fn check_measurement(y: &DVector<f64>, m: usize) -> Result<()> {
    if y.len() != m {
        return Err(Error::invalid(format!(
            "measurement has dimension {}, expected {m}",
            y.len()
        )));
    }
    Ok(())
}

/// Symmetrizes a posterior covariance after checking it is PSD.
fn posterior(v: SymMatrix) -> Result<SymMatrix> {
    let eig = sym_eig(&v)?;
    if eig.min_value() < -PSD_SLACK * eig.max_value().abs().max(1.0) {
        return Err(Error::singular("posterior covariance", eig.min_value()));
    }
    Ok(v)
}

/// Robust update result: the new state and the least-favorable joint second
/// moment used for it.
#[derive(Debug, Clone)]
pub struct RobustStep {
    pub state: FilterState,
    pub s_star: SymMatrix,
}

/// One step of the robust filter from scratch (no warm start).
pub fn mdrkf_step(
    model: &StateSpaceModel,
    prev: &FilterState,
    y: &DVector<f64>,
    bands: &[Band],
    cfg: &SolverConfig,
) -> Result<FilterState> {
    Ok(mdrkf_step_from(model, prev, y, bands, cfg, None)?.state)
}

/// [`mdrkf_step`] with an optional warm start for the solver, typically the
/// previous step's `S*`.
pub fn mdrkf_step_from(
    model: &StateSpaceModel,
    prev: &FilterState,
    y: &DVector<f64>,
    bands: &[Band],
    cfg: &SolverConfig,
    warm: Option<&SymMatrix>,
) -> Result<RobustStep> {
    let t = prev.t + 1;
    let run = || -> Result<RobustStep> {
        check_measurement(y, model.m_total())?;
        let set = step_uncertainty_set(model, prev, bands)?;
        let warm = warm.filter(|w| w.dim() == model.layout().total());
        let (est, _) = solve_static_estimator_from(&set, warm, cfg)?;
        let xhat = est.estimate(y)?;
        let v = posterior(est.posterior_covariance()?)?;
        Ok(RobustStep {
            state: FilterState { xhat, v, t },
            s_star: est.s_star.matrix().clone(),
        })
    };
    run().map_err(|e| e.at_step(t))
}

/// Gain and covariance of a Kalman update with prior covariance `p`, using the
/// Joseph form `(I − K H) P (I − K H)ᵀ + K R Kᵀ`.
pub(crate) fn kalman_gain(
    p: &SymMatrix,
    h: &DMatrix<f64>,
    r: &SymMatrix,
) -> Result<(DMatrix<f64>, SymMatrix)> {
    let s = SymMatrix::symmetrized(h * p.matrix() * h.transpose() + r.matrix());
    let chol = Cholesky::new(s.matrix().clone())
        .ok_or_else(|| Error::singular("innovation covariance", sym_eig(&s).map(|e| e.min_value()).unwrap_or(f64::NAN)))?;
    let ph = p.matrix() * h.transpose();
    let k = chol.solve(&ph.transpose()).transpose();
    let n = p.dim();
    let a = DMatrix::identity(n, n) - &k * h;
    let v = &a * p.matrix() * a.transpose() + &k * r.matrix() * k.transpose();
    Ok((k, posterior(SymMatrix::symmetrized(v))?))
}

/// Centralized Kalman filter step on the stacked measurement.
pub fn kf_step(model: &StateSpaceModel, prev: &FilterState, y: &DVector<f64>) -> Result<FilterState> {
    let t = prev.t + 1;
    let run = || -> Result<FilterState> {
        check_prev(model, prev)?;
        check_measurement(y, model.m_total())?;
        let h = model.stacked_h();
        let p = predict_covariance(model, &prev.v);
        let (k, v) = kalman_gain(&p, &h, &model.stacked_r())?;
        let x_pred = &model.f * &prev.xhat;
        let xhat = &x_pred + &k * (y - &h * &x_pred);
        Ok(FilterState { xhat, v, t })
    };
    run().map_err(|e| e.at_step(t))
}

/// Kalman filter step using sensor `i` only; `y_i` is that sensor's reading.
pub fn local_kf_step(
    model: &StateSpaceModel,
    i: usize,
    prev: &FilterState,
    y_i: &DVector<f64>,
) -> Result<FilterState> {
    kf_step(&model.single_sensor(i)?, prev, y_i)
}

/// Covariance-intersection fusion of local estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct CiFusion {
    pub xhat: DVector<f64>,
    pub v: SymMatrix,
    pub omega: Vec<f64>,
}

/// Simplex resolution of the weight grid.
const CI_GRID: f64 = 1e-3;
/// Largest number of estimates handled by the exhaustive grid.
const CI_GRID_MAX: usize = 3;

/// Trace of the inverse of a small SPD matrix stored row-major, or `None`
/// when it is not numerically SPD. Uses `Tr(M⁻¹) = ‖L⁻¹‖²_F`.
fn trace_inverse(m: &[f64], n: usize, work: &mut [f64]) -> Option<f64> {
    let (l, rest) = work.split_at_mut(n * n);
    l.fill(0.0);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = m[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(sum > 0.0) {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    // columns of L⁻¹ by forward substitution
    let mut total = 0.0;
    let col = &mut rest[..n];
    for c in 0..n {
        for i in 0..n {
            let mut sum = if i == c { 1.0 } else { 0.0 };
            for k in c..i {
                sum -= l[i * n + k] * col[k];
            }
            col[i] = if i < c { 0.0 } else { sum / l[i * n + i] };
            total += col[i] * col[i];
        }
    }
    Some(total)
}

/// Minimizes `Tr((Σ ωᵢ Jᵢ)⁻¹)` over the simplex, given information matrices.
pub(crate) struct CiWeights {
    infos: Vec<Vec<f64>>,
    n: usize,
}

impl CiWeights {
    pub(crate) fn new(covariances: &[&SymMatrix]) -> Result<Self> {
        if covariances.len() < 2 {
            return Err(Error::invalid("covariance intersection needs at least two estimates"));
        }
        let n = covariances[0].dim();
        let mut infos = Vec::with_capacity(covariances.len());
        for (i, v) in covariances.iter().enumerate() {
            if v.dim() != n {
                return Err(Error::invalid("estimates have different dimensions"));
            }
            let chol = Cholesky::new(v.matrix().clone()).ok_or_else(|| {
                Error::singular(
                    format!("covariance of estimate {i}"),
                    sym_eig(v).map(|e| e.min_value()).unwrap_or(f64::NAN),
                )
            })?;
            let j = chol.inverse();
            infos.push(j.transpose().iter().copied().collect());
        }
        Ok(CiWeights { infos, n })
    }

    pub(crate) fn objective(&self, omega: &[f64], buf: &mut Vec<f64>, work: &mut [f64]) -> f64 {
        buf.clear();
        buf.resize(self.n * self.n, 0.0);
        for (w, j) in omega.iter().zip(&self.infos) {
            if *w != 0.0 {
                for (b, v) in buf.iter_mut().zip(j) {
                    *b += w * v;
                }
            }
        }
        trace_inverse(buf, self.n, work).unwrap_or(f64::INFINITY)
    }

    pub(crate) fn optimize(&self) -> Vec<f64> {
        let p = self.infos.len();
        let mut buf = Vec::new();
        let mut work = vec![0.0; self.n * self.n + self.n];
        let mut best = vec![1.0 / p as f64; p];
        let mut best_val = self.objective(&best, &mut buf, &mut work);
        if p <= CI_GRID_MAX {
            let steps = (1.0 / CI_GRID).round() as usize;
            let mut omega = vec![0.0; p];
            let mut consider = |omega: &[f64], best: &mut Vec<f64>, best_val: &mut f64| {
                let val = self.objective(omega, &mut buf, &mut work);
                if val < *best_val {
                    *best_val = val;
                    best.copy_from_slice(omega);
                }
            };
            if p == 2 {
                for a in 0..=steps {
                    omega[0] = a as f64 / steps as f64;
                    omega[1] = (steps - a) as f64 / steps as f64;
                    consider(&omega, &mut best, &mut best_val);
                }
            } else {
                for a in 0..=steps {
                    for b in 0..=steps - a {
                        omega[0] = a as f64 / steps as f64;
                        omega[1] = b as f64 / steps as f64;
                        omega[2] = (steps - a - b) as f64 / steps as f64;
                        consider(&omega, &mut best, &mut best_val);
                    }
                }
            }
        }
        self.refine(best, best_val)
    }

    /// Pairwise exchange of weight by golden-section line search until no
    /// pass improves; the objective is convex in `ω`.
    fn refine(&self, mut omega: Vec<f64>, mut val: f64) -> Vec<f64> {
        let p = omega.len();
        let mut buf = Vec::new();
        let mut work = vec![0.0; self.n * self.n + self.n];
        let golden = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..50 {
            let mut improved = false;
            for i in 0..p {
                for j in i + 1..p {
                    // move δ from j to i, δ ∈ [−ω_i, ω_j]
                    let (mut lo, mut hi) = (-omega[i], omega[j]);
                    if hi - lo <= 0.0 {
                        continue;
                    }
                    let mut at = |delta: f64| {
                        let mut w = omega.clone();
                        w[i] += delta;
                        w[j] -= delta;
                        self.objective(&w, &mut buf, &mut work)
                    };
                    let mut c = hi - golden * (hi - lo);
                    let mut d = lo + golden * (hi - lo);
                    let (mut fc, mut fd) = (at(c), at(d));
                    for _ in 0..80 {
                        if fc < fd {
                            hi = d;
                            d = c;
                            fd = fc;
                            c = hi - golden * (hi - lo);
                            fc = at(c);
                        } else {
                            lo = c;
                            c = d;
                            fc = fd;
                            d = lo + golden * (hi - lo);
                            fd = at(d);
                        }
                    }
                    let mut cands = [(lo, at(lo)), (hi, at(hi)), (0.5 * (lo + hi), 0.0)];
                    cands[2].1 = at(cands[2].0);
                    let (delta, f) = cands
                        .into_iter()
                        .fold((0.0, val), |acc, c| if c.1 < acc.1 { c } else { acc });
                    if f < val - 1e-15 * val.abs() {
                        omega[i] += delta;
                        omega[j] -= delta;
                        omega[i] = omega[i].max(0.0);
                        omega[j] = omega[j].max(0.0);
                        val = f;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        omega
    }
}

/// Fuses `(x̂_i, V_i)` by `V⁻¹ = Σ ωᵢ Vᵢ⁻¹`, `x̂ = V Σ ωᵢ Vᵢ⁻¹ x̂ᵢ`, with `ω` on
/// the simplex minimizing `Tr V`: a 10⁻³ grid for up to three estimates,
/// then pairwise line searches.
pub fn ci_fuse(estimates: &[(DVector<f64>, SymMatrix)]) -> Result<CiFusion> {
    let covs: Vec<&SymMatrix> = estimates.iter().map(|(_, v)| v).collect();
    let weights = CiWeights::new(&covs)?;
    let n = weights.n;
    if estimates.iter().any(|(x, _)| x.len() != n) {
        return Err(Error::invalid("estimate and covariance dimensions differ"));
    }
    let omega = weights.optimize();
    let (v, gains) = ci_combination(&weights, &omega)?;
    let mut xhat = DVector::zeros(n);
    for (g, (x, _)) in gains.iter().zip(estimates) {
        xhat += g * x;
    }
    Ok(CiFusion { xhat, v, omega })
}

/// Fused covariance `V` and the per-estimate gains `V ωᵢ Jᵢ`.
pub(crate) fn ci_combination(
    weights: &CiWeights,
    omega: &[f64],
) -> Result<(SymMatrix, Vec<DMatrix<f64>>)> {
    let n = weights.n;
    let infos: Vec<DMatrix<f64>> = weights
        .infos
        .iter()
        .map(|j| DMatrix::from_row_slice(n, n, j))
        .collect();
    let mut total = DMatrix::zeros(n, n);
    for (w, j) in omega.iter().zip(&infos) {
        total += j * *w;
    }
    let v = Cholesky::new(total)
        .ok_or_else(|| Error::singular("fused information", f64::NAN))?
        .inverse();
    let gains = omega.iter().zip(&infos).map(|(w, j)| &v * j * *w).collect();
    Ok((SymMatrix::symmetrized(v), gains))
}
