//! Least-favorable second moment by projected supergradient ascent.
//!
//! The objective `f(S) = Tr(S_xx − S_xy S_yy⁻¹ S_yx)` is concave, and for the
//! inner minimizer `A* = S_xy S_yy⁻¹` the matrix
//! `G = [[I, −A*], [−A*ᵀ, A*ᵀA*]]` is a supergradient (Danskin). Each
//! iteration takes `S ← P(S + η_k G)` with `P` the Dykstra projection onto the
//! uncertainty set, halving `η_k` whenever the step would lose objective.
//!
//! The same problem can be written as the SDP
//! `min Tr T  s.t.  [[T, S_xy], [S_yx, S_yy]] ⪰ 0` jointly with the band
//! constraints on `S`; that epigraph form is what an interior-point solver
//! would take, and is not used here.

mod barrier;
pub mod oracle;

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estimator::assemble_nominal_joint;
use crate::linalg::{condition, sym_eig, JointSecondMoment, SymMatrix};
use crate::uncertainty::{BandMetric, DykstraState, ProjectionOptions, Projector, UncertaintySet};

pub use oracle::{brute_force_worst_case, GridSpec, OracleResult};

/// Relative-change window for the stopping rule.
const STOP_WINDOW: usize = 5;
const MAX_BACKTRACKS: usize = 40;
/// Allowed objective loss per accepted step, relative to `max(1, |f|)`.
const ASCENT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    Fixed(f64),
    /// `η_k = η₀ / (k + 1)^power`. With `eta0: None`, `η₀ = 0.5 / ‖G(S₀)‖_F`.
    Diminishing { eta0: Option<f64>, power: f64 },
    /// Doubles the last accepted step before each line search, halving on
    /// loss. With `eta0: None`, `η₀ = ‖S₀‖_F / ‖G(S₀)‖_F`.
    Adaptive { eta0: Option<f64> },
}

impl StepRule {
    fn step(&self, eta0: f64, k: usize) -> f64 {
        match *self {
            StepRule::Fixed(_) | StepRule::Adaptive { .. } => eta0,
            StepRule::Diminishing { power, .. } => eta0 / ((k + 1) as f64).powf(power),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverMethod {
    /// Log-barrier Newton path; falls back to projected ascent when the set
    /// has no strictly feasible scaled nominal point.
    #[default]
    Barrier,
    ProjectedAscent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub method: SolverMethod,
    pub max_iter: usize,
    /// Stop when the objective changes by less than this (relative) over the
    /// last five iterations.
    pub obj_tol: f64,
    pub feas_tol: f64,
    pub step_rule: StepRule,
    /// Lower bound kept on `λmin(S)` for every iterate, and on `λmin(S_yy)`
    /// for the returned `S*`.
    pub pd_floor: f64,
    pub max_projection_cycles: usize,
    pub band_metric: BandMetric,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: SolverMethod::default(),
            max_iter: 2000,
            obj_tol: 1e-10,
            feas_tol: 1e-8,
            step_rule: StepRule::Diminishing {
                eta0: None,
                power: 0.5,
            },
            pd_floor: 1e-7,
            max_projection_cycles: 5000,
            band_metric: BandMetric::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::invalid("solver max_iter must be at least 1"));
        }
        if !(self.obj_tol > 0.0 && self.feas_tol > 0.0 && self.pd_floor > 0.0) {
            return Err(Error::invalid("solver tolerances must be positive"));
        }
        match self.step_rule {
            StepRule::Fixed(eta) if !(eta > 0.0) => {
                Err(Error::invalid("fixed step must be positive"))
            }
            StepRule::Diminishing { eta0, power } => {
                if eta0.is_some_and(|e| !(e > 0.0)) {
                    return Err(Error::invalid("eta0 must be positive"));
                }
                if !(0.5..=1.0).contains(&power) {
                    return Err(Error::invalid("diminishing power must lie in [0.5, 1]"));
                }
                Ok(())
            }
            StepRule::Adaptive { eta0 } if eta0.is_some_and(|e| !(e > 0.0)) => {
                Err(Error::invalid("eta0 must be positive"))
            }
            _ => Ok(()),
        }
    }

    fn projection(&self, eig_floor: f64) -> ProjectionOptions {
        ProjectionOptions {
            max_cycles: self.max_projection_cycles,
            tol: self.feas_tol,
            metric: self.band_metric,
            eig_floor,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolverReport {
    pub iterations: usize,
    pub objective: f64,
    pub feasibility_residual: f64,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
    pub residual_trace: Vec<f64>,
    /// Total Dykstra cycles spent across all projections.
    pub projection_cycles: usize,
}

impl SolverReport {
    /// CSV with columns `iter,objective,feas_residual`.
    pub fn write_trace_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "iter,objective,feas_residual")?;
        for (k, (f, r)) in self
            .objective_trace
            .iter()
            .zip(&self.residual_trace)
            .enumerate()
        {
            writeln!(w, "{k},{f},{r}")?;
        }
        Ok(())
    }
}

fn supergradient_from_gain(n: usize, gain: &DMatrix<f64>) -> SymMatrix {
    let m = gain.ncols();
    let mut g = DMatrix::zeros(n + m, n + m);
    g.view_mut((0, 0), (n, n)).fill_with_identity();
    g.view_mut((0, n), (n, m)).copy_from(&(-gain));
    g.view_mut((n, 0), (m, n)).copy_from(&(-gain.transpose()));
    g.view_mut((n, n), (m, m))
        .copy_from(&(gain.transpose() * gain));
    SymMatrix::symmetrized(g)
}

/// Supergradient `[[I, −A*], [−A*ᵀ, A*ᵀA*]]` of the Schur-complement trace at
/// `s`. Fails with `SingularBlock` when `S_yy` is singular.
pub fn supergradient(s: &JointSecondMoment) -> Result<SymMatrix> {
    let cond = condition(s, 0.0)?;
    Ok(supergradient_from_gain(s.layout().n(), &cond.gain))
}

/// Objective and supergradient with `S_yy` lifted to at least `floor`.
fn guarded(s: &JointSecondMoment, floor: f64) -> Result<(f64, SymMatrix)> {
    let cond = condition(s, floor)?;
    Ok((
        cond.covariance.trace(),
        supergradient_from_gain(s.layout().n(), &cond.gain),
    ))
}

/// Maximizes the Schur-complement trace over the uncertainty set, starting
/// from `s0` (projected first when it is not feasible to `feas_tol`).
pub fn solve_worst_case(
    set: &UncertaintySet,
    s0: &SymMatrix,
    cfg: &SolverConfig,
) -> Result<(JointSecondMoment, SolverReport)> {
    cfg.validate()?;
    let layout = set.layout().clone();
    if s0.dim() != layout.total() {
        return Err(Error::invalid(format!(
            "start has dimension {} but the layout has {}",
            s0.dim(),
            layout.total()
        )));
    }
    // Iterates are kept in `{S ⪰ pd_floor·I}` so the objective stays smooth.
    if cfg.method == SolverMethod::Barrier {
        if let Some(out) = barrier::solve(set, cfg.obj_tol)? {
            let s = pull_interior(&out.s, set, cfg.pd_floor)?;
            let s_star = JointSecondMoment::new(layout, s)?;
            let report = SolverReport {
                iterations: out.newton_steps,
                objective: condition(&s_star, 0.0)?.covariance.trace(),
                feasibility_residual: Projector::new(set, &cfg.projection(0.0))?
                    .residual(s_star.matrix())?,
                converged: out.converged,
                residual_trace: vec![0.0; out.trace.len()],
                objective_trace: out.trace,
                projection_cycles: 0,
            };
            return Ok((s_star, report));
        }
    }
    let projector = Projector::new(set, &cfg.projection(cfg.pd_floor))?;
    let mut report = SolverReport::default();

    let mut dykstra = DykstraState::default();
    let start = projector.project_warm(s0, &mut dykstra)?;
    report.projection_cycles += start.cycles;
    let mut s = start.matrix;
    let mut residual = start.residual;

    let joint = |m: &SymMatrix| JointSecondMoment::new(layout.clone(), m.clone());
    let (mut f, mut g) = guarded(&joint(&s)?, cfg.pd_floor)?;
    if !f.is_finite() {
        return Err(Error::NonFiniteObjective { iteration: 0 });
    }
    let eta0 = match cfg.step_rule {
        StepRule::Fixed(eta) => eta,
        StepRule::Diminishing { eta0: Some(e), .. } => e,
        StepRule::Diminishing { eta0: None, .. } => 0.5 / g.frobenius_norm(),
        StepRule::Adaptive { eta0: Some(e) } => e,
        StepRule::Adaptive { eta0: None } => s.frobenius_norm() / g.frobenius_norm(),
    };
    let adaptive = matches!(cfg.step_rule, StepRule::Adaptive { .. });
    let mut last_eta = eta0 / 2.0;
    report.objective_trace.push(f);
    report.residual_trace.push(residual);

    for k in 0..cfg.max_iter {
        let mut eta = if adaptive {
            2.0 * last_eta
        } else {
            cfg.step_rule.step(eta0, k)
        };
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let candidate = s.add(&g.scale(eta));
            let mut trial = dykstra.clone();
            let p = projector.project_warm(&candidate, &mut trial)?;
            report.projection_cycles += p.cycles;
            let (fc, gc) = guarded(&joint(&p.matrix)?, cfg.pd_floor)?;
            if !fc.is_finite() {
                return Err(Error::NonFiniteObjective { iteration: k + 1 });
            }
            if fc >= f - ASCENT_SLACK * f.abs().max(1.0) {
                accepted = Some((p, fc, gc, trial));
                last_eta = eta;
                break;
            }
            eta *= 0.5;
        }
        report.iterations = k + 1;
        let Some((p, fc, gc, trial)) = accepted else {
            // no step length improves the objective
            report.converged = true;
            break;
        };
        s = p.matrix;
        dykstra = trial;
        residual = p.residual;
        f = fc;
        g = gc;
        report.objective_trace.push(f);
        report.residual_trace.push(residual);
        let len = report.objective_trace.len();
        if len > STOP_WINDOW {
            let before = report.objective_trace[len - 1 - STOP_WINDOW];
            if (f - before).abs() <= cfg.obj_tol * f.abs().max(f64::MIN_POSITIVE) {
                report.converged = true;
                break;
            }
        }
    }

    let s = pull_interior(&s, set, cfg.pd_floor)?;
    let s_star = joint(&s)?;
    report.objective = condition(&s_star, 0.0)?.covariance.trace();
    report.feasibility_residual = Projector::new(set, &cfg.projection(0.0))?.residual(&s)?;
    Ok((s_star, report))
}

/// Moves `s` toward the nominal assembly just far enough that
/// `λmin(S_yy) ≥ floor`. Both endpoints are feasible, so the mix is too, and
/// by concavity the objective drops by at most the mixing weight times the gap.
fn pull_interior(s: &SymMatrix, set: &UncertaintySet, floor: f64) -> Result<SymMatrix> {
    let n = set.layout().n();
    let m = set.layout().m_total();
    let yy = |x: &SymMatrix| SymMatrix::symmetrized(x.matrix().view((n, n), (m, m)).into_owned());
    let lambda = sym_eig(&yy(s))?.min_value();
    if lambda >= floor {
        return Ok(s.clone());
    }
    let (_, nominal) = assemble_nominal_joint(set)?;
    let lambda_nominal = sym_eig(&yy(&nominal))?.min_value();
    if lambda_nominal <= floor {
        return Err(Error::singular("nominal S_yy", lambda_nominal));
    }
    let theta = ((floor - lambda) / (lambda_nominal - lambda)).clamp(0.0, 1.0);
    Ok(s.scale(1.0 - theta).add(&nominal.scale(theta)))
}

#[cfg(test)]
mod tests;
