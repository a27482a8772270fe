//! Log-barrier path for the worst-case problem.
//!
//! Maximizes `t·f(S) + Σ log det(γ2Σ_i − S_[i]) + Σ log det(S_[i] − γ1Σ_i)
//! + log det S` by damped Newton steps over the free entries of `S`, raising
//! `t` geometrically. At each centered point the duality gap is at most `ν/t`
//! with `ν` the summed barrier dimension, which is also a bound on
//! `⟨∇f(S), S' − S⟩` for every feasible `S'`.
//!
//! Sensors with an equality band pin their whole block, so only the other
//! entries are variables. The start is the nominal assembly scaled into every
//! band; `solve` returns `None` when no strictly feasible start is found.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::estimator::assemble_nominal_joint;
use crate::linalg::{select_block, write_block, SymMatrix};
use crate::uncertainty::UncertaintySet;

const GROWTH: f64 = 10.0;
const MAX_NEWTON: usize = 200;
const MAX_HALVINGS: usize = 60;
/// Centering stops when half the squared Newton decrement is below this.
const CENTERING_TOL: f64 = 1e-10;
const ARMIJO: f64 = 0.25;

pub(super) struct Outcome {
    pub s: SymMatrix,
    pub newton_steps: usize,
    pub trace: Vec<f64>,
    pub converged: bool,
}

/// `sign·S_[idx] + offset ≻ 0`.
struct Term {
    idx: Vec<usize>,
    sign: f64,
    offset: DMatrix<f64>,
    /// Free variables inside the block, with their local positions.
    members: Vec<(usize, usize, usize)>,
}

impl Term {
    fn matrix(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        select_block(s, &self.idx) * self.sign + &self.offset
    }
}

struct Problem {
    n: usize,
    d: usize,
    vars: Vec<(usize, usize)>,
    terms: Vec<Term>,
    nu: f64,
}

struct Eval {
    phi: f64,
    f: f64,
}

impl Problem {
    fn eval(&self, s: &DMatrix<f64>, t: f64) -> Option<Eval> {
        let mut phi = 0.0;
        for term in &self.terms {
            let chol = Cholesky::new(term.matrix(s))?;
            phi += 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        }
        let f = objective(s, self.n)?;
        if !(phi.is_finite() && f.is_finite()) {
            return None;
        }
        Some(Eval { phi: phi + t * f, f })
    }

    /// Gradient and Hessian of the barrier objective in the free variables.
    fn derivatives(&self, s: &DMatrix<f64>, t: f64) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let nv = self.vars.len();
        let mut grad = DVector::zeros(nv);
        let mut hess = DMatrix::zeros(nv, nv);
        for term in &self.terms {
            let w = Cholesky::new(term.matrix(s))?.inverse();
            for (k, &(p, la, lb)) in term.members.iter().enumerate() {
                grad[p] += term.sign * unit_inner(&w, la, lb);
                for &(q, lc, ld) in &term.members[k..] {
                    let h = unit_pair(&w, la, lb, lc, ld);
                    hess[(p, q)] -= h;
                    if p != q {
                        hess[(q, p)] -= h;
                    }
                }
            }
        }

        let (n, m) = (self.n, self.d - self.n);
        let s_yy = s.view((n, n), (m, m)).into_owned();
        let b = Cholesky::new(s_yy)?.inverse();
        let a = s.view((0, n), (n, m)) * &b;
        // ∇f = [[I, −A], [−Aᵀ, AᵀA]]; D²f[H, K] = −2 Tr((H_xy − A H_yy) B (K_xy − A K_yy)ᵀ)
        let ata = a.transpose() * &a;
        let mut dirs = Vec::with_capacity(nv);
        for (p, &(i, j)) in self.vars.iter().enumerate() {
            let g = if i < n && j < n {
                if i == j {
                    1.0
                } else {
                    0.0
                }
            } else if i < n {
                -2.0 * a[(i, j - n)]
            } else if i == j {
                ata[(i - n, i - n)]
            } else {
                2.0 * ata[(i - n, j - n)]
            };
            grad[p] += t * g;

            let mut dir = DMatrix::zeros(n, m);
            if i < n && j >= n {
                dir[(i, j - n)] = 1.0;
            } else if i >= n {
                let (yi, yj) = (i - n, j - n);
                for r in 0..n {
                    dir[(r, yj)] -= a[(r, yi)];
                    if yi != yj {
                        dir[(r, yi)] -= a[(r, yj)];
                    }
                }
            }
            dirs.push(dir);
        }
        let weighted: Vec<DMatrix<f64>> = dirs.iter().map(|m| m * &b).collect();
        for p in 0..nv {
            for q in p..nv {
                let h = 2.0 * t * dirs[p].dot(&weighted[q]);
                hess[(p, q)] -= h;
                if p != q {
                    hess[(q, p)] -= h;
                }
            }
        }
        Some((grad, hess))
    }

    fn step(&self, s: &DMatrix<f64>, delta: &DVector<f64>, scale: f64) -> DMatrix<f64> {
        let mut out = s.clone();
        for (p, &(i, j)) in self.vars.iter().enumerate() {
            out[(i, j)] += scale * delta[p];
            if i != j {
                out[(j, i)] = out[(i, j)];
            }
        }
        out
    }
}

/// `Tr(S_xx − S_xy S_yy⁻¹ S_yx)`, or `None` when `S_yy` is not PD.
fn objective(s: &DMatrix<f64>, n: usize) -> Option<f64> {
    let m = s.nrows() - n;
    let chol = Cholesky::new(s.view((n, n), (m, m)).into_owned())?;
    let s_yx = s.view((n, 0), (m, n)).into_owned();
    let solved = chol.solve(&s_yx);
    Some(s.view((0, 0), (n, n)).trace() - s_yx.dot(&solved))
}

fn unit_terms(a: usize, b: usize) -> impl Iterator<Item = (usize, usize)> {
    let second = (a != b).then_some((b, a));
    std::iter::once((a, b)).chain(second)
}

/// `⟨W, U_ab⟩` for the symmetric unit matrix `U_ab`.
fn unit_inner(w: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    unit_terms(a, b).map(|(r, c)| w[(r, c)]).sum()
}

/// `Tr(W U_ab W U_cd)`.
fn unit_pair(w: &DMatrix<f64>, a: usize, b: usize, c: usize, d: usize) -> f64 {
    let mut total = 0.0;
    for (a1, b1) in unit_terms(a, b) {
        for (c1, d1) in unit_terms(c, d) {
            total += w[(d1, a1)] * w[(b1, c1)];
        }
    }
    total
}

/// Common scale `c` of the shared x block and whether that block is pinned.
///
/// `c·Σ_xx` must lie in every sensor's band. When the open bands overlap, `c`
/// is the middle of the overlap and nothing is pinned; otherwise the closed
/// bands admit only one scale and `S_xx = c·Σ_xx` exactly.
fn common_scale(set: &UncertaintySet) -> Result<Option<(f64, bool)>> {
    let mut pinned: Option<f64> = None;
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for c in set.sensors() {
        lo = lo.max(c.gamma1);
        hi = hi.min(c.gamma2);
        if c.gamma1 == c.gamma2 {
            match pinned {
                Some(g) if g != c.gamma1 => {
                    return Err(Error::invalid(
                        "equality bands pin the shared x block to different scales",
                    ));
                }
                _ => pinned = Some(c.gamma1),
            }
        }
    }
    if lo > hi {
        return Err(Error::invalid("the sensor bands admit no common x block"));
    }
    let c = pinned.unwrap_or(0.5 * (lo + hi));
    if !(c > 0.0 && c.is_finite()) {
        return Ok(None);
    }
    let touching = set.sensors().iter().any(|s| s.gamma1 == c || s.gamma2 == c);
    Ok(Some((c, touching)))
}

/// Which side of a sensor band sits exactly at the common scale.
#[derive(Clone, Copy, PartialEq)]
enum Touch {
    None,
    Upper,
    Lower,
}

pub(super) fn solve(set: &UncertaintySet, obj_tol: f64) -> Result<Option<Outcome>> {
    let Some((c, x_pinned)) = common_scale(set)? else {
        return Ok(None);
    };
    let layout = set.layout();
    let (n, d) = (layout.n(), layout.total());
    let (_, nominal) = assemble_nominal_joint(set)?;
    let mut s = nominal.matrix() * c;

    let mut fixed = vec![false; d * d];
    let mut fix = |rows: &[usize], cols: &[usize]| {
        for &a in rows {
            for &b in cols {
                fixed[a * d + b] = true;
                fixed[b * d + a] = true;
            }
        }
    };
    let x_idx: Vec<usize> = (0..n).collect();
    if x_pinned {
        fix(&x_idx, &x_idx);
    }
    let mut terms = Vec::new();
    // sensors whose y block must be nudged off the band edge to start inside
    let mut nudges = Vec::new();
    for (i, sc) in set.sensors().iter().enumerate() {
        let idx = layout.sensor_indices(i)?;
        if sc.gamma1 == sc.gamma2 {
            fix(&idx, &idx);
            continue;
        }
        let sigma = sc.nominal.cov.matrix();
        let touch = if sc.gamma2 == c {
            Touch::Upper
        } else if sc.gamma1 == c {
            Touch::Lower
        } else {
            Touch::None
        };
        if touch == Touch::None {
            terms.push(Term { idx: idx.clone(), sign: -1.0, offset: sigma * sc.gamma2, members: Vec::new() });
            terms.push(Term { idx, sign: 1.0, offset: -(sigma * sc.gamma1), members: Vec::new() });
            continue;
        }
        // With S_xx at the band edge, the block difference on that side has a
        // zero x block, which forces its x-y part to zero as well; only the y
        // block stays free on that side.
        let y_idx: Vec<usize> = idx[n..].to_vec();
        fix(&x_idx, &y_idx);
        let sigma_yy = select_block(sigma, &(n..idx.len()).collect::<Vec<_>>());
        if touch == Touch::Upper {
            terms.push(Term { idx: y_idx.clone(), sign: -1.0, offset: &sigma_yy * c, members: Vec::new() });
            terms.push(Term { idx, sign: 1.0, offset: -(sigma * sc.gamma1), members: Vec::new() });
            nudges.push((y_idx, sigma_yy * -(c - sc.gamma1)));
        } else {
            terms.push(Term { idx: idx.clone(), sign: -1.0, offset: sigma * sc.gamma2, members: Vec::new() });
            terms.push(Term { idx: y_idx.clone(), sign: 1.0, offset: &sigma_yy * -c, members: Vec::new() });
            nudges.push((y_idx, sigma_yy * (sc.gamma2 - c)));
        }
    }
    terms.push(Term {
        idx: (0..d).collect(),
        sign: 1.0,
        offset: DMatrix::zeros(d, d),
        members: Vec::new(),
    });

    let mut vars = Vec::new();
    for a in 0..d {
        for b in a..d {
            if !fixed[a * d + b] {
                vars.push((a, b));
            }
        }
    }
    for term in &mut terms {
        for (p, &(a, b)) in vars.iter().enumerate() {
            let la = term.idx.iter().position(|&k| k == a);
            let lb = term.idx.iter().position(|&k| k == b);
            if let (Some(la), Some(lb)) = (la, lb) {
                term.members.push((p, la, lb));
            }
        }
    }
    let nu = terms.iter().map(|t| t.idx.len() as f64).sum();
    let problem = Problem { n, d, vars, terms, nu };

    if !nudges.is_empty() {
        let mut eps = 0.5;
        let base = s.clone();
        loop {
            s = base.clone();
            for (idx, step) in &nudges {
                let block = select_block(&s, idx) + step * eps;
                write_block(&mut s, idx, &block);
            }
            if problem.eval(&s, 0.0).is_some() {
                break;
            }
            eps *= 0.5;
            if eps < 1e-12 {
                return Ok(None);
            }
        }
    }
    let Some(start) = problem.eval(&s, 0.0) else {
        return Ok(None);
    };
    if problem.vars.is_empty() {
        return Ok(Some(Outcome { s: SymMatrix::symmetrized(s), newton_steps: 0, trace: vec![start.f], converged: true }));
    }

    let scale = start.f.abs().max(s.view((0, 0), (n, n)).trace().abs()).max(f64::MIN_POSITIVE);
    let mut t = problem.nu / scale;
    let mut trace = vec![start.f];
    let mut steps = 0;
    let mut converged = false;
    loop {
        let mut current = problem.eval(&s, t).ok_or(Error::NonFiniteObjective { iteration: steps })?;
        for _ in 0..MAX_NEWTON {
            let Some((grad, hess)) = problem.derivatives(&s, t) else {
                return Err(Error::NonFiniteObjective { iteration: steps });
            };
            let delta = newton_direction(&grad, &hess);
            let decrement = grad.dot(&delta);
            if !(decrement > 2.0 * CENTERING_TOL) {
                break;
            }
            steps += 1;
            let mut h = 1.0;
            let mut moved = false;
            for _ in 0..MAX_HALVINGS {
                let candidate = problem.step(&s, &delta, h);
                if let Some(e) = problem.eval(&candidate, t) {
                    if e.phi >= current.phi + ARMIJO * h * decrement {
                        s = candidate;
                        current = e;
                        moved = true;
                        break;
                    }
                }
                h *= 0.5;
            }
            if !moved {
                break;
            }
        }
        trace.push(current.f);
        if problem.nu / t <= obj_tol * scale {
            converged = true;
            break;
        }
        if t > 1e300 {
            break;
        }
        t *= GROWTH;
    }
    Ok(Some(Outcome { s: SymMatrix::symmetrized(s), newton_steps: steps, trace, converged }))
}

/// Solves `(−H) Δ = g`, shifting the diagonal if `−H` is not numerically PD.
fn newton_direction(grad: &DVector<f64>, hess: &DMatrix<f64>) -> DVector<f64> {
    let neg = -hess;
    let base = neg.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut shift = 0.0;
    loop {
        let mut m = neg.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += shift;
        }
        if let Some(chol) = Cholesky::<f64, Dyn>::new(m) {
            return chol.solve(grad);
        }
        shift = if shift == 0.0 { base * 1e-14 } else { shift * 10.0 };
    }
}
