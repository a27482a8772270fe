//! Exhaustive grid oracle for tiny instances.
//!
//! With scalar sensors and equality bands every `(x, y_i)` block is pinned,
//! so the only free entries of `S` are the cross-sensor covariances
//! `S_{y_i y_j}`. The oracle grids their correlation coefficients over
//! `[-1, 1]`, keeps the points with `S ⪰ 0` and maximizes the Schur-complement
//! trace (with a pseudo-inverse, so boundary points with singular `S_yy`
//! count). Successive levels zoom in around the incumbent.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estimator::assemble_nominal_joint;
use crate::linalg::{sym_eig, SymMatrix};
use crate::uncertainty::UncertaintySet;

const MAX_DIM: usize = 4;
const MAX_FREE: usize = 3;

/// Grid resolutions, coarse to fine. Level `k > 0` searches a box of
/// half-width `resolutions[k-1]` around the previous best point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub resolutions: Vec<f64>,
}

impl GridSpec {
    pub fn uniform(resolution: f64) -> Self {
        GridSpec {
            resolutions: vec![resolution],
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub value: f64,
    /// Maximizing correlation coefficient of each free pair `(i, j)`, `i < j`.
    pub correlations: Vec<f64>,
    /// Maximizing conditional (noise) correlation given `x` of each pair.
    pub noise_correlations: Vec<f64>,
    pub evaluated: usize,
    pub accepted: usize,
    /// Largest |noise correlation| among the accepted (PSD) grid points.
    pub max_abs_noise_correlation: f64,
}

struct Instance {
    base: DMatrix<f64>,
    n: usize,
    pairs: Vec<(usize, usize)>,
    /// scale √(S_ii S_jj) of each free entry
    scales: Vec<f64>,
    /// conditional-independence part and conditional std product per pair
    noise: Vec<(f64, f64)>,
}

impl Instance {
    fn matrix(&self, r: &[f64]) -> DMatrix<f64> {
        let mut s = self.base.clone();
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            let v = r[k] * self.scales[k];
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
        s
    }

    /// Pseudo-inverse Schur trace if `S ⪰ 0`, else `None`.
    fn evaluate(&self, r: &[f64]) -> Option<f64> {
        let s = SymMatrix::symmetrized(self.matrix(r));
        let scale = s.frobenius_norm().max(1.0);
        let eig = sym_eig(&s).ok()?;
        if eig.min_value() < -1e-12 * scale {
            return None;
        }
        let n = self.n;
        let m = s.dim() - n;
        let s_yy = SymMatrix::symmetrized(s.matrix().view((n, n), (m, m)).into_owned());
        let s_xy = s.matrix().view((0, n), (n, m)).into_owned();
        let e = sym_eig(&s_yy).ok()?;
        let cutoff = 1e-12 * e.max_value().abs().max(1.0);
        let mut explained = 0.0;
        for k in 0..m {
            let l = e.values[k];
            if l > cutoff {
                let proj = &s_xy * e.vectors.column(k);
                explained += proj.norm_squared() / l;
            }
        }
        let s_xx_trace: f64 = (0..n).map(|i| s.get(i, i)).sum();
        Some(s_xx_trace - explained)
    }

    fn noise_correlation(&self, k: usize, r: f64) -> f64 {
        let (ci, sd) = self.noise[k];
        (r * self.scales[k] - ci) / sd
    }
}

/// Grid-search maximum of the Schur-complement trace. Supports scalar
/// sensors with equality bands, total dimension at most four and at most
/// three free cross-sensor entries.
pub fn brute_force_worst_case(set: &UncertaintySet, grid: &GridSpec) -> Result<OracleResult> {
    let layout = set.layout();
    if layout.total() > MAX_DIM {
        return Err(Error::OracleUnsupported(format!(
            "dimension {} exceeds {MAX_DIM}",
            layout.total()
        )));
    }
    if layout.sensor_dims().iter().any(|&m| m != 1) {
        return Err(Error::OracleUnsupported("sensors must be scalar".into()));
    }
    let g = set.sensors()[0].gamma1;
    if set.sensors().iter().any(|c| c.gamma1 != c.gamma2 || c.gamma1 != g) {
        return Err(Error::OracleUnsupported(
            "bands must be equalities with a common gamma".into(),
        ));
    }
    if grid.resolutions.is_empty() || grid.resolutions.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::invalid("grid resolutions must be positive"));
    }

    let (_, nominal) = assemble_nominal_joint(set)?;
    let base = nominal.scale(g).into_matrix();
    let n = layout.n();
    let p = layout.num_sensors();
    let mut pairs = Vec::new();
    for i in 0..p {
        for j in (i + 1)..p {
            pairs.push((layout.sensor_offset(i), layout.sensor_offset(j)));
        }
    }
    if pairs.len() > MAX_FREE {
        return Err(Error::OracleUnsupported(format!(
            "{} free parameters exceed {MAX_FREE}",
            pairs.len()
        )));
    }
    let sxx = SymMatrix::symmetrized(base.view((0, 0), (n, n)).into_owned());
    let sxx_inv = crate::linalg::inverse_pd(&sxx, "S_xx")?.into_matrix();
    let cond_var = |a: usize| {
        let c = base.view((0, a), (n, 1)).into_owned();
        base[(a, a)] - (c.transpose() * &sxx_inv * &c)[(0, 0)]
    };
    let mut scales = Vec::new();
    let mut noise = Vec::new();
    for &(a, b) in &pairs {
        scales.push((base[(a, a)] * base[(b, b)]).sqrt());
        let ca = base.view((0, a), (n, 1)).into_owned();
        let cb = base.view((0, b), (n, 1)).into_owned();
        let ci = (ca.transpose() * &sxx_inv * &cb)[(0, 0)];
        noise.push((ci, (cond_var(a) * cond_var(b)).max(0.0).sqrt()));
    }
    let inst = Instance {
        base,
        n,
        pairs,
        scales,
        noise,
    };

    let free = inst.pairs.len();
    let mut result = OracleResult {
        value: f64::NEG_INFINITY,
        correlations: vec![0.0; free],
        noise_correlations: vec![0.0; free],
        evaluated: 0,
        accepted: 0,
        max_abs_noise_correlation: 0.0,
    };
    if free == 0 {
        result.value = inst
            .evaluate(&[])
            .ok_or_else(|| Error::invalid("nominal assembly is not PSD"))?;
        result.evaluated = 1;
        result.accepted = 1;
        return Ok(result);
    }

    let mut center = vec![0.0; free];
    let mut half_width = 1.0;
    for &res in &grid.resolutions {
        let axes: Vec<Vec<f64>> = center
            .iter()
            .map(|&c| axis(c - half_width, c + half_width, res))
            .collect();
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut point = vec![0.0; free];
        let mut counters = vec![0usize; free];
        'grid: loop {
            for k in 0..free {
                point[k] = axes[k][counters[k]];
            }
            result.evaluated += 1;
            if let Some(v) = inst.evaluate(&point) {
                result.accepted += 1;
                for (k, &p) in point.iter().enumerate() {
                    let rho = inst.noise_correlation(k, p).abs();
                    result.max_abs_noise_correlation = result.max_abs_noise_correlation.max(rho);
                }
                if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
                    best = Some((v, point.clone()));
                }
            }
            for k in 0..free {
                counters[k] += 1;
                if counters[k] < axes[k].len() {
                    continue 'grid;
                }
                counters[k] = 0;
            }
            break;
        }
        let (v, arg) = best.ok_or_else(|| Error::invalid("no PSD point on the grid"))?;
        if v > result.value {
            result.value = v;
            result.correlations = arg.clone();
        }
        center = result.correlations.clone();
        half_width = res;
    }
    result.noise_correlations = (0..free)
        .map(|k| inst.noise_correlation(k, result.correlations[k]))
        .collect();
    Ok(result)
}

/// Grid over `[lo, hi] ∩ [-1, 1]` anchored at multiples of `res`.
fn axis(lo: f64, hi: f64, res: f64) -> Vec<f64> {
    let lo = lo.max(-1.0);
    let hi = hi.min(1.0);
    let start = (lo / res).ceil() as i64;
    let end = (hi / res).floor() as i64;
    let mut v: Vec<f64> = (start..=end).map(|k| (k as f64 * res).clamp(-1.0, 1.0)).collect();
    if v.is_empty() {
        v.push(0.5 * (lo + hi));
    }
    v
}
