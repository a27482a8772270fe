//! Dense symmetric-matrix utilities: Jacobi eigendecomposition, PSD projection,
//! Schur complements and block bookkeeping for the joint vector
//! `z = [x; y1; ...; yp]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Positive-definiteness floor used before inverting `S_yy`.
pub const PD_EPS: f64 = 1e-9;

const JACOBI_MAX_SWEEPS: usize = 100;

/// A real symmetric matrix. Symmetry is enforced on construction by averaging
/// mirrored entries, so `m[(i, j)] == m[(j, i)]` holds bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.nrows() != m.ncols() {
            return Err(Error::invalid(format!(
                "symmetric matrix must be square and non-empty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Self::symmetrized(m))
    }

    /// Symmetrizes a square matrix. Panics on non-square input; internal use.
    pub(crate) fn symmetrized(mut m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        debug_assert_eq!(n, m.ncols());
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = avg;
                m[(j, i)] = avg;
            }
        }
        SymMatrix(m)
    }

    pub fn from_row_slice(dim: usize, data: &[f64]) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::invalid(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(dim, dim, data))
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn scale(&self, a: f64) -> Self {
        SymMatrix(&self.0 * a)
    }

    pub fn add(&self, other: &SymMatrix) -> Self {
        SymMatrix(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> Self {
        SymMatrix(&self.0 - &other.0)
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Frobenius inner product `Tr(self * other)`.
    pub fn inner(&self, other: &SymMatrix) -> f64 {
        self.0.dot(&other.0)
    }

    /// `M X Mᵀ` for an arbitrary (possibly rectangular) `M`.
    pub fn congruence(&self, m: &DMatrix<f64>) -> SymMatrix {
        SymMatrix::symmetrized(m * &self.0 * m.transpose())
    }
}

/// Eigendecomposition with eigenvalues sorted in descending order and the
/// matching orthonormal eigenvectors stored as columns.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn min_value(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn max_value(&self) -> f64 {
        self.values[0]
    }

    /// Rebuilds `V diag(f(λ)) Vᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let s = f(self.values[j]);
            scaled.column_mut(j).scale_mut(s);
        }
        SymMatrix::symmetrized(scaled * self.vectors.transpose())
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
pub fn sym_eig(m: &SymMatrix) -> Result<SymEigen> {
    if !m.is_finite() {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let n = m.dim();
    let mut a = m.0.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = a.norm();

    let mut prev_off = f64::INFINITY;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        // stagnation means rounding has taken over
        if off == 0.0 || off.sqrt() <= 1e-18 * scale || off >= prev_off {
            break;
        }
        prev_off = off;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| a[(i, i)]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &v.column(src));
    }
    Ok(SymEigen { values, vectors })
}

pub fn min_eigenvalue(m: &SymMatrix) -> Result<f64> {
    Ok(sym_eig(m)?.min_value())
}

/// Frobenius-nearest PSD matrix (negative eigenvalues clipped to zero).
/// Inputs that are already PSD are returned unchanged.
pub fn psd_project(m: &SymMatrix) -> Result<SymMatrix> {
    let eig = sym_eig(m)?;
    if eig.min_value() >= 0.0 {
        return Ok(m.clone());
    }
    Ok(eig.map(|l| l.max(0.0)))
}

/// Positive part `V diag(max(λ, 0)) Vᵀ`, without the fixed-point shortcut.
pub(crate) fn positive_part(m: &SymMatrix) -> Result<SymMatrix> {
    let eig = sym_eig(m)?;
    if eig.min_value() >= 0.0 {
        return Ok(m.clone());
    }
    if eig.max_value() <= 0.0 {
        return Ok(SymMatrix::zeros(m.dim()));
    }
    Ok(eig.map(|l| l.max(0.0)))
}

/// Principal square root of a PSD matrix.
pub fn sqrt_psd(m: &SymMatrix) -> Result<SymMatrix> {
    let eig = sym_eig(m)?;
    if eig.min_value() < -1e-10 * (1.0 + eig.max_value().abs()) {
        return Err(Error::invalid(format!(
            "square root of a matrix with eigenvalue {:e}",
            eig.min_value()
        )));
    }
    Ok(eig.map(|l| l.max(0.0).sqrt()))
}

/// Inverse of a symmetric positive-definite matrix via its eigendecomposition.
pub fn inverse_pd(m: &SymMatrix, block: &str) -> Result<SymMatrix> {
    let eig = sym_eig(m)?;
    if eig.min_value() <= PD_EPS {
        return Err(Error::singular(block, eig.min_value()));
    }
    Ok(eig.map(|l| 1.0 / l))
}

/// Dimensions of the state and of each sensor's measurement inside
/// `z = [x; y1; ...; yp]`. Sensors are indexed from zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    n: usize,
    m: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockLayout {
    pub fn new(n: usize, m: Vec<usize>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("state dimension must be positive"));
        }
        if m.is_empty() {
            return Err(Error::invalid("at least one sensor is required"));
        }
        if m.contains(&0) {
            return Err(Error::invalid("sensor dimensions must be positive"));
        }
        let mut offsets = Vec::with_capacity(m.len());
        let mut at = n;
        for &mi in &m {
            offsets.push(at);
            at += mi;
        }
        Ok(BlockLayout { n, m, offsets })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sensor_dims(&self) -> &[usize] {
        &self.m
    }

    pub fn num_sensors(&self) -> usize {
        self.m.len()
    }

    /// Total measurement dimension `m = Σ m_i`.
    pub fn m_total(&self) -> usize {
        self.m.iter().sum()
    }

    /// Dimension of `z`.
    pub fn total(&self) -> usize {
        self.n + self.m_total()
    }

    /// Offset of `y_i` inside `z`.
    pub fn sensor_offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    /// Indices of `x` followed by those of `y_i` inside `z`.
    pub fn sensor_indices(&self, i: usize) -> Result<Vec<usize>> {
        if i >= self.m.len() {
            return Err(Error::invalid(format!(
                "sensor index {i} out of range for {} sensors",
                self.m.len()
            )));
        }
        let mut idx: Vec<usize> = (0..self.n).collect();
        idx.extend(self.offsets[i]..self.offsets[i] + self.m[i]);
        Ok(idx)
    }
}

pub(crate) fn select_block(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}

pub(crate) fn write_block(m: &mut DMatrix<f64>, idx: &[usize], block: &DMatrix<f64>) {
    for (r, &ir) in idx.iter().enumerate() {
        for (c, &ic) in idx.iter().enumerate() {
            m[(ir, ic)] = block[(r, c)];
        }
    }
}

/// Principal submatrix of `s` on the index sets of `x` and `y_i`.
pub fn extract_sensor_block(s: &SymMatrix, layout: &BlockLayout, i: usize) -> Result<SymMatrix> {
    if s.dim() != layout.total() {
        return Err(Error::invalid(format!(
            "matrix dimension {} does not match layout dimension {}",
            s.dim(),
            layout.total()
        )));
    }
    let idx = layout.sensor_indices(i)?;
    Ok(SymMatrix(select_block(&s.0, &idx)))
}

/// Writes `block` back into the `(x, y_i)` principal submatrix of `s`.
pub fn insert_sensor_block(
    s: &mut SymMatrix,
    layout: &BlockLayout,
    i: usize,
    block: &SymMatrix,
) -> Result<()> {
    let idx = layout.sensor_indices(i)?;
    if s.dim() != layout.total() || block.dim() != idx.len() {
        return Err(Error::invalid("block dimensions do not match layout"));
    }
    write_block(&mut s.0, &idx, &block.0);
    Ok(())
}

/// A joint second moment `S` of `z`, partitioned by a [`BlockLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct JointSecondMoment {
    layout: BlockLayout,
    s: SymMatrix,
}

impl JointSecondMoment {
    pub fn new(layout: BlockLayout, s: SymMatrix) -> Result<Self> {
        if s.dim() != layout.total() {
            return Err(Error::invalid(format!(
                "matrix dimension {} does not match layout dimension {}",
                s.dim(),
                layout.total()
            )));
        }
        Ok(JointSecondMoment { layout, s })
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.s
    }

    pub fn into_matrix(self) -> SymMatrix {
        self.s
    }

    pub fn s_xx(&self) -> SymMatrix {
        let n = self.layout.n;
        SymMatrix(self.s.0.view((0, 0), (n, n)).into_owned())
    }

    pub fn s_xy(&self) -> DMatrix<f64> {
        let n = self.layout.n;
        let m = self.layout.m_total();
        self.s.0.view((0, n), (n, m)).into_owned()
    }

    pub fn s_yy(&self) -> SymMatrix {
        let n = self.layout.n;
        let m = self.layout.m_total();
        SymMatrix(self.s.0.view((n, n), (m, m)).into_owned())
    }

    pub fn sensor_block(&self, i: usize) -> Result<SymMatrix> {
        extract_sensor_block(&self.s, &self.layout, i)
    }
}

/// Gain `A = S_xy S_yy⁻¹` and Schur complement `S_xx − A S_yx`.
#[derive(Debug, Clone)]
pub struct Conditional {
    pub gain: DMatrix<f64>,
    pub covariance: SymMatrix,
}

/// Conditions `x` on `y` under second moment `s`. When `floor` is positive and
/// `λmin(S_yy) < floor`, `S_yy` is lifted by `(floor − λmin) I` first; with
/// `floor == 0` a block at or below [`PD_EPS`] is an error.
pub(crate) fn condition(s: &JointSecondMoment, floor: f64) -> Result<Conditional> {
    let s_yy = s.s_yy();
    let eig = sym_eig(&s_yy)?;
    let lmin = eig.min_value();
    let lift = if floor > 0.0 && lmin < floor {
        floor - lmin
    } else {
        0.0
    };
    if lmin + lift <= PD_EPS {
        return Err(Error::singular("S_yy", lmin));
    }
    let inv = eig.map(|l| 1.0 / (l + lift));
    let gain = s.s_xy() * inv.matrix();
    let cov = s.s_xx().matrix() - &gain * s.s_xy().transpose();
    Ok(Conditional {
        gain,
        covariance: SymMatrix::symmetrized(cov),
    })
}

/// Posterior covariance `S_xx − S_xy S_yy⁻¹ S_yx`.
pub fn schur_complement(s: &JointSecondMoment) -> Result<SymMatrix> {
    Ok(condition(s, 0.0)?.covariance)
}

/// `Tr(S_xx − S_xy S_yy⁻¹ S_yx)`: the Bayes MSE of estimating `x` from `y`
/// under a Gaussian with second moment `S`.
pub fn schur_trace(s: &JointSecondMoment) -> Result<f64> {
    Ok(schur_complement(s)?.trace())
}

/// Block-diagonal assembly of symmetric blocks.
pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let total: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(total, total);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, at), (b.nrows(), b.ncols())).copy_from(b);
        at += b.nrows();
    }
    out
}
