//! Dense complex linear algebra shared by every other module.
//!
//! Everything here is small and dense: states live in dimensions up to ~8,
//! process matrices up to 36×36.  Matrices are stored row-major.  The
//! Hermitian eigendecomposition is delegated to nalgebra's `SymmetricEigen`
//! (eigenvalues re-sorted ascending); all other kernels are written out
//! directly against the row-major layout.

use crate::{Error, Result};
use num_complex::Complex;

/// Complex double-precision scalar used throughout the crate.
pub type Complex64 = Complex<f64>;

/// Numerical tolerances, fixed in one place so production code and tests
/// agree on what "equal" means.
pub mod eps {
    /// Elementwise Hermiticity bound for matrices tagged as Hermitian.
    pub const HERMITIAN_TAG: f64 = 1e-12;
    /// Allowed deviation of a state norm from 1.
    pub const STATE_NORM: f64 = 1e-12;
    /// Largest elementwise asymmetry `eigh` symmetrizes away; more is an error.
    pub const EIGH_INPUT: f64 = 1e-10;
    /// Frobenius bound on the `eigh` reconstruction residual V Λ V† − M.
    pub const EIGH_RECONSTRUCT: f64 = 1e-9;
    /// Unitarity bound for operator-basis elements and eigenvector matrices.
    pub const UNITARITY: f64 = 1e-10;
    /// Bound on Tr[E_j† E_i] − d·δ_ij for operator bases.
    pub const TRACE_ORTHO: f64 = 1e-10;
    /// Eigenvalues in [−EIG_CLIP, 0) count as numerical zero and are clipped.
    pub const EIG_CLIP: f64 = 1e-9;
    /// Relative threshold below which a negative eigenvalue is an error
    /// rather than round-off: min λ < −SQRTM_NEG_REL · max λ.
    pub const SQRTM_NEG_REL: f64 = 1e-6;
    /// Frobenius bound on (sqrtm_psd(M))² − M.
    pub const SQRTM_RESIDUAL: f64 = 1e-8;
    /// Pairwise-orthogonality and cross-basis-overlap bound for designs.
    pub const DESIGN_OVERLAP: f64 = 1e-10;
    /// Residual bound for the operator/design closure property.
    pub const CLOSURE: f64 = 1e-10;
    /// Residual bound for projector decompositions of modified inputs.
    pub const PLAN_RECONSTRUCT: f64 = 1e-10;
    /// Agreement bound between Kraus and χ forms of the same channel.
    pub const CHANNEL_EQUIV: f64 = 1e-9;
    /// Default Frobenius convergence tolerance of the physicality projection.
    pub const PROJ_TOL: f64 = 1e-9;
    /// Allowed gap on the trace constraint after projection.
    pub const PROJ_TRACE_GAP: f64 = 1e-6;
    /// Default iteration cap of the physicality projection.
    pub const PROJ_MAX_ITER: usize = 5000;
}

/// Which subsystem a partial trace keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keep {
    /// Keep the first factor, trace out the second.
    First,
    /// Keep the second factor, trace out the first.
    Second,
}

/// Dense complex matrix in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    /// Builds a matrix from row-major entries; their count must match the shape.
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix needs {} entries, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![Complex64::new(0.0, 0.0); rows * cols] }
    }

    /// Identity matrix of size n.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = Complex64::new(1.0, 0.0);
        }
        m
    }

    /// Builds a matrix entrywise from a closure over (row, col).
    pub fn from_fn<F: FnMut(usize, usize) -> Complex64>(rows: usize, cols: usize, mut f: F) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Number of rows.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of columns.
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Row-major entry slice.
    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    /// Entry at (row, col).
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.cols + j]
    }

    /// Sets the entry at (row, col).
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.cols + j] = v;
    }

    /// Conjugate transpose.
    pub fn dagger(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).conj())
    }

    /// Matrix sum.
    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch in add");
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    /// Matrix difference.
    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch in sub");
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    /// Scalar multiple.
    pub fn scale(&self, c: Complex64) -> Self {
        let data = self.data.iter().map(|a| a * c).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    /// Matrix product self · other.
    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "shape mismatch in mul");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a.norm_sqr() == 0.0 {
                    continue;
                }
                let row = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        out
    }

    /// Matrix-vector product self · v.
    pub fn matvec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(self.cols, v.len(), "shape mismatch in matvec");
        self.data
            .chunks_exact(self.cols)
            .map(|row| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (a, x) in row.iter().zip(v) {
                    acc += a * x;
                }
                acc
            })
            .collect()
    }

    /// Trace (sum of diagonal entries).
    pub fn trace(&self) -> Complex64 {
        assert_eq!(self.rows, self.cols, "trace of non-square matrix");
        (0..self.rows).map(|i| self.get(i, i)).sum()
    }

    /// Frobenius norm.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest entrywise modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|a| a.norm()).fold(0.0, f64::max)
    }

    /// Largest entrywise modulus of self − other.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch in diff");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Largest entrywise modulus of M − M†.
    pub fn hermiticity_gap(&self) -> f64 {
        assert_eq!(self.rows, self.cols, "hermiticity of non-square matrix");
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in i..self.cols {
                let gap = (self.get(i, j) - self.get(j, i).conj()).norm();
                worst = worst.max(gap);
            }
        }
        worst
    }

    /// Whether M is Hermitian within the given elementwise tolerance.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.rows == self.cols && self.hermiticity_gap() <= tol
    }

    /// Hermitian part (M + M†)/2.
    pub fn hermitized(&self) -> Self {
        assert_eq!(self.rows, self.cols, "hermitize non-square matrix");
        Self::from_fn(self.rows, self.cols, |i, j| {
            (self.get(i, j) + self.get(j, i).conj()) * 0.5
        })
    }

    /// Kronecker product self ⊗ other.
    pub fn kron(&self, other: &Self) -> Self {
        tensor(self, other)
    }

    /// Splits into nested row-major (real, imaginary) arrays for serialization.
    pub fn to_real_imag(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut re = Vec::with_capacity(self.rows);
        let mut im = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            re.push(row.iter().map(|a| a.re).collect());
            im.push(row.iter().map(|a| a.im).collect());
        }
        (re, im)
    }

    /// Rebuilds a matrix from nested (real, imaginary) arrays; shapes must agree.
    pub fn from_real_imag(re: &[Vec<f64>], im: &[Vec<f64>]) -> Result<Self> {
        let rows = re.len();
        let cols = re.first().map_or(0, Vec::len);
        let consistent = re.len() == im.len()
            && re.iter().all(|r| r.len() == cols)
            && im.iter().all(|r| r.len() == cols)
            && rows > 0
            && cols > 0;
        if !consistent {
            return Err(Error::DimensionMismatch(
                "real/imaginary arrays are empty or ragged".into(),
            ));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for (rr, ri) in re.iter().zip(im) {
            for (a, b) in rr.iter().zip(ri) {
                data.push(Complex64::new(*a, *b));
            }
        }
        Ok(Self { rows, cols, data })
    }
}

/// Pure state: a unit-norm complex amplitude vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    amp: Vec<Complex64>,
}

impl PureState {
    /// Builds a state from amplitudes, requiring unit norm within tolerance.
    pub fn new(amp: Vec<Complex64>) -> Result<Self> {
        let norm_sqr: f64 = amp.iter().map(|a| a.norm_sqr()).sum();
        let gap = (norm_sqr.sqrt() - 1.0).abs();
        if gap > eps::STATE_NORM {
            return Err(Error::NotNormalized(gap));
        }
        Ok(Self { amp })
    }

    /// Builds a state by rescaling arbitrary nonzero amplitudes to unit norm.
    pub fn normalized(amp: Vec<Complex64>) -> Result<Self> {
        let norm: f64 = amp.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-14 {
            return Err(Error::NotNormalized(1.0));
        }
        let amp = amp.into_iter().map(|a| a / norm).collect();
        Ok(Self { amp })
    }

    /// Computational-basis state |k⟩ in the given dimension.
    pub fn basis_state(dim: usize, k: usize) -> Self {
        assert!(k < dim, "basis index out of range");
        let mut amp = vec![Complex64::new(0.0, 0.0); dim];
        amp[k] = Complex64::new(1.0, 0.0);
        Self { amp }
    }

    /// Hilbert-space dimension.
    pub fn dim(&self) -> usize {
        self.amp.len()
    }

    /// Amplitude slice.
    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amp
    }

    /// Inner product ⟨self|other⟩ (conjugate-linear in self).
    pub fn inner(&self, other: &Self) -> Complex64 {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch in inner product");
        self.amp
            .iter()
            .zip(&other.amp)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Projector |ψ⟩⟨ψ|.
    pub fn projector(&self) -> ComplexMatrix {
        let d = self.dim();
        ComplexMatrix::from_fn(d, d, |i, j| self.amp[i] * self.amp[j].conj())
    }

    /// Outer product |self⟩⟨other|.
    pub fn outer(&self, other: &Self) -> ComplexMatrix {
        ComplexMatrix::from_fn(self.dim(), other.dim(), |i, j| {
            self.amp[i] * other.amp[j].conj()
        })
    }

    /// Tensor product |self⟩ ⊗ |other⟩.
    pub fn tensor(&self, other: &Self) -> Self {
        let mut amp = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.amp {
            for b in &other.amp {
                amp.push(a * b);
            }
        }
        Self { amp }
    }
}

/// Kronecker product a ⊗ b.
pub fn tensor(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let rows = a.rows() * b.rows();
    let cols = a.cols() * b.cols();
    let mut out = ComplexMatrix::zeros(rows, cols);
    for i1 in 0..a.rows() {
        for j1 in 0..a.cols() {
            let f = a.get(i1, j1);
            if f.norm_sqr() == 0.0 {
                continue;
            }
            for i2 in 0..b.rows() {
                for j2 in 0..b.cols() {
                    out.set(i1 * b.rows() + i2, j1 * b.cols() + j2, f * b.get(i2, j2));
                }
            }
        }
    }
    out
}

/// Partial trace of a square matrix on a D₁·D₂-dimensional product space,
/// keeping the requested factor.  The trace is preserved.
pub fn partial_trace(m: &ComplexMatrix, dims: (usize, usize), keep: Keep) -> Result<ComplexMatrix> {
    let (d1, d2) = dims;
    let d = d1 * d2;
    if m.rows() != d || m.cols() != d {
        return Err(Error::DimensionMismatch(format!(
            "partial trace of {}x{} matrix with factor dims {}x{}",
            m.rows(),
            m.cols(),
            d1,
            d2
        )));
    }
    // Composite index convention: row = i1·D₂ + i2, matching tensor().
    match keep {
        Keep::First => {
            let mut out = ComplexMatrix::zeros(d1, d1);
            for i1 in 0..d1 {
                for j1 in 0..d1 {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for k in 0..d2 {
                        acc += m.get(i1 * d2 + k, j1 * d2 + k);
                    }
                    out.set(i1, j1, acc);
                }
            }
            Ok(out)
        }
        Keep::Second => {
            let mut out = ComplexMatrix::zeros(d2, d2);
            for i2 in 0..d2 {
                for j2 in 0..d2 {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for k in 0..d1 {
                        acc += m.get(k * d2 + i2, k * d2 + j2);
                    }
                    out.set(i2, j2, acc);
                }
            }
            Ok(out)
        }
    }
}

/// Hermitian eigendecomposition: eigenvalues ascending, eigenvectors as the
/// columns of a unitary matrix, M = V Λ V†.
///
/// Inputs with elementwise asymmetry up to [`eps::EIGH_INPUT`] are
/// symmetrized first (shot-noise estimates produce tiny asymmetries);
/// anything worse is rejected.
pub fn eigh(m: &ComplexMatrix) -> Result<(Vec<f64>, ComplexMatrix)> {
    if m.rows() != m.cols() {
        return Err(Error::DimensionMismatch(format!(
            "eigh of {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    let gap = m.hermiticity_gap();
    if gap > eps::EIGH_INPUT {
        return Err(Error::NotHermitian { asymmetry: gap });
    }
    let h = m.hermitized();
    let n = h.rows();
    let na = nalgebra::DMatrix::<Complex64>::from_fn(n, n, |i, j| h.get(i, j));
    let se = na.symmetric_eigen();
    // nalgebra does not order the spectrum; sort ascending and permute the
    // eigenvector columns to match.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[a].partial_cmp(&se.eigenvalues[b]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&k| se.eigenvalues[k]).collect();
    let vectors = ComplexMatrix::from_fn(n, n, |i, j| se.eigenvectors[(i, order[j])]);
    Ok((eigenvalues, vectors))
}

/// Principal square root of a positive semidefinite Hermitian matrix.
///
/// Round-off-level negative eigenvalues are clipped to zero; a spectrum that
/// is negative beyond `−SQRTM_NEG_REL · max λ` is rejected.
pub fn sqrtm_psd(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let (eigenvalues, v) = eigh(m)?;
    let max_eig = eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let min_eig = eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < -eps::SQRTM_NEG_REL * max_eig.max(eps::EIG_CLIP) {
        return Err(Error::NotPositiveSemidefinite { min_eig });
    }
    let n = m.rows();
    // √M = V √Λ V†, written out with the clipped spectrum.
    let mut out = ComplexMatrix::zeros(n, n);
    for (k, &ev) in eigenvalues.iter().enumerate() {
        let lam = ev.max(0.0);
        if lam == 0.0 {
            continue;
        }
        let s = lam.sqrt();
        for i in 0..n {
            let vi = v.get(i, k);
            if vi.norm_sqr() == 0.0 {
                continue;
            }
            for j in 0..n {
                let add = vi * v.get(j, k).conj() * s;
                out.set(i, j, out.get(i, j) + add);
            }
        }
    }
    Ok(out.hermitized())
}
