//! State 2-designs from complete sets of mutually unbiased bases (MUBs).
//!
//! For prime d the d+1 MUBs are the joint eigenbases of the abelian subsets
//! of the Sylvester operators: basis J=0 is the computational basis
//! (diagonalizing all E_{0l}), and basis J=a+1 diagonalizes E_{1a} and its
//! powers.  The eigenvectors have the closed form
//! v_t[m] = ω^{a·m(m−1)/2} λ_t^{−m} / √d with λ_t^d = e^{iπa(d−1)},
//! which this module materializes and then certifies numerically (pairwise
//! overlaps and the frame potential) rather than trusting algebra alone.
//!
//! The Sylvester operators permute each MUB up to a phase; the closure table
//! records that action exactly, which is what lets modified preparations
//! collapse onto a small set of distinct circuits downstream.

use crate::qmath::{eps, Complex64, ComplexMatrix, PureState};
use crate::{Error, Result};
use std::f64::consts::TAU;

/// Dimensions for which a complete MUB construction is wired up.
pub const SUPPORTED_PRIMES: [usize; 4] = [2, 3, 5, 7];

/// A uniform state 2-design: d+1 bases of d states each, addressed by
/// (J, M) with flat index J·d + M.
#[derive(Debug, Clone)]
pub struct StateDesign {
    dim: usize,
    n_bases: usize,
    states: Vec<PureState>,
}

impl StateDesign {
    /// Hilbert-space dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of bases (d+1 for a complete MUB design).
    pub fn n_bases(&self) -> usize {
        self.n_bases
    }

    /// Total number of states N.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    /// Whether the design is empty (never true for constructed designs).
    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Flat index of state (J, M).
    pub fn flat(&self, j: usize, m: usize) -> usize {
        debug_assert!(j < self.n_bases && m < self.dim);
        j * self.dim + m
    }

    /// (J, M) label of a flat index.
    pub fn label(&self, flat: usize) -> (usize, usize) {
        (flat / self.dim, flat % self.dim)
    }

    /// State |ψ_M^J⟩.
    pub fn state(&self, j: usize, m: usize) -> &PureState {
        &self.states[self.flat(j, m)]
    }

    /// State by flat index.
    pub fn state_flat(&self, flat: usize) -> &PureState {
        &self.states[flat]
    }

    /// All states in flat order.
    pub fn states(&self) -> &[PureState] {
        &self.states
    }
}

/// Builds the complete MUB design in prime dimension d ∈ {2, 3, 5, 7}.
pub fn mub_design(dim: usize) -> Result<StateDesign> {
    if !SUPPORTED_PRIMES.contains(&dim) {
        return Err(Error::UnsupportedDimension(dim));
    }
    let d = dim;
    let mut states = Vec::with_capacity(d * (d + 1));
    // J = 0: computational basis in natural order.
    for m in 0..d {
        states.push(PureState::basis_state(d, m));
    }
    // J = a+1: eigenbasis of E_{1a}, eigenvalue index t ascending.
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    for a in 0..d {
        for t in 0..d {
            // λ_t = exp(i(πa(d−1) + 2πt)/d); v_t[m] = ω^{a·m(m−1)/2} λ_t^{−m}/√d.
            let lambda_angle =
                (std::f64::consts::PI * (a * (d - 1)) as f64 + TAU * t as f64) / d as f64;
            let amp: Vec<Complex64> = (0..d)
                .map(|m| {
                    let m_choose_2 = m * m.saturating_sub(1) / 2; // m(m−1)/2
                    let omega_pow = TAU * (a * m_choose_2) as f64 / d as f64;
                    Complex64::from_polar(inv_sqrt_d, omega_pow - lambda_angle * m as f64)
                })
                .collect();
            states.push(PureState::new(amp)?);
        }
    }
    let design = StateDesign { dim: d, n_bases: d + 1, states };
    certify_mub(&design)?;
    Ok(design)
}

/// Verifies intra-basis orthonormality and the cross-basis overlap |⟨·|·⟩|² = 1/d.
fn certify_mub(design: &StateDesign) -> Result<()> {
    let d = design.dim();
    for j1 in 0..design.n_bases() {
        for m1 in 0..d {
            for j2 in j1..design.n_bases() {
                for m2 in 0..d {
                    if j1 == j2 && m2 < m1 {
                        continue;
                    }
                    let ov = design.state(j1, m1).inner(design.state(j2, m2)).norm();
                    let want = if j1 == j2 {
                        if m1 == m2 { 1.0 } else { 0.0 }
                    } else {
                        (1.0 / d as f64).sqrt()
                    };
                    if (ov - want).abs() > eps::DESIGN_OVERLAP {
                        return Err(Error::ClosureViolated(format!(
                            "overlap |⟨ψ_{}^{}|ψ_{}^{}⟩| = {} deviates from {}",
                            m1, j1, m2, j2, ov, want
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Frame potential Σ_{m,n} |⟨ψ_m|ψ_n⟩|⁴ of a state set; equals
/// 2N²/(d(d+1)) exactly when the set is a 2-design.
pub fn frame_potential(design: &StateDesign) -> f64 {
    frame_potential_states(design.states())
}

/// Frame potential of an arbitrary state list (same formula as
/// [`frame_potential`]; exposed for testing non-design sets).
pub fn frame_potential_states(states: &[PureState]) -> f64 {
    let mut acc = 0.0;
    for a in states {
        for b in states {
            acc += a.inner(b).norm_sqr().powi(2);
        }
    }
    acc
}

/// The 2-design bound 2N²/(d(d+1)) that [`frame_potential`] attains.
pub fn frame_potential_bound(dim: usize, n_states: usize) -> f64 {
    2.0 * (n_states * n_states) as f64 / (dim * (dim + 1)) as f64
}

/// Uniform design average of Tr[P_ψ A P_ψ B] = ⟨ψ|A|ψ⟩⟨ψ|B|ψ⟩.
pub fn design_average(states: &[PureState], a: &ComplexMatrix, b: &ComplexMatrix) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for psi in states {
        let av = psi.amplitudes();
        let ea: Complex64 = a
            .matvec(av)
            .iter()
            .zip(av)
            .map(|(y, x)| x.conj() * y)
            .sum();
        let eb: Complex64 = b
            .matvec(av)
            .iter()
            .zip(av)
            .map(|(y, x)| x.conj() * y)
            .sum();
        acc += ea * eb;
    }
    acc / states.len() as f64
}

/// Haar value of the same average: (Tr A · Tr B + Tr[AB])/(d(d+1)).
pub fn haar_average(a: &ComplexMatrix, b: &ComplexMatrix) -> Complex64 {
    let d = a.rows();
    (a.trace() * b.trace() + a.mul(b).trace()) / (d * (d + 1)) as f64
}

/// Closure table: how each operator-basis element permutes each MUB.
///
/// Entry (n, J, M) holds (M', phase) with E_n|ψ_M^J⟩ = phase·|ψ_{M'}^J⟩
/// and |phase| = 1.  The inverse table gives the action of E_n†.
#[derive(Debug, Clone)]
pub struct ClosureTable {
    dim: usize,
    n_bases: usize,
    forward: Vec<(usize, Complex64)>,
    inverse: Vec<(usize, Complex64)>,
}

impl ClosureTable {
    fn idx(&self, n: usize, j: usize, m: usize) -> usize {
        (n * self.n_bases + j) * self.dim + m
    }

    /// Action of E_n: returns (M', phase) with E_n|ψ_M^J⟩ = phase·|ψ_{M'}^J⟩.
    pub fn apply(&self, n: usize, j: usize, m: usize) -> (usize, Complex64) {
        self.forward[self.idx(n, j, m)]
    }

    /// Action of E_n† (the inverse permutation with conjugated phase).
    pub fn apply_dagger(&self, n: usize, j: usize, m: usize) -> (usize, Complex64) {
        self.inverse[self.idx(n, j, m)]
    }
}

/// Builds the closure table of an operator basis over a MUB design.
///
/// Each image E_n|ψ_M^J⟩ must coincide (up to phase) with a state of the
/// same basis J; a residual above tolerance means the basis/design pair
/// does not close and is rejected.
pub fn mub_closure(basis: &[ComplexMatrix], design: &StateDesign) -> Result<ClosureTable> {
    let d = design.dim();
    if basis.len() != d * d || basis.iter().any(|e| e.rows() != d || e.cols() != d) {
        return Err(Error::DimensionMismatch(format!(
            "operator basis of {} elements does not match design dim {}",
            basis.len(),
            d
        )));
    }
    let n_bases = design.n_bases();
    let idx = |n: usize, j: usize, m: usize| (n * n_bases + j) * d + m;
    let mut forward = vec![(0usize, Complex64::new(0.0, 0.0)); basis.len() * n_bases * d];
    let mut inverse = forward.clone();
    for (n, e) in basis.iter().enumerate() {
        for j in 0..n_bases {
            for m in 0..d {
                let image = e.matvec(design.state(j, m).amplitudes());
                // Identify the unique basis-J state the image is proportional to.
                let mut best = (0usize, Complex64::new(0.0, 0.0));
                for m2 in 0..d {
                    let ov: Complex64 = design
                        .state(j, m2)
                        .amplitudes()
                        .iter()
                        .zip(&image)
                        .map(|(s, x)| s.conj() * x)
                        .sum();
                    if ov.norm() > best.1.norm() {
                        best = (m2, ov);
                    }
                }
                let (m_to, phase) = best;
                let residual: f64 = design
                    .state(j, m_to)
                    .amplitudes()
                    .iter()
                    .zip(&image)
                    .map(|(s, x)| (x - phase * s).norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                if residual > eps::CLOSURE || (phase.norm() - 1.0).abs() > eps::CLOSURE {
                    return Err(Error::ClosureViolated(format!(
                        "E_{} maps state (J={}, M={}) outside its basis (residual {:.2e}, |phase| {:.6})",
                        n, j, m, residual, phase.norm()
                    )));
                }
                forward[idx(n, j, m)] = (m_to, phase);
                // E_n†|ψ_{M'}⟩ = conj(phase)·|ψ_M⟩ since E_n is unitary.
                inverse[idx(n, j, m_to)] = (m, phase.conj());
            }
        }
    }
    Ok(ClosureTable { dim: d, n_bases, forward, inverse })
}

/// Tensor-product design over two factor designs; houses the bipartite
/// preparation set with N = N₁·N₂ states addressed by (J₁, M₁, J₂, M₂).
#[derive(Debug, Clone)]
pub struct ProductDesign {
    left: StateDesign,
    right: StateDesign,
    states: Vec<PureState>,
}

impl ProductDesign {
    /// Left (first-factor) design.
    pub fn left(&self) -> &StateDesign {
        &self.left
    }

    /// Right (second-factor) design.
    pub fn right(&self) -> &StateDesign {
        &self.right
    }

    /// Composite dimension D₁·D₂.
    pub fn dim(&self) -> usize {
        self.left.dim() * self.right.dim()
    }

    /// Total number of product states N₁·N₂.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    /// Whether the product set is empty (never true once constructed).
    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Flat index of (J₁, M₁, J₂, M₂): flat₁·N₂ + flat₂.
    pub fn flat(&self, j1: usize, m1: usize, j2: usize, m2: usize) -> usize {
        self.left.flat(j1, m1) * self.right.len() + self.right.flat(j2, m2)
    }

    /// (J₁, M₁, J₂, M₂) label of a flat index.
    pub fn label(&self, flat: usize) -> (usize, usize, usize, usize) {
        let (f1, f2) = (flat / self.right.len(), flat % self.right.len());
        let (j1, m1) = self.left.label(f1);
        let (j2, m2) = self.right.label(f2);
        (j1, m1, j2, m2)
    }

    /// Product state |ψ_{M₁}^{J₁}⟩ ⊗ |ψ_{M₂}^{J₂}⟩ by flat index.
    pub fn state_flat(&self, flat: usize) -> &PureState {
        &self.states[flat]
    }

    /// All product states in flat order.
    pub fn states(&self) -> &[PureState] {
        &self.states
    }
}

/// Builds the set of all tensor products between two designs.
pub fn product_design(left: StateDesign, right: StateDesign) -> ProductDesign {
    let mut states = Vec::with_capacity(left.len() * right.len());
    for s1 in left.states() {
        for s2 in right.states() {
            states.push(s1.tensor(s2));
        }
    }
    ProductDesign { left, right, states }
}
