//! Unitary operator bases.
//!
//! The reconstruction expands a channel in the Sylvester (generalized Pauli)
//! basis E_{kl} = Σ_m ω^{ml} |m⊕k⟩⟨m| with ω = e^{2πi/d}, which is unitary
//! and trace-orthogonal: Tr[E_{kl}† E_{k'l'}] = d·δ_{kk'}δ_{ll'}.  Elements
//! are indexed flat as n = k·d + l, so E_0 is always the identity.  For
//! composite dimensions D₁·D₂ the basis is the tensor product of the factor
//! bases, indexed as n = n₁·D₂² + n₂.

use crate::qmath::{eps, tensor, Complex64, ComplexMatrix};
use crate::{Error, Result};
use std::f64::consts::TAU;

/// Splits a flat Sylvester index n = k·d + l into (k, l).
pub fn sylvester_indices(dim: usize, n: usize) -> (usize, usize) {
    (n / dim, n % dim)
}

/// Single Sylvester element E_{kl} in the given dimension.
pub fn sylvester_element(dim: usize, k: usize, l: usize) -> ComplexMatrix {
    let mut e = ComplexMatrix::zeros(dim, dim);
    for m in 0..dim {
        let phase = TAU * (m * l) as f64 / dim as f64;
        e.set((m + k) % dim, m, Complex64::from_polar(1.0, phase));
    }
    e
}

/// The full Sylvester basis, flat-indexed as n = k·d + l.
pub fn sylvester_basis(dim: usize) -> Vec<ComplexMatrix> {
    let mut basis = Vec::with_capacity(dim * dim);
    for k in 0..dim {
        for l in 0..dim {
            basis.push(sylvester_element(dim, k, l));
        }
    }
    basis
}

/// Tensor-product basis E_{n₁} ⊗ E_{n₂} over factor dimensions (D₁, D₂),
/// flat-indexed as n = n₁·D₂² + n₂.
pub fn product_basis(d1: usize, d2: usize) -> Vec<ComplexMatrix> {
    let b1 = sylvester_basis(d1);
    let b2 = sylvester_basis(d2);
    let mut basis = Vec::with_capacity(b1.len() * b2.len());
    for e1 in &b1 {
        for e2 in &b2 {
            basis.push(tensor(e1, e2));
        }
    }
    basis
}

/// Factors a composite dimension into two supported prime factors (D₁, D₂),
/// D₁ ≤ D₂, when such a factorization exists (e.g. 6 → (2, 3)).
pub fn bipartite_factors(dim: usize) -> Option<(usize, usize)> {
    const PRIMES: [usize; 4] = [2, 3, 5, 7];
    for p in PRIMES {
        if dim.is_multiple_of(p) && p <= dim / p && PRIMES.contains(&(dim / p)) {
            return Some((p, dim / p));
        }
    }
    None
}

/// The basis the reconstruction is expressed in: the Sylvester basis for
/// prime dimensions and the tensor-product basis for composite dimensions
/// with two supported prime factors.
pub fn standard_basis(dim: usize) -> Vec<ComplexMatrix> {
    match bipartite_factors(dim) {
        Some((d1, d2)) => product_basis(d1, d2),
        None => sylvester_basis(dim),
    }
}

/// Name of the standard basis for a dimension, as recorded in serialized
/// reconstruction results.
pub fn standard_basis_name(dim: usize) -> &'static str {
    if bipartite_factors(dim).is_some() {
        "product"
    } else {
        "sylvester"
    }
}

/// Expansion coefficients of an operator in a trace-orthogonal basis:
/// a = Σ_i c_i E_i with c_i = Tr[E_i† a]/d.
pub fn expand_operator(a: &ComplexMatrix, basis: &[ComplexMatrix]) -> Result<Vec<Complex64>> {
    let d = a.rows();
    if a.cols() != d {
        return Err(Error::DimensionMismatch(format!(
            "expand_operator needs a square operator, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if basis.len() != d * d || basis.iter().any(|e| e.rows() != d || e.cols() != d) {
        return Err(Error::DimensionMismatch(format!(
            "basis of {} elements does not span {}x{} operators",
            basis.len(),
            d,
            d
        )));
    }
    let mut coeffs = Vec::with_capacity(basis.len());
    for e in basis {
        // Tr[E† a] = Σ_{ij} conj(E_ij) a_ij — no intermediate product needed.
        let mut acc = Complex64::new(0.0, 0.0);
        for (x, y) in e.data().iter().zip(a.data()) {
            acc += x.conj() * y;
        }
        coeffs.push(acc / d as f64);
    }
    Ok(coeffs)
}

/// Reassembles Σ_i c_i E_i; inverse of [`expand_operator`].
pub fn assemble_operator(coeffs: &[Complex64], basis: &[ComplexMatrix]) -> Result<ComplexMatrix> {
    if coeffs.len() != basis.len() || basis.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients for {} basis elements",
            coeffs.len(),
            basis.len()
        )));
    }
    let d = basis[0].rows();
    let mut out = ComplexMatrix::zeros(d, d);
    for (c, e) in coeffs.iter().zip(basis) {
        if c.norm_sqr() == 0.0 {
            continue;
        }
        out = out.add(&e.scale(*c));
    }
    Ok(out)
}

/// Checks unitarity and trace-orthogonality of a basis; used by tests and
/// by the design-certification paths.
pub fn verify_trace_orthogonality(basis: &[ComplexMatrix]) -> Result<()> {
    let d = basis[0].rows();
    for (i, a) in basis.iter().enumerate() {
        let gram = a.dagger().mul(a);
        if gram.max_abs_diff(&ComplexMatrix::identity(d)) > eps::UNITARITY {
            return Err(Error::ClosureViolated(format!("basis element {} is not unitary", i)));
        }
        for (j, b) in basis.iter().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (x, y) in a.data().iter().zip(b.data()) {
                acc += x.conj() * y;
            }
            let want = if i == j { d as f64 } else { 0.0 };
            if (acc - want).norm() > eps::TRACE_ORTHO {
                return Err(Error::ClosureViolated(format!(
                    "Tr[E_{}† E_{}] = {} deviates from {}",
                    i, j, acc, want
                )));
            }
        }
    }
    Ok(())
}
