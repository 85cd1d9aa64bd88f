//! Physicality projection and process-fidelity comparison.
//!
//! A reconstructed process matrix carries estimation noise, so it is
//! generally neither positive semidefinite nor consistent with the known
//! survival operator.  `project_physical` maps it to the closest matrix
//! (in Frobenius distance) that is PSD and has the prescribed trace,
//! using Dykstra's alternating-projection algorithm between the PSD cone
//! and the trace hyperplane.  `process_fidelity` compares two process
//! matrices on the same footing regardless of their traces.

use crate::qmath::{eigh, eps, sqrtm_psd, Complex64, ComplexMatrix};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Convergence summary of a physicality projection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionReport {
    /// Dykstra sweeps performed.
    pub iterations: usize,
    /// Frobenius gap between the last PSD iterate and trace iterate.
    pub final_residual: f64,
    /// |Tr χ_opt − trace target| of the returned matrix.
    pub constraint_gap: f64,
    /// Whether the residual dropped below tolerance within the sweep budget.
    pub converged: bool,
}

/// Projects a Hermitian matrix onto {χ ⪰ 0, Tr χ = trace_target} in
/// Frobenius distance via Dykstra's algorithm.  Returns the PSD iterate —
/// exactly positive semidefinite up to eigenvalue clipping, with the trace
/// constraint met up to `final_residual`.  A non-Hermitian input is first
/// replaced by its Hermitian part, which is itself the Frobenius
/// projection onto Hermitian matrices.
///
/// Matrices whose support is confined to a few rows and columns (as
/// produced by selective estimation) are detected and projected in the
/// reduced support block, which is exactly equivalent and much faster.
pub fn project_physical(
    chi_raw: &ComplexMatrix,
    trace_target: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(ComplexMatrix, ProjectionReport)> {
    let n = chi_raw.rows();
    if chi_raw.cols() != n {
        return Err(Error::DimensionMismatch(format!(
            "projection input is {}x{}",
            n,
            chi_raw.cols()
        )));
    }
    if trace_target < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "trace target {} is negative",
            trace_target
        )));
    }
    let x0 = chi_raw.hermitized();
    let support = support_indices(&x0);
    if support.len() < n {
        let block = restrict(&x0, &support);
        let (block_opt, comp_opt, report) =
            dykstra_reduced(&block, 0.0, n, trace_target, tol, max_iter)?;
        let mut full = ComplexMatrix::zeros(n, n);
        for (bi, &i) in support.iter().enumerate() {
            for (bj, &j) in support.iter().enumerate() {
                full.set(i, j, block_opt.get(bi, bj));
            }
        }
        if comp_opt != 0.0 {
            let mut in_support = vec![false; n];
            for &i in &support {
                in_support[i] = true;
            }
            for (i, &inside) in in_support.iter().enumerate() {
                if !inside {
                    full.set(i, i, Complex64::new(comp_opt, 0.0));
                }
            }
        }
        return Ok((full, report));
    }
    let (opt, report) = dykstra_full(&x0, trace_target, tol, max_iter)?;
    Ok((opt, report))
}

/// Indices whose row or column carries any nonzero entry.  Entries are
/// compared against exact zero: selective reconstruction leaves
/// unestimated elements untouched, so the unused block is identically 0.
fn support_indices(m: &ComplexMatrix) -> Vec<usize> {
    let n = m.rows();
    let mut used = vec![false; n];
    for i in 0..n {
        for j in 0..n {
            let v = m.get(i, j);
            if v.re != 0.0 || v.im != 0.0 {
                used[i] = true;
                used[j] = true;
            }
        }
    }
    let support: Vec<usize> = (0..n).filter(|&i| used[i]).collect();
    if support.is_empty() {
        // The zero matrix still needs one carrier dimension for the trace shift.
        vec![0]
    } else {
        support
    }
}

fn restrict(m: &ComplexMatrix, support: &[usize]) -> ComplexMatrix {
    let k = support.len();
    ComplexMatrix::from_fn(k, k, |i, j| m.get(support[i], support[j]))
}

/// Projection onto the PSD cone: clip negative eigenvalues.
fn psd_projection(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let (vals, vecs) = eigh(&m.hermitized())?;
    let n = m.rows();
    let mut out = ComplexMatrix::zeros(n, n);
    for (k, &lam) in vals.iter().enumerate() {
        if lam <= 0.0 {
            continue;
        }
        for i in 0..n {
            let vi = vecs.get(i, k);
            if vi.norm_sqr() == 0.0 {
                continue;
            }
            for j in 0..n {
                let add = vi * vecs.get(j, k).conj() * lam;
                out.set(i, j, out.get(i, j) + add);
            }
        }
    }
    Ok(out.hermitized())
}

fn dykstra_full(
    x0: &ComplexMatrix,
    trace_target: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(ComplexMatrix, ProjectionReport)> {
    let n = x0.rows();
    let mut x = x0.clone();
    let mut p = ComplexMatrix::zeros(n, n);
    let mut q = ComplexMatrix::zeros(n, n);
    let mut best = x0.clone();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    for it in 1..=max_iter {
        iterations = it;
        let y = psd_projection(&x.add(&p))?;
        p = x.add(&p).sub(&y);
        // Trace-hyperplane projection: uniform diagonal shift.
        let z = y.add(&q);
        let shift = (trace_target - z.trace().re) / n as f64;
        let mut xn = z.clone();
        for i in 0..n {
            xn.set(i, i, xn.get(i, i) + Complex64::new(shift, 0.0));
        }
        q = z.sub(&xn);
        residual = y.sub(&xn).frobenius_norm();
        best = y;
        x = xn;
        if residual <= tol {
            break;
        }
    }
    let constraint_gap = (best.trace().re - trace_target).abs();
    let converged = residual <= tol;
    Ok((
        best,
        ProjectionReport { iterations, final_residual: residual, constraint_gap, converged },
    ))
}

/// Reduced Dykstra on matrices of the form B ⊕ c·I, where B lives on the
/// support block and c is a shared scalar on the complement diagonal.
/// Both projections preserve this form: the PSD clip acts blockwise, and
/// the trace shift adds the same constant everywhere.
fn dykstra_reduced(
    block0: &ComplexMatrix,
    comp0: f64,
    n_full: usize,
    trace_target: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(ComplexMatrix, f64, ProjectionReport)> {
    let k = block0.rows();
    let n_comp = (n_full - k) as f64;
    let mut xb = block0.clone();
    let mut xc = comp0;
    let mut pb = ComplexMatrix::zeros(k, k);
    let mut pc = 0.0f64;
    let mut qb = ComplexMatrix::zeros(k, k);
    let mut qc = 0.0f64;
    let mut best_b = block0.clone();
    let mut best_c = comp0;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    for it in 1..=max_iter {
        iterations = it;
        let yb = psd_projection(&xb.add(&pb))?;
        let yc = (xc + pc).max(0.0);
        pb = xb.add(&pb).sub(&yb);
        pc = xc + pc - yc;
        let zb = yb.add(&qb);
        let zc = yc + qc;
        let total = zb.trace().re + n_comp * zc;
        let shift = (trace_target - total) / n_full as f64;
        let mut xnb = zb.clone();
        for i in 0..k {
            xnb.set(i, i, xnb.get(i, i) + Complex64::new(shift, 0.0));
        }
        let xnc = zc + shift;
        qb = zb.sub(&xnb);
        qc = zc - xnc;
        let db = yb.sub(&xnb).frobenius_norm();
        let dc = yc - xnc;
        residual = (db * db + n_comp * dc * dc).sqrt();
        best_b = yb;
        best_c = yc;
        xb = xnb;
        xc = xnc;
        if residual <= tol {
            break;
        }
    }
    let constraint_gap = (best_b.trace().re + n_comp * best_c - trace_target).abs();
    let converged = residual <= tol;
    Ok((
        best_b,
        best_c,
        ProjectionReport { iterations, final_residual: residual, constraint_gap, converged },
    ))
}

/// Process fidelity between two (approximately) PSD process matrices,
/// normalized by their traces:
/// ℱ = Tr√(√χ_a χ_b √χ_a) / (√Tr χ_a · √Tr χ_b).
/// Equal matrices give 1; matrices with orthogonal support give 0.
pub fn process_fidelity(chi_a: &ComplexMatrix, chi_b: &ComplexMatrix) -> Result<f64> {
    if chi_a.rows() != chi_b.rows() || chi_a.cols() != chi_b.cols() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            chi_a.rows(),
            chi_a.cols(),
            chi_b.rows(),
            chi_b.cols()
        )));
    }
    let ta = chi_a.trace().re;
    let tb = chi_b.trace().re;
    if ta <= eps::STATE_NORM || tb <= eps::STATE_NORM {
        return Err(Error::ZeroTrace);
    }
    let sa = sqrtm_psd(chi_a)?;
    let inner = sa.mul(chi_b).mul(&sa);
    let root = sqrtm_psd(&inner)?;
    Ok((root.trace().re / (ta.sqrt() * tb.sqrt())).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmath::eps::{PROJ_MAX_ITER, PROJ_TOL};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn diag(vals: &[f64]) -> ComplexMatrix {
        let n = vals.len();
        ComplexMatrix::from_fn(n, n, |i, j| if i == j { c(vals[i], 0.0) } else { c(0.0, 0.0) })
    }

    fn min_eigenvalue(m: &ComplexMatrix) -> f64 {
        let (vals, _) = eigh(m).unwrap();
        vals[0]
    }

    /// Small congruential generator so fixtures need no external RNG.
    struct Lcg(u64);
    impl Lcg {
        fn next_f64(&mut self) -> f64 {
            self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (self.0 >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        }
        fn hermitian(&mut self, n: usize, scale: f64) -> ComplexMatrix {
            let mut m = ComplexMatrix::zeros(n, n);
            for i in 0..n {
                m.set(i, i, c(self.next_f64() * scale, 0.0));
                for j in (i + 1)..n {
                    let v = c(self.next_f64() * scale, self.next_f64() * scale);
                    m.set(i, j, v);
                    m.set(j, i, v.conj());
                }
            }
            m
        }
    }

    #[test]
    fn physical_input_is_a_fixed_point() {
        let chi = diag(&[0.6, 0.3, 0.1, 0.0]);
        let (opt, report) = project_physical(&chi, 1.0, PROJ_TOL, PROJ_MAX_ITER).unwrap();
        assert!(opt.max_abs_diff(&chi) < 1e-9);
        assert!(report.converged);
        assert!(report.iterations <= 3);
    }

    #[test]
    fn diagonal_projection_matches_water_filling() {
        // Projection of a diagonal matrix onto {PSD, trace t} keeps it
        // diagonal with entries max(a_i − θ, 0), θ fixed by the trace.
        let chi = diag(&[1.3, 0.5, -0.3, 0.1]);
        let (opt, report) = project_physical(&chi, 1.1, PROJ_TOL, PROJ_MAX_ITER).unwrap();
        assert!(report.converged);
        let expect = diag(&[0.95, 0.15, 0.0, 0.0]);
        assert!(opt.max_abs_diff(&expect) < 1e-7, "gap {}", opt.max_abs_diff(&expect));
    }

    #[test]
    fn projection_output_is_feasible_for_noisy_input() {
        let mut rng = Lcg(17);
        let base = diag(&[0.5, 0.3, 0.15, 0.05]);
        for _ in 0..20 {
            let chi = base.add(&rng.hermitian(4, 0.2));
            let (opt, report) = project_physical(&chi, 1.0, PROJ_TOL, PROJ_MAX_ITER).unwrap();
            assert!(report.converged);
            assert!(min_eigenvalue(&opt) >= -1e-9);
            assert!((opt.trace().re - 1.0).abs() < 1e-6);
            assert!(report.constraint_gap < 1e-6);
        }
    }

    #[test]
    fn projection_is_idempotent() {
        let mut rng = Lcg(3);
        let chi = diag(&[0.5, 0.4, 0.1, 0.0]).add(&rng.hermitian(4, 0.3));
        let (opt, _) = project_physical(&chi, 1.0, PROJ_TOL, PROJ_MAX_ITER).unwrap();
        let (opt2, _) = project_physical(&opt, 1.0, PROJ_TOL, PROJ_MAX_ITER).unwrap();
        assert!(opt2.max_abs_diff(&opt) < 10.0 * PROJ_TOL);
    }

    #[test]
    fn projection_never_beats_feasible_points() {
        let mut rng = Lcg(29);
        let chi = rng.hermitian(4, 0.5);
        let (opt, _) = project_physical(&chi, 1.0, PROJ_TOL, PROJ_MAX_ITER).unwrap();
        let d_opt = chi.hermitized().sub(&opt).frobenius_norm();
        for _ in 0..50 {
            // Random feasible point: PSD with the right trace.
            let g = rng.hermitian(4, 1.0);
            let feasible = {
                let sq = g.mul(&g.dagger());
                let t = sq.trace().re;
                sq.scale(c(1.0 / t, 0.0))
            };
            let d_f = chi.hermitized().sub(&feasible).frobenius_norm();
            assert!(d_opt <= d_f + 1e-7);
        }
    }

    #[test]
    fn reduced_path_matches_full_dykstra() {
        // Build a 9×9 input supported on rows/columns {0, 4, 8}.
        let mut rng = Lcg(41);
        let block = rng.hermitian(3, 0.6).add(&diag(&[0.4, 0.3, 0.2]));
        let support = [0usize, 4, 8];
        let mut full = ComplexMatrix::zeros(9, 9);
        for (bi, &i) in support.iter().enumerate() {
            for (bj, &j) in support.iter().enumerate() {
                full.set(i, j, block.get(bi, bj));
            }
        }
        let (via_masked, _) = project_physical(&full, 0.9, PROJ_TOL, PROJ_MAX_ITER).unwrap();
        let (via_full, _) = dykstra_full(&full.hermitized(), 0.9, PROJ_TOL, PROJ_MAX_ITER).unwrap();
        assert!(via_masked.max_abs_diff(&via_full) < 1e-7);
    }

    #[test]
    fn masked_trace_shift_spreads_over_complement() {
        // A supported block with too little trace: the deficit spreads as a
        // uniform diagonal on all 9 dimensions, complement included.
        let mut full = ComplexMatrix::zeros(9, 9);
        full.set(0, 0, c(0.1, 0.0));
        let (opt, report) = project_physical(&full, 1.0, PROJ_TOL, PROJ_MAX_ITER).unwrap();
        assert!(report.converged);
        assert!((opt.trace().re - 1.0).abs() < 1e-6);
        let comp = opt.get(5, 5).re;
        assert!(comp > 0.0);
        assert!((opt.get(8, 8).re - comp).abs() < 1e-12);
    }

    #[test]
    fn nonconvergence_is_flagged_not_hidden() {
        let mut rng = Lcg(7);
        let chi = rng.hermitian(4, 1.0);
        let (_, report) = project_physical(&chi, 1.0, PROJ_TOL, 1).unwrap();
        assert!(!report.converged);
        assert_eq!(report.iterations, 1);
        assert!(report.final_residual > PROJ_TOL);
    }

    #[test]
    fn fidelity_limits() {
        let chi = diag(&[0.7, 0.3, 0.0, 0.0]);
        assert!((process_fidelity(&chi, &chi).unwrap() - 1.0).abs() < 1e-12);
        let a = diag(&[1.0, 0.0]);
        let b = diag(&[0.0, 1.0]);
        assert!(process_fidelity(&a, &b).unwrap() < 1e-9);
        // Rank-1 versus rank-1: fidelity is the state overlap.
        let mut plus = ComplexMatrix::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                plus.set(i, j, c(0.5, 0.0));
            }
        }
        let f = process_fidelity(&a, &plus).unwrap();
        assert!((f - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn fidelity_is_trace_scale_invariant() {
        let a = diag(&[0.5, 0.25, 0.25, 0.0]);
        let b = diag(&[0.4, 0.3, 0.2, 0.1]);
        let f1 = process_fidelity(&a, &b).unwrap();
        let f2 = process_fidelity(&a.scale(c(2.0, 0.0)), &b.scale(c(0.5, 0.0))).unwrap();
        assert!((f1 - f2).abs() < 1e-12);
    }

    #[test]
    fn zero_trace_is_an_error() {
        let z = ComplexMatrix::zeros(4, 4);
        let a = diag(&[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(process_fidelity(&z, &a), Err(Error::ZeroTrace)));
    }
}
