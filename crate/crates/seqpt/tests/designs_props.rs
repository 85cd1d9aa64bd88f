//! Design-level properties: 2-design certification across the supported
//! prime dimensions, equivalence of design and Haar averages on random
//! operator pairs, and the structure of the basis closure.

use proptest::prelude::*;
use seqpt::designs::{
    design_average, frame_potential, frame_potential_bound, haar_average, mub_closure, mub_design,
    product_design,
};
use seqpt::opbasis::sylvester_basis;
use seqpt::qmath::{Complex64, ComplexMatrix};

fn hermitian_from(entries: &[f64], dim: usize) -> ComplexMatrix {
    let m = ComplexMatrix::from_fn(dim, dim, |r, c| {
        let k = 2 * (r * dim + c);
        Complex64::new(entries[k], entries[k + 1])
    });
    m.add(&m.dagger()).scale(Complex64::new(0.5, 0.0))
}

#[test]
fn mub_designs_saturate_the_two_design_bound() {
    for dim in [2usize, 3, 5, 7] {
        let design = mub_design(dim).unwrap();
        let fp = frame_potential(&design);
        let bound = frame_potential_bound(dim, design.len());
        assert!(
            (fp - bound).abs() < 1e-10,
            "d={} frame potential {} vs bound {}",
            dim,
            fp,
            bound
        );
    }
}

#[test]
fn product_of_designs_is_not_a_design() {
    let product = product_design(mub_design(2).unwrap(), mub_design(3).unwrap());
    let fp = seqpt::designs::frame_potential_states(product.states());
    let bound = frame_potential_bound(6, product.len());
    assert!(
        fp > bound * 1.01,
        "product frame potential {} unexpectedly near the bound {}",
        fp,
        bound
    );
}

#[test]
fn closure_permutes_each_basis() {
    for dim in [2usize, 3, 5] {
        let design = mub_design(dim).unwrap();
        let basis = sylvester_basis(dim);
        let closure = mub_closure(&basis, &design).unwrap();
        for n in 0..basis.len() {
            for j in 0..design.n_bases() {
                let mut seen = vec![false; dim];
                for m in 0..dim {
                    let (mp, phase) = closure.apply(n, j, m);
                    assert!((phase.norm() - 1.0).abs() < 1e-10);
                    assert!(!seen[mp], "closure not injective at (n={}, j={})", n, j);
                    seen[mp] = true;
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn design_average_equals_haar_average(
        dim in prop::sample::select(vec![2usize, 3, 5]),
        raw_a in prop::collection::vec(-1.0..1.0f64, 2 * 5 * 5),
        raw_b in prop::collection::vec(-1.0..1.0f64, 2 * 5 * 5),
    ) {
        let a = hermitian_from(&raw_a, dim);
        let b = hermitian_from(&raw_b, dim);
        let design = mub_design(dim).unwrap();
        let lhs = design_average(design.states(), &a, &b);
        let rhs = haar_average(&a, &b);
        prop_assert!((lhs - rhs).norm() < 1e-9, "d={} gap {}", dim, (lhs - rhs).norm());
    }

    #[test]
    fn closure_dagger_inverts_closure(
        dim in prop::sample::select(vec![2usize, 3, 5]),
        pick in prop::collection::vec(0usize..1000, 3),
    ) {
        let design = mub_design(dim).unwrap();
        let basis = sylvester_basis(dim);
        let closure = mub_closure(&basis, &design).unwrap();
        let n = pick[0] % basis.len();
        let j = pick[1] % design.n_bases();
        let m = pick[2] % dim;
        // E_n maps (j, m) to (j, m') with a phase; E_n† maps it back and
        // the phases cancel because the generators are unitary.
        let (mp, phase) = closure.apply(n, j, m);
        let (back, back_phase) = closure.apply_dagger(n, j, mp);
        prop_assert_eq!(back, m);
        prop_assert!((phase * back_phase - Complex64::new(1.0, 0.0)).norm() < 1e-10);
    }
}
