//! The preparation-plan decomposition: every modified input operator
//! E_i† P_ψ E_j must be reproduced exactly by the weighted projector
//! combination the plan prescribes — exhaustively over the design, and
//! on random states via property testing.

use proptest::prelude::*;
use seqpt::channels::modified_channel_plan;
use seqpt::designs::mub_design;
use seqpt::opbasis::sylvester_basis;
use seqpt::qmath::{Complex64, ComplexMatrix, PureState};

fn target(i: usize, j: usize, psi: &PureState, basis: &[ComplexMatrix]) -> ComplexMatrix {
    basis[i].dagger().mul(&psi.projector()).mul(&basis[j])
}

#[test]
fn plans_reconstruct_all_elements_over_the_design() {
    let dim = 3;
    let basis = sylvester_basis(dim);
    let design = mub_design(dim).unwrap();
    let mut worst = 0.0f64;
    for i in 0..basis.len() {
        for j in 0..basis.len() {
            for flat in 0..design.len() {
                let psi = design.state_flat(flat);
                let plan = modified_channel_plan(i, j, psi, &basis).unwrap();
                let gap = plan.assemble(dim).max_abs_diff(&target(i, j, psi, &basis));
                worst = worst.max(gap);
            }
        }
    }
    assert!(worst < 1e-10, "worst reconstruction gap {}", worst);
}

fn random_state(dim: usize, raw: &[f64]) -> PureState {
    let amp: Vec<Complex64> = (0..dim)
        .map(|k| Complex64::new(raw[2 * k], raw[2 * k + 1]))
        .collect();
    // Reject near-zero vectors by mixing in a deterministic offset.
    let norm: f64 = amp.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    if norm < 1e-3 {
        return PureState::basis_state(dim, 0);
    }
    PureState::new(amp.iter().map(|a| a / norm).collect::<Vec<_>>()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plans_reconstruct_random_states(
        dim in prop::sample::select(vec![2usize, 3, 5]),
        raw in prop::collection::vec(-1.0..1.0f64, 2 * 5),
        idx in prop::collection::vec(0usize..1000, 2),
    ) {
        let basis = sylvester_basis(dim);
        let psi = random_state(dim, &raw);
        let i = idx[0] % basis.len();
        let j = idx[1] % basis.len();
        let plan = modified_channel_plan(i, j, &psi, &basis).unwrap();
        let gap = plan.assemble(dim).max_abs_diff(&target(i, j, &psi, &basis));
        prop_assert!(gap < 1e-10, "gap {} at ({}, {}) d={}", gap, i, j, dim);
    }

    #[test]
    fn plan_weights_are_bounded(
        raw in prop::collection::vec(-1.0..1.0f64, 2 * 3),
        idx in prop::collection::vec(0usize..9, 2),
    ) {
        // Preparation weights stay O(1): the four-projector split uses
        // fixed coefficients and the oblique branch normalizes its states.
        let basis = sylvester_basis(3);
        let psi = random_state(3, &raw);
        let plan = modified_channel_plan(idx[0], idx[1], &psi, &basis).unwrap();
        for term in &plan.terms {
            prop_assert!(term.coeff.norm() <= 2.0 + 1e-12);
        }
    }
}
