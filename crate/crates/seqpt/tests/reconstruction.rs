//! End-to-end reconstruction checks across the process library: exact
//! estimation against the analytic process matrix, shot-noise
//! convergence, the trace-preserving assumption's failure under loss,
//! the standard-tomography cross-check, and the selective protocol.

use seqpt::channels::{loss_operator, make_process, LossOperator, ProcessName};
use seqpt::opbasis::standard_basis;
use seqpt::physicality::{process_fidelity, project_physical};
use seqpt::qmath::eps;
use seqpt::tomography::{
    analytic_chi, full_reconstruct, selective_reconstruct, sqpt_reconstruct, Estimator, Mode,
    SelectiveOptions, ShotPlan, SqptEngine, survival_trace_target,
};

fn library() -> Vec<(usize, ProcessName)> {
    vec![
        (3, ProcessName::Id),
        (3, ProcessName::H01),
        (3, ProcessName::H12),
        (6, ProcessName::Id),
        (6, ProcessName::Phase),
        (6, ProcessName::Swap25),
    ]
}

#[test]
fn exact_reconstruction_matches_the_analytic_process_matrix() {
    for (dim, name) in library() {
        for loss in [0.0, 0.5] {
            let ch = make_process(name, dim, loss).unwrap();
            let basis = standard_basis(dim);
            let p = loss_operator(&ch, &basis).unwrap();
            let result = full_reconstruct(&ch, Mode::Ntp, &p, &Estimator::Exact).unwrap();
            let oracle = analytic_chi(&ch).unwrap();
            let gap = result.chi_raw.sub(&oracle).frobenius_norm();
            assert!(
                gap < 1e-8,
                "{:?} d={} loss {}: Frobenius gap {}",
                name,
                dim,
                loss,
                gap
            );
            let (projected, report) = project_physical(
                &result.chi_raw,
                survival_trace_target(&p),
                eps::PROJ_TOL,
                eps::PROJ_MAX_ITER,
            )
            .unwrap();
            assert!(report.converged);
            let fid = process_fidelity(&projected, &oracle).unwrap();
            assert!(
                fid > 1.0 - 1e-8,
                "{:?} d={} loss {}: projected fidelity {}",
                name,
                dim,
                loss,
                fid
            );
        }
    }
}

#[test]
fn shot_noise_reconstruction_reaches_high_fidelity() {
    let ch = make_process(ProcessName::H01, 3, 0.5).unwrap();
    let basis = standard_basis(3);
    let p = loss_operator(&ch, &basis).unwrap();
    let plan = ShotPlan { shots: 8192, readout: None, mitigate: false, seed: 17 };
    let result = full_reconstruct(&ch, Mode::Ntp, &p, &Estimator::Shots(plan)).unwrap();
    assert_eq!(result.shots_total, 8192 * 36);
    let (projected, _) = project_physical(
        &result.chi_raw,
        survival_trace_target(&p),
        eps::PROJ_TOL,
        eps::PROJ_MAX_ITER,
    )
    .unwrap();
    let oracle = analytic_chi(&ch).unwrap();
    let fid = process_fidelity(&projected, &oracle).unwrap();
    assert!(fid > 0.99, "projected fidelity {}", fid);
}

#[test]
fn assuming_trace_preservation_under_loss_costs_fidelity() {
    for (dim, name) in [(3, ProcessName::H01), (6, ProcessName::Swap25)] {
        let ch = make_process(name, dim, 0.5).unwrap();
        let basis = standard_basis(dim);
        let p = loss_operator(&ch, &basis).unwrap();
        let oracle = analytic_chi(&ch).unwrap();
        let mut fids = Vec::new();
        for mode in [Mode::Tp, Mode::Ntp] {
            let result = full_reconstruct(&ch, mode, &p, &Estimator::Exact).unwrap();
            let target = if mode.is_tp() { 1.0 } else { survival_trace_target(&p) };
            let (projected, _) =
                project_physical(&result.chi_raw, target, eps::PROJ_TOL, eps::PROJ_MAX_ITER)
                    .unwrap();
            fids.push(process_fidelity(&projected, &oracle).unwrap());
        }
        assert!(
            fids[1] > fids[0] + 0.01,
            "{:?} d={}: tp {} vs ntp {}",
            name,
            dim,
            fids[0],
            fids[1]
        );
    }
}

#[test]
fn standard_tomography_agrees_with_the_selective_method_exactly() {
    let engine3 = SqptEngine::new(3).unwrap();
    assert!(engine3.condition() < 1e8);
    for name in [ProcessName::Id, ProcessName::H01, ProcessName::H12] {
        let ch = make_process(name, 3, 0.5).unwrap();
        let p = loss_operator(&ch, &standard_basis(3)).unwrap();
        let seqpt_chi = full_reconstruct(&ch, Mode::Ntp, &p, &Estimator::Exact)
            .unwrap()
            .chi_raw;
        let sqpt_chi = engine3.reconstruct(&ch, &Estimator::Exact).unwrap().chi_raw;
        let gap = seqpt_chi.sub(&sqpt_chi).frobenius_norm();
        assert!(gap < 1e-8, "{:?}: gap {}", name, gap);
    }
}

#[test]
fn standard_tomography_handles_the_composite_dimension() {
    let ch = make_process(ProcessName::Phase, 6, 0.5).unwrap();
    let result = sqpt_reconstruct(&ch, &Estimator::Exact).unwrap();
    assert_eq!(result.circuits_executed, 432);
    let oracle = analytic_chi(&ch).unwrap();
    let gap = result.chi_raw.sub(&oracle).frobenius_norm();
    assert!(gap < 1e-8, "gap {}", gap);
}

#[test]
fn selective_estimation_converges_on_the_masked_support() {
    let ch = make_process(ProcessName::Swap25, 6, 0.5).unwrap();
    let basis = standard_basis(6);
    let p = loss_operator(&ch, &basis).unwrap();
    let oracle = analytic_chi(&ch).unwrap();
    let support = [0usize, 1, 18, 19, 20];
    let mut elements = Vec::new();
    for &i in &support {
        for &j in &support {
            elements.push((i, j));
        }
    }
    let opts = SelectiveOptions {
        elements,
        steps: 600,
        seed: 23,
        readout: None,
        mitigate: false,
    };
    let series = selective_reconstruct(&ch, Mode::Ntp, &p, &oracle, &opts).unwrap();
    assert_eq!(series.fidelities.len(), 600);
    let last = *series.fidelities.last().unwrap();
    assert!(last > 0.8, "fidelity after 600 steps: {}", last);
    // Unlisted elements are never touched.
    for i in 0..36 {
        for j in 0..36 {
            if !support.contains(&i) || !support.contains(&j) {
                assert_eq!(series.result.chi_raw.get(i, j).norm(), 0.0);
            }
        }
    }
    // The protocol executes one shot per circuit visit.
    assert!(series.result.shots_total >= 600);
    assert!(series.result.circuits_executed <= 432);
}

#[test]
fn tp_mode_on_a_lossless_channel_matches_ntp() {
    let ch = make_process(ProcessName::H12, 3, 0.0).unwrap();
    let basis = standard_basis(3);
    let p = loss_operator(&ch, &basis).unwrap();
    assert!(p.is_identity());
    let tp = full_reconstruct(&ch, Mode::Tp, &LossOperator::identity(3), &Estimator::Exact)
        .unwrap()
        .chi_raw;
    let ntp = full_reconstruct(&ch, Mode::Ntp, &p, &Estimator::Exact).unwrap().chi_raw;
    assert!(tp.max_abs_diff(&ntp) < 1e-10);
}

/// A pseudo-random contraction channel: unitary eigenvectors of a seeded
/// Hermitian matrix composed with a diagonal attenuation.
fn random_contraction(dim: usize, seed: u64) -> seqpt::channels::Channel {
    use seqpt::qmath::{eigh, Complex64, ComplexMatrix};
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    let m = ComplexMatrix::from_fn(dim, dim, |_, _| Complex64::new(next(), next()));
    let h = m.add(&m.dagger());
    let (_, q) = eigh(&h).unwrap();
    let gamma = ComplexMatrix::from_fn(dim, dim, |r, c| {
        if r == c {
            Complex64::new(0.4 + 0.6 * (0.5 + 0.5 * next()), 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    seqpt::channels::Channel::from_kraus(dim, vec![q.mul(&gamma)]).unwrap()
}

#[test]
fn marginalized_reduced_fidelities_match_direct_evaluation() {
    use seqpt::designs::mub_design;
    use seqpt::qmath::{tensor, ComplexMatrix};
    use seqpt::tomography::reduced_fidelities;

    let basis = standard_basis(6);
    let left = mub_design(2).unwrap();
    let right = mub_design(3).unwrap();
    let elements = [(0usize, 0usize), (1, 19), (20, 20), (7, 31), (18, 0)];
    for seed in 0..10u64 {
        let ch = random_contraction(6, 1000 + seed);
        for &(i, j) in &elements {
            let (f1, f2) = reduced_fidelities(&ch, i, j, &Estimator::Exact).unwrap();
            // Direct evaluation: the complementary subsystem enters as a
            // maximally mixed input and a traced-out measurement.
            let mut direct1 = seqpt::qmath::Complex64::new(0.0, 0.0);
            for flat1 in 0..left.len() {
                let p1 = left.state_flat(flat1).projector();
                let probe = tensor(&p1, &ComplexMatrix::identity(3))
                    .scale(seqpt::qmath::Complex64::new(1.0 / 3.0, 0.0));
                let modified = basis[i].dagger().mul(&probe).mul(&basis[j]);
                let out = ch.apply(&modified).unwrap();
                let meas = tensor(&p1, &ComplexMatrix::identity(3));
                direct1 += meas.mul(&out).trace();
            }
            direct1 /= left.len() as f64;
            let mut direct2 = seqpt::qmath::Complex64::new(0.0, 0.0);
            for flat2 in 0..right.len() {
                let p2 = right.state_flat(flat2).projector();
                let probe = tensor(&ComplexMatrix::identity(2), &p2)
                    .scale(seqpt::qmath::Complex64::new(1.0 / 2.0, 0.0));
                let modified = basis[i].dagger().mul(&probe).mul(&basis[j]);
                let out = ch.apply(&modified).unwrap();
                let meas = tensor(&ComplexMatrix::identity(2), &p2);
                direct2 += meas.mul(&out).trace();
            }
            direct2 /= right.len() as f64;
            assert!(
                (f1 - direct1).norm() < 1e-9,
                "seed {} element ({}, {}): marginalized {} vs direct {}",
                seed, i, j, f1, direct1
            );
            assert!(
                (f2 - direct2).norm() < 1e-9,
                "seed {} element ({}, {}): marginalized {} vs direct {}",
                seed, i, j, f2, direct2
            );
        }
    }
}

#[test]
fn exact_runs_are_order_independent() {
    // Elements are estimated concurrently; two runs must agree bit for bit.
    let ch = make_process(ProcessName::Phase, 6, 0.5).unwrap();
    let p = loss_operator(&ch, &standard_basis(6)).unwrap();
    let a = full_reconstruct(&ch, Mode::Ntp, &p, &Estimator::Exact).unwrap();
    let b = full_reconstruct(&ch, Mode::Ntp, &p, &Estimator::Exact).unwrap();
    assert_eq!(a.chi_raw.max_abs_diff(&b.chi_raw), 0.0);
}

#[test]
fn selective_estimates_approach_the_full_reconstruction() {
    // Large-m limit on a handful of elements of a d=3 lossy channel.
    let ch = make_process(ProcessName::H01, 3, 0.5).unwrap();
    let basis = standard_basis(3);
    let p = loss_operator(&ch, &basis).unwrap();
    let oracle = analytic_chi(&ch).unwrap();
    let full = full_reconstruct(&ch, Mode::Ntp, &p, &Estimator::Exact).unwrap();
    let elements = vec![(0usize, 0usize), (0, 1), (1, 1), (4, 4)];
    let opts = SelectiveOptions {
        elements: elements.clone(),
        steps: 30_000,
        seed: 11,
        readout: None,
        mitigate: false,
    };
    let series = selective_reconstruct(&ch, Mode::Ntp, &p, &oracle, &opts).unwrap();
    for &(i, j) in &elements {
        let got = series.result.chi_raw.get(i, j);
        let want = (full.chi_raw.get(i, j) + full.chi_raw.get(j, i).conj()) * 0.5;
        assert!(
            (got - want).norm() < 0.05,
            "element ({}, {}): selective {} vs full {}",
            i, j, got, want
        );
    }
}
