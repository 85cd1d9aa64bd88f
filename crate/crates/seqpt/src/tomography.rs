//! Tomography engines: selective/full process-matrix estimation from
//! survival probabilities (single-space and bipartite, with or without
//! trace preservation), the single-shot selective sampling protocol, and
//! a standard-QPT baseline for cross-validation.
//!
//! Every estimated quantity reduces to survival probabilities of circuits
//! keyed by (measurement basis, preparation).  Preparations are either
//! design states or two-state superpositions within one basis; the basis
//! closure of the operator basis maps every modified preparation onto
//! this fixed circuit set, which is what keeps the circuit count at
//! d²(d+1) per space and makes deduplication exact.

use crate::channels::{apply_chi, kraus_to_chi, Channel, LossOperator};
use crate::designs::{mub_closure, mub_design, product_design, ClosureTable, ProductDesign, StateDesign};
use crate::encoding::{
    derive_seed, derived_rng, encode_channel, measurement_unitary, mitigate,
    outcome_distribution, simulate_shots, QuditEmbedding, ReadoutModel,
};
use crate::opbasis::{bipartite_factors, standard_basis, standard_basis_name, sylvester_basis};
use crate::physicality::{project_physical, ProjectionReport};
use crate::qmath::{eps, sqrtm_psd, Complex64, ComplexMatrix, PureState};
use crate::{Error, Result};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

/// Reconstruction mode: whether trace preservation is assumed and whether
/// the estimation runs on a bipartite product structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Trace-preserving assumption (survival operator = identity).
    #[serde(rename = "tp")]
    Tp,
    /// Known survival operator, single space.
    #[serde(rename = "ntp")]
    Ntp,
    /// Trace-preserving assumption on a product of two prime dimensions.
    #[serde(rename = "bipartite-tp")]
    BipartiteTp,
    /// Known survival operator on a product of two prime dimensions.
    #[serde(rename = "bipartite-ntp")]
    BipartiteNtp,
}

impl Mode {
    /// Whether this mode assumes trace preservation.
    pub fn is_tp(&self) -> bool {
        matches!(self, Mode::Tp | Mode::BipartiteTp)
    }

    /// Whether this mode uses the bipartite engine.
    pub fn is_bipartite(&self) -> bool {
        matches!(self, Mode::BipartiteTp | Mode::BipartiteNtp)
    }

    /// Resolves the mode against a dimension: composite dimensions are
    /// always estimated bipartitely, prime dimensions never are.
    pub fn canonical_for_dim(self, dim: usize) -> Result<Mode> {
        let composite = bipartite_factors(dim).is_some();
        match (self, composite) {
            (Mode::Tp, true) => Ok(Mode::BipartiteTp),
            (Mode::Ntp, true) => Ok(Mode::BipartiteNtp),
            (m, true) => Ok(m),
            (Mode::BipartiteTp | Mode::BipartiteNtp, false) => Err(Error::InvalidConfig(format!(
                "bipartite mode requires a composite dimension, got {}",
                dim
            ))),
            (m, false) => Ok(m),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Tp => "tp",
            Mode::Ntp => "ntp",
            Mode::BipartiteTp => "bipartite-tp",
            Mode::BipartiteNtp => "bipartite-ntp",
        };
        f.write_str(s)
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tp" => Ok(Mode::Tp),
            "ntp" => Ok(Mode::Ntp),
            "bipartite-tp" => Ok(Mode::BipartiteTp),
            "bipartite-ntp" => Ok(Mode::BipartiteNtp),
            other => Err(Error::InvalidConfig(format!("unknown mode '{}'", other))),
        }
    }
}

/// Shot-based estimation parameters.
#[derive(Debug, Clone)]
pub struct ShotPlan {
    /// Shots per distinct circuit.
    pub shots: u64,
    /// Optional readout confusion model.
    pub readout: Option<ReadoutModel>,
    /// Apply inverse-confusion mitigation to each circuit's histogram.
    pub mitigate: bool,
    /// Root seed; per-circuit streams are derived deterministically.
    pub seed: u64,
}

/// How survival probabilities are obtained.
#[derive(Debug, Clone)]
pub enum Estimator {
    /// Analytic Born probabilities.
    Exact,
    /// Simulated measurement statistics.
    Shots(ShotPlan),
}

impl Estimator {
    fn is_exact(&self) -> bool {
        matches!(self, Estimator::Exact)
    }
}

/// Provenance tag of an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimateKind {
    Exact,
    Shots,
}

/// An estimated average survival of one modified channel.
#[derive(Debug, Clone)]
pub struct FidelityEstimate {
    /// The (i, j) operator-basis element the modification targets.
    pub element: (usize, usize),
    /// The design-averaged survival; real for diagonal elements.
    pub value: Complex64,
    /// Exact computation or sampled statistics.
    pub kind: EstimateKind,
    /// Total measurement shots consumed (0 for exact).
    pub shots_used: u64,
}

/// The three averages a bipartite element estimate combines: the survival
/// averaged over the product design, and the two reduced survivals with
/// the complementary subsystem's outcome marginalized out.
#[derive(Debug, Clone)]
pub struct BipartiteFidelities {
    pub element: (usize, usize),
    pub tensor: Complex64,
    pub left: Complex64,
    pub right: Complex64,
    pub kind: EstimateKind,
    pub shots_used: u64,
}

/// A preparation within one measurement basis: either the M-th basis
/// state, or one of the two canonical superpositions of an ordered pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PrepKind {
    /// Design state M of the circuit's basis.
    Design(usize),
    /// (|ψ_ma⟩ + i^imag |ψ_mb⟩)/√2 with ma < mb.
    Super { ma: usize, mb: usize, imag: bool },
}

/// Deduplication key of a measured circuit: a measurement-basis label and
/// a preparation per subsystem.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CircuitKey {
    pub bases: Vec<usize>,
    pub preps: Vec<PrepKind>,
}

/// Compact integer label for a preparation, used in shot records:
/// codes below d are design states, codes from d upward enumerate the
/// superposition preparations pairwise (plus, then the i-phased variant).
fn prep_code(dim: usize, kind: PrepKind) -> usize {
    match kind {
        PrepKind::Design(m) => m,
        PrepKind::Super { ma, mb, imag } => {
            let pair = ma * dim - ma * (ma + 1) / 2 + (mb - ma - 1);
            dim + 2 * pair + imag as usize
        }
    }
}

/// All preparation kinds for one basis in dimension d: d design states
/// plus 2·C(d,2) superpositions, d² in total.
fn enumerate_preps(dim: usize) -> Vec<PrepKind> {
    let mut v: Vec<PrepKind> = (0..dim).map(PrepKind::Design).collect();
    for ma in 0..dim {
        for mb in (ma + 1)..dim {
            v.push(PrepKind::Super { ma, mb, imag: false });
            v.push(PrepKind::Super { ma, mb, imag: true });
        }
    }
    v
}

/// Builds the preparation state for one subsystem.
fn prep_state(design: &StateDesign, basis_j: usize, kind: PrepKind) -> Result<PureState> {
    match kind {
        PrepKind::Design(m) => Ok(design.state(basis_j, m).clone()),
        PrepKind::Super { ma, mb, imag } => {
            let a = design.state(basis_j, ma).amplitudes();
            let b = design.state(basis_j, mb).amplitudes();
            let phase = if imag { Complex64::new(0.0, 1.0) } else { Complex64::new(1.0, 0.0) };
            let s = std::f64::consts::FRAC_1_SQRT_2;
            let amp: Vec<Complex64> =
                a.iter().zip(b).map(|(x, y)| (x + phase * y) * s).collect();
            PureState::new(amp)
        }
    }
}

/// Decomposes one subsystem's modified-input factor |E_ei† ψ⟩⟨E_ej† ψ| on
/// design state (jb, m) into weighted preparations of the same basis.
/// The closure maps both modified states back onto basis states; equal
/// targets need one preparation, distinct (hence orthogonal) targets need
/// the four-projector combination.
fn factor_terms(
    closure: &ClosureTable,
    ei: usize,
    ej: usize,
    jb: usize,
    m: usize,
) -> Vec<(PrepKind, Complex64)> {
    let (ma, pa) = closure.apply_dagger(ei, jb, m);
    let (mb, pb) = closure.apply_dagger(ej, jb, m);
    let w = pa * pb.conj();
    if ma == mb {
        return vec![(PrepKind::Design(ma), w)];
    }
    let (lo, hi) = (ma.min(mb), ma.max(mb));
    let i_unit = Complex64::new(0.0, 1.0);
    // |x⟩⟨y| = P₊ + i·P₋ − (1+i)/2 (P_x + P_y) with |+⟩ = (x+y)/√2 and
    // |−⟩ = (x+iy)/√2; the adjoint form covers the reversed ordering.
    let (c_imag, c_diag) = if ma > mb {
        (-i_unit, Complex64::new(-0.5, 0.5))
    } else {
        (i_unit, Complex64::new(-0.5, -0.5))
    };
    vec![
        (PrepKind::Super { ma: lo, mb: hi, imag: false }, w),
        (PrepKind::Super { ma: lo, mb: hi, imag: true }, w * c_imag),
        (PrepKind::Design(ma), w * c_diag),
        (PrepKind::Design(mb), w * c_diag),
    ]
}

/// Born probability ⟨s| ρ |s⟩ (real part; the form is Hermitian).
fn born(state: &PureState, rho: &ComplexMatrix) -> f64 {
    let v = rho.matvec(state.amplitudes());
    state
        .amplitudes()
        .iter()
        .zip(&v)
        .map(|(s, x)| s.conj() * x)
        .sum::<Complex64>()
        .re
}

/// Applies a channel in whichever representation it carries.
fn apply_channel(ch: &Channel, basis: &[ComplexMatrix], rho: &ComplexMatrix) -> Result<ComplexMatrix> {
    if ch.kraus().is_some() {
        ch.apply(rho)
    } else {
        apply_chi(ch.chi().expect("channel holds either form"), basis, rho)
    }
}

/// Tr[A·B] without forming the product matrix.
fn trace_product(a: &ComplexMatrix, b: &ComplexMatrix) -> Complex64 {
    let n = a.rows();
    let mut s = Complex64::new(0.0, 0.0);
    for k in 0..n {
        for l in 0..n {
            s += a.get(k, l) * b.get(l, k);
        }
    }
    s
}

/// Table of Tr[P E_i† E_j] over all basis pairs — the survival-operator
/// correction entering every non-trace-preserving inversion.
fn survival_trace_table(p: &LossOperator, basis: &[ComplexMatrix]) -> ComplexMatrix {
    let n = basis.len();
    let mut table = ComplexMatrix::zeros(n, n);
    for (i, bi) in basis.iter().enumerate() {
        let pei = p.matrix().mul(&bi.dagger());
        for (j, bj) in basis.iter().enumerate() {
            table.set(i, j, trace_product(&pei, bj));
        }
    }
    table
}

/// Change-of-basis matrix of one design basis without any embedding
/// (used for the register factor that has no lost states).
fn basis_matrix(design: &StateDesign, j: usize) -> ComplexMatrix {
    let d = design.dim();
    ComplexMatrix::from_fn(d, d, |r, c| design.state(j, c).amplitudes()[r])
}

/// The survival operator the chosen mode assumes: the identity under
/// trace preservation, the given operator otherwise.
fn effective_survival(mode: Mode, p: &LossOperator, dim: usize) -> Result<LossOperator> {
    if mode.is_tp() {
        return Ok(LossOperator::identity(dim));
    }
    if p.dim() != dim {
        return Err(Error::DimensionMismatch(format!(
            "survival operator dim {} vs channel dim {}",
            p.dim(),
            dim
        )));
    }
    Ok(p.clone())
}

/// Trace that a physical process matrix consistent with a survival
/// operator must carry: Tr[P]/d.
pub fn survival_trace_target(p: &LossOperator) -> f64 {
    p.trace() / p.dim() as f64
}

/// Analytic process matrix of a channel in the standard basis for its
/// dimension — the oracle all estimators are compared against.
pub fn analytic_chi(ch: &Channel) -> Result<ComplexMatrix> {
    let basis = standard_basis(ch.dim());
    if let Some(chi) = ch.chi() {
        if chi.rows() == basis.len() {
            return Ok(chi.clone());
        }
    }
    kraus_to_chi(ch, &basis)
}

// ---------------------------------------------------------------------
// Single-space engine (prime dimension)
// ---------------------------------------------------------------------

struct SingleEngine {
    dim: usize,
    design: StateDesign,
    closure: ClosureTable,
    basis: Vec<ComplexMatrix>,
    circuits: Vec<CircuitKey>,
    index: BTreeMap<CircuitKey, usize>,
}

impl SingleEngine {
    fn new(dim: usize) -> Result<Self> {
        let design = mub_design(dim)?;
        let basis = sylvester_basis(dim);
        let closure = mub_closure(&basis, &design)?;
        let mut keys = BTreeSet::new();
        for jb in 0..design.n_bases() {
            for prep in enumerate_preps(dim) {
                keys.insert(CircuitKey { bases: vec![jb], preps: vec![prep] });
            }
        }
        let circuits: Vec<CircuitKey> = keys.into_iter().collect();
        let index = circuits.iter().cloned().zip(0..).collect();
        Ok(Self { dim, design, closure, basis, circuits, index })
    }

    /// Weighted circuit/target terms of element (ei, ej) at one design state.
    fn state_terms(&self, ei: usize, ej: usize, flat: usize) -> Vec<(usize, usize, Complex64)> {
        let (jb, m) = self.design.label(flat);
        factor_terms(&self.closure, ei, ej, jb, m)
            .into_iter()
            .map(|(prep, c)| {
                let key = CircuitKey { bases: vec![jb], preps: vec![prep] };
                (self.index[&key], m, c)
            })
            .collect()
    }

    fn run(
        &self,
        ch: &Channel,
        ids: &[usize],
        estimator: &Estimator,
    ) -> Result<(BTreeMap<usize, Vec<f64>>, u64)> {
        match estimator {
            Estimator::Exact => {
                let rows: Vec<(usize, Vec<f64>)> = ids
                    .par_iter()
                    .map(|&id| -> Result<(usize, Vec<f64>)> {
                        let key = &self.circuits[id];
                        let jb = key.bases[0];
                        let prep = prep_state(&self.design, jb, key.preps[0])?;
                        let rho = apply_channel(ch, &self.basis, &prep.projector())?;
                        let probs =
                            (0..self.dim).map(|m| born(self.design.state(jb, m), &rho)).collect();
                        Ok((id, probs))
                    })
                    .collect::<Result<_>>()?;
                Ok((rows.into_iter().collect(), 0))
            }
            Estimator::Shots(plan) => {
                if plan.shots == 0 {
                    return Err(Error::ZeroShots);
                }
                let emb = QuditEmbedding::for_dim(self.dim)?;
                let w = encode_channel(ch, &emb)?;
                let vs: Vec<ComplexMatrix> = (0..self.design.n_bases())
                    .map(|j| measurement_unitary(&self.design, &emb, j))
                    .collect::<Result<_>>()?;
                let rd = emb.register_dim();
                let rows: Vec<(usize, Vec<f64>)> = ids
                    .par_iter()
                    .map(|&id| -> Result<(usize, Vec<f64>)> {
                        let key = &self.circuits[id];
                        let jb = key.bases[0];
                        let prep = emb.embed_state(&prep_state(&self.design, jb, key.preps[0])?)?;
                        let seed = derive_seed(plan.seed, "circuit", id as u64);
                        let label = [jb, prep_code(self.dim, key.preps[0])];
                        let record = simulate_shots(
                            &prep,
                            &w,
                            &vs[jb],
                            plan.shots,
                            plan.readout.as_ref(),
                            seed,
                            &label,
                            &key.bases,
                        )?;
                        let freqs = if plan.mitigate {
                            match &plan.readout {
                                Some(model) => mitigate(&record, model, rd)?,
                                None => record.frequencies(rd),
                            }
                        } else {
                            record.frequencies(rd)
                        };
                        let probs = (0..self.dim).map(|m| freqs[emb.index_of(m)]).collect();
                        Ok((id, probs))
                    })
                    .collect::<Result<_>>()?;
                Ok((rows.into_iter().collect(), plan.shots * ids.len() as u64))
            }
        }
    }

    fn element_average(
        &self,
        ei: usize,
        ej: usize,
        evals: &BTreeMap<usize, Vec<f64>>,
    ) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for flat in 0..self.design.len() {
            for (cid, target, c) in self.state_terms(ei, ej, flat) {
                acc += c * evals[&cid][target];
            }
        }
        acc / self.design.len() as f64
    }

    fn full(
        &self,
        ch: &Channel,
        mode: Mode,
        p_eff: &LossOperator,
        estimator: &Estimator,
    ) -> Result<ReconstructionResult> {
        let ids: Vec<usize> = (0..self.circuits.len()).collect();
        let (evals, shots_total) = self.run(ch, &ids, estimator)?;
        let dd = self.dim * self.dim;
        let table = survival_trace_table(p_eff, &self.basis);
        let d = self.dim as f64;
        let entries: Vec<Complex64> = (0..dd * dd)
            .into_par_iter()
            .map(|e| {
                let (ei, ej) = (e / dd, e % dd);
                let fbar = self.element_average(ei, ej, &evals);
                (fbar * d * (d + 1.0) - table.get(ei, ej)) / (d * d)
            })
            .collect();
        let chi = ComplexMatrix::new(dd, dd, entries)?.hermitized();
        let mask = full_mask(dd);
        Ok(ReconstructionResult {
            dim: self.dim,
            mode,
            chi_raw: chi,
            mask,
            circuits_executed: self.circuits.len(),
            shots_total,
        })
    }
}

// ---------------------------------------------------------------------
// Bipartite engine (product of two prime dimensions)
// ---------------------------------------------------------------------

struct BipEval {
    probs: Vec<f64>,
    marg1: Vec<f64>,
    marg2: Vec<f64>,
}

struct BipartiteEngine {
    dim: usize,
    dims: (usize, usize),
    left: StateDesign,
    right: StateDesign,
    closure_left: ClosureTable,
    closure_right: ClosureTable,
    product: ProductDesign,
    basis: Vec<ComplexMatrix>,
    circuits: Vec<CircuitKey>,
    index: BTreeMap<CircuitKey, usize>,
}

impl BipartiteEngine {
    fn new(dim: usize) -> Result<Self> {
        let (d1, d2) = bipartite_factors(dim).ok_or(Error::UnsupportedDimension(dim))?;
        let left = mub_design(d1)?;
        let right = mub_design(d2)?;
        let closure_left = mub_closure(&sylvester_basis(d1), &left)?;
        let closure_right = mub_closure(&sylvester_basis(d2), &right)?;
        let product = product_design(left.clone(), right.clone());
        let basis = standard_basis(dim);
        let mut keys = BTreeSet::new();
        for j1 in 0..left.n_bases() {
            for j2 in 0..right.n_bases() {
                for p1 in enumerate_preps(d1) {
                    for p2 in enumerate_preps(d2) {
                        keys.insert(CircuitKey { bases: vec![j1, j2], preps: vec![p1, p2] });
                    }
                }
            }
        }
        let circuits: Vec<CircuitKey> = keys.into_iter().collect();
        let index = circuits.iter().cloned().zip(0..).collect();
        Ok(Self {
            dim,
            dims: (d1, d2),
            left,
            right,
            closure_left,
            closure_right,
            product,
            basis,
            circuits,
            index,
        })
    }

    /// Weighted circuit/target terms of element (ei, ej) at one product
    /// design state: the cross product of the two factor decompositions.
    fn state_terms(
        &self,
        ei: usize,
        ej: usize,
        flat: usize,
    ) -> Vec<(usize, usize, usize, Complex64)> {
        let (d1, d2) = self.dims;
        let (j1, m1, j2, m2) = self.product.label(flat);
        let dd2 = d2 * d2;
        let (ei1, ei2) = (ei / dd2, ei % dd2);
        let (ej1, ej2) = (ej / dd2, ej % dd2);
        let t1 = factor_terms(&self.closure_left, ei1, ej1, j1, m1);
        let t2 = factor_terms(&self.closure_right, ei2, ej2, j2, m2);
        let _ = d1;
        let mut out = Vec::with_capacity(t1.len() * t2.len());
        for (p1, c1) in &t1 {
            for (p2, c2) in &t2 {
                let key = CircuitKey { bases: vec![j1, j2], preps: vec![*p1, *p2] };
                out.push((self.index[&key], m1, m2, c1 * c2));
            }
        }
        out
    }

    fn prep_pair(&self, key: &CircuitKey) -> Result<PureState> {
        let p1 = prep_state(&self.left, key.bases[0], key.preps[0])?;
        let p2 = prep_state(&self.right, key.bases[1], key.preps[1])?;
        Ok(p1.tensor(&p2))
    }

    fn eval_from_probs(&self, probs: Vec<f64>) -> BipEval {
        let (d1, d2) = self.dims;
        let mut marg1 = vec![0.0; d1];
        let mut marg2 = vec![0.0; d2];
        for m1 in 0..d1 {
            for m2 in 0..d2 {
                let p = probs[m1 * d2 + m2];
                marg1[m1] += p;
                marg2[m2] += p;
            }
        }
        BipEval { probs, marg1, marg2 }
    }

    fn run(
        &self,
        ch: &Channel,
        ids: &[usize],
        estimator: &Estimator,
    ) -> Result<(BTreeMap<usize, BipEval>, u64)> {
        let (d1, d2) = self.dims;
        match estimator {
            Estimator::Exact => {
                let rows: Vec<(usize, BipEval)> = ids
                    .par_iter()
                    .map(|&id| -> Result<(usize, BipEval)> {
                        let key = &self.circuits[id];
                        let prep = self.prep_pair(key)?;
                        let rho = apply_channel(ch, &self.basis, &prep.projector())?;
                        let (j1, j2) = (key.bases[0], key.bases[1]);
                        let mut probs = vec![0.0; d1 * d2];
                        for m1 in 0..d1 {
                            for m2 in 0..d2 {
                                let flat = self.product.flat(j1, m1, j2, m2);
                                probs[m1 * d2 + m2] = born(self.product.state_flat(flat), &rho);
                            }
                        }
                        Ok((id, self.eval_from_probs(probs)))
                    })
                    .collect::<Result<_>>()?;
                Ok((rows.into_iter().collect(), 0))
            }
            Estimator::Shots(plan) => {
                if plan.shots == 0 {
                    return Err(Error::ZeroShots);
                }
                let emb = QuditEmbedding::for_dim(self.dim)?;
                let emb_right = QuditEmbedding::for_dim(d2)?;
                let w = encode_channel(ch, &emb)?;
                let mut vs = Vec::new();
                for j1 in 0..self.left.n_bases() {
                    let v1 = basis_matrix(&self.left, j1);
                    for j2 in 0..self.right.n_bases() {
                        let v2 = measurement_unitary(&self.right, &emb_right, j2)?;
                        vs.push(v1.kron(&v2));
                    }
                }
                let right_reg = emb_right.register_dim();
                let rd = emb.register_dim();
                let rows: Vec<(usize, BipEval)> = ids
                    .par_iter()
                    .map(|&id| -> Result<(usize, BipEval)> {
                        let key = &self.circuits[id];
                        let (j1, j2) = (key.bases[0], key.bases[1]);
                        let prep = emb.embed_state(&self.prep_pair(key)?)?;
                        let v = &vs[j1 * self.right.n_bases() + j2];
                        let seed = derive_seed(plan.seed, "circuit", id as u64);
                        let label = [
                            j1,
                            prep_code(d1, key.preps[0]),
                            j2,
                            prep_code(d2, key.preps[1]),
                        ];
                        let record = simulate_shots(
                            &prep,
                            &w,
                            v,
                            plan.shots,
                            plan.readout.as_ref(),
                            seed,
                            &label,
                            &key.bases,
                        )?;
                        let freqs = if plan.mitigate {
                            match &plan.readout {
                                Some(model) => mitigate(&record, model, rd)?,
                                None => record.frequencies(rd),
                            }
                        } else {
                            record.frequencies(rd)
                        };
                        let mut probs = vec![0.0; d1 * d2];
                        for m1 in 0..d1 {
                            for m2 in 0..d2 {
                                probs[m1 * d2 + m2] = freqs[m1 * right_reg + emb_right.index_of(m2)];
                            }
                        }
                        Ok((id, self.eval_from_probs(probs)))
                    })
                    .collect::<Result<_>>()?;
                Ok((rows.into_iter().collect(), plan.shots * ids.len() as u64))
            }
        }
    }

    /// The three design-averaged survivals of one element.
    fn element_averages(
        &self,
        ei: usize,
        ej: usize,
        evals: &BTreeMap<usize, BipEval>,
    ) -> (Complex64, Complex64, Complex64) {
        let d2 = self.dims.1;
        let zero = Complex64::new(0.0, 0.0);
        let (mut t, mut f1, mut f2) = (zero, zero, zero);
        for flat in 0..self.product.len() {
            for (cid, m1, m2, c) in self.state_terms(ei, ej, flat) {
                let ev = &evals[&cid];
                t += c * ev.probs[m1 * d2 + m2];
                f1 += c * ev.marg1[m1];
                f2 += c * ev.marg2[m2];
            }
        }
        let n = self.product.len() as f64;
        (t / n, f1 / n, f2 / n)
    }

    fn chi_entry(
        &self,
        averages: (Complex64, Complex64, Complex64),
        table_entry: Complex64,
    ) -> Complex64 {
        let (d1, d2) = self.dims;
        let d = self.dim as f64;
        let (a1, a2) = ((1 + d1) as f64, (1 + d2) as f64);
        let (t, f1, f2) = averages;
        t * (a1 * a2 / d) + table_entry / (d * d) - f1 * (a1 / d) - f2 * (a2 / d)
    }

    fn full(
        &self,
        ch: &Channel,
        mode: Mode,
        p_eff: &LossOperator,
        estimator: &Estimator,
    ) -> Result<ReconstructionResult> {
        let ids: Vec<usize> = (0..self.circuits.len()).collect();
        let (evals, shots_total) = self.run(ch, &ids, estimator)?;
        let dd = self.dim * self.dim;
        let table = survival_trace_table(p_eff, &self.basis);
        let entries: Vec<Complex64> = (0..dd * dd)
            .into_par_iter()
            .map(|e| {
                let (ei, ej) = (e / dd, e % dd);
                self.chi_entry(self.element_averages(ei, ej, &evals), table.get(ei, ej))
            })
            .collect();
        let chi = ComplexMatrix::new(dd, dd, entries)?.hermitized();
        Ok(ReconstructionResult {
            dim: self.dim,
            mode,
            chi_raw: chi,
            mask: full_mask(dd),
            circuits_executed: self.circuits.len(),
            shots_total,
        })
    }
}

fn full_mask(dd: usize) -> Vec<(usize, usize)> {
    let mut mask = Vec::with_capacity(dd * dd);
    for i in 0..dd {
        for j in 0..dd {
            mask.push((i, j));
        }
    }
    mask
}

// ---------------------------------------------------------------------
// Element-level estimates
// ---------------------------------------------------------------------

/// Design-averaged survival of the modified channel targeting element
/// (i, j): (1/N) Σ_ψ Tr[P_ψ ℰ(E_i† P_ψ E_j)].  Prime dimensions only; a
/// composite dimension estimates per-factor averages instead.
pub fn avg_fidelity(ch: &Channel, i: usize, j: usize, estimator: &Estimator) -> Result<FidelityEstimate> {
    let dim = ch.dim();
    if bipartite_factors(dim).is_some() {
        return Err(Error::InvalidConfig(format!(
            "dimension {} is estimated bipartitely; use the bipartite averages",
            dim
        )));
    }
    let engine = SingleEngine::new(dim)?;
    check_element(dim, i, j)?;
    let mut ids = BTreeSet::new();
    for flat in 0..engine.design.len() {
        for (cid, _, _) in engine.state_terms(i, j, flat) {
            ids.insert(cid);
        }
    }
    let ids: Vec<usize> = ids.into_iter().collect();
    let (evals, shots) = engine.run(ch, &ids, estimator)?;
    let value = engine.element_average(i, j, &evals);
    Ok(FidelityEstimate {
        element: (i, j),
        value,
        kind: if estimator.is_exact() { EstimateKind::Exact } else { EstimateKind::Shots },
        shots_used: shots,
    })
}

/// The tensor-design average and both reduced averages of one bipartite
/// element, all estimated from the same product-design records.
pub fn bipartite_fidelities(
    ch: &Channel,
    i: usize,
    j: usize,
    estimator: &Estimator,
) -> Result<BipartiteFidelities> {
    let dim = ch.dim();
    let engine = BipartiteEngine::new(dim)?;
    check_element(dim, i, j)?;
    let mut ids = BTreeSet::new();
    for flat in 0..engine.product.len() {
        for (cid, _, _, _) in engine.state_terms(i, j, flat) {
            ids.insert(cid);
        }
    }
    let ids: Vec<usize> = ids.into_iter().collect();
    let (evals, shots) = engine.run(ch, &ids, estimator)?;
    let (tensor, left, right) = engine.element_averages(i, j, &evals);
    Ok(BipartiteFidelities {
        element: (i, j),
        tensor,
        left,
        right,
        kind: if estimator.is_exact() { EstimateKind::Exact } else { EstimateKind::Shots },
        shots_used: shots,
    })
}

/// The two reduced survival averages of a bipartite element, obtained by
/// marginalizing the complementary subsystem's outcome in the shared
/// product-design records.
pub fn reduced_fidelities(
    ch: &Channel,
    i: usize,
    j: usize,
    estimator: &Estimator,
) -> Result<(Complex64, Complex64)> {
    let fids = bipartite_fidelities(ch, i, j, estimator)?;
    Ok((fids.left, fids.right))
}

fn check_element(dim: usize, i: usize, j: usize) -> Result<()> {
    let dd = dim * dim;
    if i >= dd || j >= dd {
        return Err(Error::DimensionMismatch(format!(
            "element ({}, {}) outside a {}²-element basis",
            i, j, dim
        )));
    }
    Ok(())
}

/// Trace-preserving inversion: χ_j^i = F̄·(d+1)/d − δ_j^i/d.
pub fn chi_element_tp(fid: &FidelityEstimate, dim: usize) -> Complex64 {
    let d = dim as f64;
    let delta = if fid.element.0 == fid.element.1 { 1.0 } else { 0.0 };
    fid.value * ((d + 1.0) / d) - Complex64::new(delta / d, 0.0)
}

/// General inversion with a known survival operator:
/// χ_j^i = (d(d+1)·F̄ − Tr[P E_i† E_j]) / d².
pub fn chi_element_ntp(
    fid: &FidelityEstimate,
    p: &LossOperator,
    basis: &[ComplexMatrix],
) -> Complex64 {
    let d = p.dim() as f64;
    let (i, j) = fid.element;
    let tr = trace_product(&p.matrix().mul(&basis[i].dagger()), &basis[j]);
    (fid.value * d * (d + 1.0) - tr) / (d * d)
}

/// Bipartite inversion combining the tensor average with both reduced
/// averages and the survival-operator correction.
pub fn chi_element_bipartite(
    fids: &BipartiteFidelities,
    p: &LossOperator,
    basis: &[ComplexMatrix],
    dims: (usize, usize),
) -> Complex64 {
    let (d1, d2) = dims;
    let d = (d1 * d2) as f64;
    let (i, j) = fids.element;
    let tr = trace_product(&p.matrix().mul(&basis[i].dagger()), &basis[j]);
    let (a1, a2) = ((1 + d1) as f64, (1 + d2) as f64);
    fids.tensor * (a1 * a2 / d) + tr / (d * d)
        - fids.left * (a1 / d)
        - fids.right * (a2 / d)
}

// ---------------------------------------------------------------------
// Full reconstruction
// ---------------------------------------------------------------------

/// A reconstructed process matrix with its estimation bookkeeping.
#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub dim: usize,
    pub mode: Mode,
    /// Raw estimate, Hermitian on the estimated mask, not yet projected.
    pub chi_raw: ComplexMatrix,
    /// Elements actually estimated; everything else is fixed at zero.
    pub mask: Vec<(usize, usize)>,
    /// Distinct circuits after deduplication.
    pub circuits_executed: usize,
    /// Total measurement shots (0 in exact mode).
    pub shots_total: u64,
}

/// Serialized form of a reconstruction result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconstructionJson {
    pub dim: usize,
    pub mode: Mode,
    pub basis: String,
    pub chi_real: Vec<Vec<f64>>,
    pub chi_imag: Vec<Vec<f64>>,
    pub mask: Vec<(usize, usize)>,
    pub circuits_executed: usize,
    pub shots_total: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fidelity_vs_true: Option<f64>,
}

impl ReconstructionJson {
    pub fn from_result(r: &ReconstructionResult, fidelity_vs_true: Option<f64>) -> Self {
        let (chi_real, chi_imag) = r.chi_raw.to_real_imag();
        Self {
            dim: r.dim,
            mode: r.mode,
            basis: standard_basis_name(r.dim).to_string(),
            chi_real,
            chi_imag,
            mask: r.mask.clone(),
            circuits_executed: r.circuits_executed,
            shots_total: r.shots_total,
            fidelity_vs_true,
        }
    }

    pub fn to_result(&self) -> Result<ReconstructionResult> {
        Ok(ReconstructionResult {
            dim: self.dim,
            mode: self.mode,
            chi_raw: ComplexMatrix::from_real_imag(&self.chi_real, &self.chi_imag)?,
            mask: self.mask.clone(),
            circuits_executed: self.circuits_executed,
            shots_total: self.shots_total,
        })
    }
}

/// Estimates every process-matrix element.  The mode is first resolved
/// against the dimension (composite dimensions run bipartitely), the
/// survival operator `p` is replaced by the identity under a
/// trace-preserving assumption, and the result records the canonical
/// mode together with the deduplicated circuit count.
pub fn full_reconstruct(
    ch: &Channel,
    mode: Mode,
    p: &LossOperator,
    estimator: &Estimator,
) -> Result<ReconstructionResult> {
    let dim = ch.dim();
    let mode = mode.canonical_for_dim(dim)?;
    let p_eff = effective_survival(mode, p, dim)?;
    if mode.is_bipartite() {
        BipartiteEngine::new(dim)?.full(ch, mode, &p_eff, estimator)
    } else {
        SingleEngine::new(dim)?.full(ch, mode, &p_eff, estimator)
    }
}

// ---------------------------------------------------------------------
// Selective single-shot reconstruction
// ---------------------------------------------------------------------

/// Options of a selective run (one repetition).
#[derive(Debug, Clone)]
pub struct SelectiveOptions {
    /// Elements to estimate; everything else stays zero.
    pub elements: Vec<(usize, usize)>,
    /// Number of sampling steps (design states drawn).
    pub steps: usize,
    /// Seed of this repetition's sampling stream.
    pub seed: u64,
    /// Optional readout confusion applied to every sampled outcome.
    pub readout: Option<ReadoutModel>,
    /// Histogram-accumulating mitigation: estimates are recomputed each
    /// step from inverse-confusion-corrected per-circuit histograms
    /// instead of raw single-shot indicators.
    pub mitigate: bool,
}

/// Result of one selective repetition.
#[derive(Debug, Clone)]
pub struct SelectiveSeries {
    /// Final raw estimate restricted to the requested elements.
    pub result: ReconstructionResult,
    /// Process fidelity of the projected estimate after every step.
    pub fidelities: Vec<f64>,
    /// Final projected estimate.
    pub projected: ComplexMatrix,
    /// Projection report of the final step.
    pub projection: ProjectionReport,
}

enum SelectiveEngine {
    Single(Box<SingleEngine>),
    Bip(Box<BipartiteEngine>),
}

impl SelectiveEngine {
    fn n_states(&self) -> usize {
        match self {
            SelectiveEngine::Single(e) => e.design.len(),
            SelectiveEngine::Bip(e) => e.product.len(),
        }
    }

    fn circuits(&self) -> &[CircuitKey] {
        match self {
            SelectiveEngine::Single(e) => &e.circuits,
            SelectiveEngine::Bip(e) => &e.circuits,
        }
    }

    fn dim(&self) -> usize {
        match self {
            SelectiveEngine::Single(e) => e.dim,
            SelectiveEngine::Bip(e) => e.dim,
        }
    }

    fn basis(&self) -> &[ComplexMatrix] {
        match self {
            SelectiveEngine::Single(e) => &e.basis,
            SelectiveEngine::Bip(e) => &e.basis,
        }
    }
}

/// Per-circuit sampling state: cached outcome distributions over the
/// register (readout corruption already applied) plus accumulated
/// histograms for the mitigated estimator.
struct SelectiveSampler {
    emb: QuditEmbedding,
    w: ComplexMatrix,
    vs: Vec<ComplexMatrix>,
    readout: Option<ReadoutModel>,
    dist: BTreeMap<usize, Vec<f64>>,
    counts: BTreeMap<usize, Vec<u64>>,
    execs: BTreeMap<usize, u64>,
    mitigated: BTreeMap<usize, Vec<f64>>,
}

impl SelectiveSampler {
    fn new(engine: &SelectiveEngine, ch: &Channel, readout: Option<ReadoutModel>) -> Result<Self> {
        let dim = engine.dim();
        let emb = QuditEmbedding::for_dim(dim)?;
        let w = encode_channel(ch, &emb)?;
        let vs = match engine {
            SelectiveEngine::Single(e) => (0..e.design.n_bases())
                .map(|j| measurement_unitary(&e.design, &emb, j))
                .collect::<Result<Vec<_>>>()?,
            SelectiveEngine::Bip(e) => {
                let emb_right = QuditEmbedding::for_dim(e.dims.1)?;
                let mut vs = Vec::new();
                for j1 in 0..e.left.n_bases() {
                    let v1 = basis_matrix(&e.left, j1);
                    for j2 in 0..e.right.n_bases() {
                        vs.push(v1.kron(&measurement_unitary(&e.right, &emb_right, j2)?));
                    }
                }
                vs
            }
        };
        Ok(Self {
            emb,
            w,
            vs,
            readout,
            dist: BTreeMap::new(),
            counts: BTreeMap::new(),
            execs: BTreeMap::new(),
            mitigated: BTreeMap::new(),
        })
    }

    fn v_index(&self, engine: &SelectiveEngine, key: &CircuitKey) -> usize {
        match engine {
            SelectiveEngine::Single(_) => key.bases[0],
            SelectiveEngine::Bip(e) => key.bases[0] * e.right.n_bases() + key.bases[1],
        }
    }

    fn distribution(&mut self, engine: &SelectiveEngine, cid: usize) -> Result<Vec<f64>> {
        if let Some(d) = self.dist.get(&cid) {
            return Ok(d.clone());
        }
        let key = &engine.circuits()[cid];
        let prep_q = match engine {
            SelectiveEngine::Single(e) => prep_state(&e.design, key.bases[0], key.preps[0])?,
            SelectiveEngine::Bip(e) => e.prep_pair(key)?,
        };
        let prep = self.emb.embed_state(&prep_q)?;
        let v = &self.vs[self.v_index(engine, key)];
        let mut probs = outcome_distribution(&prep, &self.w, v)?;
        if let Some(model) = &self.readout {
            probs = model.apply_to_distribution(&probs);
        }
        self.dist.insert(cid, probs.clone());
        Ok(probs)
    }

    /// Executes one circuit for one shot; returns the register outcome.
    fn sample(
        &mut self,
        engine: &SelectiveEngine,
        cid: usize,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<usize> {
        let probs = self.distribution(engine, cid)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut outcome = probs.len() - 1;
        for (k, &pk) in probs.iter().enumerate() {
            acc += pk;
            if u < acc {
                outcome = k;
                break;
            }
        }
        let rd = self.emb.register_dim();
        let hist = self.counts.entry(cid).or_insert_with(|| vec![0; rd]);
        hist[outcome] += 1;
        *self.execs.entry(cid).or_insert(0) += 1;
        Ok(outcome)
    }

    /// Refreshes the mitigated frequency estimate of one circuit from its
    /// accumulated histogram.
    fn refresh_mitigated(&mut self, cid: usize, model: &ReadoutModel) -> Result<()> {
        let rd = self.emb.register_dim();
        let hist = &self.counts[&cid];
        let shots: u64 = hist.iter().sum();
        let record = crate::encoding::ShotRecord {
            prepared: Vec::new(),
            basis: Vec::new(),
            shots,
            counts: hist
                .iter()
                .enumerate()
                .filter(|(_, &n)| n > 0)
                .map(|(k, &n)| (k, n))
                .collect(),
        };
        self.mitigated.insert(cid, mitigate(&record, model, rd)?);
        Ok(())
    }
}

/// Decoded register outcome for selective scoring.
enum DecodedOutcome {
    Lost,
    Single(usize),
    Pair(usize, usize),
}

fn decode_outcome(engine: &SelectiveEngine, emb: &QuditEmbedding, outcome: usize) -> DecodedOutcome {
    match engine {
        SelectiveEngine::Single(_) => match emb.level_of(outcome) {
            Some(level) => DecodedOutcome::Single(level),
            None => DecodedOutcome::Lost,
        },
        SelectiveEngine::Bip(e) => {
            let d2 = e.dims.1;
            let right_reg = d2 + 1; // qutrit register block: 3 levels + 1 lost
            let (r1, r2) = (outcome / (right_reg), outcome % right_reg);
            if r2 >= d2 {
                // Subsystem-2 lost state; subsystem-1 outcome r1 is still read.
                let _ = r1;
                DecodedOutcome::Lost
            } else {
                DecodedOutcome::Pair(r1, r2)
            }
        }
    }
}

/// Single-shot selective estimation: per step a design state is drawn
/// uniformly, every circuit its listed elements need is executed once,
/// and running means of the per-element averages are updated.  Unlisted
/// elements stay exactly zero.  After each step the masked estimate is
/// projected onto the physical set and scored against `chi_reference`.
pub fn selective_reconstruct(
    ch: &Channel,
    mode: Mode,
    p: &LossOperator,
    chi_reference: &ComplexMatrix,
    opts: &SelectiveOptions,
) -> Result<SelectiveSeries> {
    let dim = ch.dim();
    let mode = mode.canonical_for_dim(dim)?;
    let p_eff = effective_survival(mode, p, dim)?;
    let dd = dim * dim;
    if opts.elements.is_empty() || opts.steps == 0 {
        return Err(Error::InvalidConfig("selective run needs elements and steps".into()));
    }
    for &(i, j) in &opts.elements {
        check_element(dim, i, j)?;
    }
    if chi_reference.rows() != dd || chi_reference.cols() != dd {
        return Err(Error::DimensionMismatch(format!(
            "reference is {}x{}, expected {}x{}",
            chi_reference.rows(),
            chi_reference.cols(),
            dd,
            dd
        )));
    }
    let engine = if mode.is_bipartite() {
        SelectiveEngine::Bip(Box::new(BipartiteEngine::new(dim)?))
    } else {
        SelectiveEngine::Single(Box::new(SingleEngine::new(dim)?))
    };
    let mut sampler = SelectiveSampler::new(&engine, ch, opts.readout.clone())?;
    let table = survival_trace_table(&p_eff, engine.basis());
    let trace_target = survival_trace_target(&p_eff);
    let n_states = engine.n_states();
    let mut rng = derived_rng(opts.seed, "selective", 0);

    // Fidelity scoring: when the reference is supported on the estimated
    // mask, the projected estimate is block ⊕ uniform-diagonal and the
    // fidelity reduces exactly to the support block.
    let mask_set: BTreeSet<(usize, usize)> = opts.elements.iter().copied().collect();
    let support: Vec<usize> = {
        let mut s = BTreeSet::new();
        for &(i, j) in &opts.elements {
            s.insert(i);
            s.insert(j);
        }
        s.into_iter().collect()
    };
    let mut off_support_max = 0.0f64;
    let in_support: Vec<bool> = {
        let mut v = vec![false; dd];
        for &i in &support {
            v[i] = true;
        }
        v
    };
    for i in 0..dd {
        for j in 0..dd {
            if !(in_support[i] && in_support[j]) {
                off_support_max = off_support_max.max(chi_reference.get(i, j).norm());
            }
        }
    }
    let reduced_scoring = off_support_max < 1e-12 && support.len() < dd;
    let ref_for_score = if reduced_scoring {
        let k = support.len();
        ComplexMatrix::from_fn(k, k, |a, b| chi_reference.get(support[a], support[b]))
    } else {
        chi_reference.hermitized()
    };
    let sqrt_ref = sqrtm_psd(&ref_for_score.hermitized())?;
    let ref_trace = chi_reference.trace().re;
    if ref_trace <= eps::STATE_NORM {
        return Err(Error::ZeroTrace);
    }

    // Running means per element: tensor average plus the two reduced
    // averages (the latter unused in single-space mode).
    let n_elems = opts.elements.len();
    let zero = Complex64::new(0.0, 0.0);
    let mut means = vec![[zero; 3]; n_elems];
    // Visit counts per design state, for the mitigated re-estimator.
    let mut visits = vec![0u64; n_states];
    let mut fidelities = Vec::with_capacity(opts.steps);
    let mut last_projection: Option<(ComplexMatrix, ProjectionReport)> = None;
    let mut chi_final = ComplexMatrix::zeros(dd, dd);

    for step in 1..=opts.steps {
        let flat = rng.random_range(0..n_states);
        visits[flat] += 1;
        // Gather this state's terms for every element, then execute each
        // distinct circuit exactly once.
        let mut per_element: Vec<Vec<(usize, usize, usize, Complex64)>> =
            Vec::with_capacity(n_elems);
        let mut needed = BTreeSet::new();
        for &(ei, ej) in &opts.elements {
            let terms: Vec<(usize, usize, usize, Complex64)> = match &engine {
                SelectiveEngine::Single(e) => e
                    .state_terms(ei, ej, flat)
                    .into_iter()
                    .map(|(cid, m, c)| (cid, m, 0, c))
                    .collect(),
                SelectiveEngine::Bip(e) => e.state_terms(ei, ej, flat),
            };
            for &(cid, _, _, _) in &terms {
                needed.insert(cid);
            }
            per_element.push(terms);
        }
        let mut outcomes = BTreeMap::new();
        for &cid in &needed {
            let out = sampler.sample(&engine, cid, &mut rng)?;
            outcomes.insert(cid, out);
        }
        if opts.mitigate {
            if let Some(model) = opts.readout.clone() {
                for &cid in &needed {
                    sampler.refresh_mitigated(cid, &model)?;
                }
            }
        }

        // Update the running means.
        if opts.mitigate && opts.readout.is_some() {
            // Re-estimate from mitigated per-circuit histograms, weighting
            // each visited design state by its visit frequency.
            for (e_idx, &(ei, ej)) in opts.elements.iter().enumerate() {
                let mut acc = [zero; 3];
                for (f, &v) in visits.iter().enumerate() {
                    if v == 0 {
                        continue;
                    }
                    let wgt = v as f64 / step as f64;
                    let terms: Vec<(usize, usize, usize, Complex64)> = match &engine {
                        SelectiveEngine::Single(en) => en
                            .state_terms(ei, ej, f)
                            .into_iter()
                            .map(|(cid, m, c)| (cid, m, 0, c))
                            .collect(),
                        SelectiveEngine::Bip(en) => en.state_terms(ei, ej, f),
                    };
                    for (cid, t1, t2, c) in terms {
                        let freqs = match sampler.mitigated.get(&cid) {
                            Some(fr) => fr,
                            None => continue,
                        };
                        let (pt, p1, p2) = selective_probs(&engine, &sampler.emb, freqs, t1, t2);
                        acc[0] += c * (pt * wgt);
                        acc[1] += c * (p1 * wgt);
                        acc[2] += c * (p2 * wgt);
                    }
                }
                means[e_idx] = acc;
            }
        } else {
            for (e_idx, terms) in per_element.iter().enumerate() {
                let mut x = [zero; 3];
                for &(cid, t1, t2, c) in terms {
                    let decoded = decode_outcome(&engine, &sampler.emb, outcomes[&cid]);
                    let (ht, h1, h2) = match (&engine, &decoded) {
                        (SelectiveEngine::Single(_), DecodedOutcome::Single(level)) => {
                            let hit = (*level == t1) as u64 as f64;
                            (hit, hit, hit)
                        }
                        (SelectiveEngine::Bip(_), DecodedOutcome::Pair(r1, r2)) => (
                            ((*r1 == t1) && (*r2 == t2)) as u64 as f64,
                            (*r1 == t1) as u64 as f64,
                            (*r2 == t2) as u64 as f64,
                        ),
                        (_, DecodedOutcome::Lost) => (0.0, 0.0, 0.0),
                        _ => (0.0, 0.0, 0.0),
                    };
                    x[0] += c * ht;
                    x[1] += c * h1;
                    x[2] += c * h2;
                }
                let n = step as f64;
                for k in 0..3 {
                    let delta = (x[k] - means[e_idx][k]) / n;
                    means[e_idx][k] += delta;
                }
            }
        }

        // Assemble the masked estimate and invert to process elements.
        let mut chi = ComplexMatrix::zeros(dd, dd);
        for (e_idx, &(ei, ej)) in opts.elements.iter().enumerate() {
            let entry = match &engine {
                SelectiveEngine::Single(en) => {
                    let d = en.dim as f64;
                    (means[e_idx][0] * d * (d + 1.0) - table.get(ei, ej)) / (d * d)
                }
                SelectiveEngine::Bip(en) => en.chi_entry(
                    (means[e_idx][0], means[e_idx][1], means[e_idx][2]),
                    table.get(ei, ej),
                ),
            };
            chi.set(ei, ej, entry);
        }
        // Hermitize on the mask: symmetric pairs are averaged, one-sided
        // entries mirrored.
        let mut chi_h = ComplexMatrix::zeros(dd, dd);
        for &(i, j) in &opts.elements {
            if mask_set.contains(&(j, i)) {
                chi_h.set(i, j, (chi.get(i, j) + chi.get(j, i).conj()) * 0.5);
            } else {
                chi_h.set(i, j, chi.get(i, j));
                chi_h.set(j, i, chi.get(i, j).conj());
            }
        }
        let (projected, report) =
            project_physical(&chi_h, trace_target, eps::PROJ_TOL, eps::PROJ_MAX_ITER)?;
        let fid = if reduced_scoring {
            let k = support.len();
            let block = ComplexMatrix::from_fn(k, k, |a, b| {
                projected.get(support[a], support[b])
            });
            let inner = sqrt_ref.mul(&block).mul(&sqrt_ref);
            let num = sqrtm_psd(&inner)?.trace().re;
            let tb = projected.trace().re;
            if tb <= eps::STATE_NORM {
                0.0
            } else {
                (num / (ref_trace.sqrt() * tb.sqrt())).clamp(0.0, 1.0)
            }
        } else {
            let inner = sqrt_ref.mul(&projected).mul(&sqrt_ref);
            let num = sqrtm_psd(&inner)?.trace().re;
            let tb = projected.trace().re;
            if tb <= eps::STATE_NORM {
                0.0
            } else {
                (num / (ref_trace.sqrt() * tb.sqrt())).clamp(0.0, 1.0)
            }
        };
        fidelities.push(fid);
        chi_final = chi_h;
        last_projection = Some((projected, report));
    }

    let (projected, projection) = last_projection.expect("at least one step ran");
    let executions: u64 = sampler.execs.values().sum();
    let result = ReconstructionResult {
        dim,
        mode,
        chi_raw: chi_final,
        mask: opts.elements.clone(),
        circuits_executed: sampler.dist.len(),
        shots_total: executions,
    };
    Ok(SelectiveSeries { result, fidelities, projected, projection })
}

/// Probabilities of the three target events from a register frequency
/// vector: exact hit, subsystem-1 marginal hit, subsystem-2 marginal hit.
fn selective_probs(
    engine: &SelectiveEngine,
    emb: &QuditEmbedding,
    freqs: &[f64],
    t1: usize,
    t2: usize,
) -> (f64, f64, f64) {
    match engine {
        SelectiveEngine::Single(e) => {
            let p = freqs[emb.index_of(t1)];
            let _ = e;
            (p, p, p)
        }
        SelectiveEngine::Bip(e) => {
            let d2 = e.dims.1;
            let right_reg = d2 + 1;
            let pt = freqs[t1 * right_reg + t2];
            let p1: f64 = (0..d2).map(|m2| freqs[t1 * right_reg + m2]).sum();
            let p2: f64 = (0..e.dims.0).map(|m1| freqs[m1 * right_reg + t2]).sum();
            (pt, p1, p2)
        }
    }
}

// ---------------------------------------------------------------------
// Standard-QPT baseline
// ---------------------------------------------------------------------

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

enum MeasScheme {
    Single { design: StateDesign },
    Bip { left: StateDesign, right: StateDesign },
}

/// Standard process tomography: canonical probe states, state tomography
/// of every output via design-state projections, and a least-squares
/// inversion of the resulting linear map.  The design matrix depends only
/// on the dimension, so one engine serves any number of channels.
pub struct SqptEngine {
    dim: usize,
    probes: Vec<PureState>,
    meas_states: Vec<PureState>,
    scheme: MeasScheme,
    basis: Vec<ComplexMatrix>,
    a: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    condition: f64,
}

/// Probe set: |k⟩, (|k⟩+|k'⟩)/√2, (|k⟩+i|k'⟩)/√2 over k < k' — d² pure
/// states spanning the operator space.
fn sqpt_probes(dim: usize) -> Vec<PureState> {
    let mut probes: Vec<PureState> = (0..dim).map(|k| PureState::basis_state(dim, k)).collect();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for k in 0..dim {
        for kp in (k + 1)..dim {
            for imag in [false, true] {
                let mut amp = vec![Complex64::new(0.0, 0.0); dim];
                amp[k] = Complex64::new(s, 0.0);
                amp[kp] = if imag { Complex64::new(0.0, s) } else { Complex64::new(s, 0.0) };
                probes.push(PureState::new(amp).expect("unit norm by construction"));
            }
        }
    }
    probes
}

fn offdiag_param(n: usize, i: usize, j: usize) -> usize {
    n + 2 * (i * n - i * (i + 1) / 2 + (j - i - 1))
}

impl SqptEngine {
    pub fn new(dim: usize) -> Result<Self> {
        let basis = standard_basis(dim);
        let probes = sqpt_probes(dim);
        let (meas_states, scheme) = match bipartite_factors(dim) {
            Some((d1, d2)) => {
                let left = mub_design(d1)?;
                let right = mub_design(d2)?;
                let mut states = Vec::with_capacity(left.len() * right.len());
                for f1 in 0..left.len() {
                    for f2 in 0..right.len() {
                        states.push(left.state_flat(f1).tensor(right.state_flat(f2)));
                    }
                }
                (states, MeasScheme::Bip { left, right })
            }
            None => {
                let design = mub_design(dim)?;
                (design.states().to_vec(), MeasScheme::Single { design })
            }
        };
        let n = dim * dim;
        let n_params = n * n;
        let rows = probes.len() * meas_states.len();
        let mut a = DMatrix::zeros(rows, n_params);
        for (pi, probe) in probes.iter().enumerate() {
            // t_i = ⟨ψ_m| E_i |φ_p⟩ makes each row a rank-1 quadratic form.
            let transformed: Vec<Vec<Complex64>> =
                basis.iter().map(|e| e.matvec(probe.amplitudes())).collect();
            for (mi, meas) in meas_states.iter().enumerate() {
                let row = pi * meas_states.len() + mi;
                let t: Vec<Complex64> = transformed
                    .iter()
                    .map(|v| {
                        meas.amplitudes()
                            .iter()
                            .zip(v)
                            .map(|(s, x)| s.conj() * x)
                            .sum()
                    })
                    .collect();
                for i in 0..n {
                    a[(row, i)] = t[i].norm_sqr();
                }
                for i in 0..n {
                    for j in (i + 1)..n {
                        let g = t[i] * t[j].conj();
                        let base = offdiag_param(n, i, j);
                        a[(row, base)] = 2.0 * g.re;
                        a[(row, base + 1)] = -2.0 * g.im;
                    }
                }
            }
        }
        let ata = a.tr_mul(&a);
        let chol = ata
            .clone()
            .cholesky()
            .ok_or(Error::IllConditioned(f64::INFINITY))?;
        let condition = condition_estimate(&ata, &chol);
        if condition > 1e8 {
            return Err(Error::IllConditioned(condition));
        }
        Ok(Self { dim, probes, meas_states, scheme, basis, a, chol, condition })
    }

    /// Condition number estimate of the design matrix.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    fn measured_values(&self, ch: &Channel, estimator: &Estimator) -> Result<(Vec<f64>, usize, u64)> {
        match estimator {
            Estimator::Exact => {
                let y: Vec<Vec<f64>> = self
                    .probes
                    .par_iter()
                    .map(|probe| -> Result<Vec<f64>> {
                        let rho = apply_channel(ch, &self.basis, &probe.projector())?;
                        Ok(self.meas_states.iter().map(|m| born(m, &rho)).collect())
                    })
                    .collect::<Result<_>>()?;
                let circuits = self.probes.len() * self.measurement_settings();
                Ok((y.into_iter().flatten().collect(), circuits, 0))
            }
            Estimator::Shots(plan) => self.measured_values_shots(ch, plan),
        }
    }

    fn measurement_settings(&self) -> usize {
        match &self.scheme {
            MeasScheme::Single { design } => design.n_bases(),
            MeasScheme::Bip { left, right } => left.n_bases() * right.n_bases(),
        }
    }

    fn measured_values_shots(&self, ch: &Channel, plan: &ShotPlan) -> Result<(Vec<f64>, usize, u64)> {
        if plan.shots == 0 {
            return Err(Error::ZeroShots);
        }
        let emb = QuditEmbedding::for_dim(self.dim)?;
        let w = encode_channel(ch, &emb)?;
        let rd = emb.register_dim();
        let n_meas = self.meas_states.len();
        let mut y = vec![0.0; self.probes.len() * n_meas];
        // (V matrix, outcome index → measurement-state flat index)
        let mut settings: Vec<(Vec<usize>, ComplexMatrix, Vec<Option<usize>>)> = Vec::new();
        match &self.scheme {
            MeasScheme::Single { design } => {
                for j in 0..design.n_bases() {
                    let v = measurement_unitary(design, &emb, j)?;
                    let map = (0..rd)
                        .map(|r| emb.level_of(r).map(|m| design.flat(j, m)))
                        .collect();
                    settings.push((vec![j], v, map));
                }
            }
            MeasScheme::Bip { left, right } => {
                let emb_right = QuditEmbedding::for_dim(right.dim())?;
                let right_reg = emb_right.register_dim();
                for j1 in 0..left.n_bases() {
                    let v1 = basis_matrix(left, j1);
                    for j2 in 0..right.n_bases() {
                        let v = v1.kron(&measurement_unitary(right, &emb_right, j2)?);
                        let map = (0..rd)
                            .map(|r| {
                                let (r1, r2) = (r / right_reg, r % right_reg);
                                emb_right
                                    .level_of(r2)
                                    .map(|m2| (j1 * left.dim() + r1) * right.len() + j2 * right.dim() + m2)
                            })
                            .collect();
                        settings.push((vec![j1, j2], v, map));
                    }
                }
            }
        }
        let results: Vec<(usize, usize, Vec<f64>)> = self
            .probes
            .par_iter()
            .enumerate()
            .flat_map(|(pi, probe)| {
                settings
                    .par_iter()
                    .enumerate()
                    .map(move |(si, setting)| (pi, probe, si, setting))
            })
            .map(|(pi, probe, si, (labels, v, _))| -> Result<(usize, usize, Vec<f64>)> {
                let prep = emb.embed_state(probe)?;
                let counter = (pi * settings.len() + si) as u64;
                let seed = derive_seed(plan.seed, "sqpt", counter);
                let record = simulate_shots(
                    &prep,
                    &w,
                    v,
                    plan.shots,
                    plan.readout.as_ref(),
                    seed,
                    &[pi],
                    labels,
                )?;
                let freqs = if plan.mitigate {
                    match &plan.readout {
                        Some(model) => mitigate(&record, model, rd)?,
                        None => record.frequencies(rd),
                    }
                } else {
                    record.frequencies(rd)
                };
                Ok((pi, si, freqs))
            })
            .collect::<Result<_>>()?;
        for (pi, si, freqs) in results {
            let map = &settings[si].2;
            for (r, &f) in freqs.iter().enumerate() {
                if let Some(flat) = map[r] {
                    y[pi * n_meas + flat] = f;
                }
            }
        }
        let circuits = self.probes.len() * settings.len();
        Ok((y, circuits, plan.shots * circuits as u64))
    }

    pub fn reconstruct(&self, ch: &Channel, estimator: &Estimator) -> Result<ReconstructionResult> {
        if ch.dim() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "channel dim {} vs engine dim {}",
                ch.dim(),
                self.dim
            )));
        }
        let (y, circuits, shots_total) = self.measured_values(ch, estimator)?;
        let yv = DVector::from_vec(y);
        let aty = self.a.tr_mul(&yv);
        let theta = self.chol.solve(&aty);
        let n = self.dim * self.dim;
        let mut chi = ComplexMatrix::zeros(n, n);
        for i in 0..n {
            chi.set(i, i, Complex64::new(theta[i], 0.0));
            for j in (i + 1)..n {
                let base = offdiag_param(n, i, j);
                let v = Complex64::new(theta[base], theta[base + 1]);
                chi.set(i, j, v);
                chi.set(j, i, v.conj());
            }
        }
        let mode = if bipartite_factors(self.dim).is_some() { Mode::BipartiteNtp } else { Mode::Ntp };
        Ok(ReconstructionResult {
            dim: self.dim,
            mode,
            chi_raw: chi,
            mask: full_mask(n),
            circuits_executed: circuits,
            shots_total,
        })
    }
}

fn condition_estimate(ata: &DMatrix<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let n = ata.nrows();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lam_max = 0.0;
    for _ in 0..60 {
        let w = ata * &v;
        lam_max = w.norm();
        if lam_max == 0.0 {
            return f64::INFINITY;
        }
        v = w / lam_max;
    }
    let mut u = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut inv_lam = 0.0;
    for _ in 0..60 {
        let w = chol.solve(&u);
        inv_lam = w.norm();
        if inv_lam == 0.0 {
            return f64::INFINITY;
        }
        u = w / inv_lam;
    }
    if inv_lam <= 0.0 {
        return f64::INFINITY;
    }
    (lam_max * inv_lam).sqrt()
}

/// One-shot convenience wrapper around [`SqptEngine`].
pub fn sqpt_reconstruct(ch: &Channel, estimator: &Estimator) -> Result<ReconstructionResult> {
    SqptEngine::new(ch.dim())?.reconstruct(ch, estimator)
}
