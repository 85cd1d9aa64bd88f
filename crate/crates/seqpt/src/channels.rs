//! Quantum processes: Kraus / χ / loss-operator forms, modified-channel
//! preparation plans, and the library of test processes.
//!
//! A channel ℰ(ρ) = Σ_k A_k ρ A_k† is trace-non-increasing; expanding the
//! Kraus operators in an operator basis gives ℰ(ρ) = Σ χ_j^i E_i ρ E_j†
//! with χ Hermitian PSD.  The loss operator 𝒫 = Σ χ_j^i E_j† E_i = Σ A_k†A_k
//! satisfies Tr[ℰ(ρ)] = Tr[𝒫ρ] and equals the identity exactly for
//! trace-preserving maps.
//!
//! The preparation plan decomposes a modified input E_i† P_ψ E_j into at
//! most four rank-1 projectors with complex weights, which is what turns
//! off-diagonal χ elements into combinations of real survival probabilities.

use crate::opbasis::expand_operator;
use crate::qmath::{eigh, eps, Complex64, ComplexMatrix, PureState};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// A quantum process holding a Kraus form, a χ form, or both.
#[derive(Debug, Clone)]
pub struct Channel {
    dim: usize,
    kraus: Option<Vec<ComplexMatrix>>,
    chi: Option<ComplexMatrix>,
}

impl Channel {
    /// Builds a channel from Kraus operators, checking Σ A_k†A_k ≤ I.
    pub fn from_kraus(dim: usize, kraus: Vec<ComplexMatrix>) -> Result<Self> {
        if kraus.is_empty() {
            return Err(Error::MissingKraus);
        }
        if kraus.iter().any(|a| a.rows() != dim || a.cols() != dim) {
            return Err(Error::DimensionMismatch(format!(
                "Kraus operators must be {}x{}",
                dim, dim
            )));
        }
        let mut gram = ComplexMatrix::zeros(dim, dim);
        for a in &kraus {
            gram = gram.add(&a.dagger().mul(a));
        }
        let (eigenvalues, _) = eigh(&gram)?;
        let max_eig = eigenvalues.last().copied().unwrap_or(0.0);
        if max_eig > 1.0 + eps::CHANNEL_EQUIV {
            return Err(Error::NotUnitaryLoss(format!(
                "Σ A†A has eigenvalue {:.6} > 1: the map increases trace",
                max_eig
            )));
        }
        Ok(Self { dim, kraus: Some(kraus), chi: None })
    }

    /// Builds a channel directly from a χ matrix (relative to the standard
    /// basis for its dimension), checking Hermiticity.
    pub fn from_chi(dim: usize, chi: ComplexMatrix) -> Result<Self> {
        if chi.rows() != dim * dim || chi.cols() != dim * dim {
            return Err(Error::DimensionMismatch(format!(
                "χ for dim {} must be {}x{}",
                dim,
                dim * dim,
                dim * dim
            )));
        }
        let gap = chi.hermiticity_gap();
        if gap > eps::CHANNEL_EQUIV {
            return Err(Error::NotHermitian { asymmetry: gap });
        }
        Ok(Self { dim, kraus: None, chi: Some(chi) })
    }

    /// Hilbert-space dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Kraus operators, if present.
    pub fn kraus(&self) -> Option<&[ComplexMatrix]> {
        self.kraus.as_deref()
    }

    /// Stored χ matrix, if present.
    pub fn chi(&self) -> Option<&ComplexMatrix> {
        self.chi.as_ref()
    }

    /// Applies the channel: ℰ(ρ) = Σ A_k ρ A_k†.
    pub fn apply(&self, rho: &ComplexMatrix) -> Result<ComplexMatrix> {
        let kraus = self.kraus.as_ref().ok_or(Error::MissingKraus)?;
        if rho.rows() != self.dim || rho.cols() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "state is {}x{}, channel dim {}",
                rho.rows(),
                rho.cols(),
                self.dim
            )));
        }
        let mut out = ComplexMatrix::zeros(self.dim, self.dim);
        for a in kraus {
            out = out.add(&a.mul(rho).mul(&a.dagger()));
        }
        Ok(out)
    }

    /// Applies the channel to a pure state |ψ⟩⟨ψ| and returns the (possibly
    /// subnormalized) output amplitudes A|ψ⟩ per Kraus operator.
    pub fn apply_to_state(&self, psi: &PureState) -> Result<Vec<Vec<Complex64>>> {
        let kraus = self.kraus.as_ref().ok_or(Error::MissingKraus)?;
        Ok(kraus.iter().map(|a| a.matvec(psi.amplitudes())).collect())
    }
}

/// χ matrix of a Kraus-form channel in the given operator basis:
/// χ = Σ_k c_k c_k† with c_k the expansion coefficients of A_k.
pub fn kraus_to_chi(ch: &Channel, basis: &[ComplexMatrix]) -> Result<ComplexMatrix> {
    let kraus = ch.kraus().ok_or(Error::MissingKraus)?;
    let n = basis.len();
    let mut chi = ComplexMatrix::zeros(n, n);
    for a in kraus {
        let c = expand_operator(a, basis)?;
        for i in 0..n {
            if c[i].norm_sqr() == 0.0 {
                continue;
            }
            for j in 0..n {
                chi.set(i, j, chi.get(i, j) + c[i] * c[j].conj());
            }
        }
    }
    Ok(chi)
}

/// Applies a χ-form channel: ℰ(ρ) = Σ χ_j^i E_i ρ E_j†, with χ_j^i = chi[i][j].
pub fn apply_chi(
    chi: &ComplexMatrix,
    basis: &[ComplexMatrix],
    rho: &ComplexMatrix,
) -> Result<ComplexMatrix> {
    let d = rho.rows();
    if basis.len() != chi.rows() || chi.rows() != chi.cols() || basis.len() != d * d {
        return Err(Error::DimensionMismatch(format!(
            "χ is {}x{}, basis has {} elements, state dim {}",
            chi.rows(),
            chi.cols(),
            basis.len(),
            d
        )));
    }
    let mut out = ComplexMatrix::zeros(d, d);
    for i in 0..basis.len() {
        for j in 0..basis.len() {
            let w = chi.get(i, j);
            if w.norm_sqr() < 1e-30 {
                continue;
            }
            out = out.add(&basis[i].mul(rho).mul(&basis[j].dagger()).scale(w));
        }
    }
    Ok(out)
}

/// The loss operator 𝒫: Hermitian with eigenvalues in [0, 1] and
/// Tr[ℰ(ρ)] = Tr[𝒫ρ].
#[derive(Debug, Clone)]
pub struct LossOperator {
    dim: usize,
    matrix: ComplexMatrix,
}

impl LossOperator {
    /// Validates and wraps a loss-operator matrix.
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        let dim = matrix.rows();
        let gap = matrix.hermiticity_gap();
        if gap > eps::EIGH_INPUT {
            return Err(Error::NotHermitian { asymmetry: gap });
        }
        let m = matrix.hermitized();
        let (eigenvalues, _) = eigh(&m)?;
        for &g in &eigenvalues {
            if !(-eps::CHANNEL_EQUIV..=1.0 + eps::CHANNEL_EQUIV).contains(&g) {
                return Err(Error::NotUnitaryLoss(format!(
                    "loss-operator eigenvalue {:.6} outside [0, 1]",
                    g
                )));
            }
        }
        Ok(Self { dim, matrix: m })
    }

    /// The identity loss operator of a trace-preserving map.
    pub fn identity(dim: usize) -> Self {
        Self { dim, matrix: ComplexMatrix::identity(dim) }
    }

    /// Dimension d.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The matrix 𝒫.
    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    /// Tr(𝒫), the trace target of the physicality constraint.
    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    /// Whether 𝒫 = I within tolerance (trace-preserving channel).
    pub fn is_identity(&self) -> bool {
        self.matrix.max_abs_diff(&ComplexMatrix::identity(self.dim)) < eps::CHANNEL_EQUIV
    }
}

/// Computes 𝒫 from whichever form the channel carries:
/// Σ A_k†A_k from Kraus, or Σ χ_j^i E_j†E_i from χ.
pub fn loss_operator(ch: &Channel, basis: &[ComplexMatrix]) -> Result<LossOperator> {
    if let Some(kraus) = ch.kraus() {
        let mut p = ComplexMatrix::zeros(ch.dim(), ch.dim());
        for a in kraus {
            p = p.add(&a.dagger().mul(a));
        }
        return LossOperator::new(p);
    }
    let chi = ch.chi().ok_or(Error::MissingKraus)?;
    let mut p = ComplexMatrix::zeros(ch.dim(), ch.dim());
    for i in 0..basis.len() {
        for j in 0..basis.len() {
            let w = chi.get(i, j);
            if w.norm_sqr() < 1e-30 {
                continue;
            }
            p = p.add(&basis[j].dagger().mul(&basis[i]).scale(w));
        }
    }
    LossOperator::new(p)
}

/// One preparation of a modified-channel plan.
#[derive(Debug, Clone)]
pub struct PlanTerm {
    /// Complex weight of this preparation in the decomposition.
    pub coeff: Complex64,
    /// The pure state to prepare.
    pub prep: PureState,
}

/// Decomposition of the modified input E_i† P_ψ E_j into weighted
/// projectors: Σ coeff·|prep⟩⟨prep| reconstructs it exactly.
#[derive(Debug, Clone)]
pub struct ModifiedChannelPlan {
    /// Row index i of the χ element this plan serves.
    pub i: usize,
    /// Column index j of the χ element this plan serves.
    pub j: usize,
    /// At most four weighted preparations.
    pub terms: Vec<PlanTerm>,
}

impl ModifiedChannelPlan {
    /// Reassembles Σ coeff·|prep⟩⟨prep| (test/verification helper).
    pub fn assemble(&self, dim: usize) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(dim, dim);
        for t in &self.terms {
            out = out.add(&t.prep.projector().scale(t.coeff));
        }
        out
    }
}

/// Builds the preparation plan for the modified input E_i† P_ψ E_j.
///
/// With α = E_i†ψ and β = E_j†ψ (both unit vectors), the target |α⟩⟨β|
/// splits by the overlap g = ⟨α|β⟩:
/// proportional (|g| ≈ 1): the single term conj(g)·P_α;
/// orthogonal (g ≈ 0): P₊ + i·P₋ − ((1+i)/2)(P_α + P_β) with
/// |+⟩ = (α+β)/√2 and |−⟩ = (α+iβ)/√2;
/// oblique: the same four preparations built from the unnormalized
/// u = α+β, v = α+iβ, weighted by ‖u‖²/2 and i‖v‖²/2.
pub fn modified_channel_plan(
    i: usize,
    j: usize,
    psi: &PureState,
    basis: &[ComplexMatrix],
) -> Result<ModifiedChannelPlan> {
    let d = psi.dim();
    if basis.len() != d * d || i >= basis.len() || j >= basis.len() {
        return Err(Error::DimensionMismatch(format!(
            "plan indices ({}, {}) against a basis of {} elements",
            i,
            j,
            basis.len()
        )));
    }
    let alpha = PureState::new(basis[i].dagger().matvec(psi.amplitudes()))?;
    if i == j {
        return Ok(ModifiedChannelPlan {
            i,
            j,
            terms: vec![PlanTerm { coeff: Complex64::new(1.0, 0.0), prep: alpha }],
        });
    }
    let beta = PureState::new(basis[j].dagger().matvec(psi.amplitudes()))?;
    let g = alpha.inner(&beta);
    if g.norm() > 1.0 - eps::EIG_CLIP {
        // β = g·α, so |α⟩⟨β| = conj(g)·|α⟩⟨α|.
        return Ok(ModifiedChannelPlan {
            i,
            j,
            terms: vec![PlanTerm { coeff: g.conj(), prep: alpha }],
        });
    }
    let im = Complex64::new(0.0, 1.0);
    let u: Vec<Complex64> = alpha
        .amplitudes()
        .iter()
        .zip(beta.amplitudes())
        .map(|(a, b)| a + b)
        .collect();
    let v: Vec<Complex64> = alpha
        .amplitudes()
        .iter()
        .zip(beta.amplitudes())
        .map(|(a, b)| a + im * b)
        .collect();
    // ‖u‖² = 2 + 2Re g and ‖v‖² = 2 − 2Im g; both are positive away from
    // the proportional branch.  uu† + i·vv† = (1+i)(P_α+P_β) + 2|α⟩⟨β|.
    let u_norm_sqr = 2.0 + 2.0 * g.re;
    let v_norm_sqr = 2.0 - 2.0 * g.im;
    let plus = PureState::normalized(u)?;
    let minus = PureState::normalized(v)?;
    let edge = -(Complex64::new(1.0, 1.0)) * 0.5;
    Ok(ModifiedChannelPlan {
        i,
        j,
        terms: vec![
            PlanTerm { coeff: Complex64::new(u_norm_sqr * 0.5, 0.0), prep: plus },
            PlanTerm { coeff: im * (v_norm_sqr * 0.5), prep: minus },
            PlanTerm { coeff: edge, prep: alpha },
            PlanTerm { coeff: edge, prep: beta },
        ],
    })
}

/// Names of the built-in test processes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcessName {
    /// Identity (optionally with loss on the designated levels).
    Id,
    /// Hadamard on levels {0, 1} of a qutrit.
    H01,
    /// Hadamard on levels {1, 2} of a qutrit.
    H12,
    /// Phase shift of π/3 on levels {1, 4} of d = 6.
    Phase,
    /// Swap of levels {2, 5} of d = 6, with the same phase shift.
    Swap25,
}

impl ProcessName {
    /// All names valid for a given dimension.
    pub fn for_dim(dim: usize) -> &'static [ProcessName] {
        match dim {
            3 => &[ProcessName::Id, ProcessName::H01, ProcessName::H12],
            6 => &[ProcessName::Id, ProcessName::Phase, ProcessName::Swap25],
            _ => &[],
        }
    }
}

impl std::str::FromStr for ProcessName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "id" => Ok(ProcessName::Id),
            "h01" => Ok(ProcessName::H01),
            "h12" => Ok(ProcessName::H12),
            "phase" => Ok(ProcessName::Phase),
            "swap25" => Ok(ProcessName::Swap25),
            other => Err(Error::InvalidConfig(format!("unknown process name '{}'", other))),
        }
    }
}

impl std::fmt::Display for ProcessName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ProcessName::Id => "id",
            ProcessName::H01 => "h01",
            ProcessName::H12 => "h12",
            ProcessName::Phase => "phase",
            ProcessName::Swap25 => "swap25",
        };
        f.write_str(s)
    }
}

/// Builds a library process as a single-Kraus channel.  `loss` is the loss
/// probability r on the process's designated levels: the surviving
/// amplitude there is √(1−r), so r = ½ reproduces the 50%-loss variants.
pub fn make_process(name: ProcessName, dim: usize, loss: f64) -> Result<Channel> {
    if !(0.0..=1.0).contains(&loss) {
        return Err(Error::InvalidConfig(format!("loss {} outside [0, 1]", loss)));
    }
    let t = Complex64::new((1.0 - loss).sqrt(), 0.0);
    let one = Complex64::new(1.0, 0.0);
    let s = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let phase = Complex64::from_polar(1.0, std::f64::consts::PI / 3.0);
    let zero = Complex64::new(0.0, 0.0);
    let a = match (name, dim) {
        (ProcessName::Id, 3) => {
            // Loss on level 2.
            let mut m = ComplexMatrix::identity(3);
            m.set(2, 2, t);
            m
        }
        (ProcessName::H01, 3) => {
            // Hadamard on {0,1}; loss on level 2.
            ComplexMatrix::new(
                3,
                3,
                vec![s, s, zero, s, -s, zero, zero, zero, t],
            )?
        }
        (ProcessName::H12, 3) => {
            // Hadamard on {1,2}; loss on level 0.
            ComplexMatrix::new(
                3,
                3,
                vec![t, zero, zero, zero, s, s, zero, s, -s],
            )?
        }
        (ProcessName::Id, 6) => {
            // Loss on levels 2 and 5.
            let mut m = ComplexMatrix::identity(6);
            m.set(2, 2, t);
            m.set(5, 5, t);
            m
        }
        (ProcessName::Phase, 6) => {
            let mut m = ComplexMatrix::zeros(6, 6);
            m.set(0, 0, one);
            m.set(3, 3, one);
            m.set(1, 1, phase);
            m.set(4, 4, phase);
            m.set(2, 2, t);
            m.set(5, 5, t);
            m
        }
        (ProcessName::Swap25, 6) => {
            let mut m = ComplexMatrix::zeros(6, 6);
            m.set(0, 0, one);
            m.set(3, 3, one);
            m.set(1, 1, phase);
            m.set(4, 4, phase);
            m.set(2, 5, t);
            m.set(5, 2, t);
            m
        }
        (name, dim) => {
            return Err(Error::InvalidConfig(format!(
                "process '{}' is not defined in dimension {}",
                name, dim
            )))
        }
    };
    Channel::from_kraus(dim, vec![a])
}

/// JSON form of a channel: matrices split into nested row-major real arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelJson {
    /// Hilbert-space dimension.
    pub dim: usize,
    /// Operator-basis name the χ form refers to.
    pub basis: String,
    /// Kraus operators, if present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kraus: Option<Vec<MatrixJson>>,
    /// Real part of χ, if present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chi_real: Option<Vec<Vec<f64>>>,
    /// Imaginary part of χ, if present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chi_imag: Option<Vec<Vec<f64>>>,
}

/// JSON form of one complex matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixJson {
    /// Row-major real parts.
    pub real: Vec<Vec<f64>>,
    /// Row-major imaginary parts.
    pub imag: Vec<Vec<f64>>,
}

impl MatrixJson {
    /// Serializes a matrix.
    pub fn from_matrix(m: &ComplexMatrix) -> Self {
        let (real, imag) = m.to_real_imag();
        Self { real, imag }
    }

    /// Deserializes a matrix.
    pub fn to_matrix(&self) -> Result<ComplexMatrix> {
        ComplexMatrix::from_real_imag(&self.real, &self.imag)
    }
}

impl ChannelJson {
    /// Serializes a channel (χ relative to the standard basis).
    pub fn from_channel(ch: &Channel) -> Self {
        let (chi_real, chi_imag) = match ch.chi() {
            Some(chi) => {
                let (re, im) = chi.to_real_imag();
                (Some(re), Some(im))
            }
            None => (None, None),
        };
        Self {
            dim: ch.dim(),
            basis: "sylvester".into(),
            kraus: ch
                .kraus()
                .map(|ks| ks.iter().map(MatrixJson::from_matrix).collect()),
            chi_real,
            chi_imag,
        }
    }

    /// Deserializes a channel, re-validating its invariants.
    pub fn to_channel(&self) -> Result<Channel> {
        if let Some(kraus) = &self.kraus {
            let mats: Result<Vec<_>> = kraus.iter().map(MatrixJson::to_matrix).collect();
            return Channel::from_kraus(self.dim, mats?);
        }
        match (&self.chi_real, &self.chi_imag) {
            (Some(re), Some(im)) => {
                Channel::from_chi(self.dim, ComplexMatrix::from_real_imag(re, im)?)
            }
            _ => Err(Error::MissingKraus),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::mub_design;
    use crate::opbasis::{standard_basis, sylvester_basis};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_density(dim: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix {
        let a = ComplexMatrix::from_fn(dim, dim, |_, _| {
            c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let m = a.mul(&a.dagger());
        m.scale(c(1.0 / m.trace().re, 0.0))
    }

    #[test]
    fn identity_channel_is_identity_map() {
        let ch = make_process(ProcessName::Id, 3, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rho = random_density(3, &mut rng);
        assert!(ch.apply(&rho).unwrap().max_abs_diff(&rho) < 1e-14);
    }

    #[test]
    fn h01_maps_ground_state_to_plus() {
        let ch = make_process(ProcessName::H01, 3, 0.0).unwrap();
        let rho = PureState::basis_state(3, 0).projector();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let plus = PureState::new(vec![c(s, 0.), c(s, 0.), c(0., 0.)]).unwrap();
        assert!(ch.apply(&rho).unwrap().max_abs_diff(&plus.projector()) < 1e-14);
    }

    #[test]
    fn h01_loss_halves_level_two() {
        let ch = make_process(ProcessName::H01, 3, 0.5).unwrap();
        let rho = PureState::basis_state(3, 2).projector();
        let out = ch.apply(&rho).unwrap();
        assert!(out.max_abs_diff(&rho.scale(c(0.5, 0.0))) < 1e-14);
        assert!((out.trace().re - 0.5).abs() < 1e-14);
    }

    #[test]
    fn library_matches_published_kraus_forms() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        // H01 lossless: (1/√2)(|0⟩⟨0| − |1⟩⟨1| + √2|2⟩⟨2| + |0⟩⟨1| + |1⟩⟨0|).
        let h01 = make_process(ProcessName::H01, 3, 0.0).unwrap();
        let want = ComplexMatrix::new(
            3,
            3,
            vec![
                c(s, 0.), c(s, 0.), c(0., 0.),
                c(s, 0.), c(-s, 0.), c(0., 0.),
                c(0., 0.), c(0., 0.), c(1., 0.),
            ],
        )
        .unwrap();
        assert!(h01.kraus().unwrap()[0].max_abs_diff(&want) < 1e-15);

        // H12 with 50% loss keeps amplitude 1/√2 on level 0.
        let h12l = make_process(ProcessName::H12, 3, 0.5).unwrap();
        let a = &h12l.kraus().unwrap()[0];
        assert!((a.get(0, 0) - c(s, 0.)).norm() < 1e-15);
        assert!((a.get(2, 2) - c(-s, 0.)).norm() < 1e-15);

        // SWAP25 with 50% loss: phases e^{iπ/3} on {1,4}, damped swap on {2,5}.
        let sw = make_process(ProcessName::Swap25, 6, 0.5).unwrap();
        let a = &sw.kraus().unwrap()[0];
        let ph = Complex64::from_polar(1.0, std::f64::consts::PI / 3.0);
        assert!((a.get(1, 1) - ph).norm() < 1e-15);
        assert!((a.get(2, 5) - c(s, 0.)).norm() < 1e-15);
        assert!((a.get(5, 2) - c(s, 0.)).norm() < 1e-15);
        assert!(a.get(2, 2).norm() < 1e-15);
    }

    #[test]
    fn unknown_process_dimension_rejected() {
        assert!(make_process(ProcessName::H01, 6, 0.0).is_err());
        assert!(make_process(ProcessName::Phase, 3, 0.0).is_err());
        assert!(make_process(ProcessName::Id, 3, 1.5).is_err());
    }

    #[test]
    fn chi_of_identity_has_single_entry() {
        let ch = make_process(ProcessName::Id, 3, 0.0).unwrap();
        let chi = kraus_to_chi(&ch, &sylvester_basis(3)).unwrap();
        assert!((chi.get(0, 0) - c(1., 0.)).norm() < 1e-14);
        let off: f64 = (0..81)
            .map(|n| {
                let (i, j) = (n / 9, n % 9);
                if (i, j) == (0, 0) { 0.0 } else { chi.get(i, j).norm() }
            })
            .fold(0.0, f64::max);
        assert!(off < 1e-14);
    }

    #[test]
    fn chi_application_matches_kraus_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (name, dim, loss) in [
            (ProcessName::H01, 3, 0.5),
            (ProcessName::H12, 3, 0.0),
            (ProcessName::Swap25, 6, 0.5),
        ] {
            let ch = make_process(name, dim, loss).unwrap();
            let basis = standard_basis(dim);
            let chi = kraus_to_chi(&ch, &basis).unwrap();
            for _ in 0..10 {
                let rho = random_density(dim, &mut rng);
                let via_chi = apply_chi(&chi, &basis, &rho).unwrap();
                let via_kraus = ch.apply(&rho).unwrap();
                assert!(via_chi.max_abs_diff(&via_kraus) < 1e-9);
            }
        }
    }

    #[test]
    fn swap25_loss_chi_has_25_nonzero_entries() {
        let ch = make_process(ProcessName::Swap25, 6, 0.5).unwrap();
        let chi = kraus_to_chi(&ch, &standard_basis(6)).unwrap();
        let nonzero = chi.data().iter().filter(|x| x.norm() > 1e-12).count();
        assert_eq!(nonzero, 25);
    }

    #[test]
    fn loss_operators_match_published_diagonals() {
        let basis3 = sylvester_basis(3);
        let h01l = make_process(ProcessName::H01, 3, 0.5).unwrap();
        let p = loss_operator(&h01l, &basis3).unwrap();
        let want = {
            let mut m = ComplexMatrix::identity(3);
            m.set(2, 2, c(0.5, 0.0));
            m
        };
        assert!(p.matrix().max_abs_diff(&want) < 1e-12);

        let basis6 = standard_basis(6);
        let swl = make_process(ProcessName::Swap25, 6, 0.5).unwrap();
        let p = loss_operator(&swl, &basis6).unwrap();
        let mut want = ComplexMatrix::identity(6);
        want.set(2, 2, c(0.5, 0.0));
        want.set(5, 5, c(0.5, 0.0));
        assert!(p.matrix().max_abs_diff(&want) < 1e-12);
        assert!((p.trace() - 5.0).abs() < 1e-12);

        let tp = make_process(ProcessName::Phase, 6, 0.0).unwrap();
        let p = loss_operator(&tp, &basis6).unwrap();
        assert!(p.is_identity());
    }

    #[test]
    fn loss_operator_agrees_between_forms() {
        let basis = sylvester_basis(3);
        let ch = make_process(ProcessName::H12, 3, 0.5).unwrap();
        let from_kraus = loss_operator(&ch, &basis).unwrap();
        let chi_form = Channel::from_chi(3, kraus_to_chi(&ch, &basis).unwrap()).unwrap();
        let from_chi = loss_operator(&chi_form, &basis).unwrap();
        assert!(from_kraus.matrix().max_abs_diff(from_chi.matrix()) < 1e-10);
    }

    #[test]
    fn output_trace_equals_loss_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let basis = sylvester_basis(3);
        for loss in [0.0, 0.3, 0.5] {
            let ch = make_process(ProcessName::H01, 3, loss).unwrap();
            let p = loss_operator(&ch, &basis).unwrap();
            for _ in 0..10 {
                let rho = random_density(3, &mut rng);
                let lhs = ch.apply(&rho).unwrap().trace();
                let rhs = p.matrix().mul(&rho).trace();
                assert!((lhs - rhs).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn plan_identity_element_is_single_term() {
        let basis = sylvester_basis(3);
        let psi = PureState::basis_state(3, 1);
        let plan = modified_channel_plan(0, 0, &psi, &basis).unwrap();
        assert_eq!(plan.terms.len(), 1);
        assert!((plan.terms[0].coeff - c(1., 0.)).norm() < 1e-15);
        assert!((plan.terms[0].prep.inner(&psi).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn plan_reconstructs_modified_inputs_on_design_states() {
        let basis = sylvester_basis(3);
        let design = mub_design(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..40 {
            let i = rng.random_range(0..9);
            let j = rng.random_range(0..9);
            let psi = &design.states()[rng.random_range(0..design.len())];
            let plan = modified_channel_plan(i, j, psi, &basis).unwrap();
            assert!(plan.terms.len() <= 4);
            let target = basis[i]
                .dagger()
                .mul(&psi.projector())
                .mul(&basis[j]);
            assert!(plan.assemble(3).max_abs_diff(&target) < eps::PLAN_RECONSTRUCT);
        }
    }

    #[test]
    fn plan_oblique_fallback_reconstructs_random_states() {
        let basis = sylvester_basis(3);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let amp: Vec<Complex64> = (0..3)
                .map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();
            let psi = PureState::normalized(amp).unwrap();
            let i = rng.random_range(0..9);
            let j = rng.random_range(0..9);
            let plan = modified_channel_plan(i, j, &psi, &basis).unwrap();
            let target = basis[i].dagger().mul(&psi.projector()).mul(&basis[j]);
            assert!(plan.assemble(3).max_abs_diff(&target) < eps::PLAN_RECONSTRUCT);
        }
    }

    #[test]
    fn orthogonal_branch_uses_unit_coefficients() {
        // On a design state in d=2, E_1 = σ_z against E_0 = I gives α ⊥ β.
        let basis = sylvester_basis(2);
        let design = mub_design(2).unwrap();
        let psi = design.state(1, 0); // (|0⟩+|1⟩)/√2
        let plan = modified_channel_plan(0, 1, psi, &basis).unwrap();
        assert_eq!(plan.terms.len(), 4);
        assert!((plan.terms[0].coeff - c(1., 0.)).norm() < 1e-12);
        assert!((plan.terms[1].coeff - c(0., 1.)).norm() < 1e-12);
        assert!((plan.terms[2].coeff - c(-0.5, -0.5)).norm() < 1e-12);
        assert!((plan.terms[3].coeff - c(-0.5, -0.5)).norm() < 1e-12);
    }

    #[test]
    fn channel_json_round_trip() {
        let ch = make_process(ProcessName::H01, 3, 0.5).unwrap();
        let json = serde_json::to_string(&ChannelJson::from_channel(&ch)).unwrap();
        let back: ChannelJson = serde_json::from_str(&json).unwrap();
        let ch2 = back.to_channel().unwrap();
        assert!(ch2.kraus().unwrap()[0].max_abs_diff(&ch.kraus().unwrap()[0]) < 1e-15);
    }

    #[test]
    fn trace_increasing_kraus_rejected() {
        let a = ComplexMatrix::identity(2).scale(c(1.1, 0.0));
        assert!(Channel::from_kraus(2, vec![a]).is_err());
    }
}
