//! Qubit-register realization: qudit embeddings with designated lost
//! states, beamsplitter-style loss unitaries, and measurement simulation
//! with shots, readout error, and mitigation.
//!
//! A d-level system is embedded into computational-basis states of an
//! n-qubit register; the remaining states act as loss sinks.  A channel
//! A = U·L (diagonal loss L first, then unitary U) becomes one register
//! unitary W = Ũ·B, where B rotates each lossy level partially into its
//! lost state and Ũ is U on the embedded subspace and the identity on the
//! lost states.  Measurement in a design basis is a change-of-basis
//! unitary followed by computational-basis sampling; outcomes that land
//! on lost states stay in the denominator of every survival estimate.

use crate::designs::StateDesign;
use crate::qmath::{eps, Complex64, ComplexMatrix, PureState};
use crate::channels::Channel;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Embedding of a d-level system into an n-qubit register.
#[derive(Debug, Clone)]
pub struct QuditEmbedding {
    dim: usize,
    n_qubits: usize,
    index_map: Vec<usize>,
    lost_indices: Vec<usize>,
}

impl QuditEmbedding {
    /// Qutrit in two qubits: levels ↦ {|00⟩, |01⟩, |10⟩}, lost state |11⟩.
    pub fn qutrit() -> Self {
        Self { dim: 3, n_qubits: 2, index_map: vec![0, 1, 2], lost_indices: vec![3] }
    }

    /// Six levels in three qubits as qubit ⊗ qutrit: level 3a+b ↦ |a⟩⊗emb(b),
    /// lost states |011⟩ and |111⟩.
    pub fn dim6() -> Self {
        Self { dim: 6, n_qubits: 3, index_map: vec![0, 1, 2, 4, 5, 6], lost_indices: vec![3, 7] }
    }

    /// The embedding used by the built-in experiments for a dimension.
    pub fn for_dim(dim: usize) -> Result<Self> {
        match dim {
            3 => Ok(Self::qutrit()),
            6 => Ok(Self::dim6()),
            _ => Err(Error::UnsupportedDimension(dim)),
        }
    }

    /// Qudit dimension d.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Register size in qubits.
    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    /// Register dimension 2^n.
    pub fn register_dim(&self) -> usize {
        1 << self.n_qubits
    }

    /// Computational-basis index of qudit level m.
    pub fn index_of(&self, level: usize) -> usize {
        self.index_map[level]
    }

    /// The loss-sink indices, ascending.
    pub fn lost_indices(&self) -> &[usize] {
        &self.lost_indices
    }

    /// Qudit level of a register outcome, or None if the outcome is lost.
    pub fn level_of(&self, register_index: usize) -> Option<usize> {
        self.index_map.iter().position(|&r| r == register_index)
    }

    /// Embeds a d-dimensional pure state into the register.
    pub fn embed_state(&self, psi: &PureState) -> Result<PureState> {
        if psi.dim() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "state dim {} vs embedding dim {}",
                psi.dim(),
                self.dim
            )));
        }
        let mut amp = vec![Complex64::new(0.0, 0.0); self.register_dim()];
        for (level, a) in psi.amplitudes().iter().enumerate() {
            amp[self.index_map[level]] = *a;
        }
        PureState::new(amp)
    }
}

/// Beamsplitter-like coupling on a two-qubit block:
/// I₂ ⊕ [[cos φ, −sin φ], [sin φ, cos φ]], which transfers |10⟩ into the
/// lost state |11⟩ with probability r = sin²φ.
pub fn beamsplitter_unitary(phi: f64) -> ComplexMatrix {
    let (s, c) = phi.sin_cos();
    let mut m = ComplexMatrix::identity(4);
    m.set(2, 2, Complex64::new(c, 0.0));
    m.set(2, 3, Complex64::new(-s, 0.0));
    m.set(3, 2, Complex64::new(s, 0.0));
    m.set(3, 3, Complex64::new(c, 0.0));
    m
}

/// Encodes a single-Kraus channel A = U·L as one register unitary
/// W = Ũ·B: loss rotations into the lost states first, then the embedded
/// unitary.  Projecting W ρ_emb W† back onto the embedded subspace
/// reproduces the channel.
pub fn encode_channel(ch: &Channel, emb: &QuditEmbedding) -> Result<ComplexMatrix> {
    let kraus = ch.kraus().ok_or(Error::MissingKraus)?;
    if kraus.len() != 1 {
        return Err(Error::NotUnitaryLoss(format!(
            "{} Kraus operators; the register encoding needs a single unitary-plus-loss operator",
            kraus.len()
        )));
    }
    let a = &kraus[0];
    let d = ch.dim();
    if emb.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "channel dim {} vs embedding dim {}",
            d,
            emb.dim()
        )));
    }
    // A†A must be diagonal for a per-level loss decomposition A = U·L.
    let gram = a.dagger().mul(a);
    let mut gammas = Vec::with_capacity(d);
    for i in 0..d {
        for j in 0..d {
            let g = gram.get(i, j);
            if i == j {
                if g.re < -eps::CHANNEL_EQUIV || g.re > 1.0 + eps::CHANNEL_EQUIV || g.im.abs() > eps::CHANNEL_EQUIV {
                    return Err(Error::NotUnitaryLoss(format!(
                        "A†A diagonal entry {} = {} outside [0, 1]",
                        i, g
                    )));
                }
                gammas.push(g.re.clamp(0.0, 1.0).sqrt());
            } else if g.norm() > eps::CHANNEL_EQUIV {
                return Err(Error::NotUnitaryLoss(
                    "A†A is not diagonal: losses are not per-level".into(),
                ));
            }
        }
    }
    // U = A·L⁻¹ on surviving levels; fully-lost levels get completed below.
    let mut u = ComplexMatrix::zeros(d, d);
    let mut dead_levels = Vec::new();
    for (j, &gamma) in gammas.iter().enumerate() {
        if gamma > eps::CHANNEL_EQUIV {
            for i in 0..d {
                u.set(i, j, a.get(i, j) / gamma);
            }
        } else {
            dead_levels.push(j);
        }
    }
    // Complete fully-lost columns to a unitary by Gram–Schmidt.
    for &j in &dead_levels {
        'candidate: for k in 0..d {
            let mut col: Vec<Complex64> = (0..d)
                .map(|i| if i == k { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) })
                .collect();
            for jj in 0..d {
                if jj == j || (dead_levels.contains(&jj) && jj > j) {
                    continue;
                }
                let overlap: Complex64 = (0..d).map(|i| u.get(i, jj).conj() * col[i]).sum();
                for (i, c) in col.iter_mut().enumerate() {
                    *c -= overlap * u.get(i, jj);
                }
            }
            let norm: f64 = col.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            if norm > 1e-6 {
                for (i, c) in col.iter().enumerate() {
                    u.set(i, j, c / norm);
                }
                break 'candidate;
            }
        }
    }
    let unitarity = u.dagger().mul(&u).max_abs_diff(&ComplexMatrix::identity(d));
    if unitarity > 1e-9 {
        return Err(Error::NotUnitaryLoss(format!(
            "A·L⁻¹ deviates from unitarity by {:.2e}",
            unitarity
        )));
    }
    // Ascending lossy levels pair with ascending lost indices.
    let lossy: Vec<usize> = (0..d).filter(|&m| gammas[m] < 1.0 - eps::CHANNEL_EQUIV).collect();
    if lossy.len() > emb.lost_indices().len() {
        return Err(Error::NotUnitaryLoss(format!(
            "{} lossy levels but only {} lost states in the register",
            lossy.len(),
            emb.lost_indices().len()
        )));
    }
    let rd = emb.register_dim();
    let mut b = ComplexMatrix::identity(rd);
    for (slot, &m) in lossy.iter().enumerate() {
        let g = gammas[m];
        let t = (1.0 - g * g).max(0.0).sqrt();
        let ei = emb.index_of(m);
        let li = emb.lost_indices()[slot];
        b.set(ei, ei, Complex64::new(g, 0.0));
        b.set(li, ei, Complex64::new(t, 0.0));
        b.set(ei, li, Complex64::new(-t, 0.0));
        b.set(li, li, Complex64::new(g, 0.0));
    }
    // U embedded on the mapped indices, identity on the lost states.
    let mut w_u = ComplexMatrix::zeros(rd, rd);
    for i in 0..d {
        for j in 0..d {
            w_u.set(emb.index_of(i), emb.index_of(j), u.get(i, j));
        }
    }
    for &l in emb.lost_indices() {
        w_u.set(l, l, Complex64::new(1.0, 0.0));
    }
    Ok(w_u.mul(&b))
}

/// Register change-of-basis unitary for measuring in design basis J:
/// columns at embedded indices are the embedded basis states, lost indices
/// keep identity columns.
pub fn measurement_unitary(design: &StateDesign, emb: &QuditEmbedding, j: usize) -> Result<ComplexMatrix> {
    if design.dim() != emb.dim() {
        return Err(Error::DimensionMismatch(format!(
            "design dim {} vs embedding dim {}",
            design.dim(),
            emb.dim()
        )));
    }
    let rd = emb.register_dim();
    let mut v = ComplexMatrix::zeros(rd, rd);
    for m in 0..design.dim() {
        let state = emb.embed_state(design.state(j, m))?;
        for (row, a) in state.amplitudes().iter().enumerate() {
            v.set(row, emb.index_of(m), *a);
        }
    }
    for &l in emb.lost_indices() {
        v.set(l, l, Complex64::new(1.0, 0.0));
    }
    Ok(v)
}

/// Per-qubit readout confusion model, independent and identical across
/// the register's qubits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReadoutModel {
    /// Row-stochastic P(reported bit | true bit): row = true, column = reported.
    pub confusion: [[f64; 2]; 2],
}

impl ReadoutModel {
    /// Validates a confusion matrix.
    pub fn new(confusion: [[f64; 2]; 2]) -> Result<Self> {
        for row in &confusion {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (row[0] + row[1] - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidConfig(format!(
                    "confusion row {:?} is not a probability distribution",
                    row
                )));
            }
        }
        Ok(Self { confusion })
    }

    /// Symmetric model calibrated so a register of `n_qubits` has aggregate
    /// readout fidelity `fidelity`: per-qubit diagonal fidelity^(1/n).
    pub fn from_aggregate_fidelity(fidelity: f64, n_qubits: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&fidelity) || n_qubits == 0 {
            return Err(Error::InvalidConfig(format!(
                "aggregate fidelity {} / {} qubits",
                fidelity, n_qubits
            )));
        }
        let p = fidelity.powf(1.0 / n_qubits as f64);
        Self::new([[p, 1.0 - p], [1.0 - p, p]])
    }

    /// Perfect readout.
    pub fn identity() -> Self {
        Self { confusion: [[1.0, 0.0], [0.0, 1.0]] }
    }

    /// Applies the tensor-product confusion map to a register probability
    /// distribution (length 2^n).
    pub fn apply_to_distribution(&self, probs: &[f64]) -> Vec<f64> {
        let len = probs.len();
        debug_assert!(len.is_power_of_two());
        let n = len.trailing_zeros() as usize;
        let mut cur = probs.to_vec();
        for q in 0..n {
            let stride = 1usize << q;
            let mut next = vec![0.0; len];
            for (t, &p) in cur.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let bit = (t >> q) & 1;
                next[t & !stride] += p * self.confusion[bit][0];
                next[t | stride] += p * self.confusion[bit][1];
            }
            cur = next;
        }
        cur
    }

    /// The inverse per-qubit confusion matrix, for mitigation.
    fn inverse(&self) -> Result<[[f64; 2]; 2]> {
        let c = &self.confusion;
        let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
        if det.abs() < 1e-12 {
            return Err(Error::SingularConfusion);
        }
        Ok([
            [c[1][1] / det, -c[0][1] / det],
            [-c[1][0] / det, c[0][0] / det],
        ])
    }
}

/// Result of one measured circuit: outcome histogram over register indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShotRecord {
    /// Preparation label, (J, M) or (J₁, M₁, J₂, M₂).
    pub prepared: Vec<usize>,
    /// Measurement-basis label, (J) or (J₁, J₂).
    pub basis: Vec<usize>,
    /// Total number of shots.
    pub shots: u64,
    /// Counts per computational-basis outcome index.
    pub counts: BTreeMap<usize, u64>,
}

impl ShotRecord {
    /// Empirical frequency vector over all register outcomes.
    pub fn frequencies(&self, register_dim: usize) -> Vec<f64> {
        let mut f = vec![0.0; register_dim];
        for (&outcome, &n) in &self.counts {
            f[outcome] = n as f64 / self.shots as f64;
        }
        f
    }
}

/// A deterministic RNG stream derived from (root seed, role, index).
/// Distinct roles and indices give independent streams, so parallel
/// execution stays reproducible.
pub fn derived_rng(seed: u64, role: &str, index: u64) -> ChaCha8Rng {
    // FNV-1a over the role string, folded into the root seed.
    let mut h: u64 = 0xcbf29ce484222325;
    for byte in role.bytes() {
        h ^= byte as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ h);
    rng.set_stream(index);
    rng
}

/// One derived 64-bit seed from a root seed, role, and index — the
/// first draw of the corresponding derived stream.  Convenient for
/// handing independent seeds to repetitions or sub-runs.
pub fn derive_seed(seed: u64, role: &str, index: u64) -> u64 {
    derived_rng(seed, role, index).random()
}

/// Samples a multinomial draw from a probability vector via a chain of
/// binomials; `probs` must sum to 1 within round-off.
pub fn sample_multinomial(probs: &[f64], shots: u64, rng: &mut ChaCha8Rng) -> Vec<u64> {
    use rand_distr::{Binomial, Distribution};
    let mut counts = vec![0u64; probs.len()];
    let mut remaining = shots;
    let mut mass_left = 1.0f64;
    for (k, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if k + 1 == probs.len() {
            counts[k] = remaining;
            break;
        }
        let q = if mass_left > 1e-15 { (p / mass_left).clamp(0.0, 1.0) } else { 0.0 };
        let n = if q >= 1.0 {
            remaining
        } else if q <= 0.0 {
            0
        } else {
            // q is strictly inside (0, 1) here, so construction cannot fail.
            Binomial::new(remaining, q).map(|b| b.sample(rng)).unwrap_or(0)
        };
        counts[k] = n;
        remaining -= n;
        mass_left -= p;
    }
    counts
}

/// Exact outcome distribution of a circuit: probabilities
/// |⟨outcome| V† W |prep⟩|² over register indices.
pub fn outcome_distribution(
    prep: &PureState,
    circuit: &ComplexMatrix,
    meas_basis: &ComplexMatrix,
) -> Result<Vec<f64>> {
    let rd = prep.dim();
    if circuit.rows() != rd || meas_basis.rows() != rd {
        return Err(Error::DimensionMismatch(format!(
            "prep dim {}, circuit {}x{}, basis {}x{}",
            rd,
            circuit.rows(),
            circuit.cols(),
            meas_basis.rows(),
            meas_basis.cols()
        )));
    }
    let evolved = circuit.matvec(prep.amplitudes());
    let rotated = meas_basis.dagger().matvec(&evolved);
    Ok(rotated.iter().map(|a| a.norm_sqr()).collect())
}

/// Simulates a measured circuit: prepares `prep` (register-dimensional),
/// applies `circuit`, rotates by `meas_basis`†, samples `shots` outcomes,
/// and corrupts them through the optional readout model.  Deterministic
/// given the seed.
#[allow(clippy::too_many_arguments)]
pub fn simulate_shots(
    prep: &PureState,
    circuit: &ComplexMatrix,
    meas_basis: &ComplexMatrix,
    shots: u64,
    readout: Option<&ReadoutModel>,
    seed: u64,
    prepared_label: &[usize],
    basis_label: &[usize],
) -> Result<ShotRecord> {
    if shots == 0 {
        return Err(Error::ZeroShots);
    }
    let mut probs = outcome_distribution(prep, circuit, meas_basis)?;
    if let Some(model) = readout {
        // Corrupting the distribution and sampling once is distributionally
        // identical to corrupting each sampled bitstring.
        probs = model.apply_to_distribution(&probs);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts_vec = sample_multinomial(&probs, shots, &mut rng);
    let mut counts = BTreeMap::new();
    for (outcome, &n) in counts_vec.iter().enumerate() {
        if n > 0 {
            counts.insert(outcome, n);
        }
    }
    Ok(ShotRecord {
        prepared: prepared_label.to_vec(),
        basis: basis_label.to_vec(),
        shots,
        counts,
    })
}

/// Applies readout mitigation: the inverse tensor-product confusion map on
/// the empirical frequencies, then clipping negatives and renormalizing.
pub fn mitigate(record: &ShotRecord, readout: &ReadoutModel, register_dim: usize) -> Result<Vec<f64>> {
    let inv = readout.inverse()?;
    let mut cur = record.frequencies(register_dim);
    let n = register_dim.trailing_zeros() as usize;
    for q in 0..n {
        let stride = 1usize << q;
        let mut next = vec![0.0; register_dim];
        for (t, &p) in cur.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let bit = (t >> q) & 1;
            next[t & !stride] += p * inv[bit][0];
            next[t | stride] += p * inv[bit][1];
        }
        cur = next;
    }
    let mut total = 0.0;
    for p in cur.iter_mut() {
        if *p < 0.0 {
            *p = 0.0;
        }
        total += *p;
    }
    if total > 1e-12 {
        for p in cur.iter_mut() {
            *p /= total;
        }
    }
    Ok(cur)
}

/// Survival probability estimate: counts on the target outcome over all
/// shots.  Lost outcomes stay in the denominator, which is what makes the
/// estimator sensitive to trace decrease.
pub fn survival_estimate(record: &ShotRecord, target_outcome: usize) -> f64 {
    let hit = record.counts.get(&target_outcome).copied().unwrap_or(0);
    hit as f64 / record.shots as f64
}
