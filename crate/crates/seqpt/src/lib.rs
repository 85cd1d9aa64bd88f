//! Selective and efficient quantum process tomography (SEQPT) for
//! trace-preserving and non-trace-preserving channels.
//!
//! A quantum process ℰ acting on a d-dimensional system is fully described by
//! its process matrix χ, expressed in a fixed basis of d² unitary,
//! trace-orthogonal operators: ℰ(ρ) = Σ χ_j^i E_i ρ E_j†.  The selective
//! protocol implemented here recovers any single coefficient χ_j^i from the
//! average survival probability of a *modified* channel
//! ρ ↦ ℰ(E_i† ρ E_j), estimated over a uniform state 2-design.  For
//! non-trace-preserving maps, a-priori knowledge of the loss operator
//! 𝒫 = Σ χ_j^i E_j† E_i turns the coupled linear system back into one
//! independent equation per coefficient.  In composite dimensions
//! (d = D₁·D₂) the design is replaced by a tensor product of per-factor
//! designs, and three averaged fidelities (joint plus two reduced ones)
//! combine into each coefficient.
//!
//! The crate contains:
//!
//! * [`qmath`] — dense complex linear algebra (tensor products, partial
//!   trace, Hermitian eigendecomposition, PSD matrix square root);
//! * [`opbasis`] — Sylvester operator bases and tensor-product bases;
//! * [`designs`] — complete MUB sets in prime dimensions (uniform state
//!   2-designs), product designs, and the operator/design closure table;
//! * [`channels`] — Kraus/χ process representations, the loss operator,
//!   the projector decomposition of modified-channel inputs, and the
//!   library of test processes;
//! * [`encoding`] — qudit-to-qubit register embeddings, loss circuits,
//!   shot-noise measurement simulation, readout error and mitigation;
//! * [`tomography`] — the SEQPT engines (single-space and bipartite, TP
//!   and NTP), the selective single-shot sampler, and a standard-QPT
//!   baseline;
//! * [`physicality`] — Dykstra projection onto the physical set and the
//!   normalized process fidelity.

pub mod qmath;
pub mod opbasis;
pub mod designs;
pub mod channels;
pub mod encoding;
pub mod tomography;
pub mod physicality;

/// Errors shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    /// A matrix required to be Hermitian is too far from its adjoint.
    #[error("matrix is not Hermitian: max |M - M^H| = {asymmetry:.3e}")]
    NotHermitian { asymmetry: f64 },
    /// A matrix required to be positive semidefinite has a significantly
    /// negative eigenvalue.
    #[error("spectrum significantly negative: min eigenvalue {min_eig:.3e}")]
    NotPositiveSemidefinite { min_eig: f64 },
    /// The requested dimension has no supported construction.
    #[error("unsupported dimension {0}")]
    UnsupportedDimension(usize),
    /// A state vector is not normalized.
    #[error("state vector norm deviates from 1 by {0:.3e}")]
    NotNormalized(f64),
    /// An operator mapped a design state outside its own basis.
    #[error("operator basis does not close over the state design: {0}")]
    ClosureViolated(String),
    /// The operation needs a Kraus form the channel does not carry.
    #[error("channel has no Kraus form")]
    MissingKraus,
    /// The channel cannot be factored as a unitary times a diagonal loss.
    #[error("channel is not expressible as unitary-plus-level-loss: {0}")]
    NotUnitaryLoss(String),
    /// The readout confusion matrix cannot be inverted.
    #[error("confusion matrix is singular")]
    SingularConfusion,
    /// A linear inversion is too ill-conditioned to trust.
    #[error("linear system ill-conditioned (condition estimate {0:.3e})")]
    IllConditioned(f64),
    /// A process matrix with zero trace cannot be scored.
    #[error("zero-trace process matrix")]
    ZeroTrace,
    /// Shot-based estimation needs a positive shot count.
    #[error("shots must be positive")]
    ZeroShots,
    /// The experiment configuration is inconsistent.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
