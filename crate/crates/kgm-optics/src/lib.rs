//! Multi-phase geometric optics for the Klein–Gordon–Maxwell system in
//! Lorenz gauge.
//!
//! The crate builds high-frequency (WKB) solutions of the form
//!
//! ```text
//! A_λ = A₀ + λ^{1/2} Σ_A Re(e^{iu_A/λ} conj(W_A)) + error
//! Φ_λ = Φ₀ + λ^{1/2} Σ_A e^{iu_A/λ} Ψ_A        + error
//! ```
//!
//! on a periodic box, evolves every piece of the construction, and measures
//! the λ-scalings that characterise it. The pipeline is split into modules:
//!
//! * [`fields`] — grids, spectral operators, Sobolev norms, frequency
//!   projectors and the oscillatory-composition calculus ([`fields::osc`]).
//! * [`phases`] — characteristic phases, ray tracing, pair classification
//!   and the uniform lower bound η₀.
//! * [`background`] — admissible background data and the coupled
//!   background / transport cascade.
//! * [`parametrix`] — first-order expansion, interaction terms, the elliptic
//!   error piece and KGML residual decomposition.
//! * [`init_data`] — constrained error initial data and parameter splitting.
//! * [`error_evolution`] — decoupled and coupled error-parameter evolution,
//!   auxiliary-function consistency and bootstrap monitoring.
//! * [`harness`] — configuration, scenario presets, λ-sweeps and reports.
//!
//! Conventions: the metric signature is (−,+,+,+), so `□ = −∂²_t + Δ`;
//! spacetime vectors are stored with index 0 = time and carry raised
//! indices (`A^α`); `∂^0 = −∂_t`.

pub mod background;
pub mod error_evolution;
pub mod fields;
pub mod harness;
pub mod init_data;
pub mod parametrix;
pub mod phases;

use thiserror::Error;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A field contains NaN or infinite samples.
    #[error("invalid field `{name}`: {reason}")]
    InvalidField { name: String, reason: String },

    /// Inconsistent or out-of-range configuration (grids, λ, κ, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// The phase set violates strong coherence or is degenerate.
    #[error("phase set rejected: {0}")]
    PhaseSet(String),

    /// An iterative solver failed to reach its tolerance.
    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    /// A source with non-zero mean was handed to a mean-zero inversion.
    #[error("neutrality violated: mean of right-hand side is {mean:e}")]
    Neutrality { mean: f64 },

    /// A time evolution was aborted.
    #[error("evolution aborted at t = {time:.6}: {reason}")]
    Abort { time: f64, reason: String },

    /// Input/output failure while writing reports or snapshots.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Failure while (de)serialising reports or configurations.
    #[error("serialisation error: {0}")]
    Serde(String),

    /// A log–log fit received unusable data.
    #[error("slope fit failed: {0}")]
    Fit(String),

    /// A pipeline stage failed; `stage` names it (and λ where relevant).
    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: String, source: Box<Error> },
}

impl Error {
    /// Attach the name of the pipeline stage that raised the error.
    pub fn at(self, stage: impl Into<String>) -> Error {
        Error::Stage { stage: stage.into(), source: Box::new(self) }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Complex double used for every sampled field.
pub type C64 = num_complex::Complex64;
