//! Uplink sum-rate optimization for RIS-aided mmWave systems whose access
//! point uses a hybrid beam-selection combiner followed by resolution-adaptive
//! ADCs.
//!
//! The crate is organized bottom-up:
//!
//! * [`scenario`] : configuration, geometry and seed management.
//! * [`channel`] : geometric mmWave channels (RIS→AP and user→RIS).
//! * [`quantizer`] : the additive quantization noise model and the exact
//!   achievable-rate evaluation every optimizer is scored against.
//! * [`conic`] : a small dense log-barrier interior-point solver.
//! * [`sca`] : joint bit-depth / beam-selection optimization by successive
//!   convex approximation, plus rounding, projection and an exhaustive oracle.
//! * [`mm`] : minorize-maximization for the per-user decoders.
//! * [`phase`] : Riemannian ascent over the unit-modulus RIS phases.
//! * [`bcd`] : the outer block-coordinate loop and baseline schemes.
//! * [`experiment`] : Monte-Carlo sweeps, traces and timing benchmarks,
//!   driven by the `risopt` binary.
//!
//! See the crate's `examples/` directory for one runnable program per
//! capability.

pub mod assignment;
pub mod bcd;
pub mod channel;
pub mod conic;
pub mod error;
pub mod experiment;
pub mod mm;
pub mod phase;
pub mod quantizer;
pub mod sca;
pub mod scenario;

pub use error::{Error, Result};

use nalgebra::{DMatrix, DVector};

/// Complex double used throughout.
pub type C64 = num_complex::Complex<f64>;
/// Dense complex matrix.
pub type CMat = DMatrix<C64>;
/// Dense complex column vector.
pub type CVec = DVector<C64>;

pub mod prelude {
    pub use crate::bcd::{
        baseline_fixed, baseline_no_ris, bcd_solve, BcdOptions, PhaseMode, SolveReport,
    };
    pub use crate::channel::{draw_channels, draw_direct_channels, ChannelRealization};
    pub use crate::quantizer::{
        alpha_of_bits, rate_per_user, sum_rate, AqnmMode, CombinerState, DecoderBank, PhaseVector,
    };
    pub use crate::scenario::{SystemConfig, TrialSeed};
    pub use crate::{CMat, CVec, Error, Result, C64};
}
