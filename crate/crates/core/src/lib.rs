//! Downlink millimeter-wave NOMA with random beamforming.
//!
//! The crate is organised bottom-up:
//!
//! * [`channel`] draws geometric mmWave channels, random orthogonal beams and
//!   the per-beam equivalent gains `g[k][m] = |h_k^H w_m|^2` that every
//!   optimizer consumes.
//! * [`rates`] evaluates SINRs, achievable rates, SIC decoding-order
//!   conditions and QoS for a schedule and a power allocation.
//! * [`feasibility`] holds the linear-algebra core: the `(Lambda, D, G)`
//!   matrices, the Perron-Frobenius test, the minimal power vector and the
//!   power-minimization linear programs.
//! * [`bb`] is the epsilon-optimal branch-and-bound power allocator over
//!   SINR boxes, [`sca`] the successive convex approximation allocator.
//! * [`scheduler`] assigns users to beams (deferred acceptance followed by
//!   swap matching, exhaustive joint search, random baseline).
//! * [`harness`] runs Monte Carlo experiments and writes CSV results.

// `!(x > 0.0)` guards reject NaN on purpose; index loops mirror the algebra.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bb;
pub mod channel;
pub mod convex;
pub mod error;
pub mod feasibility;
pub mod harness;
pub mod lp;
pub mod rates;
pub mod sca;
pub mod scheduler;
pub mod spectral;

pub use error::{Error, Result};
