//! Numerical laboratory for the coincidence of fundamental limits in feedback
//! communication, estimation, and control over Gaussian channels with memory.
//!
//! The library builds every object from one closed loop: a linear encoder with
//! unstable dynamics `(A, C)` transmits over a stable, minimum-phase ARMA
//! channel, and a Kalman filter at the receiver doubles as decoder, estimator,
//! and stabilizing controller. Each module computes one facet of that loop:
//!
//! - [`channel`]: ARMA channel validation, state-space realizations, Toeplitz
//!   operator bundles, and open-loop simulation.
//! - [`kalman`]: the augmented one-step predictor, its Riccati recursion,
//!   fixed-point smoothing, and two independent steady-state solvers.
//! - [`coding`]: the feedback coding scheme built on the filter, its
//!   Schalkwijk-Kailath specialization, message maps, input policies, and the
//!   two equivalent generator parametrizations.
//! - [`limits`]: rate, power, mutual information, directed information,
//!   estimation error, and Bode sensitivity functionals, each computed along
//!   independent routes so their coincidence is a check and not a tautology.
//! - [`properties`]: closed-loop covariance diagnostics that certify the
//!   structural facts the theory predicts (innovation orthogonality, moving
//!   average structure, predictor sufficiency, realization equivalence).
//! - [`cli`]: configuration parsing and the report-emitting subcommands.
//!
//! Everything is computed in error coordinates where signals stay bounded;
//! growing quantities such as `A^t` enter only through closed forms that are
//! evaluated stably. See module docs for the specific identities used.

pub mod channel;
pub mod cli;
pub mod coding;
pub mod kalman;
pub mod limits;
pub mod linalg;
pub mod properties;
