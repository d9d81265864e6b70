//! Relaxations of factorable programs built from ordered inner-function
//! estimators: McCormick, composite (CR), discretized MIP, their combination
//! (CRMIP) and the local-bound tightened variant (CRMIP+).
//!
//! The geometric layer ([`simplotope`], [`envelopes`], [`estimators`]) is
//! generic over [`Scalar`]; models handed to the LP/MILP layer ([`milp`]) are
//! `f64`.

pub mod bench;
pub mod envelopes;
pub mod estimators;
pub mod expr;
pub mod milp;
pub mod relaxations;
pub mod scalar;
pub mod simplotope;

pub use scalar::Scalar;

/// Exact rational scalar used by the exact-arithmetic checks.
pub type Exact = num_rational::Rational64;

pub type Interval = expr::Interval<f64>;
pub type Scheme = simplotope::DiscretizationScheme<f64>;
pub type ExactScheme = simplotope::DiscretizationScheme<Exact>;
pub type Piece = envelopes::AffinePiece<f64>;
pub type ExactPiece = envelopes::AffinePiece<Exact>;
pub type Ledger = estimators::LocalBoundLedger<f64>;
