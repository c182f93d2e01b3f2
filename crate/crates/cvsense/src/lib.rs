//! Single-mode Gaussian phase sensing toolkit.
//!
//! The crate models a squeezed-and-displaced optical probe measured by
//! homodyne detection, scores measurement settings by the classical Fisher
//! information of the sampled quadrature, and optimizes the two control
//! angles (homodyne basis and displacement phase) with gradient descent
//! driven by exact parameter-shift rules or with Gaussian-process Bayesian
//! optimization.
//!
//! Quadrature convention: X = a† + a, P = i(a† − a), so [X, P] = 2i and the
//! vacuum covariance is the identity.

pub mod bench;
pub mod estimate;
pub mod fisher;
pub mod gaussian;
pub mod gp;
pub mod opshift;
pub mod optimize;
