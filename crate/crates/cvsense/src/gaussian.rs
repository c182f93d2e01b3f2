//! Single-mode Gaussian states and the gates that prepare the probe.
//!
//! A state is the pair (mean, cov) of the quadrature vector (X, P) with
//! X = a† + a and P = i(a† − a). In this convention [X, P] = 2i, the vacuum
//! covariance is the 2×2 identity, and a squeezed vacuum has quadrature
//! variances e^{∓2r}.

use nalgebra::{Matrix2, Vector2};
use thiserror::Error;

/// Smallest covariance eigenvalue accepted as positive definite.
pub const COV_EIGENVALUE_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum GaussianError {
    #[error("squeeze strength must be non-negative, got {0}")]
    NegativeSqueeze(f64),
    #[error("displacement amplitude must be non-negative, got {0}")]
    NegativeDisplacement(f64),
    #[error("transmissivity must lie in [0, 1], got {0}")]
    TransmissivityOutOfRange(f64),
    #[error("thermal occupation must be non-negative, got {0}")]
    NegativeThermalOccupation(f64),
    #[error("covariance is not positive definite (smallest eigenvalue {0})")]
    NotPositiveDefinite(f64),
}

/// Mean vector and covariance of the (X, P) quadratures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianState {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

/// A Gaussian gate acting on the probe.
///
/// Squeezing acts along the X axis: it scales (X, P) by (e^{−r}, e^{r}).
/// Displacement with amplitude `alpha` at angle `phi` shifts the mean by
/// (2α cos φ, 2α sin φ). Rotation turns the phase-space plane by `phi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    Squeeze { r: f64 },
    Displace { alpha: f64, phi: f64 },
    Rotate { phi: f64 },
}

/// Pure-loss / thermal-noise channel with transmissivity `eta` and mean
/// environment occupation `n_bar`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossChannel {
    pub eta: f64,
    pub n_bar: f64,
}

impl GaussianState {
    /// Validates that the covariance is symmetric positive definite.
    pub fn validate(&self) -> Result<(), GaussianError> {
        let eigen = self.cov.symmetric_eigenvalues();
        let smallest = eigen.x.min(eigen.y);
        if smallest < COV_EIGENVALUE_TOL {
            return Err(GaussianError::NotPositiveDefinite(smallest));
        }
        Ok(())
    }
}

/// The vacuum state: zero mean, identity covariance.
pub fn vacuum() -> GaussianState {
    GaussianState { mean: Vector2::zeros(), cov: Matrix2::identity() }
}

/// Plane rotation by `phi`.
fn rotation(phi: f64) -> Matrix2<f64> {
    let (s, c) = phi.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Applies a gate, transforming mean and covariance consistently.
pub fn apply_gate(state: &GaussianState, gate: Gate) -> Result<GaussianState, GaussianError> {
    match gate {
        Gate::Squeeze { r } => {
            if r < 0.0 {
                return Err(GaussianError::NegativeSqueeze(r));
            }
            let s = Matrix2::new((-r).exp(), 0.0, 0.0, r.exp());
            Ok(GaussianState { mean: s * state.mean, cov: s * state.cov * s })
        }
        Gate::Displace { alpha, phi } => {
            if alpha < 0.0 {
                return Err(GaussianError::NegativeDisplacement(alpha));
            }
            let shift = Vector2::new(2.0 * alpha * phi.cos(), 2.0 * alpha * phi.sin());
            Ok(GaussianState { mean: state.mean + shift, cov: state.cov })
        }
        Gate::Rotate { phi } => {
            let rot = rotation(phi);
            Ok(GaussianState { mean: rot * state.mean, cov: rot * state.cov * rot.transpose() })
        }
    }
}

/// Applies the loss channel: mean shrinks by √η, covariance relaxes toward
/// the (2n̄ + 1)·I environment.
pub fn apply_loss(
    state: &GaussianState,
    channel: LossChannel,
) -> Result<GaussianState, GaussianError> {
    let LossChannel { eta, n_bar } = channel;
    if !(0.0..=1.0).contains(&eta) {
        return Err(GaussianError::TransmissivityOutOfRange(eta));
    }
    if n_bar < 0.0 {
        return Err(GaussianError::NegativeThermalOccupation(n_bar));
    }
    let env = (1.0 - eta) * (2.0 * n_bar + 1.0);
    Ok(GaussianState {
        mean: eta.sqrt() * state.mean,
        cov: eta * state.cov + env * Matrix2::identity(),
    })
}

/// Mean and variance of the quadrature measured at basis angle `phi`:
/// the projection of the state onto u = (cos φ, sin φ).
pub fn homodyne_moments(state: &GaussianState, phi: f64) -> (f64, f64) {
    let (s, c) = phi.sin_cos();
    let u = Vector2::new(c, s);
    let mu = u.dot(&state.mean);
    let var = (state.cov * u).dot(&u);
    (mu, var)
}

/// Mean photon number ⟨n̂⟩ = ¼(⟨X²⟩ + ⟨P²⟩ − 2).
pub fn photon_number(state: &GaussianState) -> f64 {
    let second_moments = state.cov[(0, 0)] + state.cov[(1, 1)];
    let mean_sq = state.mean.norm_squared();
    0.25 * (second_moments + mean_sq - 2.0)
}
