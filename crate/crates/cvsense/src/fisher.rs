//! Classical Fisher information and cost for Gaussian homodyne statistics,
//! the closed-form lossy Fisher landscape, optimal measurement angles, and
//! the shot-noise-limit baseline.
//!
//! Angle conventions: `phi` is the measurement angle relative to the probe
//! orientation (homodyne angle minus encoded phase); `phi_alpha` is the
//! displacement angle in the same frame. Moment derivatives are taken with
//! respect to the encoded phase at a fixed homodyne angle, so they carry
//! the opposite sign from derivatives in `phi`. The Fisher information is
//! quadratic in every derivative and does not feel the sign, but gradient
//! schedules that combine shifted measurement bases do.

use thiserror::Error;

/// Fisher information below this is treated as zero signal: the cost is the
/// infinity sentinel and gradients are refused.
pub const FISHER_ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum FisherError {
    #[error("quadrature variance {0} is not positive")]
    NonPositiveVariance(f64),
    #[error("input is not finite")]
    NonFiniteInput,
    #[error("sample count must be at least 1")]
    InvalidSampleCount,
    #[error("Fisher information {0} is too small to invert")]
    VanishingFisher(f64),
    #[error("photon number {0} is not positive")]
    NonPositivePhotonNumber(f64),
}

/// Homodyne mean and variance with their encoded-phase derivatives; the
/// sufficient statistics for the Fisher information of a Gaussian marginal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureDerivatives {
    pub mu: f64,
    pub var: f64,
    pub dmu_dphi: f64,
    pub dvar_dphi: f64,
}

impl QuadratureDerivatives {
    pub fn validate(&self) -> Result<(), FisherError> {
        if ![self.mu, self.var, self.dmu_dphi, self.dvar_dphi].iter().all(|v| v.is_finite()) {
            return Err(FisherError::NonFiniteInput);
        }
        if self.var <= 0.0 {
            return Err(FisherError::NonPositiveVariance(self.var));
        }
        Ok(())
    }
}

/// [`QuadratureDerivatives`] plus the control-parameter derivatives needed
/// for one component of the Fisher gradient: ∇_Θ V, ∇_Θ(∂μ/∂φ), ∇_Θ(∂V/∂φ)
/// for a single control Θ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherGradientInputs {
    pub q: QuadratureDerivatives,
    pub dvar_dtheta: f64,
    pub d2mu_dphidtheta: f64,
    pub d2var_dphidtheta: f64,
}

impl FisherGradientInputs {
    pub fn validate(&self) -> Result<(), FisherError> {
        self.q.validate()?;
        if ![self.dvar_dtheta, self.d2mu_dphidtheta, self.d2var_dphidtheta]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(FisherError::NonFiniteInput);
        }
        Ok(())
    }
}

/// F = (∂μ/∂φ)²/V + (∂V/∂φ)²/(2V²) for a Gaussian homodyne marginal.
pub fn fisher_from_moments(q: &QuadratureDerivatives) -> Result<f64, FisherError> {
    q.validate()?;
    Ok(q.dmu_dphi * q.dmu_dphi / q.var + q.dvar_dphi * q.dvar_dphi / (2.0 * q.var * q.var))
}

/// Estimation cost C = 1/(n·F); Fisher information is additive over i.i.d.
/// samples, and n = 1 gives the single-shot cost. Vanishing Fisher
/// information yields `f64::INFINITY`; callers must branch on `is_finite`
/// before feeding the value into optimizer arithmetic.
pub fn cost(q: &QuadratureDerivatives, n_samples: u64) -> Result<f64, FisherError> {
    if n_samples == 0 {
        return Err(FisherError::InvalidSampleCount);
    }
    let f = fisher_from_moments(q)?;
    if f < FISHER_ZERO_TOL {
        return Ok(f64::INFINITY);
    }
    Ok(1.0 / (n_samples as f64 * f))
}

/// One component of ∇_Θ F:
/// (1/V³)·[2V²(∂μ/∂φ)∇(∂μ/∂φ) − V(∂μ/∂φ)²∇V] +
/// (1/V³)·[V(∂V/∂φ)∇(∂V/∂φ) − (∂V/∂φ)²∇V].
pub fn fisher_gradient(inp: &FisherGradientInputs) -> Result<f64, FisherError> {
    inp.validate()?;
    let v = inp.q.var;
    let dmu = inp.q.dmu_dphi;
    let dvar = inp.q.dvar_dphi;
    let v3 = v * v * v;
    let mean_term = 2.0 * v * v * dmu * inp.d2mu_dphidtheta - v * dmu * dmu * inp.dvar_dtheta;
    let var_term = v * dvar * inp.d2var_dphidtheta - dvar * dvar * inp.dvar_dtheta;
    Ok((mean_term + var_term) / v3)
}

/// ∇_Θ C = −∇_Θ F / F². Refuses vanishing Fisher information instead of
/// emitting a non-finite gradient.
pub fn cost_gradient(fisher: f64, fisher_grad: f64) -> Result<f64, FisherError> {
    if !fisher.is_finite() || !fisher_grad.is_finite() {
        return Err(FisherError::NonFiniteInput);
    }
    if fisher < FISHER_ZERO_TOL {
        return Err(FisherError::VanishingFisher(fisher));
    }
    Ok(-fisher_grad / (fisher * fisher))
}

/// Quadrature variance of the lossy squeezed probe at relative angle `phi`
/// (vacuum-limited loss, no thermal excess).
fn lossy_variance(phi: f64, r: f64, eta: f64) -> f64 {
    let (s, c) = phi.sin_cos();
    eta * ((-2.0 * r).exp() * c * c + (2.0 * r).exp() * s * s) + 1.0 - eta
}

/// Analytic moments of the homodyne marginal and their encoded-phase
/// derivatives. Feeding the result to [`fisher_from_moments`] reproduces
/// [`analytic_fisher`] identically.
pub fn analytic_moments(
    phi: f64,
    phi_alpha: f64,
    r: f64,
    alpha: f64,
    eta: f64,
) -> QuadratureDerivatives {
    let root_eta = eta.sqrt();
    QuadratureDerivatives {
        mu: 2.0 * root_eta * alpha * (phi_alpha - phi).cos(),
        var: lossy_variance(phi, r, eta),
        // Encoded phase enters as phi ← phi − φ, hence the sign flips.
        dmu_dphi: -2.0 * root_eta * alpha * (phi_alpha - phi).sin(),
        dvar_dphi: -2.0 * eta * (2.0 * r).sinh() * (2.0 * phi).sin(),
    }
}

/// Closed-form Fisher information of the lossy squeezed-displaced probe:
///
/// F = 4η|α|² sin²(φ_α−φ) / D + 2η² sinh²(2r) sin²(2φ) / D²,
/// D = η(e^{−2r}cos²φ + e^{2r}sin²φ) + 1 − η.
pub fn analytic_fisher(phi: f64, phi_alpha: f64, r: f64, alpha: f64, eta: f64) -> f64 {
    let d = lossy_variance(phi, r, eta);
    let sin_rel = (phi_alpha - phi).sin();
    let sinh2r = (2.0 * r).sinh();
    let sin2phi = (2.0 * phi).sin();
    4.0 * eta * alpha * alpha * sin_rel * sin_rel / d
        + 2.0 * eta * eta * sinh2r * sinh2r * sin2phi * sin2phi / (d * d)
}

/// Measurement angle maximizing the squeezing (variance) term of the Fisher
/// information, in [0, π/4].
///
/// Lossless, this is ½·arccos(tanh 2r); with loss it is ½·arccos((R−1)/(R+1))
/// for R the ratio of lossy anti-squeezed to squeezed variances. Both reduce
/// to ½·arccos(η sinh 2r / (η cosh 2r + 1 − η)). At r = 0 the landscape is
/// angle-independent and the formula degenerates to π/4. With strong
/// displacement the joint optimum moves away from this angle toward φ = 0,
/// where the mean term 4η|α|²/D peaks.
pub fn optimal_measurement_angle(r: f64, eta: f64) -> f64 {
    let ratio = eta * (2.0 * r).sinh() / (eta * (2.0 * r).cosh() + 1.0 - eta);
    0.5 * ratio.acos()
}

/// Shot-noise-limit cost 1/(n · 4·n_photons): the best cost a coherent probe
/// of equal mean photon number can reach.
pub fn shot_noise_limit_cost(n_photons: f64, n_samples: u64) -> Result<f64, FisherError> {
    if n_samples == 0 {
        return Err(FisherError::InvalidSampleCount);
    }
    if !n_photons.is_finite() || n_photons <= 0.0 {
        return Err(FisherError::NonPositivePhotonNumber(n_photons));
    }
    Ok(1.0 / (n_samples as f64 * 4.0 * n_photons))
}
