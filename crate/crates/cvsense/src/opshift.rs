//! Heisenberg-picture gate action on the quadratic operator algebra, and
//! exact parameter-shift rules for differentiating through gates.
//!
//! Operators are expansions over the fixed basis
//! (𝕀, X, P, X², P², XP, PX), in that order. A gate G maps each basis
//! element to another member of the span; collecting those expansions row
//! by row gives the gate matrix M_G, and a coefficient vector transforms as
//! c ← M_Gᵀ c (note the transpose: rows describe images of basis elements,
//! so coefficients pick up the transposed action).
//!
//! Every matrix entry is a constant, a single-angle trigonometric term, or
//! a double-angle term in the gate parameter, so the parameter derivative
//! of M_G is reproduced exactly (not approximately) by weighted evaluations
//! of M_G at shifted parameters. The weights differ between the linear
//! block (rows 𝕀, X, P) and the quadratic block (rows X², P², XP, PX);
//! [`shifted_derivative`] assembles both blocks.

use nalgebra::{SMatrix, SVector};
use thiserror::Error;

use crate::gaussian::{Gate, GaussianState};

/// Coefficients over the operator basis (𝕀, X, P, X², P², XP, PX).
pub type Coeffs = SVector<f64, 7>;

/// Row i holds the expansion of the gate image of basis element i.
pub type OperatorBasisMatrix = SMatrix<f64, 7, 7>;

/// Basis indices into [`Coeffs`] and [`OperatorBasisMatrix`].
pub mod idx {
    pub const IDENT: usize = 0;
    pub const X: usize = 1;
    pub const P: usize = 2;
    pub const XX: usize = 3;
    pub const PP: usize = 4;
    pub const XP: usize = 5;
    pub const PX: usize = 6;
}

#[derive(Debug, Error, PartialEq)]
pub enum ShiftError {
    #[error("gate parameter is not finite")]
    NonFiniteParameter,
    #[error("shift scale {0} is invalid for this rule")]
    InvalidShiftScale(f64),
    #[error("parameter {param:?} does not belong to gate {gate:?}")]
    ParameterGateMismatch { param: ShiftParam, gate: Gate },
    #[error("operator product leaves the quadratic span")]
    NonRepresentableProduct,
    #[error("operator has unequal XP and PX coefficients; expectation is not real")]
    NonHermitianExpectation,
}

/// An operator as real coefficients over the basis. XP and PX are tracked
/// separately; consumers needing the symmetrized moment combine them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorVector(pub Coeffs);

impl OperatorVector {
    pub fn zero() -> Self {
        OperatorVector(Coeffs::zeros())
    }

    fn basis(i: usize) -> Self {
        let mut c = Coeffs::zeros();
        c[i] = 1.0;
        OperatorVector(c)
    }

    pub fn identity() -> Self {
        Self::basis(idx::IDENT)
    }
    pub fn x() -> Self {
        Self::basis(idx::X)
    }
    pub fn p() -> Self {
        Self::basis(idx::P)
    }
    pub fn x_squared() -> Self {
        Self::basis(idx::XX)
    }
    pub fn p_squared() -> Self {
        Self::basis(idx::PP)
    }
    pub fn xp() -> Self {
        Self::basis(idx::XP)
    }
    pub fn px() -> Self {
        Self::basis(idx::PX)
    }

    /// n̂ = ¼(X² + P² − 2·𝕀).
    pub fn photon_number() -> Self {
        let mut c = Coeffs::zeros();
        c[idx::IDENT] = -0.5;
        c[idx::XX] = 0.25;
        c[idx::PP] = 0.25;
        OperatorVector(c)
    }

    fn has_quadratic_part(&self) -> bool {
        self.0.rows_range(idx::XX..).iter().any(|&c| c != 0.0)
    }

    fn is_scalar(&self) -> bool {
        self.0.rows_range(idx::X..).iter().all(|&c| c == 0.0)
    }
}

/// Gate parameters a shift rule can differentiate with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftParam {
    SqueezeStrength,
    DisplaceAmplitude,
    DisplaceAngle,
    RotationAngle,
}

/// Which rows of the gate matrix a rule differentiates exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorBlock {
    Linear,
    Quadratic,
}

/// Weighted parameter shifts: ∂M ≈ Σ_k w_k · M(θ + δ_k), exact on the
/// rule's block.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftRule {
    pub param: ShiftParam,
    pub block: OperatorBlock,
    /// (offset, weight) pairs.
    pub shifts: Vec<(f64, f64)>,
}

impl ShiftRule {
    /// Weighted sum of gate matrices at shifted parameters. Only the rows
    /// of `self.block` equal the parameter derivative.
    pub fn evaluate(&self, gate: Gate) -> Result<OperatorBasisMatrix, ShiftError> {
        let mut acc = OperatorBasisMatrix::zeros();
        for &(offset, weight) in &self.shifts {
            acc += weight * gate_matrix(shift_gate(gate, self.param, offset)?)?;
        }
        Ok(acc)
    }
}

fn check_finite(gate: Gate) -> Result<(), ShiftError> {
    let ok = match gate {
        Gate::Squeeze { r } => r.is_finite(),
        Gate::Displace { alpha, phi } => alpha.is_finite() && phi.is_finite(),
        Gate::Rotate { phi } => phi.is_finite(),
    };
    if ok {
        Ok(())
    } else {
        Err(ShiftError::NonFiniteParameter)
    }
}

/// Offsets `param` by `delta` inside the gate. Negative squeeze strengths
/// and amplitudes are legitimate here: shifted evaluations run through the
/// matrix formulas, not through state preparation.
fn shift_gate(gate: Gate, param: ShiftParam, delta: f64) -> Result<Gate, ShiftError> {
    match (gate, param) {
        (Gate::Squeeze { r }, ShiftParam::SqueezeStrength) => Ok(Gate::Squeeze { r: r + delta }),
        (Gate::Displace { alpha, phi }, ShiftParam::DisplaceAmplitude) => {
            Ok(Gate::Displace { alpha: alpha + delta, phi })
        }
        (Gate::Displace { alpha, phi }, ShiftParam::DisplaceAngle) => {
            Ok(Gate::Displace { alpha, phi: phi + delta })
        }
        (Gate::Rotate { phi }, ShiftParam::RotationAngle) => Ok(Gate::Rotate { phi: phi + delta }),
        _ => Err(ShiftError::ParameterGateMismatch { param, gate }),
    }
}

/// The 7×7 gate matrix. Rows are images of basis elements; coefficient
/// vectors transform by the transpose (see module docs).
///
/// Accepts any finite parameters; shift rules evaluate outside the physical
/// preparation domain (e.g. r − s < 0).
pub fn gate_matrix(gate: Gate) -> Result<OperatorBasisMatrix, ShiftError> {
    check_finite(gate)?;
    let mut m = OperatorBasisMatrix::zeros();
    m[(idx::IDENT, idx::IDENT)] = 1.0;
    match gate {
        Gate::Squeeze { r } => {
            m[(idx::X, idx::X)] = (-r).exp();
            m[(idx::P, idx::P)] = r.exp();
            m[(idx::XX, idx::XX)] = (-2.0 * r).exp();
            m[(idx::PP, idx::PP)] = (2.0 * r).exp();
            m[(idx::XP, idx::XP)] = 1.0;
            m[(idx::PX, idx::PX)] = 1.0;
        }
        Gate::Displace { alpha, phi } => {
            let (s, c) = phi.sin_cos();
            let (dx, dp) = (2.0 * alpha * c, 2.0 * alpha * s);
            m[(idx::X, idx::IDENT)] = dx;
            m[(idx::X, idx::X)] = 1.0;
            m[(idx::P, idx::IDENT)] = dp;
            m[(idx::P, idx::P)] = 1.0;
            // (d + X)² and friends, with d the added mean.
            m[(idx::XX, idx::IDENT)] = dx * dx;
            m[(idx::XX, idx::X)] = 2.0 * dx;
            m[(idx::XX, idx::XX)] = 1.0;
            m[(idx::PP, idx::IDENT)] = dp * dp;
            m[(idx::PP, idx::P)] = 2.0 * dp;
            m[(idx::PP, idx::PP)] = 1.0;
            m[(idx::XP, idx::IDENT)] = dx * dp;
            m[(idx::XP, idx::X)] = dp;
            m[(idx::XP, idx::P)] = dx;
            m[(idx::XP, idx::XP)] = 1.0;
            m[(idx::PX, idx::IDENT)] = dx * dp;
            m[(idx::PX, idx::X)] = dp;
            m[(idx::PX, idx::P)] = dx;
            m[(idx::PX, idx::PX)] = 1.0;
        }
        Gate::Rotate { phi } => {
            let (s, c) = phi.sin_cos();
            m[(idx::X, idx::X)] = c;
            m[(idx::X, idx::P)] = -s;
            m[(idx::P, idx::X)] = s;
            m[(idx::P, idx::P)] = c;
            let (cc, ss, cs) = (c * c, s * s, c * s);
            m[(idx::XX, idx::XX)] = cc;
            m[(idx::XX, idx::PP)] = ss;
            m[(idx::XX, idx::XP)] = -cs;
            m[(idx::XX, idx::PX)] = -cs;
            m[(idx::PP, idx::XX)] = ss;
            m[(idx::PP, idx::PP)] = cc;
            m[(idx::PP, idx::XP)] = cs;
            m[(idx::PP, idx::PX)] = cs;
            m[(idx::XP, idx::XX)] = cs;
            m[(idx::XP, idx::PP)] = -cs;
            m[(idx::XP, idx::XP)] = cc;
            m[(idx::XP, idx::PX)] = -ss;
            m[(idx::PX, idx::XX)] = cs;
            m[(idx::PX, idx::PP)] = -cs;
            m[(idx::PX, idx::XP)] = -ss;
            m[(idx::PX, idx::PX)] = cc;
        }
    }
    Ok(m)
}

/// Analytic ∂M_G/∂param, used to validate shift rules and as a test oracle.
pub fn gate_matrix_derivative(
    gate: Gate,
    param: ShiftParam,
) -> Result<OperatorBasisMatrix, ShiftError> {
    check_finite(gate)?;
    // Reject mismatched parameters up front.
    shift_gate(gate, param, 0.0)?;
    let mut m = OperatorBasisMatrix::zeros();
    match (gate, param) {
        (Gate::Squeeze { r }, ShiftParam::SqueezeStrength) => {
            m[(idx::X, idx::X)] = -(-r).exp();
            m[(idx::P, idx::P)] = r.exp();
            m[(idx::XX, idx::XX)] = -2.0 * (-2.0 * r).exp();
            m[(idx::PP, idx::PP)] = 2.0 * (2.0 * r).exp();
        }
        (Gate::Displace { alpha, phi }, ShiftParam::DisplaceAmplitude) => {
            let (s, c) = phi.sin_cos();
            m[(idx::X, idx::IDENT)] = 2.0 * c;
            m[(idx::P, idx::IDENT)] = 2.0 * s;
            m[(idx::XX, idx::IDENT)] = 8.0 * alpha * c * c;
            m[(idx::XX, idx::X)] = 4.0 * c;
            m[(idx::PP, idx::IDENT)] = 8.0 * alpha * s * s;
            m[(idx::PP, idx::P)] = 4.0 * s;
            for row in [idx::XP, idx::PX] {
                m[(row, idx::IDENT)] = 8.0 * alpha * c * s;
                m[(row, idx::X)] = 2.0 * s;
                m[(row, idx::P)] = 2.0 * c;
            }
        }
        (Gate::Displace { alpha, phi }, ShiftParam::DisplaceAngle) => {
            let (s, c) = phi.sin_cos();
            let (s2, c2) = (2.0 * phi).sin_cos();
            let a2 = alpha * alpha;
            m[(idx::X, idx::IDENT)] = -2.0 * alpha * s;
            m[(idx::P, idx::IDENT)] = 2.0 * alpha * c;
            m[(idx::XX, idx::IDENT)] = -4.0 * a2 * s2;
            m[(idx::XX, idx::X)] = -4.0 * alpha * s;
            m[(idx::PP, idx::IDENT)] = 4.0 * a2 * s2;
            m[(idx::PP, idx::P)] = 4.0 * alpha * c;
            for row in [idx::XP, idx::PX] {
                m[(row, idx::IDENT)] = 4.0 * a2 * c2;
                m[(row, idx::X)] = 2.0 * alpha * c;
                m[(row, idx::P)] = -2.0 * alpha * s;
            }
        }
        (Gate::Rotate { phi }, ShiftParam::RotationAngle) => {
            let (s, c) = phi.sin_cos();
            let (s2, c2) = (2.0 * phi).sin_cos();
            m[(idx::X, idx::X)] = -s;
            m[(idx::X, idx::P)] = -c;
            m[(idx::P, idx::X)] = c;
            m[(idx::P, idx::P)] = -s;
            m[(idx::XX, idx::XX)] = -s2;
            m[(idx::XX, idx::PP)] = s2;
            m[(idx::XX, idx::XP)] = -c2;
            m[(idx::XX, idx::PX)] = -c2;
            m[(idx::PP, idx::XX)] = s2;
            m[(idx::PP, idx::PP)] = -s2;
            m[(idx::PP, idx::XP)] = c2;
            m[(idx::PP, idx::PX)] = c2;
            for row in [idx::XP, idx::PX] {
                m[(row, idx::XX)] = c2;
                m[(row, idx::PP)] = -c2;
                m[(row, idx::XP)] = -s2;
                m[(row, idx::PX)] = -s2;
            }
        }
        _ => unreachable!("shift_gate validated the pairing"),
    }
    Ok(m)
}

/// Transforms an operator through a gate: c ← M_Gᵀ c.
pub fn apply_operator_gate(op: &OperatorVector, gate: Gate) -> Result<OperatorVector, ShiftError> {
    Ok(OperatorVector(gate_matrix(gate)?.transpose() * op.0))
}

/// Product of two operators, tracking XP and PX separately. Errors if the
/// result leaves the quadratic span instead of silently truncating.
pub fn operator_product(
    a: &OperatorVector,
    b: &OperatorVector,
) -> Result<OperatorVector, ShiftError> {
    if (a.has_quadratic_part() && !b.is_scalar()) || (b.has_quadratic_part() && !a.is_scalar()) {
        return Err(ShiftError::NonRepresentableProduct);
    }
    let mut c = a.0[idx::IDENT] * b.0 + b.0[idx::IDENT] * a.0;
    c[idx::IDENT] -= a.0[idx::IDENT] * b.0[idx::IDENT];
    c[idx::XX] += a.0[idx::X] * b.0[idx::X];
    c[idx::PP] += a.0[idx::P] * b.0[idx::P];
    c[idx::XP] += a.0[idx::X] * b.0[idx::P];
    c[idx::PX] += a.0[idx::P] * b.0[idx::X];
    Ok(OperatorVector(c))
}

/// Expectation value of an operator in a Gaussian state. Requires equal XP
/// and PX coefficients (a Hermitian combination); ⟨XP + PX⟩ is twice the
/// symmetrized cross moment.
pub fn expectation(op: &OperatorVector, state: &GaussianState) -> Result<f64, ShiftError> {
    let c = &op.0;
    if c[idx::XP] != c[idx::PX] {
        return Err(ShiftError::NonHermitianExpectation);
    }
    let (mx, mp) = (state.mean.x, state.mean.y);
    let xx = state.cov[(0, 0)] + mx * mx;
    let pp = state.cov[(1, 1)] + mp * mp;
    let sym_cross = state.cov[(0, 1)] + mx * mp;
    Ok(c[idx::IDENT]
        + c[idx::X] * mx
        + c[idx::P] * mp
        + c[idx::XX] * xx
        + c[idx::PP] * pp
        + (c[idx::XP] + c[idx::PX]) * sym_cross)
}

const DEFAULT_SQUEEZE_SHIFT: f64 = 0.1;
const DEFAULT_LINEAR_ANGLE_SHIFT: f64 = std::f64::consts::FRAC_PI_2;
const DEFAULT_QUADRATIC_ANGLE_SHIFT: f64 = std::f64::consts::FRAC_PI_4;

fn positive_scale(shift_scale: Option<f64>, default: f64) -> Result<f64, ShiftError> {
    let s = shift_scale.unwrap_or(default);
    if s.is_finite() && s > 0.0 {
        Ok(s)
    } else {
        Err(ShiftError::InvalidShiftScale(s))
    }
}

/// Returns the exact shift rule for one parameter and one operator block.
///
/// `shift_scale` overrides the shift distance; `None` uses 0.1 for the
/// squeeze and amplitude rules, π/2 for linear angle rules, and π/4 for
/// quadratic angle rules. Angle rules additionally reject shifts whose
/// trigonometric weights degenerate (sin 2s = 0 or cos s = 0).
pub fn shift_rule_for(
    param: ShiftParam,
    block: OperatorBlock,
    shift_scale: Option<f64>,
) -> Result<ShiftRule, ShiftError> {
    let shifts = match (param, block) {
        (ShiftParam::SqueezeStrength, OperatorBlock::Linear) => {
            let s = positive_scale(shift_scale, DEFAULT_SQUEEZE_SHIFT)?;
            let w = 1.0 / (2.0 * s.sinh());
            vec![(s, w), (-s, -w)]
        }
        (ShiftParam::SqueezeStrength, OperatorBlock::Quadratic) => {
            let s = positive_scale(shift_scale, DEFAULT_SQUEEZE_SHIFT)?;
            let w = 1.0 / (2.0 * s).sinh();
            vec![(s, w), (-s, -w)]
        }
        // Displacement matrix entries are polynomials of degree ≤ 2 in the
        // amplitude, so the symmetric difference is exact on both blocks.
        (ShiftParam::DisplaceAmplitude, _) => {
            let s = positive_scale(shift_scale, DEFAULT_SQUEEZE_SHIFT)?;
            let w = 1.0 / (2.0 * s);
            vec![(s, w), (-s, -w)]
        }
        (ShiftParam::DisplaceAngle | ShiftParam::RotationAngle, OperatorBlock::Linear) => {
            let s = positive_scale(shift_scale, DEFAULT_LINEAR_ANGLE_SHIFT)?;
            if s.sin().abs() < 1e-12 {
                return Err(ShiftError::InvalidShiftScale(s));
            }
            let w = 1.0 / (2.0 * s.sin());
            vec![(s, w), (-s, -w)]
        }
        (ShiftParam::RotationAngle, OperatorBlock::Quadratic) => {
            let s = positive_scale(shift_scale, DEFAULT_QUADRATIC_ANGLE_SHIFT)?;
            if (2.0 * s).sin().abs() < 1e-12 {
                return Err(ShiftError::InvalidShiftScale(s));
            }
            let w = 1.0 / (2.0 * s).sin();
            vec![(s, w), (-s, -w)]
        }
        // The quadratic displacement rows mix double-angle terms (handled
        // exactly by the ±s pair) with single-angle terms, which the ±s
        // pair over-weights by 1/cos s; the ±π/2 pair touches only the
        // single-angle terms and removes the excess.
        (ShiftParam::DisplaceAngle, OperatorBlock::Quadratic) => {
            let s = positive_scale(shift_scale, DEFAULT_QUADRATIC_ANGLE_SHIFT)?;
            if (2.0 * s).sin().abs() < 1e-12 || s.cos().abs() < 1e-12 {
                return Err(ShiftError::InvalidShiftScale(s));
            }
            let w = 1.0 / (2.0 * s).sin();
            let correction = 0.5 * (1.0 - 1.0 / s.cos());
            vec![
                (s, w),
                (-s, -w),
                (DEFAULT_LINEAR_ANGLE_SHIFT, correction),
                (-DEFAULT_LINEAR_ANGLE_SHIFT, -correction),
            ]
        }
    };
    Ok(ShiftRule { param, block, shifts })
}

fn max_abs_row_diff(
    a: &OperatorBasisMatrix,
    b: &OperatorBasisMatrix,
    rows: std::ops::Range<usize>,
) -> f64 {
    let mut worst: f64 = 0.0;
    for r in rows {
        for c in 0..7 {
            worst = worst.max((a[(r, c)] - b[(r, c)]).abs());
        }
    }
    worst
}

/// Derivative of the quadratic rows via the product rule: each quadratic
/// basis element is a product of two linear ones, G[AB] = G[A]G[B], so
/// ∂G[AB] = ∂G[A]·G[B] + G[A]·∂G[B] with the linear derivatives taken from
/// the linear shift rule. Linear rows come from the linear rule directly.
/// Independent of the quadratic shift rules; serves as their fallback and
/// as an oracle.
pub fn derivative_via_product_rule(
    gate: Gate,
    param: ShiftParam,
    shift_scale: Option<f64>,
) -> Result<OperatorBasisMatrix, ShiftError> {
    let linear_rule = shift_rule_for(param, OperatorBlock::Linear, shift_scale)?;
    let d_linear = linear_rule.evaluate(gate)?;
    let m = gate_matrix(gate)?;

    let row_op = |mat: &OperatorBasisMatrix, row: usize| OperatorVector(mat.row(row).transpose());
    let mut d = OperatorBasisMatrix::zeros();
    d.row_mut(idx::X).copy_from(&d_linear.row(idx::X));
    d.row_mut(idx::P).copy_from(&d_linear.row(idx::P));
    for (quad_row, a, b) in [
        (idx::XX, idx::X, idx::X),
        (idx::PP, idx::P, idx::P),
        (idx::XP, idx::X, idx::P),
        (idx::PX, idx::P, idx::X),
    ] {
        let left = operator_product(&row_op(&d_linear, a), &row_op(&m, b))?;
        let right = operator_product(&row_op(&m, a), &row_op(&d_linear, b))?;
        d.row_mut(quad_row).copy_from(&(left.0 + right.0).transpose());
    }
    Ok(d)
}

/// Tolerance for accepting the four-shift displacement-angle rule before
/// falling back to the product-rule construction.
const ANGLE_RULE_VALIDATION_TOL: f64 = 1e-9;

/// Differentiates the gate action on an operator with respect to `param`,
/// using only shifted evaluations of the gate matrix: linear rows from the
/// linear rule, quadratic rows from the quadratic rule. Returns ∂(M_Gᵀ c).
pub fn shifted_derivative(
    op: &OperatorVector,
    gate: Gate,
    param: ShiftParam,
    shift_scale: Option<f64>,
) -> Result<OperatorVector, ShiftError> {
    let linear = shift_rule_for(param, OperatorBlock::Linear, shift_scale)?.evaluate(gate)?;
    let quad_rule = shift_rule_for(param, OperatorBlock::Quadratic, shift_scale)?;
    let mut quad = quad_rule.evaluate(gate)?;

    if param == ShiftParam::DisplaceAngle {
        // The four-shift rule is exact in exact arithmetic; guard against a
        // degenerate shift choice and fall back to the product rule.
        let oracle = gate_matrix_derivative(gate, param)?;
        let scale = 1.0 + oracle.amax();
        if max_abs_row_diff(&quad, &oracle, idx::XX..7) > ANGLE_RULE_VALIDATION_TOL * scale {
            quad = derivative_via_product_rule(gate, param, shift_scale)?;
        }
    }

    let mut d = OperatorBasisMatrix::zeros();
    for row in idx::IDENT..=idx::P {
        d.row_mut(row).copy_from(&linear.row(row));
    }
    for row in idx::XX..7 {
        d.row_mut(row).copy_from(&quad.row(row));
    }
    Ok(OperatorVector(d.transpose() * op.0))
}
