//! Koiter shell energy densities and closed-form scaling estimates for a
//! pre-stretched, partially collapsed tube.
//!
//! Units throughout: lengths in mm, moduli in N/mm² (MPa), energy densities
//! per unit reference area in N/mm.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::surface::Tensor2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("Young's modulus must be positive, got {0}")]
    Modulus(f64),
    #[error("Poisson ratio must lie in (-1, 0.5], got {0}")]
    Poisson(f64),
    #[error("thickness must be positive, got {0}")]
    Thickness(f64),
    #[error("invalid scaling parameter: {0}")]
    Scaling(&'static str),
}

/// Slack allowed above the incompressible limit ν = 0.5.
pub const POISSON_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Material {
    /// Young's modulus [N/mm²].
    pub youngs_modulus: f64,
    /// Poisson ratio [-].
    pub poisson: f64,
    /// Shell thickness [mm].
    pub thickness: f64,
}

impl Material {
    pub fn new(youngs_modulus: f64, poisson: f64, thickness: f64) -> Result<Self, EnergyError> {
        let m = Self { youngs_modulus, poisson, thickness };
        m.validate()?;
        Ok(m)
    }

    /// Latex tube wall: 1 MPa, ν = 0.5, 0.3 mm.
    pub fn latex() -> Self {
        Self { youngs_modulus: 1.0, poisson: 0.5, thickness: 0.3 }
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        if !(self.youngs_modulus > 0.0) {
            return Err(EnergyError::Modulus(self.youngs_modulus));
        }
        if !(self.poisson > -1.0 && self.poisson <= 0.5 + POISSON_TOLERANCE) {
            return Err(EnergyError::Poisson(self.poisson));
        }
        if !(self.thickness > 0.0) {
            return Err(EnergyError::Thickness(self.thickness));
        }
        Ok(())
    }

    /// `Eh / (2(1 - ν²))` [N/mm].
    pub fn membrane_stiffness(&self) -> f64 {
        self.youngs_modulus * self.thickness / (2.0 * (1.0 - self.poisson * self.poisson))
    }

    /// `Eh³ / (24(1 - ν²))` [N·mm].
    pub fn bending_stiffness(&self) -> f64 {
        self.membrane_stiffness() * self.thickness * self.thickness / 12.0
    }
}

/// Energy per unit reference area, split into its two terms [N/mm].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyDensity {
    pub stretching: f64,
    pub bending: f64,
}

impl EnergyDensity {
    pub fn total(&self) -> f64 {
        self.stretching + self.bending
    }
}

/// `(tr T², (tr T)²)` of a 2×2 tensor, symmetrising first.
pub fn trace_invariants(t: &Tensor2) -> (f64, f64) {
    let off = 0.5 * (t[(0, 1)] + t[(1, 0)]);
    let (a, d) = (t[(0, 0)], t[(1, 1)]);
    (a * a + d * d + 2.0 * off * off, (a + d) * (a + d))
}

/// `(1 - ν) tr T² + ν (tr T)²`.
fn weighted(m: &Material, (tr_sq, sq_tr): (f64, f64)) -> f64 {
    (1.0 - m.poisson) * tr_sq + m.poisson * sq_tr
}

/// Energy densities from invariants, for callers that only have scalings.
pub fn density_from_invariants(e: (f64, f64), h: (f64, f64), m: &Material) -> EnergyDensity {
    EnergyDensity {
        stretching: m.membrane_stiffness() * weighted(m, e),
        bending: m.bending_stiffness() * weighted(m, h),
    }
}

/// Koiter density for strain `E` (dimensionless) and change of curvature
/// `H` [1/mm], both in reference orthonormal components.
pub fn koiter_density(e: &Tensor2, h: &Tensor2, m: &Material) -> Result<EnergyDensity, EnergyError> {
    m.validate()?;
    Ok(density_from_invariants(trace_invariants(e), trace_invariants(h), m))
}

/// Geometry and pre-stretch of the tube.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    /// Tube radius `a` [mm].
    pub radius: f64,
    /// Unstrained length `l₀` [mm].
    pub unstrained_length: f64,
    /// Axial stretch `λ = l/l₀`.
    pub stretch: f64,
    pub material: Material,
}

impl ScalingParams {
    /// Strained length `l = λ l₀` [mm].
    pub fn strained_length(&self) -> f64 {
        self.stretch * self.unstrained_length
    }
}

/// Estimates rounded to one significant figure, as order-of-magnitude
/// statements are made.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OrderOfMagnitude {
    #[serde(rename = "trE2")]
    pub tr_e2: f64,
    #[serde(rename = "trH2")]
    pub tr_h2: f64,
    pub stretch_density: f64,
    pub bend_density: f64,
    pub ratio: f64,
    pub bend_to_stretch: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScalingReport {
    pub params: ScalingParams,
    /// Largest axial rotation `θ₁ ≈ a/(l₀/2)` [rad].
    pub theta1: f64,
    /// Set when `θ₁ > tan 30°`, where replacing arctan by its argument
    /// overestimates by more than about 10%.
    pub theta1_overestimated: bool,
    /// `∂₁θ₁ ≈ 4a/l₀²` [1/mm].
    pub d1_theta1: f64,
    /// `∂₁θ₂ = ∂₂θ₁ ≈ π/(2l₀)` [1/mm].
    pub d1_theta2: f64,
    /// `∂₂θ₂ ≈ 1/a` [1/mm].
    pub d2_theta2: f64,
    /// Size of the `e3` component of `∂₁e₁`, `a/(l₀/2)²` [1/mm].
    pub gamma_11: f64,
    /// Size of the `e3` component of `∂₂e₂`, `1/a` [1/mm].
    pub gamma_22: f64,
    /// `H` component estimates `[[H11, H12], [H21, H22]]` [1/mm].
    pub h_components: [[f64; 2]; 2],
    /// `tr E² ≈ (tr E)² ≈ (λ² - 1)²/4`.
    #[serde(rename = "trE2")]
    pub tr_e2: f64,
    #[serde(rename = "trE_sq")]
    pub tr_e_sq: f64,
    /// `tr H² ≈ (tr H)² ≈ 1/a²` [1/mm²].
    #[serde(rename = "trH2")]
    pub tr_h2: f64,
    #[serde(rename = "trH_sq")]
    pub tr_h_sq: f64,
    /// [N/mm]
    pub stretch_density: f64,
    /// [N/mm]
    pub bend_density: f64,
    /// Stretching over bending.
    pub ratio: f64,
    /// Bending over stretching, `h²/12 · [H terms]/[E terms]`.
    pub bend_to_stretch: f64,
    pub order_of_magnitude: OrderOfMagnitude,
}

/// Rounds to `digits` significant figures.
pub fn round_significant(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let p = digits - 1 - x.abs().log10().floor() as i32;
    let f = 10f64.powi(p);
    (x * f).round() / f
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        if num == 0.0 { f64::NAN } else { f64::INFINITY }
    } else {
        num / den
    }
}

pub fn scaling_estimates(p: &ScalingParams) -> Result<ScalingReport, EnergyError> {
    p.material.validate()?;
    let (a, l0, lambda) = (p.radius, p.unstrained_length, p.stretch);
    if !(a > 0.0) {
        return Err(EnergyError::Scaling("radius must be positive"));
    }
    if !(l0 > 0.0) {
        return Err(EnergyError::Scaling("unstrained length must be positive"));
    }
    if !(lambda > 0.0) {
        return Err(EnergyError::Scaling("stretch must be positive"));
    }
    let half = l0 / 2.0;
    let theta1 = a / half;
    let d1_theta1 = 4.0 * a / (l0 * l0);
    let d1_theta2 = std::f64::consts::PI / (2.0 * l0);
    let d2_theta2 = 1.0 / a;
    // Frame derivatives are mostly along e3, so H is dominated by ∂θ.
    let h_components = [[d1_theta1, d1_theta2], [d1_theta2, d2_theta2]];
    let tr_e2 = (lambda * lambda - 1.0).powi(2) / 4.0;
    let tr_h2 = 1.0 / (a * a);
    let m = &p.material;
    let d = density_from_invariants((tr_e2, tr_e2), (tr_h2, tr_h2), m);

    let om_e = round_significant(tr_e2, 1);
    let om_h = round_significant(tr_h2, 1);
    let om = density_from_invariants((om_e, om_e), (om_h, om_h), m);

    Ok(ScalingReport {
        params: *p,
        theta1,
        theta1_overestimated: theta1 > (30f64).to_radians().tan(),
        d1_theta1,
        d1_theta2,
        d2_theta2,
        gamma_11: a / (half * half),
        gamma_22: 1.0 / a,
        h_components,
        tr_e2,
        tr_e_sq: tr_e2,
        tr_h2,
        tr_h_sq: tr_h2,
        stretch_density: d.stretching,
        bend_density: d.bending,
        ratio: ratio(d.stretching, d.bending),
        bend_to_stretch: ratio(d.bending, d.stretching),
        order_of_magnitude: OrderOfMagnitude {
            tr_e2: om_e,
            tr_h2: om_h,
            stretch_density: om.stretching,
            bend_density: om.bending,
            ratio: ratio(om.stretching, om.bending),
            bend_to_stretch: ratio(om.bending, om.stretching),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tube(l0: f64) -> ScalingParams {
        ScalingParams { radius: 3.0, unstrained_length: l0, stretch: 25.0 / 19.0, material: Material::latex() }
    }

    #[test]
    fn trace_invariant_examples() {
        assert_eq!(trace_invariants(&Tensor2::identity()), (2.0, 4.0));
        assert_eq!(trace_invariants(&Tensor2::new(1.0, 0.0, 0.0, -1.0)), (2.0, 0.0));
        let (a, b) = trace_invariants(&Tensor2::new(0.345, 0.0, 0.0, 0.0));
        assert_relative_eq!(a, 0.119025, max_relative = 1e-12);
        assert_relative_eq!(b, 0.119025, max_relative = 1e-12);
    }

    #[test]
    fn densities_at_unit_scalings() {
        let m = Material::latex();
        let d = density_from_invariants((0.1, 0.1), (0.1, 0.1), &m);
        assert_relative_eq!(d.stretching, 0.02, max_relative = 1e-12);
        assert_relative_eq!(d.bending, 1.5e-4, max_relative = 1e-12);
        let zero = koiter_density(&Tensor2::zeros(), &Tensor2::zeros(), &m).unwrap();
        assert_eq!(zero, EnergyDensity::default());
        let pure_bend = koiter_density(&Tensor2::zeros(), &Tensor2::new(0.2, 0.0, 0.0, 0.0), &m).unwrap();
        assert_eq!(pure_bend.stretching, 0.0);
        assert!(pure_bend.bending > 0.0);
    }

    #[test]
    fn material_validation() {
        assert!(Material::new(1.0, 0.5, 0.3).is_ok());
        assert_eq!(Material::new(1.0, 1.0, 0.3), Err(EnergyError::Poisson(1.0)));
        assert_eq!(Material::new(1.0, -1.0, 0.3), Err(EnergyError::Poisson(-1.0)));
        assert_eq!(Material::new(0.0, 0.3, 0.3), Err(EnergyError::Modulus(0.0)));
        assert_eq!(Material::new(1.0, 0.3, -0.1), Err(EnergyError::Thickness(-0.1)));
    }

    #[test]
    fn tube_scalings() {
        let r = scaling_estimates(&tube(19.0)).unwrap();
        assert_relative_eq!(r.theta1, 6.0 / 19.0, max_relative = 1e-12);
        assert_relative_eq!(r.d2_theta2, 1.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(r.tr_h2, 1.0 / 9.0, max_relative = 1e-12);
        // (625/361 - 1)² / 4
        assert_relative_eq!(r.tr_e2, (264.0f64 / 361.0).powi(2) / 4.0, max_relative = 1e-12);
        assert_eq!(r.order_of_magnitude.tr_e2, 0.1);
        assert_eq!(r.order_of_magnitude.tr_h2, 0.1);
        assert_relative_eq!(r.order_of_magnitude.stretch_density, 0.02, max_relative = 1e-12);
        assert_relative_eq!(r.order_of_magnitude.bend_density, 1.5e-4, max_relative = 1e-12);
        assert!(!r.theta1_overestimated);
        assert_relative_eq!(r.bend_to_stretch * r.ratio, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn no_prestretch_means_no_stretching() {
        let r = scaling_estimates(&ScalingParams { stretch: 1.0, ..tube(19.0) }).unwrap();
        assert_eq!(r.tr_e2, 0.0);
        assert_eq!(r.stretch_density, 0.0);
        assert_eq!(r.ratio, 0.0);
    }

    #[test]
    fn short_tube_flags_theta() {
        let r = scaling_estimates(&tube(6.0)).unwrap();
        assert!(r.theta1_overestimated);
        for row in r.h_components {
            for h in row {
                assert!(h * 3.0 <= 4.0 && h * 3.0 >= 0.25);
            }
        }
    }

    #[test]
    fn significant_rounding() {
        assert_eq!(round_significant(0.1337, 1), 0.1);
        assert_eq!(round_significant(0.111, 1), 0.1);
        assert_eq!(round_significant(1.5e-4, 2), 1.5e-4);
        assert_eq!(round_significant(-27.0, 1), -30.0);
        assert_eq!(round_significant(0.0, 1), 0.0);
    }
}
