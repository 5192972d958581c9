//! Kinematics and energy sampled over a grid of convected coordinates.

use serde::Serialize;

use crate::energy::{density_from_invariants, trace_invariants, EnergyDensity, Material};
use crate::kinematics::{kinematic_state, rotor_field, Deformation, KinematicState, KinematicsError};
use crate::par::{self, Execution};
use crate::surface::Grid;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldPoint {
    pub state: KinematicState,
    pub energy: EnergyDensity,
    /// `(tr E², (tr E)²)`.
    pub strain_invariants: (f64, f64),
    /// `(tr H², (tr H)²)` of the classical `H`.
    pub curvature_invariants: (f64, f64),
    /// Reference area of the grid cell [mm²].
    pub cell_area: f64,
}

impl FieldPoint {
    /// Largest component difference between the two `H` routes [1/mm].
    pub fn route_difference(&self) -> f64 {
        (self.state.h_classical - self.state.h_rotor.total).amax()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FieldSummary {
    pub points: usize,
    /// Total reference area [mm²].
    pub area: f64,
    /// Area-integrated stretching energy [N·mm].
    pub stretching_energy: f64,
    /// Area-integrated bending energy [N·mm].
    pub bending_energy: f64,
    /// Area averages.
    #[serde(rename = "mean_trE2")]
    pub mean_tr_e2: f64,
    #[serde(rename = "mean_trE_sq")]
    pub mean_tr_e_sq: f64,
    #[serde(rename = "mean_trH2")]
    pub mean_tr_h2: f64,
    #[serde(rename = "mean_trH_sq")]
    pub mean_tr_h_sq: f64,
    pub mean_stretch_density: f64,
    pub mean_bend_density: f64,
    /// Largest `|H_classical - H_rotor|` component [1/mm].
    pub max_route_difference: f64,
    /// Largest `|H₁₂ - H₂₁|` of the rotor route [1/mm].
    pub max_h_asymmetry: f64,
    /// Largest rotation angle [rad].
    pub max_rotation: f64,
    /// Neighbour pairs where the rotor sign could not be continued.
    pub ambiguous_pairs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub grid: Grid,
    pub points: Vec<FieldPoint>,
    pub summary: FieldSummary,
}

pub fn evaluate_field(
    def: &Deformation,
    grid: &Grid,
    material: &Material,
    exec: Execution,
) -> Result<Field, KinematicsError> {
    let rotors = rotor_field(def, grid, exec)?;
    let coords = grid.points();
    let [h1, h2] = grid.spacing();
    let points: Vec<FieldPoint> = par::map_range(exec, coords.len(), |k| {
        let state = kinematic_state(def, coords[k], Some(rotors.rotors[k]))?;
        let e = trace_invariants(&state.strain);
        let h = trace_invariants(&state.h_classical);
        Ok(FieldPoint {
            energy: density_from_invariants(e, h, material),
            strain_invariants: e,
            curvature_invariants: h,
            cell_area: state.reference.frame.area_element() * h1 * h2,
            state,
        })
    })
    .into_iter()
    .collect::<Result<_, KinematicsError>>()?;
    let summary = summarise(&points, rotors.ambiguous.len());
    Ok(Field { grid: *grid, points, summary })
}

fn summarise(points: &[FieldPoint], ambiguous_pairs: usize) -> FieldSummary {
    let area: f64 = points.iter().map(|p| p.cell_area).sum();
    let integral = |f: &dyn Fn(&FieldPoint) -> f64| points.iter().map(|p| f(p) * p.cell_area).sum::<f64>();
    let mean = |f: &dyn Fn(&FieldPoint) -> f64| if area > 0.0 { integral(f) / area } else { 0.0 };
    let max = |f: &dyn Fn(&FieldPoint) -> f64| points.iter().map(f).fold(0.0, f64::max);
    FieldSummary {
        points: points.len(),
        area,
        stretching_energy: integral(&|p| p.energy.stretching),
        bending_energy: integral(&|p| p.energy.bending),
        mean_tr_e2: mean(&|p| p.strain_invariants.0),
        mean_tr_e_sq: mean(&|p| p.strain_invariants.1),
        mean_tr_h2: mean(&|p| p.curvature_invariants.0),
        mean_tr_h_sq: mean(&|p| p.curvature_invariants.1),
        mean_stretch_density: mean(&|p| p.energy.stretching),
        mean_bend_density: mean(&|p| p.energy.bending),
        max_route_difference: max(&|p| p.route_difference()),
        max_h_asymmetry: max(&|p| (p.state.h_rotor.total[(0, 1)] - p.state.h_rotor.total[(1, 0)]).abs()),
        max_rotation: max(&|p| p.state.polar.rotor.angle()),
        ambiguous_pairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{Cylinder, Sphere};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn cylinder_area_is_exact() {
        let def = Deformation::identity(Cylinder::new(3.0, 10.0));
        let grid = Grid::new(def.domain(), [4, 16]);
        let f = evaluate_field(&def, &grid, &Material::latex(), Execution::Sequential).unwrap();
        assert_relative_eq!(f.summary.area, 2.0 * PI * 3.0 * 10.0, max_relative = 1e-12);
        assert!(f.summary.stretching_energy < 1e-20);
        assert!(f.summary.bending_energy < 1e-20);
    }

    #[test]
    fn sphere_inflation_energy() {
        let def = Deformation::new(Sphere::new(3.0), Sphere::new(4.5));
        let grid = Grid::new(def.domain(), [6, 12]);
        let m = Material::latex();
        let seq = evaluate_field(&def, &grid, &m, Execution::Sequential).unwrap();
        let par = evaluate_field(&def, &grid, &m, Execution::Parallel).unwrap();
        assert_eq!(seq, par);
        // E = ½(λ² - 1) G with λ = 1.5, so tr E² = 2 (0.625)².
        assert_relative_eq!(seq.summary.mean_tr_e2, 2.0 * 0.625f64.powi(2), max_relative = 1e-12);
        assert_relative_eq!(seq.summary.mean_tr_h2, 2.0 * (1.5f64 / 9.0).powi(2), max_relative = 1e-10);
    }
}
