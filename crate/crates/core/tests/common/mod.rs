//! Property checks shared by the proptest suites and the acceptance run.

#![allow(dead_code)]

use std::f64::consts::PI;

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rotor_shell::energy::{koiter_density, trace_invariants, Material};
use rotor_shell::ga3::{Bivector, Multivector, Rotor, Vec3};
use rotor_shell::kinematics::{
    curvature_change_classical, curvature_change_rotor, deformation_gradient, polar_decompose, Deformation,
};
use rotor_shell::surface::{
    local_geometry, principal_decomposition, Chart, Coords, Cylinder, FiniteDifferenceChart, Perturbation,
    PerturbedChart, Sphere, Tensor2,
};

pub type Check = Result<(), TestCaseError>;

pub fn vec3(scale: f64) -> impl Strategy<Value = Vec3> {
    [-scale..scale, -scale..scale, -scale..scale].prop_map(|[x, y, z]| Vec3::new(x, y, z))
}

pub fn multivector() -> impl Strategy<Value = Multivector> {
    proptest::array::uniform8(-2.0..2.0f64).prop_map(Multivector::new)
}

/// Rotation vectors with angle below `max_angle`.
pub fn rotation_vector(max_angle: f64) -> impl Strategy<Value = Vec3> {
    (vec3(1.0), 0.0..max_angle).prop_map(|(v, a)| if v.norm() < 1e-3 { Vec3::new(a, 0.0, 0.0) } else { v.normalize() * a })
}

pub fn symmetric_tensor(scale: f64) -> impl Strategy<Value = Tensor2> {
    [-scale..scale, -scale..scale, -scale..scale].prop_map(|[a, b, d]| Tensor2::new(a, b, b, d))
}

pub fn material() -> impl Strategy<Value = Material> {
    (0.01..100.0f64, -0.99..0.5f64, 0.01..2.0f64).prop_map(|(e, nu, h)| Material::new(e, nu, h).unwrap())
}

/// A few smooth displacement modes small enough to keep the map regular.
pub fn modes(amplitude: f64) -> impl Strategy<Value = Vec<Perturbation>> {
    proptest::collection::vec(
        (vec3(amplitude), [-1.0..1.0f64, -1.0..1.0f64], 0.0..2.0 * PI)
            .prop_map(|(amplitude, wavenumber, phase)| Perturbation { amplitude, wavenumber, phase }),
        1..=3,
    )
}

/// Perturbed inflation of a sphere band, or a perturbed stretched cylinder.
#[derive(Clone, Debug)]
pub struct RandomDeformation {
    pub sphere: bool,
    pub scale: f64,
    pub modes: Vec<Perturbation>,
    /// Point inside the domain, as fractions of the spans.
    pub at: [f64; 2],
}

impl RandomDeformation {
    pub fn build(&self) -> Deformation {
        if self.sphere {
            let band = (0.3 * PI, 0.7 * PI);
            let reference = Sphere::new(3.0).with_colatitude(band.0, band.1);
            let spatial = PerturbedChart::new(Sphere::new(3.0 * self.scale).with_colatitude(band.0, band.1), self.modes.clone());
            Deformation::new(reference, spatial)
        } else {
            let spatial = PerturbedChart::new(
                rotor_shell::surface::TubeSquash::new(3.0, 19.0, self.scale, 0.0),
                self.modes.clone(),
            );
            Deformation::new(Cylinder::new(3.0, 19.0), spatial)
        }
    }

    pub fn coords(&self, def: &Deformation) -> Coords {
        let d = def.domain();
        [0, 1].map(|k| d.min[k] + (0.1 + 0.8 * self.at[k]) * d.span(k))
    }

    /// Characteristic radius of the reference surface [mm].
    pub fn radius(&self) -> f64 {
        3.0
    }
}

pub fn deformation() -> impl Strategy<Value = RandomDeformation> {
    (any::<bool>(), 0.8..1.5f64, modes(0.25), [0.0..1.0f64, 0.0..1.0f64])
        .prop_map(|(sphere, scale, modes, at)| RandomDeformation { sphere, scale, modes, at })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

pub fn ga_identities((a, b, c): (Multivector, Multivector, Multivector)) -> Check {
    let left = (a * b) * c;
    let right = a * (b * c);
    prop_assert!((left - right).max_abs() <= 1e-12 * (1.0 + left.max_abs()), "associativity");
    let dist = a * (b + c) - (a * b + a * c);
    prop_assert!(dist.max_abs() <= 1e-12 * (1.0 + (a * b).max_abs() + (a * c).max_abs()), "distributivity");
    let rev = (a * b).reverse() - b.reverse() * a.reverse();
    prop_assert!(rev.max_abs() <= 1e-12 * (1.0 + (a * b).max_abs()), "reverse of a product");
    // For vectors, uv = u·v + u∧v and uu = |u|².
    let (u, v) = (a.grade(1), b.grade(1));
    let split = u * v - (u.inner(&v) + u.outer(&v));
    prop_assert!(split.max_abs() <= 1e-12 * (1.0 + (u * v).max_abs()), "vector product split");
    let sq = u * u;
    prop_assert!(close(sq.scalar_part(), u.vector_part().norm_squared(), 1e-12));
    prop_assert!(sq.grade(2).max_abs() <= 1e-12 * (1.0 + sq.scalar_part()));
    Ok(())
}

pub fn rotor_round_trip((a, x): (Vec3, Vec3)) -> Check {
    let biv = Bivector::from_axis(&a);
    let r = Rotor::exp(&biv);
    prop_assert!(close(r.norm(), 1.0, 1e-12), "unit rotor");
    let back = r.log().bivector;
    prop_assert!((back.axis() - a).norm() <= 1e-9 * (1.0 + a.norm()), "log(exp(A)) = A: {:?} vs {:?}", back.axis(), a);
    let m = r.to_matrix();
    prop_assert!((r.apply(&x) - m * x).norm() <= 1e-12 * (1.0 + x.norm()), "sandwich vs matrix");
    prop_assert!(close(r.apply(&x).norm(), x.norm(), 1e-12), "length preserved");
    let from = Rotor::from_matrix(&m);
    prop_assert!(from.correlation(&r).abs() >= 1.0 - 1e-12, "matrix round trip");
    Ok(())
}

pub fn polar_reconstruction(d: RandomDeformation) -> Check {
    let def = d.build();
    let c = d.coords(&def);
    let f = deformation_gradient(&def, c).map_err(fail)?;
    let p = polar_decompose(&f).map_err(fail)?;
    prop_assert!(p.reconstruction_error(&f) < 1e-9, "F = RU error {}", p.reconstruction_error(&f));
    let s = p.stretch;
    prop_assert!((s[(0, 1)] - s[(1, 0)]).abs() < 1e-12 && principal_decomposition(&s).values[1] > 0.0);
    Ok(())
}

pub fn h_symmetry(d: RandomDeformation) -> Check {
    let def = d.build();
    let c = d.coords(&def);
    let h = curvature_change_rotor(&def, c).map_err(fail)?.total;
    prop_assert!((h[(0, 1)] - h[(1, 0)]).abs() < 1e-6, "asymmetry {}", (h[(0, 1)] - h[(1, 0)]).abs());
    Ok(())
}

pub fn route_equivalence(d: RandomDeformation) -> Check {
    let def = d.build();
    let c = d.coords(&def);
    let rotor = curvature_change_rotor(&def, c).map_err(fail)?.total;
    let classical = curvature_change_classical(&def, c).map_err(fail)?;
    let tol = 1e-4 * classical.amax().max(1.0 / d.radius());
    prop_assert!((rotor - classical).amax() < tol, "routes differ by {}", (rotor - classical).amax());
    Ok(())
}

pub fn adjoint_maps_reciprocals(d: RandomDeformation) -> Check {
    let def = d.build();
    let c = d.coords(&def);
    let (r, s) = def.geometry(c).map_err(fail)?;
    let f = deformation_gradient(&def, c).map_err(fail)?;
    for i in 0..2 {
        let got = f.adjoint(&s.frame.reciprocal[i]);
        let want = r.frame.reciprocal[i];
        prop_assert!((got - want).norm() < 1e-9 * (1.0 + want.norm()), "F̄(eⁱ) - Eⁱ = {}", (got - want).norm());
    }
    Ok(())
}

pub fn trace_identities(t: Tensor2) -> Check {
    let (tr_sq, sq_tr) = trace_invariants(&t);
    prop_assert_eq!(tr_sq, t[(0, 0)] * t[(0, 0)] + t[(1, 1)] * t[(1, 1)] + 2.0 * t[(0, 1)] * t[(0, 1)]);
    prop_assert_eq!(sq_tr, t.trace() * t.trace());
    let p = principal_decomposition(&t).values;
    prop_assert!(close(tr_sq, p[0] * p[0] + p[1] * p[1], 1e-12));
    prop_assert!(close(sq_tr - tr_sq, 2.0 * t.determinant(), 1e-12));
    prop_assert!(close(tr_sq, (t * t).trace(), 1e-12));
    Ok(())
}

pub fn energy_non_negative((e, h, m): (Tensor2, Tensor2, Material)) -> Check {
    let d = koiter_density(&e, &h, &m).map_err(fail)?;
    prop_assert!(d.stretching >= 0.0 && d.bending >= 0.0, "{d:?}");
    Ok(())
}

/// Finite-difference derivatives of a perturbed cylinder against its
/// analytic ones, and the curvature tensors built from each.
pub fn derivative_cross_check((modes, at): (Vec<Perturbation>, [f64; 2])) -> Check {
    let analytic = PerturbedChart::new(Cylinder::new(3.0, 19.0), modes);
    let domain = analytic.domain();
    let fd = FiniteDifferenceChart::new(|c| analytic.position(c), domain);
    let c = [0, 1].map(|k| domain.min[k] + (0.1 + 0.8 * at[k]) * domain.span(k));
    let (a, n) = (analytic.derivatives(c), fd.derivatives(c));
    for i in 0..2 {
        let rel = (a.first[i] - n.first[i]).norm() / a.first[i].norm();
        prop_assert!(rel < 1e-5, "first derivative {i}: {rel}");
    }
    let scale = a.second.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max);
    for (ra, rn) in a.second.iter().zip(&n.second) {
        for (x, y) in ra.iter().zip(rn) {
            prop_assert!((x - y).norm() / scale < 1e-5, "second derivative: {}", (x - y).norm() / scale);
        }
    }
    let ka = local_geometry(&analytic, c).map_err(fail)?.curvature();
    let kn = local_geometry(&fd, c).map_err(fail)?.curvature();
    prop_assert!((ka - kn).amax() / ka.amax() < 1e-5, "curvature: {}", (ka - kn).amax() / ka.amax());
    Ok(())
}

fn fail(e: impl std::fmt::Display) -> TestCaseError {
    TestCaseError::fail(e.to_string())
}
