mod common;

use common::*;
use proptest::prelude::*;

proptest! {
    #[test]
    fn geometric_product_identities(v in (multivector(), multivector(), multivector())) {
        ga_identities(v)?;
    }

    #[test]
    fn rotor_exp_log_round_trip(v in (rotation_vector(3.1), vec3(10.0))) {
        rotor_round_trip(v)?;
    }

    #[test]
    fn polar_decomposition_reconstructs(d in deformation()) {
        polar_reconstruction(d)?;
    }

    #[test]
    fn rotor_route_h_is_symmetric(d in deformation()) {
        h_symmetry(d)?;
    }

    #[test]
    fn adjoint_carries_spatial_to_reference_reciprocals(d in deformation()) {
        adjoint_maps_reciprocals(d)?;
    }

    #[test]
    fn trace_invariants_match_eigenvalues(t in symmetric_tensor(5.0)) {
        trace_identities(t)?;
    }

    #[test]
    fn koiter_density_is_non_negative(v in (symmetric_tensor(2.0), symmetric_tensor(2.0), material())) {
        energy_non_negative(v)?;
    }

    #[test]
    fn finite_differences_match_analytic_derivatives(v in (modes(0.3), [0.0..1.0f64, 0.0..1.0f64])) {
        derivative_cross_check(v)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn curvature_routes_agree_on_random_deformations(d in deformation()) {
        route_equivalence(d)?;
    }
}
