use std::sync::Arc;

use rotor_shell::ga3::Vec3;
use rotor_shell::kinematics::{kinematic_state, Deformation};
use rotor_shell::par::Execution;
use rotor_shell::scenario::{run, run_stereo_pipeline, Scenario, StereoSynthetic, TracksReplay};
use rotor_shell::surface::{principal_decomposition, Coords};
use rotor_shell::tracks::fit_surface;

/// Spatial positions of a total-degree-4 polynomial shell over a flat patch.
fn quartic(c: Coords) -> Vec3 {
    let (x, y) = (c[0], c[1]);
    Vec3::new(
        1.1 * x + 0.05 * x * y - 0.002 * x.powi(3) * y,
        0.9 * y + 0.03 * x * x - 0.001 * x * x * y * y,
        0.08 * x * x + 0.05 * y * y - 0.01 * x * y + 0.0005 * x.powi(4) + 0.0004 * y.powi(4),
    )
}

fn fitted(labels: &dyn Fn(Coords) -> Coords) -> Deformation {
    let mut reference = Vec::new();
    let mut spatial = Vec::new();
    for i in 0..9 {
        for j in 0..9 {
            let x = [i as f64 * 0.5, j as f64 * 0.5];
            reference.push((labels(x), Vec3::new(x[0], x[1], 0.0)));
            spatial.push((labels(x), quartic(x)));
        }
    }
    let r = fit_surface(&reference, [4, 4]).unwrap();
    let s = fit_surface(&spatial, [4, 4]).unwrap();
    assert!(r.residual_rms < 1e-10 && s.residual_rms < 1e-10);
    Deformation::from_arcs(Arc::new(r), Arc::new(s))
}

#[test]
fn affine_relabelling_leaves_invariants_unchanged() {
    let identity = fitted(&|x| x);
    let affine = |x: Coords| [0.8 * x[0] + 0.3 * x[1] + 2.0, -0.4 * x[0] + 1.2 * x[1] - 1.0];
    let relabelled = fitted(&affine);
    for x in [[1.0, 1.5], [2.0, 2.0], [3.1, 0.7], [1.7, 3.3]] {
        let a = kinematic_state(&identity, x, None).unwrap();
        let b = kinematic_state(&relabelled, affine(x), None).unwrap();
        for (ta, tb) in [(a.strain, b.strain), (a.h_classical, b.h_classical), (a.h_rotor.total, b.h_rotor.total)] {
            let (pa, pb) = (principal_decomposition(&ta).values, principal_decomposition(&tb).values);
            for k in 0..2 {
                assert!((pa[k] - pb[k]).abs() < 1e-7, "{x:?}: {pa:?} vs {pb:?}");
            }
        }
        assert!((a.polar.rotor.angle() - b.polar.rotor.angle()).abs() < 1e-8);
    }
}

#[test]
fn stereo_pipeline_recovers_dots() {
    let run = run_stereo_pipeline(&StereoSynthetic::default(), Execution::Parallel).unwrap();
    let s = run.summary;
    assert_eq!(s.pairing_accuracy, 1.0);
    assert_eq!(s.pairs, s.visible_both);
    assert!(s.rms_error < 0.05, "{s:?}");

    let noisy = StereoSynthetic { pixel_noise: 0.2, seed: 3, ..Default::default() };
    let s = run_stereo_pipeline(&noisy, Execution::Parallel).unwrap().summary;
    assert_eq!(s.pairing_accuracy, 1.0);
    assert!(s.rms_error < 0.15, "{s:?}");
}

#[test]
fn tracks_replay_converges_on_exact_data() {
    let exact = TracksReplay { quantise_mm: 0.0, rows: 7, degree: [6, 6], ..Default::default() };
    let mut exact = exact;
    exact.tube.grid = [12, 12];
    let out = run(&Scenario::TracksReplay(exact), Execution::Parallel).unwrap();
    let err = out.summary["checks"]["strain_relative_error"].as_f64().unwrap();
    assert!(err < 0.03, "{err}");
    assert!(out.summary["checks"]["max_fit_residual"].as_f64().unwrap() < 1e-9);
}

#[test]
fn tracks_replay_with_quantised_samples() {
    let mut s = TracksReplay::default();
    s.tube.grid = [12, 12];
    let out = run(&Scenario::TracksReplay(s), Execution::Parallel).unwrap();
    let checks = &out.summary["checks"];
    // Quantisation to 0.1 mm leaves about 0.03 mm of residual per coordinate.
    assert!(checks["max_fit_residual"].as_f64().unwrap() < 0.06);
    assert!(checks["interior_strain_relative_error"].as_f64().unwrap() < 0.15);
}
