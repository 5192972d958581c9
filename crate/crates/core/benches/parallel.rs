use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rotor_shell::energy::Material;
use rotor_shell::field::evaluate_field;
use rotor_shell::par::Execution;
use rotor_shell::scenario::{stereo_pattern, synthetic_tracks, tube_deformation, StereoSynthetic, TracksReplay, TubeSquashScenario};
use rotor_shell::stereo::{mexican_hat_response, render_synthetic, Camera, RenderOptions};
use rotor_shell::surface::Grid;
use rotor_shell::ga3::Vec3;
use rotor_shell::tracks::{fit_tracks, FitOptions};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn field(c: &mut Criterion) {
    let tube = TubeSquashScenario::default();
    let def = tube_deformation(&tube);
    let grid = Grid::new(def.domain(), [50, 50]);
    let m = Material::latex();
    let mut g = c.benchmark_group("tube_field_50x50");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| evaluate_field(&def, &grid, &m, exec).unwrap()));
    }
    g.finish();
}

fn convolution(c: &mut Criterion) {
    let s = StereoSynthetic::default();
    let cams = Camera::replica_pair(Vec3::new(0.0, 0.0, 12.5));
    let opts = RenderOptions { normal_side: -1.0, ..Default::default() };
    let image = render_synthetic([&cams[0], &cams[1]], &s.tube.chart(), &stereo_pattern(&s), &opts, Execution::Parallel)
        .unwrap()[0]
        .image
        .clone();
    let mut g = c.benchmark_group("mexican_hat_512x256");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| mexican_hat_response(&image, 2.5, exec).unwrap()));
    }
    g.finish();
}

fn track_fits(c: &mut Criterion) {
    let s = TracksReplay { rows: 2, ..Default::default() };
    let tracks: Vec<_> = synthetic_tracks(&s).into_iter().take(8).collect();
    let opts = FitOptions::default();
    let mut g = c.benchmark_group("fit_8_tracks");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| fit_tracks(&tracks, &opts, exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, field, convolution, track_fits);
criterion_main!(benches);
