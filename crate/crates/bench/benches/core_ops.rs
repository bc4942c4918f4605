use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use num_complex::Complex64;

use qstrat_core::dir_min::{discrete_energy, iterate_once};
use qstrat_core::frequency::{geometric_radii, radial_profile};
use qstrat_core::minkowski::tubular_volume;
use qstrat_core::{
    g_distance, make_branch_field, vitali_cover, BallSpec, GridSpec, QField, QPoint, Window,
};

fn qpoint(q: usize, shift: f64) -> QPoint {
    QPoint::new(
        (0..q)
            .map(|i| {
                vec![
                    (i as f64 * 1.7 + shift).sin(),
                    (i as f64 * 0.9 - shift).cos(),
                ]
            })
            .collect(),
    )
    .unwrap()
}

fn branch(nodes: usize) -> QField {
    let g = GridSpec::cube(2, -1.0, 1.0, nodes).unwrap();
    make_branch_field(2, 1, Complex64::new(1.0, 0.0), g).unwrap()
}

fn spiral(count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|i| {
            let t = i as f64 * 0.37;
            let r = 0.9 * (i as f64 / count as f64).sqrt();
            vec![r * t.cos(), r * t.sin()]
        })
        .collect()
}

fn metric(c: &mut Criterion) {
    let mut group = c.benchmark_group("g_distance");
    for q in [2, 4, 6, 8, 16] {
        let (a, b) = (qpoint(q, 0.0), qpoint(q, 0.4));
        group.bench_with_input(BenchmarkId::from_parameter(q), &q, |bch, _| {
            bch.iter(|| g_distance(black_box(&a), black_box(&b)))
        });
    }
    group.finish();
}

fn solver(c: &mut Criterion) {
    let f = branch(65);
    c.bench_function("discrete_energy/65", |b| {
        b.iter(|| discrete_energy(black_box(&f)))
    });
    let boundary = f
        .clone()
        .with_ball_domain(&BallSpec::at_origin(2, 1.0))
        .unwrap();
    c.bench_function("sweep/65", |b| {
        b.iter(|| iterate_once(black_box(&boundary)).unwrap())
    });
}

fn frequency(c: &mut Criterion) {
    let f = branch(129);
    let radii = geometric_radii(0.05, 0.8, 12).unwrap();
    c.bench_function("radial_profile/129", |b| {
        b.iter(|| radial_profile(black_box(&f), &[0.0, 0.0], &radii).unwrap())
    });
}

fn covering(c: &mut Criterion) {
    let pts = spiral(2000);
    c.bench_function("vitali_cover/2000", |b| {
        b.iter(|| vitali_cover(black_box(&pts), 0.05).unwrap())
    });
    let w = Window::cube(2, -1.0, 1.0).unwrap();
    c.bench_function("tubular_volume/2000", |b| {
        b.iter(|| tubular_volume(black_box(&pts), 0.02, &w, 0.002).unwrap())
    });
}

criterion_group!(benches, metric, solver, frequency, covering);
criterion_main!(benches);
