use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use zermelo_core::fields::{gradient_field_via, GradientRoute, ScalarFieldSpec};
use zermelo_core::scenario::builtin;
use zermelo_core::volume::{bh_density_quadrature, ht_density_radial};
use zermelo_core::{Point, Vector};

fn metric(c: &mut Criterion) {
    let funk = builtin("funk_n2").unwrap().build().unwrap();
    let funk3 = builtin("funk_n3").unwrap().build().unwrap();
    let p = Point::from_column_slice(&[0.3, -0.2]);
    let v = Vector::from_column_slice(&[0.4, 1.0]);
    let f = ScalarFieldSpec::norm(2);

    c.bench_function("zermelo_eval_n2", |b| b.iter(|| funk.metric.eval(black_box(&p), black_box(&v)).unwrap()));
    c.bench_function("gradient_native_n2", |b| {
        b.iter(|| gradient_field_via(&funk.metric, &f, black_box(&p), GradientRoute::Native).unwrap())
    });
    c.bench_function("gradient_legendre_n2", |b| {
        b.iter(|| gradient_field_via(&funk.metric, &f, black_box(&p), GradientRoute::Legendre).unwrap())
    });
    c.bench_function("bh_quadrature_n2", |b| b.iter(|| bh_density_quadrature(&funk.metric, black_box(&p)).unwrap()));
    let p3 = Point::from_column_slice(&[0.3, -0.2, 0.1]);
    c.bench_function("bh_quadrature_n3", |b| b.iter(|| bh_density_quadrature(&funk3.metric, black_box(&p3)).unwrap()));
    c.bench_function("ht_radial_n2_20k", |b| b.iter(|| ht_density_radial(&funk.metric, black_box(&p), 20_000, 1).unwrap()));
}

criterion_group!(benches, metric);
criterion_main!(benches);
