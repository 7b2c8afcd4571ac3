use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use cyberdyn::analysis::{bound_envelope, BoundConfig};
use cyberdyn::integrate::{integrate, random_initial, IntegrateOptions};
use cyberdyn::presets::{Preset, DEFAULT_SEED};
use cyberdyn::spectral::{mle, Linearization, MleOptions};

fn drift(c: &mut Criterion) {
    let mut group = c.benchmark_group("drift");
    for name in ["p2", "p3"] {
        let preset = Preset::single(name, DEFAULT_SEED).unwrap();
        let bundle = preset.desk_bundle(DEFAULT_SEED).unwrap();
        let state = random_initial(bundle.node_count(), 0.5, 1).unwrap();
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| preset.model.drift_at(black_box(&state), &bundle, black_box(3.7)))
        });
    }
    group.finish();
}

fn trajectory(c: &mut Criterion) {
    let preset = Preset::single("p2", DEFAULT_SEED).unwrap();
    let bundle = preset.desk_bundle(DEFAULT_SEED).unwrap();
    let i0 = random_initial(bundle.node_count(), 0.5, 1).unwrap();
    let opts = IntegrateOptions::new(20.0);
    c.bench_function("integrate/p2_t20", |b| {
        b.iter(|| integrate(&preset.model, &bundle, &i0, &opts).unwrap())
    });
}

fn exponent(c: &mut Criterion) {
    let preset = Preset::single("p2", DEFAULT_SEED).unwrap();
    let bundle = preset.desk_bundle(DEFAULT_SEED).unwrap();
    let opts = MleOptions::new(50.0);
    c.bench_function("mle/p2_t50", |b| {
        b.iter(|| {
            let mut system = Linearization::new(&preset.model, &bundle);
            mle(&mut system, &opts).unwrap()
        })
    });
}

fn envelope(c: &mut Criterion) {
    let preset = Preset::single("p7", DEFAULT_SEED).unwrap();
    let bundle = preset.desk_bundle(DEFAULT_SEED).unwrap();
    let i0 = random_initial(bundle.node_count(), 0.5, 1).unwrap();
    let cfg = BoundConfig::from_initial(&i0, 100.0);
    c.bench_function("bounds/p7", |b| {
        b.iter(|| bound_envelope(&preset.model, &bundle, &cfg).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = drift, trajectory, exponent, envelope
}
criterion_main!(benches);
