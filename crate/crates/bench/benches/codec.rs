use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use pdm_kws::pdm_codec::{pcm2pdm_if, pcm2pdm_mod, pcm2pdm_par, pcm2pdm_par_chunked, pcm2pdm_seq};
use pdm_kws::ModulatorState;
use pdm_kws_bench::unipolar_samples;
use std::hint::black_box;

const LEN: usize = 1 << 20;

fn encoders(c: &mut Criterion) {
    let xs = unipolar_samples(LEN, 1);
    let bip: Vec<f64> = xs.iter().map(|u| 2.0 * u - 1.0).collect();
    let st = ModulatorState::default();
    let mut g = c.benchmark_group("encode");
    g.throughput(Throughput::Elements(LEN as u64));
    g.sample_size(20);
    g.bench_function("seq", |b| {
        b.iter(|| pcm2pdm_seq(black_box(&bip), st).unwrap())
    });
    g.bench_function("mod", |b| {
        b.iter(|| pcm2pdm_mod(black_box(&xs), st).unwrap())
    });
    g.bench_function("if", |b| b.iter(|| pcm2pdm_if(black_box(&xs), st).unwrap()));
    g.bench_function("par", |b| {
        b.iter(|| pcm2pdm_par(black_box(&xs), 1.0).unwrap())
    });
    for chunk in [1024usize, 65_536] {
        g.bench_with_input(
            BenchmarkId::new("par_chunked", chunk),
            &chunk,
            |b, &chunk| b.iter(|| pcm2pdm_par_chunked(black_box(&xs), 1.0, chunk).unwrap()),
        );
    }
    g.finish();
}

criterion_group!(benches, encoders);
criterion_main!(benches);
