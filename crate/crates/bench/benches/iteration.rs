use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hmsbl_bench::{dictionaries, fixed_params, snapshots, NY};
use hmsbl_core::hmsbl::{self, BlockModel};
use hmsbl_core::msbl_run;

const ITERS: usize = 10;

fn per_iteration(c: &mut Criterion) {
    let y = snapshots();
    let params = fixed_params(ITERS);
    let mut group = c.benchmark_group("em_10_iterations");
    group.sample_size(10);
    for mv in [25, 50, 100, 200] {
        let (pair, kd) = dictionaries(mv);
        group.bench_with_input(BenchmarkId::new("hmsbl", mv), &mv, |b, _| {
            b.iter(|| hmsbl::run(&y, &BlockModel::new(&pair.phi_u, NY), &params).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("msbl", mv), &mv, |b, _| {
            b.iter(|| msbl_run(&y, &kd, &params).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, per_iteration);
criterion_main!(benches);
