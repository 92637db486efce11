use criterion::{criterion_group, criterion_main, Criterion};
use flexireg_bench::{cell_inputs, default_city};
use flexireg_core::geometry::build_overlap_map;
use flexireg_core::graphs::cosine_adjacency;
use flexireg_core::gridlearner::{sample_triplets, GridLearner};
use flexireg_core::rng::{streams, substream};
use flexireg_core::GridLearnerConfig;

fn geometry(c: &mut Criterion) {
    let f = default_city();
    c.bench_function("overlap_map/60_regions", |b| {
        b.iter(|| build_overlap_map(&f.city.regions, &f.grid))
    });
    c.bench_function("cosine_adjacency/poi", |b| b.iter(|| cosine_adjacency(&f.bundle.poi).unwrap()));
}

fn stage1(c: &mut Criterion) {
    let f = default_city();
    let cfg = GridLearnerConfig::default();
    let inputs = cell_inputs(&f, cfg.top_k);
    let model = GridLearner::new(&cfg, inputs.poi.nrows(), inputs.satellite.ncols()).unwrap();
    let triplets = sample_triplets(&inputs.adjacency, &mut substream(0, streams::TRIPLET)).unwrap();
    let mut group = c.benchmark_group("stage1");
    group.sample_size(10);
    group.bench_function("loss_and_grads", |b| b.iter(|| model.loss_and_grads(&inputs, &triplets).unwrap()));
    group.finish();
}

criterion_group!(benches, geometry, stage1);
criterion_main!(benches);
