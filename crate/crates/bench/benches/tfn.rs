use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use tfn_bench::{dataset, reduced_arch};
use tfn_core::embeddings::ModalityEmbeddings;
use tfn_core::fusion::{fuse_for_variant, tensor_fuse, FusionVariant};
use tfn_core::model::{ArchConfig, TfnModel};
use tfn_core::rng::Rng;
use tfn_core::train::{step_gradients, TrainConfig};
use tfn_core::Tensor;

fn embeddings(dl: usize, dv: usize, da: usize) -> ModalityEmbeddings {
    let mut rng = Rng::new(0);
    let mut v = |n| Tensor::vector((0..n).map(|_| rng.normal()).collect());
    ModalityEmbeddings {
        z_l: v(dl),
        z_v: v(dv),
        z_a: v(da),
    }
}

fn fusion(c: &mut Criterion) {
    let e = embeddings(128, 32, 32);
    c.bench_function("tensor_fuse 128x32x32", |b| b.iter(|| tensor_fuse(black_box(&e)).unwrap()));
    c.bench_function("fuse no_trimodal 128x32x32", |b| {
        b.iter(|| fuse_for_variant(black_box(&e), FusionVariant::NoTrimodal).unwrap())
    });
}

fn step(c: &mut Criterion, name: &str, arch: ArchConfig, variant: FusionVariant) {
    let data = dataset(32);
    let config = TrainConfig {
        arch,
        variant,
        ..TrainConfig::default()
    };
    let model = TfnModel::new(config.model_config(&data), 0).unwrap();
    let items = model.prepare_all(&data.utterances).unwrap();
    let batch: Vec<_> = items.iter().collect();
    c.bench_function(name, |b| b.iter(|| step_gradients(&model, black_box(&batch), None, 0.01).unwrap()));
}

fn training_step(c: &mut Criterion) {
    step(c, "batch-32 step, reduced arch, full", reduced_arch(), FusionVariant::Full);
    step(c, "batch-32 step, reduced arch, early", reduced_arch(), FusionVariant::Early);
    step(c, "batch-32 step, default arch, full", ArchConfig::default(), FusionVariant::Full);
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = fusion, training_step
}
criterion_main!(benches);
