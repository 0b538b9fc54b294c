use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ltood_bench::{batch_labels, profile, random_matrix, random_scores, small_benchmark};
use ltood_core::detector::{aupr, auroc};
use ltood_core::losses::{rscl_loss, LossInputs};
use ltood_core::mining::mine;
use ltood_core::ndcore::Tape;
use ltood_core::trainer::{run_epoch, train_profile};
use ltood_core::{LossWeights, ModelDims, ModelParams, TemperatureSchedule, Temperatures, TrainConfig, TrainState};
use std::hint::black_box;

fn matmul(c: &mut Criterion) {
    let a = random_matrix(48, 64, 1);
    let b = random_matrix(64, 64, 2);
    c.bench_function("matmul 48x64x64", |bench| {
        bench.iter(|| {
            let mut t = Tape::new();
            let (x, y) = (t.leaf(a.clone()), t.leaf(b.clone()));
            black_box(t.matmul(x, y).unwrap())
        })
    });
}

fn loss(c: &mut Criterion) {
    let p = profile(10);
    let labels = batch_labels(48, 10);
    let temps = Temperatures::constant(10, 0.1);
    let tensors = [
        random_matrix(48, 11, 3),
        random_matrix(48, 11, 4),
        random_matrix(48, 32, 5),
        random_matrix(48, 32, 6),
        random_matrix(6, 32, 7),
        random_matrix(1, 32, 8),
    ];
    c.bench_function("rscl forward+backward B=48", |bench| {
        bench.iter(|| {
            let mut t = Tape::new();
            let v: Vec<_> = tensors.iter().map(|x| t.leaf(x.clone())).collect();
            let n: Vec<_> = v[2..].iter().map(|&x| t.l2_normalize(x).unwrap()).collect();
            let inputs = LossInputs {
                id_logits: v[0],
                id_embeddings: n[0],
                labels: &labels,
                outlier_logits: Some(v[1]),
                outlier_embeddings: Some(n[1]),
                tail_prototypes: Some(n[2]),
                outlier_prototype: Some(n[3]),
                profile: &p,
                temps: &temps,
            };
            let (l, _) = rscl_loss(&mut t, &inputs, &LossWeights::default()).unwrap();
            black_box(t.backward(l).unwrap())
        })
    });
}

fn mining(c: &mut Criterion) {
    let p = profile(10);
    let params = ModelParams::init(ModelDims::new(8, 10), 0);
    let cands = random_matrix(144, 8, 9);
    c.bench_function("mine 3B=144", |bench| {
        bench.iter(|| black_box(mine(&cands, &params, &p, Default::default()).unwrap()))
    });
}

fn metrics(c: &mut Criterion) {
    let id = random_scores(10_000, 10);
    let ood = random_scores(10_000, 11);
    c.bench_function("auroc 10k+10k", |bench| bench.iter(|| black_box(auroc(&id, &ood).unwrap())));
    c.bench_function("aupr 10k+10k", |bench| bench.iter(|| black_box(aupr(&id, &ood).unwrap())));
}

fn epoch(c: &mut Criterion) {
    let bench_data = small_benchmark();
    let config = TrainConfig::default();
    let p = train_profile(&bench_data.train, config.k).unwrap();
    let schedule = TemperatureSchedule::new(config.tau, config.epochs, config.variant, p.normalized().to_vec()).unwrap();
    let dims = ModelDims::new(bench_data.train.dim(), bench_data.train.classes());
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("one epoch", |bench| {
        bench.iter_batched(
            || TrainState::new(dims, 0),
            |mut state| {
                run_epoch(&mut state, &config, &bench_data.train, &bench_data.aux, &p, &schedule, |_| {}).unwrap();
                state
            },
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, matmul, loss, mining, metrics, epoch);
criterion_main!(benches);
