use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tension_sentinel::autoencoder::Workspace;
use tension_sentinel::lstm::{LstmRecording, LstmScratch, StackedLstm};
use tension_sentinel::nn::{Gradients, LossScale};
use tension_sentinel::preprocess::{detrend, estimate_trend};
use tension_sentinel::synth::{generate_corpus, BridgeModel, ScenarioScript, TrafficScenario};
use tension_sentinel::{Autoencoder, ModelKind, RealMatrix, SequenceBatch};

const BATCH: usize = 30;

fn random(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn lstm(c: &mut Criterion) {
    let mut g = c.benchmark_group("lstm_stack");
    g.sample_size(10).measurement_time(Duration::from_secs(10));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let stack = StackedLstm::init(14, &[32, 32, 32], &mut rng);
    for steps in [24usize, 240] {
        let x = random(steps * BATCH * 14, &mut rng);
        let d_top = random(steps * BATCH * 32, &mut rng);
        let mut rec = LstmRecording::default();
        g.bench_with_input(BenchmarkId::new("forward", steps), &steps, |b, &t| {
            b.iter(|| stack.forward_into(black_box(&x), t, BATCH, None, &mut rec).unwrap())
        });
        stack.forward_into(&x, steps, BATCH, None, &mut rec).unwrap();
        let mut grads = Gradients::zeros_like(&stack);
        let mut scratch = LstmScratch::default();
        let mut d_in = Vec::new();
        g.bench_with_input(BenchmarkId::new("backward", steps), &steps, |b, _| {
            b.iter(|| {
                stack
                    .backward_into(&rec, black_box(&d_top), &mut grads.0, Some(&mut d_in), &mut scratch)
                    .unwrap()
            })
        });
    }
    g.finish();
}

fn train_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("loss_and_gradient");
    g.sample_size(10).measurement_time(Duration::from_secs(10));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for kind in [ModelKind::Lstm, ModelKind::Dnn] {
        let model = Autoencoder::init(kind, &mut rng);
        let steps = 240;
        let values = RealMatrix::from_vec(steps * BATCH, 14, random(steps * BATCH * 14, &mut rng)).unwrap();
        let input = SequenceBatch::new(steps, BATCH, values.clone()).unwrap();
        let mut ws = Workspace::default();
        let mut grads = Gradients::zeros_like(&model);
        g.bench_function(BenchmarkId::new(kind.to_string(), steps), |b| {
            b.iter(|| {
                model
                    .loss_and_gradient(&input, &values, None, LossScale::PerSample, &mut ws, &mut grads)
                    .unwrap()
            })
        });
    }
    g.finish();
}

fn data(c: &mut Criterion) {
    let mut g = c.benchmark_group("data");
    g.sample_size(10);
    let bridge = BridgeModel::default();
    let traffic = TrafficScenario {
        duration: 3600.0,
        ..TrafficScenario::default()
    };
    let script = ScenarioScript::default();
    g.bench_function("synth_1h", |b| {
        b.iter(|| generate_corpus(&bridge, &traffic, &script, black_box(7)).unwrap())
    });
    let series = generate_corpus(&bridge, &traffic, &script, 7).unwrap();
    g.bench_function("detrend_1h", |b| {
        b.iter(|| {
            let trend = estimate_trend(black_box(&series), 30.0).unwrap();
            detrend(&series, &trend).unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, lstm, train_step, data);
criterion_main!(benches);
