use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use icco_core::env::{Action, JointAction, Scenario, WorldState};
use icco_core::eval::{GreedyPolicy, Rollout};
use icco_core::instruction::InstructionVector;
use icco_core::model::{Model, ModelConfig, NetworkSizes, Variant};
use icco_core::nn::{MonotonicMixer, ParamStore};
use icco_core::train::{TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn env_step(c: &mut Criterion) {
    let s = Scenario::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    c.bench_function("env/step", |b| {
        b.iter_batched(
            || {
                let w = WorldState::reset(rng.random(), &s).unwrap();
                let hold = InstructionVector::hold(&w.positions(), 4, 0);
                let actions = JointAction((0..3).map(|_| Action::from_index(rng.random_range(0..5)).unwrap()).collect());
                (w, hold, actions)
            },
            |(mut w, hold, actions)| black_box(w.step(&s, &actions, &hold).unwrap()),
            BatchSize::SmallInput,
        )
    });
}

fn policy_step(c: &mut Criterion) {
    let s = Scenario::default();
    let mut group = c.benchmark_group("policy/step");
    for variant in [Variant::Qmix, Variant::Icco] {
        let model = Model::new(variant, ModelConfig::new(&s, &NetworkSizes::default()), 0).unwrap();
        let mut policy = GreedyPolicy::new(model);
        let mut rollout = Rollout::new(s.clone(), 1, 4, 4).unwrap();
        group.bench_function(variant.as_str(), |b| {
            b.iter(|| {
                if rollout.finished() {
                    rollout = Rollout::new(s.clone(), 1, 4, 4).unwrap();
                }
                black_box(rollout.step(&mut policy, None).unwrap())
            })
        });
    }
    group.finish();
}

fn mixer(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let m = MonotonicMixer::new(&mut store, 3, 48, 32, 32, &mut rng);
    let q = [0.3, -1.2, 2.0];
    let cond: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
    c.bench_function("mixer/evaluate", |b| b.iter(|| black_box(m.evaluate(&store, &q, &cond).unwrap())));
}

fn train_update(c: &mut Criterion) {
    let mut group = c.benchmark_group("train/update");
    group.sample_size(10);
    for variant in [Variant::Qmix, Variant::Icco] {
        let cfg = TrainConfig {
            variant,
            warmup_episodes: 16,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(cfg, Scenario::default()).unwrap();
        while trainer.updates() == 0 {
            trainer.run_episode().unwrap();
        }
        group.bench_function(variant.as_str(), |b| b.iter(|| black_box(trainer.update().unwrap())));
    }
    group.finish();
}

criterion_group!(benches, env_step, policy_step, mixer, train_update);
criterion_main!(benches);
