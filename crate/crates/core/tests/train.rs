use sdeattn::attention::{AttentionConfig, AttentionKind};
use sdeattn::data::{generate_frequency, generate_periodic, Dataset, FrequencySpec, PeriodicSpec, Split};
use sdeattn::model::ModelConfig;
use sdeattn::optim::{Adam, AdamConfig};
use sdeattn::tensor::Tensor;
use sdeattn::train::{
    evaluate, init_model, summarize, train, train_from, Checkpoint, MetricsReport, Task, TaskKind, TrainConfig,
};
use sdeattn_testkit::{mean, population_std};

fn classifier(kind: AttentionKind) -> ModelConfig {
    ModelConfig {
        latent: 4,
        dynamics_hidden: vec![8],
        output_hidden: vec![],
        num_classes: Some(2),
        substeps: 1,
        max_len: 12,
        attention: AttentionConfig {
            kind,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn frequency() -> Dataset {
    generate_frequency(&FrequencySpec {
        train: 40,
        test: 20,
        points: 12,
        ..Default::default()
    })
    .unwrap()
}

/// Scalar Adam written out directly, one coordinate at a time.
fn reference_adam(w0: f64, lr: f64, steps: usize, grad: impl Fn(f64) -> f64) -> f64 {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
    for t in 1..=steps {
        let g = grad(w);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32));
        let vh = v / (1.0 - b2.powi(t as i32));
        w -= lr * mh / (vh.sqrt() + eps);
    }
    w
}

#[test]
fn adam_descends_the_quadratic_bowl() {
    let cfg = AdamConfig {
        lr: 0.05,
        ..Default::default()
    };
    let mut w = vec![Tensor::vector(vec![1.0f64])];
    let mut adam = Adam::new(cfg, &w);
    for _ in 0..500 {
        let g = vec![w[0].map(|x| 2.0 * x)];
        adam.step(&mut w, &g).unwrap();
    }
    let norm = w[0].data()[0].abs();
    assert!(norm < 1e-3, "|w| = {norm}");
    let oracle = reference_adam(1.0, 0.05, 500, |x| 2.0 * x);
    assert!((w[0].data()[0] - oracle).abs() < 1e-12);
}

fn first_update(cfg: AdamConfig, g: &Tensor) -> Tensor {
    let mut p = vec![Tensor::zeros(g.shape().to_vec())];
    let mut adam = Adam::new(cfg, &p);
    adam.step(&mut p, std::slice::from_ref(g)).unwrap();
    p.remove(0)
}

#[test]
fn adam_first_step_is_scale_invariant() {
    // The first update is -lr·g/(|g|+ε); rescaling g by c moves it by
    // lr·ε·|1 - 1/c|/|g| at most, below lr·1e-6 once |g| ≥ 1e-2.
    let cfg = AdamConfig::default();
    let g0 = Tensor::vector(vec![0.2, -1.5, 0.01, 40.0]);
    let base = first_update(cfg, &g0);
    for c in [0.5, 0.75, 1.3, 2.0] {
        let d = first_update(cfg, &g0.map(|x| c * x));
        let gap = d
            .data()
            .iter()
            .zip(base.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(gap < cfg.lr * 1e-6, "c={c}: {gap}");
    }
    // Below that scale the ε term dominates exactly as predicted.
    let g = 1e-4;
    let small = first_update(cfg, &Tensor::vector(vec![g])).data()[0];
    let half = first_update(cfg, &Tensor::vector(vec![g / 2.0])).data()[0];
    let predicted = cfg.lr * (g / (g + cfg.eps) - (g / 2.0) / (g / 2.0 + cfg.eps));
    assert!(((half - small) - predicted).abs() < 1e-15);
}

#[test]
fn zero_iterations_return_the_initialization() {
    let cfg = TrainConfig {
        iterations: 0,
        seed: 21,
        ..Default::default()
    };
    let model = classifier(AttentionKind::StaticChannel);
    let (ckpt, run) = train(&model, &frequency(), Task::Classification { missing_rate: 0.3 }, &cfg).unwrap();
    assert!(run.losses.is_empty());
    let (_, init) = init_model(&model, 21).unwrap();
    assert_eq!(ckpt.store.values(), init.values());
}

#[test]
fn same_seed_gives_identical_loss_traces() {
    let data = frequency();
    for kind in [AttentionKind::TvfLstm, AttentionKind::Pyramidal] {
        let cfg = TrainConfig {
            iterations: 4,
            batch_size: 8,
            seed: 5,
            ..Default::default()
        };
        let task = Task::Classification { missing_rate: 0.5 };
        let (a, ra) = train(&classifier(kind), &data, task, &cfg).unwrap();
        let (b, rb) = train(&classifier(kind), &data, task, &cfg).unwrap();
        let bits = |r: &[f64]| r.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&ra.losses), bits(&rb.losses));
        assert_eq!(a.to_text(), b.to_text());
        let (_, rc) = train(&classifier(kind), &data, task, &TrainConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(bits(&ra.losses), bits(&rc.losses));
    }
}

#[test]
fn interpolation_training_is_deterministic_with_resampled_paths() {
    let data = generate_periodic(&PeriodicSpec {
        trajectories: 20,
        points: 10,
        group_size: 10,
        ..Default::default()
    })
    .unwrap();
    let model = ModelConfig {
        latent: 3,
        dynamics_hidden: vec![5],
        output_hidden: vec![],
        substeps: 2,
        max_len: 10,
        ..Default::default()
    };
    let cfg = TrainConfig {
        iterations: 3,
        batch_size: 4,
        resample_brownian: true,
        ..Default::default()
    };
    let task = Task::Interpolation { observed_rate: 0.3 };
    let (_, a) = train(&model, &data, task, &cfg).unwrap();
    let (_, b) = train(&model, &data, task, &cfg).unwrap();
    assert_eq!(a.losses, b.losses);
    let (_, fixed) = train(
        &model,
        &data,
        task,
        &TrainConfig {
            resample_brownian: false,
            ..cfg
        },
    )
    .unwrap();
    assert_eq!(a.losses[0], fixed.losses[0]);
    assert_ne!(a.losses[1..], fixed.losses[1..]);
}

#[test]
fn saved_checkpoint_evaluates_identically() {
    let data = frequency();
    let task = Task::Classification { missing_rate: 0.2 };
    let cfg = TrainConfig {
        iterations: 2,
        batch_size: 8,
        ..Default::default()
    };
    let (ckpt, _) = train(&classifier(AttentionKind::TvfTransformer), &data, task, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    let a = evaluate(&ckpt, &data, Split::Test, task, 7).unwrap();
    let b = evaluate(&back, &data, Split::Test, task, 7).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.sequences, 20);
}

#[test]
fn perfect_predictor_scores_full_accuracy() {
    let mut data = frequency();
    for g in data.train.iter_mut().chain(data.test.iter_mut()) {
        g.labels = Some(vec![1; g.batch_size()]);
    }
    let model = classifier(AttentionKind::None);
    let task = Task::Classification { missing_rate: 0.0 };
    let mut runs = Vec::new();
    for seed in [1, 2, 3] {
        let (_, mut store) = init_model(&model, seed).unwrap();
        store.zero_prefix("classifier");
        store.set("classifier.bias", Tensor::vector(vec![0.0, 10.0])).unwrap();
        let ckpt = Checkpoint {
            model: model.clone(),
            seed,
            store,
        };
        runs.push((seed, evaluate(&ckpt, &data, Split::Test, task, 64).unwrap().value));
    }
    let report = MetricsReport::new(TaskKind::Classification, &runs).unwrap();
    assert_eq!(report.values, vec![1.0, 1.0, 1.0]);
    assert_eq!((report.summary.mean, report.summary.std), (1.0, 0.0));
}

#[test]
fn summary_matches_two_pass_statistics() {
    let values = [0.61, 0.74, 0.7, 0.58, 0.93];
    let s = summarize(&values).unwrap();
    assert!((s.mean - mean(&values)).abs() < 1e-15);
    assert!((s.std - population_std(&values)).abs() < 1e-15);
    let same = summarize(&[0.123; 3]).unwrap();
    assert_eq!((same.mean, same.std), (0.123, 0.0));
}

#[test]
fn empty_evaluation_set_is_an_error() {
    let mut data = frequency();
    data.test.clear();
    let (_, store) = init_model(&classifier(AttentionKind::None), 0).unwrap();
    let ckpt = Checkpoint {
        model: classifier(AttentionKind::None),
        seed: 0,
        store,
    };
    assert!(evaluate(&ckpt, &data, Split::Test, Task::Classification { missing_rate: 0.0 }, 8).is_err());
}

#[test]
fn batch_of_diverged_trajectories_aborts_training() {
    let mut data = frequency();
    // Stretch time so a maximal constant drift overflows the latent state.
    for g in data.train.iter_mut() {
        g.timestamps.iter_mut().for_each(|t| *t *= 10.0);
    }
    let model = classifier(AttentionKind::None);
    let (_, mut store) = init_model(&model, 0).unwrap();
    store.zero_prefix("sde.drift");
    store.set("sde.drift.1.bias", Tensor::full([4], f64::MAX)).unwrap();
    let start = Checkpoint { model, seed: 0, store };
    let cfg = TrainConfig {
        iterations: 3,
        batch_size: 8,
        ..Default::default()
    };
    let err = train_from(
        start,
        &data,
        Task::Classification { missing_rate: 0.0 },
        &cfg,
        |_, _| {},
    )
    .unwrap_err();
    assert!(err.to_string().contains("iteration 1"), "{err}");
}
