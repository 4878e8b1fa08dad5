use reptile_core::data::{generate_dataset, split_by_speaker, Dataset, GeneratorConfig, SplitSpec};
use reptile_core::model::init_params;
use reptile_core::optim::{
    baseline_fit, evaluate, inner_train, lookahead_fit, multitask_reptile_step, reptile_fit,
    reptile_interpolate, FitOutcome, InnerOptimizer, ShuffleStream, Task, TaskSampler, TrainConfig,
};
use reptile_core::{Error, ModelConfig, ParameterSet, SpeakerId, Tensor, Utterance};

fn toy_generator(seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        num_intents: 3,
        num_speakers: 6,
        utterances_per_speaker_per_intent: 2,
        input_dim: 4,
        min_len: 4,
        max_len: 6,
        seed,
        ..GeneratorConfig::default()
    }
}

fn toy_model() -> ModelConfig {
    ModelConfig {
        hidden_dim: 6,
        decoder_hidden: 6,
        ..ModelConfig::toy(4, 3)
    }
}

fn toy_splits() -> (Dataset, Dataset, Dataset) {
    let data = generate_dataset(&toy_generator(0)).unwrap();
    split_by_speaker(&data, &SplitSpec::default()).unwrap()
}

fn sgd(lr: f64) -> TrainConfig {
    TrainConfig {
        k: 5,
        alpha: 1.0,
        lr,
        batch_size: 4,
        patience: 1000,
        max_episodes: 4,
        seed: 3,
        inner_optimizer: InnerOptimizer::Sgd,
    }
}

fn assert_bit_identical(a: &ParameterSet, b: &ParameterSet) {
    assert_eq!(a.flatten().len(), b.flatten().len());
    for (x, y) in a.flatten().iter().zip(b.flatten()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn full_step_reptile_with_sgd_is_plain_sgd() {
    let (train, val, _) = toy_splits();
    let model = toy_model();
    let init = init_params(&model, 1).unwrap();
    for episodes in 1..=4 {
        let config = TrainConfig {
            max_episodes: episodes,
            ..sgd(0.05)
        };
        let reptile = reptile_fit(&model, &init, &train, &val, &config).unwrap();
        let base_config = TrainConfig {
            max_episodes: config.k * episodes,
            ..config
        };
        let base = baseline_fit(&model, &init, &train, &val, &base_config).unwrap();
        assert_eq!(reptile.log.len(), episodes);
        assert_eq!(base.log.len(), config.k * episodes);
        assert_bit_identical(&reptile.final_params, &base.final_params);
        assert_ne!(reptile.final_params, init);
    }
}

#[test]
fn zero_alpha_never_moves() {
    let (train, val, _) = toy_splits();
    let model = toy_model();
    let init = init_params(&model, 2).unwrap();
    let config = TrainConfig {
        alpha: 0.0,
        max_episodes: 6,
        ..sgd(0.05)
    };
    let outcome = reptile_fit(&model, &init, &train, &val, &config).unwrap();
    assert_eq!(outcome.log.len(), 6);
    assert!(outcome
        .log
        .records
        .iter()
        .all(|r| r.val_acc == outcome.log.initial_val_acc));
    assert_bit_identical(&outcome.final_params, &init);
    assert_eq!(outcome.log.best_episode, 0);
}

#[test]
fn zero_lr_stops_after_exactly_patience() {
    let (train, val, _) = toy_splits();
    let model = toy_model();
    let init = init_params(&model, 0).unwrap();
    for patience in [1, 3, 7] {
        let config = TrainConfig {
            lr: 0.0,
            patience,
            max_episodes: 50,
            inner_optimizer: InnerOptimizer::Adam,
            alpha: 0.3,
            ..sgd(0.0)
        };
        let fits = [
            baseline_fit(&model, &init, &train, &val, &config).unwrap(),
            reptile_fit(&model, &init, &train, &val, &config).unwrap(),
            lookahead_fit(&model, &init, &train, &val, &config, 2).unwrap(),
        ];
        for fit in fits {
            assert_eq!(fit.log.len(), patience);
            assert!(fit.log.stopped_early);
            assert_eq!(fit.log.best_episode, 0);
            assert!(fit
                .log
                .records
                .iter()
                .all(|r| r.val_acc == fit.log.initial_val_acc));
            assert_bit_identical(&fit.best_params, &init);
        }
    }
}

fn check_best_checkpoint(fit: &FitOutcome, model: &ModelConfig, val: &Dataset) {
    let acc = evaluate(&fit.best_params, model, val).unwrap();
    assert_eq!(acc, fit.log.best_val_acc());
    let running_max = fit
        .log
        .records
        .iter()
        .map(|r| r.val_acc)
        .fold(fit.log.initial_val_acc, f64::max);
    assert_eq!(fit.log.best_val_acc(), running_max);
    if fit.log.best_episode > 0 {
        let first = fit
            .log
            .records
            .iter()
            .position(|r| r.val_acc == running_max)
            .unwrap()
            + 1;
        assert_eq!(fit.log.best_episode, first);
    }
}

#[test]
fn best_params_reproduce_best_validation_accuracy() {
    let (train, val, _) = toy_splits();
    let model = toy_model();
    let init = init_params(&model, 4).unwrap();
    let config = TrainConfig {
        k: 2,
        alpha: 0.3,
        lr: 0.02,
        patience: 4,
        max_episodes: 30,
        inner_optimizer: InnerOptimizer::Adam,
        ..sgd(0.0)
    };
    check_best_checkpoint(
        &reptile_fit(&model, &init, &train, &val, &config).unwrap(),
        &model,
        &val,
    );
    check_best_checkpoint(
        &baseline_fit(&model, &init, &train, &val, &config).unwrap(),
        &model,
        &val,
    );
    check_best_checkpoint(
        &lookahead_fit(&model, &init, &train, &val, &config, 3).unwrap(),
        &model,
        &val,
    );
}

#[test]
fn fits_are_deterministic() {
    let (train, val, _) = toy_splits();
    let model = toy_model();
    let init = init_params(&model, 5).unwrap();
    let config = TrainConfig {
        alpha: 0.3,
        lr: 0.02,
        patience: 3,
        max_episodes: 5,
        inner_optimizer: InnerOptimizer::Adam,
        ..sgd(0.0)
    };
    let a = reptile_fit(&model, &init, &train, &val, &config).unwrap();
    let b = reptile_fit(&model, &init, &train, &val, &config).unwrap();
    assert_eq!(a.log, b.log);
    assert_bit_identical(&a.final_params, &b.final_params);
    let c = lookahead_fit(&model, &init, &train, &val, &config, 4).unwrap();
    let d = lookahead_fit(&model, &init, &train, &val, &config, 4).unwrap();
    assert_eq!(c.log, d.log);
    assert_bit_identical(&c.best_params, &d.best_params);

    let other = reptile_fit(
        &model,
        &init,
        &train,
        &val,
        &TrainConfig { seed: 4, ..config },
    )
    .unwrap();
    assert_ne!(other.final_params, a.final_params);
}

#[test]
fn lookahead_with_full_sync_every_step_is_plain_sgd() {
    let (train, val, _) = toy_splits();
    let model = toy_model();
    let init = init_params(&model, 6).unwrap();
    let config = TrainConfig {
        max_episodes: 6,
        ..sgd(0.05)
    };
    let base = baseline_fit(&model, &init, &train, &val, &config).unwrap();
    let look = lookahead_fit(&model, &init, &train, &val, &config, 1).unwrap();
    assert_eq!(base.log, look.log);
    assert_bit_identical(&base.final_params, &look.final_params);
}

#[test]
fn lookahead_with_full_sync_tracks_fast_weights_at_sync_points() {
    let (train, val, _) = toy_splits();
    let model = toy_model();
    let init = init_params(&model, 6).unwrap();
    // 24 training utterances in batches of 4: one sync per epoch.
    assert_eq!(train.len(), 24);
    let config = TrainConfig {
        max_episodes: 5,
        ..sgd(0.05)
    };
    let base = baseline_fit(&model, &init, &train, &val, &config).unwrap();
    let look = lookahead_fit(&model, &init, &train, &val, &config, 6).unwrap();
    assert_eq!(base.log, look.log);
    assert_bit_identical(&base.final_params, &look.final_params);

    // Off a sync point the slow weights lag behind.
    let lagging = lookahead_fit(&model, &init, &train, &val, &config, 4).unwrap();
    assert_ne!(lagging.final_params, base.final_params);
}

#[test]
fn lookahead_rejects_zero_sync_period() {
    let (train, val, _) = toy_splits();
    let model = toy_model();
    let init = init_params(&model, 0).unwrap();
    let err = lookahead_fit(&model, &init, &train, &val, &sgd(0.05), 0).unwrap_err();
    assert!(matches!(err, Error::Validation(_)));
}

#[test]
fn inner_epochs_chain() {
    let (train, _, _) = toy_splits();
    let model = toy_model();
    let init = init_params(&model, 7).unwrap();
    let two = TrainConfig { k: 2, ..sgd(0.05) };
    let one = TrainConfig { k: 1, ..two };

    let mut stream = ShuffleStream::new(two.seed);
    let joint = inner_train(&init, &model, &train, &two, &mut stream).unwrap();

    let mut stream = ShuffleStream::new(two.seed);
    let first = inner_train(&init, &model, &train, &one, &mut stream).unwrap();
    let second = inner_train(&first.params, &model, &train, &one, &mut stream).unwrap();
    assert_bit_identical(&joint.params, &second.params);
    assert_eq!(joint.steps, first.steps + second.steps);
    assert_eq!(joint.mean_loss.to_bits(), second.mean_loss.to_bits());
}

fn single_example(label: usize, num_intents: usize) -> Dataset {
    let features =
        Tensor::from_rows(&[vec![0.5, -1.0, 0.25, 1.0], vec![1.0, 0.0, -0.5, 0.5]]).unwrap();
    Dataset::new(
        vec![Utterance::new(features, label, SpeakerId(0)).unwrap()],
        num_intents,
        4,
    )
    .unwrap()
}

#[test]
fn inner_train_counts_and_null_update() {
    let data = single_example(1, 3);
    let model = toy_model();
    let init = init_params(&model, 0).unwrap();
    let config = TrainConfig { k: 1, ..sgd(0.05) };
    let run = inner_train(&init, &model, &data, &config, &mut ShuffleStream::new(0)).unwrap();
    assert_eq!(run.steps, 1);
    assert_eq!(run.grad_alignment, None);

    let frozen = TrainConfig {
        lr: 0.0,
        k: 3,
        ..config
    };
    let run = inner_train(&init, &model, &data, &frozen, &mut ShuffleStream::new(0)).unwrap();
    assert_bit_identical(&run.params, &init);

    let empty = Dataset::new(Vec::new(), 3, 4).unwrap();
    let err = inner_train(&init, &model, &empty, &config, &mut ShuffleStream::new(0)).unwrap_err();
    assert!(matches!(err, Error::EmptyInput(_)));
}

#[test]
fn single_example_is_memorized() {
    let model = toy_model();
    let init = init_params(&model, 0).unwrap();
    let config = TrainConfig {
        k: 5,
        alpha: 0.5,
        lr: 0.05,
        batch_size: 8,
        patience: 100,
        max_episodes: 100,
        seed: 0,
        inner_optimizer: InnerOptimizer::Adam,
    };
    for label in 0..3 {
        let data = single_example(label, 3);
        let fit = reptile_fit(&model, &init, &data, &data, &config).unwrap();
        assert_eq!(evaluate(&fit.best_params, &model, &data).unwrap(), 1.0);
        let fit = baseline_fit(&model, &init, &data, &data, &config).unwrap();
        assert_eq!(evaluate(&fit.best_params, &model, &data).unwrap(), 1.0);
    }
}

#[test]
fn one_task_sampler_is_one_episode() {
    let (train, val, _) = toy_splits();
    let model = toy_model();
    let init = init_params(&model, 8).unwrap();
    let config = TrainConfig {
        alpha: 0.3,
        max_episodes: 1,
        inner_optimizer: InnerOptimizer::Adam,
        lr: 0.01,
        ..sgd(0.0)
    };
    let fit = reptile_fit(&model, &init, &train, &val, &config).unwrap();
    let mut sampler = TaskSampler::uniform(
        vec![Task {
            name: "all".into(),
            data: train.clone(),
        }],
        99,
    )
    .unwrap();
    let mut stream = ShuffleStream::new(config.seed);
    let step = multitask_reptile_step(&init, &model, &mut sampler, &config, &mut stream).unwrap();
    assert_bit_identical(&step, &fit.final_params);

    let still = TrainConfig {
        alpha: 0.0,
        ..config
    };
    let step = multitask_reptile_step(&init, &model, &mut sampler, &still, &mut stream).unwrap();
    assert_bit_identical(&step, &init);
}

#[test]
fn sampler_contract() {
    assert!(matches!(
        TaskSampler::uniform(Vec::new(), 0),
        Err(Error::Contract(_))
    ));
    let (train, val, _) = toy_splits();
    let tasks = vec![
        Task {
            name: "a".into(),
            data: train,
        },
        Task {
            name: "b".into(),
            data: val,
        },
    ];
    assert!(TaskSampler::weighted(tasks.clone(), vec![1.0], 0).is_err());
    assert!(TaskSampler::weighted(tasks.clone(), vec![-1.0, 2.0], 0).is_err());
    let mut sampler = TaskSampler::weighted(tasks, vec![3.0, 1.0], 0).unwrap();
    assert_eq!(sampler.probabilities(), &[0.75, 0.25]);
    let draws = 4000;
    let first = (0..draws).filter(|_| sampler.sample().name == "a").count();
    assert!((first as f64 / draws as f64 - 0.75).abs() < 0.03);
}

#[test]
fn interpolation_examples() {
    let mut theta = ParameterSet::new();
    theta
        .insert("w", Tensor::vector(vec![0.0, 0.0]).unwrap())
        .unwrap();
    let mut prime = ParameterSet::new();
    prime
        .insert("w", Tensor::vector(vec![1.0, 2.0]).unwrap())
        .unwrap();
    let mid = reptile_interpolate(&theta, &prime, 0.1).unwrap();
    assert_eq!(mid.get("w").unwrap().data(), &[0.1, 0.2]);
    assert_eq!(reptile_interpolate(&theta, &prime, 1.0).unwrap(), prime);
    assert_eq!(reptile_interpolate(&theta, &prime, 0.0).unwrap(), theta);
    assert!(reptile_interpolate(&theta, &prime, 1.5).is_err());

    let mut wide = ParameterSet::new();
    wide.insert("w", Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap())
        .unwrap();
    assert!(matches!(
        reptile_interpolate(&theta, &wide, 0.5),
        Err(Error::Shape { .. })
    ));
}

#[test]
fn two_task_training_transfers_to_both_tasks() {
    // Two benchmarks whose intents share labels but not prototypes.
    let model = toy_model();
    let halves: Vec<(Dataset, Dataset)> = [11, 12]
        .iter()
        .map(|&seed| {
            let data = generate_dataset(&GeneratorConfig {
                speaker_shift_scale: 0.5,
                ..toy_generator(seed)
            })
            .unwrap();
            let (train, val, _) = split_by_speaker(&data, &SplitSpec::default()).unwrap();
            (train, val)
        })
        .collect();
    let config = TrainConfig {
        k: 1,
        alpha: 0.5,
        lr: 0.02,
        batch_size: 4,
        patience: 10,
        max_episodes: 60,
        seed: 0,
        inner_optimizer: InnerOptimizer::Adam,
    };
    let init = init_params(&model, 0).unwrap();
    let tasks = halves
        .iter()
        .enumerate()
        .map(|(i, (train, _))| Task {
            name: format!("task{i}"),
            data: train.clone(),
        })
        .collect();
    let mut sampler = TaskSampler::uniform(tasks, 0).unwrap();
    let mut stream = ShuffleStream::new(0);
    let mut joint = init.clone();
    for _ in 0..200 {
        joint = multitask_reptile_step(&joint, &model, &mut sampler, &config, &mut stream).unwrap();
    }
    for (i, (_, val)) in halves.iter().enumerate() {
        let (other_train, other_val) = &halves[1 - i];
        let single = baseline_fit(&model, &init, other_train, other_val, &config).unwrap();
        let transfer = evaluate(&single.best_params, &model, val).unwrap();
        let joint_acc = evaluate(&joint, &model, val).unwrap();
        assert!(
            joint_acc > transfer,
            "task {i}: joint {joint_acc} vs transferred {transfer}"
        );
    }
}
