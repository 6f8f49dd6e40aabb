use needlenet::data::{load_dataset, preprocess_frame, NeedleState, SplitKind};
use needlenet::eval::evaluate_model;
use needlenet::loss::ClassWeights;
use needlenet::model::{Checkpoint, LightCnn, LightCnnSpec, Model, CRNN_BASE};
use needlenet::optim::{AdamConfig, AdamState};
use needlenet::synth::{generate_corpus, generate_split, SplitPolicy, Span, SynthConfig};
use needlenet::tensor::Tensor;
use needlenet::train::{cnn_batch_gradients, train_cnn, train_crnn, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_config(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        clips_per_section: 2,
        width: 96,
        height: 72,
        no_needle_frames: Span::new(6, 8),
        fist_frames: Span::new(5, 6),
        infil_frames: Span::new(5, 6),
        ..SynthConfig::default()
    }
}

#[test]
fn repeated_batch_loss_falls() {
    let split = generate_split(&tiny_config(3), SplitPolicy::PerSection { validation: 0, test: 0 }, Some(112)).unwrap();
    let batch: Vec<(Tensor<f32>, NeedleState)> = split
        .get(SplitKind::Train)
        .iter()
        .flat_map(|c| c.frames.iter().zip(&c.labels))
        .step_by(5)
        .take(32)
        .map(|(f, &l)| (preprocess_frame(f), l))
        .collect();
    assert_eq!(batch.len(), 32);
    let weights = ClassWeights::from_counts(split.class_counts(SplitKind::Train)).unwrap();
    let mut model = LightCnn::new(&LightCnnSpec::new(&CRNN_BASE).unwrap(), &mut ChaCha8Rng::seed_from_u64(11));
    let lengths: Vec<usize> = model.parameters().iter().map(|(_, t)| t.len()).collect();
    let mut adam = AdamState::new(AdamConfig::default(), &lengths);
    let mut losses = Vec::new();
    for _ in 0..21 {
        let (loss, grads) = cnn_batch_gradients(&model, &batch, &weights).unwrap();
        losses.push(loss);
        let mut params: Vec<&mut [f32]> = model.parameters_mut().into_iter().map(|t| t.data_mut()).collect();
        let g: Vec<&[f32]> = grads.iter().map(Tensor::data).collect();
        adam.step(&mut params, &g).unwrap();
    }
    assert!(losses[10..].iter().all(|&l| l < losses[0]), "{losses:?}");
    assert!(losses[20] < 0.5 * losses[0], "{losses:?}");
}

#[test]
fn on_disk_corpus_trains_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(8);
    let policy = SplitPolicy::PerSection { validation: 1, test: 0 };
    let entries = generate_corpus(&config, policy, dir.path()).unwrap();
    assert_eq!(entries.len(), 18);

    let loaded = load_dataset(dir.path()).unwrap();
    let memory = generate_split(&config, policy, None).unwrap();
    for kind in SplitKind::ALL {
        let (a, b) = (loaded.get(kind), memory.get(kind));
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.labels, y.labels);
            assert_eq!(x.frames, y.frames);
        }
    }

    let split = loaded.resized(112);
    let train_config = TrainConfig {
        epochs: 1,
        seed: 2,
        ..TrainConfig::default()
    };
    let cnn_run = train_cnn(&LightCnnSpec::new(&CRNN_BASE).unwrap(), &split, &train_config).unwrap();
    assert_eq!(cnn_run.history.len(), 1);
    let path = dir.path().join("cnn.nsnet");
    cnn_run.checkpoint.save(&path).unwrap();
    let restored = Checkpoint::load(&path).unwrap();
    assert_eq!(restored, cnn_run.checkpoint);

    let (base, _) = restored.clone().into_light_cnn().unwrap();
    let crnn_run = train_crnn(&base, 10, &split, &train_config).unwrap();
    assert!(matches!(crnn_run.checkpoint.model, Model::Crnn(_)));

    let validation = split.get(SplitKind::Validation);
    for model in [&restored.model, &crnn_run.checkpoint.model] {
        let (report, preds) = evaluate_model(model, validation).unwrap();
        assert_eq!(report.clips.len(), validation.len());
        assert_eq!(preds.iter().map(Vec::len).sum::<usize>(), report.confusion.total());
        assert!(report.frame_accuracy().is_finite());
    }
}

#[test]
fn class_weights_raise_minority_recall() {
    let config = SynthConfig {
        seed: 21,
        clips_per_section: 3,
        infiltration_fraction: 1.0,
        width: 96,
        height: 72,
        no_needle_frames: Span::new(30, 40),
        fist_frames: Span::new(3, 4),
        infil_frames: Span::new(3, 4),
        ..SynthConfig::default()
    };
    let split = generate_split(&config, SplitPolicy::PerSection { validation: 1, test: 1 }, Some(32)).unwrap();
    let counts = split.class_counts(SplitKind::Train);
    assert!(counts[0] > 4 * (counts[1] + counts[2]), "{counts:?}");
    let spec = LightCnnSpec::with_input_side(&[4, 8], 32).unwrap();
    let recall = |weights: Option<ClassWeights>| {
        let config = TrainConfig {
            epochs: 8,
            learning_rate: 1e-3,
            class_weights: weights,
            seed: 5,
            augment: None,
            ..TrainConfig::default()
        };
        let run = train_cnn(&spec, &split, &config).unwrap();
        let mut clips = split.get(SplitKind::Train).to_vec();
        clips.extend_from_slice(split.get(SplitKind::Test));
        let (report, _) = evaluate_model(&run.checkpoint.model, &clips).unwrap();
        report.confusion.recall(NeedleState::Fist) + report.confusion.recall(NeedleState::Infil)
    };
    let uniform = recall(Some(ClassWeights::uniform()));
    let weighted = recall(None);
    assert!(uniform <= weighted, "uniform {uniform:.3} weighted {weighted:.3}");
}
