use famae::data::{synth_generate, DatasetBundle, SplitSizes, SynthChannel, SynthConfig};
use famae::encoder::ModelConfig;
use famae::harness::*;
use famae::numerics::Rng;
use famae::presets;
use famae::pretrainer::{pretrain, FamaeModel, PretrainConfig};
use famae::spectral::OperatorKind;

fn small_model() -> ModelConfig {
    ModelConfig {
        depth: 1,
        width: 16,
        heads: 2,
        patch: 10,
        mlp_dim: 32,
        dropout: 0.0,
        aux_depth: 1,
        aux_heads: 2,
        aux_mlp_dim: 32,
        max_channels: 4,
        ..ModelConfig::default()
    }
}

fn ft(epochs: usize) -> FinetuneConfig {
    FinetuneConfig {
        epochs,
        batch: 16,
        lr: 3e-3,
        ..FinetuneConfig::default()
    }
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn informative_task(seed: u64) -> DatasetBundle {
    let cfg = SynthConfig {
        length: 200,
        sizes: SplitSizes { train: 60, val: 10, test: 150 },
        ..presets::single_informative_task()
    };
    synth_generate(&cfg, &Rng::new(seed)).unwrap()
}

#[test]
fn three_class_confusion_oracle() {
    let cm = vec![vec![5, 0, 0], vec![1, 4, 0], vec![0, 2, 3]];
    let m = Metrics::from_confusion(&cm);
    // per class: P = (5/6, 4/6, 3/3), R = (5/5, 4/5, 3/5)
    let p = [5.0 / 6.0, 4.0 / 6.0, 1.0];
    let r = [1.0, 0.8, 0.6];
    let f: Vec<f64> = p.iter().zip(&r).map(|(p, r)| 2.0 * p * r / (p + r)).collect();
    assert_eq!(m.accuracy, 12.0 / 15.0);
    assert!((m.precision - p.iter().sum::<f64>() / 3.0).abs() < 1e-15);
    assert!((m.recall - r.iter().sum::<f64>() / 3.0).abs() < 1e-15);
    assert!((m.f1 - f.iter().sum::<f64>() / 3.0).abs() < 1e-15);
    let truth = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2];
    let pred = [0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 2, 2, 2];
    assert_eq!(Metrics::from_predictions(&truth, &pred, 3).unwrap(), m);
    assert!(Metrics::from_predictions(&[3], &[0], 3).is_err());
}

#[test]
fn zero_epochs_is_the_initial_model() {
    let cfg = SynthConfig {
        length: 100,
        sizes: SplitSizes { train: 30, val: 10, test: 300 },
        ..presets::transfer_target()
    };
    let target = synth_generate(&cfg, &Rng::new(0)).unwrap();
    let mut accs = Vec::new();
    for seed in 0..40 {
        let rng = Rng::new(seed);
        let out = finetune(None, &target, &small_model(), &ft(0), &rng).unwrap();
        assert!(out.losses.is_empty());
        let fresh = FamaeModel::new(&small_model(), &rng).unwrap();
        let clf = Classifier::new(fresh, target.manifest.channels.clone(), 3, false, &rng).unwrap();
        assert_eq!(evaluate(&clf, &target, "test").unwrap(), out.test);
        accs.push(out.test.accuracy);
    }
    // An untrained model is a fixed function of the input, so its accuracy
    // varies far more across initializations than a binomial draw would.
    // Class symmetry of the head init still puts the expectation at 1/3.
    let n = accs.len() as f64;
    let mean = accs.iter().sum::<f64>() / n;
    let sd = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let binomial = ((1.0 / 3.0) * (2.0 / 3.0) / 300.0f64).sqrt();
    let ci = 3.3 * sd.max(binomial) / n.sqrt();
    assert!((mean - 1.0 / 3.0).abs() < ci, "mean {mean}, interval {ci}");
}

#[test]
fn pretrained_model_transfers_to_a_new_length() {
    let corpus = SynthConfig {
        length: 120,
        sizes: SplitSizes { train: 8, val: 2, test: 2 },
        ..SynthConfig::default()
    };
    let corpus = synth_generate(&corpus, &Rng::new(2)).unwrap();
    let pre = pretrain(&corpus, &small_model(), &PretrainConfig { epochs: 1, batch: 4, ..PretrainConfig::default() }, &Rng::new(3)).unwrap();
    let target = SynthConfig {
        length: 178,
        sampling_rate_hz: 178.0,
        sizes: SplitSizes { train: 12, val: 6, test: 12 },
        ..presets::transfer_target()
    };
    let target = synth_generate(&target, &Rng::new(4)).unwrap();
    let out = finetune(Some(&pre.model), &target, &small_model(), &ft(1), &Rng::new(5)).unwrap();
    assert!(out.losses[0].is_finite());
    assert_eq!(count_params(&out.classifier.model), count_params(&pre.model) + 16 * 3 + 3);
}

#[test]
fn substitution_rows() {
    let task = informative_task(6);
    let rows = modality_substitution(
        None,
        &task,
        &small_model(),
        &ft(15),
        &names(&["eeg"]),
        &[("eeg".into(), "eeg".into()), ("eeg".into(), "noise_a".into())],
        &Rng::new(7),
    )
    .unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].label, "baseline");
    assert_eq!(rows[1].delta_accuracy, 0.0);
    assert_eq!(rows[1].metrics, rows[0].metrics);
    assert_eq!(rows[2].channels, names(&["noise_a"]));
    assert!(rows[2].delta_accuracy <= 0.0, "{rows:?}");
    assert!(rows[0].metrics.accuracy > 0.6, "{rows:?}");
}

#[test]
fn substitution_names_must_exist() {
    let task = informative_task(6);
    let r = modality_substitution(None, &task, &small_model(), &ft(0), &names(&["eeg"]), &[("eeg".into(), "emg".into())], &Rng::new(0));
    assert!(matches!(r, Err(famae::Error::UnknownChannel(c)) if c == "emg"));
}

#[test]
fn four_step_dropout_schedule() {
    let mut cfg = SynthConfig {
        length: 100,
        n_classes: 3,
        sizes: SplitSizes { train: 24, val: 6, test: 30 },
        ..presets::redundancy_task()
    };
    cfg.channels.push(SynthChannel {
        name: "emg".into(),
        bands: vec![vec![25.0], vec![30.0], vec![35.0]],
        band_width_hz: 1.0,
        snr: Some(1.0),
        duplicate_of: None,
    });
    let task = synth_generate(&cfg, &Rng::new(8)).unwrap();
    let full = task.manifest.channels.clone();
    assert_eq!(full.len(), 4);
    let subsets: Vec<Vec<String>> = (1..=4).rev().map(|k| full[..k].to_vec()).collect();
    let rows = modality_dropout(None, &task, &small_model(), &ft(2), &full, &subsets, &Rng::new(9)).unwrap();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[1].channels.len(), 4);
    assert_eq!(rows[1].metrics, rows[0].metrics);
    assert_eq!(rows[1].delta_accuracy, 0.0);
    assert_eq!(rows[4].channels, vec!["eeg".to_string()]);
    // reordering the channels of the evaluation set does not change anything
    let shuffled = task.select_channels(&["noise", "emg", "eeg_copy", "eeg"]).unwrap();
    let out = finetune(None, &task, &small_model(), &FinetuneConfig { channels: full.clone(), ..ft(2) }, &Rng::new(9)).unwrap();
    assert_eq!(evaluate(&out.classifier, &shuffled, "test").unwrap(), out.test);
}

#[test]
fn single_channel_attention_is_one() {
    let model = FamaeModel::new(&small_model(), &Rng::new(0)).unwrap();
    let t = synth_generate(&SynthConfig { sizes: SplitSizes { train: 2, val: 2, test: 4 }, ..presets::transfer_target() }, &Rng::new(1)).unwrap();
    let a = export_attention(&model, &t, "test", 64).unwrap();
    assert_eq!(a.matrix.shape(), &[1, 1]);
    assert!((a.matrix.data()[0] - 1.0).abs() < 1e-12);
    let none = FamaeModel::new(&ModelConfig { aux_depth: 0, ..small_model() }, &Rng::new(0)).unwrap();
    assert!(matches!(export_attention(&none, &t, "test", 4), Err(famae::Error::NoSecondEncoder)));
}

#[test]
fn duplicated_channel_draws_attention() {
    let cfg = SynthConfig {
        length: 100,
        sizes: SplitSizes { train: 24, val: 4, test: 16 },
        ..presets::redundancy_task()
    };
    let task = synth_generate(&cfg, &Rng::new(10)).unwrap();
    let pre = pretrain(&task, &small_model(), &PretrainConfig { epochs: 3, batch: 8, ..PretrainConfig::default() }, &Rng::new(11)).unwrap();
    let a = export_attention(&pre.model, &task, "test", 16).unwrap();
    assert_eq!(a.per_head.shape(), &[2, 3, 3]);
    let m = a.matrix.data();
    for r in 0..3 {
        let s: f64 = m[r * 3..r * 3 + 3].iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
        for h in 0..2 {
            let s: f64 = a.per_head.data()[(h * 3 + r) * 3..(h * 3 + r) * 3 + 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
    // channel 1 duplicates channel 0; channel 2 is noise
    assert!(m[3] + m[4] > m[5], "{m:?}");
    let dir = tempfile::tempdir().unwrap();
    save_attention(dir.path(), &a, &task.manifest.channels).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("attention.csv")).unwrap();
    assert!(csv.starts_with("channel,eeg,eeg_copy,noise"));
    assert_eq!(famae::data::load_f64_blob(&dir.path().join("attention.bin")).unwrap(), a.matrix);
}

#[test]
fn default_model_parameter_budget() {
    let model = FamaeModel::new(&ModelConfig::default(), &Rng::new(0)).unwrap();
    let n = count_params(&model) as f64;
    assert!((n / 243_000.0 - 1.0).abs() <= 0.15, "{n}");
}

#[test]
fn flop_estimator_matches_closed_form() {
    // query operator, n = 16, D = 4, H = 2: transforms 2·(5·16·4)·4, filter on 9 bins
    let want = 2.0 * 5.0 * 16.0 * 4.0 * 4.0 + 2.0 * 9.0 * 4.0 * 2.0 + 4.0 * 9.0 * 2.0 * 4.0 + 6.0 * 9.0 * 4.0;
    assert_eq!(freq_layer_flops(16, 4, 2, OperatorKind::Query), want as u64);
    for n in [64, 256, 1024] {
        let r = freq_layer_flops(2 * n, 64, 8, OperatorKind::Query) as f64 / freq_layer_flops(n, 64, 8, OperatorKind::Query) as f64;
        assert!(r > 2.0 && r < 2.5, "n={n}: {r}");
    }
    let c = ModelConfig::default();
    assert!(count_flops(&c, 2, 3000) > count_flops(&c, 1, 3000));
}

#[test]
fn results_files() {
    let dir = tempfile::tempdir().unwrap();
    let m = Metrics::from_confusion(&[vec![2, 0], vec![1, 1]]);
    let mut row = ResultRow::new("finetune", "scratch", &config_hash(&small_model()).unwrap(), 3, m);
    row.delta_accuracy = Some(-0.25);
    let p = dir.path().join("r.csv");
    write_results_csv(&p, &[row.clone()]).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "experiment,variant,config_hash,seed,accuracy,precision,recall,f1,delta_accuracy");
    assert!(lines.next().unwrap().starts_with("finetune,scratch,"));
    assert_eq!(row.config_hash.len(), 16);
}
