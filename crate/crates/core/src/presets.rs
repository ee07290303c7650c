//! Desk-scale model and synthetic task presets.
//!
//! The pretraining corpus has three modalities with disjoint frequency
//! vocabularies. The few-shot transfer target is a single noisy channel
//! whose classes are told apart by frequencies drawn from more than one of
//! those vocabularies.

use crate::data::{SplitSizes, SynthChannel, SynthConfig};
use crate::encoder::ModelConfig;
use crate::harness::FinetuneConfig;
use crate::pretrainer::PretrainConfig;

/// A model small enough to pretrain and fine-tune in seconds.
pub fn desk_model() -> ModelConfig {
    ModelConfig {
        depth: 2,
        width: 32,
        heads: 4,
        patch: 10,
        mlp_dim: 64,
        dropout: 0.1,
        aux_depth: 1,
        aux_heads: 4,
        aux_mlp_dim: 64,
        max_channels: 4,
        ..ModelConfig::default()
    }
}

pub fn desk_pretrain() -> PretrainConfig {
    PretrainConfig {
        epochs: 100,
        batch: 8,
        ..PretrainConfig::default()
    }
}

pub fn desk_finetune() -> FinetuneConfig {
    FinetuneConfig {
        epochs: 60,
        batch: 16,
        lr: 3e-4,
        ..FinetuneConfig::default()
    }
}

fn channel(name: &str, bands: &[f64], snr: Option<f64>) -> SynthChannel {
    SynthChannel {
        name: name.into(),
        bands: bands.iter().map(|&f| vec![f]).collect(),
        band_width_hz: 1.0,
        snr,
        duplicate_of: None,
    }
}

fn noise(name: &str) -> SynthChannel {
    SynthChannel {
        name: name.into(),
        bands: Vec::new(),
        band_width_hz: 1.0,
        snr: None,
        duplicate_of: None,
    }
}

/// Unlabelled-in-spirit multimodal corpus used for pretraining.
pub fn pretrain_corpus() -> SynthConfig {
    SynthConfig {
        name: "corpus".into(),
        n_classes: 4,
        length: 300,
        sampling_rate_hz: 100.0,
        noise_exponent: 1.0,
        shared_latent: true,
        channels: vec![
            channel("eeg", &[3.0, 8.0, 12.0, 20.0], Some(2.0)),
            channel("eog", &[1.5, 5.0, 10.0, 15.0], Some(2.0)),
            channel("emg", &[25.0, 30.0, 35.0, 40.0], Some(2.0)),
        ],
        sizes: SplitSizes {
            train: 300,
            val: 10,
            test: 10,
        },
    }
}

/// Few-shot single-channel target (train 60 / val 20 / test 500).
pub fn transfer_target() -> SynthConfig {
    SynthConfig {
        name: "target".into(),
        n_classes: 3,
        length: 300,
        sampling_rate_hz: 100.0,
        noise_exponent: 1.0,
        shared_latent: true,
        channels: vec![channel("eeg", &[8.0, 15.0, 30.0], Some(0.1))],
        sizes: SplitSizes::default(),
    }
}

/// Multichannel target with one informative channel, an exact copy of it,
/// and a pure-noise channel.
pub fn redundancy_task() -> SynthConfig {
    let mut dup = noise("eeg_copy");
    dup.duplicate_of = Some("eeg".into());
    SynthConfig {
        name: "redundant".into(),
        n_classes: 3,
        length: 300,
        sampling_rate_hz: 100.0,
        noise_exponent: 1.0,
        shared_latent: true,
        channels: vec![channel("eeg", &[5.0, 10.0, 20.0], Some(1.0)), dup, noise("noise")],
        sizes: SplitSizes {
            train: 90,
            val: 20,
            test: 300,
        },
    }
}

/// Multichannel target whose class information lives in one channel only.
pub fn single_informative_task() -> SynthConfig {
    SynthConfig {
        name: "single-informative".into(),
        channels: vec![
            channel("eeg", &[5.0, 10.0, 20.0], Some(1.0)),
            noise("noise_a"),
            noise("noise_b"),
        ],
        ..redundancy_task()
    }
}
