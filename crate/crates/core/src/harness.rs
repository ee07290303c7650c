//! Fine-tuning, evaluation, ablations, modality mismatch experiments,
//! attention export and cost accounting.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{save_f64_blob, DatasetBundle};
use crate::encoder::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::numerics::{Adam, Gradients, Graph, Rng, TensorF, Var};
use crate::pretrainer::{prepare_signals, pretrain, FamaeModel, PretrainConfig, ADAM_BETA1, ADAM_BETA2};
use crate::spectral::OperatorKind;

/// Macro-averaged classification metrics, all in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl Metrics {
    /// From a confusion matrix indexed `[true][predicted]`.
    pub fn from_confusion(cm: &[Vec<usize>]) -> Self {
        let k = cm.len();
        let total: usize = cm.iter().flatten().sum();
        let correct: usize = (0..k).map(|i| cm[i][i]).sum();
        let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
        for c in 0..k {
            let col: usize = cm.iter().map(|row| row[c]).sum();
            let row: usize = cm[c].iter().sum();
            let pc = ratio(cm[c][c], col);
            let rc = ratio(cm[c][c], row);
            let fc = if pc + rc > 0.0 { 2.0 * pc * rc / (pc + rc) } else { 0.0 };
            p += pc;
            r += rc;
            f += fc;
        }
        let k = k.max(1) as f64;
        Self {
            accuracy: ratio(correct, total),
            precision: p / k,
            recall: r / k,
            f1: f / k,
        }
    }

    pub fn from_predictions(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<Self> {
        let mut cm = vec![vec![0usize; n_classes]; n_classes];
        for (&t, &p) in truth.iter().zip(pred) {
            for y in [t, p] {
                if y >= n_classes {
                    return Err(Error::LabelOutOfRange { label: y, n_classes });
                }
            }
            cm[t][p] += 1;
        }
        Ok(Self::from_confusion(&cm))
    }
}

/// How per-channel pooled tokens become one feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combine {
    /// Average over channels, width `D`.
    Average,
    /// One `D`-wide block per channel slot, width `slots·D`.
    Concat,
}

#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub combine: Combine,
    pub slots: usize,
    pub n_classes: usize,
    pub linear: Linear,
}

/// Pretrained (or fresh) model plus a classification head.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub model: FamaeModel,
    pub head: ClassifierHead,
    pub keep_enc2: bool,
    /// Channel names in slot order, as seen at fine-tuning time.
    pub channels: Vec<String>,
}

impl Classifier {
    pub fn new(mut model: FamaeModel, channels: Vec<String>, n_classes: usize, keep_enc2: bool, rng: &Rng) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::EmptySubset);
        }
        model.mae.check_slots(&[channels.len() - 1])?;
        let combine = if channels.len() > 1 { Combine::Concat } else { Combine::Average };
        let slots = channels.len();
        let d = model.cfg.width;
        let fan_in = match combine {
            Combine::Average => d,
            Combine::Concat => slots * d,
        };
        let mut r = rng.substream("head");
        let linear = Linear::new(&mut model.store, "head", fan_in, n_classes, &mut r);
        Ok(Self {
            model,
            head: ClassifierHead {
                combine,
                slots,
                n_classes,
                linear,
            },
            keep_enc2,
            channels,
        })
    }

    /// Slot of each named channel.
    pub fn slots_for<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.channels
                    .iter()
                    .position(|c| c == n.as_ref())
                    .ok_or_else(|| Error::UnknownChannel(n.as_ref().to_string()))
            })
            .collect()
    }

    /// Mean-pooled `[1 x D]` representation per given channel.
    pub fn channel_features(&self, g: &mut Graph, chans: &[&[f64]], slots: &[usize]) -> Result<Vec<Var>> {
        if self.keep_enc2 {
            let (h, _, n_tokens) = self.model.encode_joint(g, chans, slots)?;
            let mut off = 0;
            Ok(n_tokens
                .iter()
                .map(|&n| {
                    let part = g.slice_rows(h, off, n);
                    off += n;
                    g.mean_rows(part)
                })
                .collect())
        } else {
            chans
                .iter()
                .map(|s| {
                    let t = self.model.fa.encode(g, s)?;
                    Ok(g.mean_rows(t))
                })
                .collect()
        }
    }

    /// `[1 x n_classes]` logits for one multichannel window.
    pub fn logits(&self, g: &mut Graph, chans: &[&[f64]], slots: &[usize]) -> Result<Var> {
        if chans.is_empty() {
            return Err(Error::EmptySubset);
        }
        let feats = self.channel_features(g, chans, slots)?;
        let mean = |g: &mut Graph, v: &[Var]| {
            if v.len() == 1 {
                v[0]
            } else {
                let s = g.concat_rows(v);
                g.mean_rows(s)
            }
        };
        let x = match self.head.combine {
            Combine::Average => mean(g, &feats),
            Combine::Concat => {
                // absent slots take the mean of the present channels
                let mut fill = None;
                let mut blocks = Vec::with_capacity(self.head.slots);
                for s in 0..self.head.slots {
                    match slots.iter().position(|&x| x == s) {
                        Some(i) => blocks.push(feats[i]),
                        None => {
                            let f = *fill.get_or_insert_with(|| mean(g, &feats));
                            blocks.push(f);
                        }
                    }
                }
                g.concat_cols(&blocks)
            }
        };
        Ok(self.head.linear.forward(g, x))
    }

    /// Predicted labels for a standardized `[num x C x L]` tensor.
    pub fn predict(&self, signals: &TensorF, slots: &[usize]) -> Result<Vec<usize>> {
        let &[num, c, l] = signals.shape() else {
            return Err(Error::Shape(format!("expected [num x C x L], got {:?}", signals.shape())));
        };
        (0..num)
            .map(|i| {
                let chans: Vec<&[f64]> = (0..c)
                    .map(|j| &signals.data()[(i * c + j) * l..(i * c + j + 1) * l])
                    .collect();
                let mut g = Graph::new(&self.model.store);
                let y = self.logits(&mut g, &chans, slots)?;
                Ok(argmax(g.value(y)))
            })
            .collect()
    }
}

/// Index of the largest value; ties resolve to the smallest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Keep the second encoder; unset means keep it for multichannel
    /// targets only.
    pub keep_enc2: Option<bool>,
    /// Target channels in slot order; empty means all.
    pub channels: Vec<String>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            batch: 64,
            lr: 1e-3,
            keep_enc2: None,
            channels: Vec::new(),
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("finetune.batch must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("finetune.lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub classifier: Classifier,
    pub test: Metrics,
    pub val: Metrics,
    /// Epoch-mean training cross entropy.
    pub losses: Vec<f64>,
}

fn target_channels(target: &DatasetBundle, cfg: &FinetuneConfig) -> Vec<String> {
    if cfg.channels.is_empty() {
        target.manifest.channels.clone()
    } else {
        cfg.channels.clone()
    }
}

/// Fine-tune every weight on the target's train split, then evaluate on
/// val and test. `pretrained == None` trains from scratch.
pub fn finetune(
    pretrained: Option<&FamaeModel>,
    target: &DatasetBundle,
    model_cfg: &ModelConfig,
    cfg: &FinetuneConfig,
    rng: &Rng,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    let channels = target_channels(target, cfg);
    let model = match pretrained {
        Some(m) => m.clone(),
        None => FamaeModel::new(model_cfg, rng)?,
    };
    let keep_enc2 = cfg.keep_enc2.unwrap_or(channels.len() > 1);
    let mut clf = Classifier::new(model, channels.clone(), target.manifest.n_classes, keep_enc2, rng)?;
    let losses = train_classifier(&mut clf, target, cfg, rng)?;
    let view = target.select_channels(&channels)?;
    Ok(FinetuneOutcome {
        val: evaluate(&clf, &view, "val")?,
        test: evaluate(&clf, &view, "test")?,
        classifier: clf,
        losses,
    })
}

/// Cross-entropy training of an existing classifier on `target`'s train split.
pub fn train_classifier(clf: &mut Classifier, target: &DatasetBundle, cfg: &FinetuneConfig, rng: &Rng) -> Result<Vec<f64>> {
    if clf.head.n_classes != target.manifest.n_classes {
        return Err(Error::ClassCountMismatch {
            head: clf.head.n_classes,
            data: target.manifest.n_classes,
        });
    }
    let signals = prepare_signals(target, "train", &clf.channels)?;
    let labels = &target.split("train")?.labels;
    let &[num, c, l] = signals.shape() else { unreachable!() };
    let slots: Vec<usize> = (0..c).collect();
    let drop_rng = rng.substream("finetune-dropout");
    let mut shuffle_rng = rng.substream("finetune-shuffle");
    let mut adam = Adam::new(cfg.lr, ADAM_BETA1, ADAM_BETA2);
    let mut order: Vec<usize> = (0..num).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let mut grads = Gradients::new(clf.model.store.len());
            let mut batch_loss = 0.0;
            for (b, &i) in chunk.iter().enumerate() {
                let chans: Vec<&[f64]> = (0..c)
                    .map(|j| &signals.data()[(i * c + j) * l..(i * c + j + 1) * l])
                    .collect();
                let mut g = Graph::training(&clf.model.store, drop_rng.child(step).child(b as u64));
                let logits = clf.logits(&mut g, &chans, &slots)?;
                let ce = g.cross_entropy(logits, labels[i]);
                let loss = g.scale(ce, 1.0 / chunk.len() as f64);
                batch_loss += g.scalar(loss);
                grads.merge(&g.backward(loss)?);
            }
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged { epoch, loss: batch_loss });
            }
            adam.step(&mut clf.model.store, &grads);
            epoch_loss += batch_loss * chunk.len() as f64;
            step += 1;
        }
        let mean = epoch_loss / num.max(1) as f64;
        log::info!("finetune epoch {epoch}: loss {mean:.6}");
        losses.push(mean);
    }
    Ok(losses)
}

/// Metrics on one split. The bundle's channels may be any subset of the
/// classifier's channels, in any order.
pub fn evaluate(clf: &Classifier, data: &DatasetBundle, split: &str) -> Result<Metrics> {
    let slots = clf.slots_for(&data.manifest.channels)?;
    let s = data.split(split)?;
    if s.is_empty() {
        return Err(Error::SizeMismatch {
            split: split.into(),
            what: "split is empty".into(),
        });
    }
    let signals = prepare_signals(data, split, &[])?;
    let pred = clf.predict(&signals, &slots)?;
    Metrics::from_predictions(&s.labels, &pred, data.manifest.n_classes)
}

/// One row of a mismatch experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchRow {
    pub label: String,
    pub channels: Vec<String>,
    pub metrics: Metrics,
    /// Accuracy minus the baseline accuracy.
    pub delta_accuracy: f64,
}

/// Re-fine-tune with one channel swapped for another, per row. The first
/// returned row is the unswapped baseline.
pub fn modality_substitution(
    pretrained: Option<&FamaeModel>,
    target: &DatasetBundle,
    model_cfg: &ModelConfig,
    cfg: &FinetuneConfig,
    base: &[String],
    substitutions: &[(String, String)],
    rng: &Rng,
) -> Result<Vec<MismatchRow>> {
    if base.is_empty() {
        return Err(Error::EmptySubset);
    }
    for name in base.iter().chain(substitutions.iter().flat_map(|(a, b)| [a, b])) {
        target.channel_index(name)?;
    }
    let run = |channels: Vec<String>| -> Result<Metrics> {
        let c = FinetuneConfig {
            channels,
            ..cfg.clone()
        };
        Ok(finetune(pretrained, target, model_cfg, &c, rng)?.test)
    };
    let baseline = run(base.to_vec())?;
    let mut rows = vec![MismatchRow {
        label: "baseline".into(),
        channels: base.to_vec(),
        metrics: baseline,
        delta_accuracy: 0.0,
    }];
    for (from, to) in substitutions {
        let pos = base
            .iter()
            .position(|c| c == from)
            .ok_or_else(|| Error::UnknownChannel(from.clone()))?;
        let mut channels = base.to_vec();
        channels[pos] = to.clone();
        let m = run(channels.clone())?;
        rows.push(MismatchRow {
            label: format!("{from}->{to}"),
            channels,
            metrics: m,
            delta_accuracy: m.accuracy - baseline.accuracy,
        });
    }
    Ok(rows)
}

/// Fine-tune on `full`, then evaluate on each channel subset. The first
/// returned row is the full set.
pub fn modality_dropout(
    pretrained: Option<&FamaeModel>,
    target: &DatasetBundle,
    model_cfg: &ModelConfig,
    cfg: &FinetuneConfig,
    full: &[String],
    subsets: &[Vec<String>],
    rng: &Rng,
) -> Result<Vec<MismatchRow>> {
    if full.is_empty() || subsets.iter().any(Vec::is_empty) {
        return Err(Error::EmptySubset);
    }
    let c = FinetuneConfig {
        channels: full.to_vec(),
        ..cfg.clone()
    };
    let out = finetune(pretrained, target, model_cfg, &c, rng)?;
    dropout_rows(&out.classifier, target, full, subsets)
}

/// Evaluate an already fine-tuned classifier on channel subsets.
pub fn dropout_rows(clf: &Classifier, target: &DatasetBundle, full: &[String], subsets: &[Vec<String>]) -> Result<Vec<MismatchRow>> {
    let baseline = evaluate(clf, &target.select_channels(full)?, "test")?;
    let mut rows = vec![MismatchRow {
        label: "full".into(),
        channels: full.to_vec(),
        metrics: baseline,
        delta_accuracy: 0.0,
    }];
    for subset in subsets {
        let m = evaluate(clf, &target.select_channels(subset)?, "test")?;
        rows.push(MismatchRow {
            label: subset.join("+"),
            channels: subset.clone(),
            metrics: m,
            delta_accuracy: m.accuracy - baseline.accuracy,
        });
    }
    Ok(rows)
}

/// Channel-level attention of the second encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionExport {
    /// `[C x C]`: row channel's average attention mass on each column channel.
    pub matrix: TensorF,
    /// `[heads x C x C]`, averaged over layers and samples.
    pub per_head: TensorF,
}

/// Block-averaged second-encoder attention over the given split.
/// `max_samples` caps how many windows are averaged.
pub fn export_attention(
    model: &FamaeModel,
    data: &DatasetBundle,
    split: &str,
    max_samples: usize,
) -> Result<AttentionExport> {
    if model.cfg.aux_depth == 0 {
        return Err(Error::NoSecondEncoder);
    }
    let signals = prepare_signals(data, split, &[])?;
    let &[num, c, l] = signals.shape() else { unreachable!() };
    let num = num.min(max_samples.max(1));
    if num == 0 {
        return Err(Error::SizeMismatch {
            split: split.into(),
            what: "split is empty".into(),
        });
    }
    let slots: Vec<usize> = (0..c).collect();
    let heads = model.cfg.aux_heads;
    let mut per_head = vec![0.0; heads * c * c];
    for i in 0..num {
        let chans: Vec<&[f64]> = (0..c)
            .map(|j| &signals.data()[(i * c + j) * l..(i * c + j + 1) * l])
            .collect();
        let mut g = Graph::new(&model.store);
        let (_, attn, n_tokens) = model.encode_joint(&mut g, &chans, &slots)?;
        let t: usize = n_tokens.iter().sum();
        let mut bounds = vec![0];
        for n in &n_tokens {
            bounds.push(bounds.last().unwrap() + n);
        }
        for layer in &attn {
            for (h, &a) in layer.iter().enumerate() {
                let v = g.value(a);
                for (ri, rw) in bounds.windows(2).enumerate() {
                    for q in rw[0]..rw[1] {
                        let row = &v[q * t..(q + 1) * t];
                        for (ci, cw) in bounds.windows(2).enumerate() {
                            let mass: f64 = row[cw[0]..cw[1]].iter().sum();
                            per_head[(h * c + ri) * c + ci] += mass / n_tokens[ri] as f64;
                        }
                    }
                }
            }
        }
    }
    let layers = model.cfg.aux_depth as f64;
    per_head.iter_mut().for_each(|v| *v /= layers * num as f64);
    let mut matrix = vec![0.0; c * c];
    for h in 0..heads {
        for k in 0..c * c {
            matrix[k] += per_head[h * c * c + k] / heads as f64;
        }
    }
    Ok(AttentionExport {
        matrix: TensorF::new(vec![c, c], matrix)?,
        per_head: TensorF::new(vec![heads, c, c], per_head)?,
    })
}

pub fn save_attention(dir: &Path, export: &AttentionExport, channels: &[String]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_f64_blob(&dir.join("attention.bin"), &export.matrix)?;
    save_f64_blob(&dir.join("attention_heads.bin"), &export.per_head)?;
    let c = channels.len();
    let mut w = csv::Writer::from_path(dir.join("attention.csv"))?;
    let mut header = vec!["channel".to_string()];
    header.extend(channels.iter().cloned());
    w.write_record(&header)?;
    for (i, name) in channels.iter().enumerate() {
        let mut rec = vec![name.clone()];
        rec.extend(export.matrix.data()[i * c..(i + 1) * c].iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Which parts of the method are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationToggles {
    /// Frequency filter layer (off: self-attention token mixing).
    pub fa_on: bool,
    /// Latent-space masking (off: patches removed before the encoder).
    pub fm_on: bool,
    /// Keep the second encoder when fine-tuning; unset picks by channel count.
    pub keep_enc2: Option<bool>,
}

impl Default for AblationToggles {
    fn default() -> Self {
        Self {
            fa_on: true,
            fm_on: true,
            keep_enc2: None,
        }
    }
}

/// Outcome of pretraining (optional) followed by fine-tuning.
#[derive(Debug, Clone)]
pub struct TransferRun {
    pub pretrain_losses: Vec<f64>,
    pub finetune: FinetuneOutcome,
    pub n_params: usize,
}

/// Pretrain on `pretrain_data` (skipped when `None`) and fine-tune on
/// `target`, with the toggles applied to both stages.
pub fn transfer_run(
    pretrain_data: Option<&DatasetBundle>,
    target: &DatasetBundle,
    model_cfg: &ModelConfig,
    pre_cfg: &PretrainConfig,
    ft_cfg: &FinetuneConfig,
    toggles: AblationToggles,
    rng: &Rng,
) -> Result<TransferRun> {
    let model_cfg = ModelConfig {
        fa_on: toggles.fa_on,
        ..model_cfg.clone()
    };
    let pre_cfg = PretrainConfig {
        fm_on: toggles.fm_on,
        ..pre_cfg.clone()
    };
    let ft_cfg = FinetuneConfig {
        keep_enc2: toggles.keep_enc2.or(ft_cfg.keep_enc2),
        ..ft_cfg.clone()
    };
    let (pretrained, losses) = match pretrain_data {
        Some(d) => {
            let out = pretrain(d, &model_cfg, &pre_cfg, &rng.substream("pretrain"))?;
            (Some(out.model), out.losses)
        }
        None => (None, Vec::new()),
    };
    let ft = finetune(pretrained.as_ref(), target, &model_cfg, &ft_cfg, &rng.substream("finetune"))?;
    Ok(TransferRun {
        pretrain_losses: losses,
        n_params: count_params(&ft.classifier.model),
        finetune: ft,
    })
}

/// Trainable scalars in the model (encoder, autoencoder, and any head).
pub fn count_params(model: &FamaeModel) -> usize {
    model.store.count()
}

fn fft_flops(n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        5.0 * n as f64 * (n as f64).log2()
    }
}

/// Analytic cost of one frequency filter layer on `[n x width]` tokens:
/// forward and inverse transforms plus the spectral modulation.
pub fn freq_layer_flops(n: usize, width: usize, heads: usize, kind: OperatorKind) -> u64 {
    let nf = (n / 2 + 1) as f64;
    let (d, h) = (width as f64, heads as f64);
    let transforms = 2.0 * fft_flops(n) * d;
    let filter = match kind {
        // Re(Z)·W, then the complex Q·K, then Z ⊙ M
        OperatorKind::Query => 2.0 * nf * d * h + 2.0 * 2.0 * nf * h * d + 6.0 * nf * d,
        // H complex products plus H moduli per element
        OperatorKind::Maxpool => h * (6.0 + 3.0) * nf * d,
    };
    (transforms + filter).round() as u64
}

fn linear_flops(rows: usize, fan_in: usize, fan_out: usize) -> f64 {
    2.0 * (rows * fan_in * fan_out) as f64
}

fn transformer_flops(t: usize, d: usize, mlp: usize, depth: usize) -> f64 {
    let t = t as f64;
    let per_layer = linear_flops(1, d, 3 * d) * t
        + 2.0 * 2.0 * t * t * d as f64
        + linear_flops(1, d, d) * t
        + (linear_flops(1, d, mlp) + linear_flops(1, mlp, d)) * t;
    per_layer * depth as f64
}

/// Analytic forward cost of the full autoencoder on `channels` windows of
/// `length` samples with nothing masked. Multiply-adds count as 2 ops.
pub fn count_flops(cfg: &ModelConfig, channels: usize, length: usize) -> u64 {
    let (d, p) = (cfg.width, cfg.patch);
    let n = length.div_ceil(p);
    let t = n * channels;
    let embed = linear_flops(n, p, d) + linear_flops(n, d, d);
    let mixer = if cfg.fa_on {
        freq_layer_flops(n, d, cfg.heads, cfg.operator_kind) as f64
    } else {
        transformer_flops(n, d, 0, 1)
    };
    let block = mixer + linear_flops(n, d, cfg.mlp_dim) + linear_flops(n, cfg.mlp_dim, d);
    let fa = (embed + block * cfg.depth as f64) * channels as f64;
    let aux = 2.0 * transformer_flops(t, d, cfg.aux_mlp_dim, cfg.aux_depth);
    let heads = linear_flops(t, d, d) + linear_flops(t, d, p);
    (fa + aux + heads).round() as u64
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub variant: String,
    pub config_hash: String,
    pub seed: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub delta_accuracy: Option<f64>,
}

impl ResultRow {
    pub fn new(experiment: &str, variant: &str, config_hash: &str, seed: u64, m: Metrics) -> Self {
        Self {
            experiment: experiment.into(),
            variant: variant.into(),
            config_hash: config_hash.into(),
            seed,
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            delta_accuracy: None,
        }
    }
}

/// First 16 hex digits of the SHA-256 of the value's JSON form.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(&Sha256::digest(&bytes)[..8]))
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}
