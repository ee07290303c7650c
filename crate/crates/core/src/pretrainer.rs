//! Masked autoencoding in latent space.
//!
//! Every channel is encoded in full by the shared frequency-aware encoder.
//! Token masks are then drawn per channel, the kept tokens of all channels
//! are concatenated (with positional and channel embeddings) and fed to a
//! small transformer encoder, the full grid is rebuilt with a learned mask
//! token in the masked slots, decoded, and projected back to patches. The
//! loss is the mean per-patch MSE over the union of masked tokens.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{standardize, DatasetBundle};
use crate::encoder::{patchify, FaEncoder, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{sinusoidal_positions, Linear, Transformer};
use crate::numerics::{Adam, Gradients, Graph, ParamId, ParamStore, Rng, TensorF, Var};
use crate::spectral::FILTER_INIT_STD;

/// Fraction of tokens masked in each channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub ratio: f64,
}

impl MaskSpec {
    pub fn new(ratio: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::InvalidMaskRatio(ratio));
        }
        Ok(Self { ratio })
    }

    pub fn n_masked(&self, n_tokens: usize) -> usize {
        (self.ratio * n_tokens as f64).round() as usize
    }
}

/// Sorted indices of the masked tokens, drawn uniformly without replacement.
pub fn sample_mask(n_tokens: usize, spec: MaskSpec, rng: &mut Rng) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&spec.ratio) {
        return Err(Error::InvalidMaskRatio(spec.ratio));
    }
    let k = spec.n_masked(n_tokens);
    if k >= n_tokens {
        return Err(Error::NoKeptTokens {
            ratio: spec.ratio,
            n_tokens,
        });
    }
    Ok(rng.sample_indices(n_tokens, k))
}

/// One independent mask per channel, channel `c` drawn from `rng.child(c)`.
pub fn sample_channel_masks(n_tokens: &[usize], spec: MaskSpec, rng: &Rng) -> Result<Vec<Vec<usize>>> {
    n_tokens
        .iter()
        .enumerate()
        .map(|(c, &n)| sample_mask(n, spec, &mut rng.child(c as u64)))
        .collect()
}

/// A batch of multichannel windows, `[B x C x L]`.
#[derive(Debug, Clone)]
pub struct PretrainBatch {
    pub signals: TensorF,
    pub channel_names: Vec<String>,
}

/// Second encoder, decoder, and the embeddings around them.
#[derive(Debug, Clone)]
pub struct MaskedAutoencoder {
    pub enc2: Transformer,
    pub dec_embed: Linear,
    pub dec: Transformer,
    pub mask_token: ParamId,
    pub chan_embed: ParamId,
    pub recon_head: Linear,
    pub width: usize,
    pub max_channels: usize,
}

impl MaskedAutoencoder {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let d = cfg.width;
        let tr = |store: &mut ParamStore, name: &str, rng: &mut Rng| {
            Transformer::new(
                store,
                &format!("{prefix}.{name}"),
                cfg.aux_depth,
                d,
                cfg.aux_heads,
                cfg.aux_mlp_dim,
                cfg.dropout,
                rng,
            )
        };
        let enc2 = tr(store, "enc2", rng);
        let dec_embed = Linear::new(store, &format!("{prefix}.dec_embed"), d, d, rng);
        let dec = tr(store, "dec", rng);
        Self {
            enc2,
            dec_embed,
            dec,
            mask_token: store.normal(format!("{prefix}.mask_token"), 1, d, FILTER_INIT_STD, rng),
            chan_embed: store.normal(format!("{prefix}.chan_embed"), cfg.max_channels, d, FILTER_INIT_STD, rng),
            recon_head: Linear::new(store, &format!("{prefix}.recon_head"), d, cfg.patch, rng),
            width: d,
            max_channels: cfg.max_channels,
        }
    }

    /// Positional plus channel embedding for `n` tokens in `slot`, `[n x D]`.
    pub fn embedding(&self, g: &mut Graph, n: usize, slot: usize) -> Var {
        let pos = g.constant(n, self.width, sinusoidal_positions(n, self.width));
        let table = g.param(self.chan_embed);
        let ch = g.gather_rows(table, &vec![slot; n]);
        g.add(pos, ch)
    }

    pub fn check_slots(&self, slots: &[usize]) -> Result<()> {
        match slots.iter().max() {
            Some(&m) if m >= self.max_channels => Err(Error::TooManyChannels {
                channels: m + 1,
                slots: self.max_channels,
            }),
            _ => Ok(()),
        }
    }
}

/// The encoder and the autoencoder around it, sharing one parameter store.
#[derive(Debug, Clone)]
pub struct FamaeModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub fa: FaEncoder,
    pub mae: MaskedAutoencoder,
}

/// Graph handles produced by [`FamaeModel::mae_forward`].
#[derive(Debug, Clone)]
pub struct MaeOutput {
    /// Patch predictions for every token of every channel, `[ΣN_c x P]`.
    pub recon: Var,
    /// Patchified inputs, same layout as `recon`.
    pub targets: Vec<f64>,
    pub n_tokens: Vec<usize>,
    /// Second-encoder attention, `[layer][head]`.
    pub attention: Vec<Vec<Var>>,
    /// Per channel, the patch matrix fed to the encoder.
    pub inputs: Vec<Var>,
    /// Per channel, the encoder's output tokens.
    pub tokens: Vec<Var>,
}

impl FamaeModel {
    pub fn new(cfg: &ModelConfig, rng: &Rng) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut r = rng.substream("init");
        let fa = FaEncoder::new(&mut store, "fa", cfg, &mut r);
        let mae = MaskedAutoencoder::new(&mut store, "mae", cfg, &mut r);
        Ok(Self {
            cfg: cfg.clone(),
            store,
            fa,
            mae,
        })
    }

    /// One multichannel window through the autoencoder. `masks[c]` lists the
    /// masked token indices of channel `c`; `slots[c]` picks its channel
    /// embedding. With `fm_on == false` the masked patches are removed before
    /// the encoder instead of after it.
    pub fn mae_forward(
        &self,
        g: &mut Graph,
        channels: &[&[f64]],
        slots: &[usize],
        masks: &[Vec<usize>],
        fm_on: bool,
    ) -> Result<MaeOutput> {
        if channels.len() != slots.len() || channels.len() != masks.len() {
            return Err(Error::Shape(format!(
                "{} channels, {} slots, {} masks",
                channels.len(),
                slots.len(),
                masks.len()
            )));
        }
        self.mae.check_slots(slots)?;
        let p = self.cfg.patch;
        let mut targets = Vec::new();
        let mut n_tokens = Vec::with_capacity(channels.len());
        let mut embs = Vec::with_capacity(channels.len());
        let mut kept_rows = Vec::new();
        let mut masked_flags = Vec::with_capacity(channels.len());
        let mut inputs = Vec::with_capacity(channels.len());
        let mut tokens = Vec::with_capacity(channels.len());
        for ((sig, &slot), mask) in channels.iter().zip(slots).zip(masks) {
            let patches = patchify(sig, self.fa.patch)?;
            let n = patches.shape()[0];
            let mut masked = vec![false; n];
            for &i in mask {
                if i >= n {
                    return Err(Error::Shape(format!("mask index {i} out of {n} tokens")));
                }
                masked[i] = true;
            }
            let kept: Vec<usize> = (0..n).filter(|&i| !masked[i]).collect();
            if kept.is_empty() {
                return Err(Error::NoKeptTokens {
                    ratio: mask.len() as f64 / n as f64,
                    n_tokens: n,
                });
            }
            let emb = self.mae.embedding(g, n, slot);
            if fm_on {
                let pv = g.constant(n, p, patches.data().to_vec());
                let tok = self.fa.encode_patches(g, pv);
                let x = g.add(tok, emb);
                kept_rows.extend(kept.iter().map(|&i| (x, i)));
                inputs.push(pv);
                tokens.push(tok);
            } else {
                let kp: Vec<f64> = kept
                    .iter()
                    .flat_map(|&i| patches.data()[i * p..(i + 1) * p].iter().copied())
                    .collect();
                let pv = g.constant(kept.len(), p, kp);
                let tok = self.fa.encode_patches(g, pv);
                let e = g.gather_rows(emb, &kept);
                let x = g.add(tok, e);
                kept_rows.extend((0..kept.len()).map(|i| (x, i)));
                inputs.push(pv);
                tokens.push(tok);
            }
            targets.extend_from_slice(patches.data());
            n_tokens.push(n);
            embs.push(emb);
            masked_flags.push(masked);
        }

        let h = g.rows_from(kept_rows);
        let (h, attention) = self.mae.enc2.forward(g, h);
        let h = self.mae.dec_embed.forward(g, h);
        let mtok = g.param(self.mae.mask_token);
        let mut grid = Vec::with_capacity(targets.len() / p);
        let mut next = 0;
        for masked in &masked_flags {
            for &m in masked {
                if m {
                    grid.push((mtok, 0));
                } else {
                    grid.push((h, next));
                    next += 1;
                }
            }
        }
        let grid = g.rows_from(grid);
        let emb = if embs.len() == 1 { embs[0] } else { g.concat_rows(&embs) };
        let x = g.add(grid, emb);
        let (x, _) = self.mae.dec.forward(g, x);
        let recon = self.mae.recon_head.forward(g, x);
        Ok(MaeOutput {
            recon,
            targets,
            n_tokens,
            attention,
            inputs,
            tokens,
        })
    }

    /// Encode every channel in full, add embeddings, and run the second
    /// encoder over the concatenation of all tokens (no masking). Returns
    /// `[ΣN_c x D]` tokens, attention `[layer][head]`, and `N_c` per channel.
    pub fn encode_joint(
        &self,
        g: &mut Graph,
        channels: &[&[f64]],
        slots: &[usize],
    ) -> Result<(Var, Vec<Vec<Var>>, Vec<usize>)> {
        if channels.len() != slots.len() || channels.is_empty() {
            return Err(Error::Shape(format!("{} channels, {} slots", channels.len(), slots.len())));
        }
        self.mae.check_slots(slots)?;
        let mut parts = Vec::with_capacity(channels.len());
        let mut n_tokens = Vec::with_capacity(channels.len());
        for (sig, &slot) in channels.iter().zip(slots) {
            let tok = self.fa.encode(g, sig)?;
            let n = g.rows(tok);
            let emb = self.mae.embedding(g, n, slot);
            parts.push(g.add(tok, emb));
            n_tokens.push(n);
        }
        let x = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts) };
        let (h, attn) = self.mae.enc2.forward(g, x);
        Ok((h, attn, n_tokens))
    }

    /// Evaluation-mode autoencoding of a batch. Returns reconstructions and
    /// targets as `[B x C x N x P]` and the masks in `(b, c)` row-major order.
    pub fn mae_forward_batch(
        &self,
        batch: &PretrainBatch,
        spec: MaskSpec,
        rng: &Rng,
        fm_on: bool,
    ) -> Result<(TensorF, TensorF, Vec<Vec<usize>>)> {
        let &[b, c, l] = batch.signals.shape() else {
            return Err(Error::Shape(format!("batch must be [B x C x L], got {:?}", batch.signals.shape())));
        };
        let n = self.fa.patch.n_patches(l);
        let p = self.cfg.patch;
        let slots: Vec<usize> = (0..c).collect();
        let mut recon = Vec::with_capacity(b * c * n * p);
        let mut targets = Vec::with_capacity(b * c * n * p);
        let mut omega = Vec::with_capacity(b * c);
        for i in 0..b {
            let chans: Vec<&[f64]> = (0..c)
                .map(|j| &batch.signals.data()[(i * c + j) * l..(i * c + j + 1) * l])
                .collect();
            let masks = sample_channel_masks(&vec![n; c], spec, &rng.child(i as u64))?;
            let mut g = Graph::new(&self.store);
            let out = self.mae_forward(&mut g, &chans, &slots, &masks, fm_on)?;
            recon.extend_from_slice(g.value(out.recon));
            targets.extend(out.targets);
            omega.extend(masks);
        }
        Ok((
            TensorF::new(vec![b, c, n, p], recon)?,
            TensorF::new(vec![b, c, n, p], targets)?,
            omega,
        ))
    }
}

/// Mean over masked tokens of the per-patch MSE. `recon` and `targets` are
/// `[..., N, P]`; `omega` has one index set per leading `[...]` group.
pub fn mae_loss(recon: &TensorF, targets: &TensorF, omega: &[Vec<usize>]) -> Result<f64> {
    if recon.shape() != targets.shape() || recon.rank() < 2 {
        return Err(Error::Shape(format!(
            "recon {:?} vs targets {:?}",
            recon.shape(),
            targets.shape()
        )));
    }
    let r = recon.rank();
    let (n, p) = (recon.shape()[r - 2], recon.shape()[r - 1]);
    let groups = recon.len() / (n * p).max(1);
    if omega.len() != groups {
        return Err(Error::Shape(format!("{} mask sets for {groups} channel groups", omega.len())));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (gi, set) in omega.iter().enumerate() {
        for &i in set {
            if i >= n {
                return Err(Error::Shape(format!("mask index {i} out of {n} tokens")));
            }
            let off = (gi * n + i) * p;
            let se: f64 = (off..off + p)
                .map(|k| (recon.data()[k] - targets.data()[k]).powi(2))
                .sum();
            total += se / p as f64;
            count += 1;
        }
    }
    if count == 0 {
        warn!("empty mask set; reconstruction loss defined as 0");
        return Ok(0.0);
    }
    Ok(total / count as f64)
}

/// Sum over masked tokens of per-patch MSE, divided by `normalizer`.
/// `None` when nothing is masked.
pub fn mae_loss_var(
    g: &mut Graph,
    out: &MaeOutput,
    masks: &[Vec<usize>],
    patch: usize,
    normalizer: usize,
) -> Option<Var> {
    let mut rows = Vec::new();
    let mut offset = 0;
    for (mask, &n) in masks.iter().zip(&out.n_tokens) {
        rows.extend(mask.iter().map(|&i| offset + i));
        offset += n;
    }
    if rows.is_empty() {
        return None;
    }
    let pred = g.gather_rows(out.recon, &rows);
    let tgt: Vec<f64> = rows
        .iter()
        .flat_map(|&r| out.targets[r * patch..(r + 1) * patch].iter().copied())
        .collect();
    let tgt = g.constant(rows.len(), patch, tgt);
    let diff = g.sub(pred, tgt);
    let sq = g.mul(diff, diff);
    let s = g.sum(sq);
    Some(g.scale(s, 1.0 / (patch * normalizer) as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub mask_ratio: f64,
    /// Channels used for pretraining; empty means all.
    pub channels: Vec<String>,
    /// Mask in latent space (`true`) or drop patches before the encoder.
    pub fm_on: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch: 128,
            lr: 1e-3,
            mask_ratio: 0.5,
            channels: Vec::new(),
            fm_on: true,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("pretrain.batch must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("pretrain.lr must be positive".into()));
        }
        MaskSpec::new(self.mask_ratio)
            .map(|_| ())
            .map_err(|_| Error::Config("pretrain.mask_ratio must lie in [0, 1)".into()))
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.99;

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub model: FamaeModel,
    /// Epoch-mean reconstruction loss.
    pub losses: Vec<f64>,
}

/// Standardized `[num x C x L]` signals of a split restricted to `channels`
/// (all channels when empty).
pub fn prepare_signals(data: &DatasetBundle, split: &str, channels: &[String]) -> Result<TensorF> {
    let s = if channels.is_empty() {
        data.split(split)?.clone()
    } else {
        data.select_channels(channels)?.split(split)?.clone()
    };
    Ok(standardize(&s.signals))
}

/// Pretrain a fresh model on the train split of `data`.
pub fn pretrain(data: &DatasetBundle, model_cfg: &ModelConfig, cfg: &PretrainConfig, rng: &Rng) -> Result<PretrainOutcome> {
    let model = FamaeModel::new(model_cfg, rng)?;
    pretrain_model(model, data, cfg, rng)
}

/// Continue training `model` with the autoencoding objective.
pub fn pretrain_model(
    mut model: FamaeModel,
    data: &DatasetBundle,
    cfg: &PretrainConfig,
    rng: &Rng,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let spec = MaskSpec::new(cfg.mask_ratio)?;
    let signals = prepare_signals(data, "train", &cfg.channels)?;
    let &[num, c, l] = signals.shape() else { unreachable!() };
    if c == 0 {
        return Err(Error::EmptySubset);
    }
    model.mae.check_slots(&[c - 1])?;
    let slots: Vec<usize> = (0..c).collect();
    let n = model.fa.patch.n_patches(l);
    let mask_rng = rng.substream("mask");
    let drop_rng = rng.substream("dropout");
    let mut shuffle_rng = rng.substream("shuffle");
    let mut adam = Adam::new(cfg.lr, ADAM_BETA1, ADAM_BETA2);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    let mut order: Vec<usize> = (0..num).collect();
    for epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut batch_losses = Vec::new();
        for chunk in order.chunks(cfg.batch) {
            let batch_rng = mask_rng.child(step);
            let masks = chunk
                .iter()
                .enumerate()
                .map(|(b, _)| sample_channel_masks(&vec![n; c], spec, &batch_rng.child(b as u64)))
                .collect::<Result<Vec<_>>>()?;
            let total: usize = masks.iter().flatten().map(Vec::len).sum();
            if total == 0 {
                warn!("nothing masked in batch; step skipped");
                batch_losses.push(0.0);
                step += 1;
                continue;
            }
            let mut grads = Gradients::new(model.store.len());
            let mut loss = 0.0;
            for (b, (&i, m)) in chunk.iter().zip(&masks).enumerate() {
                let chans: Vec<&[f64]> = (0..c)
                    .map(|j| &signals.data()[(i * c + j) * l..(i * c + j + 1) * l])
                    .collect();
                let mut g = Graph::training(&model.store, drop_rng.child(step).child(b as u64));
                let out = model.mae_forward(&mut g, &chans, &slots, m, cfg.fm_on)?;
                let Some(lv) = mae_loss_var(&mut g, &out, m, model.cfg.patch, total) else {
                    continue;
                };
                loss += g.scalar(lv);
                grads.merge(&g.backward(lv)?);
            }
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            adam.step(&mut model.store, &grads);
            batch_losses.push(loss);
            step += 1;
        }
        let mean = batch_losses.iter().sum::<f64>() / batch_losses.len().max(1) as f64;
        log::info!("pretrain epoch {epoch}: loss {mean:.6}");
        losses.push(mean);
    }
    Ok(PretrainOutcome { model, losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            depth: 1,
            width: 8,
            heads: 2,
            patch: 4,
            mlp_dim: 8,
            aux_depth: 1,
            aux_heads: 2,
            aux_mlp_dim: 8,
            max_channels: 3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn mask_sizes() {
        let mut rng = Rng::new(0);
        let m = sample_mask(20, MaskSpec::new(0.5).unwrap(), &mut rng).unwrap();
        assert_eq!(m.len(), 10);
        assert!(m.windows(2).all(|w| w[0] < w[1]));
        assert!(sample_mask(20, MaskSpec { ratio: 0.0 }, &mut rng).unwrap().is_empty());
        assert!(matches!(
            sample_mask(1, MaskSpec { ratio: 0.6 }, &mut rng),
            Err(Error::NoKeptTokens { .. })
        ));
        assert!(MaskSpec::new(1.0).is_err());
    }

    #[test]
    fn token_counts_through_the_autoencoder() {
        let model = FamaeModel::new(&tiny_cfg(), &Rng::new(1)).unwrap();
        let mut g = Graph::new(&model.store);
        let a = [0.5; 16];
        let b = [-0.5; 16];
        let masks = vec![vec![0, 2], vec![1, 3]];
        let out = model.mae_forward(&mut g, &[&a, &b], &[0, 1], &masks, true).unwrap();
        assert_eq!(g.shape(out.recon), (8, 4));
        assert_eq!(g.shape(out.attention[0][0]), (4, 4));
    }

    #[test]
    fn too_many_channels() {
        let model = FamaeModel::new(&tiny_cfg(), &Rng::new(1)).unwrap();
        let mut g = Graph::new(&model.store);
        let a = [0.0; 8];
        let r = model.mae_forward(&mut g, &[&a], &[3], &[vec![]], true);
        assert!(matches!(r, Err(Error::TooManyChannels { .. })));
    }

    #[test]
    fn hand_loss() {
        let recon = TensorF::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let tgt = TensorF::zeros(vec![1, 2]);
        assert_eq!(mae_loss(&recon, &tgt, &[vec![0]]).unwrap(), 1.0);
        assert_eq!(mae_loss(&recon, &tgt, &[vec![]]).unwrap(), 0.0);
    }
}
