//! Frequency-aware encoder: patchify a single channel, embed each patch,
//! then run a stack of residual blocks whose token mixer is the frequency
//! filter layer.
//!
//! Each block computes, with pre-normalization,
//!
//! ```text
//! Y   = X + FreqL(LN1(X))
//! out = Y + FF(LN2(Y))
//! ```
//!
//! which is the two-residual composition `X + F(X) + FF(X + F(X))` with a
//! layer norm in front of each branch. The encoder has no positional
//! embedding; the Fourier transform along the token axis is already
//! position sensitive. All channels share one encoder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Mlp, SelfAttention};
use crate::numerics::{Graph, ParamId, ParamStore, Rng, TensorF, Var};
use crate::spectral::{FrequencyFilterBank, OperatorKind};

/// Architecture hyperparameters shared by the encoder and the masked
/// autoencoder around it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of frequency-aware blocks.
    pub depth: usize,
    /// Token width `D`.
    pub width: usize,
    /// Filter heads `H`.
    pub heads: usize,
    /// Patch length `P` in samples.
    pub patch: usize,
    pub mlp_dim: usize,
    pub dropout: f64,
    pub operator_kind: OperatorKind,
    /// `false` swaps the frequency layer for self-attention (ablation).
    pub fa_on: bool,
    /// Depth of the lightweight second encoder and of the decoder.
    pub aux_depth: usize,
    pub aux_heads: usize,
    pub aux_mlp_dim: usize,
    /// Number of learnable channel-embedding slots.
    pub max_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            width: 64,
            heads: 8,
            patch: 20,
            mlp_dim: 128,
            dropout: 0.2,
            operator_kind: OperatorKind::Query,
            fa_on: true,
            aux_depth: 2,
            aux_heads: 4,
            aux_mlp_dim: 128,
            max_channels: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.depth == 0 {
            return bad("model.depth must be at least 1");
        }
        if self.width == 0 || self.heads == 0 || self.patch == 0 || self.mlp_dim == 0 {
            return bad("model.width, model.heads, model.patch and model.mlp_dim must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("model.dropout must lie in [0, 1)");
        }
        if self.aux_heads == 0 || self.width % self.aux_heads != 0 {
            return bad("model.width must be divisible by model.aux_heads");
        }
        if self.max_channels == 0 {
            return bad("model.max_channels must be at least 1");
        }
        Ok(())
    }

    /// Head count used by the self-attention token mixer when `fa_on` is off.
    pub fn mixer_attention_heads(&self) -> usize {
        (1..=self.heads).rev().find(|h| self.width % h == 0).unwrap_or(1)
    }
}

/// Non-overlapping patches of `size` samples; the tail is zero padded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchConfig {
    pub size: usize,
}

impl PatchConfig {
    pub fn n_patches(&self, len: usize) -> usize {
        len.div_ceil(self.size)
    }
}

/// Split a signal into `ceil(L/P)` rows of `P` samples.
pub fn patchify(signal: &[f64], cfg: PatchConfig) -> Result<TensorF> {
    if signal.is_empty() {
        return Err(Error::EmptySignal);
    }
    if cfg.size == 0 {
        return Err(Error::Config("patch size must be at least 1".into()));
    }
    let n = cfg.n_patches(signal.len());
    let mut data = signal.to_vec();
    data.resize(n * cfg.size, 0.0);
    TensorF::new(vec![n, cfg.size], data)
}

/// Token mixer of one block.
#[derive(Debug, Clone)]
pub enum TokenMixer {
    Frequency(FrequencyFilterBank),
    Attention(SelfAttention),
}

#[derive(Debug, Clone)]
pub struct FaBlock {
    pub norm1: LayerNorm,
    pub mixer: TokenMixer,
    pub norm2: LayerNorm,
    pub ff: Mlp,
    pub dropout: f64,
}

impl FaBlock {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let mixer = if cfg.fa_on {
            TokenMixer::Frequency(FrequencyFilterBank::new(
                store,
                &format!("{prefix}.filter"),
                cfg.operator_kind,
                cfg.heads,
                cfg.width,
                rng,
            ))
        } else {
            TokenMixer::Attention(SelfAttention::new(
                store,
                &format!("{prefix}.attn"),
                cfg.width,
                cfg.mixer_attention_heads(),
                rng,
            ))
        };
        Self {
            norm1: LayerNorm::new(store, &format!("{prefix}.norm1"), cfg.width),
            mixer,
            norm2: LayerNorm::new(store, &format!("{prefix}.norm2"), cfg.width),
            ff: Mlp::new(store, &format!("{prefix}.ff"), cfg.width, cfg.mlp_dim, cfg.width, rng),
            dropout: cfg.dropout,
        }
    }

    pub fn mix(&self, g: &mut Graph, x: Var) -> Var {
        match &self.mixer {
            TokenMixer::Frequency(bank) => bank.forward(g, x),
            TokenMixer::Attention(att) => att.forward(g, x).0,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.norm1.forward(g, x);
        let m = self.mix(g, h);
        let m = g.dropout(m, self.dropout);
        let y = g.add(x, m);
        let h = self.norm2.forward(g, y);
        let f = self.ff.forward(g, h);
        let f = g.dropout(f, self.dropout);
        g.add(y, f)
    }
}

/// Patch embedder plus stacked blocks.
#[derive(Debug, Clone)]
pub struct FaEncoder {
    pub patch: PatchConfig,
    pub width: usize,
    pub embed: Mlp,
    pub blocks: Vec<FaBlock>,
}

impl FaEncoder {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig, rng: &mut Rng) -> Self {
        Self {
            patch: PatchConfig { size: cfg.patch },
            width: cfg.width,
            embed: Mlp::new(store, &format!("{prefix}.embed"), cfg.patch, cfg.width, cfg.width, rng),
            blocks: (0..cfg.depth)
                .map(|i| FaBlock::new(store, &format!("{prefix}.block{i}"), cfg, rng))
                .collect(),
        }
    }

    /// Every parameter owned by the encoder, in registration order.
    pub fn param_ids(&self, store: &ParamStore, prefix: &str) -> Vec<ParamId> {
        store
            .iter()
            .filter(|(_, p)| p.name.starts_with(&format!("{prefix}.")))
            .map(|(id, _)| id)
            .collect()
    }

    /// Patch matrix `[N x P]` → tokens `[N x D]`.
    pub fn embed(&self, g: &mut Graph, patches: Var) -> Var {
        self.embed.forward(g, patches)
    }

    pub fn blocks(&self, g: &mut Graph, mut x: Var) -> Var {
        for b in &self.blocks {
            x = b.forward(g, x);
        }
        x
    }

    /// Embed and mix a patch matrix.
    pub fn encode_patches(&self, g: &mut Graph, patches: Var) -> Var {
        let x = self.embed(g, patches);
        self.blocks(g, x)
    }

    /// Patchify a raw channel and encode it.
    pub fn encode(&self, g: &mut Graph, signal: &[f64]) -> Result<Var> {
        let p = patchify(signal, self.patch)?;
        let (n, ps) = (p.shape()[0], p.shape()[1]);
        let pv = g.constant(n, ps, p.into_data());
        Ok(self.encode_patches(g, pv))
    }
}

fn eval_matrix(store: &ParamStore, x: &TensorF, width: usize, f: impl FnOnce(&mut Graph, Var) -> Var) -> Result<TensorF> {
    let (n, d) = match x.shape() {
        &[n, d] if d == width => (n, d),
        s => return Err(Error::Shape(format!("expected [N x {width}], got {s:?}"))),
    };
    let mut g = Graph::new(store);
    let v = g.constant(n, d, x.data().to_vec());
    let y = f(&mut g, v);
    let (r, c) = g.shape(y);
    TensorF::new(vec![r, c], g.value(y).to_vec())
}

/// Row-wise patch embedding, evaluation mode.
pub fn embed(patches: &TensorF, enc: &FaEncoder, store: &ParamStore) -> Result<TensorF> {
    eval_matrix(store, patches, enc.patch.size, |g, v| enc.embed(g, v))
}

/// One block, evaluation mode.
pub fn block_forward(x: &TensorF, block: &FaBlock, store: &ParamStore, width: usize) -> Result<TensorF> {
    eval_matrix(store, x, width, |g, v| block.forward(g, v))
}

/// Full encoder on a raw channel, evaluation mode.
pub fn encode(signal: &[f64], enc: &FaEncoder, store: &ParamStore) -> Result<TensorF> {
    let mut g = Graph::new(store);
    let y = enc.encode(&mut g, signal)?;
    let (r, c) = g.shape(y);
    TensorF::new(vec![r, c], g.value(y).to_vec())
}
