//! Standard building blocks: linear maps, layer norm, feed-forward MLPs and
//! pre-norm self-attention transformer layers.

use crate::numerics::{Graph, ParamId, ParamStore, Rng, Var};

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        Self {
            w: store.xavier(format!("{prefix}.w"), fan_in, fan_out, rng),
            b: store.zeros(format!("{prefix}.b"), 1, fan_out),
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, width: usize) -> Self {
        Self {
            gamma: store.filled(format!("{prefix}.gamma"), 1, width, 1.0),
            beta: store.zeros(format!("{prefix}.beta"), 1, width),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Two linear maps with a GELU in between.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, prefix: &str, d_in: usize, hidden: usize, d_out: usize, rng: &mut Rng) -> Self {
        Self {
            fc1: Linear::new(store, &format!("{prefix}.fc1"), d_in, hidden, rng),
            fc2: Linear::new(store, &format!("{prefix}.fc2"), hidden, d_out, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.fc1.forward(g, x);
        let h = g.gelu(h);
        self.fc2.forward(g, h)
    }
}

/// Multi-head scaled dot-product self-attention.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub qkv: Linear,
    pub proj: Linear,
    pub heads: usize,
    pub width: usize,
}

impl SelfAttention {
    pub fn new(store: &mut ParamStore, prefix: &str, width: usize, heads: usize, rng: &mut Rng) -> Self {
        assert!(heads >= 1 && width % heads == 0, "width {width} not divisible by {heads} heads");
        Self {
            qkv: Linear::new(store, &format!("{prefix}.qkv"), width, 3 * width, rng),
            proj: Linear::new(store, &format!("{prefix}.proj"), width, width, rng),
            heads,
            width,
        }
    }

    /// Returns the mixed tokens and one `[T x T]` row-stochastic attention
    /// matrix per head.
    pub fn forward(&self, g: &mut Graph, x: Var) -> (Var, Vec<Var>) {
        let d = self.width;
        let dh = d / self.heads;
        let qkv = self.qkv.forward(g, x);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut attn = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let q = g.slice_cols(qkv, h * dh, dh);
            let k = g.slice_cols(qkv, d + h * dh, dh);
            let v = g.slice_cols(qkv, 2 * d + h * dh, dh);
            let s = g.matmul_t(q, k);
            let s = g.scale(s, scale);
            let p = g.softmax_rows(s);
            attn.push(p);
            outs.push(g.matmul(p, v));
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        (self.proj.forward(g, cat), attn)
    }
}

/// Pre-norm transformer layer: `y = x + Attn(LN(x)); out = y + FF(LN(y))`.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub norm1: LayerNorm,
    pub attn: SelfAttention,
    pub norm2: LayerNorm,
    pub ff: Mlp,
    pub dropout: f64,
}

impl TransformerLayer {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        heads: usize,
        mlp_dim: usize,
        dropout: f64,
        rng: &mut Rng,
    ) -> Self {
        Self {
            norm1: LayerNorm::new(store, &format!("{prefix}.norm1"), width),
            attn: SelfAttention::new(store, &format!("{prefix}.attn"), width, heads, rng),
            norm2: LayerNorm::new(store, &format!("{prefix}.norm2"), width),
            ff: Mlp::new(store, &format!("{prefix}.ff"), width, mlp_dim, width, rng),
            dropout,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> (Var, Vec<Var>) {
        let h = self.norm1.forward(g, x);
        let (a, attn) = self.attn.forward(g, h);
        let a = g.dropout(a, self.dropout);
        let y = g.add(x, a);
        let h = self.norm2.forward(g, y);
        let f = self.ff.forward(g, h);
        let f = g.dropout(f, self.dropout);
        (g.add(y, f), attn)
    }
}

/// Stack of transformer layers with a final layer norm.
#[derive(Debug, Clone)]
pub struct Transformer {
    pub layers: Vec<TransformerLayer>,
    pub norm: LayerNorm,
}

impl Transformer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        depth: usize,
        width: usize,
        heads: usize,
        mlp_dim: usize,
        dropout: f64,
        rng: &mut Rng,
    ) -> Self {
        Self {
            layers: (0..depth)
                .map(|i| TransformerLayer::new(store, &format!("{prefix}.{i}"), width, heads, mlp_dim, dropout, rng))
                .collect(),
            norm: LayerNorm::new(store, &format!("{prefix}.norm"), width),
        }
    }

    /// Output tokens plus attention matrices, indexed `[layer][head]`.
    pub fn forward(&self, g: &mut Graph, mut x: Var) -> (Var, Vec<Vec<Var>>) {
        let mut maps = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, a) = layer.forward(g, x);
            x = y;
            maps.push(a);
        }
        (self.norm.forward(g, x), maps)
    }
}

/// Fixed sinusoidal position table, `[n x width]` row-major.
pub fn sinusoidal_positions(n: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * width];
    for pos in 0..n {
        for i in 0..width / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / width as f64);
            out[pos * width + 2 * i] = (pos as f64 * freq).sin();
            out[pos * width + 2 * i + 1] = (pos as f64 * freq).cos();
        }
    }
    out
}
