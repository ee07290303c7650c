//! Multi-head frequency filter layer.
//!
//! Tokens `X: [N x D]` are taken to the frequency domain along the token
//! axis, modulated by a bank of `H` learnable complex filters of width `D`,
//! and brought back. The bank never depends on `N`, so one layer serves
//! sequences of any length.
//!
//! Two modulation operators are provided:
//!
//! * **query**: `Z̃ = Z ⊙ (Q·K)` with data-generated head weights
//!   `Q = Re(Z)·W`. Equivalently `Z̃ = Σ_k Q[:,k] ⊙ (Z ⊙ K[k])`, a
//!   per-frequency weighted sum of the head-modulated spectra.
//! * **maxpool**: per element, the head with the largest `|Z[i,j]·K[k,j]|`
//!   wins and the complex product itself is kept (phase included).
//!
//! Only the `N/2 + 1` non-redundant bins of the real input are filtered.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{CVar, Graph, ParamId, ParamStore, Rng, TensorC, TensorF, Var};

/// How filter heads are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OperatorKind {
    #[default]
    Query,
    Maxpool,
}

/// Standard deviation of the filter and query-matrix initialization.
pub const FILTER_INIT_STD: f64 = 0.02;

/// Learnable filters `K ∈ C^{H×D}` (as real and imaginary planes) and the
/// query matrix `W ∈ R^{D×H}`.
#[derive(Debug, Clone)]
pub struct FrequencyFilterBank {
    pub kind: OperatorKind,
    pub heads: usize,
    pub width: usize,
    pub k_re: ParamId,
    pub k_im: ParamId,
    /// Present for the query operator only.
    pub w: Option<ParamId>,
}

impl FrequencyFilterBank {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        kind: OperatorKind,
        heads: usize,
        width: usize,
        rng: &mut Rng,
    ) -> Self {
        let k_re = store.normal(format!("{prefix}.k_re"), heads, width, FILTER_INIT_STD, rng);
        let k_im = store.normal(format!("{prefix}.k_im"), heads, width, FILTER_INIT_STD, rng);
        let w = match kind {
            OperatorKind::Query => Some(store.normal(
                format!("{prefix}.w"),
                width,
                heads,
                FILTER_INIT_STD,
                rng,
            )),
            OperatorKind::Maxpool => None,
        };
        Self {
            kind,
            heads,
            width,
            k_re,
            k_im,
            w,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = vec![self.k_re, self.k_im];
        v.extend(self.w);
        v
    }

    fn filters(&self, g: &mut Graph) -> CVar {
        CVar {
            re: g.param(self.k_re),
            im: g.param(self.k_im),
        }
    }

    /// Query operator on a spectrum `[Nf x D]`.
    pub fn query(&self, g: &mut Graph, z: CVar) -> CVar {
        let w = g.param(self.w.expect("query operator needs W"));
        let k = self.filters(g);
        let q = g.matmul(z.re, w);
        let m = CVar {
            re: g.matmul(q, k.re),
            im: g.matmul(q, k.im),
        };
        g.cmul(z, m)
    }

    /// Max-pool operator on a spectrum `[Nf x D]`.
    pub fn maxpool(&self, g: &mut Graph, z: CVar) -> CVar {
        let k = self.filters(g);
        g.maxpool_filter(z, k)
    }

    pub fn apply(&self, g: &mut Graph, z: CVar) -> CVar {
        match self.kind {
            OperatorKind::Query => self.query(g, z),
            OperatorKind::Maxpool => self.maxpool(g, z),
        }
    }

    /// `Freq-L`: rdft along tokens, filter, irdft back to `N` tokens.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let (n, d) = g.shape(x);
        assert_eq!(d, self.width, "frequency layer width");
        let z = g.rdft(x);
        let zt = self.apply(g, z);
        g.irdft(zt, n)
    }

    fn check_spectrum(&self, z: &TensorC) -> Result<(usize, usize)> {
        match z.shape() {
            &[nf, d] if d == self.width => Ok((nf, d)),
            s => Err(Error::Shape(format!(
                "spectrum shape {s:?} does not match filter width {}",
                self.width
            ))),
        }
    }

    fn eval_filter(&self, store: &ParamStore, z: &TensorC, kind: OperatorKind) -> Result<TensorC> {
        if self.kind != kind {
            return Err(Error::Shape(format!(
                "bank operator is {:?}, not {kind:?}",
                self.kind
            )));
        }
        let (nf, d) = self.check_spectrum(z)?;
        let mut g = Graph::new(store);
        let zv = CVar {
            re: g.constant(nf, d, z.re()),
            im: g.constant(nf, d, z.im()),
        };
        let out = self.apply(&mut g, zv);
        TensorC::from_parts(vec![nf, d], g.value(out.re), g.value(out.im))
    }
}

/// Query-operator modulation of a `[Nf x D]` spectrum.
pub fn apply_query_filter(
    z: &TensorC,
    bank: &FrequencyFilterBank,
    store: &ParamStore,
) -> Result<TensorC> {
    bank.eval_filter(store, z, OperatorKind::Query)
}

/// Max-pool modulation of a `[Nf x D]` spectrum.
pub fn apply_maxpool_filter(
    z: &TensorC,
    bank: &FrequencyFilterBank,
    store: &ParamStore,
) -> Result<TensorC> {
    bank.eval_filter(store, z, OperatorKind::Maxpool)
}

/// Evaluate the full layer on a `[N x D]` token matrix.
pub fn freq_layer_forward(
    x: &TensorF,
    bank: &FrequencyFilterBank,
    store: &ParamStore,
) -> Result<TensorF> {
    let (n, d) = match x.shape() {
        &[n, d] if n >= 1 && d == bank.width => (n, d),
        s => {
            return Err(Error::Shape(format!(
                "token matrix {s:?} does not match filter width {}",
                bank.width
            )))
        }
    };
    let mut g = Graph::new(store);
    let xv = g.constant(n, d, x.data().to_vec());
    let y = bank.forward(&mut g, xv);
    TensorF::new(vec![n, d], g.value(y).to_vec())
}
