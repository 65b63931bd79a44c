//! Q-Former prior adapters: learnable queries cross-attending twice over
//! projected, row-normalized encoder states. Keys and values carry no
//! positional encoding, so the forward pass is invariant to input-row order.

use std::cell::Cell;

use candle_core::{DType, Tensor};

use crate::nn::{self, Init, ParamStore};
use crate::{Error, Result};

thread_local! {
    static QFORMER_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of `qformer_forward` invocations on this thread since the last
/// reset; the ablation runner uses it to prove the pooling variant bypasses
/// the adapter. Thread-local so concurrent work cannot skew the count.
pub fn qformer_call_count() -> u64 {
    QFORMER_CALLS.with(|c| c.get())
}

pub fn reset_qformer_call_count() {
    QFORMER_CALLS.with(|c| c.set(0));
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QFormerConfig {
    pub d_enc: usize,
    pub d_model: usize,
    pub k: usize,
    pub heads: usize,
    /// Feed-forward sublayers between the attention layers; off by default.
    pub ffn: bool,
}

impl QFormerConfig {
    pub fn new(d_enc: usize, d_model: usize, k: usize) -> Self {
        Self { d_enc, d_model, k, heads: 4, ffn: false }
    }
}

/// Handle over adapter parameters living in a `ParamStore` under `prefix`.
#[derive(Debug, Clone)]
pub struct QFormer {
    pub prefix: String,
    pub cfg: QFormerConfig,
}

impl QFormer {
    pub fn init(store: &mut ParamStore, prefix: &str, cfg: QFormerConfig) -> Result<Self> {
        if cfg.k < 1 || cfg.d_enc == 0 || cfg.d_model == 0 {
            return Err(Error::Msg(format!("bad adapter dims {cfg:?}")));
        }
        if cfg.d_model % cfg.heads != 0 {
            return Err(Error::Msg(format!(
                "d_model {} not divisible by heads {}",
                cfg.d_model, cfg.heads
            )));
        }
        let p = |s: &str| format!("{prefix}.{s}");
        store.var(&p("proj_w"), &[cfg.d_enc, cfg.d_model], Init::Glorot)?;
        // A nonzero bias keeps the row-wise LayerNorm sensitive to input
        // scale: LN(sE W) would equal LN(E W) exactly for any s > 0.
        store.var(&p("proj_b"), &[cfg.d_model], Init::Normal(0.02))?;
        store.var(&p("norm_g"), &[cfg.d_model], Init::Ones)?;
        store.var(&p("norm_b"), &[cfg.d_model], Init::Zeros)?;
        store.var(&p("queries"), &[cfg.k, cfg.d_model], Init::Normal(0.02))?;
        for layer in 1..=2 {
            for w in ["wq", "wk", "wv", "wo"] {
                store.var(&p(&format!("ca{layer}.{w}")), &[cfg.d_model, cfg.d_model], Init::Glorot)?;
            }
            store.var(&p(&format!("ca{layer}.post_g")), &[cfg.d_model], Init::Ones)?;
            store.var(&p(&format!("ca{layer}.post_b")), &[cfg.d_model], Init::Zeros)?;
            if cfg.ffn {
                let hidden = cfg.d_model * 2;
                store.var(&p(&format!("ffn{layer}.w1")), &[cfg.d_model, hidden], Init::Glorot)?;
                store.var(&p(&format!("ffn{layer}.b1")), &[hidden], Init::Zeros)?;
                store.var(&p(&format!("ffn{layer}.w2")), &[hidden, cfg.d_model], Init::Glorot)?;
                store.var(&p(&format!("ffn{layer}.b2")), &[cfg.d_model], Init::Zeros)?;
                store.var(&p(&format!("ffn{layer}.post_g")), &[cfg.d_model], Init::Ones)?;
                store.var(&p(&format!("ffn{layer}.post_b")), &[cfg.d_model], Init::Zeros)?;
            }
        }
        Ok(Self { prefix: prefix.to_string(), cfg })
    }

    fn p(&self, s: &str) -> String {
        format!("{}.{s}", self.prefix)
    }

    fn check_width(&self, e: &Tensor) -> Result<()> {
        let got = *e.dims().last().unwrap_or(&0);
        if e.rank() != 2 || got != self.cfg.d_enc {
            return Err(Error::WidthMismatch { got, want: self.cfg.d_enc });
        }
        Ok(())
    }

    /// Z = LayerNorm(E W + b) with the learned affine on top, row by row.
    pub fn project_normalize(&self, store: &ParamStore, e: &Tensor) -> Result<Tensor> {
        self.check_width(e)?;
        let x = nn::linear(
            &e.to_dtype(store.dtype())?,
            &store.get(&self.p("proj_w"))?,
            Some(&store.get(&self.p("proj_b"))?),
        )?;
        nn::layer_norm(&x, &store.get(&self.p("norm_g"))?, &store.get(&self.p("norm_b"))?)
    }

    /// c = CA2(CA1(queries, Z, Z), Z, Z); residual + post-norm per layer.
    pub fn forward(&self, store: &ParamStore, e: &Tensor) -> Result<Tensor> {
        QFORMER_CALLS.with(|c| c.set(c.get() + 1));
        let z = self.project_normalize(store, e)?.unsqueeze(0)?;
        let mut q = store.get(&self.p("queries"))?.unsqueeze(0)?;
        for layer in 1..=2 {
            let attn = nn::mha(
                &q,
                &z,
                &store.get(&self.p(&format!("ca{layer}.wq")))?,
                &store.get(&self.p(&format!("ca{layer}.wk")))?,
                &store.get(&self.p(&format!("ca{layer}.wv")))?,
                &store.get(&self.p(&format!("ca{layer}.wo")))?,
                self.cfg.heads,
                None,
            )?;
            q = nn::layer_norm(
                &(q + attn)?,
                &store.get(&self.p(&format!("ca{layer}.post_g")))?,
                &store.get(&self.p(&format!("ca{layer}.post_b")))?,
            )?;
            if self.cfg.ffn {
                let h = nn::linear(
                    &q,
                    &store.get(&self.p(&format!("ffn{layer}.w1")))?,
                    Some(&store.get(&self.p(&format!("ffn{layer}.b1")))?),
                )?
                .silu()?;
                let h = nn::linear(
                    &h,
                    &store.get(&self.p(&format!("ffn{layer}.w2")))?,
                    Some(&store.get(&self.p(&format!("ffn{layer}.b2")))?),
                )?;
                q = nn::layer_norm(
                    &(q + h)?,
                    &store.get(&self.p(&format!("ffn{layer}.post_g")))?,
                    &store.get(&self.p(&format!("ffn{layer}.post_b")))?,
                )?;
            }
        }
        Ok(q.squeeze(0)?)
    }

    pub fn param_names(&self, store: &ParamStore) -> Vec<String> {
        let prefix = format!("{}.", self.prefix);
        store.names().into_iter().filter(|n| n.starts_with(&prefix)).collect()
    }
}

/// Spec-shaped constructor: one fresh store holding two independently
/// initialized adapters under `adapter.visual.*` and `adapter.text.*`.
pub fn make_adapters(
    d_enc: usize,
    d_model: usize,
    k_visual: usize,
    k_text: usize,
    seed: u64,
) -> Result<(ParamStore, QFormer, QFormer)> {
    let mut store = ParamStore::new(DType::F64, seed);
    let visual = QFormer::init(&mut store, "adapter.visual", QFormerConfig::new(d_enc, d_model, k_visual))?;
    let text = QFormer::init(&mut store, "adapter.text", QFormerConfig::new(d_enc, d_model, k_text))?;
    Ok((store, visual, text))
}

/// Free-function form of the adapter forward pass.
pub fn qformer_forward(adapter: &QFormer, store: &ParamStore, e: &Tensor) -> Result<Tensor> {
    adapter.forward(store, e)
}
