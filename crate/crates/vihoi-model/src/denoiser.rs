//! Transformer denoiser: one self-attention stack over
//! [time | visual prior | text prior | motion frames], predicting the clean
//! motion x0 for every frame position.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use vihoi_core::motion::MODEL_DIM;

use crate::nn::{self, Init, ParamStore};
use crate::{Error, Result};

/// How per-sequence object geometry enters the motion tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryFusion {
    /// 1024-point BPS distances projected and added to every motion token.
    AdditiveBps,
    /// 24 surface keypoints (72 values) projected, concatenated, re-fused.
    ConcatKeypoints,
}

impl GeometryFusion {
    pub fn input_width(&self) -> usize {
        match self {
            GeometryFusion::AdditiveBps => 1024,
            GeometryFusion::ConcatKeypoints => 72,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
    pub geometry_embed_dim: usize,
    pub ffn_mult: usize,
    pub fusion: GeometryFusion,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            d_model: 256,
            layers: 6,
            heads: 4,
            max_len: 128,
            geometry_embed_dim: 256,
            ffn_mult: 4,
            fusion: GeometryFusion::AdditiveBps,
        }
    }
}

pub struct DenoiserInput<'a> {
    /// Noisy motion, (B, L, MODEL_DIM).
    pub x_t: &'a Tensor,
    /// One diffusion step per batch item.
    pub ts: &'a [usize],
    /// Visual prior tokens, (B, k_v, d_model).
    pub c_v: &'a Tensor,
    /// Text prior tokens, (B, k_t, d_model).
    pub c_t: &'a Tensor,
    /// Object geometry features, (B, fusion input width).
    pub geom: &'a Tensor,
    /// Optional (B, L) validity mask over motion frames, 1 real 0 padded.
    pub key_mask: Option<&'a Tensor>,
}

pub struct Denoiser {
    pub cfg: DenoiserConfig,
    prefix: String,
}

impl Denoiser {
    pub fn init(store: &mut ParamStore, prefix: &str, cfg: DenoiserConfig) -> Result<Self> {
        if cfg.d_model % cfg.heads != 0 {
            return Err(Error::Msg(format!(
                "d_model {} not divisible by heads {}",
                cfg.d_model, cfg.heads
            )));
        }
        let d = cfg.d_model;
        let g = cfg.geometry_embed_dim;
        let p = |s: &str| format!("{prefix}.{s}");
        store.var(&p("in_w"), &[MODEL_DIM, d], Init::Glorot)?;
        store.var(&p("in_b"), &[d], Init::Zeros)?;
        store.var(&p("time_w1"), &[d, d], Init::Glorot)?;
        store.var(&p("time_b1"), &[d], Init::Zeros)?;
        store.var(&p("time_w2"), &[d, d], Init::Glorot)?;
        store.var(&p("time_b2"), &[d], Init::Zeros)?;
        match cfg.fusion {
            GeometryFusion::AdditiveBps => {
                store.var(&p("geom_w"), &[cfg.fusion.input_width(), d], Init::Glorot)?;
                store.var(&p("geom_b"), &[d], Init::Zeros)?;
            }
            GeometryFusion::ConcatKeypoints => {
                store.var(&p("geom_w"), &[cfg.fusion.input_width(), g], Init::Glorot)?;
                store.var(&p("geom_b"), &[g], Init::Zeros)?;
                store.var(&p("fuse_w"), &[d + g, d], Init::Glorot)?;
                store.var(&p("fuse_b"), &[d], Init::Zeros)?;
            }
        }
        store.var(&p("seg"), &[4, d], Init::Normal(0.02))?;
        store.var(&p("pos_motion"), &[cfg.max_len, d], Init::Normal(0.02))?;
        for l in 0..cfg.layers {
            let q = |s: &str| format!("{prefix}.l{l}.{s}");
            store.var(&q("ln1_g"), &[d], Init::Ones)?;
            store.var(&q("ln1_b"), &[d], Init::Zeros)?;
            for w in ["wq", "wk", "wv", "wo"] {
                store.var(&q(w), &[d, d], Init::Glorot)?;
            }
            store.var(&q("ln2_g"), &[d], Init::Ones)?;
            store.var(&q("ln2_b"), &[d], Init::Zeros)?;
            store.var(&q("ffn_w1"), &[d, d * cfg.ffn_mult], Init::Glorot)?;
            store.var(&q("ffn_b1"), &[d * cfg.ffn_mult], Init::Zeros)?;
            store.var(&q("ffn_w2"), &[d * cfg.ffn_mult, d], Init::Glorot)?;
            store.var(&q("ffn_b2"), &[d], Init::Zeros)?;
        }
        store.var(&p("out_ln_g"), &[d], Init::Ones)?;
        store.var(&p("out_ln_b"), &[d], Init::Zeros)?;
        // Near-zero head: a fresh model predicts x0 close to 0, so the initial
        // loss sits at the variance of the clean data.
        store.var(&p("out_w"), &[d, MODEL_DIM], Init::Normal(0.02))?;
        store.var(&p("out_b"), &[MODEL_DIM], Init::Zeros)?;
        Ok(Self { cfg, prefix: prefix.to_string() })
    }

    pub fn param_names(&self, store: &ParamStore) -> Vec<String> {
        store.names().into_iter().filter(|n| n.starts_with(&format!("{}.", self.prefix))).collect()
    }

    fn seg(&self, store: &ParamStore, idx: usize) -> Result<Tensor> {
        Ok(store.get(&format!("{}.seg", self.prefix))?.narrow(0, idx, 1)?.unsqueeze(0)?)
    }

    /// Predicts x0 for every motion position, (B, L, MODEL_DIM).
    pub fn forward(&self, store: &ParamStore, inp: &DenoiserInput) -> Result<Tensor> {
        let p = |s: &str| format!("{}.{s}", self.prefix);
        let (b, l, w) = inp.x_t.dims3()?;
        if w != MODEL_DIM {
            return Err(Error::Msg(format!("motion width {w}, want {MODEL_DIM}")));
        }
        if l > self.cfg.max_len {
            return Err(Error::Msg(format!("sequence of {l} frames exceeds max_len {}", self.cfg.max_len)));
        }
        if inp.ts.len() != b {
            return Err(Error::Msg(format!("{} steps for batch of {b}", inp.ts.len())));
        }
        let dtype = store.dtype();
        let x_t = inp.x_t.to_dtype(dtype)?;
        let c_v = inp.c_v.to_dtype(dtype)?;
        let c_t = inp.c_t.to_dtype(dtype)?;
        let geom = inp.geom.to_dtype(dtype)?;

        let time = nn::sinusoidal_embedding(inp.ts, self.cfg.d_model, dtype, store.device())?;
        let time = nn::linear(&time, &store.get(&p("time_w1"))?, Some(&store.get(&p("time_b1"))?))?
            .silu()?;
        let time = nn::linear(&time, &store.get(&p("time_w2"))?, Some(&store.get(&p("time_b2"))?))?
            .unsqueeze(1)?;

        let motion = nn::linear(&x_t, &store.get(&p("in_w"))?, Some(&store.get(&p("in_b"))?))?;
        let geom_emb =
            nn::linear(&geom, &store.get(&p("geom_w"))?, Some(&store.get(&p("geom_b"))?))?;
        let motion = match self.cfg.fusion {
            GeometryFusion::AdditiveBps => motion.broadcast_add(&geom_emb.unsqueeze(1)?)?,
            GeometryFusion::ConcatKeypoints => {
                let g = geom_emb.unsqueeze(1)?.broadcast_as((
                    b,
                    l,
                    self.cfg.geometry_embed_dim,
                ))?;
                let cat = Tensor::cat(&[&motion, &g.contiguous()?], 2)?;
                nn::linear(&cat, &store.get(&p("fuse_w"))?, Some(&store.get(&p("fuse_b"))?))?
            }
        };
        let pos = store.get(&p("pos_motion"))?.narrow(0, 0, l)?.unsqueeze(0)?;
        let motion = motion.broadcast_add(&pos)?.broadcast_add(&self.seg(store, 3)?)?;

        let time = time.broadcast_add(&self.seg(store, 0)?)?;
        let c_v = c_v.broadcast_add(&self.seg(store, 1)?)?;
        let c_t = c_t.broadcast_add(&self.seg(store, 2)?)?;
        let mut x = Tensor::cat(&[&time, &c_v, &c_t, &motion], 1)?;

        let prefix_len = x.dims3()?.1 - l;
        let key_mask = match inp.key_mask {
            Some(m) => {
                let ones = Tensor::ones((b, prefix_len), dtype, store.device())?;
                Some(Tensor::cat(&[&ones, &m.to_dtype(dtype)?], 1)?)
            }
            None => None,
        };

        for li in 0..self.cfg.layers {
            let q = |s: &str| format!("{}.l{li}.{s}", self.prefix);
            let h = nn::layer_norm(&x, &store.get(&q("ln1_g"))?, &store.get(&q("ln1_b"))?)?;
            let attn = nn::mha(
                &h,
                &h,
                &store.get(&q("wq"))?,
                &store.get(&q("wk"))?,
                &store.get(&q("wv"))?,
                &store.get(&q("wo"))?,
                self.cfg.heads,
                key_mask.as_ref(),
            )?;
            x = (x + attn)?;
            let h = nn::layer_norm(&x, &store.get(&q("ln2_g"))?, &store.get(&q("ln2_b"))?)?;
            let h = nn::linear(&h, &store.get(&q("ffn_w1"))?, Some(&store.get(&q("ffn_b1"))?))?
                .silu()?;
            let h = nn::linear(&h, &store.get(&q("ffn_w2"))?, Some(&store.get(&q("ffn_b2"))?))?;
            x = (x + h)?;
        }
        let out = x.narrow(1, prefix_len, l)?;
        let out = nn::layer_norm(&out, &store.get(&p("out_ln_g"))?, &store.get(&p("out_ln_b"))?)?;
        nn::linear(&out, &store.get(&p("out_w"))?, Some(&store.get(&p("out_b"))?))
    }
}
