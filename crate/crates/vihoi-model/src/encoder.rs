//! Toy multimodal encoder: image patches and prompt tokens run through one
//! transformer stack with per-layer state capture. It stands in for a large
//! VLM, so it is deterministic, freezable, and exposes the residual stream
//! after any requested block. States are captured post-block.

use std::collections::BTreeMap;

use candle_core::{DType, Tensor};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use vihoi_core::render::ImageBuf;

use crate::nn::{self, Adam, AdamConfig, Init, ParamStore};
use crate::prompts::PromptBundle;
use crate::tokenizer::Vocab;
use crate::{Error, Result};

pub const MIN_DEPTH: usize = 12;
pub const IMAGE_COUNT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyEncoderConfig {
    pub depth: usize,
    pub d_enc: usize,
    pub heads: usize,
    pub patch: usize,
    pub resolution: usize,
    pub ffn_mult: usize,
    pub max_text_len: usize,
}

impl Default for ToyEncoderConfig {
    fn default() -> Self {
        Self { depth: 16, d_enc: 256, heads: 4, patch: 16, resolution: 224, ffn_mult: 2, max_text_len: 128 }
    }
}

impl ToyEncoderConfig {
    pub fn patches_per_image(&self) -> usize {
        (self.resolution / self.patch) * (self.resolution / self.patch)
    }

    pub fn visual_tokens(&self) -> usize {
        IMAGE_COUNT * self.patches_per_image()
    }
}

/// Which layers feed the visual and textual priors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    pub visual_layer: usize,
    pub text_layer: usize,
    /// T12-only ablation: the visual prior becomes one all-zero token.
    pub text_only: bool,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self { visual_layer: 3, text_layer: 12, text_only: false }
    }
}

impl ExtractionConfig {
    pub fn layers(&self) -> Vec<usize> {
        let mut v = vec![self.visual_layer, self.text_layer];
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Residual-stream states for the requested layers only.
#[derive(Debug, Clone)]
pub struct LayeredEmbeddings {
    pub states: BTreeMap<usize, Array2<f32>>,
    pub visual_span: (usize, usize),
    pub text_span: (usize, usize),
    pub d_enc: usize,
}

impl LayeredEmbeddings {
    pub fn seq_len(&self) -> usize {
        self.states.values().next().map(|s| s.nrows()).unwrap_or(0)
    }
}

/// E_v from the visual layer over the patch span, E_t from the text layer
/// over the annotation span.
pub fn extract_priors(emb: &LayeredEmbeddings, cfg: &ExtractionConfig) -> Result<(Array2<f32>, Array2<f32>)> {
    let text_state = emb.states.get(&cfg.text_layer).ok_or(Error::LayerMissing(cfg.text_layer))?;
    let (ts, te) = emb.text_span;
    let e_t = text_state.slice(ndarray::s![ts..te, ..]).to_owned();
    let e_v = if cfg.text_only {
        Array2::zeros((1, emb.d_enc))
    } else {
        let visual_state =
            emb.states.get(&cfg.visual_layer).ok_or(Error::LayerMissing(cfg.visual_layer))?;
        let (vs, ve) = emb.visual_span;
        visual_state.slice(ndarray::s![vs..ve, ..]).to_owned()
    };
    Ok((e_v, e_t))
}

/// Anything that can serve layer-indexed multimodal states: the in-process
/// toy encoder or an out-of-process backend.
pub trait PriorSource {
    fn layered(&self, images: &[ImageBuf; IMAGE_COUNT], prompt: &PromptBundle, layers: &[usize])
        -> Result<LayeredEmbeddings>;
    fn checksum(&self) -> String;
    fn depth(&self) -> usize;
    /// Expected square input resolution; callers resize images to match.
    fn resolution(&self) -> usize;
}

pub struct ToyMultimodalEncoder {
    pub cfg: ToyEncoderConfig,
    store: ParamStore,
    frozen: bool,
}

impl ToyMultimodalEncoder {
    pub fn new(cfg: ToyEncoderConfig, seed: u64) -> Result<Self> {
        if cfg.depth < MIN_DEPTH {
            return Err(Error::DepthTooSmall { got: cfg.depth, min: MIN_DEPTH });
        }
        if cfg.resolution % cfg.patch != 0 || cfg.d_enc % cfg.heads != 0 {
            return Err(Error::Msg(format!("inconsistent encoder config {cfg:?}")));
        }
        let mut store = ParamStore::new(DType::F32, seed);
        let d = cfg.d_enc;
        let vocab = Vocab::builtin();
        store.var("enc.patch_w", &[cfg.patch * cfg.patch * 3, d], Init::Glorot)?;
        store.var("enc.patch_b", &[d], Init::Normal(0.02))?;
        store.var("enc.tok_embed", &[vocab.len(), d], Init::Normal(0.02))?;
        store.var("enc.pos_text", &[cfg.max_text_len, d], Init::Normal(0.02))?;
        store.var("enc.pos_patch", &[cfg.patches_per_image(), d], Init::Normal(0.02))?;
        store.var("enc.img_embed", &[IMAGE_COUNT, d], Init::Normal(0.02))?;
        for l in 0..cfg.depth {
            let p = |s: &str| format!("enc.l{l}.{s}");
            store.var(&p("ln1_g"), &[d], Init::Ones)?;
            store.var(&p("ln1_b"), &[d], Init::Zeros)?;
            for w in ["wq", "wk", "wv", "wo"] {
                store.var(&p(w), &[d, d], Init::Glorot)?;
            }
            store.var(&p("ln2_g"), &[d], Init::Ones)?;
            store.var(&p("ln2_b"), &[d], Init::Zeros)?;
            store.var(&p("ffn_w1"), &[d, d * cfg.ffn_mult], Init::Glorot)?;
            store.var(&p("ffn_b1"), &[d * cfg.ffn_mult], Init::Zeros)?;
            store.var(&p("ffn_w2"), &[d * cfg.ffn_mult, d], Init::Glorot)?;
            store.var(&p("ffn_b2"), &[d], Init::Zeros)?;
        }
        Ok(Self { cfg, store, frozen: false })
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    fn patch_tokens(&self, image: &ImageBuf, image_idx: usize) -> Result<Tensor> {
        let p = self.cfg.patch;
        let grid = image.width / p;
        let mut data = Vec::with_capacity(grid * grid * p * p * 3);
        for gy in 0..grid {
            for gx in 0..grid {
                for py in 0..p {
                    for px in 0..p {
                        let pix = image.pixel(gx * p + px, gy * p + py);
                        data.extend_from_slice(&pix);
                    }
                }
            }
        }
        let flat = Tensor::from_vec(data, (grid * grid, p * p * 3), self.store.device())?;
        let x = nn::linear(&flat, &self.store.get("enc.patch_w")?, Some(&self.store.get("enc.patch_b")?))?;
        let pos = self.store.get("enc.pos_patch")?.narrow(0, 0, grid * grid)?;
        let img = self.store.get("enc.img_embed")?.narrow(0, image_idx, 1)?;
        Ok(x.add(&pos)?.broadcast_add(&img)?)
    }

    fn text_tokens(&self, ids: &[u32]) -> Result<Tensor> {
        if ids.len() > self.cfg.max_text_len {
            return Err(Error::Msg(format!(
                "prompt of {} tokens exceeds max_text_len {}",
                ids.len(),
                self.cfg.max_text_len
            )));
        }
        let idx = Tensor::from_vec(ids.to_vec(), ids.len(), self.store.device())?;
        let emb = self.store.get("enc.tok_embed")?.index_select(&idx, 0)?;
        let pos = self.store.get("enc.pos_text")?.narrow(0, 0, ids.len())?;
        Ok(emb.add(&pos)?)
    }

    /// Runs the block stack over (1, T, d) input, returning the states after
    /// each block index named in `capture` (1-based). With `train` false the
    /// graph is cut per block so frozen encodes stay flat in memory.
    fn forward_blocks(
        &self,
        mut x: Tensor,
        capture: &[usize],
        train: bool,
    ) -> Result<BTreeMap<usize, Tensor>> {
        let mut out = BTreeMap::new();
        for l in 0..self.cfg.depth {
            let p = |s: &str| format!("enc.l{l}.{s}");
            let h = nn::layer_norm(&x, &self.store.get(&p("ln1_g"))?, &self.store.get(&p("ln1_b"))?)?;
            let attn = nn::mha(
                &h,
                &h,
                &self.store.get(&p("wq"))?,
                &self.store.get(&p("wk"))?,
                &self.store.get(&p("wv"))?,
                &self.store.get(&p("wo"))?,
                self.cfg.heads,
                None,
            )?;
            x = (x + attn)?;
            let h = nn::layer_norm(&x, &self.store.get(&p("ln2_g"))?, &self.store.get(&p("ln2_b"))?)?;
            let h = nn::linear(&h, &self.store.get(&p("ffn_w1"))?, Some(&self.store.get(&p("ffn_b1"))?))?
                .silu()?;
            let h = nn::linear(&h, &self.store.get(&p("ffn_w2"))?, Some(&self.store.get(&p("ffn_b2"))?))?;
            x = (x + h)?;
            if !train {
                x = x.detach();
            }
            if capture.contains(&(l + 1)) {
                out.insert(l + 1, x.clone());
            }
        }
        Ok(out)
    }

    fn to_host(t: &Tensor) -> Result<Array2<f32>> {
        let (rows, cols) = t.dims2()?;
        let flat = t.flatten_all()?.to_vec1::<f32>()?;
        Ok(Array2::from_shape_vec((rows, cols), flat).expect("shape checked"))
    }

    /// Contrastive warm-up on deterministic toy image-caption pairs; returns
    /// the mean alignment loss over the first and last training epoch-slices.
    pub fn warm_up(&mut self, n_pairs: usize, steps: usize, seed: u64) -> Result<(f64, f64)> {
        if self.frozen {
            return Err(Error::FrozenViolation("warm_up on a frozen encoder".into()));
        }
        let pairs = toy_pairs(n_pairs, self.cfg.patch, seed);
        let batch = 20.min(n_pairs);
        let mut adam = Adam::new(AdamConfig { lr: 1e-3, clip: Some(1.0), ..Default::default() });
        let mut rng = ChaCha8Rng::seed_from_u64(vihoi_core::derive_seed(seed, &[0x11]));
        let mut first = None;
        let mut last = 0.0;
        for _step in 0..steps {
            let idx: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..pairs.len())).collect();
            let loss = self.contrastive_loss(&pairs, &idx)?;
            let value = nn::scalar_f64(&loss)?;
            let grads = loss.backward()?;
            adam.step(&self.store, &grads)?;
            first.get_or_insert(value);
            last = value;
        }
        Ok((first.unwrap_or(0.0), last))
    }

    fn contrastive_loss(&self, pairs: &[(ImageBuf, Vec<u32>)], idx: &[usize]) -> Result<Tensor> {
        let b = idx.len();
        let mut vis_rows = Vec::with_capacity(b);
        let mut txt_rows = Vec::with_capacity(b);
        for &i in idx {
            let (image, caption) = &pairs[i];
            let v = self.patch_tokens(image, 0)?;
            let t = self.text_tokens(caption)?;
            let n_vis = v.dims2()?.0;
            let x = Tensor::cat(&[&v, &t], 0)?.unsqueeze(0)?;
            let states = self.forward_blocks(x, &[self.cfg.depth], true)?;
            let top = states[&self.cfg.depth].squeeze(0)?;
            let vis = top.narrow(0, 0, n_vis)?.mean(0)?;
            let txt = top.narrow(0, n_vis, top.dims2()?.0 - n_vis)?.mean(0)?;
            vis_rows.push(vis.unsqueeze(0)?);
            txt_rows.push(txt.unsqueeze(0)?);
        }
        let refs: Vec<&Tensor> = vis_rows.iter().collect();
        let vis = nn::l2_normalize(&Tensor::cat(&refs, 0)?)?;
        let refs: Vec<&Tensor> = txt_rows.iter().collect();
        let txt = nn::l2_normalize(&Tensor::cat(&refs, 0)?)?;
        let logits = vis.matmul(&txt.t()?)?.affine(1.0 / 0.07, 0.0)?;
        let log_rows = candle_nn::ops::log_softmax(&logits, 1)?;
        let log_cols = candle_nn::ops::log_softmax(&logits, 0)?;
        let eye = Tensor::from_vec(
            (0..b * b).map(|i| if i % (b + 1) == 0 { 1f32 } else { 0.0 }).collect::<Vec<_>>(),
            (b, b),
            self.store.device(),
        )?;
        let pick = |lp: &Tensor| -> Result<Tensor> {
            Ok(lp.mul(&eye)?.sum_all()?.affine(-1.0 / b as f64, 0.0)?)
        };
        Ok((pick(&log_rows)? + pick(&log_cols)?)?.affine(0.5, 0.0)?)
    }
}

impl PriorSource for ToyMultimodalEncoder {
    fn layered(
        &self,
        images: &[ImageBuf; IMAGE_COUNT],
        prompt: &PromptBundle,
        layers: &[usize],
    ) -> Result<LayeredEmbeddings> {
        for l in layers {
            if *l < 1 || *l > self.cfg.depth {
                return Err(Error::LayerMissing(*l));
            }
        }
        let res = self.cfg.resolution;
        for img in images {
            if img.width != res || img.height != res {
                return Err(vihoi_core::Error::BadImageShape {
                    expected: format!("{res}x{res}"),
                    got: format!("{}x{}", img.width, img.height),
                }
                .into());
            }
        }
        let mut parts = Vec::with_capacity(IMAGE_COUNT + 1);
        for (i, img) in images.iter().enumerate() {
            parts.push(self.patch_tokens(img, i)?);
        }
        parts.push(self.text_tokens(&prompt.tokens)?);
        let refs: Vec<&Tensor> = parts.iter().collect();
        let x = Tensor::cat(&refs, 0)?.unsqueeze(0)?;
        let mut capture: Vec<usize> = layers.to_vec();
        capture.sort_unstable();
        capture.dedup();
        let states = self.forward_blocks(x, &capture, false)?;
        let mut host = BTreeMap::new();
        for (l, t) in states {
            host.insert(l, Self::to_host(&t.squeeze(0)?)?);
        }
        let n_vis = self.cfg.visual_tokens();
        Ok(LayeredEmbeddings {
            states: host,
            visual_span: (0, n_vis),
            text_span: (n_vis + prompt.text_span.0, n_vis + prompt.text_span.1),
            d_enc: self.cfg.d_enc,
        })
    }

    fn checksum(&self) -> String {
        self.store.checksum()
    }

    fn depth(&self) -> usize {
        self.cfg.depth
    }

    fn resolution(&self) -> usize {
        self.cfg.resolution
    }
}

/// Deterministic toy image-caption pairs for warm-up: each class couples a
/// color/stripe pattern with a fixed three-word caption.
fn toy_pairs(n: usize, patch: usize, seed: u64) -> Vec<(ImageBuf, Vec<u32>)> {
    let vocab = Vocab::builtin();
    let side = 2 * patch;
    let classes = 64usize;
    // Caption words drawn from the stable tail of the vocabulary.
    let word_base = 100u32;
    (0..n)
        .map(|i| {
            let class = i % classes;
            let key = vihoi_core::derive_seed(seed, &[class as u64]);
            let mut img = ImageBuf::new(side, side).expect("small toy image");
            let base = [
                0.2 + 0.6 * ((key & 0xff) as f32 / 255.0),
                0.2 + 0.6 * (((key >> 8) & 0xff) as f32 / 255.0),
                0.2 + 0.6 * (((key >> 16) & 0xff) as f32 / 255.0),
            ];
            let stripe = (key >> 24) as usize % side;
            for y in 0..side {
                for x in 0..side {
                    let mut c = base;
                    if x == stripe {
                        c = [1.0 - c[0], 1.0 - c[1], 1.0 - c[2]];
                    }
                    if (y / 4 + class) % 2 == 0 {
                        c[1] = (c[1] + 0.25).min(1.0);
                    }
                    img.set_pixel(x, y, c);
                }
            }
            let caption: Vec<u32> = (0..3)
                .map(|k| word_base + ((class * 3 + k) as u32 % (vocab.len() as u32 - word_base)))
                .collect();
            (img, caption)
        })
        .collect()
}

/// Frozen text-only transformer standing in for a pretrained contrastive
/// text encoder; used by the "CLIP-text" ablation as an alternative source
/// of per-token text states.
pub struct FrozenTextEncoder {
    store: ParamStore,
    depth: usize,
    d_enc: usize,
    heads: usize,
}

impl FrozenTextEncoder {
    pub fn new(d_enc: usize, seed: u64) -> Result<Self> {
        let depth = 4;
        let heads = 4;
        let mut store = ParamStore::new(DType::F32, seed);
        let vocab = Vocab::builtin();
        store.var("clip.tok_embed", &[vocab.len(), d_enc], Init::Normal(0.02))?;
        store.var("clip.pos", &[256, d_enc], Init::Normal(0.02))?;
        for l in 0..depth {
            let p = |s: &str| format!("clip.l{l}.{s}");
            for w in ["wq", "wk", "wv", "wo"] {
                store.var(&p(w), &[d_enc, d_enc], Init::Glorot)?;
            }
            store.var(&p("ln1_g"), &[d_enc], Init::Ones)?;
            store.var(&p("ln1_b"), &[d_enc], Init::Zeros)?;
            store.var(&p("ln2_g"), &[d_enc], Init::Ones)?;
            store.var(&p("ln2_b"), &[d_enc], Init::Zeros)?;
            store.var(&p("ffn_w1"), &[d_enc, 2 * d_enc], Init::Glorot)?;
            store.var(&p("ffn_b1"), &[2 * d_enc], Init::Zeros)?;
            store.var(&p("ffn_w2"), &[2 * d_enc, d_enc], Init::Glorot)?;
            store.var(&p("ffn_b2"), &[d_enc], Init::Zeros)?;
        }
        Ok(Self { store, depth, d_enc, heads })
    }

    pub fn text_states(&self, text: &str) -> Result<Array2<f32>> {
        let vocab = Vocab::builtin();
        let ids = vocab.tokenize(text);
        let idx = Tensor::from_vec(ids.clone(), ids.len(), self.store.device())?;
        let emb = self.store.get("clip.tok_embed")?.index_select(&idx, 0)?;
        let pos = self.store.get("clip.pos")?.narrow(0, 0, ids.len())?;
        let mut x = emb.add(&pos)?.unsqueeze(0)?;
        for l in 0..self.depth {
            let p = |s: &str| format!("clip.l{l}.{s}");
            let h = nn::layer_norm(&x, &self.store.get(&p("ln1_g"))?, &self.store.get(&p("ln1_b"))?)?;
            let attn = nn::mha(
                &h,
                &h,
                &self.store.get(&p("wq"))?,
                &self.store.get(&p("wk"))?,
                &self.store.get(&p("wv"))?,
                &self.store.get(&p("wo"))?,
                self.heads,
                None,
            )?;
            x = (x + attn)?;
            let h = nn::layer_norm(&x, &self.store.get(&p("ln2_g"))?, &self.store.get(&p("ln2_b"))?)?;
            let h = nn::linear(&h, &self.store.get(&p("ffn_w1"))?, Some(&self.store.get(&p("ffn_b1"))?))?
                .silu()?;
            let h = nn::linear(&h, &self.store.get(&p("ffn_w2"))?, Some(&self.store.get(&p("ffn_b2"))?))?;
            x = (x + h)?.detach();
        }
        let (rows, cols) = (ids.len(), self.d_enc);
        let flat = x.squeeze(0)?.flatten_all()?.to_vec1::<f32>()?;
        Ok(Array2::from_shape_vec((rows, cols), flat).expect("shape checked"))
    }

    pub fn d_enc(&self) -> usize {
        self.d_enc
    }

    pub fn export(&self) -> Result<BTreeMap<String, Tensor>> {
        self.store.export()
    }

    /// Overwrites every parameter from a checkpoint tensor map.
    pub fn restore(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        for name in self.store.names() {
            match tensors.get(&name) {
                Some(t) => self.store.set(&name, t)?,
                None => return Err(Error::BadCheckpoint(format!("missing tensor {name}"))),
            }
        }
        Ok(())
    }

    pub fn checksum(&self) -> String {
        self.store.checksum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::build_extraction_prompt;

    fn small_cfg() -> ToyEncoderConfig {
        ToyEncoderConfig { depth: 12, d_enc: 64, heads: 4, resolution: 64, ..Default::default() }
    }

    fn test_images(res: usize) -> [ImageBuf; 3] {
        let mut out = Vec::new();
        for k in 0..3usize {
            let mut img = ImageBuf::new(res, res).unwrap();
            for y in 0..res {
                for x in 0..res {
                    let v = ((x + y * 3 + k * 17) % 97) as f32 / 96.0;
                    img.set_pixel(x, y, [v, 1.0 - v, 0.5 * v]);
                }
            }
            out.push(img);
        }
        out.try_into().unwrap()
    }

    #[test]
    fn shallow_encoders_are_rejected() {
        let cfg = ToyEncoderConfig { depth: 8, ..Default::default() };
        match ToyMultimodalEncoder::new(cfg, 1) {
            Err(Error::DepthTooSmall { got: 8, min: 12 }) => {}
            Err(other) => panic!("expected DepthTooSmall, got {other:?}"),
            Ok(_) => panic!("expected DepthTooSmall, got an encoder"),
        }
    }

    #[test]
    fn encode_shapes_spans_and_memory_contract() {
        let enc = ToyMultimodalEncoder::new(small_cfg(), 5).unwrap();
        let prompt = build_extraction_prompt("Lift the small box.").unwrap();
        let imgs = test_images(64);
        let emb = enc.layered(&imgs, &prompt, &[3, 12]).unwrap();
        let n_vis = 3 * (64 / 16) * (64 / 16);
        assert_eq!(emb.visual_span, (0, n_vis));
        assert_eq!(emb.text_span.1 - emb.text_span.0, prompt.text_span.1 - prompt.text_span.0);
        assert_eq!(emb.seq_len(), n_vis + prompt.tokens.len());
        // Only the requested layers are materialized.
        assert_eq!(emb.states.keys().cloned().collect::<Vec<_>>(), vec![3, 12]);
        let (e_v, e_t) = extract_priors(&emb, &ExtractionConfig::default()).unwrap();
        assert_eq!(e_v.dim(), (n_vis, 64));
        assert_eq!(e_t.dim(), (prompt.text_span.1 - prompt.text_span.0, 64));
    }

    #[test]
    fn default_resolution_patch_count_is_588() {
        let cfg = ToyEncoderConfig::default();
        assert_eq!(cfg.visual_tokens(), 588);
    }

    #[test]
    fn wrong_image_shape_is_rejected() {
        let enc = ToyMultimodalEncoder::new(small_cfg(), 5).unwrap();
        let prompt = build_extraction_prompt("Lift the box.").unwrap();
        let imgs = test_images(32);
        match enc.layered(&imgs, &prompt, &[3]) {
            Err(Error::Core(vihoi_core::Error::BadImageShape { .. })) => {}
            other => panic!("expected BadImageShape, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_layers_are_missing() {
        let enc = ToyMultimodalEncoder::new(small_cfg(), 5).unwrap();
        let prompt = build_extraction_prompt("Lift the box.").unwrap();
        let imgs = test_images(64);
        assert!(matches!(enc.layered(&imgs, &prompt, &[24]), Err(Error::LayerMissing(24))));
        assert!(matches!(enc.layered(&imgs, &prompt, &[0]), Err(Error::LayerMissing(0))));
        // A request that skips a layer leaves it unavailable downstream.
        let emb = enc.layered(&imgs, &prompt, &[12]).unwrap();
        let cfg = ExtractionConfig::default();
        assert!(matches!(extract_priors(&emb, &cfg), Err(Error::LayerMissing(3))));
        // The text-only variant needs no visual layer at all.
        let only = ExtractionConfig { text_only: true, ..cfg };
        let (e_v, _) = extract_priors(&emb, &only).unwrap();
        assert_eq!(e_v.dim(), (1, 64));
        assert!(e_v.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn encoding_is_deterministic_and_annotation_sensitive() {
        let enc = ToyMultimodalEncoder::new(small_cfg(), 5).unwrap();
        let imgs = test_images(64);
        let p1 = build_extraction_prompt("Lift the small box.").unwrap();
        let a = enc.layered(&imgs, &p1, &[3, 12]).unwrap();
        let b = enc.layered(&imgs, &p1, &[3, 12]).unwrap();
        assert_eq!(a.states[&12], b.states[&12]);
        assert_eq!(a.states[&3], b.states[&3]);
        let p2 = build_extraction_prompt("Kick the large lamp.").unwrap();
        let c = enc.layered(&imgs, &p2, &[3, 12]).unwrap();
        assert_eq!(c.visual_span, a.visual_span);
        let (_, e_t_a) = extract_priors(&a, &ExtractionConfig::default()).unwrap();
        let (_, e_t_c) = extract_priors(&c, &ExtractionConfig::default()).unwrap();
        assert_eq!(e_t_a.shape(), e_t_c.shape(), "both annotations span five tokens");
        assert_ne!(e_t_a, e_t_c);
    }

    #[test]
    fn same_layer_extraction_works_for_v12_t12() {
        let enc = ToyMultimodalEncoder::new(small_cfg(), 5).unwrap();
        let imgs = test_images(64);
        let prompt = build_extraction_prompt("Lift the box.").unwrap();
        let emb = enc.layered(&imgs, &prompt, &[12]).unwrap();
        let cfg = ExtractionConfig { visual_layer: 12, text_layer: 12, text_only: false };
        let (e_v, e_t) = extract_priors(&emb, &cfg).unwrap();
        assert_eq!(e_v.nrows(), emb.visual_span.1);
        assert!(e_t.nrows() > 0);
    }

    #[test]
    fn warm_up_halves_the_alignment_loss_then_freezes() {
        let mut enc = ToyMultimodalEncoder::new(small_cfg(), 7).unwrap();
        let before = enc.checksum();
        let (first, last) = enc.warm_up(200, 60, 13).unwrap();
        assert!(last <= first * 0.5, "alignment loss {first:.4} -> {last:.4}");
        assert_ne!(before, enc.checksum(), "warm-up must move parameters");
        enc.freeze();
        let frozen_sum = enc.checksum();
        assert!(matches!(enc.warm_up(10, 1, 1), Err(Error::FrozenViolation(_))));
        assert_eq!(frozen_sum, enc.checksum());
    }

    #[test]
    fn frozen_text_encoder_is_deterministic_per_seed() {
        let a = FrozenTextEncoder::new(64, 3).unwrap();
        let b = FrozenTextEncoder::new(64, 3).unwrap();
        let sa = a.text_states("Lift the small box.").unwrap();
        let sb = b.text_states("Lift the small box.").unwrap();
        assert_eq!(sa, sb);
        assert_eq!(sa.ncols(), 64);
        let c = FrozenTextEncoder::new(64, 4).unwrap();
        assert_ne!(sa, c.text_states("Lift the small box.").unwrap());
    }
}
