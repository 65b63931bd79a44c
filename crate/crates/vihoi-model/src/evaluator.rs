//! Retrieval evaluator: a text encoder and a motion encoder trained so that
//! matched pairs land close in a shared 512-dim space. The motion side is a
//! bidirectional GRU over the 147-wide evaluation representation; the text
//! side is either a small trainable GRU or a frozen pretrained-style
//! transformer with a trainable linear probe.

use std::path::Path;

use candle_core::{DType, Tensor};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use vihoi_core::derive_seed;
use vihoi_core::motion::EVAL_DIM;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::diffusion::TrainStats;
use crate::encoder::FrozenTextEncoder;
use crate::nn::{self, Adam, AdamConfig, Init, ParamStore};
use crate::tokenizer::Vocab;
use crate::{Error, Result};

pub const MIN_PAIRS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextEncoderKind {
    /// Token embedding plus GRU, trained jointly with the motion encoder.
    Toy,
    /// Frozen transformer text states, mean-pooled, with a trainable probe.
    Frozen,
}

impl TextEncoderKind {
    pub fn label(self) -> &'static str {
        match self {
            TextEncoderKind::Toy => "toy",
            TextEncoderKind::Frozen => "frozen",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorConfig {
    pub hidden: usize,
    pub out_dim: usize,
    /// Token embedding width for the toy text encoder.
    pub text_embed: usize,
    /// State width of the frozen text transformer.
    pub frozen_d: usize,
    pub margin: f64,
    pub lr: f64,
    pub batch: usize,
    pub text_encoder: TextEncoderKind,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            out_dim: 512,
            text_embed: 128,
            frozen_d: 128,
            margin: 0.2,
            lr: 1e-3,
            batch: 32,
            text_encoder: TextEncoderKind::Toy,
        }
    }
}

/// One annotated training or evaluation item: an L x 147 evaluation matrix
/// and the sentence describing it.
#[derive(Debug, Clone)]
pub struct EvalPair {
    pub motion: Array2<f64>,
    pub text: String,
}

pub struct EvaluatorModel {
    pub cfg: EvaluatorConfig,
    pub store: ParamStore,
    frozen: Option<FrozenTextEncoder>,
}

impl EvaluatorModel {
    pub fn new(cfg: EvaluatorConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new(DType::F32, seed);
        let h = cfg.hidden;
        for dir in ["fwd", "bwd"] {
            store.var(&format!("ev.mot.{dir}.w_x"), &[EVAL_DIM, 3 * h], Init::Glorot)?;
            store.var(&format!("ev.mot.{dir}.w_h"), &[h, 3 * h], Init::Glorot)?;
            store.var(&format!("ev.mot.{dir}.b"), &[3 * h], Init::Zeros)?;
        }
        store.var("ev.mot.out_w", &[2 * h, cfg.out_dim], Init::Glorot)?;
        store.var("ev.mot.out_b", &[cfg.out_dim], Init::Zeros)?;
        let frozen = match cfg.text_encoder {
            TextEncoderKind::Toy => {
                let vocab = Vocab::builtin();
                store.var("ev.txt.embed", &[vocab.len(), cfg.text_embed], Init::Normal(0.02))?;
                store.var("ev.txt.w_x", &[cfg.text_embed, 3 * h], Init::Glorot)?;
                store.var("ev.txt.w_h", &[h, 3 * h], Init::Glorot)?;
                store.var("ev.txt.b", &[3 * h], Init::Zeros)?;
                store.var("ev.txt.out_w", &[h, cfg.out_dim], Init::Glorot)?;
                store.var("ev.txt.out_b", &[cfg.out_dim], Init::Zeros)?;
                None
            }
            TextEncoderKind::Frozen => {
                store.var("ev.txt.out_w", &[cfg.frozen_d, cfg.out_dim], Init::Glorot)?;
                store.var("ev.txt.out_b", &[cfg.out_dim], Init::Zeros)?;
                Some(FrozenTextEncoder::new(cfg.frozen_d, derive_seed(seed, &[0xc11f]))?)
            }
        };
        Ok(Self { cfg, store, frozen })
    }

    pub fn frozen_checksum(&self) -> Option<String> {
        self.frozen.as_ref().map(|f| f.checksum())
    }

    /// One masked GRU pass over a padded batch; returns the last valid
    /// hidden state per row. `x` is (B, L, in), `mask` is (B, L) with ones
    /// on real steps. Rows whose mask has ended carry their state forward.
    fn gru(&self, prefix: &str, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (b, l, _) = x.dims3()?;
        let h = self.cfg.hidden;
        let w_x = self.store.get(&format!("{prefix}.w_x"))?;
        let w_h = self.store.get(&format!("{prefix}.w_h"))?;
        let bias = self.store.get(&format!("{prefix}.b"))?;
        let xw = x.broadcast_matmul(&w_x)?.broadcast_add(&bias)?;
        let mut state = Tensor::zeros((b, h), x.dtype(), x.device())?;
        for t in 0..l {
            let xt = xw.narrow(1, t, 1)?.squeeze(1)?;
            let hw = state.matmul(&w_h)?;
            let z = candle_nn::ops::sigmoid(&xt.narrow(1, 0, h)?.add(&hw.narrow(1, 0, h)?)?)?;
            let r = candle_nn::ops::sigmoid(&xt.narrow(1, h, h)?.add(&hw.narrow(1, h, h)?)?)?;
            let n = xt.narrow(1, 2 * h, h)?.add(&r.mul(&hw.narrow(1, 2 * h, h)?)?)?.tanh()?;
            let one_minus_z = z.affine(-1.0, 1.0)?;
            let next = one_minus_z.mul(&n)?.add(&z.mul(&state)?)?;
            let m = mask.narrow(1, t, 1)?;
            let keep = m.affine(-1.0, 1.0)?;
            state = m.broadcast_mul(&next)?.add(&keep.broadcast_mul(&state)?)?;
        }
        Ok(state)
    }

    /// Embeds a batch of evaluation matrices into unit vectors, (B, out).
    pub fn embed_motion_batch(&self, motions: &[Array2<f64>]) -> Result<Tensor> {
        if motions.is_empty() {
            return Err(Error::Msg("empty motion batch".into()));
        }
        for m in motions {
            if m.ncols() != EVAL_DIM {
                return Err(Error::WidthMismatch { got: m.ncols(), want: EVAL_DIM });
            }
            if m.nrows() == 0 {
                return Err(Error::Msg("zero-length motion".into()));
            }
        }
        let b = motions.len();
        let l = motions.iter().map(|m| m.nrows()).max().expect("nonempty");
        let mut fwd = vec![0f32; b * l * EVAL_DIM];
        let mut bwd = vec![0f32; b * l * EVAL_DIM];
        let mut mask = vec![0f32; b * l];
        for (i, m) in motions.iter().enumerate() {
            let rows = m.nrows();
            for t in 0..rows {
                mask[i * l + t] = 1.0;
                for c in 0..EVAL_DIM {
                    fwd[(i * l + t) * EVAL_DIM + c] = m[[t, c]] as f32;
                    bwd[(i * l + t) * EVAL_DIM + c] = m[[rows - 1 - t, c]] as f32;
                }
            }
        }
        let dev = self.store.device();
        let fwd = Tensor::from_vec(fwd, (b, l, EVAL_DIM), dev)?;
        let bwd = Tensor::from_vec(bwd, (b, l, EVAL_DIM), dev)?;
        let mask = Tensor::from_vec(mask, (b, l), dev)?;
        let h_f = self.gru("ev.mot.fwd", &fwd, &mask)?;
        let h_b = self.gru("ev.mot.bwd", &bwd, &mask)?;
        let joint = Tensor::cat(&[&h_f, &h_b], 1)?;
        let out = nn::linear(
            &joint,
            &self.store.get("ev.mot.out_w")?,
            Some(&self.store.get("ev.mot.out_b")?),
        )?;
        nn::l2_normalize(&out)
    }

    /// Embeds a batch of sentences into unit vectors, (B, out).
    pub fn embed_text_batch(&self, texts: &[String]) -> Result<Tensor> {
        if texts.is_empty() {
            return Err(Error::Msg("empty text batch".into()));
        }
        let dev = self.store.device();
        match self.cfg.text_encoder {
            TextEncoderKind::Toy => {
                let vocab = Vocab::builtin();
                let ids: Vec<Vec<u32>> = texts
                    .iter()
                    .map(|t| {
                        let v = vocab.tokenize(t);
                        if v.is_empty() { vec![0] } else { v }
                    })
                    .collect();
                let b = ids.len();
                let l = ids.iter().map(|v| v.len()).max().expect("nonempty");
                let mut flat = vec![0u32; b * l];
                let mut mask = vec![0f32; b * l];
                for (i, row) in ids.iter().enumerate() {
                    for (t, &id) in row.iter().enumerate() {
                        flat[i * l + t] = id;
                        mask[i * l + t] = 1.0;
                    }
                }
                let idx = Tensor::from_vec(flat, b * l, dev)?;
                let emb = self
                    .store
                    .get("ev.txt.embed")?
                    .index_select(&idx, 0)?
                    .reshape((b, l, self.cfg.text_embed))?;
                let mask = Tensor::from_vec(mask, (b, l), dev)?;
                let h = self.gru("ev.txt", &emb, &mask)?;
                let out = nn::linear(
                    &h,
                    &self.store.get("ev.txt.out_w")?,
                    Some(&self.store.get("ev.txt.out_b")?),
                )?;
                nn::l2_normalize(&out)
            }
            TextEncoderKind::Frozen => {
                let frozen = self.frozen.as_ref().expect("frozen kind has an encoder");
                let d = self.cfg.frozen_d;
                let mut pooled = Vec::with_capacity(texts.len() * d);
                for t in texts {
                    let states = frozen.text_states(t)?;
                    let rows = states.nrows().max(1) as f32;
                    for c in 0..d {
                        pooled.push(states.column(c).sum() / rows);
                    }
                }
                let feats = Tensor::from_vec(pooled, (texts.len(), d), dev)?;
                let out = nn::linear(
                    &feats,
                    &self.store.get("ev.txt.out_w")?,
                    Some(&self.store.get("ev.txt.out_b")?),
                )?;
                nn::l2_normalize(&out)
            }
        }
    }

    /// Both-direction margin loss over one batch: the matched similarity on
    /// the diagonal must beat every in-batch negative by the margin.
    pub fn contrastive_loss(&self, batch: &[EvalPair]) -> Result<Tensor> {
        let b = batch.len();
        if b < 2 {
            return Err(Error::Msg("contrastive batch needs at least 2 pairs".into()));
        }
        let motions: Vec<Array2<f64>> = batch.iter().map(|p| p.motion.clone()).collect();
        let texts: Vec<String> = batch.iter().map(|p| p.text.clone()).collect();
        let m = self.embed_motion_batch(&motions)?;
        let t = self.embed_text_batch(&texts)?;
        let sims = m.matmul(&t.t()?)?;
        let eye = Tensor::eye(b, sims.dtype(), sims.device())?;
        let off = eye.affine(-1.0, 1.0)?;
        let diag = sims.mul(&eye)?.sum_keepdim(1)?;
        let rows = sims.broadcast_sub(&diag)?.affine(1.0, self.cfg.margin)?.relu()?.mul(&off)?;
        let cols = sims.broadcast_sub(&diag.t()?)?.affine(1.0, self.cfg.margin)?.relu()?.mul(&off)?;
        let denom = (2 * b * (b - 1)) as f64;
        Ok(rows.sum_all()?.add(&cols.sum_all()?)?.affine(1.0 / denom, 0.0)?)
    }

    fn manifest(&self, step: usize, train_seed: u64) -> serde_json::Value {
        serde_json::json!({
            "schema_version": 1,
            "kind": "evaluator",
            "step": step,
            "seeds": { "train": train_seed },
            "config": self.cfg,
            "text_encoder": self.cfg.text_encoder.label(),
            "frozen_checksum": self.frozen_checksum(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>, step: usize, train_seed: u64) -> Result<()> {
        let mut tensors = self.store.export()?;
        if let Some(f) = &self.frozen {
            tensors.extend(f.export()?);
        }
        save_checkpoint(path, &self.manifest(step, train_seed), &tensors)
    }
}

pub fn load_evaluator(path: impl AsRef<Path>) -> Result<(EvaluatorModel, usize)> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.manifest["kind"] != "evaluator" {
        return Err(Error::BadCheckpoint(format!(
            "kind {} is not an evaluator",
            ckpt.manifest["kind"]
        )));
    }
    let cfg: EvaluatorConfig = serde_json::from_value(ckpt.manifest["config"].clone())?;
    let model = EvaluatorModel::new(cfg, 0)?;
    for name in model.store.names() {
        match ckpt.tensors.get(&name) {
            Some(t) => model.store.set(&name, t)?,
            None => return Err(Error::BadCheckpoint(format!("missing tensor {name}"))),
        }
    }
    if let Some(f) = &model.frozen {
        f.restore(&ckpt.tensors)?;
    }
    let step = ckpt.manifest["step"].as_u64().unwrap_or(0) as usize;
    Ok((model, step))
}

#[derive(Debug, Clone)]
pub struct EvalTrainOptions {
    pub steps: usize,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for EvalTrainOptions {
    fn default() -> Self {
        Self { steps: 300, seed: 0, log_every: 25 }
    }
}

/// Trains a fresh evaluator on matched pairs with in-batch negatives.
pub fn train_evaluator(
    pairs: &[EvalPair],
    cfg: EvaluatorConfig,
    opts: &EvalTrainOptions,
) -> Result<(EvaluatorModel, TrainStats)> {
    if pairs.len() < MIN_PAIRS {
        return Err(Error::CorpusTooSmall { got: pairs.len(), need: MIN_PAIRS });
    }
    let model = EvaluatorModel::new(cfg, derive_seed(opts.seed, &[0xe7a1]))?;
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut stats =
        TrainStats { first_loss: 0.0, final_loss: 0.0, steps_run: 0, losses: Vec::new() };
    let batch_size = cfg.batch.min(pairs.len());
    for step in 0..opts.steps {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, &[step as u64]));
        let picks = rand::seq::index::sample(&mut rng, pairs.len(), batch_size);
        let batch: Vec<EvalPair> = picks.iter().map(|i| pairs[i].clone()).collect();
        let loss = model.contrastive_loss(&batch)?;
        let grads = loss.backward()?;
        adam.step(&model.store, &grads)?;
        let val = nn::scalar_f64(&loss)?;
        if step == 0 {
            stats.first_loss = val;
        }
        stats.final_loss = val;
        stats.steps_run = step + 1;
        if opts.log_every > 0 && (step % opts.log_every == 0 || step + 1 == opts.steps) {
            stats.losses.push((step, val));
        }
    }
    Ok((model, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn small_cfg(kind: TextEncoderKind) -> EvaluatorConfig {
        EvaluatorConfig {
            hidden: 32,
            out_dim: 64,
            text_embed: 32,
            frozen_d: 48,
            lr: 2e-3,
            ..EvaluatorConfig::default()
        }
        .with_kind(kind)
    }

    impl EvaluatorConfig {
        fn with_kind(mut self, kind: TextEncoderKind) -> Self {
            self.text_encoder = kind;
            self
        }
    }

    fn random_motion(rng: &mut ChaCha8Rng, len: usize) -> Array2<f64> {
        Array2::from_shape_fn((len, EVAL_DIM), |_| rng.sample::<f64, _>(StandardNormal))
    }

    /// Class-coded toy corpus: the sentence names the class and the motion
    /// is a class-specific sinusoid plus small noise.
    fn toy_corpus(n: usize, classes: usize, seed: u64) -> Vec<EvalPair> {
        let words =
            ["lift", "push", "pull", "kick", "swing", "drag", "throw", "carry", "hold", "move"];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let k = i % classes;
                let len = 10;
                let motion = Array2::from_shape_fn((len, EVAL_DIM), |(t, c)| {
                    let base = ((k * 31 + c) as f64 * 0.7 + t as f64 * 0.3).sin();
                    base + 0.05 * rng.sample::<f64, _>(StandardNormal)
                });
                let text = format!("{} the {} object", words[k % words.len()], k);
                EvalPair { motion, text }
            })
            .collect()
    }

    #[test]
    fn embeddings_are_unit_normalized_for_both_text_encoders() {
        for kind in [TextEncoderKind::Toy, TextEncoderKind::Frozen] {
            let model = EvaluatorModel::new(small_cfg(kind), 3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let motions: Vec<_> = (0..4).map(|i| random_motion(&mut rng, 6 + i)).collect();
            let texts: Vec<String> =
                (0..4).map(|i| format!("sequence number {i} does something")).collect();
            for emb in [
                model.embed_motion_batch(&motions).unwrap(),
                model.embed_text_batch(&texts).unwrap(),
            ] {
                let sq = emb.sqr().unwrap().sum(1).unwrap().to_vec1::<f32>().unwrap();
                for n in sq {
                    assert!((n as f64 - 1.0).abs() < 1e-6, "norm^2 {n}");
                }
            }
        }
    }

    #[test]
    fn variable_lengths_match_their_solo_embeddings() {
        let model = EvaluatorModel::new(small_cfg(TextEncoderKind::Toy), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_motion(&mut rng, 5);
        let b = random_motion(&mut rng, 9);
        let batched = model.embed_motion_batch(&[a.clone(), b.clone()]).unwrap();
        let solo_a = model.embed_motion_batch(&[a]).unwrap();
        let solo_b = model.embed_motion_batch(&[b]).unwrap();
        let row = |t: &Tensor, i| t.narrow(0, i, 1).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let da: f32 = row(&batched, 0)
            .iter()
            .zip(row(&solo_a, 0))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f32::max);
        let db: f32 = row(&batched, 1)
            .iter()
            .zip(row(&solo_b, 0))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f32::max);
        assert!(da < 1e-5 && db < 1e-5, "padding changed results: {da} {db}");
    }

    #[test]
    fn untrained_retrieval_sits_at_chance() {
        let cfg = small_cfg(TextEncoderKind::Toy);
        let model = EvaluatorModel::new(cfg, 99).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n_batches = 40;
        let mut hits = 0usize;
        for bi in 0..n_batches {
            let motions: Vec<_> = (0..32).map(|_| random_motion(&mut rng, 8)).collect();
            let texts: Vec<String> = (0..32)
                .map(|i| format!("batch {bi} item {i} moves the shape around quickly"))
                .collect();
            let m = model.embed_motion_batch(&motions).unwrap();
            let t = model.embed_text_batch(&texts).unwrap();
            let mh: Vec<f32> = m.flatten_all().unwrap().to_vec1().unwrap();
            let th: Vec<f32> = t.flatten_all().unwrap().to_vec1().unwrap();
            let d = cfg.out_dim;
            for i in 0..32 {
                let dist = |a: &[f32], b: &[f32]| -> f32 {
                    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
                };
                let own = dist(&th[i * d..(i + 1) * d], &mh[i * d..(i + 1) * d]);
                let better = (0..32)
                    .filter(|&j| j != i)
                    .filter(|&j| dist(&th[i * d..(i + 1) * d], &mh[j * d..(j + 1) * d]) < own)
                    .count();
                if better == 0 {
                    hits += 1;
                }
            }
        }
        let top1 = hits as f64 / (n_batches * 32) as f64;
        assert!((top1 - 1.0 / 32.0).abs() < 0.06, "untrained top-1 {top1}");
    }

    #[test]
    fn training_separates_matched_from_unmatched() {
        let pairs = toy_corpus(200, 8, 21);
        let opts = EvalTrainOptions { steps: 60, seed: 4, log_every: 0 };
        let (model, stats) =
            train_evaluator(&pairs, small_cfg(TextEncoderKind::Toy), &opts).unwrap();
        assert!(stats.final_loss < stats.first_loss, "{stats:?}");
        let motions: Vec<_> = pairs.iter().map(|p| p.motion.clone()).collect();
        let texts: Vec<String> = pairs.iter().map(|p| p.text.clone()).collect();
        let m = model.embed_motion_batch(&motions).unwrap();
        let t = model.embed_text_batch(&texts).unwrap();
        let mh: Vec<f32> = m.flatten_all().unwrap().to_vec1().unwrap();
        let th: Vec<f32> = t.flatten_all().unwrap().to_vec1().unwrap();
        let d = model.cfg.out_dim;
        let cos = |i: usize, j: usize| -> f64 {
            th[i * d..(i + 1) * d]
                .iter()
                .zip(&mh[j * d..(j + 1) * d])
                .map(|(a, b)| (*a as f64) * (*b as f64))
                .sum()
        };
        let mut matched: Vec<f64> = (0..200).map(|i| cos(i, i)).collect();
        // Offset by an odd step so text class != motion class for every pair.
        let mut unmatched: Vec<f64> = (0..200).map(|i| cos(i, (i + 3) % 200)).collect();
        matched.sort_by(f64::total_cmp);
        unmatched.sort_by(f64::total_cmp);
        let med_m = matched[100];
        let med_u = unmatched[100];
        assert!(med_m > med_u + 0.1, "matched median {med_m}, unmatched {med_u}");
    }

    #[test]
    fn tiny_corpora_are_rejected() {
        let pairs = toy_corpus(31, 4, 1);
        match train_evaluator(&pairs, small_cfg(TextEncoderKind::Toy), &Default::default()) {
            Err(Error::CorpusTooSmall { got: 31, need: 32 }) => {}
            Err(e) => panic!("wrong error: {e}"),
            Ok(_) => panic!("31 pairs should be rejected"),
        }
    }

    #[test]
    fn checkpoints_round_trip_for_both_text_encoders() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let motions = vec![random_motion(&mut rng, 7)];
        let texts = vec!["pick up the crate and walk".to_string()];
        for kind in [TextEncoderKind::Toy, TextEncoderKind::Frozen] {
            let model = EvaluatorModel::new(small_cfg(kind), 17).unwrap();
            let path = dir.path().join(format!("ev_{}.ckpt", kind.label()));
            model.save(&path, 12, 34).unwrap();
            let (loaded, step) = load_evaluator(&path).unwrap();
            assert_eq!(step, 12);
            assert_eq!(loaded.cfg, model.cfg);
            assert_eq!(loaded.frozen_checksum(), model.frozen_checksum());
            let before_m = model.embed_motion_batch(&motions).unwrap();
            let after_m = loaded.embed_motion_batch(&motions).unwrap();
            let before_t = model.embed_text_batch(&texts).unwrap();
            let after_t = loaded.embed_text_batch(&texts).unwrap();
            for (a, b) in [(before_m, after_m), (before_t, after_t)] {
                let av: Vec<f32> = a.flatten_all().unwrap().to_vec1().unwrap();
                let bv: Vec<f32> = b.flatten_all().unwrap().to_vec1().unwrap();
                assert_eq!(av, bv, "{} embeddings drifted across save/load", kind.label());
            }
        }
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let pairs = toy_corpus(40, 4, 9);
        let opts = EvalTrainOptions { steps: 5, seed: 8, log_every: 1 };
        let cfg = small_cfg(TextEncoderKind::Toy);
        let (a, sa) = train_evaluator(&pairs, cfg, &opts).unwrap();
        let (b, sb) = train_evaluator(&pairs, cfg, &opts).unwrap();
        assert_eq!(sa.losses, sb.losses);
        assert_eq!(a.store.checksum(), b.store.checksum());
        let (_, sc) =
            train_evaluator(&pairs, cfg, &EvalTrainOptions { seed: 9, ..opts }).unwrap();
        assert_ne!(sa.losses, sc.losses);
    }
}
