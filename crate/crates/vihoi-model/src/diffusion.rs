//! The generation pipeline: per-item priors (encoder states, object
//! geometry, clean motion), normalized training batches, the training loop
//! with atomic checkpointing, and strided ancestral sampling.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use vihoi_core::bps::{encode_object, BpsConfig};
use vihoi_core::derive_seed;
use vihoi_core::keypoints::sample_keypoints;
use vihoi_core::mesh::{make_primitive, ObjectMesh, PrimitiveKind};
use vihoi_core::motion::{sanitize_model_matrix, MotionSequence, MODEL_DIM};
use vihoi_core::render::ImageBuf;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::denoiser::{Denoiser, DenoiserConfig, DenoiserInput, GeometryFusion};
use crate::encoder::{extract_priors, ExtractionConfig, PriorSource};
use crate::nn::{self, Adam, AdamConfig, ParamStore};
use crate::prompts::build_extraction_prompt;
use crate::qformer::{QFormer, QFormerConfig};
use crate::schedule::{make_schedule, q_sample_tensor, NoiseSchedule, ScheduleKind};
use crate::{Error, Result};

pub const KEYFRAME_FILES: [&str; 3] = ["kf_0.png", "kf_1.png", "kf_2.png"];

/// How the raw embedding segments become conditioning tokens. The pooling
/// variant (one mean over rows plus a linear map) exists to measure what the
/// query attention actually buys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    #[default]
    QFormer,
    Pool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DiffusionConfig {
    pub t_steps: usize,
    pub sample_steps: usize,
    pub schedule: ScheduleKind,
    pub denoiser: DenoiserConfig,
    pub extraction: ExtractionConfig,
    #[serde(default)]
    pub adapter: AdapterKind,
    pub k_visual: usize,
    pub k_text: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    /// Probability of replacing the visual prior with the zero sentinel
    /// during training; pushes the model to also listen to the text prior.
    pub visual_dropout: f64,
    /// Reserved: classifier-free guidance stays off in this pipeline.
    pub guidance: bool,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            t_steps: 1000,
            sample_steps: 100,
            schedule: ScheduleKind::Cosine,
            denoiser: DenoiserConfig::default(),
            extraction: ExtractionConfig::default(),
            adapter: AdapterKind::default(),
            k_visual: 1,
            k_text: 1,
            lr: 1e-4,
            batch_size: 16,
            clip_norm: 1.0,
            visual_dropout: 0.0,
            guidance: false,
        }
    }
}

/// One training/eval item with everything the sequence dir provides.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub id: String,
    pub sequence: MotionSequence,
    pub mesh: ObjectMesh,
    pub images: [ImageBuf; 3],
    pub subject_id: u32,
}

pub fn kind_from_str(s: &str) -> Result<PrimitiveKind> {
    PrimitiveKind::ALL
        .iter()
        .copied()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| Error::Msg(format!("unknown object kind {s:?}")))
}

impl TrainItem {
    /// Loads a sequence directory written by the data generator. The three
    /// reference keyframes must be present.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let (sequence, meta) = vihoi_core::container::load_sequence_dir(dir)?;
        let mesh = make_primitive(kind_from_str(&meta.object_kind)?, &meta.object_dims)?;
        let mut images = Vec::with_capacity(3);
        for name in KEYFRAME_FILES {
            let path = dir.join(name);
            if !path.exists() {
                return Err(Error::MissingReferenceImages(path.display().to_string()));
            }
            images.push(ImageBuf::load_png(&path)?);
        }
        let id = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(Self {
            id,
            sequence,
            mesh,
            images: images.try_into().expect("three keyframes"),
            subject_id: meta.subject_id,
        })
    }
}

/// Extracted conditioning for one item, independent of model parameters.
#[derive(Debug, Clone)]
pub struct ItemPriors {
    pub id: String,
    pub e_v: Array2<f32>,
    pub e_t: Array2<f32>,
    pub geom: Vec<f32>,
    pub x0: Array2<f64>,
    pub contact: Array2<bool>,
    pub fps: f64,
    pub text: String,
}

impl ItemPriors {
    pub fn len(&self) -> usize {
        self.x0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.nrows() == 0
    }
}

/// Object geometry features for the configured fusion mode, computed on the
/// canonical (untransformed) mesh.
pub fn geometry_features(mesh: &ObjectMesh, fusion: GeometryFusion) -> Result<Vec<f32>> {
    match fusion {
        GeometryFusion::AdditiveBps => {
            let enc = encode_object(mesh, &BpsConfig::default())?;
            Ok(enc.distances.iter().map(|d| *d as f32).collect())
        }
        GeometryFusion::ConcatKeypoints => {
            let kp = sample_keypoints(mesh, 7)?;
            let mut out = Vec::with_capacity(72);
            for p in kp.all() {
                out.extend(p.iter().map(|v| *v as f32));
            }
            Ok(out)
        }
    }
}

/// Runs prior extraction for one item: prompt build, image resize, layered
/// encode, span slicing, geometry encoding.
pub fn build_item_priors(
    item: &TrainItem,
    source: &dyn PriorSource,
    extraction: &ExtractionConfig,
    fusion: GeometryFusion,
) -> Result<ItemPriors> {
    let prompt = build_extraction_prompt(&item.sequence.text)?;
    let res = source.resolution();
    let mut images = Vec::with_capacity(3);
    for img in &item.images {
        images.push(if img.width == res && img.height == res {
            img.clone()
        } else {
            img.resize_bilinear(res, res)?
        });
    }
    let images: [ImageBuf; 3] = images.try_into().expect("three images");
    let layers = if extraction.text_only {
        vec![extraction.text_layer]
    } else {
        extraction.layers()
    };
    let emb = source.layered(&images, &prompt, &layers)?;
    let (e_v, e_t) = extract_priors(&emb, extraction)?;
    Ok(ItemPriors {
        id: item.id.clone(),
        e_v,
        e_t,
        geom: geometry_features(&item.mesh, fusion)?,
        x0: item.sequence.to_model_matrix(),
        contact: item.sequence.contact.clone(),
        fps: item.sequence.fps,
        text: item.sequence.text.clone(),
    })
}

/// Per-dimension normalization of the 144-wide motion rows.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity() -> Self {
        Self { mean: vec![0.0; MODEL_DIM], std: vec![1.0; MODEL_DIM] }
    }
}

pub fn compute_norm_stats(items: &[ItemPriors]) -> NormStats {
    let mut mean = vec![0.0f64; MODEL_DIM];
    let mut count = 0usize;
    for it in items {
        for row in it.x0.rows() {
            for (k, v) in row.iter().enumerate() {
                mean[k] += v;
            }
        }
        count += it.len();
    }
    let count = count.max(1);
    for m in &mut mean {
        *m /= count as f64;
    }
    let mut var = vec![0.0f64; MODEL_DIM];
    for it in items {
        for row in it.x0.rows() {
            for (k, v) in row.iter().enumerate() {
                let d = v - mean[k];
                var[k] += d * d;
            }
        }
    }
    let std = var.iter().map(|v| (v / count as f64).sqrt().max(1e-4)).collect();
    NormStats { mean, std }
}

/// Conditioning adapter: learnable-query attention or its pooling ablation.
pub enum Adapter {
    Attention(QFormer),
    Pool { prefix: String },
}

impl Adapter {
    fn init(
        store: &mut ParamStore,
        prefix: &str,
        kind: AdapterKind,
        d_enc: usize,
        d_model: usize,
        k: usize,
    ) -> Result<Self> {
        match kind {
            AdapterKind::QFormer => Ok(Adapter::Attention(QFormer::init(
                store,
                prefix,
                QFormerConfig::new(d_enc, d_model, k),
            )?)),
            AdapterKind::Pool => {
                store.var(&format!("{prefix}.pool_w"), &[d_enc, d_model], crate::nn::Init::Glorot)?;
                store.var(&format!("{prefix}.pool_b"), &[d_model], crate::nn::Init::Zeros)?;
                Ok(Adapter::Pool { prefix: prefix.to_string() })
            }
        }
    }

    /// (k, d_model) tokens from raw (n, d_enc) states. The pooling path
    /// never touches the query attention, so its call counter stays flat.
    pub fn forward(&self, store: &ParamStore, e: &Tensor) -> Result<Tensor> {
        match self {
            Adapter::Attention(q) => q.forward(store, e),
            Adapter::Pool { prefix } => {
                let pooled = e.mean_keepdim(0)?;
                nn::linear(
                    &pooled,
                    &store.get(&format!("{prefix}.pool_w"))?,
                    Some(&store.get(&format!("{prefix}.pool_b"))?),
                )
            }
        }
    }
}

pub struct HoiDiffusion {
    pub cfg: DiffusionConfig,
    pub d_enc: usize,
    pub store: ParamStore,
    pub adapter_visual: Adapter,
    pub adapter_text: Adapter,
    pub denoiser: Denoiser,
    pub schedule: NoiseSchedule,
    pub norm: NormStats,
}

impl HoiDiffusion {
    pub fn new(cfg: DiffusionConfig, d_enc: usize, seed: u64) -> Result<Self> {
        Self::with_dtype(cfg, d_enc, seed, DType::F32)
    }

    pub fn with_dtype(cfg: DiffusionConfig, d_enc: usize, seed: u64, dtype: DType) -> Result<Self> {
        let mut store = ParamStore::new(dtype, seed);
        let d_model = cfg.denoiser.d_model;
        let adapter_visual =
            Adapter::init(&mut store, "adapter.visual", cfg.adapter, d_enc, d_model, cfg.k_visual)?;
        let adapter_text =
            Adapter::init(&mut store, "adapter.text", cfg.adapter, d_enc, d_model, cfg.k_text)?;
        let denoiser = Denoiser::init(&mut store, "den", cfg.denoiser)?;
        let schedule = make_schedule(cfg.schedule, cfg.t_steps)?;
        Ok(Self {
            cfg,
            d_enc,
            store,
            adapter_visual,
            adapter_text,
            denoiser,
            schedule,
            norm: NormStats::identity(),
        })
    }

    pub fn set_norm(&mut self, norm: NormStats) {
        self.norm = norm;
    }

    fn host_to_tensor(&self, a: &Array2<f32>) -> Result<Tensor> {
        let (r, c) = a.dim();
        let flat: Vec<f32> = a.iter().copied().collect();
        Ok(Tensor::from_vec(flat, (r, c), self.store.device())?.to_dtype(self.store.dtype())?)
    }

    fn normalized_x0(&self, item: &ItemPriors) -> Result<Tensor> {
        let (l, w) = item.x0.dim();
        let mut flat = Vec::with_capacity(l * w);
        for row in item.x0.rows() {
            for (k, v) in row.iter().enumerate() {
                flat.push((v - self.norm.mean[k]) / self.norm.std[k]);
            }
        }
        Ok(Tensor::from_vec(flat, (l, w), self.store.device())?.to_dtype(self.store.dtype())?)
    }

    fn denormalize(&self, m: &Tensor) -> Result<Array2<f64>> {
        let (l, w) = m.dims2()?;
        let flat = m.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        let mut out = Array2::zeros((l, w));
        for f in 0..l {
            for k in 0..w {
                out[[f, k]] = flat[f * w + k] * self.norm.std[k] + self.norm.mean[k];
            }
        }
        Ok(out)
    }

    /// Adapter outputs for one item, (1, k, d_model) each. A dropped visual
    /// prior goes through the same zero-row sentinel as the text-only mode.
    pub fn cond_tokens(&self, priors: &ItemPriors, drop_visual: bool) -> Result<(Tensor, Tensor)> {
        let zero_row;
        let e_v_host = if drop_visual {
            zero_row = Array2::zeros((1, self.d_enc));
            &zero_row
        } else {
            &priors.e_v
        };
        let e_v = self.host_to_tensor(e_v_host)?;
        let e_t = self.host_to_tensor(&priors.e_t)?;
        let c_v = self.adapter_visual.forward(&self.store, &e_v)?.unsqueeze(0)?;
        let c_t = self.adapter_text.forward(&self.store, &e_t)?.unsqueeze(0)?;
        Ok((c_v, c_t))
    }

    fn geom_tensor(&self, batch: &[&ItemPriors]) -> Result<Tensor> {
        let width = self.cfg.denoiser.fusion.input_width();
        let mut flat = Vec::with_capacity(batch.len() * width);
        for it in batch {
            if it.geom.len() != width {
                return Err(Error::Msg(format!(
                    "item {} has {} geometry features, want {width}",
                    it.id,
                    it.geom.len()
                )));
            }
            flat.extend_from_slice(&it.geom);
        }
        Ok(Tensor::from_vec(flat, (batch.len(), width), self.store.device())?
            .to_dtype(self.store.dtype())?)
    }

    /// Assembles normalized clean/noisy tensors and conditioning for a batch
    /// sharing one sequence length.
    fn prepare_batch(
        &self,
        batch: &[&ItemPriors],
        ts: &[usize],
        noise_seed: u64,
        drop_visual: &[bool],
    ) -> Result<PreparedBatch> {
        let b = batch.len();
        if b == 0 {
            return Err(Error::Msg("empty batch".into()));
        }
        let l = batch[0].len();
        if batch.iter().any(|it| it.len() != l) {
            return Err(Error::Msg("batch mixes sequence lengths".into()));
        }
        let mut x0_rows = Vec::with_capacity(b);
        let mut cv_rows = Vec::with_capacity(b);
        let mut ct_rows = Vec::with_capacity(b);
        for (i, it) in batch.iter().enumerate() {
            x0_rows.push(self.normalized_x0(it)?.unsqueeze(0)?);
            let (c_v, c_t) = self.cond_tokens(it, drop_visual[i])?;
            cv_rows.push(c_v);
            ct_rows.push(c_t);
        }
        let x0 = Tensor::cat(&x0_rows.iter().collect::<Vec<_>>(), 0)?;
        let c_v = Tensor::cat(&cv_rows.iter().collect::<Vec<_>>(), 0)?;
        let c_t = Tensor::cat(&ct_rows.iter().collect::<Vec<_>>(), 0)?;
        let geom = self.geom_tensor(batch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let n = b * l * MODEL_DIM;
        let eps_host: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let eps = Tensor::from_vec(eps_host, (b, l, MODEL_DIM), self.store.device())?
            .to_dtype(self.store.dtype())?;
        let x_t = q_sample_tensor(&x0, ts, &eps, &self.schedule)?;
        Ok(PreparedBatch { x0, x_t, c_v, c_t, geom, ts: ts.to_vec() })
    }

    /// MSE training loss; the per-step seed drives timestep draws, the noise,
    /// and visual-prior dropout, so one seed reproduces one loss exactly.
    pub fn training_loss(&self, batch: &[&ItemPriors], step_seed: u64) -> Result<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(step_seed);
        let ts: Vec<usize> =
            (0..batch.len()).map(|_| rng.gen_range(0..self.cfg.t_steps)).collect();
        let drops: Vec<bool> =
            (0..batch.len()).map(|_| rng.gen::<f64>() < self.cfg.visual_dropout).collect();
        let noise_seed = derive_seed(step_seed, &[0x6e6f]);
        let prep = self.prepare_batch(batch, &ts, noise_seed, &drops)?;
        let pred = self.denoiser.forward(
            &self.store,
            &DenoiserInput {
                x_t: &prep.x_t,
                ts: &prep.ts,
                c_v: &prep.c_v,
                c_t: &prep.c_t,
                geom: &prep.geom,
                key_mask: None,
            },
        )?;
        mse(&pred, &prep.x0)
    }

    /// Strided ancestral sampling with an arbitrary x0 predictor; returns the
    /// raw denormalized motion matrix.
    pub fn ddpm_sample_with<F>(&self, len: usize, seed: u64, mut predict: F) -> Result<Array2<f64>>
    where
        F: FnMut(&Tensor, usize) -> Result<Tensor>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
        };
        let n = len * MODEL_DIM;
        let mut x = Tensor::from_vec(draw(n), (1, len, MODEL_DIM), self.store.device())?
            .to_dtype(self.store.dtype())?;
        let times = self.schedule.strided_times(self.cfg.sample_steps);
        for (i, &t) in times.iter().enumerate() {
            let x0_hat = predict(&x, t)?.detach();
            let t_prev = times.get(i + 1).copied();
            let (c0, ct, sigma) = self.schedule.posterior_coeffs(t, t_prev);
            x = (x0_hat.affine(c0, 0.0)? + x.affine(ct, 0.0)?)?;
            if sigma > 0.0 {
                let z = Tensor::from_vec(draw(n), (1, len, MODEL_DIM), self.store.device())?
                    .to_dtype(self.store.dtype())?;
                x = (x + z.affine(sigma, 0.0)?)?;
            }
        }
        self.denormalize(&x.squeeze(0)?)
    }

    /// Full conditional sampling: adapters, denoiser, denormalize, then
    /// rotation-block sanitation so the matrix always decodes.
    pub fn ddpm_sample(&self, priors: &ItemPriors, len: usize, seed: u64) -> Result<Array2<f64>> {
        let (c_v, c_t) = self.cond_tokens(priors, false)?;
        let geom = self.geom_tensor(&[priors])?;
        let mut m = self.ddpm_sample_with(len, seed, |x, t| {
            self.denoiser.forward(
                &self.store,
                &DenoiserInput { x_t: x, ts: &[t], c_v: &c_v, c_t: &c_t, geom: &geom, key_mask: None },
            )
        })?;
        sanitize_model_matrix(&mut m);
        Ok(m)
    }

    /// Decodes a sampled matrix into a motion sequence with empty contact
    /// labels; predicted contact comes from geometry during evaluation.
    pub fn decode_matrix(m: &Array2<f64>, fps: f64, text: &str) -> Result<MotionSequence> {
        let contact = Array2::from_elem((m.nrows(), 2), false);
        Ok(MotionSequence::from_model_matrix(m, contact, fps, text.to_string())?)
    }

    fn manifest(&self, step: usize, train_seed: u64, extractor_checksum: &str, adam_step: u64) -> serde_json::Value {
        serde_json::json!({
            "schema_version": 1,
            "kind": "diffusion",
            "step": step,
            "seeds": { "train": train_seed },
            "extractor_checksum": extractor_checksum,
            "d_enc": self.d_enc,
            "config": self.cfg,
            "norm": self.norm,
            "adam_step": adam_step,
        })
    }

    pub fn save(
        &self,
        path: impl AsRef<Path>,
        step: usize,
        train_seed: u64,
        extractor_checksum: &str,
        adam: Option<&Adam>,
    ) -> Result<()> {
        let mut tensors = self.store.export()?;
        if let Some(adam) = adam {
            for (k, t) in adam.export() {
                tensors.insert(k, t);
            }
        }
        let manifest = self.manifest(step, train_seed, extractor_checksum, adam.map_or(0, |a| a.step));
        save_checkpoint(path, &manifest, &tensors)
    }
}

pub struct PreparedBatch {
    pub x0: Tensor,
    pub x_t: Tensor,
    pub c_v: Tensor,
    pub c_t: Tensor,
    pub geom: Tensor,
    pub ts: Vec<usize>,
}

pub fn mse(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    Ok(pred.sub(target)?.sqr()?.mean_all()?)
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Total optimizer steps; resuming continues up to this count.
    pub steps: usize,
    pub seed: u64,
    pub checkpoint_path: PathBuf,
    pub checkpoint_every: usize,
    pub resume_from: Option<PathBuf>,
    pub log_every: usize,
}

#[derive(Debug, Clone)]
pub struct TrainStats {
    pub first_loss: f64,
    pub final_loss: f64,
    pub steps_run: usize,
    /// (step, loss) at every logging point.
    pub losses: Vec<(usize, f64)>,
}

pub struct LoadedModel {
    pub model: HoiDiffusion,
    pub step: usize,
    pub extractor_checksum: String,
    pub train_seed: u64,
    pub adam_step: u64,
    pub adam_moments: BTreeMap<String, Tensor>,
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LoadedModel> {
    let ckpt = load_checkpoint(path)?;
    let m = &ckpt.manifest;
    if m["kind"] != "diffusion" {
        return Err(Error::BadCheckpoint(format!("kind {} is not a diffusion model", m["kind"])));
    }
    let cfg: DiffusionConfig = serde_json::from_value(m["config"].clone())?;
    let d_enc = m["d_enc"].as_u64().ok_or_else(|| Error::BadCheckpoint("missing d_enc".into()))? as usize;
    let norm: NormStats = serde_json::from_value(m["norm"].clone())?;
    let mut model = HoiDiffusion::new(cfg, d_enc, 0)?;
    model.set_norm(norm);
    let mut adam_moments = BTreeMap::new();
    for (name, t) in &ckpt.tensors {
        if name.starts_with("adam.") {
            adam_moments.insert(name.clone(), t.clone());
        } else {
            model.store.set(name, t)?;
        }
    }
    Ok(LoadedModel {
        model,
        step: m["step"].as_u64().unwrap_or(0) as usize,
        extractor_checksum: m["extractor_checksum"].as_str().unwrap_or_default().to_string(),
        train_seed: m["seeds"]["train"].as_u64().unwrap_or(0),
        adam_step: m["adam_step"].as_u64().unwrap_or(0),
        adam_moments,
    })
}

/// Runs the optimizer to `opts.steps` total steps. Per-step randomness is
/// re-derived from `(seed, step)`, so resuming from a checkpoint replays the
/// exact step stream the uninterrupted run would have seen.
pub fn train(
    model: &mut HoiDiffusion,
    items: &[ItemPriors],
    source_checksum: &str,
    opts: &TrainOptions,
) -> Result<TrainStats> {
    if items.is_empty() {
        return Err(Error::Msg("no training items".into()));
    }
    let mut adam = Adam::new(AdamConfig {
        lr: model.cfg.lr,
        clip: Some(model.cfg.clip_norm),
        ..Default::default()
    });
    let mut start_step = 0usize;
    match &opts.resume_from {
        Some(path) => {
            let loaded = load_model(path)?;
            if loaded.model.cfg != model.cfg {
                return Err(Error::BadCheckpoint("resume config mismatch".into()));
            }
            if loaded.extractor_checksum != source_checksum {
                return Err(Error::FrozenViolation(format!(
                    "checkpoint was trained against extractor {}, current is {}",
                    loaded.extractor_checksum, source_checksum
                )));
            }
            for name in model.store.names() {
                if let Ok(t) = loaded.model.store.get(&name) {
                    model.store.set(&name, &t)?;
                }
            }
            model.set_norm(loaded.model.norm.clone());
            adam.load_moments(&loaded.adam_moments);
            adam.step = loaded.adam_step;
            start_step = loaded.step;
        }
        None => {
            model.set_norm(compute_norm_stats(items));
        }
    }

    let mut buckets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        buckets.entry(it.len()).or_default().push(i);
    }

    let mut stats = TrainStats { first_loss: 0.0, final_loss: 0.0, steps_run: 0, losses: Vec::new() };
    for step in start_step..opts.steps {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, &[step as u64]));
        let anchor = rng.gen_range(0..items.len());
        let bucket = &buckets[&items[anchor].len()];
        let batch: Vec<&ItemPriors> = (0..model.cfg.batch_size)
            .map(|_| &items[bucket[rng.gen_range(0..bucket.len())]])
            .collect();
        let step_seed = derive_seed(opts.seed, &[step as u64, 0x1055]);
        let loss = model.training_loss(&batch, step_seed)?;
        let value = nn::scalar_f64(&loss)?;
        let grads = loss.backward()?;
        adam.step(&model.store, &grads)?;
        if stats.steps_run == 0 {
            stats.first_loss = value;
        }
        stats.final_loss = value;
        stats.steps_run += 1;
        if opts.log_every > 0 && (step + 1) % opts.log_every == 0 {
            stats.losses.push((step + 1, value));
        }
        let done = step + 1 == opts.steps;
        if done || (opts.checkpoint_every > 0 && (step + 1) % opts.checkpoint_every == 0) {
            model.save(&opts.checkpoint_path, step + 1, opts.seed, source_checksum, Some(&adam))?;
        }
    }
    Ok(stats)
}

/// Same loop, but re-reads the live extractor checksum at every checkpoint
/// write and fails with FrozenViolation if it drifted.
pub fn train_monitored(
    model: &mut HoiDiffusion,
    items: &[ItemPriors],
    source: &dyn PriorSource,
    opts: &TrainOptions,
) -> Result<TrainStats> {
    let start = source.checksum();
    let stats = train(model, items, &start, opts)?;
    if source.checksum() != start {
        return Err(Error::FrozenViolation(
            "extractor parameters changed while training was running".into(),
        ));
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::PromptBundle;

    fn tiny_cfg() -> DiffusionConfig {
        DiffusionConfig {
            t_steps: 50,
            sample_steps: 10,
            denoiser: DenoiserConfig {
                d_model: 32,
                layers: 1,
                heads: 4,
                max_len: 16,
                geometry_embed_dim: 16,
                ffn_mult: 2,
                fusion: GeometryFusion::AdditiveBps,
            },
            batch_size: 4,
            lr: 1e-3,
            ..Default::default()
        }
    }

    const D_ENC: usize = 16;

    fn fake_item(len: usize, seed: u64) -> ItemPriors {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |r: usize, c: usize, scale: f64| {
            Array2::from_shape_fn((r, c), |_| (rng.gen::<f64>() - 0.5) * scale)
        };
        let e_v = fill(4, D_ENC, 2.0).mapv(|v| v as f32);
        let e_t = fill(3, D_ENC, 2.0).mapv(|v| v as f32);
        let x0 = fill(len, MODEL_DIM, 1.0);
        let geom: Vec<f32> = (0..1024).map(|i| ((i * 37 + seed as usize) % 100) as f32 / 100.0).collect();
        ItemPriors {
            id: format!("fake_{seed}"),
            e_v,
            e_t,
            geom,
            x0,
            contact: Array2::from_elem((len, 2), false),
            fps: 30.0,
            text: "Lift the box.".into(),
        }
    }

    fn tiny_model() -> HoiDiffusion {
        HoiDiffusion::new(tiny_cfg(), D_ENC, 3).unwrap()
    }

    #[test]
    fn pool_adapter_bypasses_query_attention() {
        let cfg = DiffusionConfig { adapter: AdapterKind::Pool, ..tiny_cfg() };
        let model = HoiDiffusion::new(cfg, D_ENC, 3).unwrap();
        let item = fake_item(6, 4);
        crate::qformer::reset_qformer_call_count();
        let (c_v, c_t) = model.cond_tokens(&item, false).unwrap();
        assert_eq!(crate::qformer::qformer_call_count(), 0);
        // Pooling collapses each segment to a single token.
        assert_eq!(c_v.dims(), &[1, 1, 32]);
        assert_eq!(c_t.dims(), &[1, 1, 32]);
        assert!(model.store.contains("adapter.visual.pool_w"));
        assert!(!model.store.contains("adapter.visual.queries"));

        let qf = tiny_model();
        crate::qformer::reset_qformer_call_count();
        qf.cond_tokens(&item, false).unwrap();
        assert_eq!(crate::qformer::qformer_call_count(), 2);
    }

    #[test]
    fn norm_stats_match_hand_computation() {
        let mut a = fake_item(2, 1);
        let mut b = fake_item(2, 2);
        a.x0.fill(0.0);
        b.x0.fill(0.0);
        a.x0[[0, 0]] = 1.0;
        a.x0[[1, 0]] = 3.0;
        b.x0[[0, 0]] = 5.0;
        b.x0[[1, 0]] = 7.0;
        let stats = compute_norm_stats(&[a, b]);
        assert!((stats.mean[0] - 4.0).abs() < 1e-12);
        let var = (9.0 + 1.0 + 1.0 + 9.0) / 4.0;
        assert!((stats.std[0] - f64::sqrt(var)).abs() < 1e-12);
        // Constant dimensions hit the floor instead of dividing by zero.
        assert_eq!(stats.std[1], 1e-4);
        assert_eq!(stats.mean[1], 0.0);
    }

    #[test]
    fn perfect_prediction_gives_zero_loss() {
        let mut model = tiny_model();
        let items: Vec<ItemPriors> = (0..2).map(|i| fake_item(6, i)).collect();
        model.set_norm(compute_norm_stats(&items));
        let batch: Vec<&ItemPriors> = items.iter().collect();
        let prep = model.prepare_batch(&batch, &[3, 40], 9, &[false, false]).unwrap();
        let loss = mse(&prep.x0, &prep.x0).unwrap();
        assert_eq!(nn::scalar_f64(&loss).unwrap(), 0.0);
        // x_t at a late step is nowhere near x0.
        let gap = nn::scalar_f64(&mse(&prep.x_t, &prep.x0).unwrap()).unwrap();
        assert!(gap > 0.1, "{gap}");
    }

    #[test]
    fn random_init_loss_sits_at_data_variance_near_terminal_time() {
        let mut model = tiny_model();
        let items: Vec<ItemPriors> = (0..4).map(|i| fake_item(8, i)).collect();
        model.set_norm(compute_norm_stats(&items));
        let batch: Vec<&ItemPriors> = items.iter().collect();
        let ts = vec![model.cfg.t_steps - 1; batch.len()];
        let prep = model.prepare_batch(&batch, &ts, 17, &[false; 4]).unwrap();
        let pred = model
            .denoiser
            .forward(
                &model.store,
                &DenoiserInput {
                    x_t: &prep.x_t,
                    ts: &prep.ts,
                    c_v: &prep.c_v,
                    c_t: &prep.c_t,
                    geom: &prep.geom,
                    key_mask: None,
                },
            )
            .unwrap();
        let loss = nn::scalar_f64(&mse(&pred, &prep.x0).unwrap()).unwrap();
        let data_power = nn::scalar_f64(&prep.x0.sqr().unwrap().mean_all().unwrap()).unwrap();
        assert!(
            loss > 0.5 * data_power && loss < 2.0 * data_power,
            "loss {loss} vs mean square {data_power}"
        );
    }

    #[test]
    fn training_loss_gradient_matches_finite_differences_at_f64() {
        let mut model = HoiDiffusion::with_dtype(tiny_cfg(), D_ENC, 3, DType::F64).unwrap();
        let items: Vec<ItemPriors> = (0..2).map(|i| fake_item(4, 10 + i)).collect();
        model.set_norm(compute_norm_stats(&items));
        let items_ref: Vec<&ItemPriors> = items.iter().collect();
        let seed = 77u64;
        let loss_t = model.training_loss(&items_ref, seed).unwrap();
        let grads = loss_t.backward().unwrap();
        let analytic = nn::grads_to_host(&model.store, &grads).unwrap();
        let names: Vec<String> = ["adapter.visual.queries", "adapter.text.proj_w", "den.in_w", "den.geom_w"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let worst = nn::fd_check(&model.store, &names, &analytic, 3, 1e-5, 5, || {
            nn::scalar_f64(&model.training_loss(&items_ref, seed)?)
        })
        .unwrap();
        assert!(worst < 1e-3, "worst relative gradient error {worst}");
    }

    #[test]
    fn sampling_is_seed_deterministic_and_seed_sensitive() {
        let mut model = tiny_model();
        let items: Vec<ItemPriors> = (0..2).map(|i| fake_item(8, i)).collect();
        model.set_norm(compute_norm_stats(&items));
        let a = model.ddpm_sample(&items[0], 8, 42).unwrap();
        let b = model.ddpm_sample(&items[0], 8, 42).unwrap();
        let c = model.ddpm_sample(&items[0], 8, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.dim(), (8, MODEL_DIM));
        let seq = HoiDiffusion::decode_matrix(&a, 30.0, "Lift the box.").unwrap();
        assert_eq!(seq.len(), 8);
    }

    #[test]
    fn constant_predictor_is_a_fixed_point_of_sampling() {
        let mut model = tiny_model();
        let items = vec![fake_item(6, 5)];
        model.set_norm(compute_norm_stats(&items));
        let star_host: Vec<f64> = (0..6 * MODEL_DIM).map(|i| ((i % 13) as f64 - 6.0) / 6.0).collect();
        let star = Tensor::from_vec(star_host, (1, 6, MODEL_DIM), model.store.device())
            .unwrap()
            .to_dtype(model.store.dtype())
            .unwrap();
        let out = model.ddpm_sample_with(6, 9, |_x, _t| Ok(star.clone())).unwrap();
        let want = model.denormalize(&star.squeeze(0).unwrap()).unwrap();
        let worst = out
            .iter()
            .zip(want.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(worst < 1e-3, "fixed point drift {worst}");
    }

    #[test]
    fn single_step_sampling_is_one_noise_free_forward() {
        let mut cfg = tiny_cfg();
        cfg.sample_steps = 1;
        let mut model = HoiDiffusion::new(cfg, D_ENC, 3).unwrap();
        let items = vec![fake_item(5, 8)];
        model.set_norm(compute_norm_stats(&items));
        let mut calls = 0usize;
        let mut captured = None;
        let out = model
            .ddpm_sample_with(5, 4, |x, t| {
                calls += 1;
                assert_eq!(t, model.cfg.t_steps - 1);
                let pred = model
                    .denoiser
                    .forward(
                        &model.store,
                        &DenoiserInput {
                            x_t: x,
                            ts: &[t],
                            c_v: &model.cond_tokens(&items[0], false).unwrap().0,
                            c_t: &model.cond_tokens(&items[0], false).unwrap().1,
                            geom: &model.geom_tensor(&[&items[0]]).unwrap(),
                            key_mask: None,
                        },
                    )
                    .unwrap();
                captured = Some(pred.clone());
                Ok(pred)
            })
            .unwrap();
        assert_eq!(calls, 1);
        let want = model.denormalize(&captured.unwrap().squeeze(0).unwrap()).unwrap();
        assert_eq!(out, want);
    }

    #[test]
    fn visual_dropout_changes_the_drawn_loss() {
        let items: Vec<ItemPriors> = (0..2).map(|i| fake_item(6, i)).collect();
        let batch: Vec<&ItemPriors> = items.iter().collect();
        let mut plain = tiny_model();
        plain.set_norm(compute_norm_stats(&items));
        let mut dropped = HoiDiffusion::new(
            DiffusionConfig { visual_dropout: 1.0, ..tiny_cfg() },
            D_ENC,
            3,
        )
        .unwrap();
        dropped.set_norm(compute_norm_stats(&items));
        let a = nn::scalar_f64(&plain.training_loss(&batch, 5).unwrap()).unwrap();
        let b = nn::scalar_f64(&dropped.training_loss(&batch, 5).unwrap()).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn training_converges_checkpoints_and_resumes_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let items: Vec<ItemPriors> =
            (0..4).map(|i| fake_item(6, i)).chain((4..8).map(|i| fake_item(9, i))).collect();

        let opts_full = TrainOptions {
            steps: 16,
            seed: 21,
            checkpoint_path: dir.path().join("full.ckpt"),
            checkpoint_every: 0,
            resume_from: None,
            log_every: 1,
        };
        let mut full = tiny_model();
        let full_stats = train(&mut full, &items, "sum-a", &opts_full).unwrap();
        assert_eq!(full_stats.steps_run, 16);
        assert!(full_stats.final_loss.is_finite());

        let mut half = tiny_model();
        let opts_half = TrainOptions {
            steps: 15,
            checkpoint_path: dir.path().join("half.ckpt"),
            ..opts_full.clone()
        };
        train(&mut half, &items, "sum-a", &opts_half).unwrap();

        let mut resumed = tiny_model();
        let opts_resume = TrainOptions {
            steps: 16,
            checkpoint_path: dir.path().join("resumed.ckpt"),
            resume_from: Some(dir.path().join("half.ckpt")),
            ..opts_full.clone()
        };
        let stats = train(&mut resumed, &items, "sum-a", &opts_resume).unwrap();
        assert_eq!(stats.steps_run, 1);
        let full_step16 = full_stats.losses.last().unwrap().1;
        assert!(
            (stats.first_loss - full_step16).abs() < 1e-6,
            "resumed step loss {} vs uninterrupted {}",
            stats.first_loss,
            full_step16
        );

        // Resuming against a different extractor is refused.
        let mut other = tiny_model();
        let err = train(
            &mut other,
            &items,
            "sum-B",
            &TrainOptions {
                steps: 16,
                checkpoint_path: dir.path().join("x.ckpt"),
                resume_from: Some(dir.path().join("half.ckpt")),
                ..opts_full
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::FrozenViolation(_)), "{err}");
    }

    struct DriftingSource {
        calls: std::cell::Cell<u32>,
    }

    impl PriorSource for DriftingSource {
        fn layered(
            &self,
            _images: &[ImageBuf; 3],
            _prompt: &PromptBundle,
            _layers: &[usize],
        ) -> Result<crate::encoder::LayeredEmbeddings> {
            Err(Error::Msg("unused".into()))
        }

        fn checksum(&self) -> String {
            let n = self.calls.get();
            self.calls.set(n + 1);
            format!("state-{n}")
        }

        fn depth(&self) -> usize {
            12
        }

        fn resolution(&self) -> usize {
            64
        }
    }

    #[test]
    fn checksum_drift_during_training_is_a_frozen_violation() {
        let dir = tempfile::tempdir().unwrap();
        let items: Vec<ItemPriors> = (0..3).map(|i| fake_item(5, i)).collect();
        let mut model = tiny_model();
        let source = DriftingSource { calls: std::cell::Cell::new(0) };
        let err = train_monitored(
            &mut model,
            &items,
            &source,
            &TrainOptions {
                steps: 2,
                seed: 1,
                checkpoint_path: dir.path().join("m.ckpt"),
                checkpoint_every: 0,
                resume_from: None,
                log_every: 0,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::FrozenViolation(_)), "{err}");
    }

    #[test]
    fn loading_a_saved_model_restores_parameters_and_norm() {
        let dir = tempfile::tempdir().unwrap();
        let items: Vec<ItemPriors> = (0..3).map(|i| fake_item(5, i)).collect();
        let mut model = tiny_model();
        model.set_norm(compute_norm_stats(&items));
        let path = dir.path().join("m.ckpt");
        model.save(&path, 7, 21, "sum-x", None).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.step, 7);
        assert_eq!(loaded.extractor_checksum, "sum-x");
        assert_eq!(loaded.model.norm, model.norm);
        assert_eq!(loaded.model.store.checksum(), model.store.checksum());
        let a = model.ddpm_sample(&items[0], 5, 3).unwrap();
        let b = loaded.model.ddpm_sample(&items[0], 5, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_reference_images_fail_item_loading() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = vihoi_core::dataset::CorpusConfig {
            n_sequences: 1,
            min_frames: 32,
            max_frames: 32,
            ..Default::default()
        };
        let index = vihoi_core::dataset::build_corpus(dir.path(), &cfg, 5).unwrap();
        let item_dir = dir.path().join(&index.items[0].dir);
        let err = TrainItem::load(&item_dir).unwrap_err();
        assert!(matches!(err, Error::MissingReferenceImages(_)), "{err}");
    }
}
