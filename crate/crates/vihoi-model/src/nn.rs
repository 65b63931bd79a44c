//! Small neural-net toolkit on candle: a named parameter store with
//! deterministic per-name initialization, the layer primitives shared by the
//! encoder, adapters, denoiser and evaluator, an Adam optimizer with global
//! norm clipping, and finite-difference gradient checking.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const LN_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform on [-a, a] with a = sqrt(6 / (fan_in + fan_out)).
    Glorot,
    Normal(f64),
    Zeros,
    Ones,
}

/// Named trainable parameters. Every parameter is initialized from a stream
/// seeded by (store seed, name), so creation order never matters and f32 and
/// f64 stores built from the same seed hold the same values up to rounding.
pub struct ParamStore {
    device: Device,
    dtype: DType,
    seed: u64,
    vars: BTreeMap<String, Var>,
}

fn name_seed(seed: u64, name: &str) -> u64 {
    let digest = Sha256::digest(name.as_bytes());
    let mut w = [0u8; 8];
    w.copy_from_slice(&digest[..8]);
    vihoi_core::derive_seed(seed, &[u64::from_le_bytes(w)])
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self { device: Device::Cpu, dtype, seed, vars: BTreeMap::new() }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Gets or creates a parameter; the returned tensor shares the var's id so
    /// gradients land on it.
    pub fn var(&mut self, name: &str, dims: &[usize], init: Init) -> Result<Tensor> {
        if let Some(v) = self.vars.get(name) {
            return Ok(v.as_tensor().clone());
        }
        let n: usize = dims.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(self.seed, name));
        let values: Vec<f64> = match init {
            Init::Glorot => {
                let (fan_in, fan_out) = match dims {
                    [i, o] => (*i, *o),
                    [o] => (*o, *o),
                    _ => (dims[0], dims[dims.len() - 1]),
                };
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-a..a)).collect()
            }
            Init::Normal(std) => (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * std).collect(),
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
        };
        let t = Tensor::from_vec(values, dims, &self.device)?.to_dtype(self.dtype)?;
        let v = Var::from_tensor(&t)?;
        let out = v.as_tensor().clone();
        self.vars.insert(name.to_string(), v);
        Ok(out)
    }

    pub fn get(&self, name: &str) -> Result<Tensor> {
        self.vars
            .get(name)
            .map(|v| v.as_tensor().clone())
            .ok_or_else(|| Error::Msg(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.vars.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.vars.values().map(|v| v.as_tensor().elem_count()).sum()
    }

    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let v = self
            .vars
            .get(name)
            .ok_or_else(|| Error::Msg(format!("unknown parameter {name}")))?;
        v.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    /// Inserts a parameter with explicit values, creating it if absent.
    pub fn insert(&mut self, name: &str, value: &Tensor) -> Result<()> {
        let t = value.to_dtype(self.dtype)?;
        match self.vars.get(name) {
            Some(v) => v.set(&t)?,
            None => {
                self.vars.insert(name.to_string(), Var::from_tensor(&t)?);
            }
        }
        Ok(())
    }

    pub fn export(&self) -> Result<BTreeMap<String, Tensor>> {
        let mut out = BTreeMap::new();
        for (k, v) in &self.vars {
            out.insert(k.clone(), v.as_tensor().copy()?);
        }
        Ok(out)
    }

    /// Gradient lookup for every parameter, in name order.
    pub fn grads(&self, store: &GradStore) -> Vec<(String, Option<Tensor>)> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), store.get(v.as_tensor()).cloned()))
            .collect()
    }

    pub fn grad_of(&self, store: &GradStore, name: &str) -> Option<Tensor> {
        self.vars.get(name).and_then(|v| store.get(v.as_tensor()).cloned())
    }

    /// SHA-256 over names, shapes and raw little-endian values; stable across
    /// runs, changes iff any parameter changes.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.vars {
            h.update(k.as_bytes());
            let t = v.as_tensor();
            for d in t.dims() {
                h.update((*d as u64).to_le_bytes());
            }
            let flat = t.flatten_all().and_then(|f| f.to_dtype(DType::F64)).unwrap();
            for x in flat.to_vec1::<f64>().unwrap() {
                h.update(x.to_le_bytes());
            }
        }
        let mut out = String::with_capacity(64);
        for b in h.finalize() {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let y = x.broadcast_matmul(w)?;
    Ok(match b {
        Some(b) => y.broadcast_add(b)?,
        None => y,
    })
}

/// Normalizes the last dimension to zero mean and unit variance (biased),
/// then applies the affine gain and bias.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centered.broadcast_div(&var.affine(1.0, LN_EPS)?.sqrt()?)?;
    Ok(normed.broadcast_mul(gain)?.broadcast_add(bias)?)
}

/// Multi-head scaled dot-product attention. `q` is (B, Lq, D), `kv` is
/// (B, Lk, D); `key_mask` is an optional (B, Lk) tensor of 1/0 validity
/// flags. Projections are bias-free.
pub fn mha(
    q_in: &Tensor,
    kv_in: &Tensor,
    wq: &Tensor,
    wk: &Tensor,
    wv: &Tensor,
    wo: &Tensor,
    heads: usize,
    key_mask: Option<&Tensor>,
) -> Result<Tensor> {
    let (b, lq, d) = q_in.dims3()?;
    let (_, lk, _) = kv_in.dims3()?;
    if d % heads != 0 {
        return Err(Error::Msg(format!("width {d} not divisible by {heads} heads")));
    }
    let dh = d / heads;
    let split = |t: &Tensor, l: usize| -> Result<Tensor> {
        Ok(t.reshape((b, l, heads, dh))?.transpose(1, 2)?.contiguous()?)
    };
    let q = split(&linear(q_in, wq, None)?, lq)?;
    let k = split(&linear(kv_in, wk, None)?, lk)?;
    let v = split(&linear(kv_in, wv, None)?, lk)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut scores = q.matmul(&k.transpose(2, 3)?.contiguous()?)?.affine(scale, 0.0)?;
    if let Some(mask) = key_mask {
        // Invalid keys get a large negative logit before the softmax.
        let bias = mask.to_dtype(scores.dtype())?.affine(1e9, -1e9)?.reshape((b, 1, 1, lk))?;
        scores = scores.broadcast_add(&bias)?;
    }
    let attn = candle_nn::ops::softmax(&scores, D::Minus1)?;
    let ctx = attn.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, lq, d))?;
    linear(&ctx, wo, None)
}

/// Transformer sinusoidal embedding of integer steps, built on the host.
pub fn sinusoidal_embedding(
    steps: &[usize],
    dim: usize,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(steps.len() * dim);
    for &t in steps {
        for i in 0..half {
            let freq = (-(10000f64.ln()) * i as f64 / half.max(1) as f64).exp();
            data.push((t as f64 * freq).sin());
        }
        for i in 0..half {
            let freq = (-(10000f64.ln()) * i as f64 / half.max(1) as f64).exp();
            data.push((t as f64 * freq).cos());
        }
        for _ in 2 * half..dim {
            data.push(0.0);
        }
    }
    Ok(Tensor::from_vec(data, (steps.len(), dim), device)?.to_dtype(dtype)?)
}

pub fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let norm = x.sqr()?.sum_keepdim(D::Minus1)?.affine(1.0, 1e-12)?.sqrt()?;
    Ok(x.broadcast_div(&norm)?)
}

pub fn scalar_f64(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient norm ceiling; gradients are rescaled above it.
    pub clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip: Some(1.0) }
    }
}

/// Adam with first/second moment tensors kept per parameter name so the whole
/// optimizer state serializes into checkpoints.
pub struct Adam {
    pub cfg: AdamConfig,
    pub step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// Applies one update; returns the pre-clip global gradient norm.
    pub fn step(&mut self, store: &ParamStore, grads: &GradStore) -> Result<f64> {
        let named: Vec<(String, Tensor)> = store
            .grads(grads)
            .into_iter()
            .filter_map(|(k, g)| g.map(|g| (k, g)))
            .collect();
        let mut sq_sum = 0.0;
        for (_, g) in &named {
            sq_sum += scalar_f64(&g.sqr()?.sum_all()?)?;
        }
        let norm = sq_sum.sqrt();
        let scale = match self.cfg.clip {
            Some(c) if norm > c => c / (norm + 1e-12),
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for (name, g) in &named {
            let g = g.affine(scale, 0.0)?;
            let m = match self.m.get(name) {
                Some(m) => (m.affine(self.cfg.beta1, 0.0)? + g.affine(1.0 - self.cfg.beta1, 0.0)?)?,
                None => g.affine(1.0 - self.cfg.beta1, 0.0)?,
            };
            let v = match self.v.get(name) {
                Some(v) => {
                    (v.affine(self.cfg.beta2, 0.0)? + g.sqr()?.affine(1.0 - self.cfg.beta2, 0.0)?)?
                }
                None => g.sqr()?.affine(1.0 - self.cfg.beta2, 0.0)?,
            };
            let m_hat = m.affine(1.0 / bc1, 0.0)?;
            let v_hat = v.affine(1.0 / bc2, 0.0)?;
            let update = m_hat.affine(self.cfg.lr, 0.0)?.div(&v_hat.sqrt()?.affine(1.0, self.cfg.eps)?)?;
            let current = store.get(name)?;
            store.set(name, &(current - update)?)?;
            self.m.insert(name.clone(), m);
            self.v.insert(name.clone(), v);
        }
        Ok(norm)
    }

    /// Moment tensors under `adam.m.` / `adam.v.` prefixes for checkpointing.
    pub fn export(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (k, t) in &self.m {
            out.push((format!("adam.m.{k}"), t.clone()));
        }
        for (k, t) in &self.v {
            out.push((format!("adam.v.{k}"), t.clone()));
        }
        out
    }

    pub fn load_moments(&mut self, tensors: &BTreeMap<String, Tensor>) {
        for (k, t) in tensors {
            if let Some(name) = k.strip_prefix("adam.m.") {
                self.m.insert(name.to_string(), t.clone());
            } else if let Some(name) = k.strip_prefix("adam.v.") {
                self.v.insert(name.to_string(), t.clone());
            }
        }
    }
}

/// Central-difference derivative of `loss` with respect to one coordinate of
/// a named parameter. The parameter is restored afterwards.
pub fn fd_derivative<F>(store: &ParamStore, name: &str, idx: usize, delta: f64, loss: F) -> Result<f64>
where
    F: Fn() -> Result<f64>,
{
    let base = store.get(name)?;
    let dims = base.dims().to_vec();
    let mut values = base.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    let orig = values[idx];
    let eval_at = |x: f64, values: &mut Vec<f64>| -> Result<f64> {
        values[idx] = x;
        let t = Tensor::from_vec(values.clone(), dims.as_slice(), store.device())?;
        store.set(name, &t)?;
        loss()
    };
    let hi = eval_at(orig + delta, &mut values)?;
    let lo = eval_at(orig - delta, &mut values)?;
    values[idx] = orig;
    let t = Tensor::from_vec(values, dims.as_slice(), store.device())?;
    store.set(name, &t)?;
    Ok((hi - lo) / (2.0 * delta))
}

/// Compares analytic gradients against central differences on `samples`
/// deterministic coordinates per parameter; returns the worst relative error.
/// Coordinates where both sides are below `abs_floor` count as exact.
pub fn fd_check<F>(
    store: &ParamStore,
    names: &[String],
    analytic: &BTreeMap<String, Vec<f64>>,
    samples: usize,
    delta: f64,
    seed: u64,
    loss: F,
) -> Result<f64>
where
    F: Fn() -> Result<f64>,
{
    let abs_floor = 1e-9;
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for name in names {
        let grad = analytic
            .get(name)
            .ok_or_else(|| Error::Msg(format!("no analytic gradient for {name}")))?;
        let n = grad.len();
        for _ in 0..samples.min(n) {
            let idx = rng.gen_range(0..n);
            let fd = fd_derivative(store, name, idx, delta, &loss)?;
            let an = grad[idx];
            if fd.abs() < abs_floor && an.abs() < abs_floor {
                continue;
            }
            let rel = (fd - an).abs() / fd.abs().max(an.abs());
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Collects analytic gradients as host vectors, keyed by parameter name.
pub fn grads_to_host(store: &ParamStore, grads: &GradStore) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for (name, g) in store.grads(grads) {
        if let Some(g) = g {
            out.insert(name, g.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?);
        }
    }
    Ok(out)
}
