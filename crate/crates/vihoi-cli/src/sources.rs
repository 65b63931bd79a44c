//! Prior-source wrappers used by the ablation runner.

use std::cell::RefCell;
use std::collections::HashMap;

use sha2::{Digest, Sha256};

use vihoi_core::render::ImageBuf;
use vihoi_model::encoder::{LayeredEmbeddings, PriorSource, ToyMultimodalEncoder, IMAGE_COUNT};
use vihoi_model::prompts::PromptBundle;
use vihoi_model::{Error, Result};

/// Encodes the union of every layer any ablation cell will request, once per
/// distinct (images, prompt) pair, and serves per-cell requests from that
/// cache. Keeps the deep shared encoder affordable on one core.
pub struct UnionCachingSource {
    inner: ToyMultimodalEncoder,
    union: Vec<usize>,
    cache: RefCell<HashMap<String, LayeredEmbeddings>>,
}

impl UnionCachingSource {
    pub fn new(inner: ToyMultimodalEncoder, mut union: Vec<usize>) -> Self {
        union.sort_unstable();
        union.dedup();
        Self { inner, union, cache: RefCell::new(HashMap::new()) }
    }

    pub fn union(&self) -> &[usize] {
        &self.union
    }

    pub fn cached_entries(&self) -> usize {
        self.cache.borrow().len()
    }

    fn key(images: &[ImageBuf; IMAGE_COUNT], prompt: &PromptBundle) -> String {
        let mut hasher = Sha256::new();
        hasher.update(prompt.raw.as_bytes());
        for img in images {
            hasher.update(img.width.to_le_bytes());
            hasher.update(img.height.to_le_bytes());
            for v in &img.data {
                hasher.update(v.to_le_bytes());
            }
        }
        format!("{:x}", hasher.finalize())
    }
}

impl PriorSource for UnionCachingSource {
    fn layered(
        &self,
        images: &[ImageBuf; IMAGE_COUNT],
        prompt: &PromptBundle,
        layers: &[usize],
    ) -> Result<LayeredEmbeddings> {
        for l in layers {
            if !self.union.contains(l) {
                return Err(Error::LayerMissing(*l));
            }
        }
        let key = Self::key(images, prompt);
        if !self.cache.borrow().contains_key(&key) {
            let full = self.inner.layered(images, prompt, &self.union)?;
            self.cache.borrow_mut().insert(key.clone(), full);
        }
        let cache = self.cache.borrow();
        let full = &cache[&key];
        let states = layers
            .iter()
            .map(|l| (*l, full.states[l].clone()))
            .collect();
        Ok(LayeredEmbeddings {
            states,
            visual_span: full.visual_span,
            text_span: full.text_span,
            d_enc: full.d_enc,
        })
    }

    fn checksum(&self) -> String {
        self.inner.checksum()
    }

    fn depth(&self) -> usize {
        self.inner.depth()
    }

    fn resolution(&self) -> usize {
        self.inner.resolution()
    }
}
