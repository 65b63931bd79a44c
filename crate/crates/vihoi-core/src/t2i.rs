//! Three-stage image generation behind one interface: a deterministic
//! procedural stub by default, an HTTP backend when an endpoint is set.

use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::render::ImageBuf;
use crate::splitmix64;
use crate::{Error, Result};

pub const T2I_ENDPOINT_ENV: &str = "VIHOI_T2I_ENDPOINT";
pub const STAGE_COUNT: usize = 3;

#[derive(Debug, Clone)]
pub enum T2i {
    Stub,
    External { endpoint: String },
}

#[derive(Debug, Serialize)]
struct T2iRequest<'a> {
    prompt: &'a str,
    seed_image_png_b64: String,
}

#[derive(Debug, Deserialize)]
struct T2iResponse {
    images: Vec<String>,
}

impl T2i {
    /// External backend when `VIHOI_T2I_ENDPOINT` is set, stub otherwise.
    pub fn from_env() -> Self {
        match std::env::var(T2I_ENDPOINT_ENV) {
            Ok(endpoint) if !endpoint.is_empty() => T2i::External { endpoint },
            _ => T2i::Stub,
        }
    }

    /// One image per interaction stage, conditioned on the prompt and a
    /// rendered seed image.
    pub fn generate(&self, prompt: &str, seed_image: &ImageBuf) -> Result<[ImageBuf; 3]> {
        match self {
            T2i::Stub => Ok(stub_images(prompt, seed_image)),
            T2i::External { endpoint } => external_images(endpoint, prompt, seed_image),
        }
    }
}

/// Procedural fixtures: the seed image re-tinted and striped by a hash of
/// the prompt and the seed pixels, distinct per stage.
fn stub_images(prompt: &str, seed_image: &ImageBuf) -> [ImageBuf; 3] {
    let mut hasher = Sha256::new();
    hasher.update(prompt.as_bytes());
    hasher.update([0u8]);
    hasher.update(seed_image.width.to_le_bytes());
    hasher.update(seed_image.height.to_le_bytes());
    for v in &seed_image.data {
        hasher.update(v.to_le_bytes());
    }
    let digest = hasher.finalize();
    let key = u64::from_le_bytes(digest[..8].try_into().unwrap());

    let mut out = Vec::with_capacity(3);
    for stage in 0..3u64 {
        let k = splitmix64(key ^ (stage + 1));
        let tint = [
            0.75 + 0.5 * ((k & 0xff) as f32 / 255.0),
            0.75 + 0.5 * ((k >> 8 & 0xff) as f32 / 255.0),
            0.75 + 0.5 * ((k >> 16 & 0xff) as f32 / 255.0),
        ];
        let mut img = seed_image.clone();
        let w = img.width;
        let h = img.height;
        let stripe = (k >> 24) as usize % w;
        let band_y0 = h * stage as usize / 3;
        let band_y1 = h * (stage as usize + 1) / 3;
        for y in 0..h {
            for x in 0..w {
                let mut c = img.pixel(x, y);
                for (ch, t) in c.iter_mut().zip(tint) {
                    *ch = (*ch * t).clamp(0.0, 1.0);
                }
                if y >= band_y0 && y < band_y1 {
                    c[0] = (c[0] + 0.08).min(1.0);
                }
                if x.abs_diff(stripe) < w.div_ceil(24) {
                    c.rotate_left(1);
                }
                img.set_pixel(x, y, c);
            }
        }
        out.push(img);
    }
    out.try_into().unwrap()
}

fn external_images(endpoint: &str, prompt: &str, seed_image: &ImageBuf) -> Result<[ImageBuf; 3]> {
    let body = T2iRequest {
        prompt,
        seed_image_png_b64: base64::engine::general_purpose::STANDARD
            .encode(seed_image.encode_png()?),
    };
    let resp = ureq::post(endpoint)
        .timeout(Duration::from_secs(30))
        .send_json(&body)
        .map_err(|e| Error::BackendUnavailable(format!("t2i endpoint {endpoint}: {e}")))?;
    let parsed: T2iResponse = resp
        .into_json()
        .map_err(|e| Error::BackendUnavailable(format!("t2i response: {e}")))?;
    if parsed.images.len() != STAGE_COUNT {
        return Err(Error::BadResponseCount(parsed.images.len()));
    }
    let mut out = Vec::with_capacity(3);
    for b64 in &parsed.images {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(b64)
            .map_err(|e| Error::BackendUnavailable(format!("t2i base64: {e}")))?;
        out.push(ImageBuf::decode_png(&bytes)?);
    }
    Ok(out.try_into().expect("length checked"))
}
