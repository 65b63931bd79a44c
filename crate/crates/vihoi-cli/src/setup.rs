//! Shared wiring from a run configuration to pipeline objects.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use vihoi_core::dataset::{load_corpus_index, make_split, CorpusIndex, SplitMode, SplitSpec};
use vihoi_core::derive_seed;
use vihoi_core::t2i::{T2i, T2I_ENDPOINT_ENV};
use vihoi_model::backend::RemoteEncoder;
use vihoi_model::denoiser::{DenoiserConfig, GeometryFusion};
use vihoi_model::diffusion::{AdapterKind, DiffusionConfig, TrainItem};
use vihoi_model::encoder::{ExtractionConfig, PriorSource, ToyEncoderConfig, ToyMultimodalEncoder};
use vihoi_model::schedule::ScheduleKind;

/// Flags shared by every subcommand.
pub struct Ctx {
    pub force: bool,
}

pub fn t2i_from_config(cfg: &crate::config::RunConfig) -> Result<T2i> {
    let mode = cfg.get_choice("t2i.mode", "stub", &["stub", "external"])?;
    Ok(match mode.as_str() {
        "stub" => T2i::Stub,
        _ => {
            let endpoint = std::env::var(T2I_ENDPOINT_ENV)
                .ok()
                .filter(|e| !e.is_empty())
                .ok_or_else(|| anyhow!("t2i.mode=external needs {T2I_ENDPOINT_ENV} set"))?;
            T2i::External { endpoint }
        }
    })
}

/// Builds the frozen toy encoder from `encoder.*` keys. The whole block is
/// consumed even when the external backend is selected, so the set of legal
/// keys never depends on the chosen kind.
pub fn encoder_from_config(cfg: &crate::config::RunConfig) -> Result<Box<dyn PriorSource>> {
    let kind = cfg.get_choice("encoder.kind", "toy", &["toy", "external"])?;
    let ecfg = ToyEncoderConfig {
        depth: cfg.get_usize("encoder.depth", 16)?,
        d_enc: cfg.get_usize("encoder.d_enc", 256)?,
        heads: cfg.get_usize("encoder.heads", 4)?,
        patch: cfg.get_usize("encoder.patch", 16)?,
        resolution: cfg.get_usize("encoder.resolution", 224)?,
        ffn_mult: cfg.get_usize("encoder.ffn_mult", 2)?,
        max_text_len: cfg.get_usize("encoder.max_text_len", 128)?,
    };
    let enc_seed = cfg.get_u64("encoder.seed", 0)?;
    let warmup_pairs = cfg.get_usize("encoder.warmup_pairs", 0)?;
    let warmup_steps = cfg.get_usize("encoder.warmup_steps", 0)?;
    if kind == "external" {
        return Ok(Box::new(RemoteEncoder::from_env()?));
    }
    let mut enc = ToyMultimodalEncoder::new(ecfg, enc_seed)?;
    if warmup_pairs > 0 && warmup_steps > 0 {
        enc.warm_up(warmup_pairs, warmup_steps, derive_seed(enc_seed, &[0x3a7]))
            .context("encoder warm-up")?;
    }
    enc.freeze();
    Ok(Box::new(enc))
}

pub fn diffusion_config_from(cfg: &crate::config::RunConfig) -> Result<DiffusionConfig> {
    let variant = cfg.get_choice("model.variant", "bps", &["bps", "keypoint24"])?;
    let adapter = cfg.get_choice("model.adapter", "q_former", &["q_former", "pool"])?;
    let schedule: ScheduleKind =
        cfg.get_choice("model.schedule", "cosine", &["cosine", "linear"])?.parse()?;
    Ok(DiffusionConfig {
        t_steps: cfg.get_usize("model.t_steps", 1000)?,
        sample_steps: cfg.get_usize("model.sample_steps", 100)?,
        schedule,
        denoiser: DenoiserConfig {
            d_model: cfg.get_usize("model.d_model", 256)?,
            layers: cfg.get_usize("model.layers", 6)?,
            heads: cfg.get_usize("model.heads", 4)?,
            max_len: cfg.get_usize("model.max_len", 128)?,
            geometry_embed_dim: cfg.get_usize("model.geometry_embed_dim", 256)?,
            ffn_mult: cfg.get_usize("model.ffn_mult", 4)?,
            fusion: match variant.as_str() {
                "bps" => GeometryFusion::AdditiveBps,
                _ => GeometryFusion::ConcatKeypoints,
            },
        },
        extraction: ExtractionConfig {
            visual_layer: cfg.get_usize("extract.visual_layer", 3)?,
            text_layer: cfg.get_usize("extract.text_layer", 12)?,
            text_only: cfg.get_bool("extract.text_only", false)?,
        },
        adapter: match adapter.as_str() {
            "pool" => AdapterKind::Pool,
            _ => AdapterKind::QFormer,
        },
        k_visual: cfg.get_usize("model.k_visual", 1)?,
        k_text: cfg.get_usize("model.k_text", 1)?,
        lr: cfg.get_f64("model.lr", 1e-4)?,
        batch_size: cfg.get_usize("model.batch_size", 16)?,
        clip_norm: cfg.get_f64("model.clip_norm", 1.0)?,
        visual_dropout: cfg.get_f64("model.visual_dropout", 0.1)?,
        guidance: cfg.get_bool("model.guidance", false)?,
    })
}

/// Train/test id lists under `split.*`; `none` puts every item on both sides.
pub fn split_from_config(
    cfg: &crate::config::RunConfig,
    index: &CorpusIndex,
) -> Result<(Vec<String>, Vec<String>)> {
    let mode = cfg.get_choice("split.mode", "none", &["none", "by_subject", "by_object"])?;
    let held_out = cfg.get_list("split.held_out", "")?;
    if mode == "none" {
        let all: Vec<String> = index.items.iter().map(|i| i.id.clone()).collect();
        return Ok((all.clone(), all));
    }
    let spec = SplitSpec {
        mode: match mode.as_str() {
            "by_subject" => SplitMode::BySubject,
            _ => SplitMode::ByObjectCategory,
        },
        held_out,
    };
    Ok(make_split(index, &spec)?)
}

pub fn load_index(data_dir: &Path) -> Result<CorpusIndex> {
    load_corpus_index(data_dir)
        .with_context(|| format!("loading corpus index from {}", data_dir.display()))
}

pub fn load_items(data_dir: &Path, ids: &[String]) -> Result<Vec<TrainItem>> {
    ids.iter()
        .map(|id| {
            TrainItem::load(data_dir.join(id))
                .with_context(|| format!("loading sequence {id}"))
        })
        .collect()
}

/// Refuses to reuse a populated output directory unless `--force`; with the
/// flag the directory is cleared so reruns start clean.
pub fn claim_dir(dir: &Path, marker: &str, force: bool) -> Result<()> {
    if dir.join(marker).exists() || dir.join(crate::runmeta::RUN_FILE).exists() {
        if !force {
            bail!(
                "{} already holds outputs; pass --force to regenerate",
                dir.display()
            );
        }
        std::fs::remove_dir_all(dir)
            .with_context(|| format!("clearing {}", dir.display()))?;
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

pub fn checkpoint_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
