//! `sample`: seeded generation for stored corpus items through the full
//! text-to-image and prior-extraction staging.

use std::collections::HashMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};

use vihoi_core::container::{save_sequence_dir, SequenceMeta, SCHEMA_VERSION};
use vihoi_core::dataset::CorpusItem;
use vihoi_core::derive_seed;
use vihoi_core::render::{render_keyframes, Camera};
use vihoi_core::skeleton::Skeleton;
use vihoi_core::CONTACT_THRESHOLD_M;
use vihoi_model::diffusion::{load_model, KEYFRAME_FILES};
use vihoi_model::evaluate::sample_for_item;
use vihoi_model::metrics::predicted_contacts;

use crate::config::RunConfig;
use crate::runmeta::{DeclaredOutput, Outcome, RUN_FILE};
use crate::setup::{
    claim_dir, encoder_from_config, load_index, load_items, split_from_config, t2i_from_config,
    Ctx,
};
use crate::train::MODEL_CKPT;

struct Params {
    seed: u64,
    data_dir: PathBuf,
    model_dir: PathBuf,
    dir: PathBuf,
    ids: Vec<String>,
    count: usize,
    render: bool,
    image_size: usize,
}

fn resolve(cfg: &RunConfig) -> Result<Params> {
    Ok(Params {
        seed: cfg.get_u64("seed", 0)?,
        data_dir: PathBuf::from(cfg.get_str("data.dir", "data/corpus")?),
        model_dir: PathBuf::from(cfg.get_str("model.dir", "runs/model")?),
        dir: PathBuf::from(cfg.get_str("sample.dir", "runs/samples")?),
        ids: cfg.get_list("sample.ids", "")?,
        count: cfg.get_usize("sample.count", 8)?,
        render: cfg.get_bool("sample.render", true)?,
        image_size: cfg.get_usize("sample.image_size", 224)?,
    })
}

pub fn run(cfg: &RunConfig, ctx: &Ctx) -> Result<Outcome> {
    let p = resolve(cfg)?;
    let source = encoder_from_config(cfg)?;
    let t2i = t2i_from_config(cfg)?;
    let index = load_index(&p.data_dir)?;
    let (_, test_ids) = split_from_config(cfg, &index)?;
    cfg.reject_unknown()?;

    let loaded = load_model(p.model_dir.join(MODEL_CKPT))
        .with_context(|| format!("loading model from {}", p.model_dir.display()))?;
    if source.checksum() != loaded.extractor_checksum {
        bail!(
            "the model was trained against extractor {}, the configured encoder is {}",
            loaded.extractor_checksum,
            source.checksum()
        );
    }

    let by_id: HashMap<&str, &CorpusItem> =
        index.items.iter().map(|i| (i.id.as_str(), i)).collect();
    let ids: Vec<String> = if p.ids.is_empty() {
        test_ids.iter().take(p.count).cloned().collect()
    } else {
        for id in &p.ids {
            if !by_id.contains_key(id.as_str()) {
                bail!("sample.ids entry {id:?} is not in the corpus");
            }
        }
        p.ids.clone()
    };
    if ids.is_empty() {
        bail!("nothing to sample: the test split is empty");
    }
    claim_dir(&p.dir, RUN_FILE, ctx.force)?;

    let items = load_items(&p.data_dir, &ids)?;
    let skel = Skeleton::default_22();
    let cam = Camera::default_scene();
    let mut outcome = Outcome::new(&p.dir);
    for (i, item) in items.iter().enumerate() {
        let item_seed = derive_seed(p.seed, &[i as u64]);
        let mut seq = sample_for_item(&loaded.model, source.as_ref(), &t2i, item, &skel, item_seed)
            .with_context(|| format!("sampling {}", item.id))?;
        // Sampled motion carries geometry-derived contact, not labels.
        seq.contact = predicted_contacts(&seq, &item.mesh, &skel, CONTACT_THRESHOLD_M)?;

        let info = by_id[item.id.as_str()];
        let meta = SequenceMeta {
            schema_version: SCHEMA_VERSION,
            fps: seq.fps,
            len: seq.len(),
            text: seq.text.clone(),
            object_kind: info.object_kind.as_str().to_string(),
            object_dims: info.object_dims.clone(),
            subject_id: info.subject_id,
            verb: info.verb.clone(),
            tags: vec!["sampled".to_string()],
        };
        let dir = p.dir.join(&item.id);
        save_sequence_dir(&dir, &seq, &meta)?;
        if p.render {
            let frames = render_keyframes(
                &seq,
                &skel,
                Some(&item.mesh),
                &cam,
                p.image_size,
                p.image_size,
            )?;
            for (name, img) in KEYFRAME_FILES.iter().zip(frames.iter()) {
                let path = dir.join(name);
                img.save_png(&path)?;
                outcome.outputs.push(DeclaredOutput::Png(path));
            }
        }
        outcome.outputs.push(DeclaredOutput::SequenceDir(dir));
        outcome.seeds.insert(format!("item.{}", item.id), item_seed);
    }

    outcome.seeds.insert("run".into(), p.seed);
    outcome.checksums.insert("extractor".into(), source.checksum());
    outcome.summary =
        format!("sample: {} sequences under {}", items.len(), p.dir.display());
    Ok(outcome)
}
