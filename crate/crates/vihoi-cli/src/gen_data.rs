//! `gen-data`: deterministic toy corpus plus three reference keyframes per
//! sequence, index written last.

use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};

use vihoi_core::container::load_sequence_dir;
use vihoi_core::dataset::{build_corpus, subject_skeleton, CorpusConfig, Verb, INDEX_FILE};
use vihoi_core::mesh::make_primitive;
use vihoi_core::render::{render_keyframes, Camera};
use vihoi_model::diffusion::{kind_from_str, KEYFRAME_FILES};

use crate::config::RunConfig;
use crate::runmeta::{DeclaredOutput, Outcome};
use crate::setup::{claim_dir, Ctx};

struct Params {
    seed: u64,
    dir: PathBuf,
    corpus: CorpusConfig,
    image_size: usize,
}

fn resolve(cfg: &RunConfig) -> Result<Params> {
    let verbs = cfg
        .get_list("data.verbs", "lift,push,pull,kick,rotate")?
        .iter()
        .map(|s| verb_from_str(s))
        .collect::<Result<Vec<_>>>()?;
    let kinds = cfg
        .get_list("data.kinds", "box,cylinder,lamp_composite,table_composite")?
        .iter()
        .map(|s| kind_from_str(s).map_err(Into::into))
        .collect::<Result<Vec<_>>>()?;
    Ok(Params {
        seed: cfg.get_u64("seed", 0)?,
        dir: PathBuf::from(cfg.get_str("data.dir", "data/corpus")?),
        corpus: CorpusConfig {
            n_sequences: cfg.get_usize("data.n_sequences", 64)?,
            n_subjects: cfg.get_u64("data.n_subjects", 10)? as u32,
            fps: cfg.get_f64("data.fps", 30.0)?,
            verbs,
            kinds,
            min_frames: cfg.get_usize("data.min_frames", 48)?,
            max_frames: cfg.get_usize("data.max_frames", 72)?,
            contact_labels: cfg.get_bool("data.contact_labels", true)?,
        },
        image_size: cfg.get_usize("data.image_size", 224)?,
    })
}

fn verb_from_str(s: &str) -> Result<Verb> {
    Verb::ALL
        .iter()
        .copied()
        .find(|v| v.as_str() == s)
        .ok_or_else(|| anyhow!("unknown verb {s:?}"))
}

pub fn run(cfg: &RunConfig, ctx: &Ctx) -> Result<Outcome> {
    let p = resolve(cfg)?;
    cfg.reject_unknown()?;
    claim_dir(&p.dir, INDEX_FILE, ctx.force)?;

    let index = build_corpus(&p.dir, &p.corpus, p.seed)?;
    // The index counts as the manifest, so it must land after the keyframes;
    // drop the copy the builder wrote and re-emit identical bytes at the end.
    std::fs::remove_file(p.dir.join(INDEX_FILE))?;

    let cam = Camera::default_scene();
    let mut outcome = Outcome::new(&p.dir);
    for item in &index.items {
        let dir = p.dir.join(&item.dir);
        let (seq, _) = load_sequence_dir(&dir)?;
        let mesh = make_primitive(item.object_kind, &item.object_dims)?;
        let skel = subject_skeleton(item.subject_id);
        let frames =
            render_keyframes(&seq, &skel, Some(&mesh), &cam, p.image_size, p.image_size)
                .with_context(|| format!("rendering keyframes for {}", item.id))?;
        for (name, img) in KEYFRAME_FILES.iter().zip(frames.iter()) {
            let path = dir.join(name);
            img.save_png(&path)?;
            outcome.outputs.push(DeclaredOutput::Png(path));
        }
        outcome.outputs.push(DeclaredOutput::SequenceDir(dir));
    }
    std::fs::write(p.dir.join(INDEX_FILE), serde_json::to_vec_pretty(&index)?)?;
    outcome.outputs.push(DeclaredOutput::CorpusIndex(p.dir.clone()));

    outcome.seeds.insert("run".into(), p.seed);
    outcome.summary = format!(
        "gen-data: {} sequences with keyframes under {}",
        index.items.len(),
        p.dir.display()
    );
    Ok(outcome)
}
