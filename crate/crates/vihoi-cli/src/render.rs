//! `render`: keyframe images for stored sequences, either three files per
//! sequence or one contact strip.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use vihoi_core::container::load_sequence_dir;
use vihoi_core::dataset::subject_skeleton;
use vihoi_core::mesh::{make_primitive, ObjectMesh};
use vihoi_core::render::{render_keyframes, select_keyframes, Camera, ImageBuf};
use vihoi_model::diffusion::kind_from_str;

use crate::config::RunConfig;
use crate::runmeta::{DeclaredOutput, Outcome, RUN_FILE};
use crate::setup::{claim_dir, load_index, Ctx};

struct Params {
    src: PathBuf,
    dir: PathBuf,
    ids: Vec<String>,
    width: usize,
    height: usize,
    grid: bool,
}

fn resolve(cfg: &RunConfig, grid_flag: bool) -> Result<Params> {
    cfg.get_u64("seed", 0)?;
    Ok(Params {
        src: PathBuf::from(cfg.get_str("render.src", "data/corpus")?),
        dir: PathBuf::from(cfg.get_str("render.dir", "runs/renders")?),
        ids: cfg.get_list("render.ids", "")?,
        width: cfg.get_usize("render.width", 384)?,
        height: cfg.get_usize("render.height", 288)?,
        grid: grid_flag || cfg.get_bool("render.grid", false)?,
    })
}

/// Sequence ids under `src`: index order when an index exists, otherwise
/// every child directory that holds a stored sequence.
fn discover_ids(src: &Path) -> Result<Vec<String>> {
    if src.join(vihoi_core::dataset::INDEX_FILE).exists() {
        return Ok(load_index(src)?.items.into_iter().map(|i| i.id).collect());
    }
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(src).with_context(|| format!("reading {}", src.display()))? {
        let entry = entry?;
        if entry.path().join("meta.json").exists() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

fn hstack(frames: &[ImageBuf; 3]) -> Result<ImageBuf> {
    let (w, h) = (frames[0].width, frames[0].height);
    let mut strip = ImageBuf::new(3 * w, h)?;
    for (k, frame) in frames.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                strip.set_pixel(k * w + x, y, frame.pixel(x, y));
            }
        }
    }
    Ok(strip)
}

pub fn run(cfg: &RunConfig, ctx: &Ctx, grid_flag: bool) -> Result<Outcome> {
    let p = resolve(cfg, grid_flag)?;
    cfg.reject_unknown()?;

    let mut ids = discover_ids(&p.src)?;
    if !p.ids.is_empty() {
        for id in &p.ids {
            if !ids.iter().any(|have| have == id) {
                bail!("render.ids entry {id:?} is not under {}", p.src.display());
            }
        }
        ids = p.ids.clone();
    }
    if ids.is_empty() {
        bail!("no sequences found under {}", p.src.display());
    }
    claim_dir(&p.dir, RUN_FILE, ctx.force)?;

    let cam = Camera::default_scene();
    let mut outcome = Outcome::new(&p.dir);
    for id in &ids {
        let (seq, meta) = load_sequence_dir(p.src.join(id))
            .with_context(|| format!("loading sequence {id}"))?;
        let mesh: Option<ObjectMesh> = if meta.object_kind.is_empty() {
            None
        } else {
            Some(make_primitive(kind_from_str(&meta.object_kind)?, &meta.object_dims)?)
        };
        let skel = subject_skeleton(meta.subject_id);
        let frames =
            render_keyframes(&seq, &skel, mesh.as_ref(), &cam, p.width, p.height)
                .with_context(|| format!("rendering {id}"))?;
        if p.grid {
            let path = p.dir.join(format!("{id}.png"));
            hstack(&frames)?.save_png(&path)?;
            outcome.outputs.push(DeclaredOutput::Png(path));
        } else {
            let (a, b, c) = select_keyframes(&seq.contact);
            let mut seen = std::collections::BTreeSet::new();
            for (frame, img) in [a, b, c].iter().zip(frames.iter()) {
                // Short or contact-free sequences can repeat a keyframe.
                if !seen.insert(*frame) {
                    continue;
                }
                let path = p.dir.join(format!("{id}_f{frame:04}.png"));
                img.save_png(&path)?;
                outcome.outputs.push(DeclaredOutput::Png(path));
            }
        }
    }

    outcome.summary = format!(
        "render: {} sequences into {} ({})",
        ids.len(),
        p.dir.display(),
        if p.grid { "strips" } else { "separate keyframes" }
    );
    Ok(outcome)
}
