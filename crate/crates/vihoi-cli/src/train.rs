//! `train`: conditional diffusion generator over extracted priors.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};

use vihoi_core::derive_seed;
use vihoi_model::diffusion::{
    self, build_item_priors, load_model, DiffusionConfig, HoiDiffusion, ItemPriors, TrainOptions,
};

use crate::config::RunConfig;
use crate::runmeta::{DeclaredOutput, Outcome};
use crate::setup::{
    diffusion_config_from, encoder_from_config, load_index, load_items, split_from_config, Ctx,
};

pub const MODEL_CKPT: &str = "model.ckpt";

struct Params {
    seed: u64,
    data_dir: PathBuf,
    dir: PathBuf,
    model: DiffusionConfig,
    steps: usize,
    checkpoint_every: usize,
    log_every: usize,
    resume: bool,
}

fn resolve(cfg: &RunConfig) -> Result<Params> {
    Ok(Params {
        seed: cfg.get_u64("seed", 0)?,
        data_dir: PathBuf::from(cfg.get_str("data.dir", "data/corpus")?),
        dir: PathBuf::from(cfg.get_str("train.dir", "runs/model")?),
        model: diffusion_config_from(cfg)?,
        steps: cfg.get_usize("train.steps", 2000)?,
        checkpoint_every: cfg.get_usize("train.checkpoint_every", 500)?,
        log_every: cfg.get_usize("train.log_every", 50)?,
        resume: cfg.get_bool("train.resume", false)?,
    })
}

pub fn run(cfg: &RunConfig, ctx: &Ctx) -> Result<Outcome> {
    let p = resolve(cfg)?;
    let source = encoder_from_config(cfg)?;
    let index = load_index(&p.data_dir)?;
    let (train_ids, _) = split_from_config(cfg, &index)?;
    cfg.reject_unknown()?;

    let ckpt = p.dir.join(MODEL_CKPT);
    let resume_from = if ckpt.exists() {
        if p.resume {
            Some(ckpt.clone())
        } else if ctx.force {
            std::fs::remove_dir_all(&p.dir)?;
            None
        } else {
            bail!(
                "{} exists; set train.resume=true to continue or pass --force to retrain",
                ckpt.display()
            );
        }
    } else {
        None
    };
    std::fs::create_dir_all(&p.dir)?;

    if train_ids.is_empty() {
        bail!("the training split is empty");
    }
    let items = load_items(&p.data_dir, &train_ids)?;
    let priors: Vec<ItemPriors> = items
        .iter()
        .map(|item| {
            build_item_priors(item, source.as_ref(), &p.model.extraction, p.model.denoiser.fusion)
                .with_context(|| format!("extracting priors for {}", item.id))
        })
        .collect::<Result<_>>()?;
    let d_enc = priors[0].e_t.ncols();

    // Resuming replays the original per-step stream regardless of the
    // current seed; fresh runs derive theirs from the run seed.
    let train_seed = match &resume_from {
        Some(path) => load_model(path)?.train_seed,
        None => derive_seed(p.seed, &[0x7247]),
    };
    let mut model = HoiDiffusion::new(p.model.clone(), d_enc, derive_seed(p.seed, &[0x6d01]))?;
    let opts = TrainOptions {
        steps: p.steps,
        seed: train_seed,
        checkpoint_path: ckpt.clone(),
        checkpoint_every: p.checkpoint_every,
        resume_from,
        log_every: p.log_every,
    };
    let stats = diffusion::train(&mut model, &priors, &source.checksum(), &opts)?;

    let log = p.dir.join("train_log.json");
    std::fs::write(
        &log,
        serde_json::to_vec_pretty(&serde_json::json!({
            "first_loss": stats.first_loss,
            "final_loss": stats.final_loss,
            "steps_run": stats.steps_run,
            "losses": stats.losses,
        }))?,
    )?;

    let mut outcome = Outcome::new(&p.dir);
    outcome.seeds.insert("run".into(), p.seed);
    outcome.seeds.insert("train".into(), train_seed);
    outcome.checksums.insert("extractor".into(), source.checksum());
    outcome.outputs.push(DeclaredOutput::DiffusionCkpt(ckpt));
    outcome.outputs.push(DeclaredOutput::File(log));
    outcome.summary = format!(
        "train: {} items, loss {:.4} -> {:.4}, {} steps run",
        priors.len(),
        stats.first_loss,
        stats.final_loss,
        stats.steps_run
    );
    Ok(outcome)
}
