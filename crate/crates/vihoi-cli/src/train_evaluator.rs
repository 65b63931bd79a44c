//! `train-evaluator`: contrastive motion/text retrieval model used by the
//! metric battery.

use std::path::PathBuf;

use anyhow::Result;

use vihoi_core::derive_seed;
use vihoi_model::evaluate::pairs_from_items;
use vihoi_model::evaluator::{train_evaluator, EvalTrainOptions, EvaluatorConfig, TextEncoderKind};

use crate::config::RunConfig;
use crate::runmeta::{DeclaredOutput, Outcome};
use crate::setup::{claim_dir, load_index, load_items, split_from_config, Ctx};

pub const EVALUATOR_CKPT: &str = "evaluator.ckpt";

struct Params {
    seed: u64,
    data_dir: PathBuf,
    dir: PathBuf,
    model: EvaluatorConfig,
    steps: usize,
    log_every: usize,
}

fn resolve(cfg: &RunConfig) -> Result<Params> {
    let text_encoder = match cfg
        .get_choice("evaluator.text_encoder", "toy", &["toy", "frozen"])?
        .as_str()
    {
        "frozen" => TextEncoderKind::Frozen,
        _ => TextEncoderKind::Toy,
    };
    Ok(Params {
        seed: cfg.get_u64("seed", 0)?,
        data_dir: PathBuf::from(cfg.get_str("data.dir", "data/corpus")?),
        dir: PathBuf::from(cfg.get_str("evaluator.dir", "runs/evaluator")?),
        model: EvaluatorConfig {
            hidden: cfg.get_usize("evaluator.hidden", 128)?,
            out_dim: cfg.get_usize("evaluator.out_dim", 512)?,
            text_embed: cfg.get_usize("evaluator.text_embed", 128)?,
            frozen_d: cfg.get_usize("evaluator.frozen_d", 128)?,
            margin: cfg.get_f64("evaluator.margin", 0.2)?,
            lr: cfg.get_f64("evaluator.lr", 1e-3)?,
            batch: cfg.get_usize("evaluator.batch", 32)?,
            text_encoder,
        },
        steps: cfg.get_usize("evaluator.steps", 300)?,
        log_every: cfg.get_usize("evaluator.log_every", 25)?,
    })
}

pub fn run(cfg: &RunConfig, ctx: &Ctx) -> Result<Outcome> {
    let p = resolve(cfg)?;
    let index = load_index(&p.data_dir)?;
    let (train_ids, _) = split_from_config(cfg, &index)?;
    cfg.reject_unknown()?;
    claim_dir(&p.dir, EVALUATOR_CKPT, ctx.force)?;

    let items = load_items(&p.data_dir, &train_ids)?;
    let pairs = pairs_from_items(&items)?;
    let train_seed = derive_seed(p.seed, &[0xe7a1]);
    let opts = EvalTrainOptions { steps: p.steps, seed: train_seed, log_every: p.log_every };
    let (model, stats) = train_evaluator(&pairs, p.model, &opts)?;

    let ckpt = p.dir.join(EVALUATOR_CKPT);
    model.save(&ckpt, stats.steps_run, train_seed)?;
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
    outcome.outputs.push(DeclaredOutput::EvaluatorCkpt(ckpt));
    outcome.outputs.push(DeclaredOutput::File(log));
    outcome.summary = format!(
        "train-evaluator: {} pairs, loss {:.4} -> {:.4} over {} steps",
        pairs.len(),
        stats.first_loss,
        stats.final_loss,
        stats.steps_run
    );
    Ok(outcome)
}
