//! `evaluate`: one seeded generation per test item, scored with the full
//! metric battery into report.json and report.csv.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};

use vihoi_core::skeleton::Skeleton;
use vihoi_core::CONTACT_THRESHOLD_M;
use vihoi_model::diffusion::load_model;
use vihoi_model::evaluate::{
    evaluate_items, write_report, EvaluateOptions, REPORT_CSV_HEADER,
};
use vihoi_model::evaluator::load_evaluator;
use vihoi_model::metrics::DIVERSITY_PAIRS;

use crate::config::RunConfig;
use crate::runmeta::{DeclaredOutput, Outcome, RUN_FILE};
use crate::setup::{
    claim_dir, encoder_from_config, load_index, load_items, split_from_config, t2i_from_config,
    Ctx,
};
use crate::train::MODEL_CKPT;
use crate::train_evaluator::EVALUATOR_CKPT;

struct Params {
    seed: u64,
    data_dir: PathBuf,
    model_dir: PathBuf,
    evaluator_dir: PathBuf,
    dir: PathBuf,
    gt_as_prediction: bool,
    contact_threshold: f64,
    diversity_pairs: usize,
}

fn resolve(cfg: &RunConfig) -> Result<Params> {
    Ok(Params {
        seed: cfg.get_u64("seed", 0)?,
        data_dir: PathBuf::from(cfg.get_str("data.dir", "data/corpus")?),
        model_dir: PathBuf::from(cfg.get_str("model.dir", "runs/model")?),
        evaluator_dir: PathBuf::from(cfg.get_str("evaluator.dir", "runs/evaluator")?),
        dir: PathBuf::from(cfg.get_str("eval.dir", "runs/eval")?),
        gt_as_prediction: cfg.get_bool("eval.gt_as_prediction", false)?,
        contact_threshold: cfg.get_f64("eval.contact_threshold", CONTACT_THRESHOLD_M)?,
        diversity_pairs: cfg.get_usize("eval.diversity_pairs", DIVERSITY_PAIRS)?,
    })
}

pub fn run(cfg: &RunConfig, ctx: &Ctx) -> Result<Outcome> {
    let p = resolve(cfg)?;
    let source = encoder_from_config(cfg)?;
    let t2i = t2i_from_config(cfg)?;
    let index = load_index(&p.data_dir)?;
    let (_, test_ids) = split_from_config(cfg, &index)?;
    cfg.reject_unknown()?;
    claim_dir(&p.dir, RUN_FILE, ctx.force)?;

    let loaded = load_model(p.model_dir.join(MODEL_CKPT))
        .with_context(|| format!("loading model from {}", p.model_dir.display()))?;
    let (evaluator, _) = load_evaluator(p.evaluator_dir.join(EVALUATOR_CKPT))
        .with_context(|| format!("loading evaluator from {}", p.evaluator_dir.display()))?;
    if !p.gt_as_prediction && source.checksum() != loaded.extractor_checksum {
        bail!(
            "the model was trained against extractor {}, the configured encoder is {}",
            loaded.extractor_checksum,
            source.checksum()
        );
    }

    if test_ids.is_empty() {
        bail!("nothing to evaluate: the test split is empty");
    }
    let items = load_items(&p.data_dir, &test_ids)?;
    let skel = Skeleton::default_22();
    let opts = EvaluateOptions {
        seed: p.seed,
        contact_threshold: p.contact_threshold,
        diversity_pairs: p.diversity_pairs,
        gt_as_prediction: p.gt_as_prediction,
    };
    let evaluation =
        evaluate_items(&loaded.model, source.as_ref(), &evaluator, &t2i, &items, &skel, &opts)?;
    let (json_path, csv_path) = write_report(&p.dir, &evaluation)?;

    let mut outcome = Outcome::new(&p.dir);
    outcome.seeds.insert("run".into(), p.seed);
    outcome.checksums.insert("extractor".into(), source.checksum());
    outcome.outputs.push(DeclaredOutput::Report(json_path));
    outcome.outputs.push(DeclaredOutput::File(csv_path));
    outcome.summary = format!(
        "evaluate: {} items\n{REPORT_CSV_HEADER}\n{}",
        items.len(),
        evaluation.report.csv_row()
    );
    Ok(outcome)
}
