//! End-to-end evaluation: one seeded generation per test item through the
//! text-to-image, prior-extraction, and diffusion pipeline, scored with the
//! full metric battery and flattened into report.json plus report.csv.

use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use vihoi_core::derive_seed;
use vihoi_core::motion::MotionSequence;
use vihoi_core::render::{render_frame, Camera, ImageBuf};
use vihoi_core::skeleton::Skeleton;
use vihoi_core::t2i::T2i;
use vihoi_core::CONTACT_THRESHOLD_M;

use crate::diffusion::{build_item_priors, HoiDiffusion, ItemPriors, TrainItem};
use crate::encoder::PriorSource;
use crate::evaluator::{EvalPair, EvaluatorModel};
use crate::metrics::{
    self, diversity, embeddings_to_host, fid, r_precision_from_embeddings, score_contacts,
    DIVERSITY_PAIRS,
};
use crate::prompts::build_t2i_prompt;
use crate::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Table column order; the CSV row follows it exactly.
pub const REPORT_CSV_HEADER: &str =
    "r_prec_top1,r_prec_top2,r_prec_top3,fid,diversity,fs,c_prec,c_rec,c_f1,c_pct,p_hand,mpjpe";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub r_prec_top1: f64,
    pub r_prec_top2: f64,
    pub r_prec_top3: f64,
    pub fid: f64,
    pub diversity: f64,
    pub fs: f64,
    pub c_prec: f64,
    pub c_rec: f64,
    pub c_f1: f64,
    pub c_pct: f64,
    pub p_hand: f64,
    pub mpjpe: f64,
}

impl MetricReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.r_prec_top1,
            self.r_prec_top2,
            self.r_prec_top3,
            self.fid,
            self.diversity,
            self.fs,
            self.c_prec,
            self.c_rec,
            self.c_f1,
            self.c_pct,
            self.p_hand,
            self.mpjpe
        )
    }

    pub fn validate(&self) -> Result<()> {
        let fractions = [
            ("r_prec_top1", self.r_prec_top1),
            ("r_prec_top2", self.r_prec_top2),
            ("r_prec_top3", self.r_prec_top3),
            ("c_prec", self.c_prec),
            ("c_rec", self.c_rec),
            ("c_f1", self.c_f1),
            ("c_pct", self.c_pct),
            ("p_hand", self.p_hand),
        ];
        for (name, v) in fractions {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Msg(format!("{name} {v} outside [0,1]")));
            }
        }
        if !(self.r_prec_top1 <= self.r_prec_top2 && self.r_prec_top2 <= self.r_prec_top3) {
            return Err(Error::Msg("retrieval precision not monotone".into()));
        }
        for (name, v) in
            [("fid", self.fid), ("diversity", self.diversity), ("fs", self.fs), ("mpjpe", self.mpjpe)]
        {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Msg(format!("{name} {v} not a non-negative scalar")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    pub seed: u64,
    pub contact_threshold: f64,
    pub diversity_pairs: usize,
    /// Score the ground truth against itself instead of sampling; pins the
    /// zero point of the whole battery.
    pub gt_as_prediction: bool,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            contact_threshold: CONTACT_THRESHOLD_M,
            diversity_pairs: DIVERSITY_PAIRS,
            gt_as_prediction: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub seed: u64,
    pub len: usize,
    pub mpjpe_cm: f64,
    pub foot_sliding: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationOutcome {
    pub report: MetricReport,
    pub text_encoder: String,
    pub seed: u64,
    pub gt_as_prediction: bool,
    pub per_item: Vec<ItemRecord>,
}

/// Neutral rest-pose frame with the object at the item's initial pose; the
/// visual seed handed to the text-to-image stage.
pub fn render_seed_image(
    item: &TrainItem,
    skel: &Skeleton,
    resolution: usize,
) -> Result<ImageBuf> {
    let gt = &item.sequence;
    let l = 2;
    let id6 = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
    let mut joints = ndarray::Array3::zeros((l, 22, 6));
    let mut obj_r = Array2::zeros((l, 6));
    let mut root = Array2::zeros((l, 3));
    let mut obj_t = Array2::zeros((l, 3));
    for f in 0..l {
        for j in 0..22 {
            for k in 0..6 {
                joints[[f, j, k]] = id6[k];
            }
        }
        for k in 0..6 {
            obj_r[[f, k]] = gt.obj_rot6d[[0, k]];
        }
        for k in 0..3 {
            obj_t[[f, k]] = gt.obj_transl[[0, k]];
        }
        root[[f, 1]] = skel.rest_root_height();
    }
    let pose = MotionSequence::new(
        root,
        joints,
        obj_t,
        obj_r,
        Array2::from_elem((l, 2), false),
        gt.fps,
        gt.text.clone(),
    )?;
    Ok(render_frame(&pose, 0, skel, Some(&item.mesh), &Camera::default_scene(), resolution, resolution)?)
}

/// Post-extraction transform applied to each item's priors before they reach
/// the model; ablation variants use it to substitute conditioning streams.
pub type PriorHook<'a> = &'a dyn Fn(&mut ItemPriors) -> Result<()>;

/// Full test-time generation for one item: prompt the image stages, extract
/// priors from the generated images, and run the sampler.
pub fn sample_for_item(
    model: &HoiDiffusion,
    source: &dyn PriorSource,
    t2i: &T2i,
    item: &TrainItem,
    skel: &Skeleton,
    seed: u64,
) -> Result<MotionSequence> {
    sample_for_item_with(model, source, t2i, item, skel, seed, &|_| Ok(()))
}

pub fn sample_for_item_with(
    model: &HoiDiffusion,
    source: &dyn PriorSource,
    t2i: &T2i,
    item: &TrainItem,
    skel: &Skeleton,
    seed: u64,
    hook: PriorHook,
) -> Result<MotionSequence> {
    let prompt = build_t2i_prompt(&item.sequence.text);
    let seed_img = render_seed_image(item, skel, source.resolution())?;
    let staged = t2i.generate(&prompt, &seed_img)?;
    let mut probe = item.clone();
    probe.images = staged;
    let mut priors =
        build_item_priors(&probe, source, &model.cfg.extraction, model.cfg.denoiser.fusion)?;
    hook(&mut priors)?;
    let m = model.ddpm_sample(&priors, item.sequence.len(), seed)?;
    HoiDiffusion::decode_matrix(&m, item.sequence.fps, &item.sequence.text)
}

/// Evaluates a split: one seeded sample per item (or the ground truth in
/// oracle mode), then the aggregated metric battery.
pub fn evaluate_items(
    model: &HoiDiffusion,
    source: &dyn PriorSource,
    evaluator: &EvaluatorModel,
    t2i: &T2i,
    items: &[TrainItem],
    skel: &Skeleton,
    opts: &EvaluateOptions,
) -> Result<EvaluationOutcome> {
    evaluate_items_with(model, source, evaluator, t2i, items, skel, opts, &|_| Ok(()))
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_items_with(
    model: &HoiDiffusion,
    source: &dyn PriorSource,
    evaluator: &EvaluatorModel,
    t2i: &T2i,
    items: &[TrainItem],
    skel: &Skeleton,
    opts: &EvaluateOptions,
    hook: PriorHook,
) -> Result<EvaluationOutcome> {
    if items.is_empty() {
        return Err(Error::Msg("no items to evaluate".into()));
    }
    let mut preds: Vec<MotionSequence> = Vec::with_capacity(items.len());
    let mut per_item = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let item_seed = derive_seed(opts.seed, &[i as u64]);
        let pred = if opts.gt_as_prediction {
            item.sequence.clone()
        } else {
            sample_for_item_with(model, source, t2i, item, skel, item_seed, hook)?
        };
        per_item.push(ItemRecord {
            id: item.id.clone(),
            seed: item_seed,
            len: pred.len(),
            mpjpe_cm: metrics::mpjpe(&pred, &item.sequence, skel)?,
            foot_sliding: metrics::foot_sliding(&pred, skel)?,
        });
        preds.push(pred);
    }

    // Contact and penetration are pooled over every (frame, hand) slot so
    // long sequences weigh proportionally.
    let mut pred_labels: Vec<bool> = Vec::new();
    let mut gt_labels: Vec<bool> = Vec::new();
    let mut pen_hits = 0.0;
    let mut pen_slots = 0.0;
    for (pred, item) in preds.iter().zip(items) {
        let labels =
            metrics::predicted_contacts(pred, &item.mesh, skel, opts.contact_threshold)?;
        pred_labels.extend(labels.iter().copied());
        gt_labels.extend(item.sequence.contact.iter().copied());
        let frac = metrics::hand_penetration(pred, &item.mesh, skel)?;
        let slots = (2 * pred.len()) as f64;
        pen_hits += frac * slots;
        pen_slots += slots;
    }
    let slot_count = pred_labels.len();
    let contact = score_contacts(
        &Array2::from_shape_vec((slot_count, 1), pred_labels).expect("flat labels"),
        &Array2::from_shape_vec((slot_count, 1), gt_labels).expect("flat labels"),
    );

    let pred_feats = embed_sequences(evaluator, &preds)?;
    let gt_seqs: Vec<&MotionSequence> = items.iter().map(|i| &i.sequence).collect();
    let gt_feats = embed_sequences_ref(evaluator, &gt_seqs)?;
    let texts: Vec<String> = items.iter().map(|i| i.sequence.text.clone()).collect();
    let text_feats = embeddings_to_host(&evaluator.embed_text_batch(&texts)?)?;
    let (t1, t2, t3) =
        r_precision_from_embeddings(&text_feats, &pred_feats, derive_seed(opts.seed, &[0x7279]))?;

    let report = MetricReport {
        r_prec_top1: t1,
        r_prec_top2: t2,
        r_prec_top3: t3,
        fid: fid(&pred_feats, &gt_feats)?,
        diversity: diversity(&pred_feats, opts.diversity_pairs, derive_seed(opts.seed, &[0xd1]))?,
        fs: per_item.iter().map(|r| r.foot_sliding).sum::<f64>() / per_item.len() as f64,
        c_prec: contact.precision,
        c_rec: contact.recall,
        c_f1: contact.f1,
        c_pct: contact.contact_pct,
        p_hand: if pen_slots > 0.0 { pen_hits / pen_slots } else { 0.0 },
        mpjpe: per_item.iter().map(|r| r.mpjpe_cm).sum::<f64>() / per_item.len() as f64,
    };
    report.validate()?;
    Ok(EvaluationOutcome {
        report,
        text_encoder: evaluator.cfg.text_encoder.label().to_string(),
        seed: opts.seed,
        gt_as_prediction: opts.gt_as_prediction,
        per_item,
    })
}

fn embed_sequences(model: &EvaluatorModel, seqs: &[MotionSequence]) -> Result<Array2<f64>> {
    let refs: Vec<&MotionSequence> = seqs.iter().collect();
    embed_sequences_ref(model, &refs)
}

/// Evaluator features in chunks so padded batches stay small.
fn embed_sequences_ref(model: &EvaluatorModel, seqs: &[&MotionSequence]) -> Result<Array2<f64>> {
    let mut out: Option<Array2<f64>> = None;
    for chunk in seqs.chunks(16) {
        let mats: Vec<Array2<f64>> = chunk
            .iter()
            .map(|s| s.to_eval_representation().map(|e| e.values))
            .collect::<std::result::Result<_, _>>()?;
        let emb = embeddings_to_host(&model.embed_motion_batch(&mats)?)?;
        out = Some(match out {
            None => emb,
            Some(acc) => ndarray::concatenate(Axis(0), &[acc.view(), emb.view()])
                .expect("same embedding width"),
        });
    }
    Ok(out.expect("nonempty input"))
}

/// Builds matched pairs for retrieval training from loaded items.
pub fn pairs_from_items(items: &[TrainItem]) -> Result<Vec<EvalPair>> {
    items
        .iter()
        .map(|i| {
            Ok(EvalPair {
                motion: i.sequence.to_eval_representation()?.values,
                text: i.sequence.text.clone(),
            })
        })
        .collect()
}

/// Writes report.json and report.csv; returns both paths.
pub fn write_report(
    dir: impl AsRef<Path>,
    outcome: &EvaluationOutcome,
) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let json_path = dir.join("report.json");
    let csv_path = dir.join("report.csv");
    let doc = serde_json::json!({
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": "report",
        "text_encoder": outcome.text_encoder,
        "seed": outcome.seed,
        "gt_as_prediction": outcome.gt_as_prediction,
        "n_items": outcome.per_item.len(),
        "metrics": outcome.report,
        "per_item": outcome.per_item,
    });
    std::fs::write(&json_path, serde_json::to_vec_pretty(&doc)?)?;
    std::fs::write(&csv_path, format!("{REPORT_CSV_HEADER}\n{}\n", outcome.report.csv_row()))?;
    Ok((json_path, csv_path))
}

/// Parses report.json back, checking the schema marker.
pub fn read_report(path: impl AsRef<Path>) -> Result<serde_json::Value> {
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(path)?)?;
    if doc["schema_version"] != REPORT_SCHEMA_VERSION {
        return Err(Error::Msg(format!("report schema {}", doc["schema_version"])));
    }
    if doc["kind"] != "report" {
        return Err(Error::Msg(format!("not a report: kind {}", doc["kind"])));
    }
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{DenoiserConfig, GeometryFusion};
    use crate::diffusion::DiffusionConfig;
    use crate::encoder::{ExtractionConfig, ToyEncoderConfig, ToyMultimodalEncoder};
    use crate::evaluator::{EvaluatorConfig, TextEncoderKind};
    use crate::schedule::ScheduleKind;
    use vihoi_core::dataset::{task_for_slot, generate_sequence, CorpusConfig};
    use vihoi_core::mesh::PrimitiveKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_items(n: usize) -> Vec<TrainItem> {
        let cfg = CorpusConfig {
            n_sequences: n,
            min_frames: 32,
            max_frames: 32,
            kinds: vec![PrimitiveKind::Box, PrimitiveKind::Cylinder],
            ..CorpusConfig::default()
        };
        (0..n)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
                let task = task_for_slot(&cfg, i, &mut rng);
                let seq = generate_sequence(&task, (i % 4) as u32, 2000 + i as u64).unwrap();
                let mesh = task.mesh().unwrap();
                let img = ImageBuf::filled(8, 8, [0.4, 0.5, 0.6]).unwrap();
                TrainItem {
                    id: format!("seq_{i:04}"),
                    sequence: seq,
                    mesh,
                    images: [img.clone(), img.clone(), img],
                    subject_id: (i % 4) as u32,
                }
            })
            .collect()
    }

    fn tiny_encoder() -> ToyMultimodalEncoder {
        let cfg = ToyEncoderConfig {
            depth: 12,
            d_enc: 32,
            heads: 4,
            patch: 16,
            resolution: 32,
            ffn_mult: 2,
            max_text_len: 128,
        };
        let mut enc = ToyMultimodalEncoder::new(cfg, 7).unwrap();
        enc.freeze();
        enc
    }

    fn tiny_model(d_enc: usize) -> HoiDiffusion {
        let cfg = DiffusionConfig {
            t_steps: 50,
            sample_steps: 5,
            schedule: ScheduleKind::Cosine,
            denoiser: DenoiserConfig {
                d_model: 32,
                layers: 1,
                heads: 4,
                max_len: 40,
                geometry_embed_dim: 16,
                ffn_mult: 2,
                fusion: GeometryFusion::AdditiveBps,
            },
            extraction: ExtractionConfig { visual_layer: 3, text_layer: 12, text_only: false },
            ..DiffusionConfig::default()
        };
        HoiDiffusion::new(cfg, d_enc, 3).unwrap()
    }

    fn tiny_evaluator() -> EvaluatorModel {
        let cfg = EvaluatorConfig {
            hidden: 24,
            out_dim: 32,
            text_embed: 24,
            text_encoder: TextEncoderKind::Toy,
            ..EvaluatorConfig::default()
        };
        EvaluatorModel::new(cfg, 5).unwrap()
    }

    #[test]
    fn gt_as_prediction_pins_the_zero_point() {
        let items = test_items(32);
        let skel = Skeleton::default_22();
        let model = tiny_model(32);
        let enc = tiny_encoder();
        let evaluator = tiny_evaluator();
        let opts = EvaluateOptions { gt_as_prediction: true, seed: 6, ..Default::default() };
        let out =
            evaluate_items(&model, &enc, &evaluator, &T2i::Stub, &items, &skel, &opts).unwrap();
        assert_eq!(out.report.mpjpe, 0.0);
        assert_eq!(out.report.c_f1, 1.0, "dataset labels should match their geometry");
        assert!(out.report.fid < 0.05, "self fid {}", out.report.fid);
        assert_eq!(out.text_encoder, "toy");
        assert!(out.gt_as_prediction);
        out.report.validate().unwrap();

        let again =
            evaluate_items(&model, &enc, &evaluator, &T2i::Stub, &items, &skel, &opts).unwrap();
        assert_eq!(out.report, again.report);
    }

    #[test]
    fn sampling_path_produces_a_valid_deterministic_report() {
        let items = test_items(32);
        let skel = Skeleton::default_22();
        let enc = tiny_encoder();
        let model = tiny_model(32);
        let evaluator = tiny_evaluator();
        let opts = EvaluateOptions { seed: 9, ..Default::default() };
        let out =
            evaluate_items(&model, &enc, &evaluator, &T2i::Stub, &items, &skel, &opts).unwrap();
        out.report.validate().unwrap();
        assert!(out.report.mpjpe > 0.0, "untrained samples should not match gt");
        assert_eq!(out.per_item.len(), 32);
        let mut seeds: Vec<u64> = out.per_item.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 32, "per-item seeds must be distinct");

        let again =
            evaluate_items(&model, &enc, &evaluator, &T2i::Stub, &items, &skel, &opts).unwrap();
        assert_eq!(out.report, again.report);

        let shifted = EvaluateOptions { seed: 10, ..Default::default() };
        let other =
            evaluate_items(&model, &enc, &evaluator, &T2i::Stub, &items, &skel, &shifted)
                .unwrap();
        assert_ne!(out.report, other.report);
    }

    #[test]
    fn reports_round_trip_with_the_pinned_column_order() {
        let items = test_items(32);
        let skel = Skeleton::default_22();
        let model = tiny_model(32);
        let enc = tiny_encoder();
        let evaluator = tiny_evaluator();
        let opts = EvaluateOptions { gt_as_prediction: true, ..Default::default() };
        let out =
            evaluate_items(&model, &enc, &evaluator, &T2i::Stub, &items, &skel, &opts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (json_path, csv_path) = write_report(dir.path(), &out).unwrap();

        let doc = read_report(&json_path).unwrap();
        assert_eq!(doc["text_encoder"], "toy");
        assert_eq!(doc["n_items"], 32);
        let parsed: MetricReport = serde_json::from_value(doc["metrics"].clone()).unwrap();
        assert_eq!(parsed, out.report);

        let csv = std::fs::read_to_string(&csv_path).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(REPORT_CSV_HEADER));
        let row: Vec<f64> =
            lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(row.len(), 12);
        assert_eq!(row[11], out.report.mpjpe);
    }

    #[test]
    fn too_few_items_fail_loudly() {
        let items = test_items(4);
        let skel = Skeleton::default_22();
        let model = tiny_model(32);
        let enc = tiny_encoder();
        let evaluator = tiny_evaluator();
        let opts = EvaluateOptions { gt_as_prediction: true, ..Default::default() };
        match evaluate_items(&model, &enc, &evaluator, &T2i::Stub, &items, &skel, &opts) {
            Err(Error::TooFewPairs { got, need: 32 }) => assert_eq!(got, 4),
            other => panic!("expected TooFewPairs, got {:?}", other.map(|o| o.report)),
        }
    }
}
