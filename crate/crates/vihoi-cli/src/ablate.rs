//! `ablate`: the conditioning grid. Every cell shares one corpus, one frozen
//! deep encoder, one retrieval evaluator, and one seed set; only the
//! conditioning wiring changes. Cells that fail leave an error row behind
//! instead of aborting the grid.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};

use vihoi_core::derive_seed;
use vihoi_core::skeleton::Skeleton;
use vihoi_core::t2i::T2i;
use vihoi_core::CONTACT_THRESHOLD_M;
use vihoi_model::denoiser::{DenoiserConfig, GeometryFusion};
use vihoi_model::diffusion::{
    self, build_item_priors, AdapterKind, DiffusionConfig, HoiDiffusion, ItemPriors, TrainItem,
    TrainOptions,
};
use vihoi_model::encoder::{FrozenTextEncoder, ToyEncoderConfig, ToyMultimodalEncoder};
use vihoi_model::evaluate::{
    evaluate_items_with, pairs_from_items, write_report, EvaluateOptions, MetricReport,
};
use vihoi_model::evaluator::{
    train_evaluator, EvalTrainOptions, EvaluatorConfig, EvaluatorModel, TextEncoderKind,
};
use vihoi_model::metrics::DIVERSITY_PAIRS;
use vihoi_model::qformer::{qformer_call_count, reset_qformer_call_count};
use vihoi_model::schedule::ScheduleKind;

use crate::config::RunConfig;
use crate::runmeta::{DeclaredOutput, Outcome};
use crate::setup::{claim_dir, load_index, load_items, t2i_from_config, Ctx};
use crate::sources::UnionCachingSource;

/// Residual-stream depths every cell may draw from.
const UNION_LAYERS: [usize; 4] = [3, 12, 24, 36];

pub const TABLE_CSV: &str = "ablation.csv";
pub const TABLE_MD: &str = "ablation.md";

#[derive(Debug, Clone, Copy)]
struct Cell {
    label: &'static str,
    visual_layer: usize,
    text_layer: usize,
    text_only: bool,
    adapter: AdapterKind,
    k: usize,
    clip_text: bool,
}

fn base(label: &'static str, visual_layer: usize, text_layer: usize) -> Cell {
    Cell {
        label,
        visual_layer,
        text_layer,
        text_only: false,
        adapter: AdapterKind::QFormer,
        k: 1,
        clip_text: false,
    }
}

fn grid() -> Vec<Cell> {
    vec![
        base("V3-T12", 3, 12),
        base("V3-T24", 3, 24),
        base("V12-T12", 12, 12),
        base("V12-T36", 12, 36),
        base("V24-T24", 24, 24),
        base("V36-T36", 36, 36),
        base("V3-T36", 3, 36),
        Cell { text_only: true, ..base("T12-only", 3, 12) },
        Cell { adapter: AdapterKind::Pool, ..base("ViHOI-Pool", 3, 12) },
        Cell { clip_text: true, ..base("ViHOI-CLIP", 3, 12) },
        Cell { k: 1, ..base("k=1", 3, 12) },
        Cell { k: 2, ..base("k=2", 3, 12) },
        Cell { k: 4, ..base("k=4", 3, 12) },
        Cell { k: 8, ..base("k=8", 3, 12) },
    ]
}

struct Params {
    seed: u64,
    data_dir: PathBuf,
    dir: PathBuf,
    items: usize,
    steps: usize,
    evaluator_steps: usize,
    encoder: ToyEncoderConfig,
    d_model: usize,
    layers: usize,
    heads: usize,
    batch_size: usize,
    lr: f64,
    t_steps: usize,
    sample_steps: usize,
}

fn resolve(cfg: &RunConfig) -> Result<Params> {
    Ok(Params {
        seed: cfg.get_u64("seed", 0)?,
        data_dir: PathBuf::from(cfg.get_str("data.dir", "data/corpus")?),
        dir: PathBuf::from(cfg.get_str("ablate.dir", "runs/ablation")?),
        items: cfg.get_usize("ablate.items", 0)?,
        steps: cfg.get_usize("ablate.steps", 200)?,
        evaluator_steps: cfg.get_usize("ablate.evaluator_steps", 150)?,
        encoder: ToyEncoderConfig {
            depth: cfg.get_usize("ablate.encoder_depth", 36)?,
            d_enc: cfg.get_usize("ablate.d_enc", 32)?,
            heads: 4,
            patch: cfg.get_usize("ablate.patch", 16)?,
            resolution: cfg.get_usize("ablate.resolution", 64)?,
            ffn_mult: 2,
            max_text_len: 128,
        },
        d_model: cfg.get_usize("ablate.d_model", 64)?,
        layers: cfg.get_usize("ablate.layers", 2)?,
        heads: cfg.get_usize("ablate.heads", 4)?,
        batch_size: cfg.get_usize("ablate.batch_size", 8)?,
        lr: cfg.get_f64("ablate.lr", 1e-3)?,
        t_steps: cfg.get_usize("ablate.t_steps", 100)?,
        sample_steps: cfg.get_usize("ablate.sample_steps", 20)?,
    })
}

struct Shared<'a> {
    p: &'a Params,
    source: &'a UnionCachingSource,
    evaluator: &'a EvaluatorModel,
    frozen: &'a FrozenTextEncoder,
    t2i: &'a T2i,
    items: &'a [TrainItem],
    skel: &'a Skeleton,
    max_len: usize,
}

struct Row {
    cell: Cell,
    qformer_calls: u64,
    wall_s: f64,
    outcome: std::result::Result<MetricReport, String>,
}

fn cell_config(shared: &Shared, cell: &Cell) -> DiffusionConfig {
    let p = shared.p;
    DiffusionConfig {
        t_steps: p.t_steps,
        sample_steps: p.sample_steps,
        schedule: ScheduleKind::Cosine,
        denoiser: DenoiserConfig {
            d_model: p.d_model,
            layers: p.layers,
            heads: p.heads,
            max_len: shared.max_len,
            geometry_embed_dim: 32,
            ffn_mult: 2,
            fusion: GeometryFusion::AdditiveBps,
        },
        extraction: vihoi_model::encoder::ExtractionConfig {
            visual_layer: cell.visual_layer,
            text_layer: cell.text_layer,
            text_only: cell.text_only,
        },
        adapter: cell.adapter,
        k_visual: cell.k,
        k_text: cell.k,
        lr: p.lr,
        batch_size: p.batch_size,
        clip_norm: 1.0,
        visual_dropout: 0.3,
        guidance: false,
    }
}

fn run_cell(shared: &Shared, cell: &Cell, cell_dir: &PathBuf) -> Result<MetricReport> {
    let p = shared.p;
    let dcfg = cell_config(shared, cell);

    let noop = |_: &mut ItemPriors| -> vihoi_model::Result<()> { Ok(()) };
    let clip = |priors: &mut ItemPriors| -> vihoi_model::Result<()> {
        priors.e_t = shared.frozen.text_states(&priors.text)?;
        Ok(())
    };
    let hook: &dyn Fn(&mut ItemPriors) -> vihoi_model::Result<()> =
        if cell.clip_text { &clip } else { &noop };

    let priors: Vec<ItemPriors> = shared
        .items
        .iter()
        .map(|item| {
            let mut pr =
                build_item_priors(item, shared.source, &dcfg.extraction, dcfg.denoiser.fusion)?;
            hook(&mut pr)?;
            Ok(pr)
        })
        .collect::<vihoi_model::Result<_>>()?;
    let d_enc = priors[0].e_t.ncols();

    // Same init and step seeds for every cell; only the wiring differs.
    let mut model = HoiDiffusion::new(dcfg, d_enc, derive_seed(p.seed, &[0x6d01]))?;
    std::fs::create_dir_all(cell_dir)?;
    let opts = TrainOptions {
        steps: p.steps,
        seed: derive_seed(p.seed, &[0x7247]),
        checkpoint_path: cell_dir.join("model.ckpt"),
        checkpoint_every: 0,
        resume_from: None,
        log_every: 0,
    };
    diffusion::train(&mut model, &priors, &shared.source.checksum(), &opts)?;

    let eval_opts = EvaluateOptions {
        seed: derive_seed(p.seed, &[0xeba1]),
        contact_threshold: CONTACT_THRESHOLD_M,
        diversity_pairs: DIVERSITY_PAIRS,
        gt_as_prediction: false,
    };
    let evaluation = evaluate_items_with(
        &model,
        shared.source,
        shared.evaluator,
        shared.t2i,
        shared.items,
        shared.skel,
        &eval_opts,
        hook,
    )?;
    write_report(cell_dir, &evaluation)?;
    Ok(evaluation.report)
}

pub fn run(cfg: &RunConfig, ctx: &Ctx) -> Result<Outcome> {
    let p = resolve(cfg)?;
    let t2i = t2i_from_config(cfg)?;
    let index = load_index(&p.data_dir)?;
    cfg.reject_unknown()?;
    claim_dir(&p.dir, TABLE_CSV, ctx.force)?;

    let mut ids: Vec<String> = index.items.iter().map(|i| i.id.clone()).collect();
    if p.items > 0 {
        ids.truncate(p.items);
    }
    let items = load_items(&p.data_dir, &ids)?;
    let max_len = items.iter().map(|i| i.sequence.len()).max().unwrap_or(0);

    let mut toy = ToyMultimodalEncoder::new(p.encoder, derive_seed(p.seed, &[0xe6c]))?;
    toy.freeze();
    let union: Vec<usize> =
        UNION_LAYERS.iter().copied().filter(|l| *l <= p.encoder.depth).collect();
    let source = UnionCachingSource::new(toy, union);
    let frozen =
        FrozenTextEncoder::new(p.encoder.d_enc, derive_seed(p.seed, &[0xc11b]))?;

    let pairs = pairs_from_items(&items)?;
    let eval_cfg = EvaluatorConfig {
        hidden: 32,
        out_dim: 48,
        text_embed: 32,
        frozen_d: p.encoder.d_enc,
        margin: 0.2,
        lr: 2e-3,
        batch: 16,
        text_encoder: TextEncoderKind::Toy,
    };
    let evaluator_seed = derive_seed(p.seed, &[0xe7a1]);
    let (evaluator, _) = train_evaluator(
        &pairs,
        eval_cfg,
        &EvalTrainOptions { steps: p.evaluator_steps, seed: evaluator_seed, log_every: 0 },
    )
    .context("training the shared ablation evaluator")?;

    let skel = Skeleton::default_22();
    let shared = Shared {
        p: &p,
        source: &source,
        evaluator: &evaluator,
        frozen: &frozen,
        t2i: &t2i,
        items: &items,
        skel: &skel,
        max_len,
    };

    let mut rows = Vec::new();
    for cell in grid() {
        let cell_dir = p.dir.join("cells").join(cell.label);
        let started = Instant::now();
        reset_qformer_call_count();
        let mut outcome = match run_cell(&shared, &cell, &cell_dir) {
            Ok(report) => Ok(report),
            Err(e) => Err(format!("{e:#}")),
        };
        let qformer_calls = qformer_call_count();
        // The pooling cell exists to prove the query adapter is bypassed.
        if cell.adapter == AdapterKind::Pool && qformer_calls > 0 && outcome.is_ok() {
            outcome = Err(format!(
                "pooling cell still reached the query adapter {qformer_calls} times"
            ));
        }
        eprintln!(
            "ablate {}: {} ({:.1}s)",
            cell.label,
            match &outcome {
                Ok(_) => "ok".to_string(),
                Err(e) => format!("error: {e}"),
            },
            started.elapsed().as_secs_f64()
        );
        rows.push(Row {
            cell,
            qformer_calls,
            wall_s: started.elapsed().as_secs_f64(),
            outcome,
        });
    }

    let csv_path = p.dir.join(TABLE_CSV);
    std::fs::write(&csv_path, render_csv(&rows))?;
    let md_path = p.dir.join(TABLE_MD);
    std::fs::write(&md_path, render_md(&rows, &source, &p))?;

    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    if failed == rows.len() {
        bail!("every ablation cell failed; see {}", csv_path.display());
    }
    let mut outcome = Outcome::new(&p.dir);
    outcome.seeds.insert("run".into(), p.seed);
    outcome.seeds.insert("model_init".into(), derive_seed(p.seed, &[0x6d01]));
    outcome.seeds.insert("train".into(), derive_seed(p.seed, &[0x7247]));
    outcome.seeds.insert("eval".into(), derive_seed(p.seed, &[0xeba1]));
    outcome.seeds.insert("evaluator".into(), evaluator_seed);
    outcome.seeds.insert("data".into(), index.seed);
    outcome.checksums.insert("extractor".into(), source.checksum());
    outcome.outputs.push(DeclaredOutput::File(csv_path));
    outcome.outputs.push(DeclaredOutput::File(md_path));
    outcome.summary = format!(
        "ablate: {} cells ({} failed) over {} items, table under {}",
        rows.len(),
        failed,
        items.len(),
        p.dir.display()
    );
    Ok(outcome)
}

fn adapter_label(kind: AdapterKind) -> &'static str {
    match kind {
        AdapterKind::QFormer => "q_former",
        AdapterKind::Pool => "pool",
    }
}

fn text_prior_label(cell: &Cell) -> &'static str {
    if cell.clip_text {
        "frozen"
    } else {
        "toy"
    }
}

fn render_csv(rows: &[Row]) -> String {
    let mut out = String::from(
        "cell,visual_layer,text_layer,adapter,text_prior,k,qformer_calls,wall_s,status,\
         r_prec_top1,r_prec_top2,r_prec_top3,fid,diversity,fs,c_prec,c_rec,c_f1,c_pct,p_hand,mpjpe\n",
    );
    for row in rows {
        let c = &row.cell;
        let visual = if c.text_only { "-".to_string() } else { c.visual_layer.to_string() };
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{:.2},",
            c.label,
            visual,
            c.text_layer,
            adapter_label(c.adapter),
            text_prior_label(c),
            c.k,
            row.qformer_calls,
            row.wall_s,
        );
        match &row.outcome {
            Ok(r) => {
                let _ = writeln!(out, "ok,{}", r.csv_row());
            }
            Err(e) => {
                let msg = e.replace([',', '\n'], ";");
                let _ = writeln!(out, "{msg},,,,,,,,,,,,");
            }
        }
    }
    out
}

fn render_md(rows: &[Row], source: &UnionCachingSource, p: &Params) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Conditioning ablation\n");
    let _ = writeln!(
        out,
        "Shared: {} items, {} train steps per cell, encoder depth {} (checksum `{}`), union layers {:?}.\n",
        rows.first().map(|_| p.items).unwrap_or(0),
        p.steps,
        p.encoder.depth,
        source.checksum(),
        source.union(),
    );
    let _ = writeln!(
        out,
        "| Cell | V | T | Adapter | Text prior | k | R@1 | FID | Div | FS | C-F1 | Pen | MPJPE | Status |"
    );
    let _ = writeln!(out, "|---|---|---|---|---|---|---|---|---|---|---|---|---|---|");
    for row in rows {
        let c = &row.cell;
        let visual = if c.text_only { "-".to_string() } else { c.visual_layer.to_string() };
        match &row.outcome {
            Ok(r) => {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {:.2} | ok |",
                    c.label,
                    visual,
                    c.text_layer,
                    adapter_label(c.adapter),
                    text_prior_label(c),
                    c.k,
                    r.r_prec_top1,
                    r.fid,
                    r.diversity,
                    r.fs,
                    r.c_f1,
                    r.p_hand,
                    r.mpjpe,
                );
            }
            Err(e) => {
                let msg = e.replace('|', "/").replace('\n', "; ");
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} | | | | | | | | {} |",
                    c.label,
                    visual,
                    c.text_layer,
                    adapter_label(c.adapter),
                    text_prior_label(c),
                    c.k,
                    msg,
                );
            }
        }
    }
    out
}
