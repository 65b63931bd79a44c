//! Declared outputs, their validation, and the per-run `run.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};

use vihoi_core::container::load_sequence_dir;
use vihoi_core::dataset::load_corpus_index;
use vihoi_core::render::ImageBuf;
use vihoi_model::diffusion::load_model;
use vihoi_model::evaluate::read_report;
use vihoi_model::evaluator::load_evaluator;

pub const RUN_FILE: &str = "run.json";

/// A path the command promises to produce, tagged with how to check it.
pub enum DeclaredOutput {
    /// Corpus directory; its index must parse and match the schema.
    CorpusIndex(PathBuf),
    /// One stored sequence directory.
    SequenceDir(PathBuf),
    DiffusionCkpt(PathBuf),
    EvaluatorCkpt(PathBuf),
    /// report.json; must parse and carry the pinned schema version.
    Report(PathBuf),
    Png(PathBuf),
    /// Anything else; must exist and be non-empty.
    File(PathBuf),
}

impl DeclaredOutput {
    pub fn path(&self) -> &Path {
        match self {
            DeclaredOutput::CorpusIndex(p)
            | DeclaredOutput::SequenceDir(p)
            | DeclaredOutput::DiffusionCkpt(p)
            | DeclaredOutput::EvaluatorCkpt(p)
            | DeclaredOutput::Report(p)
            | DeclaredOutput::Png(p)
            | DeclaredOutput::File(p) => p,
        }
    }

    fn check(&self) -> Result<()> {
        match self {
            DeclaredOutput::CorpusIndex(dir) => {
                load_corpus_index(dir)?;
            }
            DeclaredOutput::SequenceDir(dir) => {
                load_sequence_dir(dir)?;
            }
            DeclaredOutput::DiffusionCkpt(path) => {
                load_model(path)?;
            }
            DeclaredOutput::EvaluatorCkpt(path) => {
                load_evaluator(path)?;
            }
            DeclaredOutput::Report(path) => {
                read_report(path)?;
            }
            DeclaredOutput::Png(path) => {
                ImageBuf::load_png(path)?;
            }
            DeclaredOutput::File(path) => {
                let meta = std::fs::metadata(path)?;
                if meta.len() == 0 {
                    bail!("file is empty");
                }
            }
        }
        Ok(())
    }
}

/// The process exits zero only when every declared output passes.
pub fn validate_outputs(outputs: &[DeclaredOutput]) -> Result<()> {
    for out in outputs {
        out.check()
            .with_context(|| format!("validating output {}", out.path().display()))?;
    }
    Ok(())
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let bytes = std::fs::read(path.as_ref())
        .with_context(|| format!("hashing {}", path.as_ref().display()))?;
    Ok(sha256_bytes(&bytes))
}

/// What a command hands back to the driver: where run.json goes plus the
/// material for it.
pub struct Outcome {
    pub dir: PathBuf,
    pub seeds: BTreeMap<String, u64>,
    pub checksums: BTreeMap<String, String>,
    pub outputs: Vec<DeclaredOutput>,
    /// One-line result summary printed on success.
    pub summary: String,
}

impl Outcome {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            seeds: BTreeMap::new(),
            checksums: BTreeMap::new(),
            outputs: Vec::new(),
            summary: String::new(),
        }
    }
}

pub fn write_run_json(
    command: &str,
    config: &crate::config::RunConfig,
    outcome: &Outcome,
    wall: Duration,
) -> Result<PathBuf> {
    let mut checksums = outcome.checksums.clone();
    for out in &outcome.outputs {
        let path = out.path();
        if path.is_file() {
            checksums.insert(path.display().to_string(), sha256_file(path)?);
        }
    }
    let outputs: Vec<String> =
        outcome.outputs.iter().map(|o| o.path().display().to_string()).collect();
    let doc = serde_json::json!({
        "schema_version": 1,
        "kind": "run",
        "command": command,
        "config": config.resolved(),
        "config_defaults": config.defaults(),
        "seeds": outcome.seeds,
        "checksums": checksums,
        "outputs": outputs,
        "wall_time_s": wall.as_secs_f64(),
    });
    std::fs::create_dir_all(&outcome.dir)?;
    let path = outcome.dir.join(RUN_FILE);
    std::fs::write(&path, serde_json::to_vec_pretty(&doc)?)?;
    Ok(path)
}
