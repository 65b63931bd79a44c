//! On-disk sequence container: a directory with `meta.json` plus one flat
//! little-endian f32 binary per field, and a single-file archive variant
//! carrying the same payload.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::motion::MotionSequence;
use crate::skeleton::JOINT_COUNT;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
const ARCHIVE_MAGIC: &[u8; 8] = b"VIHOISEQ";

/// Field files in their fixed on-disk order.
const FIELDS: [&str; 5] = ["root_transl", "joint_rot6d", "obj_transl", "obj_rot6d", "contact"];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SequenceMeta {
    pub schema_version: u32,
    pub fps: f64,
    pub len: usize,
    pub text: String,
    pub object_kind: String,
    pub object_dims: Vec<f64>,
    pub subject_id: u32,
    pub verb: String,
    #[serde(default)]
    pub tags: Vec<String>,
}

impl SequenceMeta {
    pub fn for_sequence(seq: &MotionSequence) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            fps: seq.fps,
            len: seq.len(),
            text: seq.text.clone(),
            object_kind: String::new(),
            object_dims: Vec::new(),
            subject_id: 0,
            verb: String::new(),
            tags: Vec::new(),
        }
    }
}

fn f32_bytes(values: impl Iterator<Item = f64>) -> Vec<u8> {
    let mut out = Vec::new();
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn parse_f32s(bytes: &[u8], what: &str) -> Result<Vec<f64>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Container(format!("{what}: {} bytes is not a multiple of 4", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}

fn field_payload(seq: &MotionSequence, field: &str) -> Vec<u8> {
    match field {
        "root_transl" => f32_bytes(seq.root_transl.iter().copied()),
        "joint_rot6d" => f32_bytes(seq.joint_rot6d.iter().copied()),
        "obj_transl" => f32_bytes(seq.obj_transl.iter().copied()),
        "obj_rot6d" => f32_bytes(seq.obj_rot6d.iter().copied()),
        "contact" => f32_bytes(seq.contact.iter().map(|&b| if b { 1.0 } else { 0.0 })),
        other => unreachable!("unknown field {other}"),
    }
}

fn assemble(meta: &SequenceMeta, payloads: Vec<Vec<f64>>) -> Result<MotionSequence> {
    let l = meta.len;
    let want = [l * 3, l * JOINT_COUNT * 6, l * 3, l * 6, l * 2];
    for (i, p) in payloads.iter().enumerate() {
        if p.len() != want[i] {
            return Err(Error::Container(format!(
                "field {} has {} values, want {}",
                FIELDS[i],
                p.len(),
                want[i]
            )));
        }
    }
    let mut it = payloads.into_iter();
    let root = Array2::from_shape_vec((l, 3), it.next().unwrap()).unwrap();
    let joints = Array3::from_shape_vec((l, JOINT_COUNT, 6), it.next().unwrap()).unwrap();
    let obj_t = Array2::from_shape_vec((l, 3), it.next().unwrap()).unwrap();
    let obj_r = Array2::from_shape_vec((l, 6), it.next().unwrap()).unwrap();
    let contact = Array2::from_shape_vec(
        (l, 2),
        it.next().unwrap().into_iter().map(|v| v != 0.0).collect(),
    )
    .unwrap();
    MotionSequence::new(root, joints, obj_t, obj_r, contact, meta.fps, meta.text.clone())
}

/// Writes `meta.json` plus one `<field>.f32` file per field.
pub fn save_sequence_dir(dir: impl AsRef<Path>, seq: &MotionSequence, meta: &SequenceMeta) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    if meta.len != seq.len() {
        return Err(Error::Container(format!("meta len {} vs sequence {}", meta.len, seq.len())));
    }
    let json = serde_json::to_vec_pretty(meta)?;
    std::fs::write(dir.join("meta.json"), json)?;
    for field in FIELDS {
        std::fs::write(dir.join(format!("{field}.f32")), field_payload(seq, field))?;
    }
    Ok(())
}

pub fn load_sequence_dir(dir: impl AsRef<Path>) -> Result<(MotionSequence, SequenceMeta)> {
    let dir = dir.as_ref();
    let meta: SequenceMeta = serde_json::from_slice(&std::fs::read(dir.join("meta.json"))?)?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(Error::Container(format!("schema version {}", meta.schema_version)));
    }
    let mut payloads = Vec::with_capacity(FIELDS.len());
    for field in FIELDS {
        let bytes = std::fs::read(dir.join(format!("{field}.f32")))?;
        payloads.push(parse_f32s(&bytes, field)?);
    }
    Ok((assemble(&meta, payloads)?, meta))
}

/// Single-file variant: magic, version, meta length + JSON, then each field
/// as a u64 byte length followed by the same f32 payload as the directory
/// format.
pub fn save_sequence_archive(path: impl AsRef<Path>, seq: &MotionSequence, meta: &SequenceMeta) -> Result<()> {
    if meta.len != seq.len() {
        return Err(Error::Container(format!("meta len {} vs sequence {}", meta.len, seq.len())));
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(ARCHIVE_MAGIC)?;
    w.write_all(&SCHEMA_VERSION.to_le_bytes())?;
    let json = serde_json::to_vec(meta)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for field in FIELDS {
        let payload = field_payload(seq, field);
        w.write_all(&(payload.len() as u64).to_le_bytes())?;
        w.write_all(&payload)?;
    }
    Ok(())
}

pub fn load_sequence_archive(path: impl AsRef<Path>) -> Result<(MotionSequence, SequenceMeta)> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != ARCHIVE_MAGIC {
        return Err(Error::Container("bad archive magic".to_string()));
    }
    let mut ver = [0u8; 4];
    r.read_exact(&mut ver)?;
    if u32::from_le_bytes(ver) != SCHEMA_VERSION {
        return Err(Error::Container(format!("schema version {}", u32::from_le_bytes(ver))));
    }
    let mut len8 = [0u8; 8];
    r.read_exact(&mut len8)?;
    let mut json = vec![0u8; u64::from_le_bytes(len8) as usize];
    r.read_exact(&mut json)?;
    let meta: SequenceMeta = serde_json::from_slice(&json)?;
    let mut payloads = Vec::with_capacity(FIELDS.len());
    for field in FIELDS {
        r.read_exact(&mut len8)?;
        let mut bytes = vec![0u8; u64::from_le_bytes(len8) as usize];
        r.read_exact(&mut bytes)?;
        payloads.push(parse_f32s(&bytes, field)?);
    }
    Ok((assemble(&meta, payloads)?, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::rest_pose_sequence;

    fn sample_seq() -> (MotionSequence, SequenceMeta) {
        let mut seq = rest_pose_sequence(5, [0.25, 0.90625, -0.5], 30.0, "Lift the box.");
        seq.contact[[2, 0]] = true;
        seq.contact[[2, 1]] = true;
        seq.obj_transl[[2, 1]] = 0.125;
        let mut meta = SequenceMeta::for_sequence(&seq);
        meta.object_kind = "box".to_string();
        meta.object_dims = vec![0.25, 0.25, 0.25];
        meta.subject_id = 3;
        meta.verb = "lift".to_string();
        meta.tags = vec!["train".to_string()];
        (seq, meta)
    }

    #[test]
    fn directory_round_trip() {
        let (seq, meta) = sample_seq();
        let dir = tempfile::tempdir().unwrap();
        save_sequence_dir(dir.path(), &seq, &meta).unwrap();
        let (back, back_meta) = load_sequence_dir(dir.path()).unwrap();
        assert_eq!(back_meta, meta);
        assert_eq!(back.len(), seq.len());
        // values chosen representable in f32, so the round trip is exact
        assert_eq!(back.root_transl, seq.root_transl);
        assert_eq!(back.contact, seq.contact);
        assert_eq!(back.obj_transl, seq.obj_transl);
    }

    #[test]
    fn archive_round_trip_matches_directory() {
        let (seq, meta) = sample_seq();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seq.vihoi");
        save_sequence_archive(&path, &seq, &meta).unwrap();
        let (back, back_meta) = load_sequence_archive(&path).unwrap();
        assert_eq!(back_meta, meta);
        assert_eq!(back.root_transl, seq.root_transl);
        assert_eq!(back.joint_rot6d, seq.joint_rot6d);
    }

    #[test]
    fn writes_are_deterministic() {
        let (seq, meta) = sample_seq();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        save_sequence_dir(d1.path(), &seq, &meta).unwrap();
        save_sequence_dir(d2.path(), &seq, &meta).unwrap();
        for field in FIELDS {
            let a = std::fs::read(d1.path().join(format!("{field}.f32"))).unwrap();
            let b = std::fs::read(d2.path().join(format!("{field}.f32"))).unwrap();
            assert_eq!(a, b);
        }
        let a = std::fs::read(d1.path().join("meta.json")).unwrap();
        let b = std::fs::read(d2.path().join("meta.json")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_field_is_rejected() {
        let (seq, meta) = sample_seq();
        let dir = tempfile::tempdir().unwrap();
        save_sequence_dir(dir.path(), &seq, &meta).unwrap();
        let path = dir.path().join("obj_transl.f32");
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(load_sequence_dir(dir.path()).is_err());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.vihoi");
        std::fs::write(&path, b"NOTASEQ!rest").unwrap();
        assert!(matches!(load_sequence_archive(&path), Err(Error::Container(_))));
    }
}
