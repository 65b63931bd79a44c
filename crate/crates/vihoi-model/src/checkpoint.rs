//! Single-file checkpoint archive: magic, schema version, a JSON manifest,
//! then named little-endian tensors. Writes go through a temp file and a
//! rename so a crash never leaves a half-written checkpoint behind.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use candle_core::{DType, Device, Tensor};

use crate::{Error, Result};

pub const CKPT_MAGIC: &[u8; 10] = b"VIHOICKPT\0";
pub const CKPT_VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

#[derive(Debug)]
pub struct Checkpoint {
    pub manifest: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::BadCheckpoint(msg.into())
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(Error::Io)
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(Error::Io)
}

fn put_bytes(w: &mut impl Write, b: &[u8]) -> Result<()> {
    put_u32(w, b.len() as u32)?;
    w.write_all(b).map_err(Error::Io)
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| bad("truncated checkpoint"))?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| bad("truncated checkpoint"))?;
    Ok(u64::from_le_bytes(b))
}

fn get_bytes(r: &mut impl Read) -> Result<Vec<u8>> {
    let n = get_u32(r)? as usize;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|_| bad("truncated checkpoint"))?;
    Ok(buf)
}

fn write_tensor(w: &mut impl Write, name: &str, t: &Tensor) -> Result<()> {
    put_bytes(w, name.as_bytes())?;
    let dtype = match t.dtype() {
        DType::F32 => DTYPE_F32,
        DType::F64 => DTYPE_F64,
        other => return Err(bad(format!("unsupported tensor dtype {other:?} for {name}"))),
    };
    w.write_all(&[dtype]).map_err(Error::Io)?;
    let dims = t.dims();
    put_u32(w, dims.len() as u32)?;
    for d in dims {
        put_u32(w, *d as u32)?;
    }
    let flat = t.flatten_all()?;
    let data: Vec<u8> = match t.dtype() {
        DType::F32 => flat.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        _ => flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
    };
    put_u64(w, data.len() as u64)?;
    w.write_all(&data).map_err(Error::Io)
}

fn read_tensor(r: &mut impl Read) -> Result<(String, Tensor)> {
    let name = String::from_utf8(get_bytes(r)?).map_err(|e| bad(format!("tensor name: {e}")))?;
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind).map_err(|_| bad("truncated checkpoint"))?;
    let rank = get_u32(r)? as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(get_u32(r)? as usize);
    }
    let n_bytes = get_u64(r)? as usize;
    let mut data = vec![0u8; n_bytes];
    r.read_exact(&mut data).map_err(|_| bad("truncated checkpoint"))?;
    let numel: usize = dims.iter().product();
    let tensor = match kind[0] {
        DTYPE_F32 => {
            if n_bytes != numel * 4 {
                return Err(bad(format!("{name}: {n_bytes} bytes for {numel} f32 values")));
            }
            let vals: Vec<f32> = data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Tensor::from_vec(vals, dims, &Device::Cpu)?
        }
        DTYPE_F64 => {
            if n_bytes != numel * 8 {
                return Err(bad(format!("{name}: {n_bytes} bytes for {numel} f64 values")));
            }
            let vals: Vec<f64> = data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            Tensor::from_vec(vals, dims, &Device::Cpu)?
        }
        other => return Err(bad(format!("unknown dtype tag {other}"))),
    };
    Ok((name, tensor))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    manifest: &serde_json::Value,
    tensors: &BTreeMap<String, Tensor>,
) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    put_u32(&mut buf, CKPT_VERSION)?;
    put_bytes(&mut buf, serde_json::to_string(manifest)?.as_bytes())?;
    put_u32(&mut buf, tensors.len() as u32)?;
    for (name, t) in tensors {
        write_tensor(&mut buf, name, t)?;
    }
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    std::fs::write(&tmp, &buf).map_err(Error::Io)?;
    std::fs::rename(&tmp, path).map_err(Error::Io)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let data = std::fs::read(path.as_ref()).map_err(Error::Io)?;
    let mut r = data.as_slice();
    let mut magic = [0u8; 10];
    r.read_exact(&mut magic).map_err(|_| bad("file too short for magic"))?;
    if &magic != CKPT_MAGIC {
        return Err(bad("not a checkpoint archive"));
    }
    let version = get_u32(&mut r)?;
    if version != CKPT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let manifest: serde_json::Value = serde_json::from_slice(&get_bytes(&mut r)?)?;
    let count = get_u32(&mut r)? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let (name, t) = read_tensor(&mut r)?;
        tensors.insert(name, t);
    }
    Ok(Checkpoint { manifest, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> (serde_json::Value, BTreeMap<String, Tensor>) {
        let manifest = json!({
            "schema_version": 1,
            "kind": "test",
            "step": 42,
            "seeds": {"train": 7},
        });
        let mut tensors = BTreeMap::new();
        tensors.insert(
            "a.w".to_string(),
            Tensor::from_vec(vec![1.5f32, -2.25, 3.0, 0.125], (2, 2), &Device::Cpu).unwrap(),
        );
        tensors.insert(
            "b.v".to_string(),
            Tensor::from_vec(vec![0.1f64, 0.2, 0.3], 3, &Device::Cpu).unwrap(),
        );
        (manifest, tensors)
    }

    #[test]
    fn round_trip_is_bitwise_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let (manifest, tensors) = sample();
        save_checkpoint(&path, &manifest, &tensors).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.manifest, manifest);
        assert_eq!(back.tensors.len(), 2);
        assert_eq!(
            back.tensors["a.w"].flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            vec![1.5, -2.25, 3.0, 0.125]
        );
        assert_eq!(back.tensors["a.w"].dims(), &[2, 2]);
        assert_eq!(
            back.tensors["b.v"].to_vec1::<f64>().unwrap(),
            vec![0.1, 0.2, 0.3]
        );
        // No temp file left behind.
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn bad_magic_and_truncation_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTACKPT__000000").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::BadCheckpoint(_))));

        let good = dir.path().join("good.ckpt");
        let (manifest, tensors) = sample();
        save_checkpoint(&good, &manifest, &tensors).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        let cut = dir.path().join("cut.ckpt");
        std::fs::write(&cut, &bytes[..bytes.len() - 7]).unwrap();
        assert!(matches!(load_checkpoint(&cut), Err(Error::BadCheckpoint(_))));
    }

    #[test]
    fn future_versions_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v9.ckpt");
        let (manifest, tensors) = sample();
        save_checkpoint(&path, &manifest, &tensors).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[10..14].copy_from_slice(&9u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path) {
            Err(Error::BadCheckpoint(msg)) => assert!(msg.contains("version"), "{msg}"),
            other => panic!("expected version rejection, got {other:?}"),
        }
    }
}
