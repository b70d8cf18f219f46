//! Versioned binary checkpoints.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! magic     : 4 bytes  = "NPMX"
//! version   : u32      = 1
//! config    : u32 byte-length, then UTF-8 "key=value\n" lines
//! n_tensors : u32
//! manifest  : per tensor —
//!               name   : u32 byte-length + UTF-8 bytes
//!               dtype  : u8 (0 = f64, 1 = f32; must match the build)
//!               ndim   : u32, then ndim × u64 dims
//!               offset : u64 byte offset into the payload
//! payload   : u64 byte-length, then the concatenated tensor values
//!             as little-endian scalars
//! ```
//!
//! Model parameters are stored under their parameter names; callers may add
//! extra named tensors (e.g. per-channel dataset statistics) so a checkpoint
//! is self-contained for inference.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{Real, PRECISION};

const MAGIC: &[u8; 4] = b"NPMX";
const VERSION: u32 = 1;

fn dtype_tag() -> u8 {
    if PRECISION == "f32" {
        1
    } else {
        0
    }
}

pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<Real>,
}

pub struct Checkpoint {
    pub config: Vec<(String, String)>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

pub fn save(
    path: &Path,
    config: &[(String, String)],
    tensors: &[(&str, &[usize], &[Real])],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let mut cfg_text = String::new();
    for (k, v) in config {
        if k.contains('=') || k.contains('\n') || v.contains('\n') {
            return Err(Error::contract(format!("checkpoint: invalid config key/value '{k}'")));
        }
        cfg_text.push_str(k);
        cfg_text.push('=');
        cfg_text.push_str(v);
        cfg_text.push('\n');
    }
    w.write_all(&(cfg_text.len() as u32).to_le_bytes())?;
    w.write_all(cfg_text.as_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    let scalar = std::mem::size_of::<Real>();
    let mut offset: u64 = 0;
    for (name, shape, data) in tensors {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::contract(format!(
                "checkpoint: tensor '{name}' shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[dtype_tag()])?;
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in *shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&offset.to_le_bytes())?;
        offset += (data.len() * scalar) as u64;
    }
    w.write_all(&offset.to_le_bytes())?;
    for (_, _, data) in tensors {
        for v in *data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Saves model parameters plus any extra named tensors.
pub fn save_model(path: &Path, model: &Model, extras: &[NamedTensor]) -> Result<()> {
    let config = model.config_lines();
    let mut tensors: Vec<(&str, &[usize], &[Real])> = model
        .params()
        .into_iter()
        .map(|p| (p.name.as_str(), p.shape.as_slice(), p.data.as_slice()))
        .collect();
    for t in extras {
        tensors.push((t.name.as_str(), t.shape.as_slice(), t.data.as_slice()));
    }
    save(path, &config, &tensors)
}

struct Cursor<R> {
    inner: R,
}

impl<R: std::io::Read> Cursor<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::ingest(None, "checkpoint: truncated file"))?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.bytes(n)?)
            .map_err(|_| Error::ingest(None, "checkpoint: invalid UTF-8"))
    }
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut r = Cursor { inner: BufReader::new(File::open(path)?) };
    if r.bytes(4)? != MAGIC {
        return Err(Error::ingest(None, "checkpoint: bad magic (not a checkpoint file)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::ingest(
            None,
            format!("checkpoint: unsupported version {version} (expected {VERSION})"),
        ));
    }
    let cfg_text = r.string()?;
    let mut config = Vec::new();
    for line in cfg_text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::ingest(None, format!("checkpoint: malformed config line '{line}'")))?;
        config.push((k.to_string(), v.to_string()));
    }
    let n_tensors = r.u32()? as usize;
    let mut manifest = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name = r.string()?;
        let dtype = r.u8()?;
        if dtype != dtype_tag() {
            return Err(Error::ingest(
                None,
                format!("checkpoint: tensor '{name}' stored with a different precision than this build ({PRECISION})"),
            ));
        }
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let offset = r.u64()?;
        manifest.push((name, shape, offset));
    }
    let payload_len = r.u64()? as usize;
    let payload = r.bytes(payload_len)?;
    let scalar = std::mem::size_of::<Real>();
    let mut tensors = Vec::with_capacity(n_tensors);
    for (name, shape, offset) in manifest {
        let n: usize = shape.iter().product();
        let start = offset as usize;
        let end = start + n * scalar;
        if end > payload.len() {
            return Err(Error::ingest(
                None,
                format!("checkpoint: tensor '{name}' extends past the payload"),
            ));
        }
        let data = payload[start..end]
            .chunks_exact(scalar)
            .map(|c| Real::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(NamedTensor { name, shape, data });
    }
    Ok(Checkpoint { config, tensors })
}

/// Copies checkpoint tensors into the model's parameters, matched by name.
/// Every model parameter must be present with a matching shape.
pub fn load_into_model(model: &mut Model, ckpt: &Checkpoint) -> Result<()> {
    for p in model.params_mut() {
        let t = ckpt.get(&p.name).ok_or_else(|| {
            Error::state(format!("checkpoint is missing parameter '{}'", p.name))
        })?;
        if t.shape != p.shape {
            return Err(Error::state(format!(
                "checkpoint parameter '{}' has shape {:?}, model expects {:?}",
                p.name, t.shape, p.shape
            )));
        }
        p.data.copy_from_slice(&t.data);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_variant, ModelConfig};
    use crate::tensor::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let cfg = ModelConfig { seed: 11, ..ModelConfig::base() };
        let model = build_variant(cfg).unwrap();
        let extras = vec![NamedTensor {
            name: "data.mean".into(),
            shape: vec![7],
            data: vec![0.5; 7],
        }];
        save_model(&path, &model, &extras).unwrap();

        let ckpt = load(&path).unwrap();
        assert_eq!(ckpt.config_value("d_model"), Some("64"));
        assert_eq!(ckpt.get("data.mean").unwrap().data, vec![0.5; 7]);

        let mut other = build_variant(ModelConfig { seed: 99, ..cfg }).unwrap();
        load_into_model(&mut other, &ckpt).unwrap();
        for (a, b) in model.params().iter().zip(other.params().iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.data, b.data);
        }

        // bit-exact forward after reload
        let g = Graph::new();
        let data: Vec<_> = (0..7 * 96).map(|i| (i as f64 * 0.13).sin()).collect();
        let x = g.leaf(data.clone(), &[1, 7, 96]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y1 = model.forward(&g, &x, false, &mut rng).unwrap().to_vec();
        let g2 = Graph::new();
        let x2 = g2.leaf(data, &[1, 7, 96]).unwrap();
        let y2 = other.forward(&g2, &x2, false, &mut rng).unwrap().to_vec();
        assert_eq!(y1, y2);
    }

    #[test]
    fn rejects_garbage_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(load(&path).is_err());

        let good = dir.path().join("small.ckpt");
        let cfg = ModelConfig { d_model: 32, ..ModelConfig::base() };
        let small = build_variant(cfg).unwrap();
        save_model(&good, &small, &[]).unwrap();
        let ckpt = load(&good).unwrap();
        let mut big = build_variant(ModelConfig::base()).unwrap();
        assert!(load_into_model(&mut big, &ckpt).is_err());
    }
}
