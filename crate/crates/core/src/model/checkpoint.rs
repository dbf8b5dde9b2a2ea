//! Binary checkpoint: the magic line `attnseg-v1\n`, the model configuration as
//! length-prefixed JSON, then every parameter as `(name, shape, f64 data)`.
//! All integers are little-endian `u64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use super::config::ModelConfig;
use super::network::Model;
use crate::error::{Error, Result};

pub const MAGIC: &[u8] = b"attnseg-v1\n";

pub fn encode(model: &Model) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    let config = serde_json::to_vec(model.config())?;
    buf.extend_from_slice(&(config.len() as u64).to_le_bytes());
    buf.extend_from_slice(&config);
    let params = model.params();
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for (_, name, tensor) in params.iter() {
        buf.extend_from_slice(&(name.len() as u64).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(tensor.ndim() as u64).to_le_bytes());
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in tensor.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

/// Writes to a sibling temp file and renames it into place.
pub fn save(model: &Model, path: &Path) -> Result<()> {
    let bytes = encode(model)?;
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize)
    }
}

pub type Tensors = Vec<(String, ArrayD<f64>)>;

pub fn decode(bytes: &[u8]) -> Result<(ModelConfig, Tensors)> {
    if !bytes.starts_with(MAGIC) {
        return Err(Error::Checkpoint("missing attnseg-v1 magic".into()));
    }
    let mut r = Reader {
        buf: bytes,
        pos: MAGIC.len(),
    };
    let n = r.u64()?;
    let config: ModelConfig = serde_json::from_slice(r.take(n)?)?;
    let count = r.u64()?;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let n = r.u64()?;
        let name = String::from_utf8(r.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("parameter name is not utf-8".into()))?;
        let ndim = r.u64()?;
        let shape = (0..ndim).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Checkpoint("bad shape".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = ArrayD::from_shape_vec(IxDyn(&shape), data).expect("length matches shape");
        tensors.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok((config, tensors))
}

pub fn read_tensors(path: &Path) -> Result<Tensors> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map(|(_, t)| t)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let (config, tensors) = decode(bytes)?;
    let mut model = Model::new(&config)?;
    let expected = model.params().len();
    if tensors.len() != expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} tensors, configuration expects {expected}",
            tensors.len()
        )));
    }
    for (name, t) in tensors {
        model.params_mut().assign(&name, t)?;
    }
    Ok(model)
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_parameters_and_config() {
        let config = ModelConfig {
            input_size: 32,
            encoder_channels: vec![4, 8, 8],
            seed: 4,
            ..Default::default()
        };
        let mut model = Model::new(&config).unwrap();
        model.set_alpha(-0.125);
        let bytes = encode(&model).unwrap();
        assert!(bytes.starts_with(b"attnseg-v1"));
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back.config(), model.config());
        assert_eq!(back.params(), model.params());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        assert!(from_bytes(b"nope").is_err());
        let model = Model::new(&ModelConfig {
            input_size: 32,
            encoder_channels: vec![4, 8, 8],
            ..Default::default()
        })
        .unwrap();
        let bytes = encode(&model).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
