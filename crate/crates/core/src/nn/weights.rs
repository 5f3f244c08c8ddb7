//! NNW1 weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "NNW1" | u32 version (1) | u32 len + config name
//! u32 tensor count
//! per tensor: u16 len + name | u8 rank | rank × u64 dims | f32 data
//! ```

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, IoContext, Result};
use crate::nn::config::ModelConfig;
use crate::nn::model::Model;
use crate::rng::RngStream;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"NNW1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub config_name: String,
    pub tensors: Vec<(String, Tensor)>,
}

pub fn encode(file: &WeightFile) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(file.config_name.len() as u32).to_le_bytes());
    out.extend_from_slice(file.config_name.as_bytes());
    out.extend_from_slice(&(file.tensors.len() as u32).to_le_bytes());
    for (name, t) in &file.tensors {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Format(format!("tensor name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
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
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("name is not UTF-8".into()))
    }
}

pub fn decode(buf: &[u8]) -> Result<WeightFile> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic, not an NNW1 file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n = r.u32()? as usize;
    let config_name = r.string(n)?;
    let count = r.u32()?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let n = r.u16()? as usize;
        let name = r.string(n)?;
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|l| l.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("tensor `{name}` too large")))?;
        let data = r
            .take(len)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(&shape, data)
            .map_err(|e| Error::Format(format!("tensor `{name}`: {e}")))?;
        tensors.push((name, t));
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(WeightFile { config_name, tensors })
}

/// Writes every parameter of `m`, via a temporary file and an atomic rename.
pub fn save_weights(m: &Model, path: &Path) -> Result<()> {
    let file = WeightFile {
        config_name: m.config().name.clone(),
        tensors: m
            .params()
            .iter()
            .map(|p| (p.name().to_string(), p.tensor.clone()))
            .collect(),
    };
    let bytes = encode(&file)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut w = BufWriter::new(fs::File::create(&tmp).at(&tmp)?);
        w.write_all(&bytes).at(&tmp)?;
        w.flush().at(&tmp)?;
    }
    fs::rename(&tmp, path).at(path)
}

pub fn read_weights(path: &Path) -> Result<WeightFile> {
    let mut buf = Vec::new();
    fs::File::open(path).at(path)?.read_to_end(&mut buf).at(path)?;
    decode(&buf)
}

/// Builds a model for `config`, initialized from `rng`, then overwrites every
/// tensor present in the file. Tensors absent from the file keep their fresh
/// initialization, so a conv-base-only file yields a fresh head. Freeze flags
/// come from the config.
pub fn load_weights(path: &Path, config: ModelConfig, rng: &mut RngStream) -> Result<Model> {
    let file = read_weights(path)?;
    let mut m = Model::init(config, rng)?;
    apply(&mut m, file)?;
    Ok(m)
}

pub fn apply(m: &mut Model, file: WeightFile) -> Result<()> {
    for (name, t) in file.tensors {
        m.set_param(&name, t)?;
    }
    Ok(())
}
