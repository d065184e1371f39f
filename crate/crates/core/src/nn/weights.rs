//! Binary weights file.
//!
//! ```text
//! "OTFSNN01"  u32 tensor_count
//! per tensor: u16 name_len, name (utf-8), u8 rank, rank x u32 dims, f32 data
//! ```
//! All integers and floats are little-endian. Model metadata is stored as
//! rank-1 tensors named `meta.*` holding a `u64` split into two 32-bit
//! halves (low first) reinterpreted as `f32` bit patterns.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::layers::TensorKind;
use super::network::Network;
use super::optim::AdamWConfig;
use super::spec::{build_sync_model, Head};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 8] = b"OTFSNN01";

/// Everything needed to rebuild and describe a trained network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta {
    pub m: usize,
    pub n: usize,
    pub head: Head,
    pub seed: u64,
    pub optimizer: AdamWConfig,
    pub batch_size: usize,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

fn meta_u64(name: &str, v: u64) -> NamedArray {
    NamedArray {
        name: format!("meta.{name}"),
        dims: vec![2],
        data: vec![f32::from_bits(v as u32), f32::from_bits((v >> 32) as u32)],
    }
}

impl ModelMeta {
    fn to_arrays(&self) -> Vec<NamedArray> {
        vec![
            meta_u64("M", self.m as u64),
            meta_u64("N", self.n as u64),
            meta_u64("head", self.head.code()),
            meta_u64("seed", self.seed),
            meta_u64("batch_size", self.batch_size as u64),
            meta_u64("epochs", self.epochs as u64),
            meta_u64("lr", self.optimizer.lr.to_bits()),
            meta_u64("beta1", self.optimizer.beta1.to_bits()),
            meta_u64("beta2", self.optimizer.beta2.to_bits()),
            meta_u64("eps", self.optimizer.eps.to_bits()),
            meta_u64("weight_decay", self.optimizer.weight_decay.to_bits()),
        ]
    }

    fn from_arrays(map: &BTreeMap<String, NamedArray>) -> Result<Self> {
        let get = |name: &str| -> Result<u64> {
            let a = map
                .get(&format!("meta.{name}"))
                .ok_or_else(|| Error::Format(format!("missing meta.{name}")))?;
            if a.data.len() != 2 {
                return Err(Error::Format(format!("meta.{name} must hold two words")));
            }
            Ok(a.data[0].to_bits() as u64 | ((a.data[1].to_bits() as u64) << 32))
        };
        let size = |name: &str| -> Result<usize> {
            usize::try_from(get(name)?).map_err(|_| Error::Format(format!("meta.{name} overflows")))
        };
        Ok(ModelMeta {
            m: size("M")?,
            n: size("N")?,
            head: Head::from_code(get("head")?)?,
            seed: get("seed")?,
            batch_size: size("batch_size")?,
            epochs: size("epochs")?,
            optimizer: AdamWConfig {
                lr: f64::from_bits(get("lr")?),
                beta1: f64::from_bits(get("beta1")?),
                beta2: f64::from_bits(get("beta2")?),
                eps: f64::from_bits(get("eps")?),
                weight_decay: f64::from_bits(get("weight_decay")?),
            },
        })
    }
}

pub fn write_arrays<W: Write>(w: &mut W, arrays: &[NamedArray]) -> Result<()> {
    w.write_all(WEIGHTS_MAGIC)?;
    w.write_u32::<LittleEndian>(arrays.len() as u32)?;
    for a in arrays {
        let name = a.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Format(format!("tensor name too long: {}", a.name)))?;
        let rank =
            u8::try_from(a.dims.len()).map_err(|_| Error::Format("rank too large".into()))?;
        w.write_u16::<LittleEndian>(name_len)?;
        w.write_all(name)?;
        w.write_u8(rank)?;
        for &d in &a.dims {
            let d = u32::try_from(d).map_err(|_| Error::Format("dimension too large".into()))?;
            w.write_u32::<LittleEndian>(d)?;
        }
        for &v in &a.data {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

fn eof_as_format(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("weights file ends early".into())
    } else {
        Error::Io(e)
    }
}

pub fn read_arrays<R: Read>(r: &mut R) -> Result<Vec<NamedArray>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(eof_as_format)?;
    if &magic != WEIGHTS_MAGIC {
        return Err(Error::Format("not a weights file (bad magic)".into()));
    }
    let count = r.read_u32::<LittleEndian>().map_err(eof_as_format)?;
    let mut out = Vec::with_capacity(count.min(1024) as usize);
    for _ in 0..count {
        let len = r.read_u16::<LittleEndian>().map_err(eof_as_format)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(eof_as_format)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("tensor name is not utf-8".into()))?;
        let rank = r.read_u8().map_err(eof_as_format)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.read_u32::<LittleEndian>().map_err(eof_as_format)? as usize);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("{name}: size overflows")))?;
        let mut data = vec![0f32; numel];
        r.read_f32_into::<LittleEndian>(&mut data)
            .map_err(eof_as_format)?;
        out.push(NamedArray { name, dims, data });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after last tensor".into()));
    }
    Ok(out)
}

/// Serializes a network and its metadata to bytes.
pub fn model_to_bytes(net: &Network<f32>, meta: &ModelMeta) -> Result<Vec<u8>> {
    let mut arrays = meta.to_arrays();
    net.visit_params(&mut |name, _, t| {
        arrays.push(NamedArray {
            name: name.to_string(),
            dims: t.shape().to_vec(),
            data: t.data().to_vec(),
        })
    });
    let mut buf = Vec::new();
    write_arrays(&mut buf, &arrays)?;
    Ok(buf)
}

pub fn model_from_reader<R: Read>(r: &mut R) -> Result<(Network<f32>, ModelMeta)> {
    let arrays = read_arrays(r)?;
    let mut map = BTreeMap::new();
    for a in arrays {
        let name = a.name.clone();
        if map.insert(name.clone(), a).is_some() {
            return Err(Error::Format(format!("duplicate tensor {name}")));
        }
    }
    let meta = ModelMeta::from_arrays(&map)?;
    let spec = build_sync_model(meta.m, meta.n, meta.head)
        .map_err(|e| Error::Format(format!("metadata describes no valid model: {e}")))?;
    let mut net = Network::<f32>::new(spec, 0)?;
    let mut problem = None;
    let mut used = 0;
    net.visit_params_mut(&mut |name, kind, t| {
        if problem.is_some() {
            return;
        }
        match map.get(name) {
            None => problem = Some(format!("missing tensor {name}")),
            Some(a) if a.dims != t.shape() => {
                problem = Some(format!(
                    "{name}: shape {:?}, expected {:?}",
                    a.dims,
                    t.shape()
                ))
            }
            Some(a) => {
                *t = match kind {
                    TensorKind::Param => Tensor::param(t.shape(), a.data.clone()),
                    TensorKind::Buffer => {
                        Tensor::from_vec(t.shape(), a.data.clone()).expect("checked")
                    }
                };
                used += 1;
            }
        }
    });
    if let Some(p) = problem {
        return Err(Error::Format(p));
    }
    let extra = map.len() - used - meta.to_arrays().len();
    if extra != 0 {
        return Err(Error::Format(format!("{extra} unexpected tensors")));
    }
    Ok((net, meta))
}

pub fn save_model(path: &Path, net: &Network<f32>, meta: &ModelMeta) -> Result<()> {
    let bytes = model_to_bytes(net, meta)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(Network<f32>, ModelMeta)> {
    model_from_reader(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> ModelMeta {
        ModelMeta {
            m: 32,
            n: 8,
            head: Head::Fine,
            seed: u64::MAX - 5,
            optimizer: AdamWConfig::default(),
            batch_size: 64,
            epochs: 30,
        }
    }

    fn net() -> Network<f32> {
        Network::new(build_sync_model(32, 8, Head::Fine).unwrap(), 4).unwrap()
    }

    fn flat(n: &Network<f32>) -> Vec<f32> {
        let mut v = Vec::new();
        n.visit_params(&mut |_, _, t| v.extend_from_slice(t.data()));
        v
    }

    #[test]
    fn round_trip_preserves_everything() {
        let net = net();
        let bytes = model_to_bytes(&net, &meta()).unwrap();
        assert_eq!(&bytes[..8], WEIGHTS_MAGIC);
        let (back, m) = model_from_reader(&mut bytes.as_slice()).unwrap();
        assert_eq!(m, meta());
        assert_eq!(flat(&back), flat(&net));
        assert_eq!(model_to_bytes(&back, &m).unwrap(), bytes);
    }

    #[test]
    fn damaged_files_are_format_errors() {
        let bytes = model_to_bytes(&net(), &meta()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            model_from_reader(&mut bad.as_slice()),
            Err(Error::Format(_))
        ));
        let short = &bytes[..bytes.len() - 3];
        assert!(matches!(
            model_from_reader(&mut &short[..]),
            Err(Error::Format(_))
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            model_from_reader(&mut long.as_slice()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn wrong_shapes_rejected() {
        let mut m = meta();
        m.head = Head::Coarse;
        let bytes = model_to_bytes(&net(), &m).unwrap();
        assert!(matches!(
            model_from_reader(&mut bytes.as_slice()),
            Err(Error::Format(_))
        ));
    }
}
