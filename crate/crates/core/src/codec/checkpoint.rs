use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use spp_diffcore::{ParamStore, Scalar, Tensor};

use crate::error::{Error, Result};
use crate::model::{init_decoder, Decoder, FrameEmbedding, SppConfig};
use crate::trainer::TrainConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SPPCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Name of the stored embedding of frame `t`.
pub fn embedding_name(t: usize) -> String {
    format!("embed.{t:04}")
}

/// Little-endian cursor used by both file formats.
pub(crate) struct ByteReader<'a> {
    what: &'static str,
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(what: &'static str, data: &'a [u8]) -> Self {
        Self { what, data, pos: 0 }
    }

    pub(crate) fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let Some(end) = end else {
            return Err(Error::format(self.what, format!("truncated at byte {}", self.pos)));
        };
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.bytes(n)?.to_vec()).map_err(|_| Error::format(self.what, "name is not UTF-8"))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }
}

pub(crate) fn put_string(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Splits off and verifies a trailing crc32 of everything before it.
pub(crate) fn verify_crc<'a>(what: &'static str, bytes: &'a [u8]) -> Result<&'a [u8]> {
    if bytes.len() < 4 {
        return Err(Error::format(what, "too short"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(Error::Checksum(what));
    }
    Ok(body)
}

#[derive(Serialize, Deserialize)]
struct ConfigRecord {
    model: SppConfig,
    train: Option<TrainConfig>,
}

/// Trained parameters (encoder, decoder and frame embeddings) plus the
/// configuration that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: SppConfig,
    pub train: Option<TrainConfig>,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    /// Layout: magic, version u32, config JSON (u32 length prefix), tensor
    /// count u32, tensors (name, ndim u8, dims u32, f32 data), crc32 of all
    /// preceding bytes. Everything little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = CHECKPOINT_MAGIC.to_vec();
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let record = ConfigRecord {
            model: self.config.clone(),
            train: self.train.clone(),
        };
        let json = serde_json::to_vec(&record).expect("config serializes");
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            put_string(&mut out, name);
            out.push(t.ndim() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const WHAT: &str = "checkpoint";
        if !bytes.starts_with(CHECKPOINT_MAGIC) {
            return Err(Error::format(WHAT, "bad magic"));
        }
        let body = verify_crc(WHAT, bytes)?;
        let mut r = ByteReader::new(WHAT, &body[CHECKPOINT_MAGIC.len()..]);
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(WHAT, format!("unsupported version {version}")));
        }
        let json_len = r.u32()? as usize;
        let record: ConfigRecord =
            serde_json::from_slice(r.bytes(json_len)?).map_err(|e| Error::format(WHAT, e.to_string()))?;
        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name = r.string()?;
            let ndim = r.u8()? as usize;
            let shape = (0..ndim).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            if n * 4 > r.remaining() {
                return Err(Error::format(WHAT, format!("tensor {name} overruns the file")));
            }
            let data = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
            if params.find(&name).is_some() {
                return Err(Error::format(WHAT, format!("duplicate tensor {name}")));
            }
            params.add(name, Tensor::new(&shape, data)?);
        }
        if r.remaining() != 0 {
            return Err(Error::format(WHAT, "trailing bytes"));
        }
        Ok(Self {
            config: record.model,
            train: record.train,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn embedding<T: Scalar>(&self, t: usize) -> Result<FrameEmbedding<T>> {
        let name = embedding_name(t);
        let id = self
            .params
            .find(&name)
            .ok_or_else(|| Error::Config(format!("checkpoint has no embedding for frame {t}")))?;
        Ok(FrameEmbedding {
            t,
            z: self.params.get(id).cast(),
        })
    }

    /// The decoder with parameters loaded from the checkpoint.
    pub fn decoder<T: Scalar>(&self) -> Result<(Decoder, ParamStore<T>)> {
        let (decoder, mut store) = init_decoder::<T>(&self.config, 0)?;
        let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let id = self
                .params
                .find(&name)
                .ok_or_else(|| Error::Config(format!("checkpoint is missing parameter {name}")))?;
            store.set(&name, self.params.get(id).cast())?;
        }
        Ok((decoder, store))
    }

    /// Number of stored scalars needed to decode: decoder plus embeddings.
    pub fn decode_scalar_count(&self) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| is_decode_side(n))
            .map(|(_, t)| t.numel())
            .sum()
    }
}

/// True for tensors that must ship with the representation (everything but
/// the encoder).
pub fn is_decode_side(name: &str) -> bool {
    !name.starts_with("encoder.")
}
