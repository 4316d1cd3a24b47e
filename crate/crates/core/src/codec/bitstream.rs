use std::fs;
use std::path::Path;

use spp_diffcore::ParamStore;

use super::checkpoint::{is_decode_side, put_string, verify_crc, ByteReader, Checkpoint};
use super::entropy::{decode_codes, encode_codes, EntropyCoder};
use super::quant::{check_bits, quantize, QuantizedTensor};
use crate::error::{Error, Result};
use crate::model::SppConfig;

pub const BITSTREAM_MAGIC: &[u8; 8] = b"SPPBITS\0";
pub const BITSTREAM_VERSION: u32 = 1;

/// Quantized decoder weights and frame embeddings. The encoder is not part
/// of the representation and is left out.
#[derive(Clone, Debug, PartialEq)]
pub struct Bitstream {
    pub config: SppConfig,
    pub bits: u8,
    pub coder: EntropyCoder,
    pub tensors: Vec<QuantizedTensor>,
}

impl Bitstream {
    pub fn from_checkpoint(ckpt: &Checkpoint, bits: u8, coder: EntropyCoder) -> Result<Self> {
        check_bits(bits)?;
        Ok(Self {
            config: ckpt.config.clone(),
            bits,
            coder,
            tensors: quantize(&ckpt.params, bits, is_decode_side)?,
        })
    }

    /// Layout: magic, version u32, total size u64, coder u8, config JSON (u32 length
    /// prefix), record count u32, records (name, ndim u8, dims u32, scale
    /// f32, bits u8, payload length u32, payload), crc32 of all preceding
    /// bytes. Everything little-endian.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = BITSTREAM_MAGIC.to_vec();
        out.extend_from_slice(&BITSTREAM_VERSION.to_le_bytes());
        let size_at = out.len();
        out.extend_from_slice(&0u64.to_le_bytes());
        out.push(match self.coder {
            EntropyCoder::Range => 0,
            EntropyCoder::Huffman => 1,
        });
        let json = serde_json::to_vec(&self.config).expect("config serializes");
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for q in &self.tensors {
            put_string(&mut out, &q.name);
            out.push(q.shape.len() as u8);
            for &d in &q.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&q.scale.to_le_bytes());
            out.push(q.bits);
            let payload = encode_codes(&q.codes, q.bits, self.coder)?;
            out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        let total = (out.len() + 4) as u64;
        out[size_at..size_at + 8].copy_from_slice(&total.to_le_bytes());
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const WHAT: &str = "bitstream";
        if !bytes.starts_with(BITSTREAM_MAGIC) {
            return Err(Error::format(WHAT, "bad magic"));
        }
        let body = verify_crc(WHAT, bytes)?;
        let mut r = ByteReader::new(WHAT, &body[BITSTREAM_MAGIC.len()..]);
        let version = r.u32()?;
        if version != BITSTREAM_VERSION {
            return Err(Error::format(WHAT, format!("unsupported version {version}")));
        }
        let total = r.u64()?;
        if total != bytes.len() as u64 {
            return Err(Error::format(WHAT, format!("header says {total} bytes, file has {}", bytes.len())));
        }
        let coder = match r.u8()? {
            0 => EntropyCoder::Range,
            1 => EntropyCoder::Huffman,
            c => return Err(Error::format(WHAT, format!("unknown coder {c}"))),
        };
        let json_len = r.u32()? as usize;
        let config: SppConfig =
            serde_json::from_slice(r.bytes(json_len)?).map_err(|e| Error::format(WHAT, e.to_string()))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        let mut bits = 0;
        for _ in 0..count {
            let name = r.string()?;
            let ndim = r.u8()? as usize;
            let shape = (0..ndim).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
            let scale = r.f32()?;
            let tensor_bits = r.u8()?;
            let len = r.u32()? as usize;
            let payload = r.bytes(len)?;
            let (payload_bits, codes) = decode_codes(payload)?;
            if payload_bits != tensor_bits || codes.len() != shape.iter().product::<usize>() {
                return Err(Error::format(WHAT, format!("record {name} disagrees with its payload")));
            }
            bits = tensor_bits;
            tensors.push(QuantizedTensor {
                name,
                shape,
                scale,
                bits: tensor_bits,
                codes,
            });
        }
        if r.remaining() != 0 {
            return Err(Error::format(WHAT, "trailing bytes"));
        }
        Ok(Self {
            config,
            bits,
            coder,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<u64> {
        let bytes = self.to_bytes()?;
        fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(bytes.len() as u64)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Dequantized parameters as a decode-only checkpoint.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut params = ParamStore::new();
        for q in &self.tensors {
            params.add(q.name.clone(), q.dequantize()?);
        }
        Ok(Checkpoint {
            config: self.config.clone(),
            train: None,
            params,
        })
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|q| q.codes.len()).sum()
    }
}
