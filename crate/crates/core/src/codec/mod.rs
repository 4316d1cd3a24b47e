//! Model serialization, quantization, entropy coding and rate-distortion
//! accounting.

mod bitstream;
mod checkpoint;
pub mod entropy;
mod quant;

use serde::{Deserialize, Serialize};

pub use bitstream::{Bitstream, BITSTREAM_MAGIC, BITSTREAM_VERSION};
pub use checkpoint::{embedding_name, is_decode_side, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use entropy::{decode_codes, empirical_entropy, encode_codes, EntropyCoder};
pub use quant::{quantize, quantize_tensor, QuantizedTensor};

use crate::error::{config, Result};
use crate::trainer::{evaluate, mean_metrics};
use crate::videoio::FrameSequence;

/// Bits per pixel of a coded clip of `frames` frames of `h x w`.
pub fn bpp(bytes: u64, frames: usize, h: usize, w: usize) -> f64 {
    8.0 * bytes as f64 / (frames * h * w) as f64
}

/// One rate-distortion measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub bits: u8,
    pub bytes: u64,
    pub bpp: f64,
    pub psnr: f64,
    pub ms_ssim: f64,
    /// Scalars stored in the bitstream.
    pub param_count: usize,
}

impl RdPoint {
    pub const CSV_HEADER: &'static str = "bpp,psnr,ms_ssim,bits,param_count,bytes";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.4},{:.6},{},{},{}",
            self.bpp, self.psnr, self.ms_ssim, self.bits, self.param_count, self.bytes
        )
    }
}

/// Codes `ckpt` at `bits` and evaluates the decoded (dequantized) model on
/// `data`.
pub fn rd_point(ckpt: &Checkpoint, data: &FrameSequence<f32>, bits: u8, coder: EntropyCoder) -> Result<RdPoint> {
    let stream = Bitstream::from_checkpoint(ckpt, bits, coder)?;
    let bytes = stream.to_bytes()?;
    let decoded = Bitstream::from_bytes(&bytes)?.to_checkpoint()?;
    let rows = evaluate(&decoded, data)?;
    let [_, h, w] = data.frame_shape();
    if rows.is_empty() {
        return config("no frames to evaluate");
    }
    let (psnr, ms_ssim) = mean_metrics(&rows);
    Ok(RdPoint {
        bits,
        bytes: bytes.len() as u64,
        bpp: bpp(bytes.len() as u64, data.len(), h, w),
        psnr,
        ms_ssim,
        param_count: stream.scalar_count(),
    })
}
