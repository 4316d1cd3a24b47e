use spp_diffcore::{ParamStore, Tensor};

use crate::error::{Error, Result};

/// A tensor quantized with one symmetric uniform scale.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub scale: f32,
    pub bits: u8,
    pub codes: Vec<i32>,
}

impl QuantizedTensor {
    /// `code * scale` per element.
    pub fn dequantize(&self) -> Result<Tensor<f32>> {
        Ok(Tensor::new(&self.shape, self.codes.iter().map(|&c| c as f32 * self.scale).collect())?)
    }
}

pub fn check_bits(bits: u8) -> Result<()> {
    if !(2..=16).contains(&bits) {
        return Err(Error::Config(format!("bit width must be in 2..=16, got {bits}")));
    }
    Ok(())
}

/// Symmetric per-tensor quantization: `scale = max|w| / (2^(bits-1) - 1)`,
/// `code = round(w / scale)`. An all-zero tensor gets scale 0 and zero codes.
pub fn quantize_tensor(name: &str, w: &Tensor<f32>, bits: u8) -> Result<QuantizedTensor> {
    check_bits(bits)?;
    let qmax = ((1i32 << (bits - 1)) - 1) as f32;
    let max_abs = w.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let scale = (max_abs as f64 / qmax as f64) as f32;
    let codes = if scale == 0.0 {
        vec![0; w.numel()]
    } else {
        w.data().iter().map(|&v| (v / scale).round().clamp(-qmax, qmax) as i32).collect()
    };
    Ok(QuantizedTensor {
        name: name.to_string(),
        shape: w.shape().to_vec(),
        scale,
        bits,
        codes,
    })
}

/// Quantizes every tensor of `params` whose name passes `keep`.
pub fn quantize(params: &ParamStore<f32>, bits: u8, keep: impl Fn(&str) -> bool) -> Result<Vec<QuantizedTensor>> {
    params
        .iter()
        .filter(|(name, _)| keep(name))
        .map(|(name, t)| quantize_tensor(name, t, bits))
        .collect()
}
