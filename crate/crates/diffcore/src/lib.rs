//! Minimal deterministic numerical core: dense tensors, a dynamic tape for
//! reverse-mode differentiation, convolution and resampling primitives, and a
//! radix-2 FFT. Everything is generic over [`Scalar`] (`f32` or `f64`).

mod error;
pub mod fft;
pub mod gradcheck;
pub mod ops;
mod optim;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use error::{Error, Result};
pub use fft::{fft2d, pad_to_pow2, ComplexSpectrum};
pub use ops::Conv2dParams;
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
