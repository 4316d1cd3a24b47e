//! Structure-preserving patch (SPP) neural video representation.
//!
//! A small encoder/decoder network is fit to a clip: every frame is embedded
//! by the encoder, and the decoder regenerates the frame as `r * r` strided
//! patch images conditioned on frame and patch indices. The trained decoder
//! and the frame embeddings, quantized and entropy coded, are the compressed
//! video.

pub mod codec;
pub mod error;
pub mod model;
pub mod objective;
pub mod spp;
pub mod toy1d;
pub mod trainer;
pub mod videoio;

pub use codec::{rd_point, Bitstream, Checkpoint, EntropyCoder, RdPoint};
pub use error::{Error, Result};
pub use model::{Decoder, Encoder, FrameEmbedding, SppConfig, SppModel, UpsampleMode};
pub use objective::{FreqMode, LossBreakdown};
pub use spp::{PatchLayout, PatchSet};
pub use trainer::{evaluate, train, train_with_progress, EpochRow, FrameMetrics, TrainConfig, TrainReport};
pub use videoio::{FrameSequence, SynthKind};

pub type Tensor32 = spp_diffcore::Tensor<f32>;
pub type Tensor64 = spp_diffcore::Tensor<f64>;
pub type PatchSet32 = PatchSet<f32>;
pub type PatchSet64 = PatchSet<f64>;
pub type FrameSequence32 = FrameSequence<f32>;
pub type FrameSequence64 = FrameSequence<f64>;
pub type FrameEmbedding32 = FrameEmbedding<f32>;
pub type FrameEmbedding64 = FrameEmbedding<f64>;
