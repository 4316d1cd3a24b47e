//! The representation network: a ConvNeXt-style frame encoder producing a
//! compact embedding per frame, and a decoder that turns the embedding plus
//! frame and patch indices into structure-preserving patches.

mod decoder;
mod encoder;
pub(crate) mod layers;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use spp_diffcore::{ParamStore, Scalar, Tape, Tensor};

pub use decoder::Decoder;
pub use encoder::Encoder;

use crate::error::{config, Error, Result};
use crate::objective::FreqMode;
use crate::spp::{self, PatchLayout, PatchSet};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpsampleMode {
    #[default]
    Nearest,
    PixelShuffle,
}

/// Model and loss configuration. Everything needed to rebuild parameter
/// shapes is in here, so it travels inside checkpoints and bitstreams.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct SppConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Number of frames in the clip; frame indices are normalized by it.
    pub frames: usize,
    /// Rearrangement factor; the patch count is `r * r`.
    pub r: usize,
    pub layout: PatchLayout,
    /// Decoder upsampling factor per block.
    pub strides: Vec<usize>,
    pub embed_channels: usize,
    pub encoder_widths: Vec<usize>,
    /// Channels of the first decoder block.
    pub base_width: usize,
    /// Each later block has `1/width_decay` as many channels as the previous.
    pub width_decay: f64,
    pub min_width: usize,
    /// First decoder block that is also conditioned on the patch index.
    pub cond_split: usize,
    pub pe_levels: usize,
    pub pe_base: f64,
    pub index_dim: usize,
    pub upsample: UpsampleMode,
    pub alpha: f64,
    pub beta: f64,
    pub weight_eps: f64,
    pub weight_guard: bool,
    pub freq_mode: FreqMode,
    pub max_msssim_scales: usize,
}

impl Default for SppConfig {
    fn default() -> Self {
        Self {
            channels: 3,
            height: 32,
            width: 64,
            frames: 8,
            r: 2,
            layout: PatchLayout::Interleaved,
            strides: vec![2, 2, 2],
            embed_channels: 16,
            encoder_widths: vec![16, 24, 32],
            base_width: 32,
            width_decay: 1.5,
            min_width: 8,
            cond_split: 2,
            pe_levels: 40,
            pe_base: 1.25,
            index_dim: 32,
            upsample: UpsampleMode::Nearest,
            alpha: 42.0,
            beta: 18.0,
            weight_eps: spp::DEFAULT_WEIGHT_EPS,
            weight_guard: true,
            freq_mode: FreqMode::Complex,
            max_msssim_scales: 5,
        }
    }
}

impl SppConfig {
    /// Default configuration for a clip of `frames` frames of `height x width`,
    /// with patch conditioning in the last decoder block only.
    pub fn for_clip(frames: usize, height: usize, width: usize, strides: Vec<usize>) -> Self {
        let cond_split = strides.len().saturating_sub(1);
        Self {
            frames,
            height,
            width,
            strides,
            cond_split,
            ..Self::default()
        }
    }

    pub fn patch_count(&self) -> usize {
        self.r * self.r
    }

    pub fn patch_height(&self) -> usize {
        self.height / self.r
    }

    pub fn patch_width(&self) -> usize {
        self.width / self.r
    }

    fn stride_product(&self) -> usize {
        self.strides.iter().product()
    }

    pub fn embed_height(&self) -> usize {
        self.patch_height() / self.stride_product()
    }

    pub fn embed_width(&self) -> usize {
        self.patch_width() / self.stride_product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.height == 0 || self.width == 0 || self.frames == 0 {
            return config("channels, height, width and frames must be positive");
        }
        if self.r == 0 || self.height % self.r != 0 || self.width % self.r != 0 {
            return config(format!("frame {}x{} not divisible by r = {}", self.height, self.width, self.r));
        }
        if self.strides.is_empty() || self.strides.contains(&0) {
            return config("stride list must be non-empty with positive entries");
        }
        let prod = self.stride_product();
        if self.patch_height() % prod != 0 || self.patch_width() % prod != 0 || self.embed_height() == 0 {
            return config(format!(
                "patch size {}x{} not divisible by stride product {prod}",
                self.patch_height(),
                self.patch_width()
            ));
        }
        if self.cond_split > self.strides.len() {
            return config(format!("cond-split {} exceeds {} decoder blocks", self.cond_split, self.strides.len()));
        }
        if self.embed_channels == 0 || self.base_width == 0 || self.min_width == 0 || self.index_dim == 0 {
            return config("channel widths must be positive");
        }
        if self.encoder_widths.is_empty() || self.encoder_widths.contains(&0) {
            return config("encoder widths must be non-empty and positive");
        }
        if self.width_decay < 1.0 {
            return config("width decay must be at least 1");
        }
        if self.pe_levels == 0 || self.pe_base <= 0.0 {
            return config("positional encoding needs at least one level and a positive base");
        }
        if self.alpha <= 0.0 || self.beta <= 0.0 {
            return config(format!("loss weights must be positive, got alpha {} beta {}", self.alpha, self.beta));
        }
        if self.weight_eps <= 0.0 {
            return config("patch weight eps must be positive");
        }
        if !(1..=5).contains(&self.max_msssim_scales) {
            return config("MS-SSIM scales must be in 1..=5");
        }
        Ok(())
    }

    /// Channels of each decoder block.
    pub fn decoder_widths(&self) -> Vec<usize> {
        (0..self.strides.len())
            .map(|n| {
                let w = (self.base_width as f64 / self.width_decay.powi(n as i32)).round() as usize;
                w.max(self.min_width)
            })
            .collect()
    }

    /// Per-stage encoder strides whose product maps the frame onto the
    /// embedding grid. Prime factors of the total go, largest first, to the
    /// stage with the smallest running product.
    pub fn encoder_strides(&self) -> Vec<usize> {
        let stages = self.encoder_widths.len();
        let mut total = self.height / self.embed_height();
        let mut primes = Vec::new();
        let mut f = 2;
        while total > 1 {
            while total % f == 0 {
                primes.push(f);
                total /= f;
            }
            f += 1;
        }
        primes.sort_unstable_by(|a, b| b.cmp(a));
        let mut out = vec![1; stages];
        for prime in primes {
            let k = (0..stages).min_by_key(|&k| (out[k], k)).expect("at least one stage");
            out[k] *= prime;
        }
        out
    }

    /// Same configuration with every decoder channel count scaled by `factor`.
    pub fn with_width_factor(&self, factor: f64) -> Self {
        Self {
            base_width: ((self.base_width as f64 * factor).round() as usize).max(1),
            min_width: ((self.min_width as f64 * factor).round() as usize).max(1),
            ..self.clone()
        }
    }

    /// Exact number of trainable scalars (encoder and decoder).
    pub fn param_count(&self) -> Result<usize> {
        Ok(SppModel::init::<f32>(self, 0)?.1.num_scalars())
    }

    /// Trainable scalars needed at decode time (decoder only).
    pub fn decoder_param_count(&self) -> Result<usize> {
        Ok(init_decoder::<f32>(self, 0)?.1.num_scalars())
    }
}

/// Frequency encoding of `idx / count`: `[sin(π b^l u), cos(π b^l u)]` for
/// `l = 0..levels`, interleaved.
pub fn raw_index_encoding(idx: usize, count: usize, levels: usize, base: f64) -> Result<Vec<f64>> {
    if idx >= count {
        return Err(Error::Usage(format!("index {idx} out of range 0..{count}")));
    }
    let u = idx as f64 / count as f64;
    Ok((0..levels)
        .flat_map(|l| {
            let a = std::f64::consts::PI * base.powi(l as i32) * u;
            [a.sin(), a.cos()]
        })
        .collect())
}

/// Embedding `z_t` of one frame, `[E, eh, ew]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameEmbedding<T> {
    pub t: usize,
    pub z: Tensor<T>,
}

/// Encoder and decoder sharing one parameter store.
#[derive(Clone, Debug)]
pub struct SppModel {
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl SppModel {
    /// Builds the network and its freshly initialized parameters.
    pub fn init<T: Scalar>(cfg: &SppConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(cfg, &mut store, &mut rng);
        let decoder = Decoder::new(cfg, &mut store, &mut rng);
        Ok((Self { encoder, decoder }, store))
    }

    pub fn config(&self) -> &SppConfig {
        self.decoder.config()
    }

    /// Embeds frame `t` (`[C, H, W]`) without recording gradients.
    pub fn encode<T: Scalar>(&self, store: &ParamStore<T>, frame: &Tensor<T>, t: usize) -> Result<FrameEmbedding<T>> {
        let cfg = self.config();
        if frame.shape() != [cfg.channels, cfg.height, cfg.width] {
            return config(format!(
                "frame shape {:?}, expected [{}, {}, {}]",
                frame.shape(),
                cfg.channels,
                cfg.height,
                cfg.width
            ));
        }
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let z = self.encoder.forward(&p, tape.constant(frame.clone()))?;
        let s = z.shape();
        Ok(FrameEmbedding {
            t,
            z: (*z.value()).clone().reshape(&s[1..])?,
        })
    }
}

/// Decoder alone, as needed to play back a coded representation.
pub fn init_decoder<T: Scalar>(cfg: &SppConfig, seed: u64) -> Result<(Decoder, ParamStore<T>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let decoder = Decoder::new(cfg, &mut store, &mut rng);
    Ok((decoder, store))
}

impl Decoder {
    fn embedding_var<'t, T: Scalar>(&self, tape: &'t Tape<T>, emb: &FrameEmbedding<T>) -> Result<spp_diffcore::Var<'t, T>> {
        let mut shape = vec![1];
        shape.extend_from_slice(emb.z.shape());
        Ok(tape.constant(emb.z.clone().reshape(&shape)?))
    }

    /// Decodes every patch of a frame (trunk shared) and returns them as a set.
    pub fn decode_patch_set<T: Scalar>(&self, store: &ParamStore<T>, emb: &FrameEmbedding<T>) -> Result<PatchSet<T>> {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let out = self.decode_all(&p, self.embedding_var(&tape, emb)?, emb.t)?;
        let cfg = self.config();
        PatchSet::from_stacked(&out.value(), cfg.r, cfg.layout)
    }

    /// Full-resolution reconstruction `[C, H, W]` of a frame.
    pub fn decode_frame<T: Scalar>(&self, store: &ParamStore<T>, emb: &FrameEmbedding<T>) -> Result<Tensor<T>> {
        spp::merge(&self.decode_patch_set(store, emb)?)
    }

    /// Patch `i` of a frame decoded independently, `[C, H/r, W/r]`.
    pub fn decode_single_patch<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        emb: &FrameEmbedding<T>,
        i: usize,
    ) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let out = self.decode_patch(&p, self.embedding_var(&tape, emb)?, emb.t, i)?;
        let s = out.shape();
        Ok((*out.value()).clone().reshape(&s[1..])?)
    }
}
