use rand::Rng;
use spp_diffcore::{ParamStore, Scalar, Tensor, Var};

use super::layers::{Conv, Linear};
use super::{raw_index_encoding, SppConfig, UpsampleMode};
use crate::error::{Error, Result};

/// Positional encoding followed by a two-layer GELU MLP.
#[derive(Clone, Debug)]
struct IndexEmbedding {
    fc1: Linear,
    fc2: Linear,
    levels: usize,
    base: f64,
}

impl IndexEmbedding {
    fn new<T: Scalar, R: Rng + ?Sized>(cfg: &SppConfig, store: &mut ParamStore<T>, name: &str, rng: &mut R) -> Self {
        let pe_dim = 2 * cfg.pe_levels;
        Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), pe_dim, cfg.index_dim, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), cfg.index_dim, cfg.index_dim, rng),
            levels: cfg.pe_levels,
            base: cfg.pe_base,
        }
    }

    /// Embeds each index in `indices` (all `< count`) into a row of `[n, D]`.
    fn forward<'t, T: Scalar>(
        &self,
        p: &[Var<'t, T>],
        indices: &[usize],
        count: usize,
    ) -> Result<Var<'t, T>> {
        let mut rows = Vec::with_capacity(indices.len() * 2 * self.levels);
        for &idx in indices {
            rows.extend(raw_index_encoding(idx, count, self.levels, self.base)?.into_iter().map(T::of));
        }
        let tape = p[self.fc1.weight.0].tape();
        let x = tape.constant(Tensor::new(&[indices.len(), 2 * self.levels], rows)?);
        let h = self.fc1.forward(p, x)?.gelu()?;
        Ok(self.fc2.forward(p, h)?.gelu()?)
    }
}

/// Upsample, 3x3 conv, GELU, index-driven affine modulation, then a residual
/// 3x3 conv.
#[derive(Clone, Debug)]
struct DecoderBlock {
    stride: usize,
    upsample: UpsampleMode,
    conv: Conv,
    residual: Conv,
    scale_head: Linear,
    shift_head: Linear,
}

impl DecoderBlock {
    fn forward<'t, T: Scalar>(&self, p: &[Var<'t, T>], x: Var<'t, T>, cond: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = self.stride;
        let h = match self.upsample {
            UpsampleMode::Nearest => self.conv.forward(p, x.upsample_nearest(s, s)?)?,
            UpsampleMode::PixelShuffle => self.conv.forward(p, x)?.pixel_shuffle(s)?,
        };
        let h = h.gelu()?;
        let scale = self.scale_head.forward(p, cond)?.add_scalar(T::one())?;
        let shift = self.shift_head.forward(p, cond)?;
        let h = h.channel_affine(scale, shift)?;
        let r = self.residual.forward(p, h.gelu()?)?;
        Ok(h.add(r)?)
    }
}

/// Global-to-local decoder: blocks before `cond_split` are modulated by the
/// frame index only and run once per frame; later blocks also see the patch
/// index and run once per patch.
#[derive(Clone, Debug)]
pub struct Decoder {
    cfg: SppConfig,
    time_embed: IndexEmbedding,
    patch_embed: IndexEmbedding,
    blocks: Vec<DecoderBlock>,
    head: Conv,
}

impl Decoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(cfg: &SppConfig, store: &mut ParamStore<T>, rng: &mut R) -> Self {
        let time_embed = IndexEmbedding::new(cfg, store, "decoder.time_embed", rng);
        let patch_embed = IndexEmbedding::new(cfg, store, "decoder.patch_embed", rng);
        let widths = cfg.decoder_widths();
        let mut c_in = cfg.embed_channels;
        let mut blocks = Vec::with_capacity(widths.len());
        for (n, (&stride, &c)) in cfg.strides.iter().zip(&widths).enumerate() {
            let name = format!("decoder.block{n}");
            let conv_out = match cfg.upsample {
                UpsampleMode::Nearest => c,
                UpsampleMode::PixelShuffle => c * stride * stride,
            };
            let conv = Conv::same(store, &format!("{name}.conv"), (c_in, conv_out), 3, rng);
            let residual = Conv::same(store, &format!("{name}.residual"), (c, c), 3, rng);
            let cond_dim = if n < cfg.cond_split {
                cfg.index_dim
            } else {
                2 * cfg.index_dim
            };
            let scale_head = Linear::new(store, &format!("{name}.scale"), cond_dim, c, rng);
            let shift_head = Linear::new(store, &format!("{name}.shift"), cond_dim, c, rng);
            blocks.push(DecoderBlock {
                stride,
                upsample: cfg.upsample,
                conv,
                residual,
                scale_head,
                shift_head,
            });
            c_in = c;
        }
        let head = Conv::same(store, "decoder.head", (c_in, cfg.channels), 3, rng);
        Self {
            cfg: cfg.clone(),
            time_embed,
            patch_embed,
            blocks,
            head,
        }
    }

    pub fn config(&self) -> &SppConfig {
        &self.cfg
    }

    fn check_indices(&self, t: usize, patches: &[usize]) -> Result<()> {
        if t >= self.cfg.frames {
            return Err(Error::Usage(format!("frame index {t} out of range 0..{}", self.cfg.frames)));
        }
        if let Some(&i) = patches.iter().find(|&&i| i >= self.cfg.patch_count()) {
            return Err(Error::Usage(format!(
                "patch index {i} out of range 0..{}",
                self.cfg.patch_count()
            )));
        }
        Ok(())
    }

    /// Trainable embedding of frame index `t`, shape `[1, D]`.
    pub fn time_embedding<'t, T: Scalar>(&self, p: &[Var<'t, T>], t: usize) -> Result<Var<'t, T>> {
        self.time_embed.forward(p, &[t], self.cfg.frames)
    }

    /// Trainable embeddings of patch indices, shape `[n, D]`.
    pub fn patch_embedding<'t, T: Scalar>(&self, p: &[Var<'t, T>], indices: &[usize]) -> Result<Var<'t, T>> {
        self.patch_embed.forward(p, indices, self.cfg.patch_count())
    }

    /// Decodes the given patches of frame `t` from embedding `z` (`[1, E, eh, ew]`).
    /// The frame-conditioned trunk runs once; the patch-conditioned tail and
    /// head run batched over `patches`. Returns `[patches.len(), C, H/r, W/r]`.
    pub fn decode_patches<'t, T: Scalar>(
        &self,
        p: &[Var<'t, T>],
        z: Var<'t, T>,
        t: usize,
        patches: &[usize],
    ) -> Result<Var<'t, T>> {
        self.check_indices(t, patches)?;
        let expected = [1, self.cfg.embed_channels, self.cfg.embed_height(), self.cfg.embed_width()];
        if z.shape() != expected {
            return Err(Error::Config(format!("embedding shape {:?}, expected {expected:?}", z.shape())));
        }
        let split = self.cfg.cond_split;
        let e_t = self.time_embedding(p, t)?;
        let mut h = z;
        for block in &self.blocks[..split] {
            h = block.forward(p, h, e_t)?;
        }
        let n = patches.len();
        let mut h = if n == 1 { h } else { h.broadcast_leading(n)? };
        if split < self.blocks.len() {
            let e_t = if n == 1 { e_t } else { e_t.broadcast_leading(n)? };
            let cond = Var::concat(&[e_t, self.patch_embedding(p, patches)?], 1)?;
            for block in &self.blocks[split..] {
                h = block.forward(p, h, cond)?;
            }
        }
        Ok(self.head.forward(p, h)?.sigmoid()?)
    }

    /// All `P` patches of frame `t`, `[P, C, H/r, W/r]`.
    pub fn decode_all<'t, T: Scalar>(&self, p: &[Var<'t, T>], z: Var<'t, T>, t: usize) -> Result<Var<'t, T>> {
        let all: Vec<usize> = (0..self.cfg.patch_count()).collect();
        self.decode_patches(p, z, t, &all)
    }

    /// A single patch decoded on its own (no trunk sharing), `[1, C, H/r, W/r]`.
    pub fn decode_patch<'t, T: Scalar>(
        &self,
        p: &[Var<'t, T>],
        z: Var<'t, T>,
        t: usize,
        i: usize,
    ) -> Result<Var<'t, T>> {
        self.decode_patches(p, z, t, &[i])
    }
}
