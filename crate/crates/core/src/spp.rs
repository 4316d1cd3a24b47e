//! Structure-preserving patches.
//!
//! A frame `[C, H, W]` is rearranged into `P = r*r` patch images of shape
//! `[C, H/r, W/r]`. Patch `i = dy*r + dx` holds the pixels `(c, r*y+dy, r*x+dx)`,
//! so each patch is a strided, spatially coherent copy of the whole frame. The
//! contiguous-tile layout is kept alongside as the baseline it replaces.

use serde::{Deserialize, Serialize};
use spp_diffcore::{Scalar, Tensor};

use crate::error::{config, Result};

/// How a frame maps onto its `r*r` patches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatchLayout {
    /// Pixel-unshuffle style strided sampling.
    #[default]
    Interleaved,
    /// Contiguous `H/r x W/r` tiles in row-major order.
    Tiled,
}

impl PatchLayout {
    /// Frame coordinates of patch pixel `(y, x)` of patch `(dy, dx)`.
    #[inline]
    fn frame_coord(self, r: usize, ph: usize, pw: usize, dy: usize, dx: usize, y: usize, x: usize) -> (usize, usize) {
        match self {
            PatchLayout::Interleaved => (r * y + dy, r * x + dx),
            PatchLayout::Tiled => (dy * ph + y, dx * pw + x),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet<T> {
    r: usize,
    layout: PatchLayout,
    patches: Vec<Tensor<T>>,
    source_shape: [usize; 3],
}

impl<T: Scalar> PatchSet<T> {
    pub fn new(patches: Vec<Tensor<T>>, r: usize, layout: PatchLayout) -> Result<Self> {
        if r == 0 || patches.len() != r * r {
            return config(format!("patch set needs r*r = {} patches, got {}", r * r, patches.len()));
        }
        let shape = patches[0].shape().to_vec();
        if shape.len() != 3 {
            return config(format!("patches must be [C, h, w], got {shape:?}"));
        }
        if let Some(bad) = patches.iter().find(|p| p.shape() != shape.as_slice()) {
            return config(format!("inconsistent patch shapes {shape:?} and {:?}", bad.shape()));
        }
        Ok(Self {
            r,
            layout,
            source_shape: [shape[0], shape[1] * r, shape[2] * r],
            patches,
        })
    }

    /// Unstacks a `[P, C, h, w]` tensor.
    pub fn from_stacked(stacked: &Tensor<T>, r: usize, layout: PatchLayout) -> Result<Self> {
        let s = stacked.shape();
        if s.len() != 4 {
            return config(format!("stacked patches must be [P, C, h, w], got {s:?}"));
        }
        let block = s[1] * s[2] * s[3];
        let patches = stacked
            .data()
            .chunks(block)
            .map(|c| Tensor::new(&s[1..], c.to_vec()))
            .collect::<spp_diffcore::Result<Vec<_>>>()?;
        Self::new(patches, r, layout)
    }

    /// All patches as one `[P, C, h, w]` tensor.
    pub fn stacked(&self) -> Tensor<T> {
        let mut shape = vec![self.patches.len()];
        shape.extend_from_slice(self.patches[0].shape());
        let data = self.patches.iter().flat_map(|p| p.data().iter().copied()).collect();
        Tensor::new(&shape, data).expect("consistent patch shapes")
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn layout(&self) -> PatchLayout {
        self.layout
    }

    pub fn patches(&self) -> &[Tensor<T>] {
        &self.patches
    }

    pub fn source_shape(&self) -> [usize; 3] {
        self.source_shape
    }

    pub fn patch_shape(&self) -> [usize; 3] {
        let s = self.patches[0].shape();
        [s[0], s[1], s[2]]
    }

    /// Reorders patches; `order[k]` is the source index of new patch `k`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            patches: order.iter().map(|&i| self.patches[i].clone()).collect(),
            ..self.clone()
        }
    }
}

fn frame_dims<T: Scalar>(frame: &Tensor<T>, r: usize) -> Result<(usize, usize, usize)> {
    let s = frame.shape();
    if s.len() != 3 {
        return config(format!("frame must be [C, H, W], got {s:?}"));
    }
    if r == 0 || s[1] % r != 0 || s[2] % r != 0 {
        return config(format!("frame {}x{} not divisible by r = {r}", s[1], s[2]));
    }
    Ok((s[0], s[1], s[2]))
}

/// Splits a `[C, H, W]` frame into structure-preserving patches.
pub fn split<T: Scalar>(frame: &Tensor<T>, r: usize) -> Result<PatchSet<T>> {
    split_with(frame, r, PatchLayout::Interleaved)
}

pub fn split_with<T: Scalar>(frame: &Tensor<T>, r: usize, layout: PatchLayout) -> Result<PatchSet<T>> {
    let (c, h, w) = frame_dims(frame, r)?;
    let (ph, pw) = (h / r, w / r);
    let src = frame.data();
    let mut patches = Vec::with_capacity(r * r);
    for dy in 0..r {
        for dx in 0..r {
            let mut data = Vec::with_capacity(c * ph * pw);
            for ch in 0..c {
                for y in 0..ph {
                    for x in 0..pw {
                        let (fy, fx) = layout.frame_coord(r, ph, pw, dy, dx, y, x);
                        data.push(src[(ch * h + fy) * w + fx]);
                    }
                }
            }
            patches.push(Tensor::new(&[c, ph, pw], data)?);
        }
    }
    PatchSet::new(patches, r, layout)
}

/// Exact inverse of [`split_with`] for the set's layout.
pub fn merge<T: Scalar>(set: &PatchSet<T>) -> Result<Tensor<T>> {
    let [c, h, w] = set.source_shape;
    let [_, ph, pw] = set.patch_shape();
    let r = set.r;
    let mut out = vec![T::zero(); c * h * w];
    for (i, patch) in set.patches.iter().enumerate() {
        let (dy, dx) = (i / r, i % r);
        let src = patch.data();
        for ch in 0..c {
            for y in 0..ph {
                for x in 0..pw {
                    let (fy, fx) = set.layout.frame_coord(r, ph, pw, dy, dx, y, x);
                    out[(ch * h + fy) * w + fx] = src[(ch * ph + y) * pw + x];
                }
            }
        }
    }
    Ok(Tensor::new(&[c, h, w], out)?)
}

/// Default `eps` of [`patch_weights`].
pub const DEFAULT_WEIGHT_EPS: f64 = 1e-8;

/// Per-element threshold under which the pairwise patch distance sum counts
/// as degenerate and the guard substitutes uniform weights.
pub const GUARD_THRESHOLD_PER_ELEMENT: f64 = 1e-8;

/// Adaptive patch weights: the L1 distance of each patch to all the others,
/// normalized by the sum of those distances over all patches plus `eps`.
///
/// With `guard` set, a set whose pairwise distance sum is below
/// `GUARD_THRESHOLD_PER_ELEMENT * elements_per_patch` gets uniform `1/P`
/// weights instead of the all-zero result of the raw formula.
pub fn patch_weights<T: Scalar>(set: &PatchSet<T>, eps: f64, guard: bool) -> Result<Vec<f64>> {
    let p = set.len();
    if p < 2 {
        return config("patch weights need at least two patches");
    }
    if eps <= 0.0 || !eps.is_finite() {
        return config(format!("eps must be positive, got {eps}"));
    }
    let mut dist = vec![vec![0.0f64; p]; p];
    for i in 0..p {
        for j in i + 1..p {
            let d: f64 = set.patches[i]
                .data()
                .iter()
                .zip(set.patches[j].data())
                .map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs())
                .sum();
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let per_patch: Vec<f64> = dist.iter().map(|row| row.iter().sum()).collect();
    let total: f64 = per_patch.iter().sum();
    let elements = set.patches[0].numel() as f64;
    if guard && total < GUARD_THRESHOLD_PER_ELEMENT * elements {
        return Ok(vec![1.0 / p as f64; p]);
    }
    Ok(per_patch.iter().map(|s| s / (total + eps)).collect())
}
