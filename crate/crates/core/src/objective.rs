//! Training losses and quality metrics.
//!
//! The metric functions (`psnr`, `ms_ssim`, ...) work on plain tensors in f64.
//! The loss functions build differentiable graphs on a tape and are batched
//! over the leading axis, one entry per patch.

use serde::{Deserialize, Serialize};
use spp_diffcore::{Scalar, Tape, Tensor, Var};

use crate::error::{config, Error, Result};
use crate::model::SppConfig;
use crate::spp::{self, PatchSet};

/// How the frequency loss compares two spectra.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FreqMode {
    /// Mean absolute difference over real and imaginary planes.
    #[default]
    Complex,
    /// Mean absolute difference of magnitudes.
    Magnitude,
}

/// Per-scale exponents of five-scale MS-SSIM.
pub const MSSSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// Floor applied to per-scale similarity terms before exponentiation in the
/// loss path.
const SSIM_FLOOR: f64 = 1e-6;
const MAGNITUDE_EPS: f64 = 1e-12;

fn same_shape<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::Usage(format!("shape mismatch {:?} vs {:?}", x.shape(), y.shape())));
    }
    Ok(())
}

pub fn mse<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    same_shape(x, y)?;
    let s: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum();
    Ok(s / x.numel() as f64)
}

/// Peak signal-to-noise ratio in dB for signals in `[0, 1]`; `f64::INFINITY`
/// when the inputs are identical.
pub fn psnr<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    let m = mse(x, y)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * m.log10())
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Canonical scale exponents truncated to `scales` and renormalized.
pub fn msssim_weights(scales: usize) -> Vec<f64> {
    let w = &MSSSIM_WEIGHTS[..scales];
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// Window size and scale count used for an `h x w` image: the standard
/// 11-tap window when it fits (otherwise the largest odd size that does),
/// and as many scales up to `max_scales` as the image supports.
pub fn ssim_geometry(h: usize, w: usize, max_scales: usize) -> (usize, usize) {
    let m = h.min(w).max(1);
    let window = if m >= SSIM_WINDOW { SSIM_WINDOW } else { m - (1 - m % 2) };
    let mut scales = 1;
    while scales < max_scales && m >= (1 << scales) * window {
        scales += 1;
    }
    (window.max(1), scales)
}

/// Valid-mode separable filtering of an `h x w` plane.
fn blur_valid(plane: &[f64], h: usize, w: usize, g: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = g.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|j| g[j] * plane[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|j| g[j] * rows[(y + j) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

fn pool2(plane: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        for x in 0..ow {
            let (a, b) = (2 * y * w + 2 * x, (2 * y + 1) * w + 2 * x);
            out.push(0.25 * (plane[a] + plane[a + 1] + plane[b] + plane[b + 1]));
        }
    }
    (out, oh, ow)
}

/// Mean SSIM and mean contrast-structure term of one plane pair.
fn ssim_plane(x: &[f64], y: &[f64], h: usize, w: usize, g: &[f64]) -> (f64, f64) {
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let (mx, oh, ow) = blur_valid(x, h, w, g);
    let (my, _, _) = blur_valid(y, h, w, g);
    let (exx, _, _) = blur_valid(&xx, h, w, g);
    let (eyy, _, _) = blur_valid(&yy, h, w, g);
    let (exy, _, _) = blur_valid(&xy, h, w, g);
    let n = (oh * ow) as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for k in 0..oh * ow {
        let (a, b) = (mx[k], my[k]);
        let vx = exx[k] - a * a;
        let vy = eyy[k] - b * b;
        let cov = exy[k] - a * b;
        let l = (2.0 * a * b + SSIM_C1) / (a * a + b * b + SSIM_C1);
        let c = (2.0 * cov + SSIM_C2) / (vx + vy + SSIM_C2);
        ssim += l * c;
        cs += c;
    }
    (ssim / n, cs / n)
}

fn ms_ssim_with<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, window: usize, scales: usize) -> Result<f64> {
    let s = x.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let g = gaussian_window(window, SSIM_SIGMA);
    let weights = msssim_weights(scales);
    let mut total = 0.0;
    for ch in 0..c {
        let mut px: Vec<f64> = x.data()[ch * h * w..][..h * w].iter().map(|v| v.as_f64()).collect();
        let mut py: Vec<f64> = y.data()[ch * h * w..][..h * w].iter().map(|v| v.as_f64()).collect();
        let (mut ph, mut pw) = (h, w);
        let mut value = 1.0;
        for (k, &wk) in weights.iter().enumerate() {
            let (ssim, cs) = ssim_plane(&px, &py, ph, pw, &g);
            if k + 1 == scales {
                value *= ssim.max(0.0).powf(wk);
            } else {
                value *= cs.max(0.0).powf(wk);
                let (nx, nh, nw) = pool2(&px, ph, pw);
                py = pool2(&py, ph, pw).0;
                px = nx;
                ph = nh;
                pw = nw;
            }
        }
        total += value;
    }
    Ok(total / c as f64)
}

fn check_image<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<()> {
    same_shape(x, y)?;
    if x.ndim() != 3 {
        return Err(Error::Usage(format!("expected [C, H, W], got {:?}", x.shape())));
    }
    Ok(())
}

/// Multi-scale SSIM of two `[C, H, W]` images in `[0, 1]` with the standard
/// 11-tap Gaussian window, averaged over channels.
pub fn ms_ssim<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, scales: usize) -> Result<f64> {
    check_image(x, y)?;
    if !(1..=5).contains(&scales) {
        return config(format!("MS-SSIM scales must be in 1..=5, got {scales}"));
    }
    let m = x.shape()[1].min(x.shape()[2]);
    if m < (1 << (scales - 1)) * SSIM_WINDOW {
        return config(format!(
            "image {}x{} too small for {scales}-scale MS-SSIM",
            x.shape()[1],
            x.shape()[2]
        ));
    }
    ms_ssim_with(x, y, SSIM_WINDOW, scales)
}

/// MS-SSIM with window and scale count chosen by [`ssim_geometry`].
pub fn ms_ssim_auto<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, max_scales: usize) -> Result<f64> {
    check_image(x, y)?;
    let (window, scales) = ssim_geometry(x.shape()[1], x.shape()[2], max_scales);
    ms_ssim_with(x, y, window, scales)
}

fn check_pair<T: Scalar>(pred: Var<'_, T>, gt: Var<'_, T>, ndim: usize) -> Result<Vec<usize>> {
    let s = pred.shape();
    if s != gt.shape() || s.len() != ndim {
        return Err(Error::Usage(format!("loss inputs {:?} and {:?}, expected {ndim} equal axes", s, gt.shape())));
    }
    Ok(s)
}

/// Mean absolute error per leading-axis entry, `[N]`.
pub fn l1_per_sample<'t, T: Scalar>(pred: Var<'t, T>, gt: Var<'t, T>) -> Result<Var<'t, T>> {
    let s = check_pair(pred, gt, 4)?;
    let n = s[0];
    Ok(pred.sub(gt)?.abs()?.reshape(&[n, s[1..].iter().product()])?.mean_axis(1)?)
}

fn blur<'t, T: Scalar>(x: Var<'t, T>, g: &[f64]) -> Result<Var<'t, T>> {
    let tape = x.tape();
    let k = g.len();
    let taps: Vec<T> = g.iter().map(|&v| T::of(v)).collect();
    let kr = tape.constant(Tensor::new(&[1, 1, 1, k], taps.clone())?);
    let kc = tape.constant(Tensor::new(&[1, 1, k, 1], taps)?);
    Ok(x.conv2d(kr, 1, 0)?.conv2d(kc, 1, 0)?)
}

fn spatial_mean<'t, T: Scalar>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let s = x.shape();
    Ok(x.reshape(&[s[0], s[2] * s[3]])?.mean_axis(1)?)
}

/// Differentiable MS-SSIM per leading-axis entry of `[N, C, h, w]`, averaged
/// over channels, `[N]`. Window and scales follow [`ssim_geometry`].
pub fn ms_ssim_per_sample<'t, T: Scalar>(pred: Var<'t, T>, gt: Var<'t, T>, max_scales: usize) -> Result<Var<'t, T>> {
    let s = check_pair(pred, gt, 4)?;
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (window, scales) = ssim_geometry(h, w, max_scales);
    let g = gaussian_window(window, SSIM_SIGMA);
    let weights = msssim_weights(scales);
    let (c1, c2) = (T::of(SSIM_C1), T::of(SSIM_C2));
    let mut x = pred.reshape(&[n * c, 1, h, w])?;
    let mut y = gt.reshape(&[n * c, 1, h, w])?;
    let mut value: Option<Var<'t, T>> = None;
    for (k, &wk) in weights.iter().enumerate() {
        let mx = blur(x, &g)?;
        let my = blur(y, &g)?;
        let mx2 = mx.sqr()?;
        let my2 = my.sqr()?;
        let mxy = mx.mul(my)?;
        let vx = blur(x.sqr()?, &g)?.sub(mx2)?;
        let vy = blur(y.sqr()?, &g)?.sub(my2)?;
        let cov = blur(x.mul(y)?, &g)?.sub(mxy)?;
        let cs_map = cov.mul_scalar(T::of(2.0))?.add_scalar(c2)?.div(vx.add(vy)?.add_scalar(c2)?)?;
        let term = if k + 1 == scales {
            let l_map = mxy.mul_scalar(T::of(2.0))?.add_scalar(c1)?.div(mx2.add(my2)?.add_scalar(c1)?)?;
            spatial_mean(l_map.mul(cs_map)?)?
        } else {
            spatial_mean(cs_map)?
        };
        let factor = term.clamp_min(T::of(SSIM_FLOOR))?.powf(T::of(wk))?;
        value = Some(match value {
            Some(v) => v.mul(factor)?,
            None => factor,
        });
        if k + 1 < scales {
            x = x.avg_pool2()?;
            y = y.avg_pool2()?;
        }
    }
    Ok(value.expect("at least one scale").reshape(&[n, c])?.mean_axis(1)?)
}

/// Frequency loss per leading-axis entry of `[N, C, h, w]`, `[N]`. Spatial
/// extents are zero-padded to powers of two and each channel is transformed
/// separately.
pub fn freq_per_sample<'t, T: Scalar>(pred: Var<'t, T>, gt: Var<'t, T>, mode: FreqMode) -> Result<Var<'t, T>> {
    let s = check_pair(pred, gt, 4)?;
    let n = s[0];
    let (ph, pw) = (s[2].next_power_of_two(), s[3].next_power_of_two());
    let (pred, gt) = if (ph, pw) == (s[2], s[3]) {
        (pred, gt)
    } else {
        (pred.pad_bottom_right(ph, pw)?, gt.pad_bottom_right(ph, pw)?)
    };
    let m = s[1] * ph * pw;
    let fp = pred.fft2()?.reshape(&[2, n, m])?;
    let fg = gt.fft2()?.reshape(&[2, n, m])?;
    match mode {
        FreqMode::Complex => Ok(fp.sub(fg)?.abs()?.sum_axis(0)?.mean_axis(1)?.mul_scalar(T::of(0.5))?),
        FreqMode::Magnitude => {
            let mag = |f: Var<'t, T>| -> Result<Var<'t, T>> {
                Ok(f.sqr()?.sum_axis(0)?.add_scalar(T::of(MAGNITUDE_EPS))?.sqrt()?)
            };
            Ok(mag(fp)?.sub(mag(fg)?)?.abs()?.mean_axis(1)?)
        }
    }
}

/// Frequency loss of two `[C, H, W]` images as a scalar.
pub fn freq_loss<'t, T: Scalar>(x: Var<'t, T>, y: Var<'t, T>, mode: FreqMode) -> Result<Var<'t, T>> {
    let s = check_pair(x, y, 3)?;
    let shape = [1, s[0], s[1], s[2]];
    Ok(freq_per_sample(x.reshape(&shape)?, y.reshape(&shape)?, mode)?.sum()?)
}

/// Components of the composite patch loss of one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// `Σ w_i α L1_i`
    pub l1_term: f64,
    /// `Σ w_i β (1 - MS-SSIM_i)`
    pub msssim_term: f64,
    /// `Σ freq_i`
    pub freq_term: f64,
    pub weights: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub l1: Vec<f64>,
    pub msssim: Vec<f64>,
    pub freq: Vec<f64>,
}

/// Weights of the ground-truth patches; a lone patch gets weight 1.
pub fn loss_weights<T: Scalar>(gt: &PatchSet<T>, cfg: &SppConfig) -> Result<Vec<f64>> {
    if gt.len() == 1 {
        return Ok(vec![1.0]);
    }
    spp::patch_weights(gt, cfg.weight_eps, cfg.weight_guard)
}

fn values<T: Scalar>(v: Var<'_, T>) -> Vec<f64> {
    v.value().data().iter().map(|x| x.as_f64()).collect()
}

/// Composite loss `Σ_i [w_i (α L1_i + β (1 - MS-SSIM_i)) + freq_i]` of
/// predicted patches `[P, C, h, w]` against ground truth. Weights come from
/// the ground truth and are constants of the graph.
pub fn composite_loss_var<'t, T: Scalar>(
    gt: &PatchSet<T>,
    pred: Var<'t, T>,
    cfg: &SppConfig,
) -> Result<(Var<'t, T>, LossBreakdown)> {
    let tape = pred.tape();
    let target = tape.constant(gt.stacked());
    if pred.shape() != target.shape() {
        return Err(Error::Usage(format!(
            "predicted patches {:?} do not match ground truth {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let weights = loss_weights(gt, cfg)?;
    let p = weights.len();
    let wt = tape.constant(Tensor::new(&[p], weights.iter().map(|&w| T::of(w)).collect())?);
    let l1 = l1_per_sample(pred, target)?;
    let ms = ms_ssim_per_sample(pred, target, cfg.max_msssim_scales)?;
    let fr = freq_per_sample(pred, target, cfg.freq_mode)?;
    let l1_term = l1.mul(wt)?.sum()?.mul_scalar(T::of(cfg.alpha))?;
    let ms_term = ms.neg()?.add_scalar(T::one())?.mul(wt)?.sum()?.mul_scalar(T::of(cfg.beta))?;
    let fr_term = fr.sum()?;
    let total = l1_term.add(ms_term)?.add(fr_term)?;
    let breakdown = LossBreakdown {
        total: total.item().as_f64(),
        l1_term: l1_term.item().as_f64(),
        msssim_term: ms_term.item().as_f64(),
        freq_term: fr_term.item().as_f64(),
        weights,
        alpha: cfg.alpha,
        beta: cfg.beta,
        l1: values(l1),
        msssim: values(ms),
        freq: values(fr),
    };
    Ok((total, breakdown))
}

/// Composite loss between two patch sets, without gradients.
pub fn composite_loss<T: Scalar>(gt: &PatchSet<T>, pred: &PatchSet<T>, cfg: &SppConfig) -> Result<LossBreakdown> {
    if gt.r() != pred.r() || gt.layout() != pred.layout() || gt.patch_shape() != pred.patch_shape() {
        return Err(Error::Usage("patch sets differ in layout or shape".into()));
    }
    let tape = Tape::new();
    Ok(composite_loss_var(gt, tape.constant(pred.stacked()), cfg)?.1)
}

/// Mean over the line of squared second differences taken across it, for
/// the gap between rows (or columns) `b - 1` and `b`.
fn line_energy(d: &[f64], (c, h, w): (usize, usize, usize), b: usize, rows: bool) -> f64 {
    let at = |ch: usize, i: usize, j: usize| {
        if rows {
            d[(ch * h + i) * w + j]
        } else {
            d[(ch * h + j) * w + i]
        }
    };
    let (len, span) = if rows { (h, w) } else { (w, h) };
    debug_assert!(b >= 2 && b + 1 < len);
    let mut acc = 0.0;
    for ch in 0..c {
        for j in 0..span {
            for k in [b - 1, b] {
                let d2 = at(ch, k + 1, j) - 2.0 * at(ch, k, j) + at(ch, k - 1, j);
                acc += d2 * d2;
            }
        }
    }
    acc / (2 * c * span) as f64
}

/// Seam statistic of a reconstruction cut into an `r x r` grid of tiles:
/// the mean second-difference energy of the residual `recon - reference`
/// across tile boundary lines, minus the same statistic over interior lines
/// that are at least two pixels away from any boundary. Positive values mean
/// errors jump at tile borders.
pub fn seam_metric_2d<T: Scalar>(recon: &Tensor<T>, reference: &Tensor<T>, r: usize) -> Result<f64> {
    check_image(recon, reference)?;
    let (c, h, w) = (recon.shape()[0], recon.shape()[1], recon.shape()[2]);
    if r < 2 || h % r != 0 || w % r != 0 || h / r < 4 || w / r < 4 {
        return config(format!("seam metric needs r >= 2 and tiles of at least 4x4, got {h}x{w} with r = {r}"));
    }
    let d: Vec<f64> = recon
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| a.as_f64() - b.as_f64())
        .collect();
    let dims = (c, h, w);
    let (mut seam, mut ns) = (0.0, 0);
    let (mut rest, mut nr) = (0.0, 0);
    for (rows, len) in [(true, h), (false, w)] {
        let tile = len / r;
        for b in 2..len - 1 {
            let off = b % tile;
            let e = line_energy(&d, dims, b, rows);
            if off == 0 {
                seam += e;
                ns += 1;
            } else if off >= 2 && tile - off >= 2 {
                rest += e;
                nr += 1;
            }
        }
    }
    Ok(seam / ns as f64 - rest / nr as f64)
}
