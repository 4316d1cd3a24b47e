use std::rc::Rc;

use super::expect_ndim;
use crate::error::{config, Result};
use crate::{Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Self {
            stride: (1, 1),
            padding: (0, 0),
            groups: 1,
        }
    }
}

impl Conv2dParams {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride: (stride, stride),
            padding: (padding, padding),
            groups: 1,
        }
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    cg: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    p: Conv2dParams,
}

impl ConvGeom {
    fn new(x: &[usize], k: &[usize], p: Conv2dParams) -> Result<Self> {
        expect_ndim("conv2d input", x, 4)?;
        expect_ndim("conv2d kernel", k, 4)?;
        let (n, c, h, w) = (x[0], x[1], x[2], x[3]);
        let (o, cg, kh, kw) = (k[0], k[1], k[2], k[3]);
        if p.stride.0 == 0 || p.stride.1 == 0 || p.groups == 0 {
            return config("conv2d: stride and groups must be positive");
        }
        if c % p.groups != 0 || o % p.groups != 0 || cg != c / p.groups {
            return config(format!(
                "conv2d: kernel {k:?} incompatible with input {x:?} and {} groups",
                p.groups
            ));
        }
        if kh > h + 2 * p.padding.0 || kw > w + 2 * p.padding.1 {
            return config(format!("conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}"));
        }
        let oh = (h + 2 * p.padding.0 - kh) / p.stride.0 + 1;
        let ow = (w + 2 * p.padding.1 - kw) / p.stride.1 + 1;
        Ok(Self {
            n,
            c,
            h,
            w,
            o,
            cg,
            kh,
            kw,
            oh,
            ow,
            p,
        })
    }

    /// Output columns whose input column `ox*sw + kx - pw` is in range.
    fn col_range(&self, kx: usize) -> (usize, usize) {
        let (sw, pw) = (self.p.stride.1, self.p.padding.1);
        let lo = if pw > kx { (pw - kx).div_ceil(sw) } else { 0 };
        let hi = if self.w + pw > kx {
            ((self.w - 1 + pw - kx) / sw + 1).min(self.ow)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    fn row_in(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.p.stride.0 + ky) as isize - self.p.padding.0 as isize;
        (iy >= 0 && (iy as usize) < self.h).then_some(iy as usize)
    }

    /// Visits every (output row, input row, column range, kernel tap) tuple;
    /// `f(out_plane_idx, in_plane_idx, kernel_idx, oy, iy, kx, lo, hi)`.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, usize, usize, usize)) {
        let og = self.o / self.p.groups;
        for b in 0..self.n {
            for oc in 0..self.o {
                let g = oc / og;
                for icl in 0..self.cg {
                    let ic = g * self.cg + icl;
                    for ky in 0..self.kh {
                        for kx in 0..self.kw {
                            let (lo, hi) = self.col_range(kx);
                            if lo >= hi {
                                continue;
                            }
                            let kidx = ((oc * self.cg + icl) * self.kh + ky) * self.kw + kx;
                            for oy in 0..self.oh {
                                let Some(iy) = self.row_in(oy, ky) else { continue };
                                f(b * self.o + oc, b * self.c + ic, kidx, oy, iy, kx, lo, hi);
                            }
                        }
                    }
                }
            }
        }
    }

    fn in_col(&self, ox: usize, kx: usize) -> usize {
        ox * self.p.stride.1 + kx - self.p.padding.1
    }
}

fn conv_forward<T: Scalar>(g: &ConvGeom, x: &[T], k: &[T], bias: Option<&[T]>) -> Vec<T> {
    let plane = g.oh * g.ow;
    let mut out = vec![T::zero(); g.n * g.o * plane];
    if let Some(b) = bias {
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            chunk.fill(b[i % g.o]);
        }
    }
    let unit = g.p.stride.1 == 1;
    g.for_each_tap(|op, ip, kidx, oy, iy, kx, lo, hi| {
        let wv = k[kidx];
        let out_row = &mut out[op * plane + oy * g.ow..][..g.ow];
        let in_row = &x[(ip * g.h + iy) * g.w..][..g.w];
        if unit {
            let start = g.in_col(lo, kx);
            for (o, &i) in out_row[lo..hi].iter_mut().zip(&in_row[start..start + hi - lo]) {
                *o += wv * i;
            }
        } else {
            for ox in lo..hi {
                out_row[ox] += wv * in_row[g.in_col(ox, kx)];
            }
        }
    });
    out
}

fn conv_backward_input<T: Scalar>(g: &ConvGeom, gout: &[T], k: &[T]) -> Vec<T> {
    let plane = g.oh * g.ow;
    let mut dx = vec![T::zero(); g.n * g.c * g.h * g.w];
    let unit = g.p.stride.1 == 1;
    g.for_each_tap(|op, ip, kidx, oy, iy, kx, lo, hi| {
        let wv = k[kidx];
        let g_row = &gout[op * plane + oy * g.ow..][..g.ow];
        let d_row = &mut dx[(ip * g.h + iy) * g.w..][..g.w];
        if unit {
            let start = g.in_col(lo, kx);
            for (d, &gv) in d_row[start..start + hi - lo].iter_mut().zip(&g_row[lo..hi]) {
                *d += wv * gv;
            }
        } else {
            for ox in lo..hi {
                d_row[g.in_col(ox, kx)] += wv * g_row[ox];
            }
        }
    });
    dx
}

fn conv_backward_kernel<T: Scalar>(g: &ConvGeom, gout: &[T], x: &[T]) -> Vec<T> {
    let plane = g.oh * g.ow;
    let mut dk = vec![T::zero(); g.o * g.cg * g.kh * g.kw];
    let unit = g.p.stride.1 == 1;
    g.for_each_tap(|op, ip, kidx, oy, iy, kx, lo, hi| {
        let g_row = &gout[op * plane + oy * g.ow..][..g.ow];
        let in_row = &x[(ip * g.h + iy) * g.w..][..g.w];
        let mut acc = T::zero();
        if unit {
            let start = g.in_col(lo, kx);
            for (&gv, &i) in g_row[lo..hi].iter().zip(&in_row[start..start + hi - lo]) {
                acc += gv * i;
            }
        } else {
            for ox in lo..hi {
                acc += g_row[ox] * in_row[g.in_col(ox, kx)];
            }
        }
        dk[kidx] += acc;
    });
    dk
}

fn check_spatial(op: &str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return config(format!("{op}: need at least 2 axes, got {shape:?}"));
    }
    let nd = shape.len();
    let (h, w) = (shape[nd - 2], shape[nd - 1]);
    Ok((shape.iter().product::<usize>() / (h * w), h, w))
}

/// Raw pixel shuffle on `[N, C*s*s, H, W]`: output `(c, s*y+dy, s*x+dx)` reads
/// input channel `c*s*s + dy*s + dx` at `(y, x)`.
pub fn pixel_shuffle_raw<T: Scalar>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    expect_ndim("pixel_shuffle", x.shape(), 4)?;
    let [n, cs, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    if s == 0 || cs % (s * s) != 0 {
        return config(format!("pixel_shuffle: {cs} channels not divisible by {s}^2"));
    }
    let c = cs / (s * s);
    let (oh, ow) = (h * s, w * s);
    let mut out = vec![T::zero(); x.numel()];
    let src = x.data();
    for b in 0..n {
        for ch in 0..c {
            for dy in 0..s {
                for dx in 0..s {
                    let ic = ch * s * s + dy * s + dx;
                    let in_plane = &src[(b * cs + ic) * h * w..][..h * w];
                    let out_plane = &mut out[(b * c + ch) * oh * ow..][..oh * ow];
                    for y in 0..h {
                        let orow = &mut out_plane[(s * y + dy) * ow..][..ow];
                        for (xx, &v) in in_plane[y * w..][..w].iter().enumerate() {
                            orow[s * xx + dx] = v;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[n, c, oh, ow], out)
}

/// Inverse of [`pixel_shuffle_raw`].
pub fn pixel_unshuffle_raw<T: Scalar>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    expect_ndim("pixel_unshuffle", x.shape(), 4)?;
    let [n, c, oh, ow] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    if s == 0 || oh % s != 0 || ow % s != 0 {
        return config(format!("pixel_unshuffle: {oh}x{ow} not divisible by {s}"));
    }
    let (h, w) = (oh / s, ow / s);
    let cs = c * s * s;
    let mut out = vec![T::zero(); x.numel()];
    let src = x.data();
    for b in 0..n {
        for ch in 0..c {
            let in_plane = &src[(b * c + ch) * oh * ow..][..oh * ow];
            for dy in 0..s {
                for dx in 0..s {
                    let oc = ch * s * s + dy * s + dx;
                    let out_plane = &mut out[(b * cs + oc) * h * w..][..h * w];
                    for y in 0..h {
                        let irow = &in_plane[(s * y + dy) * ow..][..ow];
                        for (xx, o) in out_plane[y * w..][..w].iter_mut().enumerate() {
                            *o = irow[s * xx + dx];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[n, cs, h, w], out)
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Plain cross-correlation with a square stride and symmetric padding.
    pub fn conv2d(self, kernel: Var<'t, T>, stride: usize, padding: usize) -> Result<Var<'t, T>> {
        self.conv2d_with(kernel, None, Conv2dParams::new(stride, padding))
    }

    /// Grouped 2-D cross-correlation of `[N, C, H, W]` with `[O, C/groups, kh, kw]`
    /// plus an optional per-output-channel bias.
    pub fn conv2d_with(
        self,
        kernel: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        params: Conv2dParams,
    ) -> Result<Var<'t, T>> {
        let x = self.value();
        let k = kernel.value();
        let geom = ConvGeom::new(x.shape(), k.shape(), params)?;
        let b = bias.map(|b| b.value());
        if let Some(b) = &b {
            if b.shape() != [geom.o] {
                return config(format!("conv2d: bias shape {:?}, expected [{}]", b.shape(), geom.o));
            }
        }
        let out = conv_forward(&geom, x.data(), k.data(), b.as_ref().map(|b| b.data()));
        let y = Rc::new(Tensor::new(&[geom.n, geom.o, geom.oh, geom.ow], out)?);
        let mut parents = vec![self, kernel];
        parents.extend(bias);
        let x_shape = x.shape().to_vec();
        let k_shape = k.shape().to_vec();
        self.tape().push(
            "conv2d",
            y,
            &parents,
            Box::new(move |g, needs| {
                let gd = g.data();
                let mut grads = vec![
                    needs[0].then(|| {
                        Tensor::new(&x_shape, conv_backward_input(&geom, gd, k.data())).unwrap()
                    }),
                    needs[1].then(|| {
                        Tensor::new(&k_shape, conv_backward_kernel(&geom, gd, x.data())).unwrap()
                    }),
                ];
                if needs.len() == 3 {
                    grads.push(needs[2].then(|| {
                        let plane = geom.oh * geom.ow;
                        let mut db = vec![T::zero(); geom.o];
                        for (i, chunk) in gd.chunks(plane).enumerate() {
                            db[i % geom.o] += chunk.iter().copied().sum::<T>();
                        }
                        Tensor::new(&[geom.o], db).unwrap()
                    }));
                }
                grads
            }),
        )
    }

    /// Depth-to-space upsampling: `[N, C*s*s, H, W] -> [N, C, H*s, W*s]`.
    pub fn pixel_shuffle(self, s: usize) -> Result<Var<'t, T>> {
        let y = Rc::new(pixel_shuffle_raw(&self.value(), s)?);
        self.tape().push(
            "pixel_shuffle",
            y,
            &[self],
            Box::new(move |g, _| vec![Some(pixel_unshuffle_raw(g, s).unwrap())]),
        )
    }

    /// Space-to-depth: `[N, C, H, W] -> [N, C*s*s, H/s, W/s]`.
    pub fn pixel_unshuffle(self, s: usize) -> Result<Var<'t, T>> {
        let y = Rc::new(pixel_unshuffle_raw(&self.value(), s)?);
        self.tape().push(
            "pixel_unshuffle",
            y,
            &[self],
            Box::new(move |g, _| vec![Some(pixel_shuffle_raw(g, s).unwrap())]),
        )
    }

    /// Nearest-neighbour upsampling of the last two axes by `(sh, sw)`.
    pub fn upsample_nearest(self, sh: usize, sw: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let (planes, h, w) = check_spatial("upsample_nearest", &shape)?;
        if sh == 0 || sw == 0 {
            return config("upsample_nearest: factors must be positive");
        }
        let (oh, ow) = (h * sh, w * sw);
        let mut out = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            for oy in 0..oh {
                let row = &x.data()[(p * h + oy / sh) * w..][..w];
                out.extend((0..ow).map(|ox| row[ox / sw]));
            }
        }
        let nd = shape.len();
        let mut out_shape = shape.clone();
        out_shape[nd - 2] = oh;
        out_shape[nd - 1] = ow;
        let y = Rc::new(Tensor::new(&out_shape, out)?);
        self.tape().push(
            "upsample_nearest",
            y,
            &[self],
            Box::new(move |g, _| {
                let mut dx = vec![T::zero(); planes * h * w];
                for p in 0..planes {
                    for oy in 0..oh {
                        let grow = &g.data()[(p * oh + oy) * ow..][..ow];
                        let drow = &mut dx[(p * h + oy / sh) * w..][..w];
                        for (ox, &v) in grow.iter().enumerate() {
                            drow[ox / sw] += v;
                        }
                    }
                }
                vec![Some(Tensor::new(&shape, dx).unwrap())]
            }),
        )
    }

    /// 2x2 average pooling with stride 2 over the last two axes; odd trailing
    /// rows/columns are dropped.
    pub fn avg_pool2(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let (planes, h, w) = check_spatial("avg_pool2", &shape)?;
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return config(format!("avg_pool2: input {h}x{w} too small"));
        }
        let quarter = T::of(0.25);
        let mut out = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let plane = &x.data()[p * h * w..][..h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let (y0, x0) = (2 * oy, 2 * ox);
                    let s = plane[y0 * w + x0]
                        + plane[y0 * w + x0 + 1]
                        + plane[(y0 + 1) * w + x0]
                        + plane[(y0 + 1) * w + x0 + 1];
                    out.push(s * quarter);
                }
            }
        }
        let nd = shape.len();
        let mut out_shape = shape.clone();
        out_shape[nd - 2] = oh;
        out_shape[nd - 1] = ow;
        let y = Rc::new(Tensor::new(&out_shape, out)?);
        self.tape().push(
            "avg_pool2",
            y,
            &[self],
            Box::new(move |g, _| {
                let mut dx = vec![T::zero(); planes * h * w];
                for p in 0..planes {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let v = g.data()[(p * oh + oy) * ow + ox] * quarter;
                            let base = p * h * w + 2 * oy * w + 2 * ox;
                            dx[base] += v;
                            dx[base + 1] += v;
                            dx[base + w] += v;
                            dx[base + w + 1] += v;
                        }
                    }
                }
                vec![Some(Tensor::new(&shape, dx).unwrap())]
            }),
        )
    }
}
