use std::rc::Rc;

use super::expect_ndim;
use crate::error::{config, Result};
use crate::{Scalar, Tensor, Var};

/// `a[M,K] @ b[K,N]`, row-major.
fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..][..n];
        for (p, &av) in a[i * k..][..k].iter().enumerate() {
            for (o, &bv) in orow.iter_mut().zip(&b[p * n..][..n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a[M,K]^T @ b[M,N]` -> `[K,N]`.
fn matmul_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        let brow = &b[i * n..][..n];
        for (p, &av) in a[i * k..][..k].iter().enumerate() {
            for (o, &bv) in out[p * n..][..n].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a[M,N] @ b[K,N]^T` -> `[M,K]`.
fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    for i in 0..m {
        let arow = &a[i * n..][..n];
        for p in 0..k {
            out[i * k + p] = arow.iter().zip(&b[p * n..][..n]).map(|(&x, &y)| x * y).sum();
        }
    }
    out
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.linear(other, None)
    }

    /// `x[M,K] @ w[K,N] + b[N]`.
    pub fn linear(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        let x = self.value();
        let w = weight.value();
        expect_ndim("linear input", x.shape(), 2)?;
        expect_ndim("linear weight", w.shape(), 2)?;
        let (m, k, n) = (x.shape()[0], x.shape()[1], w.shape()[1]);
        if w.shape()[0] != k {
            return config(format!("linear: {:?} @ {:?}", x.shape(), w.shape()));
        }
        let mut out = matmul_raw(x.data(), w.data(), m, k, n);
        let b = bias.map(|b| b.value());
        if let Some(b) = &b {
            if b.shape() != [n] {
                return config(format!("linear: bias {:?}, expected [{n}]", b.shape()));
            }
            for row in out.chunks_mut(n) {
                for (o, &bv) in row.iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
        }
        let y = Rc::new(Tensor::new(&[m, n], out)?);
        let mut parents = vec![self, weight];
        parents.extend(bias);
        self.tape().push(
            "linear",
            y,
            &parents,
            Box::new(move |g, needs| {
                let gd = g.data();
                let mut grads = vec![
                    needs[0].then(|| Tensor::new(&[m, k], matmul_nt(gd, w.data(), m, k, n)).unwrap()),
                    needs[1].then(|| Tensor::new(&[k, n], matmul_tn(x.data(), gd, m, k, n)).unwrap()),
                ];
                if needs.len() == 3 {
                    grads.push(needs[2].then(|| {
                        let mut db = vec![T::zero(); n];
                        for row in gd.chunks(n) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        Tensor::new(&[n], db).unwrap()
                    }));
                }
                grads
            }),
        )
    }

    /// Normalizes `[N, C, ...]` over the channel axis at every position, then
    /// applies per-channel `gamma` and `beta`.
    pub fn layer_norm_channels(self, gamma: Var<'t, T>, beta: Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if shape.len() < 2 {
            return config(format!("layer_norm_channels: need [N, C, ...], got {shape:?}"));
        }
        let (n, c) = (shape[0], shape[1]);
        let s: usize = shape[2..].iter().product();
        let (gv, bv) = (gamma.value(), beta.value());
        if gv.shape() != [c] || bv.shape() != [c] {
            return config(format!("layer_norm_channels: affine params must be [{c}]"));
        }
        let eps = T::of(eps);
        let inv_c = T::of(c as f64).recip();
        let mut xhat = vec![T::zero(); x.numel()];
        let mut inv_std = vec![T::zero(); n * s];
        let mut out = vec![T::zero(); x.numel()];
        let xd = x.data();
        for b in 0..n {
            for p in 0..s {
                let idx = |ch: usize| (b * c + ch) * s + p;
                let mean = (0..c).map(|ch| xd[idx(ch)]).sum::<T>() * inv_c;
                let var = (0..c).map(|ch| (xd[idx(ch)] - mean).powi(2)).sum::<T>() * inv_c;
                let is = (var + eps).sqrt().recip();
                inv_std[b * s + p] = is;
                for ch in 0..c {
                    let xh = (xd[idx(ch)] - mean) * is;
                    xhat[idx(ch)] = xh;
                    out[idx(ch)] = xh * gv.data()[ch] + bv.data()[ch];
                }
            }
        }
        let y = Rc::new(Tensor::new(&shape, out)?);
        self.tape().push(
            "layer_norm_channels",
            y,
            &[self, gamma, beta],
            Box::new(move |g, needs| {
                let gd = g.data();
                let mut dx = vec![T::zero(); gd.len()];
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for b in 0..n {
                    for p in 0..s {
                        let idx = |ch: usize| (b * c + ch) * s + p;
                        let mut mean_d = T::zero();
                        let mut mean_dx = T::zero();
                        for ch in 0..c {
                            let i = idx(ch);
                            let d = gd[i] * gv.data()[ch];
                            mean_d += d;
                            mean_dx += d * xhat[i];
                            dgamma[ch] += gd[i] * xhat[i];
                            dbeta[ch] += gd[i];
                        }
                        mean_d *= inv_c;
                        mean_dx *= inv_c;
                        let is = inv_std[b * s + p];
                        for ch in 0..c {
                            let i = idx(ch);
                            let d = gd[i] * gv.data()[ch];
                            dx[i] = is * (d - mean_d - xhat[i] * mean_dx);
                        }
                    }
                }
                vec![
                    needs[0].then(|| Tensor::new(&shape, dx).unwrap()),
                    needs[1].then(|| Tensor::new(&[c], dgamma).unwrap()),
                    needs[2].then(|| Tensor::new(&[c], dbeta).unwrap()),
                ]
            }),
        )
    }

    /// Per-sample, per-channel affine modulation: `x[N,C,...] * scale[N,C] + shift[N,C]`.
    pub fn channel_affine(self, scale: Var<'t, T>, shift: Var<'t, T>) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if shape.len() < 2 {
            return config(format!("channel_affine: need [N, C, ...], got {shape:?}"));
        }
        let (n, c) = (shape[0], shape[1]);
        let s: usize = shape[2..].iter().product();
        let (sc, sh) = (scale.value(), shift.value());
        if sc.shape() != [n, c] || sh.shape() != [n, c] {
            return config(format!(
                "channel_affine: scale {:?} / shift {:?} must be [{n}, {c}]",
                sc.shape(),
                sh.shape()
            ));
        }
        let mut out = Vec::with_capacity(x.numel());
        for (nc, chunk) in x.data().chunks(s).enumerate() {
            let (a, b) = (sc.data()[nc], sh.data()[nc]);
            out.extend(chunk.iter().map(|&v| v * a + b));
        }
        let y = Rc::new(Tensor::new(&shape, out)?);
        self.tape().push(
            "channel_affine",
            y,
            &[self, scale, shift],
            Box::new(move |g, needs| {
                let gd = g.data();
                let dx = needs[0].then(|| {
                    let mut dx = Vec::with_capacity(gd.len());
                    for (nc, chunk) in gd.chunks(s).enumerate() {
                        let a = sc.data()[nc];
                        dx.extend(chunk.iter().map(|&v| v * a));
                    }
                    Tensor::new(&shape, dx).unwrap()
                });
                let dscale = needs[1].then(|| {
                    let d = gd
                        .chunks(s)
                        .zip(x.data().chunks(s))
                        .map(|(gc, xc)| gc.iter().zip(xc).map(|(&a, &b)| a * b).sum())
                        .collect();
                    Tensor::new(&[n, c], d).unwrap()
                });
                let dshift = needs[2].then(|| {
                    let d = gd.chunks(s).map(|gc| gc.iter().copied().sum()).collect();
                    Tensor::new(&[n, c], d).unwrap()
                });
                vec![dx, dscale, dshift]
            }),
        )
    }
}
