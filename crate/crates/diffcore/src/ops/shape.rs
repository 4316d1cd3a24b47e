use std::rc::Rc;

use super::reduce::axis_split;
use crate::error::{config, Result};
use crate::{Scalar, Tensor, Var};

impl<'t, T: Scalar> Var<'t, T> {
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let old = x.shape().to_vec();
        let y = Rc::new((*x).clone().reshape(shape)?);
        self.tape().push(
            "reshape",
            y,
            &[self],
            Box::new(move |g, _| vec![Some(g.clone().reshape(&old).unwrap())]),
        )
    }

    /// Takes `len` entries along `axis` starting at `start`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return config(format!(
                "slice: [{start}, {}) along axis {axis} out of range for {shape:?}",
                start + len
            ));
        }
        let (outer, full, inner) = axis_split(&shape, axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&x.data()[(o * full + start) * inner..][..len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let y = Rc::new(Tensor::new(&out_shape, out)?);
        self.tape().push(
            "slice",
            y,
            &[self],
            Box::new(move |g, _| {
                let mut dx = Tensor::zeros(&shape);
                for o in 0..outer {
                    dx.data_mut()[(o * full + start) * inner..][..len * inner]
                        .copy_from_slice(&g.data()[o * len * inner..][..len * inner]);
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let Some(first) = parts.first() else {
            return config("concat: no inputs");
        };
        let values: Vec<Rc<Tensor<T>>> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape().to_vec();
        if axis >= base.len() {
            return config(format!("concat: axis {axis} out of range for {base:?}"));
        }
        let mut lens = Vec::with_capacity(parts.len());
        for v in &values {
            let s = v.shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return config(format!("concat: incompatible shapes {base:?} and {s:?}"));
            }
            lens.push(s[axis]);
        }
        let total: usize = lens.iter().sum();
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &len) in values.iter().zip(&lens) {
                out.extend_from_slice(&v.data()[o * len * inner..][..len * inner]);
            }
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let y = Rc::new(Tensor::new(&out_shape, out)?);
        let part_shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
        first.tape().push(
            "concat",
            y,
            parts,
            Box::new(move |g, needs| {
                let mut grads: Vec<Vec<T>> =
                    lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
                for o in 0..outer {
                    let mut off = o * total * inner;
                    for (buf, &len) in grads.iter_mut().zip(&lens) {
                        buf.extend_from_slice(&g.data()[off..][..len * inner]);
                        off += len * inner;
                    }
                }
                grads
                    .into_iter()
                    .zip(&part_shapes)
                    .zip(needs)
                    .map(|((buf, s), &need)| need.then(|| Tensor::new(s, buf).unwrap()))
                    .collect()
            }),
        )
    }

    /// Repeats a tensor whose leading extent is 1 `n` times along that axis.
    pub fn broadcast_leading(self, n: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if shape.first() != Some(&1) || n == 0 {
            return config(format!("broadcast_leading: need leading extent 1, got {shape:?}"));
        }
        let mut out = Vec::with_capacity(x.numel() * n);
        for _ in 0..n {
            out.extend_from_slice(x.data());
        }
        let mut out_shape = shape.clone();
        out_shape[0] = n;
        let y = Rc::new(Tensor::new(&out_shape, out)?);
        let block = x.numel();
        self.tape().push(
            "broadcast_leading",
            y,
            &[self],
            Box::new(move |g, _| {
                let mut dx = vec![T::zero(); block];
                for chunk in g.data().chunks(block) {
                    for (d, &v) in dx.iter_mut().zip(chunk) {
                        *d += v;
                    }
                }
                vec![Some(Tensor::new(&shape, dx).unwrap())]
            }),
        )
    }

    /// Zero-pads the last two axes at the bottom and right to `(h, w)`.
    pub fn pad_bottom_right(self, h: usize, w: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let nd = shape.len();
        if nd < 2 || h < shape[nd - 2] || w < shape[nd - 1] {
            return config(format!("pad_bottom_right: cannot pad {shape:?} to {h}x{w}"));
        }
        let (ih, iw) = (shape[nd - 2], shape[nd - 1]);
        let planes = x.numel() / (ih * iw);
        let mut out_shape = shape.clone();
        out_shape[nd - 2] = h;
        out_shape[nd - 1] = w;
        let mut out = Tensor::zeros(&out_shape);
        for p in 0..planes {
            for r in 0..ih {
                out.data_mut()[(p * h + r) * w..][..iw]
                    .copy_from_slice(&x.data()[(p * ih + r) * iw..][..iw]);
            }
        }
        self.tape().push(
            "pad_bottom_right",
            Rc::new(out),
            &[self],
            Box::new(move |g, _| {
                let mut dx = Vec::with_capacity(planes * ih * iw);
                for p in 0..planes {
                    for r in 0..ih {
                        dx.extend_from_slice(&g.data()[(p * h + r) * w..][..iw]);
                    }
                }
                vec![Some(Tensor::new(&shape, dx).unwrap())]
            }),
        )
    }
}
