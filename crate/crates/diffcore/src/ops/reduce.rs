use std::rc::Rc;

use crate::error::{config, Result};
use crate::{Scalar, Tensor, Var};

/// Splits `shape` around `axis` into (outer, len, inner) extents.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Sum of all elements, as a scalar.
    pub fn sum(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let s = x.data().iter().copied().sum::<T>();
        self.tape().push(
            "sum",
            Rc::new(Tensor::scalar(s)),
            &[self],
            Box::new(move |g, _| vec![Some(Tensor::full(&shape, g.item()))]),
        )
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(self) -> Result<Var<'t, T>> {
        let n = T::of(self.value().numel() as f64);
        self.sum()?.mul_scalar(n.recip())
    }

    /// Sums out `axis`, dropping it from the shape.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return config(format!("sum_axis: axis {axis} out of range for {shape:?}"));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let src = &x.data()[(o * len + k) * inner..][..inner];
                for (d, &s) in out[o * inner..][..inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let y = Rc::new(Tensor::new(&out_shape, out)?);
        self.tape().push(
            "sum_axis",
            y,
            &[self],
            Box::new(move |g, _| {
                let mut dx = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let row = &g.data()[o * inner..][..inner];
                    for _ in 0..len {
                        dx.extend_from_slice(row);
                    }
                }
                vec![Some(Tensor::new(&shape, dx).unwrap())]
            }),
        )
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return config(format!("mean_axis: axis {axis} out of range for {shape:?}"));
        }
        let n = T::of(shape[axis] as f64);
        self.sum_axis(axis)?.mul_scalar(n.recip())
    }
}
