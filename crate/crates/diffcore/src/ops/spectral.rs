use std::rc::Rc;

use crate::error::{config, Result};
use crate::fft::{check_pow2, fft2_in_place};
use crate::{Scalar, Tensor, Var};

impl<'t, T: Scalar> Var<'t, T> {
    /// 2-D DFT over the last two axes of a real tensor. The result has shape
    /// `[2, ...input]`: index 0 holds the real parts, index 1 the imaginary.
    pub fn fft2(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let nd = shape.len();
        if nd < 2 {
            return config(format!("fft2: need at least 2 axes, got {shape:?}"));
        }
        let (h, w) = (shape[nd - 2], shape[nd - 1]);
        check_pow2("fft2", h, w)?;
        let numel = x.numel();
        let mut re = x.data().to_vec();
        let mut im = vec![T::zero(); numel];
        for (pr, pi) in re.chunks_mut(h * w).zip(im.chunks_mut(h * w)) {
            fft2_in_place(pr, pi, h, w, false);
        }
        re.extend_from_slice(&im);
        let mut out_shape = vec![2];
        out_shape.extend_from_slice(&shape);
        let y = Rc::new(Tensor::new(&out_shape, re)?);
        self.tape().push(
            "fft2",
            y,
            &[self],
            Box::new(move |g, _| {
                // d/dx of a real-input DFT is the real part of the unnormalized
                // inverse transform of (g_re + i g_im).
                let (gre, gim) = g.data().split_at(numel);
                let mut re = gre.to_vec();
                let mut im = gim.to_vec();
                for (pr, pi) in re.chunks_mut(h * w).zip(im.chunks_mut(h * w)) {
                    fft2_in_place(pr, pi, h, w, true);
                }
                vec![Some(Tensor::new(&shape, re).unwrap())]
            }),
        )
    }
}
