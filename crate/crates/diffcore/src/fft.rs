//! Radix-2 complex FFT and the 2-D real-input spectrum used by frequency
//! losses.

use crate::error::{config, Result};
use crate::{Scalar, Tensor};

/// Complex spectrum of a real 2-D signal, stored as separate planes.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrum<T> {
    pub shape: [usize; 2],
    pub re: Vec<T>,
    pub im: Vec<T>,
}

fn bit_reverse_permute<T: Copy>(re: &mut [T], im: &mut [T]) {
    let n = re.len();
    let bits = n.trailing_zeros();
    if bits == 0 {
        return;
    }
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
}

/// In-place unnormalized DFT of length `re.len()` (a power of two).
/// Forward uses `exp(-2πi kn/N)`; `inverse` flips the sign without scaling.
pub fn fft_in_place<T: Scalar>(re: &mut [T], im: &mut [T], inverse: bool) {
    let n = re.len();
    assert_eq!(n, im.len());
    assert!(n.is_power_of_two(), "fft length {n} is not a power of two");
    bit_reverse_permute(re, im);
    let sign = if inverse { 1.0 } else { -1.0 };
    // Twiddles evaluated in f64 so f32 transforms stay accurate.
    let twiddles: Vec<(T, T)> = (0..n / 2)
        .map(|k| {
            let ang = sign * 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            (T::of(ang.cos()), T::of(ang.sin()))
        })
        .collect();
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = n / len;
        for start in (0..n).step_by(len) {
            for j in 0..half {
                let (wr, wi) = twiddles[j * step];
                let (a, b) = (start + j, start + j + half);
                let tr = re[b] * wr - im[b] * wi;
                let ti = re[b] * wi + im[b] * wr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }
}

/// Row-then-column 2-D transform of an `h x w` plane pair.
pub fn fft2_in_place<T: Scalar>(re: &mut [T], im: &mut [T], h: usize, w: usize, inverse: bool) {
    for r in 0..h {
        fft_in_place(&mut re[r * w..][..w], &mut im[r * w..][..w], inverse);
    }
    let mut col_re = vec![T::zero(); h];
    let mut col_im = vec![T::zero(); h];
    for c in 0..w {
        for r in 0..h {
            col_re[r] = re[r * w + c];
            col_im[r] = im[r * w + c];
        }
        fft_in_place(&mut col_re, &mut col_im, inverse);
        for r in 0..h {
            re[r * w + c] = col_re[r];
            im[r * w + c] = col_im[r];
        }
    }
}

pub(crate) fn check_pow2(op: &str, h: usize, w: usize) -> Result<()> {
    if !h.is_power_of_two() || !w.is_power_of_two() {
        return config(format!(
            "{op}: extents {h}x{w} must be powers of two (zero-pad first)"
        ));
    }
    Ok(())
}

/// Unnormalized forward 2-D DFT of a real `[H, W]` tensor.
pub fn fft2d<T: Scalar>(input: &Tensor<T>) -> Result<ComplexSpectrum<T>> {
    if input.ndim() != 2 {
        return config(format!("fft2d: expected [H, W], got {:?}", input.shape()));
    }
    let (h, w) = (input.shape()[0], input.shape()[1]);
    check_pow2("fft2d", h, w)?;
    let mut re = input.data().to_vec();
    let mut im = vec![T::zero(); re.len()];
    fft2_in_place(&mut re, &mut im, h, w, false);
    Ok(ComplexSpectrum {
        shape: [h, w],
        re,
        im,
    })
}

/// Zero-pads the last two axes at the bottom/right up to the next powers of two.
pub fn pad_to_pow2<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let shape = input.shape();
    let nd = shape.len();
    assert!(nd >= 2, "pad_to_pow2 needs at least two axes");
    let (h, w) = (shape[nd - 2], shape[nd - 1]);
    let (ph, pw) = (h.next_power_of_two(), w.next_power_of_two());
    let planes = input.numel() / (h * w);
    let mut out_shape = shape.to_vec();
    out_shape[nd - 2] = ph;
    out_shape[nd - 1] = pw;
    let mut out = Tensor::zeros(&out_shape);
    for p in 0..planes {
        for r in 0..h {
            out.data_mut()[(p * ph + r) * pw..][..w]
                .copy_from_slice(&input.data()[(p * h + r) * w..][..w]);
        }
    }
    out
}
