//! Helpers shared by the integration tests.
#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spp_core::Tensor64;
use spp_diffcore::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Noisy copy of `x` clamped to [0, 1].
pub fn perturbed(x: &Tensor64, amount: f64, seed: u64) -> Tensor64 {
    let noise = Tensor64::uniform(x.shape(), -amount, amount, &mut rng(seed));
    Tensor::from_fn(x.shape(), |i| (x.data()[i] + noise.data()[i]).clamp(0.0, 1.0))
}

/// Smooth-ish random image: a coarse random grid upsampled bilinearly plus
/// fine noise.
pub fn textured(c: usize, h: usize, w: usize, seed: u64) -> Tensor64 {
    let mut r = rng(seed);
    let coarse = Tensor64::uniform(&[c, 5, 5], 0.1, 0.9, &mut r);
    let fine = Tensor64::uniform(&[c, h, w], -0.08, 0.08, &mut r);
    Tensor::from_fn(&[c, h, w], |i| {
        let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
        let fy = y as f64 / (h - 1) as f64 * 4.0;
        let fx = x as f64 / (w - 1) as f64 * 4.0;
        let (y0, x0) = ((fy as usize).min(3), (fx as usize).min(3));
        let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
        let g = |yy: usize, xx: usize| coarse.data()[(ch * 5 + yy) * 5 + xx];
        let v = (1.0 - ty) * ((1.0 - tx) * g(y0, x0) + tx * g(y0, x0 + 1))
            + ty * ((1.0 - tx) * g(y0 + 1, x0) + tx * g(y0 + 1, x0 + 1));
        (v + fine.data()[i]).clamp(0.0, 1.0)
    })
}

pub mod oracle {
    //! Direct MS-SSIM: explicit 2-D Gaussian window, statistics per window
    //! position from weighted sums, box downsampling by explicit loops.

    pub fn ms_ssim(x: &[f64], y: &[f64], c: usize, h: usize, w: usize, scales: usize) -> f64 {
        let exps = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
        let norm: f64 = exps[..scales].iter().sum();
        let mut acc = 0.0;
        for ch in 0..c {
            let mut a: Vec<Vec<f64>> = (0..h).map(|r| x[(ch * h + r) * w..][..w].to_vec()).collect();
            let mut b: Vec<Vec<f64>> = (0..h).map(|r| y[(ch * h + r) * w..][..w].to_vec()).collect();
            let mut product = 1.0;
            for s in 0..scales {
                let (lum, cs) = stats(&a, &b);
                let e = exps[s] / norm;
                if s == scales - 1 {
                    product *= f64::max(lum, 0.0).powf(e);
                } else {
                    product *= f64::max(cs, 0.0).powf(e);
                    a = halve(&a);
                    b = halve(&b);
                }
            }
            acc += product;
        }
        acc / c as f64
    }

    fn window() -> Vec<Vec<f64>> {
        let mut k = vec![vec![0.0; 11]; 11];
        let mut total = 0.0;
        for (i, row) in k.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
                total += *v;
            }
        }
        for row in k.iter_mut() {
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        k
    }

    /// (mean SSIM, mean contrast-structure) over all valid window positions.
    fn stats(a: &[Vec<f64>], b: &[Vec<f64>]) -> (f64, f64) {
        let k = window();
        let (c1, c2) = (0.0001, 0.0009);
        let (h, w) = (a.len(), a[0].len());
        let (mut ssim, mut cs, mut n) = (0.0, 0.0, 0.0);
        for top in 0..=h - 11 {
            for left in 0..=w - 11 {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        ma += k[i][j] * a[top + i][left + j];
                        mb += k[i][j] * b[top + i][left + j];
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let da = a[top + i][left + j] - ma;
                        let db = b[top + i][left + j] - mb;
                        va += k[i][j] * da * da;
                        vb += k[i][j] * db * db;
                        cov += k[i][j] * da * db;
                    }
                }
                let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
                let s = (2.0 * cov + c2) / (va + vb + c2);
                ssim += l * s;
                cs += s;
                n += 1.0;
            }
        }
        (ssim / n, cs / n)
    }

    fn halve(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
        (0..a.len() / 2)
            .map(|i| {
                (0..a[0].len() / 2)
                    .map(|j| (a[2 * i][2 * j] + a[2 * i][2 * j + 1] + a[2 * i + 1][2 * j] + a[2 * i + 1][2 * j + 1]) / 4.0)
                    .collect()
            })
            .collect()
    }
}
