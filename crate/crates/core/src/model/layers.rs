use rand::Rng;
use spp_diffcore::{Conv2dParams, ParamId, ParamStore, Scalar, Tensor, Var};

use crate::error::Result;

/// Uniform fan-in initialization, bound `1/sqrt(fan_in)`.
pub(crate) fn fan_in_uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

#[derive(Clone, Debug)]
pub(crate) struct Linear {
    pub(crate) weight: ParamId,
    pub(crate) bias: ParamId,
}

impl Linear {
    pub(crate) fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), fan_in_uniform(&[fan_in, fan_out], fan_in, rng));
        let bias = store.add(format!("{name}.bias"), fan_in_uniform(&[fan_out], fan_in, rng));
        Self { weight, bias }
    }

    pub(crate) fn forward<'t, T: Scalar>(&self, p: &[Var<'t, T>], x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.linear(p[self.weight.0], Some(p[self.bias.0]))?)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Conv {
    weight: ParamId,
    bias: ParamId,
    params: Conv2dParams,
}

impl Conv {
    pub(crate) fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        (c_in, c_out): (usize, usize),
        kernel: usize,
        params: Conv2dParams,
        rng: &mut R,
    ) -> Self {
        Self::with_kernel(store, name, (c_in, c_out), (kernel, kernel), params, rng)
    }

    fn with_kernel<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        (c_in, c_out): (usize, usize),
        (kh, kw): (usize, usize),
        params: Conv2dParams,
        rng: &mut R,
    ) -> Self {
        let fan_in = c_in / params.groups * kh * kw;
        let shape = [c_out, c_in / params.groups, kh, kw];
        let weight = store.add(format!("{name}.weight"), fan_in_uniform(&shape, fan_in, rng));
        let bias = store.add(format!("{name}.bias"), fan_in_uniform(&[c_out], fan_in, rng));
        Self { weight, bias, params }
    }

    /// `kernel x kernel` convolution with "same" padding.
    pub(crate) fn same<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: (usize, usize),
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        Self::new(store, name, channels, kernel, Conv2dParams::new(1, kernel / 2), rng)
    }

    /// `1 x kernel` convolution along the last axis with "same" padding.
    pub(crate) fn row<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: (usize, usize),
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        let params = Conv2dParams {
            padding: (0, kernel / 2),
            ..Conv2dParams::default()
        };
        Self::with_kernel(store, name, channels, (1, kernel), params, rng)
    }

    pub(crate) fn forward<'t, T: Scalar>(&self, p: &[Var<'t, T>], x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.conv2d_with(p[self.weight.0], Some(p[self.bias.0]), self.params)?)
    }
}
