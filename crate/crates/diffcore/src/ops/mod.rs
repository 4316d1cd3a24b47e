//! Differentiable operations, implemented as methods on [`Var`](crate::Var).

mod conv;
mod elementwise;
mod nn;
mod reduce;
mod shape;
mod spectral;

pub use conv::Conv2dParams;

use crate::error::{config, Result};

pub(crate) fn same_shape(op: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return config(format!("{op}: shape mismatch {a:?} vs {b:?}"));
    }
    Ok(())
}

pub(crate) fn expect_ndim(op: &str, shape: &[usize], ndim: usize) -> Result<()> {
    if shape.len() != ndim {
        return config(format!("{op}: expected {ndim}-d input, got {shape:?}"));
    }
    Ok(())
}
