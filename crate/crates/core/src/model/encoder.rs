use rand::Rng;
use spp_diffcore::{Conv2dParams, ParamId, ParamStore, Scalar, Tensor, Var};

use super::layers::Conv;
use super::SppConfig;
use crate::error::Result;

/// ConvNeXt-style stage: strided patchify conv, then one block of depthwise
/// 3x3 conv, channel layer-norm and a residual two-layer channel MLP.
#[derive(Clone, Debug)]
struct EncoderStage {
    down: Conv,
    depthwise: Conv,
    norm_gamma: ParamId,
    norm_beta: ParamId,
    expand: Conv,
    contract: Conv,
}

impl EncoderStage {
    fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        (c_in, c): (usize, usize),
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let down = Conv::new(store, &format!("{name}.down"), (c_in, c), stride, Conv2dParams::new(stride, 0), rng);
        let depthwise = Conv::new(
            store,
            &format!("{name}.depthwise"),
            (c, c),
            3,
            Conv2dParams::new(1, 1).groups(c),
            rng,
        );
        let norm_gamma = store.add(format!("{name}.norm.gamma"), Tensor::ones(&[c]));
        let norm_beta = store.add(format!("{name}.norm.beta"), Tensor::zeros(&[c]));
        let expand = Conv::same(store, &format!("{name}.expand"), (c, 2 * c), 1, rng);
        let contract = Conv::same(store, &format!("{name}.contract"), (2 * c, c), 1, rng);
        Self {
            down,
            depthwise,
            norm_gamma,
            norm_beta,
            expand,
            contract,
        }
    }

    fn forward<'t, T: Scalar>(&self, p: &[Var<'t, T>], x: Var<'t, T>) -> Result<Var<'t, T>> {
        let x = self.down.forward(p, x)?;
        let y = self.depthwise.forward(p, x)?;
        let y = y.layer_norm_channels(p[self.norm_gamma.0], p[self.norm_beta.0], 1e-6)?;
        let y = self.expand.forward(p, y)?.gelu()?;
        let y = self.contract.forward(p, y)?;
        Ok(x.add(y)?)
    }
}

/// Maps a full frame `[C, H, W]` to its embedding `[1, E, eh, ew]`.
#[derive(Clone, Debug)]
pub struct Encoder {
    stages: Vec<EncoderStage>,
    project: Conv,
}

impl Encoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(cfg: &SppConfig, store: &mut ParamStore<T>, rng: &mut R) -> Self {
        let mut c_in = cfg.channels;
        let mut stages = Vec::new();
        for (k, (&stride, &c)) in cfg.encoder_strides().iter().zip(&cfg.encoder_widths).enumerate() {
            stages.push(EncoderStage::new(store, &format!("encoder.stage{k}"), (c_in, c), stride, rng));
            c_in = c;
        }
        let project = Conv::same(store, "encoder.project", (c_in, cfg.embed_channels), 1, rng);
        Self { stages, project }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &[Var<'t, T>], frame: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = frame.shape();
        let mut x = frame.reshape(&[1, s[0], s[1], s[2]])?;
        for stage in &self.stages {
            x = stage.forward(p, x)?;
        }
        self.project.forward(p, x)
    }
}
