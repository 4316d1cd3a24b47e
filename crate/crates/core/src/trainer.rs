//! Fitting the model to a clip and evaluating trained representations.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use spp_diffcore::{Adam, AdamConfig, ParamStore, Scalar, Tape, Tensor};

use crate::codec::{embedding_name, Checkpoint};
use crate::error::{config, Error, Result};
use crate::model::{Decoder, FrameEmbedding, SppConfig, SppModel};
use crate::objective::{composite_loss_var, ms_ssim_auto, psnr};
use crate::spp::{self, PatchSet};
use crate::videoio::FrameSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct TrainConfig {
    pub epochs: usize,
    /// Frames per optimizer step.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Share of all steps spent in linear warmup before cosine decay.
    pub warmup_fraction: f64,
    pub seed: u64,
    /// A report row is written every `eval_every` epochs and after the last.
    pub eval_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 1,
            learning_rate: 2e-3,
            warmup_fraction: 0.1,
            seed: 0,
            eval_every: 1,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return config("epochs, batch size and eval interval must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return config(format!("invalid learning rate {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return config("warmup fraction must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return config("invalid optimizer moments or epsilon");
        }
        Ok(())
    }

    /// Learning rate of step `step` (0-based) out of `total`: linear warmup,
    /// then cosine decay to zero.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        let warm = (self.warmup_fraction * total as f64).round() as usize;
        if step < warm {
            return self.learning_rate * (step + 1) as f64 / warm as f64;
        }
        let span = (total - warm).max(1) as f64;
        let progress = (step - warm) as f64 / span;
        0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * progress).cos())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    /// 1-based.
    pub epoch: usize,
    /// Mean training loss over the epoch's steps.
    pub loss: f64,
    /// Mean over frames after the epoch.
    pub psnr: f64,
    pub ms_ssim: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub wall_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub rows: Vec<EpochRow>,
    pub param_count: usize,
    pub decoder_param_count: usize,
    pub steps: usize,
    pub checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str = "epoch,loss,psnr,ms_ssim,lr";

    /// Rows as CSV. Wall time is left out so that reruns compare equal.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            s.push_str(&format!("{},{:.9e},{:.6},{:.8},{:.6e}\n", r.epoch, r.loss, r.psnr, r.ms_ssim, r.lr));
        }
        s
    }

    pub fn last(&self) -> &EpochRow {
        self.rows.last().expect("a report has at least one row")
    }
}

/// Per-frame quality of a reconstruction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub psnr: f64,
    pub ms_ssim: f64,
}

impl FrameMetrics {
    pub const CSV_HEADER: &'static str = "frame,psnr,ms_ssim";

    pub fn csv_row(&self) -> String {
        format!("{},{:.6},{:.8}", self.frame, self.psnr, self.ms_ssim)
    }
}

/// Mean PSNR and MS-SSIM over frames.
pub fn mean_metrics(rows: &[FrameMetrics]) -> (f64, f64) {
    let n = rows.len() as f64;
    (
        rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        rows.iter().map(|r| r.ms_ssim).sum::<f64>() / n,
    )
}

fn frame_metrics<T: Scalar>(t: usize, recon: &Tensor<T>, gt: &Tensor<T>, cfg: &SppConfig) -> Result<FrameMetrics> {
    Ok(FrameMetrics {
        frame: t,
        psnr: psnr(recon, gt)?,
        ms_ssim: ms_ssim_auto(recon, gt, cfg.max_msssim_scales)?,
    })
}

fn check_data<T: Scalar>(data: &FrameSequence<T>, cfg: &SppConfig) -> Result<()> {
    if data.frame_shape() != [cfg.channels, cfg.height, cfg.width] {
        return config(format!(
            "frames are {:?} but the model expects [{}, {}, {}]",
            data.frame_shape(),
            cfg.channels,
            cfg.height,
            cfg.width
        ));
    }
    if data.len() != cfg.frames {
        return config(format!("clip has {} frames, model is configured for {}", data.len(), cfg.frames));
    }
    Ok(())
}

fn diverged(epoch: usize, step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Tensor(source @ spp_diffcore::Error::NonFinite { .. }) => Error::Divergence { epoch, step, source },
        other => other,
    }
}

fn embed_all<T: Scalar>(model: &SppModel, store: &ParamStore<T>, data: &FrameSequence<T>) -> Result<Vec<FrameEmbedding<T>>> {
    data.frames().iter().enumerate().map(|(t, f)| model.encode(store, f, t)).collect()
}

fn evaluate_decoder<T: Scalar>(
    decoder: &Decoder,
    store: &ParamStore<T>,
    embeddings: &[FrameEmbedding<T>],
    data: &FrameSequence<T>,
) -> Result<Vec<FrameMetrics>> {
    embeddings
        .iter()
        .zip(data.frames())
        .map(|(e, gt)| frame_metrics(e.t, &decoder.decode_frame(store, e)?, gt, decoder.config()))
        .collect()
}

/// Fits a fresh model to `data`.
pub fn train<T: Scalar>(data: &FrameSequence<T>, cfg: &SppConfig, tcfg: &TrainConfig) -> Result<(Checkpoint, TrainReport)> {
    train_with_progress(data, cfg, tcfg, |_| {})
}

/// [`train`], calling `progress` with every report row as it is produced.
pub fn train_with_progress<T: Scalar>(
    data: &FrameSequence<T>,
    cfg: &SppConfig,
    tcfg: &TrainConfig,
    mut progress: impl FnMut(&EpochRow),
) -> Result<(Checkpoint, TrainReport)> {
    cfg.validate()?;
    tcfg.validate()?;
    check_data(data, cfg)?;
    let (model, mut store) = SppModel::init::<T>(cfg, tcfg.seed)?;
    let targets: Vec<PatchSet<T>> = data
        .frames()
        .iter()
        .map(|f| spp::split_with(f, cfg.r, cfg.layout))
        .collect::<Result<_>>()?;
    let mut adam = Adam::new(tcfg.adam(), &store);
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let steps_per_epoch = data.len().div_ceil(tcfg.batch_size);
    let total_steps = steps_per_epoch * tcfg.epochs;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rows = Vec::new();
    let mut step = 0;
    for epoch in 1..=tcfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for batch in order.chunks(tcfg.batch_size) {
            let tape = Tape::new();
            let p = store.bind(&tape);
            let mut total = None;
            for &t in batch {
                let on_err = diverged(epoch, step);
                let x = tape.constant(data.frames()[t].clone());
                let z = model.encoder.forward(&p, x).map_err(&on_err)?;
                let pred = model.decoder.decode_all(&p, z, t).map_err(&on_err)?;
                let (loss, _) = composite_loss_var(&targets[t], pred, cfg).map_err(&on_err)?;
                total = Some(match total {
                    Some(acc) => loss.add(acc).map_err(|e| on_err(e.into()))?,
                    None => loss,
                });
            }
            let on_err = diverged(epoch, step);
            let loss = total
                .expect("non-empty batch")
                .mul_scalar(T::of(1.0 / batch.len() as f64))
                .map_err(|e| on_err(e.into()))?;
            tape.backward(loss).map_err(|e| on_err(e.into()))?;
            let grads: Vec<Tensor<T>> = p.iter().map(|&v| tape.grad_or_zeros(v)).collect();
            lr = tcfg.lr_at(step, total_steps);
            adam.step(&mut store, &grads, lr);
            loss_sum += loss.item().as_f64() * batch.len() as f64;
            step += 1;
        }
        if epoch % tcfg.eval_every == 0 || epoch == tcfg.epochs {
            let embeddings = embed_all(&model, &store, data)?;
            let metrics = evaluate_decoder(&model.decoder, &store, &embeddings, data)?;
            let (psnr, ms_ssim) = mean_metrics(&metrics);
            let row = EpochRow {
                epoch,
                loss: loss_sum / data.len() as f64,
                psnr,
                ms_ssim,
                lr,
                wall_secs: started.elapsed().as_secs_f64(),
            };
            progress(&row);
            rows.push(row);
        }
    }
    let embeddings = embed_all(&model, &store, data)?;
    let mut params = ParamStore::new();
    for (name, t) in store.iter() {
        params.add(name, t.cast::<f32>());
    }
    for e in &embeddings {
        params.add(embedding_name(e.t), e.z.cast::<f32>());
    }
    let ckpt = Checkpoint {
        config: cfg.clone(),
        train: Some(tcfg.clone()),
        params,
    };
    let report = TrainReport {
        rows,
        param_count: store.num_scalars(),
        decoder_param_count: cfg.decoder_param_count()?,
        steps: total_steps,
        checkpoint: None,
    };
    Ok((ckpt, report))
}

/// Decodes every frame stored in `ckpt`.
pub fn reconstruct(ckpt: &Checkpoint) -> Result<Vec<Tensor<f32>>> {
    let (decoder, store) = ckpt.decoder::<f32>()?;
    (0..ckpt.config.frames)
        .map(|t| decoder.decode_frame(&store, &ckpt.embedding(t)?))
        .collect()
}

/// Per-frame PSNR and MS-SSIM of the full reconstructions of `ckpt`
/// against `data`, in frame order.
pub fn evaluate<T: Scalar>(ckpt: &Checkpoint, data: &FrameSequence<T>) -> Result<Vec<FrameMetrics>> {
    let data = data.cast::<f32>();
    check_data(&data, &ckpt.config)?;
    let (decoder, store) = ckpt.decoder::<f32>()?;
    let embeddings = (0..data.len()).map(|t| ckpt.embedding(t)).collect::<Result<Vec<_>>>()?;
    evaluate_decoder(&decoder, &store, &embeddings, &data)
}
