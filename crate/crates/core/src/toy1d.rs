//! One-dimensional fitting bench: the same signal fit point-wise, per
//! segment, globally, and as interleaved strided subsequences, under matched
//! parameter budgets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use spp_diffcore::{Adam, AdamConfig, ParamId, ParamStore, Scalar, Tape, Tensor, Var};

use crate::error::{config, Error, Result};
use crate::model::layers::{fan_in_uniform, Conv, Linear};
use crate::model::raw_index_encoding;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Coordinate MLP: `u -> x(u)`.
    PointWise,
    /// Independent latent-to-vector decoders, one per contiguous segment.
    SegmentWise,
    /// One latent-to-vector decoder for the whole signal.
    Global,
    /// One decoder with a shared trunk producing the `P` strided
    /// subsequences `x[p::P]`, conditioned on `p` in its last block.
    SppStyle,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::PointWise,
        Strategy::SegmentWise,
        Strategy::Global,
        Strategy::SppStyle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::PointWise => "point-wise",
            Strategy::SegmentWise => "segment-wise",
            Strategy::Global => "global",
            Strategy::SppStyle => "spp-style",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SignalSpec {
    /// Sum of random sinusoids plus random step jumps.
    Mixture { sinusoids: usize, jumps: usize },
    Constant { value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct ToySpec {
    pub n: usize,
    pub signal: SignalSpec,
    pub segments: usize,
    pub patches: usize,
    /// Target number of trainable scalars per strategy.
    pub budget: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Loss-curve sampling interval in steps.
    pub record_every: usize,
    /// Frequency levels of the point-wise coordinate encoding.
    pub pe_levels: usize,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            n: 512,
            signal: SignalSpec::Mixture { sinusoids: 5, jumps: 4 },
            segments: 8,
            patches: 4,
            budget: 4800,
            steps: 3000,
            learning_rate: 3e-3,
            seed: 0,
            record_every: 10,
            pe_levels: 6,
        }
    }
}

/// Allowed relative deviation of a strategy's size from the budget.
pub const BUDGET_TOLERANCE: f64 = 0.05;

impl ToySpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.segments == 0 || self.patches == 0 {
            return config("n, segments and patches must be positive");
        }
        if self.n % self.segments != 0 || self.n % self.patches != 0 {
            return config(format!(
                "n = {} must be divisible by segments ({}) and patches ({})",
                self.n, self.segments, self.patches
            ));
        }
        if (self.n / self.segments) % 2 != 0 || (self.n / self.patches) % 2 != 0 {
            return config("segment and patch lengths must be even");
        }
        if self.steps == 0 || self.record_every == 0 || self.budget == 0 {
            return config("steps, record interval and budget must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return config("invalid learning rate");
        }
        Ok(())
    }
}

/// The bench signal, deterministic in `spec.seed`.
pub fn toy_signal(spec: &ToySpec) -> Vec<f64> {
    let n = spec.n;
    match spec.signal {
        SignalSpec::Constant { value } => vec![value; n],
        SignalSpec::Mixture { sinusoids, jumps } => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let waves: Vec<(f64, f64, f64)> = (0..sinusoids)
                .map(|_| {
                    (
                        rng.gen_range(0.15..0.45),
                        rng.gen_range(1..=24) as f64,
                        rng.gen_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect();
            let steps: Vec<(usize, f64)> = (0..jumps)
                .map(|_| {
                    let h: f64 = rng.gen_range(0.3..0.7);
                    (rng.gen_range(1..n), if rng.gen_bool(0.5) { h } else { -h })
                })
                .collect();
            (0..n)
                .map(|j| {
                    let u = j as f64 / n as f64;
                    let smooth: f64 = waves
                        .iter()
                        .map(|&(a, f, ph)| a * (std::f64::consts::TAU * f * u + ph).sin())
                        .sum();
                    let step: f64 = steps.iter().filter(|&&(at, _)| j >= at).map(|&(_, h)| h).sum();
                    smooth + step
                })
                .collect()
        }
    }
}

/// Splits `x` into the `p` strided subsequences `x[k::p]`.
pub fn deinterleave<T: Copy>(x: &[T], p: usize) -> Vec<Vec<T>> {
    (0..p).map(|k| x.iter().skip(k).step_by(p).copied().collect()).collect()
}

/// Inverse of [`deinterleave`].
pub fn interleave<T: Copy>(parts: &[Vec<T>]) -> Vec<T> {
    let p = parts.len();
    let n: usize = parts.iter().map(Vec::len).sum();
    (0..n).map(|j| parts[j % p][j / p]).collect()
}

/// Mean absolute second difference at `boundaries` minus the same statistic
/// over every other interior index not adjacent to a boundary. Boundary `b`
/// is the first sample of a segment; its second difference is centered on
/// `b`.
pub fn seam_metric(recon: &[f64], boundaries: &[usize]) -> f64 {
    let n = recon.len();
    let d2 = |i: usize| (recon[i + 1] - 2.0 * recon[i] + recon[i - 1]).abs();
    let inner: Vec<usize> = boundaries.iter().copied().filter(|&b| b >= 1 && b + 1 < n).collect();
    if inner.is_empty() || n < 3 {
        return 0.0;
    }
    let near = |i: usize| inner.iter().any(|&b| i.abs_diff(b) <= 1);
    let at: f64 = inner.iter().map(|&b| d2(b)).sum::<f64>() / inner.len() as f64;
    let others: Vec<f64> = (1..n - 1).filter(|&i| !near(i)).map(d2).collect();
    if others.is_empty() {
        return at;
    }
    at - others.iter().sum::<f64>() / others.len() as f64
}

/// Segment starts of an `n`-sample signal cut into `segments` pieces.
pub fn segment_boundaries(n: usize, segments: usize) -> Vec<usize> {
    (1..segments).map(|k| k * n / segments).collect()
}

/// Latent length and number of doubling blocks for an output of `len`.
fn decoder_depth(len: usize) -> (usize, usize) {
    let mut l0 = len;
    let mut blocks = 0;
    while l0 % 2 == 0 && (blocks == 0 || l0 / 2 >= 8) {
        l0 /= 2;
        blocks += 1;
    }
    (l0, blocks)
}

/// Latent-to-vector decoder: a learned `[1, c_lat, 1, l0]` latent, doubling
/// blocks (nearest upsample, 1x3 conv, GELU) and a 1x3 head to one channel.
/// With `patches > 0` the last block is modulated per patch index.
#[derive(Clone, Debug)]
struct VectorDecoder {
    latent: ParamId,
    blocks: Vec<Conv>,
    head: Conv,
    modulation: Option<(Linear, Linear, usize)>,
}

const PATCH_PE_LEVELS: usize = 2;

impl VectorDecoder {
    fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        len: usize,
        (c, c_lat): (usize, usize),
        patches: usize,
        rng: &mut R,
    ) -> Self {
        let (l0, depth) = decoder_depth(len);
        let latent = store.add(format!("{name}.latent"), fan_in_uniform(&[1, c_lat, 1, l0], 1, rng));
        let mut blocks = Vec::with_capacity(depth);
        let mut c_in = c_lat;
        for k in 0..depth {
            blocks.push(Conv::row(store, &format!("{name}.block{k}"), (c_in, c), 3, rng));
            c_in = c;
        }
        let modulation = (patches > 0).then(|| {
            let d = 2 * PATCH_PE_LEVELS;
            (
                Linear::new(store, &format!("{name}.scale"), d, c_in, rng),
                Linear::new(store, &format!("{name}.shift"), d, c_in, rng),
                patches,
            )
        });
        let head = Conv::row(store, &format!("{name}.head"), (c_in, 1), 3, rng);
        Self {
            latent,
            blocks,
            head,
            modulation,
        }
    }

    /// Output `[rows, len]` with `rows = patches` when modulated, else 1.
    fn forward<'t, T: Scalar>(&self, p: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let mut h = p[self.latent.0];
        let last = self.blocks.len().saturating_sub(1);
        for (k, conv) in self.blocks.iter().enumerate() {
            if k == last {
                if let Some((scale, shift, patches)) = &self.modulation {
                    h = h.broadcast_leading(*patches)?;
                    h = conv.forward(p, h.upsample_nearest(1, 2)?)?.gelu()?;
                    let mut codes = Vec::new();
                    for i in 0..*patches {
                        codes.extend(raw_index_encoding(i, *patches, PATCH_PE_LEVELS, 2.0)?.into_iter().map(T::of));
                    }
                    let e = h.tape().constant(Tensor::new(&[*patches, 2 * PATCH_PE_LEVELS], codes)?);
                    let s = scale.forward(p, e)?.add_scalar(T::one())?;
                    let b = shift.forward(p, e)?;
                    h = h.channel_affine(s, b)?;
                    continue;
                }
            }
            h = conv.forward(p, h.upsample_nearest(1, 2)?)?.gelu()?;
        }
        let out = self.head.forward(p, h)?;
        let s = out.shape();
        Ok(out.reshape(&[s[0], s[3]])?)
    }
}

#[derive(Clone, Debug)]
enum ToyNet {
    Point {
        layers: [Linear; 3],
        levels: usize,
    },
    Segments(Vec<VectorDecoder>),
    Global(VectorDecoder),
    Spp(VectorDecoder),
}

fn build<T: Scalar>(
    strategy: Strategy,
    spec: &ToySpec,
    (c, c_lat): (usize, usize),
    seed: u64,
) -> (ToyNet, ParamStore<T>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let net = match strategy {
        Strategy::PointWise => {
            let d = 2 * spec.pe_levels;
            ToyNet::Point {
                layers: [
                    Linear::new(&mut store, "point.fc0", d, c, &mut rng),
                    Linear::new(&mut store, "point.fc1", c, c, &mut rng),
                    Linear::new(&mut store, "point.fc2", c, 1, &mut rng),
                ],
                levels: spec.pe_levels,
            }
        }
        Strategy::SegmentWise => {
            let len = spec.n / spec.segments;
            ToyNet::Segments(
                (0..spec.segments)
                    .map(|k| VectorDecoder::new(&mut store, &format!("segment{k}"), len, (c, c_lat), 0, &mut rng))
                    .collect(),
            )
        }
        Strategy::Global => ToyNet::Global(VectorDecoder::new(&mut store, "global", spec.n, (c, c_lat), 0, &mut rng)),
        Strategy::SppStyle => ToyNet::Spp(VectorDecoder::new(
            &mut store,
            "spp",
            spec.n / spec.patches,
            (c, c_lat),
            spec.patches,
            &mut rng,
        )),
    };
    (net, store)
}

fn coordinate_encoding<T: Scalar>(n: usize, levels: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(n * 2 * levels);
    for j in 0..n {
        data.extend(raw_index_encoding(j, n, levels, 2.0)?.into_iter().map(T::of));
    }
    Ok(Tensor::new(&[n, 2 * levels], data)?)
}

impl ToyNet {
    /// Full reconstruction `[n]`.
    fn forward<'t, T: Scalar>(&self, p: &[Var<'t, T>], n: usize) -> Result<Var<'t, T>> {
        let tape = p[0].tape();
        match self {
            ToyNet::Point { layers, levels } => {
                let x = tape.constant(coordinate_encoding(n, *levels)?);
                let h = layers[0].forward(p, x)?.gelu()?;
                let h = layers[1].forward(p, h)?.gelu()?;
                Ok(layers[2].forward(p, h)?.reshape(&[n])?)
            }
            ToyNet::Segments(nets) => {
                let parts = nets.iter().map(|d| d.forward(p)).collect::<Result<Vec<_>>>()?;
                Ok(Var::concat(&parts, 1)?.reshape(&[n])?)
            }
            ToyNet::Global(d) => Ok(d.forward(p)?.reshape(&[n])?),
            ToyNet::Spp(d) => {
                // [P, n/P] -> [n/P, P] flattened is exactly the interleaving.
                let out = d.forward(p)?;
                let s = out.shape();
                let cols: Vec<Var<'t, T>> = (0..s[1])
                    .map(|k| out.slice(1, k, 1))
                    .collect::<spp_diffcore::Result<_>>()?;
                Ok(Var::concat(&cols, 0)?.reshape(&[n])?)
            }
        }
    }
}

fn size_knobs(strategy: Strategy) -> Vec<(usize, usize)> {
    match strategy {
        Strategy::PointWise => (1..=160).map(|h| (h, 0)).collect(),
        _ => (1..=48).flat_map(|c| (1..=32).map(move |l| (c, l))).collect(),
    }
}

/// Relative slack within which the widest network is preferred over the
/// count nearest the budget.
const MATCH_SLACK: f64 = 0.02;

/// Width knobs for `strategy` at the budget, and the resulting count: the
/// widest channel count whose size is within [`MATCH_SLACK`] of the budget,
/// else the size nearest the budget.
pub fn match_budget(strategy: Strategy, spec: &ToySpec) -> Result<((usize, usize), usize)> {
    let dev = |count: usize| count.abs_diff(spec.budget) as f64 / spec.budget as f64;
    let mut best: Option<((usize, usize), usize)> = None;
    for knobs in size_knobs(strategy) {
        let count = build::<f32>(strategy, spec, knobs, 0).1.num_scalars();
        let better = match best {
            None => true,
            Some((bk, b)) => match (dev(count) <= MATCH_SLACK, dev(b) <= MATCH_SLACK) {
                (true, true) => knobs.0 > bk.0 || (knobs.0 == bk.0 && dev(count) < dev(b)),
                (true, false) => true,
                (false, true) => false,
                (false, false) => dev(count) < dev(b),
            },
        };
        if better {
            best = Some((knobs, count));
        }
    }
    let (knobs, count) = best.expect("knob grid is non-empty");
    if dev(count) > BUDGET_TOLERANCE {
        return config(format!(
            "{} cannot match a budget of {} parameters (closest {count})",
            strategy.name(),
            spec.budget
        ));
    }
    Ok((knobs, count))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyRun {
    pub strategy: Strategy,
    pub param_count: usize,
    /// Channel width (hidden width for point-wise) and latent channels.
    pub knobs: (usize, usize),
    /// `(step, mse)`; step 0 is the initialization.
    pub curve: Vec<(usize, f64)>,
    pub reconstruction: Vec<f64>,
    pub final_mse: f64,
}

fn mse_of(recon: &[f64], target: &[f64]) -> f64 {
    recon.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / target.len() as f64
}

/// Fits `strategy` to the bench signal with a budget-matched network.
pub fn run_toy<T: Scalar>(spec: &ToySpec, strategy: Strategy) -> Result<ToyRun> {
    spec.validate()?;
    let target = toy_signal(spec);
    let (knobs, param_count) = match_budget(strategy, spec)?;
    let (net, mut store) = build::<T>(strategy, spec, knobs, spec.seed);
    let n = spec.n;
    let y = Tensor::new(&[n], target.iter().map(|&v| T::of(v)).collect())?;
    let mut adam = Adam::new(AdamConfig::default(), &store);
    let mut curve = Vec::new();
    let predict = |store: &ParamStore<T>| -> Result<Vec<f64>> {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        Ok(net.forward(&p, n)?.value().data().iter().map(|v| v.as_f64()).collect())
    };
    curve.push((0, mse_of(&predict(&store)?, &target)));
    for step in 1..=spec.steps {
        let tape = Tape::new();
        let p = store.bind(&tape);
        let loss = net.forward(&p, n)?.sub(tape.constant(y.clone()))?.sqr()?.mean()?;
        tape.backward(loss)?;
        let grads: Vec<Tensor<T>> = p.iter().map(|&v| tape.grad_or_zeros(v)).collect();
        let progress = (step - 1) as f64 / spec.steps as f64;
        let lr = 0.5 * spec.learning_rate * (1.0 + (std::f64::consts::PI * progress).cos());
        adam.step(&mut store, &grads, lr);
        if step % spec.record_every == 0 || step == spec.steps {
            curve.push((step, mse_of(&predict(&store)?, &target)));
        }
    }
    let reconstruction = predict(&store)?;
    let final_mse = mse_of(&reconstruction, &target);
    Ok(ToyRun {
        strategy,
        param_count,
        knobs,
        curve,
        reconstruction,
        final_mse,
    })
}

/// All four strategies on one spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyBench {
    pub spec: ToySpec,
    pub signal: Vec<f64>,
    pub runs: Vec<ToyRun>,
}

impl ToyBench {
    pub fn run<T: Scalar>(spec: &ToySpec) -> Result<Self> {
        Ok(Self {
            spec: spec.clone(),
            signal: toy_signal(spec),
            runs: Strategy::ALL.iter().map(|&s| run_toy::<T>(spec, s)).collect::<Result<_>>()?,
        })
    }

    pub fn get(&self, strategy: Strategy) -> Option<&ToyRun> {
        self.runs.iter().find(|r| r.strategy == strategy)
    }

    /// Seam statistic of a run at the segment boundaries.
    pub fn seam(&self, strategy: Strategy) -> Option<f64> {
        let b = segment_boundaries(self.spec.n, self.spec.segments);
        self.get(strategy).map(|r| seam_metric(&r.reconstruction, &b))
    }

    /// `strategy,step,mse` rows.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("strategy,step,mse\n");
        for r in &self.runs {
            for &(step, mse) in &r.curve {
                s.push_str(&format!("{},{step},{mse:.9e}\n", r.strategy.name()));
            }
        }
        s
    }

    /// `strategy,index,value` rows, with the signal itself as `target`.
    pub fn reconstructions_csv(&self) -> String {
        let mut s = String::from("strategy,index,value\n");
        for (j, v) in self.signal.iter().enumerate() {
            s.push_str(&format!("target,{j},{v:.9}\n"));
        }
        for r in &self.runs {
            for (j, v) in r.reconstruction.iter().enumerate() {
                s.push_str(&format!("{},{j},{v:.9}\n", r.strategy.name()));
            }
        }
        s
    }
}
