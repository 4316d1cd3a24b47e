mod config;
mod manifest;

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use spp_core::codec::{BITSTREAM_MAGIC, CHECKPOINT_MAGIC};
use spp_core::toy1d::{SignalSpec, Strategy, ToyBench, ToySpec};
use spp_core::trainer::{mean_metrics, reconstruct};
use spp_core::videoio::{write_frames, ImageFormat};
use spp_core::{
    evaluate, rd_point, train_with_progress, Bitstream, Checkpoint, EntropyCoder, FrameMetrics, PatchLayout,
    RdPoint, SppConfig, SynthKind, UpsampleMode,
};

use config::{layered, parse_enum, parse_size, read_config_value, usage, DataConfig, RunConfig, UsageError};
use manifest::{beside, now, RunManifest};

#[derive(Parser)]
#[command(name = "spp", version, about = "Fit, code and evaluate patch-based neural video representations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a clip; writes model.ckpt, report.csv and manifest.json.
    Train(TrainArgs),
    /// Decode every frame of a checkpoint or bitstream to image files.
    Decode(DecodeArgs),
    /// Per-frame PSNR / MS-SSIM of a checkpoint or bitstream against a clip.
    Eval(EvalArgs),
    /// Quantize and entropy-code a checkpoint into a bitstream.
    Compress(CompressArgs),
    /// Decode a bitstream back into a (dequantized) checkpoint.
    Decompress(DecompressArgs),
    /// Train at several widths and code each at several bit depths.
    RdSweep(RdSweepArgs),
    /// Fit a 1D signal with four strategies under a shared parameter budget.
    Toy1d(ToyArgs),
}

#[derive(Args, Default)]
struct DataArgs {
    /// Synthetic clip: moving-gradient, bouncing-box or texture-noise.
    #[arg(long, value_name = "KIND", value_parser = parse_enum::<SynthKind>, conflicts_with = "input")]
    synth: Option<SynthKind>,
    /// Directory of PPM/PNG frames, loaded in lexicographic order.
    #[arg(long, value_name = "DIR")]
    input: Option<PathBuf>,
    /// Filename glob for --input.
    #[arg(long)]
    pattern: Option<String>,
    /// Center-crop input frames to HxW.
    #[arg(long, value_name = "HxW", value_parser = parse_size)]
    crop: Option<[usize; 2]>,
    /// Synthetic clip length, or leading frames kept from --input.
    #[arg(long)]
    frames: Option<usize>,
    /// Synthetic frame size.
    #[arg(long, value_name = "HxW", value_parser = parse_size)]
    size: Option<[usize; 2]>,
    /// Seed of the synthetic clip.
    #[arg(long)]
    data_seed: Option<u64>,
}

impl DataArgs {
    fn given(&self) -> bool {
        self.synth.is_some()
            || self.input.is_some()
            || self.pattern.is_some()
            || self.crop.is_some()
            || self.frames.is_some()
            || self.size.is_some()
            || self.data_seed.is_some()
    }

    fn apply(&self, d: &mut DataConfig) {
        if let Some(kind) = self.synth {
            d.synth = Some(kind);
            d.input = None;
        }
        if let Some(dir) = &self.input {
            d.input = Some(dir.clone());
            d.synth = None;
        }
        if self.pattern.is_some() {
            d.pattern = self.pattern.clone();
        }
        if self.crop.is_some() {
            d.crop = self.crop;
        }
        if self.frames.is_some() {
            d.frames = self.frames;
        }
        if let Some(size) = self.size {
            d.size = size;
        }
        if let Some(seed) = self.data_seed {
            d.seed = seed;
        }
    }
}

#[derive(Args, Default)]
struct ModelArgs {
    /// Scale every decoder width by this factor.
    #[arg(long)]
    width_factor: Option<f64>,
    /// Rearrangement factor (r x r patches).
    #[arg(long)]
    r: Option<usize>,
    /// Patch layout: interleaved or tiled.
    #[arg(long, value_parser = parse_enum::<PatchLayout>)]
    layout: Option<PatchLayout>,
    /// Decoder upsampling strides, e.g. 2,2,2.
    #[arg(long, value_delimiter = ',')]
    strides: Option<Vec<usize>>,
    /// First decoder block conditioned on the patch index.
    #[arg(long)]
    cond_split: Option<usize>,
    /// Upsampling: nearest or pixel-shuffle.
    #[arg(long, value_parser = parse_enum::<UpsampleMode>)]
    upsample: Option<UpsampleMode>,
    #[arg(long)]
    embed_channels: Option<usize>,
}

#[derive(Args, Default)]
struct TrainOpts {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Initialization and shuffling seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Report interval in epochs.
    #[arg(long)]
    eval_every: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    opts: TrainOpts,
    /// JSON config (or a previous run's manifest.json); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// No per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct DecodeArgs {
    /// Checkpoint or bitstream.
    model: PathBuf,
    /// Output directory for frame_NNNN images.
    #[arg(long)]
    out: PathBuf,
    /// ppm or png.
    #[arg(long, default_value = "ppm", value_parser = parse_enum::<ImageFormat>)]
    format: ImageFormat,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint or bitstream.
    model: PathBuf,
    /// Reference clip; defaults to the clip recorded in the training manifest.
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for eval.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompressArgs {
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 8)]
    bits: u8,
    /// range or huffman.
    #[arg(long, default_value = "range", value_parser = parse_enum::<EntropyCoder>)]
    coder: EntropyCoder,
    /// Reference clip for the RD row; defaults to the training manifest's.
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bitstream path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecompressArgs {
    bitstream: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RdSweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    opts: TrainOpts,
    /// Decoder width factors.
    #[arg(long, default_value = "0.5,1.0,2.0", value_delimiter = ',')]
    widths: Vec<f64>,
    /// Quantization bit depths.
    #[arg(long, default_value = "8", value_delimiter = ',')]
    bits: Vec<u8>,
    #[arg(long, default_value = "range", value_parser = parse_enum::<EntropyCoder>)]
    coder: EntropyCoder,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long)]
    n: Option<usize>,
    /// mixture or constant:VALUE.
    #[arg(long, value_parser = parse_signal)]
    signal: Option<SignalSpec>,
    #[arg(long)]
    segments: Option<usize>,
    #[arg(long)]
    patches: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict to some strategies, e.g. global,spp-style.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_signal(s: &str) -> Result<SignalSpec, String> {
    match s.split_once(':') {
        None if s == "mixture" => match ToySpec::default().signal {
            m @ SignalSpec::Mixture { .. } => Ok(m),
            _ => unreachable!(),
        },
        Some(("constant", v)) => v
            .parse()
            .map(|value| SignalSpec::Constant { value })
            .map_err(|_| format!("bad constant {v:?}")),
        _ => Err(format!("expected mixture or constant:VALUE, got {s:?}")),
    }
}

fn apply_model(args: &ModelArgs, m: &mut SppConfig) {
    if let Some(r) = args.r {
        m.r = r;
    }
    if let Some(layout) = args.layout {
        m.layout = layout;
    }
    if let Some(strides) = &args.strides {
        m.cond_split = strides.len().saturating_sub(1);
        m.strides = strides.clone();
    }
    if let Some(c) = args.cond_split {
        m.cond_split = c;
    }
    if let Some(u) = args.upsample {
        m.upsample = u;
    }
    if let Some(e) = args.embed_channels {
        m.embed_channels = e;
    }
    if let Some(f) = args.width_factor {
        *m = m.with_width_factor(f);
    }
}

fn apply_train(args: &TrainOpts, t: &mut spp_core::TrainConfig) {
    if let Some(e) = args.epochs {
        t.epochs = e;
    }
    if let Some(lr) = args.lr {
        t.learning_rate = lr;
    }
    if let Some(s) = args.seed {
        t.seed = s;
    }
    if let Some(b) = args.batch_size {
        t.batch_size = b;
    }
    if let Some(e) = args.eval_every {
        t.eval_every = e;
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Fits the model described by `cfg`; the model's clip geometry follows the
/// loaded data.
fn fit(cfg: &mut RunConfig, quiet: bool) -> Result<(Checkpoint, spp_core::TrainReport)> {
    let clip = cfg.data.load()?;
    let [_, h, w] = clip.frame_shape();
    cfg.model.frames = clip.len();
    cfg.model.height = h;
    cfg.model.width = w;
    let epochs = cfg.train.epochs;
    let (ckpt, report) = train_with_progress(&clip, &cfg.model, &cfg.train, |row| {
        if !quiet {
            eprintln!(
                "epoch {:>4}/{epochs}  loss {:.5}  psnr {:.2}  ms-ssim {:.4}  ({:.1}s)",
                row.epoch, row.loss, row.psnr, row.ms_ssim, row.wall_secs
            );
        }
    })?;
    Ok((ckpt, report))
}

fn resolve_run(config: Option<&Path>, data: &DataArgs, model: &ModelArgs, opts: &TrainOpts) -> Result<RunConfig> {
    let mut cfg: RunConfig = layered(&RunConfig::default(), config)?;
    data.apply(&mut cfg.data);
    apply_model(model, &mut cfg.model);
    apply_train(opts, &mut cfg.train);
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let started = now();
    let mut cfg = resolve_run(args.config.as_deref(), &args.data, &args.model, &args.opts)?;
    create_dir(&args.out)?;
    let (ckpt, report) = fit(&mut cfg, args.quiet)?;
    let ckpt_path = args.out.join("model.ckpt");
    let report_path = args.out.join("report.csv");
    ckpt.save(&ckpt_path)?;
    write_text(&report_path, &report.to_csv())?;
    let mut m = RunManifest::new("train", &cfg, Some(cfg.train.seed), started)?;
    m.inputs.extend(cfg.data.input.clone());
    m.outputs = vec![ckpt_path, report_path];
    m.write(&args.out.join("manifest.json"))?;
    let last = report.last();
    println!(
        "trained {} params for {} epochs: psnr {:.2} dB, ms-ssim {:.4}",
        report.param_count, last.epoch, last.psnr, last.ms_ssim
    );
    Ok(())
}

/// Loads a checkpoint or a bitstream (decoded to a checkpoint), by magic.
fn load_model(path: &Path) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    let mut file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    file.read_exact(&mut magic)
        .map_err(|_| UsageError(format!("{} is too short to be a model", path.display())))?;
    if &magic == BITSTREAM_MAGIC {
        Ok(Bitstream::load(path)?.to_checkpoint()?)
    } else if &magic == CHECKPOINT_MAGIC {
        Ok(Checkpoint::load(path)?)
    } else {
        usage(format!("{} is neither a checkpoint nor a bitstream", path.display()))
    }
}

fn cmd_decode(args: DecodeArgs) -> Result<()> {
    let started = now();
    let ckpt = load_model(&args.model)?;
    let frames = reconstruct(&ckpt)?;
    let paths = write_frames(&args.out, &frames, args.format)?;
    let mut m = RunManifest::new("decode", serde_json::json!({ "format": args.format }), None, started)?;
    m.inputs.push(args.model.clone());
    m.outputs = paths;
    m.write(&args.out.join("manifest.json"))?;
    println!("decoded {} frames to {}", frames.len(), args.out.display());
    Ok(())
}

/// Reference clip for `model`: flags and --config when given, else the data
/// record of the `manifest.json` next to the model, else the defaults.
fn reference_data(model: &Path, data: &DataArgs, config: Option<&Path>) -> Result<DataConfig> {
    #[derive(Serialize, Deserialize, Default)]
    #[serde(default)]
    struct WithData {
        data: DataConfig,
    }
    let beside_manifest = model.parent().map(|d| d.join("manifest.json")).filter(|p| p.is_file());
    let mut d = match (config, &beside_manifest) {
        (Some(path), _) => layered(&WithData::default(), Some(path))?.data,
        (None, Some(path)) if !data.given() => {
            let value = read_config_value(path)?;
            serde_json::from_value::<WithData>(value).map(|w| w.data).unwrap_or_default()
        }
        _ => DataConfig::default(),
    };
    data.apply(&mut d);
    Ok(d)
}

fn metrics_csv(rows: &[FrameMetrics]) -> String {
    let mut s = format!("{}\n", FrameMetrics::CSV_HEADER);
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let started = now();
    let ckpt = load_model(&args.model)?;
    let data = reference_data(&args.model, &args.data, args.config.as_deref())?;
    let rows = evaluate(&ckpt, &data.load()?)?;
    create_dir(&args.out)?;
    let csv_path = args.out.join("eval.csv");
    write_text(&csv_path, &metrics_csv(&rows))?;
    let mut m = RunManifest::new("eval", serde_json::json!({ "data": data }), None, started)?;
    m.inputs.push(args.model.clone());
    m.outputs.push(csv_path);
    m.write(&args.out.join("manifest.json"))?;
    let (psnr, ms_ssim) = mean_metrics(&rows);
    println!("{} frames: psnr {psnr:.2} dB, ms-ssim {ms_ssim:.4}", rows.len());
    Ok(())
}

fn rd_csv(rows: &[(Option<f64>, RdPoint)]) -> String {
    let mut s = String::from("width_factor,");
    s.push_str(RdPoint::CSV_HEADER);
    s.push('\n');
    for (f, p) in rows {
        let f = f.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("{f},{}\n", p.csv_row()));
    }
    s
}

#[derive(Serialize)]
#[serde(rename_all = "kebab-case")]
struct CompressRecord<'a> {
    bits: u8,
    coder: EntropyCoder,
    data: &'a DataConfig,
}

fn cmd_compress(args: CompressArgs) -> Result<()> {
    let started = now();
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let stream = Bitstream::from_checkpoint(&ckpt, args.bits, args.coder)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let bytes = stream.save(&args.out)?;
    let data = reference_data(&args.checkpoint, &args.data, args.config.as_deref())?;
    let point = rd_point(&ckpt, &data.load()?, args.bits, args.coder)?;
    let rd_path = args.out.with_extension("rd.csv");
    write_text(&rd_path, &rd_csv(&[(None, point.clone())]))?;
    let record = CompressRecord {
        bits: args.bits,
        coder: args.coder,
        data: &data,
    };
    let mut m = RunManifest::new("compress", &record, None, started)?;
    m.inputs.push(args.checkpoint.clone());
    m.outputs = vec![args.out.clone(), rd_path];
    m.write(&beside(&args.out))?;
    println!(
        "{bytes} bytes, {:.4} bpp, psnr {:.2} dB at {} bits",
        point.bpp, point.psnr, args.bits
    );
    Ok(())
}

fn cmd_decompress(args: DecompressArgs) -> Result<()> {
    let started = now();
    let stream = Bitstream::load(&args.bitstream)?;
    let ckpt = stream.to_checkpoint()?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    ckpt.save(&args.out)?;
    let mut m = RunManifest::new("decompress", serde_json::json!({}), None, started)?;
    m.inputs.push(args.bitstream.clone());
    m.outputs.push(args.out.clone());
    m.write(&beside(&args.out))?;
    println!("{} tensors, {} scalars", stream.tensors.len(), stream.scalar_count());
    Ok(())
}

#[derive(Serialize)]
#[serde(rename_all = "kebab-case")]
struct SweepRecord<'a> {
    #[serde(flatten)]
    run: &'a RunConfig,
    widths: &'a [f64],
    bits: &'a [u8],
    coder: EntropyCoder,
}

fn cmd_rd_sweep(args: RdSweepArgs) -> Result<()> {
    let started = now();
    if args.widths.is_empty() || args.bits.is_empty() {
        return usage("--widths and --bits need at least one entry");
    }
    let base = resolve_run(args.config.as_deref(), &args.data, &args.model, &args.opts)?;
    create_dir(&args.out)?;
    let clip = base.data.load()?;
    let mut rows = Vec::new();
    let mut outputs = Vec::new();
    for &factor in &args.widths {
        let mut cfg = base.clone();
        cfg.model = cfg.model.with_width_factor(factor);
        let dir = args.out.join(format!("w{factor}"));
        create_dir(&dir)?;
        let (ckpt, report) = fit(&mut cfg, args.quiet)?;
        ckpt.save(&dir.join("model.ckpt"))?;
        write_text(&dir.join("report.csv"), &report.to_csv())?;
        outputs.extend([dir.join("model.ckpt"), dir.join("report.csv")]);
        for &bits in &args.bits {
            let path = dir.join(format!("model.b{bits}.bits"));
            Bitstream::from_checkpoint(&ckpt, bits, args.coder)?.save(&path)?;
            outputs.push(path);
            let point = rd_point(&ckpt, &clip, bits, args.coder)?;
            eprintln!(
                "width {factor}: {bits} bits, {:.4} bpp, {:.2} dB, {} params",
                point.bpp, point.psnr, point.param_count
            );
            rows.push((Some(factor), point));
        }
    }
    let csv_path = args.out.join("rd.csv");
    let csv = rd_csv(&rows);
    write_text(&csv_path, &csv)?;
    print!("{csv}");
    let record = SweepRecord {
        run: &base,
        widths: &args.widths,
        bits: &args.bits,
        coder: args.coder,
    };
    let mut m = RunManifest::new("rd-sweep", &record, Some(base.train.seed), started)?;
    m.inputs.extend(base.data.input.clone());
    m.outputs = outputs;
    m.outputs.push(csv_path);
    m.write(&args.out.join("manifest.json"))?;
    Ok(())
}

fn cmd_toy1d(args: ToyArgs) -> Result<()> {
    let started = now();
    let mut spec: ToySpec = layered(&ToySpec::default(), args.config.as_deref())?;
    macro_rules! set {
        ($($field:ident <- $flag:expr),*) => { $(if let Some(v) = $flag { spec.$field = v; })* };
    }
    set!(n <- args.n, signal <- args.signal.clone(), segments <- args.segments, patches <- args.patches,
         budget <- args.budget, steps <- args.steps, learning_rate <- args.lr, seed <- args.seed);
    let strategies = match &args.strategies {
        None => Strategy::ALL.to_vec(),
        Some(names) => names.iter().map(|s| s.parse()).collect::<spp_core::Result<Vec<Strategy>>>()?,
    };
    spec.validate()?;
    let mut bench = ToyBench {
        spec: spec.clone(),
        signal: spp_core::toy1d::toy_signal(&spec),
        runs: Vec::new(),
    };
    for s in strategies {
        let run = spp_core::toy1d::run_toy::<f32>(&spec, s)?;
        eprintln!("{:13} {} params, final mse {:.3e}", s.name(), run.param_count, run.final_mse);
        bench.runs.push(run);
    }
    create_dir(&args.out)?;
    let curves = args.out.join("curves.csv");
    let recon = args.out.join("reconstructions.csv");
    let summary = args.out.join("summary.csv");
    write_text(&curves, &bench.curves_csv())?;
    write_text(&recon, &bench.reconstructions_csv())?;
    let mut s = String::from("strategy,param_count,final_mse,seam\n");
    for r in &bench.runs {
        let seam = bench.seam(r.strategy).unwrap_or(0.0);
        s.push_str(&format!("{},{},{:.9e},{seam:.9e}\n", r.strategy.name(), r.param_count, r.final_mse));
    }
    write_text(&summary, &s)?;
    print!("{s}");
    let mut m = RunManifest::new("toy1d", &spec, Some(spec.seed), started)?;
    m.outputs = vec![curves, recon, summary];
    m.write(&args.out.join("manifest.json"))?;
    Ok(())
}

/// 2 for bad settings, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<serde_json::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<spp_core::Error>() {
            return if e.is_config() { 2 } else { 1 };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compress(a) => cmd_compress(a),
        Command::Decompress(a) => cmd_decompress(a),
        Command::RdSweep(a) => cmd_rd_sweep(a),
        Command::Toy1d(a) => cmd_toy1d(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
