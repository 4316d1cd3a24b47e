//! Frame sequences: loading PPM/PNG frame directories, writing frames back
//! out, and synthetic test clips.

use std::fs;
use std::io::{BufReader, BufWriter, Cursor, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use spp_diffcore::{Scalar, Tensor};

use crate::error::{config, Error, Result};

/// Synthetic clip generators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    MovingGradient,
    BouncingBox,
    TextureNoise,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moving-gradient" => Ok(SynthKind::MovingGradient),
            "bouncing-box" => Ok(SynthKind::BouncingBox),
            "texture-noise" => Ok(SynthKind::TextureNoise),
            _ => config(format!(
                "unknown synthetic clip {s:?} (expected moving-gradient, bouncing-box or texture-noise)"
            )),
        }
    }
}

/// Where a sequence came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum FrameSource {
    Files { dir: PathBuf, files: Vec<String> },
    Synth { kind: SynthKind, seed: u64 },
}

/// Optional `manifest.json` next to input frames.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InputManifest {
    pub fps: Option<f64>,
    pub crop: Option<[usize; 2]>,
}

/// Time-ordered RGB frames `[3, H, W]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence<T> {
    frames: Vec<Tensor<T>>,
    pub source: FrameSource,
    pub fps: Option<f64>,
}

impl<T: Scalar> FrameSequence<T> {
    /// Values are clamped to `[0, 1]`.
    pub fn new(frames: Vec<Tensor<T>>, source: FrameSource) -> Result<Self> {
        let Some(first) = frames.first() else {
            return config("a frame sequence needs at least one frame");
        };
        let shape = first.shape().to_vec();
        if shape.len() != 3 {
            return config(format!("frames must be [C, H, W], got {shape:?}"));
        }
        if let Some((t, f)) = frames.iter().enumerate().find(|(_, f)| f.shape() != shape.as_slice()) {
            return config(format!("frame {t} has shape {:?}, frame 0 has {shape:?}", f.shape()));
        }
        let frames = frames
            .into_iter()
            .map(|f| f.map(|v| v.max(T::zero()).min(T::one())))
            .collect();
        Ok(Self {
            frames,
            source,
            fps: None,
        })
    }

    pub fn frames(&self) -> &[Tensor<T>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `[C, H, W]` of every frame.
    pub fn frame_shape(&self) -> [usize; 3] {
        let s = self.frames[0].shape();
        [s[0], s[1], s[2]]
    }

    pub fn cast<U: Scalar>(&self) -> FrameSequence<U> {
        FrameSequence {
            frames: self.frames.iter().map(Tensor::cast).collect(),
            source: self.source.clone(),
            fps: self.fps,
        }
    }

    /// Center crop of every frame.
    pub fn center_crop(&self, h: usize, w: usize) -> Result<Self> {
        let frames = self.frames.iter().map(|f| center_crop(f, h, w)).collect::<Result<_>>()?;
        Ok(Self {
            frames,
            ..self.clone()
        })
    }

    /// The first `n` frames.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.frames.len() {
            return config(format!("cannot keep {n} of {} frames", self.frames.len()));
        }
        Ok(Self {
            frames: self.frames[..n].to_vec(),
            ..self.clone()
        })
    }
}

/// Central `h x w` region of a `[C, H, W]` image; odd margins leave the
/// extra row/column at the bottom/right.
pub fn center_crop<T: Scalar>(frame: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let s = frame.shape();
    let (c, fh, fw) = (s[0], s[1], s[2]);
    if h == 0 || w == 0 || h > fh || w > fw {
        return config(format!("cannot crop {fh}x{fw} to {h}x{w}"));
    }
    let (y0, x0) = ((fh - h) / 2, (fw - w) / 2);
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            out.extend_from_slice(&frame.data()[(ch * fh + y0 + y) * fw + x0..][..w]);
        }
    }
    Ok(Tensor::new(&[c, h, w], out)?)
}

fn glob_match(pattern: &[u8], name: &[u8]) -> bool {
    match (pattern.first(), name.first()) {
        (None, None) => true,
        (Some(b'*'), _) => glob_match(&pattern[1..], name) || (!name.is_empty() && glob_match(pattern, &name[1..])),
        (Some(b'?'), Some(_)) => glob_match(&pattern[1..], &name[1..]),
        (Some(a), Some(b)) if a == b => glob_match(&pattern[1..], &name[1..]),
        _ => false,
    }
}

fn is_image(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    [".ppm", ".png"].iter().any(|ext| lower.ends_with(ext))
}

/// Loads every PPM/PNG file in `dir` whose name matches `pattern` (`*` and
/// `?` wildcards; default: all images), in lexicographic order. A
/// `manifest.json` in the directory may give `fps` and a default `crop`;
/// an explicit `crop` wins.
pub fn load_frames<T: Scalar>(dir: &Path, pattern: Option<&str>, crop: Option<(usize, usize)>) -> Result<FrameSequence<T>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let wanted = match pattern {
            Some(p) => glob_match(p.as_bytes(), name.as_bytes()),
            None => is_image(&name),
        };
        if wanted && entry.path().is_file() {
            names.push(name);
        }
    }
    names.sort();
    if names.is_empty() {
        return config(format!("no frames found in {}", dir.display()));
    }
    let manifest_path = dir.join("manifest.json");
    let manifest: InputManifest = if manifest_path.is_file() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format("input manifest", e.to_string()))?
    } else {
        InputManifest::default()
    };
    let crop = crop.or(manifest.crop.map(|[h, w]| (h, w)));
    let mut frames = Vec::with_capacity(names.len());
    for name in &names {
        let frame = read_image(&dir.join(name))?;
        frames.push(match crop {
            Some((h, w)) => center_crop(&frame, h, w)?,
            None => frame,
        });
    }
    let source = FrameSource::Files {
        dir: dir.to_path_buf(),
        files: names,
    };
    let mut seq = FrameSequence::new(frames, source).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{msg} (use a crop to load mixed sizes)")),
        other => other,
    })?;
    seq.fps = manifest.fps;
    Ok(seq)
}

/// Reads a PPM (P3/P6) or PNG file as `[3, H, W]` in `[0, 1]`.
pub fn read_image<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let parsed = if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes)
    } else {
        decode_ppm(&bytes)
    };
    parsed.map_err(|e| match e {
        Error::Format { what, msg } => Error::Format {
            what,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

fn planar<T: Scalar>(h: usize, w: usize, samples: impl Iterator<Item = f64>) -> Result<Tensor<T>> {
    let mut data = vec![T::zero(); 3 * h * w];
    for (k, v) in samples.enumerate().take(3 * h * w) {
        let (pixel, ch) = (k / 3, k % 3);
        data[ch * h * w + pixel] = T::of(v);
    }
    Ok(Tensor::new(&[3, h, w], data)?)
}

struct PpmHeader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PpmHeader<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("PPM", format!("expected a number at byte {start}")))
    }
}

fn decode_ppm<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let binary = match bytes.get(..2) {
        Some(b"P6") => true,
        Some(b"P3") => false,
        _ => return Err(Error::format("PPM", "not a P3/P6 pixmap")),
    };
    let mut hdr = PpmHeader { bytes, pos: 2 };
    let w = hdr.number()?;
    let h = hdr.number()?;
    let maxval = hdr.number()?;
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::format("PPM", format!("bad header {w}x{h} maxval {maxval}")));
    }
    let n = 3 * w * h;
    let scale = 1.0 / maxval as f64;
    if binary {
        let start = hdr.pos + 1;
        let width = if maxval > 255 { 2 } else { 1 };
        let body = bytes
            .get(start..start + n * width)
            .ok_or_else(|| Error::format("PPM", "truncated pixel data"))?;
        if width == 1 {
            planar(h, w, body.iter().map(|&b| b as f64 * scale))
        } else {
            planar(h, w, body.chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale))
        }
    } else {
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(hdr.number()? as f64 * scale);
        }
        planar(h, w, values.into_iter())
    }
}

fn decode_png<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let err = |e: png::DecodingError| Error::format("PNG", e.to_string());
    let mut decoder = png::Decoder::new(BufReader::new(Cursor::new(bytes)));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format("PNG", "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let px = |k: usize| &buf[(k / w) * info.line_size + (k % w) * channels..][..channels];
    let samples = (0..w * h).flat_map(|k| {
        let p = px(k);
        let rgb = if channels >= 3 { [p[0], p[1], p[2]] } else { [p[0]; 3] };
        rgb.map(|v| v as f64 / 255.0)
    });
    planar(h, w, samples)
}

fn to_u8<T: Scalar>(v: T) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

fn interleaved_rgb<T: Scalar>(frame: &Tensor<T>) -> Result<(usize, usize, Vec<u8>)> {
    let s = frame.shape();
    if s.len() != 3 || s[0] != 3 {
        return config(format!("expected an RGB frame [3, H, W], got {s:?}"));
    }
    let (h, w) = (s[1], s[2]);
    let d = frame.data();
    let mut out = Vec::with_capacity(3 * h * w);
    for k in 0..h * w {
        for ch in 0..3 {
            out.push(to_u8(d[ch * h * w + k]));
        }
    }
    Ok((h, w, out))
}

/// Writes a `[3, H, W]` frame as binary PPM.
pub fn write_ppm<T: Scalar>(path: &Path, frame: &Tensor<T>) -> Result<()> {
    let (h, w, rgb) = interleaved_rgb(frame)?;
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    bytes.extend_from_slice(&rgb);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes a `[3, H, W]` frame as 8-bit RGB PNG.
pub fn write_png<T: Scalar>(path: &Path, frame: &Tensor<T>) -> Result<()> {
    let (h, w, rgb) = interleaved_rgb(frame)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let err = |e: png::EncodingError| Error::format("PNG", e.to_string());
    let mut writer = enc.write_header().map_err(err)?;
    writer.write_image_data(&rgb).map_err(err)?;
    writer.finish().map_err(err)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    #[default]
    Ppm,
    Png,
}

/// Writes frames as `frame_0000.ppm`, `frame_0001.ppm`, ... (or `.png`) and
/// returns the paths.
pub fn write_frames<T: Scalar>(dir: &Path, frames: &[Tensor<T>], format: ImageFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(frames.len());
    for (t, frame) in frames.iter().enumerate() {
        let path = match format {
            ImageFormat::Ppm => dir.join(format!("frame_{t:04}.ppm")),
            ImageFormat::Png => dir.join(format!("frame_{t:04}.png")),
        };
        match format {
            ImageFormat::Ppm => write_ppm(&path, frame)?,
            ImageFormat::Png => write_png(&path, frame)?,
        }
        paths.push(path);
    }
    Ok(paths)
}

/// Writes an input manifest (`fps`, `crop`) into `dir`.
pub fn write_input_manifest(dir: &Path, manifest: &InputManifest) -> Result<()> {
    let path = dir.join("manifest.json");
    let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    file.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))
}

/// Path of the moving box in a bouncing-box clip.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxMotion {
    /// Top-left corner `(y, x)` at frame 0.
    pub start: (f64, f64),
    /// Box height and width in pixels.
    pub size: (usize, usize),
    /// Pixels per frame along `(y, x)`.
    pub velocity: (f64, f64),
}

fn reflect(p: f64, span: f64) -> f64 {
    if span <= 0.0 {
        return 0.0;
    }
    let period = 2.0 * span;
    let m = p.rem_euclid(period);
    if m <= span {
        m
    } else {
        period - m
    }
}

impl BoxMotion {
    /// Default motion for an `h x w` clip; the speed depends on `seed`.
    pub fn for_clip(h: usize, w: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb0c5);
        let size = ((h * 3 / 8).max(1), (w * 3 / 16).max(1));
        Self {
            start: ((h / 4) as f64, (w / 8) as f64),
            size,
            velocity: (rng.gen_range(0.08..0.14) * h as f64, rng.gen_range(0.08..0.14) * w as f64),
        }
    }

    /// Top-left corner at frame `t`, bouncing off the frame borders.
    pub fn position(&self, t: usize, h: usize, w: usize) -> (f64, f64) {
        let (sy, sx) = ((h - self.size.0.min(h)) as f64, (w - self.size.1.min(w)) as f64);
        (
            reflect(self.start.0 + self.velocity.0 * t as f64, sy),
            reflect(self.start.1 + self.velocity.1 * t as f64, sx),
        )
    }
}

fn gradient_background(c: usize, y: f64, x: f64, phase: f64) -> f64 {
    let base = [0.25, 0.45, 0.65][c % 3];
    base + 0.2 * (std::f64::consts::PI * (x + 0.5 * y + phase)).sin() * [1.0, -0.7, 0.5][c % 3]
}

fn frame_from_fn<T: Scalar>(h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f64) -> Tensor<T> {
    Tensor::from_fn(&[3, h, w], |k| {
        let (c, y, x) = (k / (h * w), (k / w) % h, k % w);
        T::of(f(c, y, x).clamp(0.0, 1.0))
    })
}

/// Deterministic synthetic clip of `t` RGB frames of `h x w`.
pub fn synth_clip<T: Scalar>(kind: SynthKind, t: usize, h: usize, w: usize, seed: u64) -> Result<FrameSequence<T>> {
    if t == 0 || h == 0 || w == 0 {
        return config("synthetic clips need positive frame count and size");
    }
    let (fh, fw) = (h as f64, w as f64);
    let frames = match kind {
        SynthKind::MovingGradient => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let speed: f64 = rng.gen_range(0.05..0.1);
            let stripe: f64 = rng.gen_range(0.25..0.35);
            (0..t)
                .map(|k| {
                    let phase = speed * k as f64;
                    frame_from_fn(h, w, |c, y, x| {
                        let (u, v) = (x as f64 / fw, y as f64 / fh);
                        let mut val = gradient_background(c, v, u, phase);
                        // A band of fine stripes drifting across the lower half.
                        if v > 0.5 {
                            let g = ((x as f64 + 3.0 * k as f64) * stripe * std::f64::consts::PI).sin();
                            val += 0.15 * g;
                        }
                        val
                    })
                })
                .collect()
        }
        SynthKind::BouncingBox => {
            let motion = BoxMotion::for_clip(h, w, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let color: [f64; 3] = [rng.gen_range(0.75..0.95), rng.gen_range(0.1..0.3), rng.gen_range(0.1..0.3)];
            (0..t)
                .map(|k| {
                    let (py, px) = motion.position(k, h, w);
                    let (py, px) = (py.round() as usize, px.round() as usize);
                    let (bh, bw) = motion.size;
                    frame_from_fn(h, w, |c, y, x| {
                        let inside = y >= py && y < py + bh && x >= px && x < px + bw;
                        if inside {
                            // Two-tone box so it carries an internal edge.
                            let upper = y - py < bh / 2;
                            if upper {
                                color[c]
                            } else {
                                1.0 - color[c]
                            }
                        } else {
                            gradient_background(c, y as f64 / fh, x as f64 / fw, 0.0)
                        }
                    })
                })
                .collect()
        }
        SynthKind::TextureNoise => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let waves: Vec<[f64; 5]> = (0..12)
                .map(|_| {
                    [
                        rng.gen_range(-6.0..6.0),
                        rng.gen_range(-6.0..6.0),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                        rng.gen_range(0.03..0.09),
                        rng.gen_range(0.0..3.0),
                    ]
                })
                .collect();
            let drift: (f64, f64) = (rng.gen_range(-0.03..0.03), rng.gen_range(0.02..0.05));
            (0..t)
                .map(|k| {
                    frame_from_fn(h, w, |c, y, x| {
                        let u = x as f64 / fw.min(fh) + drift.1 * k as f64;
                        let v = y as f64 / fw.min(fh) + drift.0 * k as f64;
                        let mut val = 0.5;
                        for wave in &waves {
                            let [ky, kx, ph, amp, shift] = *wave;
                            let arg = std::f64::consts::TAU * (kx * u + ky * v) + ph + shift * c as f64;
                            val += amp * arg.sin();
                        }
                        val
                    })
                })
                .collect()
        }
    };
    FrameSequence::new(frames, FrameSource::Synth { kind, seed })
}
