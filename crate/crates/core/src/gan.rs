//! Gradient-trained GAN: a generator, a conventional discriminator and a
//! gradient discriminator that receives the conventional one's weights
//! every iteration, plus IDX loading and the two evaluation metrics.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{Mlp, OutputActivation};
use crate::numerics::{mean, std_dev, Matrix, Rng};

const INIT_STREAM: u64 = 0x6A1;
const STEP_STREAM: u64 = 0x6A2;
const BATCH_STREAM: u64 = 0x6A3;
const EVAL_STREAM: u64 = 0x6A4;
const KL_STREAM: u64 = 0x6A5;
const SYNTH_STREAM: u64 = 0x6A6;

/// Histogram bins for the image-quality KL.
pub const KL_BINS: usize = 32;
/// Additive smoothing applied to every histogram bin.
pub const KL_EPS: f64 = 1e-8;

/// Environment variable naming a directory that holds MNIST IDX files.
pub const DATA_ENV: &str = "GRADLORE_DATA";
/// Image file looked up inside the data directory.
pub const MNIST_IMAGES: &str = "train-images-idx3-ubyte";

/// Images stored as rows of a matrix, one flat row-major image per row.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch {
    side: usize,
    pixels: Matrix,
}

impl ImageBatch {
    pub fn new(side: usize, pixels: Matrix) -> Result<Self> {
        if pixels.cols() != side * side {
            return Err(Error::shape("ImageBatch::new", side * side, pixels.cols()));
        }
        if let Some(p) = pixels.data().iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::BadParams(format!("pixel {p} outside [0, 1]")));
        }
        Ok(Self { side, pixels })
    }

    pub fn len(&self) -> usize {
        self.pixels.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.rows() == 0
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.side * self.side
    }

    pub fn image(&self, i: usize) -> &[f64] {
        self.pixels.row(i)
    }

    pub fn pixels(&self) -> &Matrix {
        &self.pixels
    }

    pub fn select(&self, indices: &[usize]) -> ImageBatch {
        let pixels = Matrix::from_fn(indices.len(), self.dim(), |r, c| self.pixels.row(indices[r])[c]);
        ImageBatch {
            side: self.side,
            pixels,
        }
    }

    /// Mean pooling over non-overlapping `k × k` blocks.
    pub fn downsample(&self, k: usize) -> Result<ImageBatch> {
        if k == 0 || !self.side.is_multiple_of(k) {
            return Err(Error::BadParams(format!(
                "downsample factor {k} does not divide side {}",
                self.side
            )));
        }
        if k == 1 {
            return Ok(self.clone());
        }
        let side = self.side / k;
        let norm = (k * k) as f64;
        let pixels = Matrix::from_fn(self.len(), side * side, |r, c| {
            let (by, bx) = (c / side, c % side);
            let img = self.pixels.row(r);
            let mut s = 0.0;
            for dy in 0..k {
                for dx in 0..k {
                    s += img[(by * k + dy) * self.side + bx * k + dx];
                }
            }
            s / norm
        });
        Ok(ImageBatch { side, pixels })
    }

    /// Tiles up to `cols × rows` images into one 8-bit grayscale PGM (P5)
    /// with a one-pixel black border between tiles.
    pub fn to_pgm_grid(&self, cols: usize) -> Result<Vec<u8>> {
        if self.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let cols = cols.clamp(1, self.len());
        let rows = self.len().div_ceil(cols);
        let cell = self.side + 1;
        let (w, h) = (cols * cell + 1, rows * cell + 1);
        let mut raster = vec![0u8; w * h];
        for i in 0..self.len() {
            let (oy, ox) = ((i / cols) * cell + 1, (i % cols) * cell + 1);
            for (p, &v) in self.image(i).iter().enumerate() {
                let (y, x) = (p / self.side, p % self.side);
                raster[(oy + y) * w + ox + x] = (v * 255.0).round() as u8;
            }
        }
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        out.extend_from_slice(&raster);
        Ok(out)
    }
}

/// Parsed contents of an IDX file.
#[derive(Clone, Debug, PartialEq)]
pub enum IdxData {
    Images(ImageBatch),
    Labels(Vec<u8>),
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::TruncatedFile(format!("{what} missing")))
}

/// Parses an IDX image (0x803) or label (0x801) file from memory.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    let magic = be_u32(bytes, 0, "magic number")?;
    match magic {
        0x0000_0803 => {
            let n = be_u32(bytes, 4, "image count")? as usize;
            let rows = be_u32(bytes, 8, "row count")? as usize;
            let cols = be_u32(bytes, 12, "column count")? as usize;
            if rows != cols {
                return Err(Error::BadParams(format!("non-square images {rows}x{cols}")));
            }
            let need = n * rows * cols;
            let body = &bytes[16..];
            if body.len() < need {
                return Err(Error::TruncatedFile(format!(
                    "expected {need} pixel bytes, found {}",
                    body.len()
                )));
            }
            let data = body[..need].iter().map(|&b| f64::from(b) / 255.0).collect();
            let pixels = Matrix::from_vec(n, rows * cols, data)?;
            Ok(IdxData::Images(ImageBatch { side: rows, pixels }))
        }
        0x0000_0801 => {
            let n = be_u32(bytes, 4, "label count")? as usize;
            let body = &bytes[8..];
            if body.len() < n {
                return Err(Error::TruncatedFile(format!(
                    "expected {n} label bytes, found {}",
                    body.len()
                )));
            }
            Ok(IdxData::Labels(body[..n].to_vec()))
        }
        other => Err(Error::BadMagic(other)),
    }
}

/// Reads an IDX file from disk.
pub fn read_idx(path: &Path) -> Result<IdxData> {
    parse_idx(&std::fs::read(path)?)
}

/// Loads an IDX image file and mean-pools it by `downsample`.
pub fn load_idx(path: &Path, downsample: usize) -> Result<ImageBatch> {
    match read_idx(path)? {
        IdxData::Images(batch) => batch.downsample(downsample),
        IdxData::Labels(_) => Err(Error::BadParams(format!(
            "{} holds labels, not images",
            path.display()
        ))),
    }
}

/// Stroke skeletons for the ten digits on the unit square, y pointing down.
fn digit_strokes(d: usize) -> Vec<Vec<(f64, f64)>> {
    let ring = |cx: f64, cy: f64, rx: f64, ry: f64| -> Vec<(f64, f64)> {
        (0..=16)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / 16.0;
                (cx + rx * t.cos(), cy + ry * t.sin())
            })
            .collect()
    };
    match d {
        0 => vec![ring(0.5, 0.5, 0.26, 0.4)],
        1 => vec![vec![(0.35, 0.25), (0.52, 0.1), (0.52, 0.9)]],
        2 => vec![vec![
            (0.25, 0.3),
            (0.4, 0.12),
            (0.6, 0.12),
            (0.75, 0.3),
            (0.25, 0.9),
            (0.78, 0.9),
        ]],
        3 => vec![vec![
            (0.25, 0.12),
            (0.72, 0.15),
            (0.45, 0.48),
            (0.75, 0.7),
            (0.55, 0.9),
            (0.25, 0.85),
        ]],
        4 => vec![
            vec![(0.6, 0.1), (0.2, 0.65), (0.8, 0.65)],
            vec![(0.62, 0.35), (0.62, 0.92)],
        ],
        5 => vec![vec![
            (0.75, 0.1),
            (0.3, 0.1),
            (0.27, 0.45),
            (0.65, 0.45),
            (0.75, 0.7),
            (0.6, 0.9),
            (0.25, 0.88),
        ]],
        6 => vec![vec![
            (0.7, 0.1),
            (0.35, 0.4),
            (0.27, 0.72),
            (0.45, 0.9),
            (0.7, 0.8),
            (0.68, 0.58),
            (0.3, 0.6),
        ]],
        7 => vec![vec![(0.22, 0.12), (0.78, 0.12), (0.42, 0.9)]],
        8 => vec![ring(0.5, 0.3, 0.18, 0.18), ring(0.5, 0.7, 0.22, 0.2)],
        _ => vec![ring(0.5, 0.32, 0.2, 0.2), vec![(0.7, 0.32), (0.6, 0.9)]],
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Handwriting-like 28×28 digits rendered from jittered stroke skeletons.
/// Used when no MNIST files are available.
pub fn synthetic_digits(n: usize, seed: u64) -> ImageBatch {
    const SIDE: usize = 28;
    let mut rng = Rng::derive(seed, SYNTH_STREAM);
    let mut data = Vec::with_capacity(n * SIDE * SIDE);
    for _ in 0..n {
        let digit = rng.below(10);
        let scale = rng.uniform(16.0, 21.0);
        let shear = rng.uniform(-0.25, 0.25);
        let (ox, oy) = (rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5));
        let width = rng.uniform(0.9, 1.8);
        let centre = SIDE as f64 / 2.0;
        let map = |(x, y): (f64, f64)| {
            let (u, v) = (x - 0.5, y - 0.5);
            (centre + ox + scale * (u - shear * v), centre + oy + scale * v)
        };
        let strokes: Vec<Vec<(f64, f64)>> = digit_strokes(digit)
            .into_iter()
            .map(|s| s.into_iter().map(map).collect())
            .collect();
        for py in 0..SIDE {
            for px in 0..SIDE {
                let p = (px as f64 + 0.5, py as f64 + 0.5);
                let d = strokes
                    .iter()
                    .flat_map(|s| s.windows(2).map(move |w| segment_distance(p, w[0], w[1])))
                    .fold(f64::INFINITY, f64::min);
                data.push((width + 0.5 - d).clamp(0.0, 1.0));
            }
        }
    }
    ImageBatch {
        side: SIDE,
        pixels: Matrix::from_vec(n, SIDE * SIDE, data).expect("sizes agree"),
    }
}

/// Where the real images come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// MNIST from the data directory when present, synthetic digits otherwise.
    Auto,
    Mnist,
    Synthetic,
}

/// How the generator's extra term compares the two discriminator readings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradTermMode {
    /// Squared distance between input gradients of `D_grad` at fakes and the
    /// batch-mean input gradient at reals.
    Gradient,
    /// Squared distance between scalar `D_grad` outputs at fakes and their
    /// batch mean at reals.
    Scalar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub latent_dim: usize,
    pub g_hidden: usize,
    pub d_hidden: usize,
    pub downsample: usize,
    pub data: DataSource,
    /// Directory with MNIST IDX files; falls back to the environment variable.
    pub data_dir: Option<PathBuf>,
    /// Size of the real-image pool drawn from the data source.
    pub real_images: usize,
    /// Reals and fakes (each) in the per-iteration accuracy evaluation.
    pub eval_size: usize,
    pub rolling_window: usize,
    pub kl_samples: usize,
    pub grad_term: GradTermMode,
    /// Seeds averaged by the experiment harness.
    pub trials: usize,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            batch_size: 32,
            gamma: 0.1,
            lr_g: 0.05,
            lr_d: 0.05,
            latent_dim: 32,
            g_hidden: 128,
            d_hidden: 128,
            downsample: 2,
            data: DataSource::Auto,
            data_dir: None,
            real_images: 2000,
            eval_size: 100,
            rolling_window: 50,
            kl_samples: 200,
            grad_term: GradTermMode::Gradient,
            trials: 10,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("latent_dim", self.latent_dim),
            ("g_hidden", self.g_hidden),
            ("d_hidden", self.d_hidden),
            ("downsample", self.downsample),
            ("real_images", self.real_images),
            ("eval_size", self.eval_size),
            ("rolling_window", self.rolling_window),
            ("kl_samples", self.kl_samples),
            ("trials", self.trials),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("gan.{name} must be positive")));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gan.gamma must be >= 0, got {}", self.gamma)));
        }
        for (name, lr) in [("lr_g", self.lr_g), ("lr_d", self.lr_d)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("gan.{name} must be positive, got {lr}")));
            }
        }
        Ok(())
    }

    fn mnist_dir(&self) -> Option<PathBuf> {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
    }

    /// Loads the real-image pool and names its origin.
    pub fn load_data(&self, seed: u64) -> Result<(ImageBatch, &'static str)> {
        let mnist = self.mnist_dir().map(|d| d.join(MNIST_IMAGES));
        let use_mnist = match self.data {
            DataSource::Synthetic => false,
            DataSource::Mnist => true,
            DataSource::Auto => mnist.as_ref().is_some_and(|p| p.is_file()),
        };
        if use_mnist {
            let path = mnist.ok_or_else(|| {
                Error::Config(format!("gan.data = mnist needs data_dir or {DATA_ENV}"))
            })?;
            let all = load_idx(&path, self.downsample)?;
            let n = self.real_images.min(all.len());
            let idx: Vec<usize> = (0..n).collect();
            Ok((all.select(&idx), "mnist"))
        } else {
            let digits = synthetic_digits(self.real_images, seed).downsample(self.downsample)?;
            Ok((digits, "synthetic"))
        }
    }
}

/// Generator, both discriminators and the step settings.
#[derive(Clone, Debug)]
pub struct GanBundle {
    pub g: Mlp,
    pub d_std: Mlp,
    pub d_grad: Mlp,
    pub gamma: f64,
    pub latent_dim: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub grad_term: GradTermMode,
    pub rng: Rng,
}

impl GanBundle {
    pub fn new(cfg: &GanConfig, image_dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut init = Rng::derive(seed, INIT_STREAM);
        let g = Mlp::init(
            &[cfg.latent_dim, cfg.g_hidden, image_dim],
            OutputActivation::Sigmoid,
            &mut init,
        )?;
        let d_std = Mlp::init(&[image_dim, cfg.d_hidden, 1], OutputActivation::Sigmoid, &mut init)?;
        let d_grad = d_std.clone();
        Ok(Self {
            g,
            d_std,
            d_grad,
            gamma: cfg.gamma,
            latent_dim: cfg.latent_dim,
            lr_g: cfg.lr_g,
            lr_d: cfg.lr_d,
            grad_term: cfg.grad_term,
            rng: Rng::derive(seed, STEP_STREAM),
        })
    }

    pub fn image_dim(&self) -> usize {
        self.g.output_dim()
    }

    /// Runs the generator on each latent row.
    pub fn generate(&self, latents: &Matrix) -> Result<ImageBatch> {
        generate_with(&self.g, latents)
    }
}

fn generate_with(g: &Mlp, latents: &Matrix) -> Result<ImageBatch> {
    let pixels = g.forward_rows(latents)?;
    let side = (pixels.cols() as f64).sqrt().round() as usize;
    ImageBatch::new(side, pixels)
}

/// Standard-normal latent matrix.
pub fn draw_latents(rng: &mut Rng, n: usize, dim: usize) -> Matrix {
    Matrix::from_fn(n, dim, |_, _| rng.standard_normal())
}

/// Balanced evaluation set: real images and latents for fresh fakes.
#[derive(Clone, Debug)]
pub struct EvalSet {
    pub reals: ImageBatch,
    pub latents: Matrix,
}

impl EvalSet {
    pub fn new(reals: ImageBatch, latents: Matrix) -> Result<Self> {
        if reals.is_empty() || reals.len() != latents.rows() {
            return Err(Error::EmptyEval);
        }
        Ok(Self { reals, latents })
    }
}

/// Fraction of reals scored ≥ 0.5 plus fakes scored < 0.5, over both.
pub fn disc_accuracy(d: &Mlp, reals: &ImageBatch, fakes: &ImageBatch) -> Result<f64> {
    if reals.is_empty() || reals.len() != fakes.len() {
        return Err(Error::EmptyEval);
    }
    let mut correct = 0usize;
    for i in 0..reals.len() {
        correct += usize::from(d.forward(reals.image(i))?[0] >= 0.5);
        correct += usize::from(d.forward(fakes.image(i))?[0] < 0.5);
    }
    Ok(correct as f64 / (2 * reals.len()) as f64)
}

/// Accuracy of `d` with fakes from `g_after` minus accuracy with fakes from
/// `g_before`; negative when the generator update fooled `d` more often.
pub fn disc_accuracy_delta(d: &Mlp, g_before: &Mlp, g_after: &Mlp, eval: &EvalSet) -> Result<f64> {
    let before = disc_accuracy(d, &eval.reals, &generate_with(g_before, &eval.latents)?)?;
    let after = disc_accuracy(d, &eval.reals, &generate_with(g_after, &eval.latents)?)?;
    Ok(after - before)
}

/// Scalars recorded for one iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    /// Discriminator cross-entropy before its update.
    pub d_loss: f64,
    /// Generator cross-entropy plus the weighted extra term when active.
    pub g_loss: f64,
    /// Unweighted mean matching term at the fakes (reported for both schemes).
    pub grad_term: f64,
    pub acc_delta: Option<f64>,
}

fn bce(y: f64, label: f64) -> f64 {
    let y = y.clamp(1e-12, 1.0 - 1e-12);
    -(label * y.ln() + (1.0 - label) * (1.0 - y).ln())
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, v) in acc.iter_mut().zip(g) {
        *a += v;
    }
}

/// One iteration: generate fakes, store the real-image reference reading of
/// `D_grad`, update `D_std`, copy it into `D_grad`, then update `G` on the
/// same latents. With `eval`, the accuracy delta of `D_std` across the
/// generator update is measured as well.
pub fn gan_step(
    b: &mut GanBundle,
    real: &ImageBatch,
    use_gi: bool,
    eval: Option<&EvalSet>,
) -> Result<StepMetrics> {
    if real.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if real.dim() != b.image_dim() {
        return Err(Error::shape("gan_step real images", b.image_dim(), real.dim()));
    }
    let n = real.len();
    let dim = real.dim();

    // Fakes from fresh latents.
    let latents = draw_latents(&mut b.rng, n, b.latent_dim);
    let fakes = b.generate(&latents)?;

    // Reference reading of D_grad at the reals.
    let mut ref_grad = vec![0.0; dim];
    let mut ref_out = 0.0;
    for i in 0..n {
        let tape = b.d_grad.jacobian_tape(real.image(i))?;
        add_into(&mut ref_grad, tape.jacobian().row(0));
        ref_out += tape.output()[0];
    }
    ref_grad.iter_mut().for_each(|v| *v /= n as f64);
    ref_out /= n as f64;

    // One cross-entropy step for D_std: reals labelled 1, fakes 0.
    let scale = 1.0 / (2 * n) as f64;
    let mut d_grad_acc = vec![0.0; b.d_std.num_params()];
    let mut d_loss = 0.0;
    for (batch, label) in [(real, 1.0), (&fakes, 0.0)] {
        for i in 0..n {
            let tape = b.d_std.forward_tape(batch.image(i))?;
            let y = tape.output()[0];
            d_loss += bce(y, label) * scale;
            let (g, _) = tape.backprop_preactivation(&[(y - label) * scale])?;
            add_into(&mut d_grad_acc, &g);
        }
    }
    b.d_std.apply_update(&d_grad_acc, None, b.lr_d, 1.0)?;

    // Weight copy.
    b.d_grad.copy_params_from(&b.d_std)?;

    // Generator step on the same latents, D parameters frozen.
    let active = use_gi && b.gamma != 0.0;
    let inv_n = 1.0 / n as f64;
    let mut g_acc = vec![0.0; b.g.num_params()];
    let mut bce_sum = 0.0;
    let mut term_sum = 0.0;
    for i in 0..n {
        let g_tape = b.g.forward_tape(latents.row(i))?;
        let x = g_tape.output();
        let d_tape = b.d_std.forward_tape(x)?;
        let y = d_tape.output()[0];
        bce_sum += bce(y, 1.0);
        let (_, mut x_grad) = d_tape.backprop_preactivation(&[(y - 1.0) * inv_n])?;
        match b.grad_term {
            GradTermMode::Gradient => {
                let j_tape = b.d_grad.jacobian_tape(x)?;
                let diff: Vec<f64> = j_tape
                    .jacobian()
                    .row(0)
                    .iter()
                    .zip(&ref_grad)
                    .map(|(j, r)| j - r)
                    .collect();
                term_sum += diff.iter().map(|d| d * d).sum::<f64>();
                if active {
                    let w = 2.0 * b.gamma * inv_n;
                    let cot = Matrix::from_vec(1, dim, diff.iter().map(|d| w * d).collect())?;
                    let (_, extra) = j_tape.backprop(&cot)?;
                    add_into(&mut x_grad, &extra);
                }
            }
            GradTermMode::Scalar => {
                let s_tape = b.d_grad.forward_tape(x)?;
                let diff = s_tape.output()[0] - ref_out;
                term_sum += diff * diff;
                if active {
                    let (_, extra) = s_tape.backprop(&[2.0 * b.gamma * inv_n * diff])?;
                    add_into(&mut x_grad, &extra);
                }
            }
        }
        let (g, _) = g_tape.backprop(&x_grad)?;
        add_into(&mut g_acc, &g);
    }
    let grad_term = term_sum * inv_n;
    let mut g_loss = bce_sum * inv_n;
    if active {
        g_loss += b.gamma * grad_term;
    }
    let g_before = eval.map(|_| b.g.clone());
    b.g.apply_update(&g_acc, None, b.lr_g, 1.0)?;
    let acc_delta = match (eval, g_before) {
        (Some(e), Some(before)) => Some(disc_accuracy_delta(&b.d_std, &before, &b.g, e)?),
        _ => None,
    };

    for v in [d_loss, g_loss, grad_term] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("gan_step produced {v}")));
        }
    }
    Ok(StepMetrics {
        d_loss,
        g_loss,
        grad_term,
        acc_delta,
    })
}

fn histogram(pixels: &[f64]) -> [f64; KL_BINS] {
    let mut h = [0.0; KL_BINS];
    for &p in pixels {
        let bin = ((p * KL_BINS as f64) as usize).min(KL_BINS - 1);
        h[bin] += 1.0;
    }
    let total: f64 = h.iter().map(|c| c + KL_EPS).sum();
    h.iter_mut().for_each(|c| *c = (*c + KL_EPS) / total);
    h
}

/// Per generated image, KL from its smoothed pixel-intensity histogram to
/// the pooled histogram of all real pixels; mean and std over images.
pub fn kl_image_quality(generated: &ImageBatch, real: &ImageBatch) -> Result<(f64, f64)> {
    if generated.is_empty() || real.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let q = histogram(real.pixels().data());
    let kls: Vec<f64> = (0..generated.len())
        .map(|i| {
            let p = histogram(generated.image(i));
            p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum::<f64>().max(0.0)
        })
        .collect();
    Ok((mean(&kls), std_dev(&kls)))
}

/// One row of `gan_metrics.csv`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanRecord {
    pub iteration: usize,
    pub acc_delta: f64,
    pub rolling_mean: f64,
    pub g_loss: f64,
    pub d_loss: f64,
    pub grad_term: f64,
}

/// Everything one training run produces.
#[derive(Clone, Debug)]
pub struct GanRun {
    pub use_gi: bool,
    pub records: Vec<GanRecord>,
    pub kl_initial: (f64, f64),
    pub kl_final: (f64, f64),
    pub initial_samples: ImageBatch,
    pub final_samples: ImageBatch,
    pub bundle: GanBundle,
}

impl GanRun {
    pub fn to_csv(&self) -> String {
        records_csv(&self.records)
    }

    pub fn final_rolling_mean(&self) -> Option<f64> {
        self.records.last().map(|r| r.rolling_mean)
    }
}

pub fn records_csv(records: &[GanRecord]) -> String {
    let mut s = String::from("iteration,acc_delta,rolling_mean,g_loss,d_loss,grad_term\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.iteration, r.acc_delta, r.rolling_mean, r.g_loss, r.d_loss, r.grad_term
        );
    }
    s
}

/// Trailing mean over at most `window` values ending at each position.
pub fn rolling_mean(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, &v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Number of sample images shown in the PGM grids.
pub const GRID_SAMPLES: usize = 16;

/// Trains one GAN on `data`. All randomness derives from `seed`, and the
/// streams do not depend on `use_gi`, so paired runs see the same batches,
/// latents and evaluation sets.
pub fn train_gan(cfg: &GanConfig, use_gi: bool, seed: u64, data: &ImageBatch) -> Result<GanRun> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut bundle = GanBundle::new(cfg, data.dim(), seed)?;
    let mut batch_rng = Rng::derive(seed, BATCH_STREAM);
    let mut eval_rng = Rng::derive(seed, EVAL_STREAM);
    let kl_latents = draw_latents(&mut Rng::derive(seed, KL_STREAM), cfg.kl_samples, cfg.latent_dim);

    let initial = bundle.generate(&kl_latents)?;
    let kl_initial = kl_image_quality(&initial, data)?;

    let mut raw = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| batch_rng.below(data.len())).collect();
        let real = data.select(&idx);
        let eval_idx: Vec<usize> = (0..cfg.eval_size).map(|_| eval_rng.below(data.len())).collect();
        let eval = EvalSet::new(
            data.select(&eval_idx),
            draw_latents(&mut eval_rng, cfg.eval_size, cfg.latent_dim),
        )?;
        raw.push(gan_step(&mut bundle, &real, use_gi, Some(&eval))?);
    }
    let deltas: Vec<f64> = raw.iter().map(|m| m.acc_delta.unwrap_or(0.0)).collect();
    let rolling = rolling_mean(&deltas, cfg.rolling_window);
    let records = raw
        .iter()
        .enumerate()
        .map(|(i, m)| GanRecord {
            iteration: i + 1,
            acc_delta: deltas[i],
            rolling_mean: rolling[i],
            g_loss: m.g_loss,
            d_loss: m.d_loss,
            grad_term: m.grad_term,
        })
        .collect();

    let last = bundle.generate(&kl_latents)?;
    let kl_final = kl_image_quality(&last, data)?;
    let shown: Vec<usize> = (0..GRID_SAMPLES.min(cfg.kl_samples)).collect();
    Ok(GanRun {
        use_gi,
        records,
        kl_initial,
        kl_final,
        initial_samples: initial.select(&shown),
        final_samples: last.select(&shown),
        bundle,
    })
}

/// Conventional and GI runs for one seed.
#[derive(Clone, Debug)]
pub struct GanPair {
    pub seed: u64,
    pub conventional: GanRun,
    pub gradient: GanRun,
}

/// Paired runs over several seeds, in parallel across seeds.
pub fn gan_trials(cfg: &GanConfig, seeds: &[u64], data: &ImageBatch) -> Result<Vec<GanPair>> {
    seeds
        .par_iter()
        .map(|&seed| {
            Ok(GanPair {
                seed,
                conventional: train_gan(cfg, false, seed, data)?,
                gradient: train_gan(cfg, true, seed, data)?,
            })
        })
        .collect()
}

/// Per-iteration average of the records across runs, with the rolling mean
/// recomputed on the averaged deltas.
pub fn average_records(runs: &[&GanRun], window: usize) -> Vec<GanRecord> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    let len = first.records.len();
    let k = runs.len() as f64;
    let avg = |f: fn(&GanRecord) -> f64, i: usize| runs.iter().map(|r| f(&r.records[i])).sum::<f64>() / k;
    let deltas: Vec<f64> = (0..len).map(|i| avg(|r| r.acc_delta, i)).collect();
    let rolling = rolling_mean(&deltas, window);
    (0..len)
        .map(|i| GanRecord {
            iteration: i + 1,
            acc_delta: deltas[i],
            rolling_mean: rolling[i],
            g_loss: avg(|r| r.g_loss, i),
            d_loss: avg(|r| r.d_loss, i),
            grad_term: avg(|r| r.grad_term, i),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::fd_gradient;
    use proptest::prelude::{prop, prop_assert, proptest};

    fn idx_images(n: u32, side: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [0x803u32, n, side, side] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    fn small_cfg() -> GanConfig {
        GanConfig {
            iterations: 3,
            batch_size: 4,
            latent_dim: 3,
            g_hidden: 5,
            d_hidden: 6,
            real_images: 20,
            eval_size: 4,
            kl_samples: 4,
            data: DataSource::Synthetic,
            downsample: 7,
            ..GanConfig::default()
        }
    }

    fn small_data() -> ImageBatch {
        synthetic_digits(20, 1).downsample(7).unwrap()
    }

    #[test]
    fn idx_all_white_images() {
        let bytes = idx_images(2, 4, &[255; 32]);
        let IdxData::Images(batch) = parse_idx(&bytes).unwrap() else {
            panic!("expected images");
        };
        assert_eq!(batch.len(), 2);
        assert_eq!(batch.side(), 4);
        assert!(batch.pixels().data().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn idx_labels_and_errors() {
        let mut labels = Vec::new();
        labels.extend_from_slice(&0x801u32.to_be_bytes());
        labels.extend_from_slice(&3u32.to_be_bytes());
        labels.extend_from_slice(&[7, 2, 1]);
        assert_eq!(parse_idx(&labels).unwrap(), IdxData::Labels(vec![7, 2, 1]));

        assert!(matches!(parse_idx(&[0, 0, 8]), Err(Error::TruncatedFile(_))));
        assert!(matches!(parse_idx(&[0, 0, 8, 3, 0, 0]), Err(Error::TruncatedFile(_))));
        let short = idx_images(2, 4, &[0; 31]);
        assert!(matches!(parse_idx(&short), Err(Error::TruncatedFile(_))));
        assert!(matches!(parse_idx(&[0, 0, 8, 4, 0, 0, 0, 0]), Err(Error::BadMagic(0x804))));
    }

    #[test]
    fn idx_round_trip_through_disk_with_pooling() {
        let pixels: Vec<u8> = (0..28 * 28).map(|i| ((i * 37) % 256) as u8).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.idx");
        std::fs::write(&path, idx_images(1, 28, &pixels)).unwrap();
        let pooled = load_idx(&path, 2).unwrap();
        assert_eq!(pooled.side(), 14);
        for by in 0..14 {
            for bx in 0..14 {
                let mut s = 0.0;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    s += f64::from(pixels[(2 * by + dy) * 28 + 2 * bx + dx]) / 255.0;
                }
                let got = pooled.image(0)[by * 14 + bx];
                assert!((got - s / 4.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn label_file_is_not_an_image_source() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.idx");
        let mut b = 0x801u32.to_be_bytes().to_vec();
        b.extend_from_slice(&1u32.to_be_bytes());
        b.push(4);
        std::fs::write(&path, b).unwrap();
        assert!(matches!(load_idx(&path, 1), Err(Error::BadParams(_))));
    }

    #[test]
    fn synthetic_digits_are_valid_and_seeded() {
        let a = synthetic_digits(12, 9);
        assert_eq!(a, synthetic_digits(12, 9));
        assert_ne!(a, synthetic_digits(12, 10));
        assert!(a.pixels().data().iter().all(|p| (0.0..=1.0).contains(p)));
        for i in 0..a.len() {
            let ink = mean(a.image(i));
            assert!(ink > 0.03 && ink < 0.5, "ink fraction {ink}");
        }
    }

    #[test]
    fn pgm_grid_layout() {
        let batch = ImageBatch::new(2, Matrix::from_vec(3, 4, vec![1.0; 12]).unwrap()).unwrap();
        let pgm = batch.to_pgm_grid(2).unwrap();
        let header = b"P5\n7 7\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        let raster = &pgm[header.len()..];
        assert_eq!(raster.len(), 49);
        assert_eq!(raster.iter().filter(|&&v| v == 255).count(), 12);
    }

    #[test]
    fn kl_examples() {
        let img = synthetic_digits(1, 3);
        let same = img.select(&[0, 0, 0]);
        let (m, s) = kl_image_quality(&same, &same).unwrap();
        assert!(m.abs() < 1e-12 && s.abs() < 1e-12);

        let reals = synthetic_digits(50, 4);
        let black = ImageBatch::new(28, Matrix::zeros(5, 784)).unwrap();
        let (black_kl, _) = kl_image_quality(&black, &reals).unwrap();
        let (own_kl, _) = kl_image_quality(&reals, &reals).unwrap();
        let ink = reals.pixels().data().iter().filter(|&&p| p >= 1.0 / 32.0).count() as f64
            / reals.pixels().data().len() as f64;
        // An all-black image puts its mass in the first bin, so its KL is −ln(1 − ink).
        assert!((black_kl - -(1.0 - ink).ln()).abs() < 1e-6, "{black_kl} vs ink {ink}");
        let gray = ImageBatch::new(28, Matrix::from_vec(5, 784, vec![0.5; 5 * 784]).unwrap()).unwrap();
        let (gray_kl, _) = kl_image_quality(&gray, &reals).unwrap();
        assert!(gray_kl > 2.0 && gray_kl > own_kl, "gray {gray_kl} own {own_kl}");

        let empty = ImageBatch::new(28, Matrix::zeros(0, 784)).unwrap();
        assert!(matches!(kl_image_quality(&empty, &reals), Err(Error::EmptyBatch)));
    }

    #[test]
    fn accuracy_delta_zero_for_unchanged_generator() {
        let cfg = small_cfg();
        let data = small_data();
        let b = GanBundle::new(&cfg, data.dim(), 5).unwrap();
        let mut rng = Rng::new(2);
        let eval = EvalSet::new(data.select(&[0, 1, 2]), draw_latents(&mut rng, 3, 3)).unwrap();
        assert_eq!(disc_accuracy_delta(&b.d_std, &b.g, &b.g, &eval).unwrap(), 0.0);
        let bad = EvalSet::new(data.select(&[0, 1]), draw_latents(&mut rng, 3, 3));
        assert!(matches!(bad, Err(Error::EmptyEval)));
    }

    #[test]
    fn step_copies_weights_and_keeps_pixels_in_range() {
        let cfg = small_cfg();
        let data = small_data();
        let mut b = GanBundle::new(&cfg, data.dim(), 5).unwrap();
        for _ in 0..4 {
            let m = gan_step(&mut b, &data.select(&[0, 3, 5, 7]), true, None).unwrap();
            assert_eq!(b.d_grad.params(), b.d_std.params());
            assert!(m.acc_delta.is_none() && m.grad_term >= 0.0);
        }
        let fakes = b.generate(&draw_latents(&mut Rng::new(1), 8, 3)).unwrap();
        assert!(fakes.pixels().data().iter().all(|p| (0.0..=1.0).contains(p)));
        let empty = ImageBatch::new(data.side(), Matrix::zeros(0, data.dim())).unwrap();
        assert!(matches!(gan_step(&mut b, &empty, true, None), Err(Error::EmptyBatch)));
    }

    #[test]
    fn zero_gamma_matches_conventional_bitwise() {
        let data = small_data();
        for mode in [GradTermMode::Gradient, GradTermMode::Scalar] {
            let cfg = GanConfig {
                gamma: 0.0,
                grad_term: mode,
                ..small_cfg()
            };
            let a = train_gan(&cfg, true, 8, &data).unwrap();
            let c = train_gan(&cfg, false, 8, &data).unwrap();
            assert_eq!(a.bundle.g.params(), c.bundle.g.params());
            assert_eq!(a.records, c.records);
        }
    }

    #[test]
    fn gi_changes_generator_when_gamma_positive() {
        let cfg = GanConfig {
            gamma: 5.0,
            ..small_cfg()
        };
        let data = small_data();
        let a = train_gan(&cfg, true, 8, &data).unwrap();
        let c = train_gan(&cfg, false, 8, &data).unwrap();
        assert_ne!(a.bundle.g.params(), c.bundle.g.params());
        // D_std sees identical fakes on the first step, so its first loss agrees.
        assert_eq!(a.records[0].d_loss, c.records[0].d_loss);
    }

    /// Gradient of the generator objective against central differences.
    #[test]
    fn generator_update_matches_finite_differences() {
        for mode in [GradTermMode::Gradient, GradTermMode::Scalar] {
            let cfg = GanConfig {
                gamma: 0.7,
                grad_term: mode,
                ..small_cfg()
            };
            let data = small_data();
            let reals = data.select(&[1, 2, 4]);
            let b0 = GanBundle::new(&cfg, data.dim(), 11).unwrap();

            // Replay the step to learn the latents, the reference and D after its update.
            let mut b = b0.clone();
            let mut rng = b.rng;
            let latents = draw_latents(&mut rng, 3, cfg.latent_dim);
            gan_step(&mut b, &reals, true, None).unwrap();
            let d = b.d_std.clone();
            let mut ref_grad = vec![0.0; data.dim()];
            let mut ref_out = 0.0;
            for i in 0..3 {
                let t = b0.d_grad.jacobian_tape(reals.image(i)).unwrap();
                add_into(&mut ref_grad, t.jacobian().row(0));
                ref_out += t.output()[0] / 3.0;
            }
            ref_grad.iter_mut().for_each(|v| *v /= 3.0);

            let objective = |theta: &[f64]| {
                let mut g = b0.g.clone();
                g.params_mut().copy_from_slice(theta);
                let mut total = 0.0;
                for i in 0..3 {
                    let x = g.forward(latents.row(i)).unwrap();
                    let y = d.forward(&x).unwrap()[0];
                    let term = match mode {
                        GradTermMode::Gradient => {
                            let j = d.input_jacobian(&x).unwrap();
                            j.row(0).iter().zip(&ref_grad).map(|(a, r)| (a - r).powi(2)).sum()
                        }
                        GradTermMode::Scalar => (y - ref_out).powi(2),
                    };
                    total += (bce(y, 1.0) + cfg.gamma * term) / 3.0;
                }
                total
            };
            let fd = fd_gradient(objective, b0.g.params(), 1e-6).unwrap();
            let realised: Vec<f64> = b0
                .g
                .params()
                .iter()
                .zip(b.g.params())
                .map(|(a, c)| (a - c) / cfg.lr_g)
                .collect();
            let err = realised
                .iter()
                .zip(&fd)
                .map(|(a, f)| (a - f).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-6, "{mode:?}: max abs error {err}");
        }
    }

    #[test]
    fn zero_and_one_iteration_runs() {
        let data = small_data();
        let cfg0 = GanConfig {
            iterations: 0,
            ..small_cfg()
        };
        let run = train_gan(&cfg0, true, 3, &data).unwrap();
        let fresh = GanBundle::new(&cfg0, data.dim(), 3).unwrap();
        assert!(run.records.is_empty());
        assert_eq!(run.bundle.g.params(), fresh.g.params());
        assert_eq!(run.bundle.d_std.params(), fresh.d_std.params());
        assert_eq!(run.kl_initial, run.kl_final);

        let cfg1 = GanConfig {
            iterations: 1,
            ..small_cfg()
        };
        let run = train_gan(&cfg1, true, 3, &data).unwrap();
        assert_eq!(run.records.len(), 1);
        assert_ne!(run.bundle.g.params(), fresh.g.params());
        assert_ne!(run.bundle.d_std.params(), fresh.d_std.params());
        assert!(run.to_csv().starts_with("iteration,acc_delta,rolling_mean,g_loss,d_loss,grad_term\n1,"));
    }

    #[test]
    fn runs_are_deterministic_per_seed() {
        let data = small_data();
        let a = train_gan(&small_cfg(), true, 4, &data).unwrap();
        let b = train_gan(&small_cfg(), true, 4, &data).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.bundle.g.params(), b.bundle.g.params());
    }

    #[test]
    fn rolling_mean_examples() {
        assert_eq!(rolling_mean(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
        assert!(rolling_mean(&[], 3).is_empty());
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(GanConfig::default().validate().is_ok());
        for cfg in [
            GanConfig { gamma: -1.0, ..GanConfig::default() },
            GanConfig { batch_size: 0, ..GanConfig::default() },
            GanConfig { lr_g: 0.0, ..GanConfig::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
        let parsed: std::result::Result<GanConfig, _> = toml::from_str("gama = 1.0");
        assert!(parsed.is_err());
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(px in prop::collection::vec(0.0f64..=1.0, 16), qx in prop::collection::vec(0.0f64..=1.0, 32)) {
            let g = ImageBatch::new(4, Matrix::from_vec(1, 16, px).unwrap()).unwrap();
            let r = ImageBatch::new(4, Matrix::from_vec(2, 16, qx).unwrap()).unwrap();
            let (m, s) = kl_image_quality(&g, &r).unwrap();
            prop_assert!(m >= 0.0 && s >= 0.0);
        }

        #[test]
        fn accuracy_delta_bounded(seed in 0u64..50) {
            let cfg = small_cfg();
            let data = small_data();
            let mut b = GanBundle::new(&cfg, data.dim(), seed).unwrap();
            let mut rng = Rng::new(seed);
            let eval = EvalSet::new(data.select(&[0, 1, 2, 3]), draw_latents(&mut rng, 4, 3)).unwrap();
            let m = gan_step(&mut b, &data.select(&[4, 5]), true, Some(&eval)).unwrap();
            let d = m.acc_delta.unwrap();
            prop_assert!((-1.0..=1.0).contains(&d));
        }

    }
}
