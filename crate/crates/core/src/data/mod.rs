//! Synthetic clean/noisy pair generation, deterministic splits, and
//! dataset persistence.
//!
//! Clean images cycle round-robin through four generators (smooth random
//! field, linear gradient, checkerboard, piecewise-constant cells); the
//! noisy partner adds Gaussian noise with σ cycled from the configured
//! levels, clamped to `[0,1]`. Everything is a pure function of the seed.

mod io;

pub use io::{load_dataset, read_f32t, read_ppm, save_dataset, write_f32t, write_ppm};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::image::Image;
use crate::rng::{stream, Stream};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("image extents must be positive multiples of 4, got {h}x{w}")]
    InvalidExtents { h: usize, w: usize },
    #[error("dataset needs at least 3 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("noise level list must not be empty")]
    NoNoiseLevels,
    #[error("split ratios invalid: {0}")]
    BadRatios(String),
    #[error("split produces an empty subset (train {train}, val {val}, test {test})")]
    SplitTooSmall {
        train: usize,
        val: usize,
        test: usize,
    },
    #[error("manifest not found at {0}")]
    MissingManifest(String),
    #[error("manifest field error: {0}")]
    ManifestParse(String),
    #[error("unsupported dataset format version {0}")]
    UnknownFormatVersion(u32),
    #[error("pair {id}: image file missing or unreadable ({path})")]
    MissingImage { id: String, path: String },
    #[error("pair {id}: checksum mismatch for {path}")]
    ChecksumMismatch { id: String, path: String },
    #[error("pair {id}: pixel values outside [0,1]")]
    ValueOutOfRange { id: String },
    #[error("image file error: {0}")]
    ImageFormat(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<V> = std::result::Result<V, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// One clean/noisy pair with its noise level and split assignment.
#[derive(Debug, Clone)]
pub struct Pair {
    pub id: String,
    pub clean: Image,
    pub noisy: Image,
    pub sigma: f32,
    pub split: Split,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub pairs: Vec<Pair>,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub noise_levels: Vec<f32>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn split_pairs(&self, split: Split) -> Vec<&Pair> {
        self.pairs.iter().filter(|p| p.split == split).collect()
    }
}

// ── Clean-image generators ──────────────────────────────────────────

fn gen_smooth_field(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    let mut planes: Vec<Vec<f32>> = (0..3)
        .map(|_| (0..h * w).map(|_| rng.gen_range(0.0f32..1.0)).collect())
        .collect();
    // three box-blur passes, radius 2
    for plane in &mut planes {
        for _ in 0..3 {
            let src = plane.clone();
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0f32;
                    let mut count = 0f32;
                    for dy in -2isize..=2 {
                        for dx in -2isize..=2 {
                            let yy = y as isize + dy;
                            let xx = x as isize + dx;
                            if yy >= 0 && yy < h as isize && xx >= 0 && xx < w as isize {
                                acc += src[yy as usize * w + xx as usize];
                                count += 1.0;
                            }
                        }
                    }
                    plane[y * w + x] = acc / count;
                }
            }
        }
        // stretch to [0.1, 0.9] so structure survives noise clamping
        let lo = plane.iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = plane.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let span = (hi - lo).max(1e-6);
        for v in plane.iter_mut() {
            *v = 0.1 + 0.8 * (*v - lo) / span;
        }
    }
    Image::from_fn(h, w, 3, |y, x, c| planes[c][y * w + x])
}

fn gen_gradient(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    let angle = rng.gen_range(0.0f32..std::f32::consts::TAU);
    let (dy, dx) = (angle.sin(), angle.cos());
    let ends: Vec<(f32, f32)> = (0..3)
        .map(|_| (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)))
        .collect();
    let diag = ((h * h + w * w) as f32).sqrt();
    Image::from_fn(h, w, 3, |y, x, c| {
        let s = ((y as f32 * dy + x as f32 * dx) / diag + 1.0) / 2.0;
        let (a, b) = ends[c];
        a + (b - a) * s.clamp(0.0, 1.0)
    })
}

fn gen_checkerboard(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    let cell = rng.gen_range(4usize..=16);
    let off_y = rng.gen_range(0..cell);
    let off_x = rng.gen_range(0..cell);
    let colors: Vec<(f32, f32)> = (0..3)
        .map(|_| (rng.gen_range(0.0..0.45), rng.gen_range(0.55..1.0)))
        .collect();
    Image::from_fn(h, w, 3, |y, x, c| {
        let parity = (((y + off_y) / cell) + ((x + off_x) / cell)) % 2;
        if parity == 0 {
            colors[c].0
        } else {
            colors[c].1
        }
    })
}

fn gen_piecewise(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    let cell_h = rng.gen_range(8usize..=24);
    let cell_w = rng.gen_range(8usize..=24);
    let rows = h.div_ceil(cell_h);
    let cols = w.div_ceil(cell_w);
    let colors: Vec<[f32; 3]> = (0..rows * cols)
        .map(|_| {
            [
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
            ]
        })
        .collect();
    Image::from_fn(h, w, 3, |y, x, c| {
        let cy = y / cell_h;
        let cx = x / cell_w;
        colors[cy * cols + cx][c]
    })
}

/// Generates `count` clean/noisy pairs. Generators cycle round-robin and
/// σ cycles through `noise_levels`; the result is fully determined by
/// `(seed, count, h, w, noise_levels)`.
pub fn gen_synthetic(
    count: usize,
    h: usize,
    w: usize,
    noise_levels: &[f32],
    seed: u64,
) -> Result<Dataset> {
    if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
        return Err(DataError::InvalidExtents { h, w });
    }
    if count < 3 {
        return Err(DataError::TooFewPairs(count));
    }
    if noise_levels.is_empty() {
        return Err(DataError::NoNoiseLevels);
    }
    let mut rng = stream(seed, Stream::DatasetGen);
    let mut pairs = Vec::with_capacity(count);
    for i in 0..count {
        let clean = match i % 4 {
            0 => gen_smooth_field(&mut rng, h, w),
            1 => gen_gradient(&mut rng, h, w),
            2 => gen_checkerboard(&mut rng, h, w),
            _ => gen_piecewise(&mut rng, h, w),
        };
        let sigma = noise_levels[i % noise_levels.len()];
        let mut noisy = clean.clone();
        if sigma > 0.0 {
            let gauss = Normal::new(0.0f32, sigma).expect("sigma is finite");
            for v in noisy.as_mut_slice() {
                *v = (*v + gauss.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
        pairs.push(Pair {
            id: format!("p{i:04}"),
            clean,
            noisy,
            sigma,
            split: Split::Train,
        });
    }
    Ok(Dataset {
        pairs,
        seed,
        height: h,
        width: w,
        noise_levels: noise_levels.to_vec(),
    })
}

// ── Splits ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct SplitRatios {
    /// Fraction of the dev set used for training.
    pub train_of_dev: f64,
    /// Fraction of the dev set used for validation.
    pub val_of_dev: f64,
    /// Fraction of the whole dataset held out for testing.
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train_of_dev: 0.875,
            val_of_dev: 0.125,
            test: 60.0 / 260.0,
        }
    }
}

/// Assigns split tags: a seeded shuffle followed by contiguous
/// assignment (train, then val, then test), with subset sizes rounded to
/// nearest and the remainder going to train.
pub fn split(dataset: &mut Dataset, ratios: &SplitRatios, seed: u64) -> Result<()> {
    if (ratios.train_of_dev + ratios.val_of_dev - 1.0).abs() > 1e-9 {
        return Err(DataError::BadRatios(
            "train and val fractions of dev must sum to 1".into(),
        ));
    }
    if !(ratios.test > 0.0 && ratios.test < 1.0)
        || ratios.train_of_dev <= 0.0
        || ratios.val_of_dev <= 0.0
    {
        return Err(DataError::BadRatios("fractions must be in (0,1)".into()));
    }
    let n = dataset.len();
    let n_test = (n as f64 * ratios.test).round() as usize;
    let dev = n - n_test;
    let n_val = (dev as f64 * ratios.val_of_dev).round() as usize;
    let n_train = dev - n_val;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(DataError::SplitTooSmall {
            train: n_train,
            val: n_val,
            test: n_test,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream(seed, Stream::Split);
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    for (rank, &idx) in order.iter().enumerate() {
        dataset.pairs[idx].split = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(())
}
