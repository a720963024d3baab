//! Image-quality metrics on unit-range images: PSNR, SSIM, and MSE.
//!
//! All statistics are accumulated in f64 with population (divisor N)
//! variances. SSIM defaults to the global mode, where the moments are
//! taken over the whole image per channel; a sliding-window mode is
//! available behind [`SsimMode::Windowed`].

use thiserror::Error;

use crate::image::Image;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metric shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        lhs: (usize, usize, usize),
        rhs: (usize, usize, usize),
    },
    #[error("invalid SSIM config: {0}")]
    InvalidConfig(String),
}

pub type Result<V> = std::result::Result<V, MetricsError>;

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(MetricsError::ShapeMismatch {
            lhs: a.dims(),
            rhs: b.dims(),
        });
    }
    Ok(())
}

/// Mean squared difference over every pixel and channel.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    let mut acc = 0f64;
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        let d = x as f64 - y as f64;
        acc += d * d;
    }
    Ok(acc / a.len().max(1) as f64)
}

/// Peak signal-to-noise ratio in decibels: `10·log10(1/MSE)` for
/// unit-range images, `+∞` when the images are identical.
pub fn psnr(output: &Image, gt: &Image) -> Result<f64> {
    let m = mse(output, gt)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / m).log10())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SsimMode {
    /// Moments over the whole image, per channel.
    Global,
    /// Moments over sliding windows, averaged over windows then channels.
    Windowed { window: usize, stride: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct SsimConfig {
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of the pixel values.
    pub l: f64,
    pub mode: SsimMode,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            k1: 0.01,
            k2: 0.03,
            l: 1.0,
            mode: SsimMode::Global,
        }
    }
}

impl SsimConfig {
    pub fn windowed() -> Self {
        SsimConfig {
            mode: SsimMode::Windowed {
                window: 8,
                stride: 1,
            },
            ..SsimConfig::default()
        }
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.l) * (self.k1 * self.l)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.l) * (self.k2 * self.l)
    }

    fn validate(&self) -> Result<()> {
        if self.k1 <= 0.0 || self.k2 <= 0.0 || self.l <= 0.0 {
            return Err(MetricsError::InvalidConfig(
                "k1, k2 and L must be positive".into(),
            ));
        }
        if let SsimMode::Windowed { window, stride } = self.mode {
            if window < 2 {
                return Err(MetricsError::InvalidConfig(
                    "window size must be at least 2".into(),
                ));
            }
            if stride == 0 {
                return Err(MetricsError::InvalidConfig("stride must be positive".into()));
            }
        }
        Ok(())
    }
}

struct Moments {
    mu_x: f64,
    mu_y: f64,
    var_x: f64,
    var_y: f64,
    cov: f64,
}

fn moments(xs: impl Iterator<Item = (f64, f64)> + Clone, n: f64) -> Moments {
    let (mut sx, mut sy) = (0f64, 0f64);
    for (x, y) in xs.clone() {
        sx += x;
        sy += y;
    }
    let (mu_x, mu_y) = (sx / n, sy / n);
    let (mut vx, mut vy, mut cov) = (0f64, 0f64, 0f64);
    for (x, y) in xs {
        let dx = x - mu_x;
        let dy = y - mu_y;
        vx += dx * dx;
        vy += dy * dy;
        cov += dx * dy;
    }
    Moments {
        mu_x,
        mu_y,
        var_x: vx / n,
        var_y: vy / n,
        cov: cov / n,
    }
}

fn ssim_term(m: &Moments, c1: f64, c2: f64) -> f64 {
    let num = (2.0 * m.mu_x * m.mu_y + c1) * (2.0 * m.cov + c2);
    let den = (m.mu_x * m.mu_x + m.mu_y * m.mu_y + c1) * (m.var_x + m.var_y + c2);
    num / den
}

/// Structural similarity of two images under `cfg`, averaged over
/// channels (and windows in windowed mode).
pub fn ssim(x: &Image, y: &Image, cfg: &SsimConfig) -> Result<f64> {
    check_shapes(x, y)?;
    cfg.validate()?;
    let (h, w, c) = x.dims();
    let (c1, c2) = (cfg.c1(), cfg.c2());

    match cfg.mode {
        SsimMode::Global => {
            let mut total = 0f64;
            for ch in 0..c {
                let px = x.channel_plane(ch);
                let py = y.channel_plane(ch);
                let m = moments(
                    px.iter().zip(py.iter()).map(|(&a, &b)| (a as f64, b as f64)),
                    (h * w) as f64,
                );
                total += ssim_term(&m, c1, c2);
            }
            Ok(total / c as f64)
        }
        SsimMode::Windowed { window, stride } => {
            if window > h || window > w {
                return Err(MetricsError::InvalidConfig(format!(
                    "window {window} exceeds image extent {h}x{w}"
                )));
            }
            let mut total = 0f64;
            let mut count = 0usize;
            for ch in 0..c {
                let mut y0 = 0;
                while y0 + window <= h {
                    let mut x0 = 0;
                    while x0 + window <= w {
                        let pairs: Vec<(f64, f64)> = (0..window)
                            .flat_map(|dy| (0..window).map(move |dx| (y0 + dy, x0 + dx)))
                            .map(|(py, px)| (x.get(py, px, ch) as f64, y.get(py, px, ch) as f64))
                            .collect();
                        let m = moments(pairs.iter().copied(), (window * window) as f64);
                        total += ssim_term(&m, c1, c2);
                        count += 1;
                        x0 += stride;
                    }
                    y0 += stride;
                }
            }
            Ok(total / count as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::rng::{stream, Stream};

    fn random_image(seed: u64, h: usize, w: usize, c: usize) -> Image {
        let mut rng = stream(seed, Stream::Test);
        Image::from_fn(h, w, c, |_, _, _| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn psnr_of_identical_images_is_infinite() {
        let x = random_image(1, 8, 8, 3);
        assert_eq!(psnr(&x, &x).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_uniform_offsets_match_closed_form() {
        let x = Image::zeros(16, 16, 3);
        let y = Image::constant(16, 16, 3, 0.1);
        assert!((psnr(&x, &y).unwrap() - 20.0).abs() < 1e-6);
        let y = Image::constant(16, 16, 3, 0.01);
        assert!((psnr(&x, &y).unwrap() - 40.0).abs() < 1e-6);
    }

    #[test]
    fn psnr_decreases_with_perturbation_magnitude() {
        let x = random_image(2, 8, 8, 3);
        let mut last = f64::INFINITY;
        for mag in [0.01f32, 0.02, 0.05, 0.1] {
            let mut y = x.clone();
            for v in y.as_mut_slice() {
                *v += mag;
            }
            let p = psnr(&x, &y).unwrap();
            assert!(p < last, "psnr must strictly decrease");
            last = p;
        }
    }

    #[test]
    fn mse_examples() {
        let x = random_image(3, 4, 4, 1);
        assert_eq!(mse(&x, &x).unwrap(), 0.0);
        let a = Image::zeros(1, 1, 1);
        let b = Image::constant(1, 1, 1, 1.0);
        assert_eq!(mse(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn psnr_is_definitionally_consistent_with_mse() {
        let x = random_image(4, 6, 6, 3);
        let y = random_image(5, 6, 6, 3);
        let m = mse(&x, &y).unwrap();
        assert!(m > 0.0);
        let p = psnr(&x, &y).unwrap();
        assert!((p - 10.0 * (1.0 / m).log10()).abs() < 1e-12);
    }

    #[test]
    fn ssim_identity_is_exactly_one() {
        let x = random_image(6, 8, 8, 3);
        let s = ssim(&x, &x, &SsimConfig::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_constant_zero_vs_one_closed_form() {
        let cfg = SsimConfig::default();
        let x = Image::zeros(8, 8, 1);
        let y = Image::constant(8, 8, 1, 1.0);
        let expect = cfg.c1() / (1.0 + cfg.c1());
        assert!((ssim(&x, &y, &cfg).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn ssim_is_symmetric() {
        let x = random_image(7, 8, 8, 3);
        let y = random_image(8, 8, 8, 3);
        let cfg = SsimConfig::default();
        assert_eq!(ssim(&x, &y, &cfg).unwrap(), ssim(&y, &x, &cfg).unwrap());
    }

    #[test]
    fn ssim_below_one_for_different_images() {
        let x = random_image(9, 8, 8, 3);
        let mut y = x.clone();
        y.set(3, 3, 0, (y.get(3, 3, 0) + 0.5).min(1.0));
        let s = ssim(&x, &y, &SsimConfig::default()).unwrap();
        assert!(s < 1.0);
    }

    #[test]
    fn metrics_invariant_under_joint_horizontal_flip() {
        let x = random_image(10, 8, 6, 3);
        let y = random_image(11, 8, 6, 3);
        let cfg = SsimConfig::default();
        assert_eq!(
            psnr(&x, &y).unwrap(),
            psnr(&x.flip_horizontal(), &y.flip_horizontal()).unwrap()
        );
        assert_eq!(
            ssim(&x, &y, &cfg).unwrap(),
            ssim(&x.flip_horizontal(), &y.flip_horizontal(), &cfg).unwrap()
        );
    }

    #[test]
    fn windowed_mode_runs_and_detects_differences() {
        let x = random_image(12, 12, 12, 3);
        let cfg = SsimConfig::windowed();
        assert!((ssim(&x, &x, &cfg).unwrap() - 1.0).abs() < 1e-9);
        let y = random_image(13, 12, 12, 3);
        assert!(ssim(&x, &y, &cfg).unwrap() < 1.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let x = Image::zeros(4, 4, 3);
        let y = Image::zeros(4, 5, 3);
        assert!(psnr(&x, &y).is_err());
        assert!(ssim(&x, &y, &SsimConfig::default()).is_err());
    }

    #[test]
    fn bad_window_config_is_rejected() {
        let x = Image::zeros(4, 4, 1);
        let cfg = SsimConfig {
            mode: SsimMode::Windowed {
                window: 1,
                stride: 1,
            },
            ..SsimConfig::default()
        };
        assert!(ssim(&x, &x, &cfg).is_err());
    }
}
