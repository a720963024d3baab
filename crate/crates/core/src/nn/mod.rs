//! The two trainable models and their optimizer.
//!
//! [`SurrogateNet`] mimics the black box: a 3-level convolutional
//! encoder-decoder with skip connections whose input is the image
//! concatenated with the parameter planes, re-injected (mean-pooled to
//! matching resolution) before each encoder stage, with a sigmoid head.
//! [`ParamLearnerNet`] predicts per-pixel parameter planes from the
//! image alone through a smaller 2-level encoder-decoder.

mod adam;
mod model_io;

pub use adam::Adam;
pub use model_io::{load_model, save_learner, save_surrogate, ModelBundle};

use thiserror::Error;

use crate::autodiff::{
    self, concat_channels, conv2d, downsample2, relu, sigmoid, upsample2, Real, Tensor,
};
use crate::rng::{stream, Stream};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const SURROGATE_WIDTHS: [usize; 3] = [32, 64, 128];
pub const LEARNER_WIDTHS: [usize; 2] = [32, 64];

#[derive(Debug, Error)]
pub enum NnError {
    #[error(transparent)]
    Autodiff(#[from] autodiff::AutodiffError),
    #[error("bad network input: {0}")]
    BadInput(String),
    #[error("parameter {index} has no gradient")]
    MissingGrad { index: usize },
    #[error("model file: bad magic")]
    BadMagic,
    #[error("model file: truncated payload")]
    Truncated,
    #[error("model header: {0}")]
    Header(String),
    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<V> = std::result::Result<V, NnError>;

/// One convolution's weights.
pub struct Conv<T: Real> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Conv<T> {
    /// Fan-in uniform init: kernel entries in `[-s, s]` with
    /// `s = sqrt(1/(K·K·C_in))`, zero bias.
    fn init(rng: &mut ChaCha8Rng, k: usize, cin: usize, cout: usize) -> Conv<T> {
        let s = (1.0 / (k * k * cin) as f64).sqrt();
        let data: Vec<T> = (0..k * k * cin * cout)
            .map(|_| T::from_f64(rng.gen_range(-s..s)))
            .collect();
        Conv {
            kernel: Tensor::new(&[k, k, cin, cout], data).expect("kernel shape"),
            bias: Tensor::zeros(&[cout]),
        }
    }
}

fn check_spatial<T: Real>(t: &Tensor<T>, what: &str) -> Result<(usize, usize, usize)> {
    let shape = t.shape();
    if shape.len() != 3 {
        return Err(NnError::BadInput(format!("{what} must be rank 3")));
    }
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
        return Err(NnError::BadInput(format!(
            "{what} spatial extents must be positive multiples of 4, got {h}x{w}"
        )));
    }
    Ok((h, w, c))
}

// ── Surrogate ───────────────────────────────────────────────────────

pub struct SurrogateNet<T: Real> {
    pub image_channels: usize,
    pub param_channels: usize,
    pub seed: u64,
    enc1: Conv<T>,
    enc2: Conv<T>,
    enc3: Conv<T>,
    dec3: Conv<T>,
    fuse2: Conv<T>,
    dec2: Conv<T>,
    fuse1: Conv<T>,
    head: Conv<T>,
}

impl<T: Real> SurrogateNet<T> {
    pub fn init(seed: u64, image_channels: usize, param_channels: usize) -> SurrogateNet<T> {
        let mut rng = stream(seed, Stream::WeightInit);
        let [w1, w2, w3] = SURROGATE_WIDTHS;
        let (c, p) = (image_channels, param_channels);
        SurrogateNet {
            image_channels: c,
            param_channels: p,
            seed,
            enc1: Conv::init(&mut rng, 3, c + p, w1),
            enc2: Conv::init(&mut rng, 3, w1 + p, w2),
            enc3: Conv::init(&mut rng, 3, w2 + p, w3),
            dec3: Conv::init(&mut rng, 3, w3, w2),
            fuse2: Conv::init(&mut rng, 1, w2 + w2, w2),
            dec2: Conv::init(&mut rng, 3, w2, w1),
            fuse1: Conv::init(&mut rng, 1, w1 + w1, w1),
            head: Conv::init(&mut rng, 3, w1, c),
        }
    }

    /// Trainable tensors in declaration order (the serialization order).
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::with_capacity(16);
        for conv in [
            &self.enc1, &self.enc2, &self.enc3, &self.dec3, &self.fuse2, &self.dec2, &self.fuse1,
            &self.head,
        ] {
            out.push(&conv.kernel);
            out.push(&conv.bias);
        }
        out
    }

    /// Predicted black-box output for `image` conditioned on the
    /// parameter planes. Participates in the active tape when inputs or
    /// weights are watched.
    pub fn forward(&self, image: &Tensor<T>, planes: &Tensor<T>) -> Result<Tensor<T>> {
        let (h, w, c) = check_spatial(image, "image")?;
        let (ph, pw, p) = check_spatial(planes, "parameter planes")?;
        if c != self.image_channels {
            return Err(NnError::BadInput(format!(
                "image has {c} channels, net expects {}",
                self.image_channels
            )));
        }
        if (ph, pw) != (h, w) || p != self.param_channels {
            return Err(NnError::BadInput(format!(
                "parameter planes {ph}x{pw}x{p} do not match image {h}x{w} and P={}",
                self.param_channels
            )));
        }
        let eps = T::from_f64(1e-6);
        let in_range = planes.with_data(|d| {
            d.iter()
                .all(|&v| v >= -eps && v <= T::one() + eps)
        });
        if !in_range {
            return Err(NnError::BadInput(
                "parameter plane values must lie in [0,1]".into(),
            ));
        }

        let x0 = concat_channels(image, planes)?;
        let e1 = relu(&conv2d(&x0, &self.enc1.kernel, &self.enc1.bias)?)?;

        let p1 = downsample2(planes)?;
        let d1 = concat_channels(&downsample2(&e1)?, &p1)?;
        let e2 = relu(&conv2d(&d1, &self.enc2.kernel, &self.enc2.bias)?)?;

        let p2 = downsample2(&p1)?;
        let d2 = concat_channels(&downsample2(&e2)?, &p2)?;
        let e3 = relu(&conv2d(&d2, &self.enc3.kernel, &self.enc3.bias)?)?;

        let u3 = relu(&conv2d(&e3, &self.dec3.kernel, &self.dec3.bias)?)?;
        let c2 = concat_channels(&upsample2(&u3)?, &e2)?;
        let f2 = relu(&conv2d(&c2, &self.fuse2.kernel, &self.fuse2.bias)?)?;
        let u2 = relu(&conv2d(&f2, &self.dec2.kernel, &self.dec2.bias)?)?;
        let c1 = concat_channels(&upsample2(&u2)?, &e1)?;
        let f1 = relu(&conv2d(&c1, &self.fuse1.kernel, &self.fuse1.bias)?)?;
        Ok(sigmoid(&conv2d(&f1, &self.head.kernel, &self.head.bias)?)?)
    }

    pub fn cast<U: Real>(&self) -> SurrogateNet<U> {
        SurrogateNet {
            image_channels: self.image_channels,
            param_channels: self.param_channels,
            seed: self.seed,
            enc1: Conv {
                kernel: self.enc1.kernel.cast(),
                bias: self.enc1.bias.cast(),
            },
            enc2: Conv {
                kernel: self.enc2.kernel.cast(),
                bias: self.enc2.bias.cast(),
            },
            enc3: Conv {
                kernel: self.enc3.kernel.cast(),
                bias: self.enc3.bias.cast(),
            },
            dec3: Conv {
                kernel: self.dec3.kernel.cast(),
                bias: self.dec3.bias.cast(),
            },
            fuse2: Conv {
                kernel: self.fuse2.kernel.cast(),
                bias: self.fuse2.bias.cast(),
            },
            dec2: Conv {
                kernel: self.dec2.kernel.cast(),
                bias: self.dec2.bias.cast(),
            },
            fuse1: Conv {
                kernel: self.fuse1.kernel.cast(),
                bias: self.fuse1.bias.cast(),
            },
            head: Conv {
                kernel: self.head.kernel.cast(),
                bias: self.head.bias.cast(),
            },
        }
    }
}

// ── Parameter learner ───────────────────────────────────────────────

pub struct ParamLearnerNet<T: Real> {
    pub image_channels: usize,
    pub param_channels: usize,
    pub seed: u64,
    enc1: Conv<T>,
    enc2: Conv<T>,
    dec: Conv<T>,
    head: Conv<T>,
}

impl<T: Real> ParamLearnerNet<T> {
    pub fn init(seed: u64, image_channels: usize, param_channels: usize) -> ParamLearnerNet<T> {
        let mut rng = stream(seed, Stream::WeightInit);
        let [w1, w2] = LEARNER_WIDTHS;
        ParamLearnerNet {
            image_channels,
            param_channels,
            seed,
            enc1: Conv::init(&mut rng, 3, image_channels, w1),
            enc2: Conv::init(&mut rng, 3, w1, w2),
            dec: Conv::init(&mut rng, 3, w2, w1),
            head: Conv::init(&mut rng, 3, w1, param_channels),
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::with_capacity(8);
        for conv in [&self.enc1, &self.enc2, &self.dec, &self.head] {
            out.push(&conv.kernel);
            out.push(&conv.bias);
        }
        out
    }

    /// Per-pixel parameter predictions in `(0,1)^P` (HxWxP).
    pub fn forward(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, _, c) = check_spatial(image, "image")?;
        if c != self.image_channels {
            return Err(NnError::BadInput(format!(
                "image has {c} channels, net expects {}",
                self.image_channels
            )));
        }
        let e1 = relu(&conv2d(image, &self.enc1.kernel, &self.enc1.bias)?)?;
        let e2 = relu(&conv2d(
            &downsample2(&e1)?,
            &self.enc2.kernel,
            &self.enc2.bias,
        )?)?;
        let d = relu(&conv2d(&e2, &self.dec.kernel, &self.dec.bias)?)?;
        let up = upsample2(&d)?;
        Ok(sigmoid(&conv2d(&up, &self.head.kernel, &self.head.bias)?)?)
    }

    pub fn cast<U: Real>(&self) -> ParamLearnerNet<U> {
        ParamLearnerNet {
            image_channels: self.image_channels,
            param_channels: self.param_channels,
            seed: self.seed,
            enc1: Conv {
                kernel: self.enc1.kernel.cast(),
                bias: self.enc1.bias.cast(),
            },
            enc2: Conv {
                kernel: self.enc2.kernel.cast(),
                bias: self.enc2.bias.cast(),
            },
            dec: Conv {
                kernel: self.dec.kernel.cast(),
                bias: self.dec.bias.cast(),
            },
            head: Conv {
                kernel: self.head.kernel.cast(),
                bias: self.head.bias.cast(),
            },
        }
    }
}
