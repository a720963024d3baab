//! The black-box parameter space θ, its continuous relaxation to
//! `[0,1]^P`, and the maps between the two.
//!
//! Quantization: a continuous dimension maps affinely onto `[lo, hi]`;
//! a discrete dimension with K values splits `[0,1]` into K equal-width
//! bins taken by `floor`, clamped at K−1. Normalization inverts this,
//! returning bin centers for discrete dimensions so that
//! `quantize ∘ normalize` is the identity on concrete values produced by
//! `quantize`.

use crate::autodiff::{self, Real, Tensor};

use super::{BlackBoxError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum DimKind {
    Continuous { lo: f64, hi: f64 },
    Discrete(Vec<i64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamDim {
    name: String,
    kind: DimKind,
}

impl ParamDim {
    pub fn continuous(name: &str, lo: f64, hi: f64) -> ParamDim {
        assert!(lo < hi, "continuous dim {name} needs lo < hi");
        ParamDim {
            name: name.to_string(),
            kind: DimKind::Continuous { lo, hi },
        }
    }

    pub fn discrete(name: &str, values: &[i64]) -> ParamDim {
        assert!(!values.is_empty(), "discrete dim {name} needs values");
        assert!(
            values.windows(2).all(|w| w[0] < w[1]),
            "discrete dim {name} values must strictly increase"
        );
        ParamDim {
            name: name.to_string(),
            kind: DimKind::Discrete(values.to_vec()),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &DimKind {
        &self.kind
    }

    /// Number of representable quantized values (∞ approximated as the
    /// grid count for continuous dims is chosen by the caller).
    pub fn discrete_len(&self) -> Option<usize> {
        match &self.kind {
            DimKind::Continuous { .. } => None,
            DimKind::Discrete(v) => Some(v.len()),
        }
    }

    fn contains(&self, value: f64) -> bool {
        match &self.kind {
            DimKind::Continuous { lo, hi } => value >= *lo && value <= *hi,
            DimKind::Discrete(vals) => vals.iter().any(|&v| v as f64 == value),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpace {
    dims: Vec<ParamDim>,
}

impl ParamSpace {
    pub fn new(dims: Vec<ParamDim>) -> ParamSpace {
        let mut names: Vec<&str> = dims.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), dims.len(), "dimension names must be unique");
        ParamSpace { dims }
    }

    /// The built-in 5-dimensional BM3D search space.
    pub fn bm3d() -> ParamSpace {
        ParamSpace::new(vec![
            ParamDim::continuous("cff", 1.0, 20.0),
            ParamDim::discrete("n1", &[4, 8]),
            ParamDim::discrete("cspace", &[0, 1]),
            ParamDim::discrete("wtransform", &[0, 1]),
            ParamDim::discrete("neighborhood", &[3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15]),
        ])
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn dims(&self) -> &[ParamDim] {
        &self.dims
    }

    pub fn dim_index(&self, name: &str) -> Option<usize> {
        self.dims.iter().position(|d| d.name == name)
    }
}

/// θ in relaxed coordinates: each component in `[0,1]`. Construction
/// clamps, matching the post-update clamp in the training loops.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedParams(Vec<f64>);

impl NormalizedParams {
    pub fn new(values: Vec<f64>) -> NormalizedParams {
        NormalizedParams(values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    /// Mid-range initialization (0.5 per dimension).
    pub fn mid(p: usize) -> NormalizedParams {
        NormalizedParams(vec![0.5; p])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> NormalizedParams {
        NormalizedParams::new(t.to_vec().iter().map(|v| v.as_f64()).collect())
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::new(
            &[self.0.len()],
            self.0.iter().map(|&v| T::from_f64(v)).collect(),
        )
        .expect("rank-1 shape always valid")
    }
}

/// θ in native units: reals for continuous dims, integer-valued reals
/// for discrete dims.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcreteParams(Vec<f64>);

impl ConcreteParams {
    pub fn new(values: Vec<f64>) -> ConcreteParams {
        ConcreteParams(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn value(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Checks that `c` is a legal point of `space`.
pub fn validate(c: &ConcreteParams, space: &ParamSpace) -> Result<()> {
    if c.len() != space.len() {
        return Err(BlackBoxError::WrongParamCount {
            expected: space.len(),
            got: c.len(),
        });
    }
    for (dim, &v) in space.dims().iter().zip(c.as_slice()) {
        if !dim.contains(v) {
            return Err(BlackBoxError::ValueOutOfRange {
                dim: dim.name.clone(),
                value: v,
            });
        }
    }
    Ok(())
}

fn quantize_continuous(u: f64, lo: f64, hi: f64) -> f64 {
    u.mul_add(hi - lo, lo)
}

/// Maps relaxed coordinates to native units.
pub fn quantize(u: &NormalizedParams, space: &ParamSpace) -> Result<ConcreteParams> {
    if u.len() != space.len() {
        return Err(BlackBoxError::WrongParamCount {
            expected: space.len(),
            got: u.len(),
        });
    }
    let values = space
        .dims()
        .iter()
        .zip(u.as_slice())
        .map(|(dim, &u)| match &dim.kind {
            DimKind::Continuous { lo, hi } => quantize_continuous(u, *lo, *hi),
            DimKind::Discrete(vals) => {
                let k = vals.len();
                let idx = ((u * k as f64).floor() as usize).min(k - 1);
                vals[idx] as f64
            }
        })
        .collect();
    Ok(ConcreteParams(values))
}

/// Inverse of [`quantize`]: affine inverse for continuous dims (with a
/// short ulp search so values in the image of `quantize` round-trip
/// bit-exactly), bin centers for discrete dims.
pub fn normalize(c: &ConcreteParams, space: &ParamSpace) -> Result<NormalizedParams> {
    validate(c, space)?;
    let values = space
        .dims()
        .iter()
        .zip(c.as_slice())
        .map(|(dim, &v)| match &dim.kind {
            DimKind::Continuous { lo, hi } => {
                let naive = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
                if quantize_continuous(naive, *lo, *hi) == v {
                    return naive;
                }
                // Division rounding can land one float off the exact
                // preimage; walk a few ulps to recover it when it exists.
                let mut best = naive;
                let mut best_err = (quantize_continuous(naive, *lo, *hi) - v).abs();
                for up in [true, false] {
                    let mut cand = naive;
                    for _ in 0..3 {
                        cand = if up { cand.next_up() } else { cand.next_down() };
                        let cand = cand.clamp(0.0, 1.0);
                        let err = (quantize_continuous(cand, *lo, *hi) - v).abs();
                        if err < best_err {
                            best = cand;
                            best_err = err;
                        }
                        if err == 0.0 {
                            break;
                        }
                    }
                }
                best
            }
            DimKind::Discrete(vals) => {
                let k = vals.len() as f64;
                let idx = vals
                    .iter()
                    .position(|&x| x as f64 == v)
                    .expect("validated above");
                (idx as f64 + 0.5) / k
            }
        })
        .collect();
    Ok(NormalizedParams(values))
}

/// Constant per-parameter planes: plane `p` holds `u_p` everywhere.
/// Differentiable; gradients of the planes sum back into `u`.
pub fn param_planes<T: Real>(u: &Tensor<T>, h: usize, w: usize) -> autodiff::Result<Tensor<T>> {
    autodiff::broadcast_planes(u, h, w)
}
