//! Trivial black boxes for pipeline tests and diagnostics.

use crate::image::Image;

use super::{validate, BlackBox, ConcreteParams, ParamDim, ParamSpace, Result};

/// Ignores its parameters and returns the input unchanged.
pub struct IdentityBox {
    space: ParamSpace,
}

impl IdentityBox {
    pub fn new() -> IdentityBox {
        IdentityBox {
            space: ParamSpace::bm3d(),
        }
    }

    pub fn with_space(space: ParamSpace) -> IdentityBox {
        IdentityBox { space }
    }
}

impl Default for IdentityBox {
    fn default() -> Self {
        IdentityBox::new()
    }
}

impl BlackBox for IdentityBox {
    fn space(&self) -> &ParamSpace {
        &self.space
    }

    fn evaluate(&self, image: &Image, params: &ConcreteParams) -> Result<Image> {
        validate(params, &self.space)?;
        Ok(image.clone())
    }
}

/// Single-parameter box: adds `cff/100` to every pixel, clamped to
/// `[0,1]`. Its optimum against a shifted ground truth is known in
/// closed form, which makes it the recovery oracle for the optimizers.
pub struct ShiftBox {
    space: ParamSpace,
}

impl ShiftBox {
    pub fn new() -> ShiftBox {
        ShiftBox {
            space: ParamSpace::new(vec![ParamDim::continuous("cff", 1.0, 20.0)]),
        }
    }
}

impl Default for ShiftBox {
    fn default() -> Self {
        ShiftBox::new()
    }
}

impl BlackBox for ShiftBox {
    fn space(&self) -> &ParamSpace {
        &self.space
    }

    fn evaluate(&self, image: &Image, params: &ConcreteParams) -> Result<Image> {
        validate(params, &self.space)?;
        let shift = (params.value(0) / 100.0) as f32;
        let mut out = image.clone();
        for v in out.as_mut_slice() {
            *v = (*v + shift).clamp(0.0, 1.0);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_returns_input() {
        let bb = IdentityBox::new();
        let img = Image::from_fn(8, 8, 3, |y, x, c| (y + x + c) as f32 / 20.0);
        let params = ConcreteParams::new(vec![10.0, 4.0, 0.0, 0.0, 3.0]);
        assert_eq!(bb.evaluate(&img, &params).unwrap(), img);
    }

    #[test]
    fn shift_adds_and_clamps() {
        let bb = ShiftBox::new();
        let img = Image::constant(2, 2, 1, 0.95);
        let out = bb
            .evaluate(&img, &ConcreteParams::new(vec![10.0]))
            .unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 1.0));
        let out = bb.evaluate(&img, &ConcreteParams::new(vec![1.0])).unwrap();
        assert!((out.get(0, 0, 0) - 0.96).abs() < 1e-6);
    }

    #[test]
    fn shift_rejects_wrong_arity() {
        let bb = ShiftBox::new();
        let img = Image::zeros(2, 2, 1);
        assert!(bb
            .evaluate(&img, &ConcreteParams::new(vec![1.0, 2.0]))
            .is_err());
    }
}
