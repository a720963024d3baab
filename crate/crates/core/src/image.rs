//! Plain dense image values (HxWxC, row-major, channel-last, f32).
//!
//! Unlike [`crate::autodiff::Tensor`], an `Image` is `Send + Sync` and
//! carries no gradient machinery, so black-box evaluation and metric
//! computation can run across threads freely.

use crate::autodiff::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(h: usize, w: usize, c: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), h * w * c, "image data length mismatch");
        Image { h, w, c, data }
    }

    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Image::new(h, w, c, vec![0.0; h * w * c])
    }

    pub fn constant(h: usize, w: usize, c: usize, value: f32) -> Self {
        Image::new(h, w, c, vec![value; h * w * c])
    }

    pub fn from_fn(h: usize, w: usize, c: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data.push(f(y, x, ch));
                }
            }
        }
        Image::new(h, w, c, data)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, y: usize, x: usize, ch: usize) -> f32 {
        self.data[(y * self.w + x) * self.c + ch]
    }

    pub fn set(&mut self, y: usize, x: usize, ch: usize, v: f32) {
        self.data[(y * self.w + x) * self.c + ch] = v;
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// One channel as a separate HxWx1 plane.
    pub fn channel_plane(&self, ch: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.h * self.w);
        for px in 0..self.h * self.w {
            out.push(self.data[px * self.c + ch]);
        }
        out
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Mirrors the image horizontally (used by metric invariance tests).
    pub fn flip_horizontal(&self) -> Image {
        Image::from_fn(self.h, self.w, self.c, |y, x, ch| {
            self.get(y, self.w - 1 - x, ch)
        })
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(&[self.h, self.w, self.c], self.data.clone()).expect("image shape is valid")
    }

    pub fn from_tensor(t: &Tensor<f32>) -> Image {
        let shape = t.shape();
        assert_eq!(shape.len(), 3, "image tensors are rank 3");
        Image::new(shape[0], shape[1], shape[2], t.to_vec())
    }
}
