use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::{AutodiffError, Result};

/// Scalar element of a tensor. Implemented for `f32` (storage precision)
/// and `f64` (gradient-check precision).
pub trait Real:
    num_traits::Float + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

pub(super) struct TensorInner<T: Real> {
    pub(super) shape: Vec<usize>,
    pub(super) data: Vec<T>,
    pub(super) grad: Option<Vec<T>>,
    pub(super) node: Option<super::tape::NodeBinding<T>>,
}

/// Dense n-dimensional array (rank ≤ 4, row-major, channel-last for
/// images). Cloning a `Tensor` clones a cheap handle to shared storage.
pub struct Tensor<T: Real> {
    pub(super) inner: Rc<RefCell<TensorInner<T>>>,
}

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        write!(f, "Tensor{:?}", inner.shape)
    }
}

pub(super) fn shape_len(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tensor<T> {
    /// Builds a detached tensor from a shape and row-major data.
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.len() > 4 {
            return Err(AutodiffError::RankTooHigh { rank: shape.len() });
        }
        if shape_len(shape) != data.len() {
            return Err(AutodiffError::LengthMismatch {
                op: "Tensor::new",
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Tensor::from_parts(shape.to_vec(), data))
    }

    pub(super) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        Tensor {
            inner: Rc::new(RefCell::new(TensorInner {
                shape,
                data,
                grad: None,
                node: None,
            })),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::from_parts(shape.to_vec(), vec![T::zero(); shape_len(shape)])
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor::from_parts(shape.to_vec(), vec![value; shape_len(shape)])
    }

    /// Rank-0 tensor holding a single value.
    pub fn scalar(value: T) -> Self {
        Tensor::from_parts(Vec::new(), vec![value])
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn rank(&self) -> usize {
        self.inner.borrow().shape.len()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True when the tensor is rank 0 (a single scalar value).
    pub fn is_scalar(&self) -> bool {
        self.inner.borrow().shape.is_empty()
    }

    /// The single value of a rank-0 or length-1 tensor.
    pub fn item(&self) -> T {
        let inner = self.inner.borrow();
        debug_assert_eq!(inner.data.len(), 1);
        inner.data[0]
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.borrow().data.clone()
    }

    /// Element at a row-major multi-index.
    pub fn at(&self, index: &[usize]) -> T {
        let inner = self.inner.borrow();
        assert_eq!(index.len(), inner.shape.len(), "index rank mismatch");
        let mut flat = 0usize;
        for (i, &ix) in index.iter().enumerate() {
            assert!(ix < inner.shape[i], "index out of bounds");
            flat = flat * inner.shape[i] + ix;
        }
        inner.data[flat]
    }

    /// Accumulated gradient, if backward has produced one.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.borrow().grad.clone()
    }

    /// Overwrites the gradient buffer (manual seeding; optimizer tests).
    pub fn set_grad(&self, grad: Vec<T>) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        if grad.len() != inner.data.len() {
            return Err(AutodiffError::LengthMismatch {
                op: "set_grad",
                shape: inner.shape.clone(),
                len: grad.len(),
            });
        }
        inner.grad = Some(grad);
        Ok(())
    }

    /// Value copy detached from any tape. Gradients never flow through it.
    pub fn detach(&self) -> Tensor<T> {
        let inner = self.inner.borrow();
        Tensor::from_parts(inner.shape.clone(), inner.data.clone())
    }

    /// Replaces the stored values. The shape must not change. Used by
    /// optimizers; does not record on any tape.
    pub fn set_data(&self, data: Vec<T>) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        if data.len() != inner.data.len() {
            return Err(AutodiffError::LengthMismatch {
                op: "set_data",
                shape: inner.shape.clone(),
                len: data.len(),
            });
        }
        inner.data = data;
        Ok(())
    }

    /// In-place elementwise mutation of the stored values (no tape effect).
    pub fn update_data(&self, f: impl FnMut(&mut T)) {
        self.inner.borrow_mut().data.iter_mut().for_each(f);
    }

    /// Clamps every stored value into `[lo, hi]` in place.
    pub fn clamp_in_place(&self, lo: T, hi: T) {
        self.update_data(|v| {
            if *v < lo {
                *v = lo;
            } else if *v > hi {
                *v = hi;
            }
        });
    }

    /// Runs `f` over the raw data slice.
    pub fn with_data<R>(&self, f: impl FnOnce(&[T]) -> R) -> R {
        f(&self.inner.borrow().data)
    }

    /// Casts element type (used to build f64 gradient-check twins).
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        let inner = self.inner.borrow();
        Tensor::from_parts(
            inner.shape.clone(),
            inner.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length() {
        assert!(Tensor::<f32>::new(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::new(&[2, 2], vec![0.0; 4]).is_ok());
    }

    #[test]
    fn scalar_is_rank_zero() {
        let s = Tensor::scalar(3.5f32);
        assert!(s.is_scalar());
        assert_eq!(s.len(), 1);
        assert_eq!(s.item(), 3.5);
    }

    #[test]
    fn zero_channel_tensor_is_allowed() {
        let t = Tensor::<f32>::zeros(&[4, 4, 0]);
        assert_eq!(t.len(), 0);
    }

    #[test]
    fn rank_limit() {
        assert!(Tensor::<f32>::new(&[1, 1, 1, 1, 1], vec![0.0]).is_err());
    }

    #[test]
    fn clamp_in_place_clamps() {
        let t = Tensor::new(&[3], vec![-1.0f32, 0.5, 2.0]).unwrap();
        t.clamp_in_place(0.0, 1.0);
        assert_eq!(t.to_vec(), vec![0.0, 0.5, 1.0]);
    }
}
