use std::cell::RefCell;
use std::rc::{Rc, Weak};

use super::ops::OpRecord;
use super::tensor::{Real, Tensor, TensorInner};
use super::{AutodiffError, Result};

/// A tensor's membership of a tape: which tape, which node slot, and the
/// tape generation the slot belongs to. A binding from a cleared tape is
/// stale and the tensor behaves as a detached constant.
pub(super) struct NodeBinding<T: Real> {
    pub(super) tape: Weak<RefCell<TapeInner<T>>>,
    pub(super) id: usize,
    pub(super) generation: u64,
}

pub(super) struct TapeInner<T: Real> {
    /// Node slot -> the tensor occupying it (weakly, so dropped
    /// intermediates release their storage once the tape goes away).
    pub(super) nodes: Vec<Weak<RefCell<TensorInner<T>>>>,
    /// Operations in append order. Backward walks this in reverse.
    pub(super) ops: Vec<OpRecord<T>>,
    pub(super) generation: u64,
}

/// Records operations for one forward/backward cycle.
///
/// Typical use: create a tape, `watch` the trainable leaves, run the
/// forward computation, call [`super::backward`] on the scalar loss, then
/// drop the tape. One tape must only ever be driven from one thread.
pub struct Tape<T: Real> {
    pub(super) inner: Rc<RefCell<TapeInner<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                ops: Vec::new(),
                generation: 0,
            })),
        }
    }

    /// Registers `t` as a leaf node so gradients will accumulate into it.
    /// Watching the same tensor twice is a no-op.
    pub fn watch(&self, t: &Tensor<T>) {
        let current = self.binding_id(t);
        if current.is_some() {
            return;
        }
        let id = self.register(t);
        t.inner.borrow_mut().node = Some(NodeBinding {
            tape: Rc::downgrade(&self.inner),
            id,
            generation: self.inner.borrow().generation,
        });
    }

    /// Drops every recorded node and operation. Handles into the tape
    /// become invalid; backward through them reports `ClearedTape`.
    pub fn clear(&self) {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.clear();
        inner.ops.clear();
        inner.generation += 1;
    }

    pub fn num_ops(&self) -> usize {
        self.inner.borrow().ops.len()
    }

    /// Allocates a node slot for `t` on this tape (leaf or op output).
    pub(super) fn register(&self, t: &Tensor<T>) -> usize {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Rc::downgrade(&t.inner));
        id
    }

    pub(super) fn bind(&self, t: &Tensor<T>, id: usize) {
        t.inner.borrow_mut().node = Some(NodeBinding {
            tape: Rc::downgrade(&self.inner),
            id,
            generation: self.inner.borrow().generation,
        });
    }

    pub(super) fn record(&self, op: OpRecord<T>) {
        self.inner.borrow_mut().ops.push(op);
    }

    /// Node id of `t` on this tape, if its binding is alive and current.
    pub(super) fn binding_id(&self, t: &Tensor<T>) -> Option<usize> {
        let inner = t.inner.borrow();
        let binding = inner.node.as_ref()?;
        let tape = binding.tape.upgrade()?;
        if !Rc::ptr_eq(&tape, &self.inner) {
            return None;
        }
        if tape.borrow().generation != binding.generation {
            return None;
        }
        Some(binding.id)
    }
}

/// The live tape a set of op inputs belongs to, if any. Stale bindings
/// (dropped or cleared tapes) count as detached. Two distinct live tapes
/// in one op is an error.
pub(super) fn resolve_tape<T: Real>(inputs: &[&Tensor<T>]) -> Result<Option<Tape<T>>> {
    let mut found: Option<Rc<RefCell<TapeInner<T>>>> = None;
    for t in inputs {
        let inner = t.inner.borrow();
        let Some(binding) = inner.node.as_ref() else {
            continue;
        };
        let Some(tape) = binding.tape.upgrade() else {
            continue;
        };
        if tape.borrow().generation != binding.generation {
            continue;
        }
        match &found {
            None => found = Some(tape),
            Some(existing) => {
                if !Rc::ptr_eq(existing, &tape) {
                    return Err(AutodiffError::MixedTapes);
                }
            }
        }
    }
    Ok(found.map(|inner| Tape { inner }))
}

/// Runs the reverse pass from a scalar loss. Gradients accumulate (add)
/// into the `grad` buffer of every tape-participating tensor reachable
/// from the loss that is still alive.
pub(super) fn run_backward<T: Real>(loss: &Tensor<T>) -> Result<()> {
    let (tape, loss_id) = {
        let inner = loss.inner.borrow();
        if !inner.shape.is_empty() {
            return Err(AutodiffError::NonScalarLoss {
                shape: inner.shape.clone(),
            });
        }
        let binding = inner.node.as_ref().ok_or(AutodiffError::DetachedLoss)?;
        let tape = binding.tape.upgrade().ok_or(AutodiffError::ClearedTape)?;
        if tape.borrow().generation != binding.generation {
            return Err(AutodiffError::ClearedTape);
        }
        (tape, binding.id)
    };

    // Clone the op list (cheap handle clones) so tensor borrows inside the
    // walk never alias the tape borrow.
    let (ops, n_nodes) = {
        let inner = tape.borrow();
        (inner.ops.clone(), inner.nodes.len())
    };

    let mut grads: Vec<Option<Vec<T>>> = (0..n_nodes).map(|_| None).collect();
    grads[loss_id] = Some(vec![T::one()]);

    for op in ops.iter().rev() {
        op.backward(&mut grads)?;
    }

    let nodes = tape.borrow().nodes.clone();
    for (id, weak) in nodes.iter().enumerate() {
        let Some(grad) = grads[id].take() else {
            continue;
        };
        let Some(cell) = weak.upgrade() else {
            continue;
        };
        let mut inner = cell.borrow_mut();
        match &mut inner.grad {
            Some(existing) => {
                for (e, g) in existing.iter_mut().zip(&grad) {
                    *e = *e + *g;
                }
            }
            None => inner.grad = Some(grad),
        }
    }
    Ok(())
}

/// Helper for backward rules: adds `contribution` into the grad slot.
pub(super) fn accumulate<T: Real>(
    grads: &mut [Option<Vec<T>>],
    id: usize,
    contribution: impl FnOnce() -> Vec<T>,
) {
    let slot = &mut grads[id];
    match slot {
        Some(existing) => {
            let add = contribution();
            debug_assert_eq!(existing.len(), add.len());
            for (e, g) in existing.iter_mut().zip(&add) {
                *e = *e + *g;
            }
        }
        None => *slot = Some(contribution()),
    }
}
