use super::conv;
use super::tape::{accumulate, resolve_tape, run_backward};
use super::tensor::{Real, Tensor};
use super::{AutodiffError, Result};

/// An input captured by a recorded op: the value handle plus its node id
/// when the input participates in the tape (detached inputs carry `None`
/// and receive no gradient).
pub(super) struct Saved<T: Real> {
    t: Tensor<T>,
    id: Option<usize>,
}

impl<T: Real> Clone for Saved<T> {
    fn clone(&self) -> Self {
        Saved {
            t: self.t.clone(),
            id: self.id,
        }
    }
}

pub(super) enum OpRecord<T: Real> {
    Add {
        a: Saved<T>,
        b: Saved<T>,
        scalar_b: bool,
        out: usize,
    },
    Sub {
        a: Saved<T>,
        b: Saved<T>,
        scalar_b: bool,
        out: usize,
    },
    Mul {
        a: Saved<T>,
        b: Saved<T>,
        scalar_b: bool,
        out: usize,
    },
    Relu {
        x: Saved<T>,
        out: usize,
    },
    Sigmoid {
        x_id: Option<usize>,
        y: Tensor<T>,
        out: usize,
    },
    Conv2d {
        input: Saved<T>,
        kernel: Saved<T>,
        bias: Saved<T>,
        h: usize,
        w: usize,
        k: usize,
        cin: usize,
        cout: usize,
        out: usize,
    },
    Down2 {
        x_id: Option<usize>,
        h: usize,
        w: usize,
        c: usize,
        out: usize,
    },
    Up2 {
        x_id: Option<usize>,
        h: usize,
        w: usize,
        c: usize,
        out: usize,
    },
    ConcatC {
        a_id: Option<usize>,
        b_id: Option<usize>,
        h: usize,
        w: usize,
        c1: usize,
        c2: usize,
        out: usize,
    },
    ChannelMean {
        x_id: Option<usize>,
        h: usize,
        w: usize,
        c: usize,
        out: usize,
    },
    BroadcastPlanes {
        u_id: Option<usize>,
        h: usize,
        w: usize,
        p: usize,
        out: usize,
    },
    MseLoss {
        pred: Saved<T>,
        target: Tensor<T>,
        out: usize,
    },
    SumAll {
        x_id: Option<usize>,
        len: usize,
        out: usize,
    },
}

impl<T: Real> Clone for OpRecord<T> {
    fn clone(&self) -> Self {
        use OpRecord::*;
        match self {
            Add { a, b, scalar_b, out } => Add {
                a: a.clone(),
                b: b.clone(),
                scalar_b: *scalar_b,
                out: *out,
            },
            Sub { a, b, scalar_b, out } => Sub {
                a: a.clone(),
                b: b.clone(),
                scalar_b: *scalar_b,
                out: *out,
            },
            Mul { a, b, scalar_b, out } => Mul {
                a: a.clone(),
                b: b.clone(),
                scalar_b: *scalar_b,
                out: *out,
            },
            Relu { x, out } => Relu {
                x: x.clone(),
                out: *out,
            },
            Sigmoid { x_id, y, out } => Sigmoid {
                x_id: *x_id,
                y: y.clone(),
                out: *out,
            },
            Conv2d {
                input,
                kernel,
                bias,
                h,
                w,
                k,
                cin,
                cout,
                out,
            } => Conv2d {
                input: input.clone(),
                kernel: kernel.clone(),
                bias: bias.clone(),
                h: *h,
                w: *w,
                k: *k,
                cin: *cin,
                cout: *cout,
                out: *out,
            },
            Down2 { x_id, h, w, c, out } => Down2 {
                x_id: *x_id,
                h: *h,
                w: *w,
                c: *c,
                out: *out,
            },
            Up2 { x_id, h, w, c, out } => Up2 {
                x_id: *x_id,
                h: *h,
                w: *w,
                c: *c,
                out: *out,
            },
            ConcatC {
                a_id,
                b_id,
                h,
                w,
                c1,
                c2,
                out,
            } => ConcatC {
                a_id: *a_id,
                b_id: *b_id,
                h: *h,
                w: *w,
                c1: *c1,
                c2: *c2,
                out: *out,
            },
            ChannelMean { x_id, h, w, c, out } => ChannelMean {
                x_id: *x_id,
                h: *h,
                w: *w,
                c: *c,
                out: *out,
            },
            BroadcastPlanes { u_id, h, w, p, out } => BroadcastPlanes {
                u_id: *u_id,
                h: *h,
                w: *w,
                p: *p,
                out: *out,
            },
            MseLoss { pred, target, out } => MseLoss {
                pred: pred.clone(),
                target: target.clone(),
                out: *out,
            },
            SumAll { x_id, len, out } => SumAll {
                x_id: *x_id,
                len: *len,
                out: *out,
            },
        }
    }
}

fn ensure_finite<T: Real>(op: &'static str, data: &[T]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(AutodiffError::NonFinite { op })
    }
}

/// Attaches `out` to the inputs' tape (if any) and records the op built
/// by `make`, which receives the per-input node ids and the output id.
fn finish<T: Real>(
    inputs: &[&Tensor<T>],
    out: Tensor<T>,
    make: impl FnOnce(&dyn Fn(usize) -> Option<usize>, usize) -> OpRecord<T>,
) -> Result<Tensor<T>> {
    if let Some(tape) = resolve_tape(inputs)? {
        let ids: Vec<Option<usize>> = inputs.iter().map(|t| tape.binding_id(t)).collect();
        let out_id = tape.register(&out);
        tape.bind(&out, out_id);
        let record = make(&|i| ids[i], out_id);
        tape.record(record);
    }
    Ok(out)
}

fn saved<T: Real>(t: &Tensor<T>, id: Option<usize>) -> Saved<T> {
    Saved { t: t.clone(), id }
}

// ── Elementwise binary ops ──────────────────────────────────────────

enum BinKind {
    Add,
    Sub,
    Mul,
}

fn binary<T: Real>(kind: BinKind, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let name = match kind {
        BinKind::Add => "add",
        BinKind::Sub => "sub",
        BinKind::Mul => "mul",
    };
    let a_shape = a.shape();
    let b_shape = b.shape();
    let scalar_b = b_shape.is_empty() && !a_shape.is_empty();
    if !scalar_b && a_shape != b_shape {
        return Err(AutodiffError::ShapeMismatch {
            op: name,
            lhs: a_shape,
            rhs: b_shape,
        });
    }
    let f = |x: T, y: T| match kind {
        BinKind::Add => x + y,
        BinKind::Sub => x - y,
        BinKind::Mul => x * y,
    };
    let data = if std::rc::Rc::ptr_eq(&a.inner, &b.inner) {
        let ga = a.inner.borrow();
        ga.data.iter().map(|&x| f(x, x)).collect::<Vec<T>>()
    } else {
        let ga = a.inner.borrow();
        let gb = b.inner.borrow();
        if scalar_b {
            let s = gb.data[0];
            ga.data.iter().map(|&x| f(x, s)).collect()
        } else {
            ga.data.iter().zip(&gb.data).map(|(&x, &y)| f(x, y)).collect()
        }
    };
    ensure_finite(name, &data)?;
    let out = Tensor::from_parts(a_shape, data);
    finish(&[a, b], out, |ids, out_id| {
        let (sa, sb) = (saved(a, ids(0)), saved(b, ids(1)));
        match kind {
            BinKind::Add => OpRecord::Add {
                a: sa,
                b: sb,
                scalar_b,
                out: out_id,
            },
            BinKind::Sub => OpRecord::Sub {
                a: sa,
                b: sb,
                scalar_b,
                out: out_id,
            },
            BinKind::Mul => OpRecord::Mul {
                a: sa,
                b: sb,
                scalar_b,
                out: out_id,
            },
        }
    })
}

/// Elementwise sum. `b` may be rank-0 for scalar broadcast.
pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(BinKind::Add, a, b)
}

/// Elementwise difference. `b` may be rank-0 for scalar broadcast.
pub fn sub<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(BinKind::Sub, a, b)
}

/// Elementwise product. `b` may be rank-0 for scalar broadcast.
pub fn mul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(BinKind::Mul, a, b)
}

// ── Activations ─────────────────────────────────────────────────────

/// Rectified linear unit; the subgradient at exactly 0 is 0.
pub fn relu<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let data: Vec<T> = x.with_data(|d| {
        d.iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect()
    });
    ensure_finite("relu", &data)?;
    let out = Tensor::from_parts(x.shape(), data);
    finish(&[x], out, |ids, out_id| OpRecord::Relu {
        x: saved(x, ids(0)),
        out: out_id,
    })
}

/// Logistic sigmoid, elementwise.
pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let data: Vec<T> = x.with_data(|d| {
        d.iter()
            .map(|&v| T::one() / (T::one() + (-v).exp()))
            .collect()
    });
    ensure_finite("sigmoid", &data)?;
    let out = Tensor::from_parts(x.shape(), data);
    let y = out.clone();
    finish(&[x], out, |ids, out_id| OpRecord::Sigmoid {
        x_id: ids(0),
        y,
        out: out_id,
    })
}

// ── Spatial ops ─────────────────────────────────────────────────────

fn image_dims<T: Real>(op: &'static str, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let shape = x.shape();
    if shape.len() != 3 {
        return Err(AutodiffError::ShapeMismatch {
            op,
            lhs: shape,
            rhs: vec![0, 0, 0],
        });
    }
    Ok((shape[0], shape[1], shape[2]))
}

/// 2x2 mean pooling. Requires even spatial extents.
pub fn downsample2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = image_dims("downsample2", x)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(AutodiffError::OddExtent {
            op: "downsample2",
            h,
            w,
        });
    }
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let data = x.with_data(|d| {
        let mut out = vec![T::zero(); ho * wo * c];
        for yo in 0..ho {
            for xo in 0..wo {
                let base = (yo * wo + xo) * c;
                for ch in 0..c {
                    let p00 = d[((2 * yo) * w + 2 * xo) * c + ch];
                    let p01 = d[((2 * yo) * w + 2 * xo + 1) * c + ch];
                    let p10 = d[((2 * yo + 1) * w + 2 * xo) * c + ch];
                    let p11 = d[((2 * yo + 1) * w + 2 * xo + 1) * c + ch];
                    out[base + ch] = (p00 + p01 + p10 + p11) * quarter;
                }
            }
        }
        out
    });
    ensure_finite("downsample2", &data)?;
    let out = Tensor::from_parts(vec![ho, wo, c], data);
    finish(&[x], out, |ids, out_id| OpRecord::Down2 {
        x_id: ids(0),
        h,
        w,
        c,
        out: out_id,
    })
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = image_dims("upsample2", x)?;
    let (ho, wo) = (2 * h, 2 * w);
    let data = x.with_data(|d| {
        let mut out = vec![T::zero(); ho * wo * c];
        for yo in 0..ho {
            for xo in 0..wo {
                let src = ((yo / 2) * w + xo / 2) * c;
                let dst = (yo * wo + xo) * c;
                out[dst..dst + c].copy_from_slice(&d[src..src + c]);
            }
        }
        out
    });
    let out = Tensor::from_parts(vec![ho, wo, c], data);
    finish(&[x], out, |ids, out_id| OpRecord::Up2 {
        x_id: ids(0),
        h,
        w,
        c,
        out: out_id,
    })
}

/// Stacks channels of two images of identical spatial size.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c1) = image_dims("concat_channels", a)?;
    let (hb, wb, c2) = image_dims("concat_channels", b)?;
    if h != hb || w != wb {
        return Err(AutodiffError::ShapeMismatch {
            op: "concat_channels",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let c = c1 + c2;
    let mut out = vec![T::zero(); h * w * c];
    a.with_data(|da| {
        b.with_data(|db| {
            for px in 0..h * w {
                out[px * c..px * c + c1].copy_from_slice(&da[px * c1..(px + 1) * c1]);
                out[px * c + c1..(px + 1) * c].copy_from_slice(&db[px * c2..(px + 1) * c2]);
            }
        })
    });
    let out = Tensor::from_parts(vec![h, w, c], out);
    finish(&[a, b], out, |ids, out_id| OpRecord::ConcatC {
        a_id: ids(0),
        b_id: ids(1),
        h,
        w,
        c1,
        c2,
        out: out_id,
    })
}

/// Per-channel spatial mean: HxWxC -> length-C vector.
pub fn channel_mean<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = image_dims("channel_mean", x)?;
    let n = (h * w) as f64;
    let data = x.with_data(|d| {
        let mut acc = vec![0f64; c];
        for px in 0..h * w {
            for ch in 0..c {
                acc[ch] += d[px * c + ch].as_f64();
            }
        }
        acc.into_iter()
            .map(|v| T::from_f64(v / n))
            .collect::<Vec<T>>()
    });
    ensure_finite("channel_mean", &data)?;
    let out = Tensor::from_parts(vec![c], data);
    finish(&[x], out, |ids, out_id| OpRecord::ChannelMean {
        x_id: ids(0),
        h,
        w,
        c,
        out: out_id,
    })
}

/// Broadcasts a length-P vector into P constant planes of size HxW.
/// The backward pass sums each plane's gradient into the vector entry.
pub fn broadcast_planes<T: Real>(u: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let shape = u.shape();
    if shape.len() != 1 {
        return Err(AutodiffError::ShapeMismatch {
            op: "broadcast_planes",
            lhs: shape,
            rhs: vec![0],
        });
    }
    let p = shape[0];
    let data = u.with_data(|d| {
        let mut out = vec![T::zero(); h * w * p];
        for px in 0..h * w {
            out[px * p..(px + 1) * p].copy_from_slice(d);
        }
        out
    });
    ensure_finite("broadcast_planes", &data)?;
    let out = Tensor::from_parts(vec![h, w, p], data);
    finish(&[u], out, |ids, out_id| OpRecord::BroadcastPlanes {
        u_id: ids(0),
        h,
        w,
        p,
        out: out_id,
    })
}

/// Mean squared error over all elements. The target must be detached.
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    if pred.shape() != target.shape() {
        return Err(AutodiffError::ShapeMismatch {
            op: "mse_loss",
            lhs: pred.shape(),
            rhs: target.shape(),
        });
    }
    if resolve_tape(&[target])?.is_some() {
        return Err(AutodiffError::TargetAttached);
    }
    let n = pred.len().max(1) as f64;
    let value = pred.with_data(|p| {
        target.with_data(|t| {
            let mut acc = 0f64;
            for (&a, &b) in p.iter().zip(t.iter()) {
                let d = a.as_f64() - b.as_f64();
                acc += d * d;
            }
            T::from_f64(acc / n)
        })
    });
    if !value.is_finite() {
        return Err(AutodiffError::NonFinite { op: "mse_loss" });
    }
    let out = Tensor::scalar(value);
    finish(&[pred], out, |ids, out_id| OpRecord::MseLoss {
        pred: saved(pred, ids(0)),
        target: target.detach(),
        out: out_id,
    })
}

/// Sum of all elements, as a rank-0 tensor.
pub fn sum_all<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let value = x.with_data(|d| {
        let mut acc = 0f64;
        for v in d {
            acc += v.as_f64();
        }
        T::from_f64(acc)
    });
    if !value.is_finite() {
        return Err(AutodiffError::NonFinite { op: "sum_all" });
    }
    let len = x.len();
    let out = Tensor::scalar(value);
    finish(&[x], out, |ids, out_id| OpRecord::SumAll {
        x_id: ids(0),
        len,
        out: out_id,
    })
}

/// Same-padded stride-1 cross-correlation.
///
/// `input` is HxWxCin, `kernel` KxKxCinxCout with odd K ≤ 5, `bias`
/// length Cout. The output is HxWxCout.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (h, w, cin) = image_dims("conv2d", input)?;
    let kshape = kernel.shape();
    if kshape.len() != 4 || kshape[0] != kshape[1] {
        return Err(AutodiffError::ShapeMismatch {
            op: "conv2d",
            lhs: kshape,
            rhs: vec![0, 0, 0, 0],
        });
    }
    let k = kshape[0];
    if k % 2 == 0 || k > 5 {
        return Err(AutodiffError::BadKernel { op: "conv2d", k });
    }
    if kshape[2] != cin {
        return Err(AutodiffError::ChannelMismatch {
            op: "conv2d",
            expected: kshape[2],
            got: cin,
        });
    }
    let cout = kshape[3];
    if bias.shape() != vec![cout] {
        return Err(AutodiffError::ChannelMismatch {
            op: "conv2d",
            expected: cout,
            got: bias.len(),
        });
    }
    let data = input.with_data(|inp| {
        kernel.with_data(|ker| bias.with_data(|b| conv::forward(inp, h, w, cin, ker, k, cout, b)))
    });
    ensure_finite("conv2d", &data)?;
    let out = Tensor::from_parts(vec![h, w, cout], data);
    finish(&[input, kernel, bias], out, |ids, out_id| OpRecord::Conv2d {
        input: saved(input, ids(0)),
        kernel: saved(kernel, ids(1)),
        bias: saved(bias, ids(2)),
        h,
        w,
        k,
        cin,
        cout,
        out: out_id,
    })
}

// ── Backward driver and rules ───────────────────────────────────────

/// Runs the reverse pass from a scalar loss on the active tape.
pub fn backward<T: Real>(loss: &Tensor<T>) -> Result<()> {
    run_backward(loss)
}

/// Resets the gradient buffers of the given tensors to zeros.
pub fn zero_grad<T: Real>(params: &[&Tensor<T>]) {
    for t in params {
        let len = t.len();
        t.inner.borrow_mut().grad = Some(vec![T::zero(); len]);
    }
}

impl<T: Real> OpRecord<T> {
    pub(super) fn backward(&self, grads: &mut [Option<Vec<T>>]) -> Result<()> {
        use OpRecord::*;
        match self {
            Add { a, b, scalar_b, out } => {
                let Some(g) = grads[*out].clone() else {
                    return Ok(());
                };
                if let Some(id) = a.id {
                    accumulate(grads, id, || g.clone());
                }
                if let Some(id) = b.id {
                    if *scalar_b {
                        let mut s = 0f64;
                        for v in &g {
                            s += v.as_f64();
                        }
                        accumulate(grads, id, || vec![T::from_f64(s)]);
                    } else {
                        accumulate(grads, id, || g.clone());
                    }
                }
            }
            Sub { a, b, scalar_b, out } => {
                let Some(g) = grads[*out].clone() else {
                    return Ok(());
                };
                if let Some(id) = a.id {
                    accumulate(grads, id, || g.clone());
                }
                if let Some(id) = b.id {
                    if *scalar_b {
                        let mut s = 0f64;
                        for v in &g {
                            s += v.as_f64();
                        }
                        accumulate(grads, id, || vec![T::from_f64(-s)]);
                    } else {
                        accumulate(grads, id, || g.iter().map(|&v| -v).collect());
                    }
                }
            }
            Mul { a, b, scalar_b, out } => {
                let Some(g) = grads[*out].clone() else {
                    return Ok(());
                };
                if let Some(id) = a.id {
                    let da: Vec<T> = if *scalar_b {
                        let s = b.t.item();
                        g.iter().map(|&v| v * s).collect()
                    } else {
                        b.t.with_data(|bd| g.iter().zip(bd).map(|(&v, &bv)| v * bv).collect())
                    };
                    accumulate(grads, id, || da);
                }
                if let Some(id) = b.id {
                    if *scalar_b {
                        let mut s = 0f64;
                        a.t.with_data(|ad| {
                            for (gv, av) in g.iter().zip(ad) {
                                s += gv.as_f64() * av.as_f64();
                            }
                        });
                        accumulate(grads, id, || vec![T::from_f64(s)]);
                    } else {
                        let db: Vec<T> =
                            a.t.with_data(|ad| g.iter().zip(ad).map(|(&v, &av)| v * av).collect());
                        accumulate(grads, id, || db);
                    }
                }
            }
            Relu { x, out } => {
                let Some(g) = grads[*out].clone() else {
                    return Ok(());
                };
                if let Some(id) = x.id {
                    let dx: Vec<T> = x.t.with_data(|xd| {
                        g.iter()
                            .zip(xd)
                            .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                            .collect()
                    });
                    accumulate(grads, id, || dx);
                }
            }
            Sigmoid { x_id, y, out } => {
                let Some(g) = grads[*out].clone() else {
                    return Ok(());
                };
                if let Some(id) = x_id {
                    let dx: Vec<T> = y.with_data(|yd| {
                        g.iter()
                            .zip(yd)
                            .map(|(&gv, &s)| gv * s * (T::one() - s))
                            .collect()
                    });
                    accumulate(grads, *id, || dx);
                }
            }
            Conv2d {
                input,
                kernel,
                bias,
                h,
                w,
                k,
                cin,
                cout,
                out,
            } => {
                let Some(g) = grads[*out].clone() else {
                    return Ok(());
                };
                if let Some(id) = input.id {
                    let din = kernel
                        .t
                        .with_data(|ker| conv::d_input(&g, *h, *w, *cout, ker, *k, *cin));
                    accumulate(grads, id, || din);
                }
                if let Some(id) = kernel.id {
                    let dker = input
                        .t
                        .with_data(|inp| conv::d_kernel(inp, *h, *w, *cin, &g, *cout, *k));
                    accumulate(grads, id, || dker);
                }
                if let Some(id) = bias.id {
                    let db = conv::d_bias(&g, *h, *w, *cout);
                    accumulate(grads, id, || db);
                }
            }
            Down2 { x_id, h, w, c, out } => {
                let Some(g) = grads[*out].clone() else {
                    return Ok(());
                };
                if let Some(id) = x_id {
                    let quarter = T::from_f64(0.25);
                    let (wo, cc) = (*w / 2, *c);
                    let mut dx = vec![T::zero(); h * w * cc];
                    for yi in 0..*h {
                        for xi in 0..*w {
                            let src = ((yi / 2) * wo + xi / 2) * cc;
                            let dst = (yi * w + xi) * cc;
                            for ch in 0..cc {
                                dx[dst + ch] = g[src + ch] * quarter;
                            }
                        }
                    }
                    accumulate(grads, *id, || dx);
                }
            }
            Up2 { x_id, h, w, c, out } => {
                let Some(g) = grads[*out].clone() else {
                    return Ok(());
                };
                if let Some(id) = x_id {
                    let (wo, cc) = (*w * 2, *c);
                    let mut dx = vec![T::zero(); h * w * cc];
                    for yo in 0..*h * 2 {
                        for xo in 0..wo {
                            let dst = ((yo / 2) * w + xo / 2) * cc;
                            let src = (yo * wo + xo) * cc;
                            for ch in 0..cc {
                                dx[dst + ch] = dx[dst + ch] + g[src + ch];
                            }
                        }
                    }
                    accumulate(grads, *id, || dx);
                }
            }
            ConcatC {
                a_id,
                b_id,
                h,
                w,
                c1,
                c2,
                out,
            } => {
                let Some(g) = grads[*out].clone() else {
                    return Ok(());
                };
                let c = c1 + c2;
                if let Some(id) = a_id {
                    let mut da = vec![T::zero(); h * w * c1];
                    for px in 0..h * w {
                        da[px * c1..(px + 1) * c1].copy_from_slice(&g[px * c..px * c + c1]);
                    }
                    accumulate(grads, *id, || da);
                }
                if let Some(id) = b_id {
                    let mut db = vec![T::zero(); h * w * c2];
                    for px in 0..h * w {
                        db[px * c2..(px + 1) * c2].copy_from_slice(&g[px * c + c1..(px + 1) * c]);
                    }
                    accumulate(grads, *id, || db);
                }
            }
            ChannelMean { x_id, h, w, c, out } => {
                let Some(g) = grads[*out].clone() else {
                    return Ok(());
                };
                if let Some(id) = x_id {
                    let inv = T::from_f64(1.0 / (*h as f64 * *w as f64));
                    let mut dx = vec![T::zero(); h * w * c];
                    for px in 0..h * w {
                        for ch in 0..*c {
                            dx[px * c + ch] = g[ch] * inv;
                        }
                    }
                    accumulate(grads, *id, || dx);
                }
            }
            BroadcastPlanes { u_id, h, w, p, out } => {
                let Some(g) = grads[*out].clone() else {
                    return Ok(());
                };
                if let Some(id) = u_id {
                    let mut acc = vec![0f64; *p];
                    for px in 0..h * w {
                        for ch in 0..*p {
                            acc[ch] += g[px * p + ch].as_f64();
                        }
                    }
                    accumulate(grads, *id, || {
                        acc.iter().map(|&v| T::from_f64(v)).collect()
                    });
                }
            }
            MseLoss { pred, target, out } => {
                let Some(g) = grads[*out].clone() else {
                    return Ok(());
                };
                if let Some(id) = pred.id {
                    let gs = g[0];
                    let n = T::from_f64(pred.t.len().max(1) as f64);
                    let two = T::from_f64(2.0);
                    let dp: Vec<T> = pred.t.with_data(|p| {
                        target.with_data(|t| {
                            p.iter()
                                .zip(t.iter())
                                .map(|(&a, &b)| gs * two * (a - b) / n)
                                .collect()
                        })
                    });
                    accumulate(grads, id, || dp);
                }
            }
            SumAll { x_id, len, out } => {
                let Some(g) = grads[*out].clone() else {
                    return Ok(());
                };
                if let Some(id) = x_id {
                    let gs = g[0];
                    accumulate(grads, *id, || vec![gs; *len]);
                }
            }
        }
        Ok(())
    }
}
