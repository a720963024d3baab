use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::rng::{stream, Stream};

fn t64(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape, data).unwrap()
}

fn t32(shape: &[usize], data: Vec<f32>) -> Tensor<f32> {
    Tensor::new(shape, data).unwrap()
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Central-difference gradient check in f64 (step 1e-3, rel tol 1e-3).
///
/// `f` must evaluate the same scalar function on detached inputs; the
/// analytic gradients are taken from a taped run over the same inputs.
fn fd_check(inputs: &[Tensor<f64>], grad_inputs: &[usize], f: &dyn Fn(&[Tensor<f64>]) -> Tensor<f64>) {
    const STEP: f64 = 1e-3;
    const TOL: f64 = 1e-3;

    let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
    zero_grad(&refs);
    let tape: Tape<f64> = Tape::new();
    for &i in grad_inputs {
        tape.watch(&inputs[i]);
    }
    let loss = f(inputs);
    backward(&loss).unwrap();

    for &i in grad_inputs {
        let analytic = inputs[i].grad().expect("missing gradient");
        let base: Vec<f64> = inputs[i].to_vec();
        for coord in 0..base.len() {
            let eval = |v: f64| -> f64 {
                let probes: Vec<Tensor<f64>> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        let mut d = t.to_vec();
                        if j == i {
                            d[coord] = v;
                        }
                        Tensor::new(&t.shape(), d).unwrap()
                    })
                    .collect();
                f(&probes).item()
            };
            let secant = |h: f64| (eval(base[coord] + h) - eval(base[coord] - h)) / (2.0 * h);
            let numeric = secant(STEP);
            let a = analytic[coord];
            let denom = a.abs().max(numeric.abs());
            if denom < 1e-6 {
                continue; // both gradients vanish
            }
            let rel = (a - numeric).abs() / denom;
            if rel >= TOL {
                // The two-step agreement test separates a wrong gradient
                // (both secants agree, both differ from analytic) from a
                // point where FD itself is invalid (a relu kink inside the
                // probe interval makes the secants disagree).
                let refined = secant(STEP / 2.0);
                let agree = (numeric - refined).abs() / numeric.abs().max(refined.abs()) < TOL;
                assert!(
                    !agree,
                    "fd mismatch input {i} coord {coord}: analytic {a} numeric {numeric} rel {rel}"
                );
            }
        }
    }
}

// ── Spec'd elementwise examples ─────────────────────────────────────

#[test]
fn add_elementwise() {
    let out = add(&t32(&[2], vec![1.0, 2.0]), &t32(&[2], vec![3.0, 4.0])).unwrap();
    assert_eq!(out.to_vec(), vec![4.0, 6.0]);
}

#[test]
fn mul_by_zero_tensor_zeroes_value_and_grad() {
    let tape: Tape<f32> = Tape::new();
    let x = t32(&[3], vec![1.0, -2.0, 3.0]);
    tape.watch(&x);
    let z = Tensor::zeros(&[3]);
    let prod = mul(&x, &z).unwrap();
    assert_eq!(prod.to_vec(), vec![0.0, 0.0, 0.0]);
    let loss = sum_all(&prod).unwrap();
    backward(&loss).unwrap();
    assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 0.0]);
}

#[test]
fn grad_of_x_squared_is_2x() {
    let tape: Tape<f32> = Tape::new();
    let x = Tensor::scalar(3.0f32);
    tape.watch(&x);
    let y = mul(&x, &x).unwrap();
    backward(&y).unwrap();
    assert_eq!(x.grad().unwrap(), vec![6.0]);
}

#[test]
fn scalar_broadcast_add_and_shape_error() {
    let a = t32(&[2], vec![1.0, 2.0]);
    let s = Tensor::scalar(10.0f32);
    assert_eq!(add(&a, &s).unwrap().to_vec(), vec![11.0, 12.0]);
    let bad = t32(&[3], vec![0.0; 3]);
    assert!(matches!(
        add(&a, &bad),
        Err(AutodiffError::ShapeMismatch { .. })
    ));
}

// ── Activations ─────────────────────────────────────────────────────

#[test]
fn relu_values() {
    let out = relu(&t32(&[2], vec![-1.0, 2.0])).unwrap();
    assert_eq!(out.to_vec(), vec![0.0, 2.0]);
}

#[test]
fn relu_subgradient_at_zero_is_zero() {
    let tape: Tape<f32> = Tape::new();
    let x = t32(&[1], vec![0.0]);
    tape.watch(&x);
    let loss = sum_all(&relu(&x).unwrap()).unwrap();
    backward(&loss).unwrap();
    assert_eq!(x.grad().unwrap(), vec![0.0]);
}

#[test]
fn sigmoid_at_zero() {
    let tape: Tape<f32> = Tape::new();
    let x = t32(&[1], vec![0.0]);
    tape.watch(&x);
    let s = sigmoid(&x).unwrap();
    assert_eq!(s.to_vec(), vec![0.5]);
    let loss = sum_all(&s).unwrap();
    backward(&loss).unwrap();
    assert_eq!(x.grad().unwrap(), vec![0.25]);
}

// ── Convolution ─────────────────────────────────────────────────────

#[test]
fn conv2d_k1_identity() {
    let x = t32(&[3, 4, 1], (0..12).map(|v| v as f32).collect());
    let k = t32(&[1, 1, 1, 1], vec![1.0]);
    let b = t32(&[1], vec![0.0]);
    let out = conv2d(&x, &k, &b).unwrap();
    assert_eq!(out.to_vec(), x.to_vec());
}

#[test]
fn conv2d_all_ones_interior_is_9c() {
    let c = 0.5f32;
    let x = Tensor::full(&[5, 5, 1], c);
    let k = Tensor::full(&[3, 3, 1, 1], 1.0f32);
    let b = Tensor::zeros(&[1]);
    let out = conv2d(&x, &k, &b).unwrap();
    assert_eq!(out.at(&[2, 2, 0]), 9.0 * c);
    // corner sees only the 2x2 in-bounds neighborhood
    assert_eq!(out.at(&[0, 0, 0]), 4.0 * c);
}

#[test]
fn conv2d_channel_mismatch_error() {
    let x = Tensor::<f32>::zeros(&[4, 4, 2]);
    let k = Tensor::<f32>::zeros(&[3, 3, 3, 1]);
    let b = Tensor::<f32>::zeros(&[1]);
    assert!(matches!(
        conv2d(&x, &k, &b),
        Err(AutodiffError::ChannelMismatch { .. })
    ));
}

#[test]
fn conv2d_kernel_grad_matches_fd_on_random_5x5() {
    let mut rng = stream(11, Stream::Test);
    for _ in 0..5 {
        let x = t64(&[5, 5, 2], rand_vec(&mut rng, 50));
        let k = t64(&[3, 3, 2, 2], rand_vec(&mut rng, 36));
        let b = t64(&[2], rand_vec(&mut rng, 2));
        let r = t64(&[5, 5, 2], rand_vec(&mut rng, 50));
        fd_check(&[x, k, b, r], &[0, 1, 2], &|ts| {
            sum_all(&mul(&conv2d(&ts[0], &ts[1], &ts[2]).unwrap(), &ts[3]).unwrap()).unwrap()
        });
    }
}

// ── Pooling / upsampling ────────────────────────────────────────────

#[test]
fn downsample2_means_cells() {
    let x = t32(&[2, 2, 1], vec![1.0, 1.0, 1.0, 1.0]);
    let out = downsample2(&x).unwrap();
    assert_eq!(out.shape(), vec![1, 1, 1]);
    assert_eq!(out.to_vec(), vec![1.0]);
}

#[test]
fn upsample2_duplicates() {
    let x = t32(&[1, 1, 1], vec![0.7]);
    let out = upsample2(&x).unwrap();
    assert_eq!(out.shape(), vec![2, 2, 1]);
    assert_eq!(out.to_vec(), vec![0.7; 4]);
}

#[test]
fn up_of_down_fixes_constants() {
    let x = Tensor::full(&[4, 6, 3], 0.31f32);
    let out = upsample2(&downsample2(&x).unwrap()).unwrap();
    assert_eq!(out.to_vec(), x.to_vec());
}

#[test]
fn downsample2_rejects_odd_extents() {
    let x = Tensor::<f32>::zeros(&[3, 4, 1]);
    assert!(matches!(
        downsample2(&x),
        Err(AutodiffError::OddExtent { .. })
    ));
}

// ── Concat / channel mean / planes ──────────────────────────────────

#[test]
fn concat_makes_eight_channels_from_3_plus_5() {
    let a = Tensor::<f32>::zeros(&[4, 4, 3]);
    let b = Tensor::<f32>::zeros(&[4, 4, 5]);
    assert_eq!(concat_channels(&a, &b).unwrap().shape(), vec![4, 4, 8]);
}

#[test]
fn concat_with_zero_channels_is_identity() {
    let a = t32(&[2, 2, 2], (0..8).map(|v| v as f32).collect());
    let empty = Tensor::<f32>::zeros(&[2, 2, 0]);
    let out = concat_channels(&a, &empty).unwrap();
    assert_eq!(out.shape(), vec![2, 2, 2]);
    assert_eq!(out.to_vec(), a.to_vec());
}

#[test]
fn concat_grad_slices_back() {
    let tape: Tape<f32> = Tape::new();
    let a = t32(&[2, 2, 1], vec![0.1; 4]);
    let b = t32(&[2, 2, 2], vec![0.2; 8]);
    tape.watch(&a);
    let loss = sum_all(&concat_channels(&a, &b).unwrap()).unwrap();
    backward(&loss).unwrap();
    assert_eq!(a.grad().unwrap(), vec![1.0; 4]);
}

#[test]
fn channel_mean_values_and_grad() {
    let v = Tensor::full(&[3, 3, 2], 0.42f32);
    assert_eq!(channel_mean(&v).unwrap().to_vec(), vec![0.42, 0.42]);

    let plane = t32(&[2, 2, 1], vec![0.0, 1.0, 1.0, 0.0]);
    assert_eq!(channel_mean(&plane).unwrap().to_vec(), vec![0.5]);

    let tape: Tape<f32> = Tape::new();
    let x = t32(&[2, 2, 1], vec![0.3; 4]);
    tape.watch(&x);
    let loss = sum_all(&channel_mean(&x).unwrap()).unwrap();
    backward(&loss).unwrap();
    assert_eq!(x.grad().unwrap(), vec![0.25; 4]);
}

#[test]
fn broadcast_planes_constant_and_roundtrip() {
    let u = t32(&[5], vec![0.2, 0.4, 0.6, 0.8, 1.0]);
    let planes = broadcast_planes(&u, 4, 4).unwrap();
    assert_eq!(planes.shape(), vec![4, 4, 5]);
    assert_eq!(planes.at(&[2, 3, 0]), 0.2);
    assert_eq!(channel_mean(&planes).unwrap().to_vec(), u.to_vec());
}

#[test]
fn broadcast_planes_grad_is_hw() {
    let tape: Tape<f32> = Tape::new();
    let u = t32(&[2], vec![0.5, 0.5]);
    tape.watch(&u);
    let loss = sum_all(&broadcast_planes(&u, 3, 4).unwrap()).unwrap();
    backward(&loss).unwrap();
    assert_eq!(u.grad().unwrap(), vec![12.0, 12.0]);
}

// ── Loss / backward ─────────────────────────────────────────────────

#[test]
fn mse_examples() {
    let x = t32(&[2], vec![0.3, 0.9]);
    assert_eq!(mse_loss(&x, &x).unwrap().item(), 0.0);
    let zero = t32(&[2], vec![0.0, 0.0]);
    let one = t32(&[2], vec![1.0, 1.0]);
    assert_eq!(mse_loss(&zero, &one).unwrap().item(), 1.0);

    let tape: Tape<f32> = Tape::new();
    let pred = t32(&[2], vec![0.0, 0.0]);
    tape.watch(&pred);
    let loss = mse_loss(&pred, &one).unwrap();
    backward(&loss).unwrap();
    assert_eq!(pred.grad().unwrap(), vec![-1.0, -1.0]);
}

#[test]
fn mse_rejects_attached_target() {
    let tape: Tape<f32> = Tape::new();
    let pred = t32(&[1], vec![0.0]);
    let target = t32(&[1], vec![1.0]);
    tape.watch(&target);
    assert!(matches!(
        mse_loss(&pred, &target),
        Err(AutodiffError::TargetAttached)
    ));
}

#[test]
fn chain_rule_through_mse() {
    // loss = mse(w*x, y) with w=1, x=2, y=0 -> dloss/dw = 2*(2)*2 = 8
    let tape: Tape<f32> = Tape::new();
    let w = t32(&[1], vec![1.0]);
    tape.watch(&w);
    let x = t32(&[1], vec![2.0]);
    let y = t32(&[1], vec![0.0]);
    let loss = mse_loss(&mul(&w, &x).unwrap(), &y).unwrap();
    backward(&loss).unwrap();
    assert_eq!(w.grad().unwrap(), vec![8.0]);
}

#[test]
fn fanout_accumulates_additively() {
    let tape: Tape<f32> = Tape::new();
    let x = Tensor::scalar(2.0f32);
    tape.watch(&x);
    // x + x -> gradient 2
    let loss = add(&x, &x).unwrap();
    backward(&loss).unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0]);
}

#[test]
fn backward_errors() {
    let x = t32(&[2], vec![1.0, 2.0]);
    assert!(matches!(
        backward(&sum_all(&x).unwrap()),
        Err(AutodiffError::DetachedLoss)
    ));

    let tape: Tape<f32> = Tape::new();
    tape.watch(&x);
    let vec_out = add(&x, &x).unwrap();
    assert!(matches!(
        backward(&vec_out),
        Err(AutodiffError::NonScalarLoss { .. })
    ));

    let loss = sum_all(&x).unwrap();
    tape.clear();
    assert!(matches!(backward(&loss), Err(AutodiffError::ClearedTape)));
}

#[test]
fn mixing_two_tapes_is_an_error() {
    let t1: Tape<f32> = Tape::new();
    let t2: Tape<f32> = Tape::new();
    let a = t32(&[1], vec![1.0]);
    let b = t32(&[1], vec![2.0]);
    t1.watch(&a);
    t2.watch(&b);
    assert!(matches!(add(&a, &b), Err(AutodiffError::MixedTapes)));
}

#[test]
fn nan_input_is_rejected() {
    let x = t32(&[1], vec![f32::NAN]);
    let y = t32(&[1], vec![1.0]);
    assert!(matches!(
        add(&x, &y),
        Err(AutodiffError::NonFinite { .. })
    ));
}

// ── Invariants: FD per op, determinism, replay ──────────────────────

#[test]
fn fd_per_op_twenty_instances() {
    let mut rng = stream(23, Stream::Test);
    for _ in 0..20 {
        // add / sub / mul with weighting tensor
        let n = 6;
        let a = t64(&[n], rand_vec(&mut rng, n));
        let b = t64(&[n], rand_vec(&mut rng, n));
        let r = t64(&[n], rand_vec(&mut rng, n));
        fd_check(&[a.clone(), b.clone(), r.clone()], &[0, 1], &|ts| {
            sum_all(&mul(&add(&ts[0], &ts[1]).unwrap(), &ts[2]).unwrap()).unwrap()
        });
        fd_check(&[a.clone(), b.clone(), r.clone()], &[0, 1], &|ts| {
            sum_all(&mul(&sub(&ts[0], &ts[1]).unwrap(), &ts[2]).unwrap()).unwrap()
        });
        fd_check(&[a, b, r], &[0, 1], &|ts| {
            sum_all(&mul(&mul(&ts[0], &ts[1]).unwrap(), &ts[2]).unwrap()).unwrap()
        });

        // scalar broadcast
        let a = t64(&[n], rand_vec(&mut rng, n));
        let s = Tensor::scalar(rng.gen_range(-1.0..1.0));
        let r = t64(&[n], rand_vec(&mut rng, n));
        fd_check(&[a, s, r], &[0, 1], &|ts| {
            sum_all(&mul(&mul(&ts[0], &ts[1]).unwrap(), &ts[2]).unwrap()).unwrap()
        });

        // relu away from the kink
        let mut xv = rand_vec(&mut rng, n);
        for v in &mut xv {
            if v.abs() < 0.05 {
                *v += 0.1;
            }
        }
        let x = t64(&[n], xv);
        let r = t64(&[n], rand_vec(&mut rng, n));
        fd_check(&[x, r], &[0], &|ts| {
            sum_all(&mul(&relu(&ts[0]).unwrap(), &ts[1]).unwrap()).unwrap()
        });

        // sigmoid
        let x = t64(&[n], rand_vec(&mut rng, n));
        let r = t64(&[n], rand_vec(&mut rng, n));
        fd_check(&[x, r], &[0], &|ts| {
            sum_all(&mul(&sigmoid(&ts[0]).unwrap(), &ts[1]).unwrap()).unwrap()
        });

        // downsample2 / upsample2
        let x = t64(&[4, 4, 2], rand_vec(&mut rng, 32));
        let r = t64(&[2, 2, 2], rand_vec(&mut rng, 8));
        fd_check(&[x, r], &[0], &|ts| {
            sum_all(&mul(&downsample2(&ts[0]).unwrap(), &ts[1]).unwrap()).unwrap()
        });
        let x = t64(&[2, 2, 2], rand_vec(&mut rng, 8));
        let r = t64(&[4, 4, 2], rand_vec(&mut rng, 32));
        fd_check(&[x, r], &[0], &|ts| {
            sum_all(&mul(&upsample2(&ts[0]).unwrap(), &ts[1]).unwrap()).unwrap()
        });

        // concat_channels
        let a = t64(&[3, 2, 2], rand_vec(&mut rng, 12));
        let b = t64(&[3, 2, 1], rand_vec(&mut rng, 6));
        let r = t64(&[3, 2, 3], rand_vec(&mut rng, 18));
        fd_check(&[a, b, r], &[0, 1], &|ts| {
            sum_all(&mul(&concat_channels(&ts[0], &ts[1]).unwrap(), &ts[2]).unwrap()).unwrap()
        });

        // channel_mean
        let x = t64(&[3, 3, 2], rand_vec(&mut rng, 18));
        let r = t64(&[2], rand_vec(&mut rng, 2));
        fd_check(&[x, r], &[0], &|ts| {
            sum_all(&mul(&channel_mean(&ts[0]).unwrap(), &ts[1]).unwrap()).unwrap()
        });

        // broadcast_planes
        let u = t64(&[3], rand_vec(&mut rng, 3));
        let r = t64(&[2, 2, 3], rand_vec(&mut rng, 12));
        fd_check(&[u, r], &[0], &|ts| {
            sum_all(&mul(&broadcast_planes(&ts[0], 2, 2).unwrap(), &ts[1]).unwrap()).unwrap()
        });

        // mse_loss
        let p = t64(&[5], rand_vec(&mut rng, 5));
        let t = t64(&[5], rand_vec(&mut rng, 5));
        fd_check(&[p, t], &[0], &|ts| mse_loss(&ts[0], &ts[1]).unwrap());
    }
}

#[test]
fn two_layer_net_grad_matches_fd() {
    let mut rng = stream(31, Stream::Test);
    for _ in 0..3 {
        let x = t64(&[4, 4, 2], rand_vec(&mut rng, 32));
        let k1 = t64(&[3, 3, 2, 3], rand_vec(&mut rng, 54));
        let b1 = t64(&[3], rand_vec(&mut rng, 3));
        let k2 = t64(&[3, 3, 3, 1], rand_vec(&mut rng, 27));
        let b2 = t64(&[1], rand_vec(&mut rng, 1));
        let target = t64(&[4, 4, 1], rand_vec(&mut rng, 16));
        fd_check(&[x, k1, b1, k2, b2, target], &[1, 2, 3, 4], &|ts| {
            let h = relu(&conv2d(&ts[0], &ts[1], &ts[2]).unwrap()).unwrap();
            let y = sigmoid(&conv2d(&h, &ts[3], &ts[4]).unwrap()).unwrap();
            mse_loss(&y, &ts[5]).unwrap()
        });
    }
}

#[test]
fn forward_is_deterministic() {
    let mut rng = stream(41, Stream::Test);
    let x = t32(&[16, 16, 3], rand_vec(&mut rng, 768).iter().map(|&v| v as f32).collect());
    let k = t32(&[3, 3, 3, 8], rand_vec(&mut rng, 216).iter().map(|&v| v as f32).collect());
    let b = t32(&[8], rand_vec(&mut rng, 8).iter().map(|&v| v as f32).collect());
    let o1 = conv2d(&x, &k, &b).unwrap().to_vec();
    let o2 = conv2d(&x, &k, &b).unwrap().to_vec();
    assert!(o1.iter().zip(&o2).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn tape_replay_grads_are_bit_identical() {
    let mut rng = stream(43, Stream::Test);
    let xv: Vec<f32> = rand_vec(&mut rng, 192).iter().map(|&v| v as f32).collect();
    let kv: Vec<f32> = rand_vec(&mut rng, 54).iter().map(|&v| v as f32).collect();
    let tv: Vec<f32> = rand_vec(&mut rng, 128).iter().map(|&v| v as f32).collect();

    let run = || {
        let tape: Tape<f32> = Tape::new();
        let x = t32(&[8, 8, 3], xv.clone());
        let k = t32(&[3, 3, 3, 2], kv.clone());
        let b = Tensor::zeros(&[2]);
        tape.watch(&k);
        tape.watch(&b);
        let y = sigmoid(&conv2d(&x, &k, &b).unwrap()).unwrap();
        let loss = mse_loss(&y, &t32(&[8, 8, 2], tv.clone())).unwrap();
        backward(&loss).unwrap();
        (k.grad().unwrap(), b.grad().unwrap())
    };
    let (kg1, bg1) = run();
    let (kg2, bg2) = run();
    assert!(kg1.iter().zip(&kg2).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert!(bg1.iter().zip(&bg2).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn zero_grad_resets() {
    let tape: Tape<f32> = Tape::new();
    let x = Tensor::scalar(2.0f32);
    tape.watch(&x);
    let loss = mul(&x, &x).unwrap();
    backward(&loss).unwrap();
    assert_eq!(x.grad().unwrap(), vec![4.0]);
    zero_grad(&[&x]);
    assert_eq!(x.grad().unwrap(), vec![0.0]);
}
