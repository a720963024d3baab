//! Convolution kernels: same-padded stride-1 cross-correlation and its
//! three backward passes.
//!
//! Parallelism uses fixed row chunking only, so results are bit-identical
//! regardless of thread count or scheduling. Inner loops run over the
//! contiguous output-channel axis to stay autovectorizer-friendly.

use rayon::prelude::*;

use super::tensor::Real;

/// Rows per parallel work unit in the weight-gradient reduction. Fixed so
/// the partial-sum structure (and therefore rounding) never varies.
const REDUCE_ROWS: usize = 8;

pub(super) fn forward<T: Real>(
    input: &[T],
    h: usize,
    w: usize,
    cin: usize,
    kernel: &[T],
    k: usize,
    cout: usize,
    bias: &[T],
) -> Vec<T> {
    let mut out = vec![T::zero(); h * w * cout];
    let half = (k / 2) as isize;
    out.par_chunks_mut(w * cout)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..w {
                let px = &mut row[x * cout..(x + 1) * cout];
                px.copy_from_slice(bias);
                for dy in 0..k {
                    let yi = y as isize + dy as isize - half;
                    if yi < 0 || yi >= h as isize {
                        continue;
                    }
                    let yi = yi as usize;
                    for dx in 0..k {
                        let xi = x as isize + dx as isize - half;
                        if xi < 0 || xi >= w as isize {
                            continue;
                        }
                        let xi = xi as usize;
                        let inp = &input[(yi * w + xi) * cin..][..cin];
                        let kbase = (dy * k + dx) * cin * cout;
                        for (ci, &v) in inp.iter().enumerate() {
                            let krow = &kernel[kbase + ci * cout..][..cout];
                            for (o, &kv) in px.iter_mut().zip(krow) {
                                *o = *o + v * kv;
                            }
                        }
                    }
                }
            }
        });
    out
}

/// Gradient w.r.t. the input: correlation of the output gradient with the
/// flipped kernel, written in gather form so rows stay independent.
pub(super) fn d_input<T: Real>(
    gout: &[T],
    h: usize,
    w: usize,
    cout: usize,
    kernel: &[T],
    k: usize,
    cin: usize,
) -> Vec<T> {
    let half = (k / 2) as isize;
    let mut din = vec![T::zero(); h * w * cin];
    din.par_chunks_mut(w * cin)
        .enumerate()
        .for_each(|(yi, row)| {
            for xi in 0..w {
                let dpx = &mut row[xi * cin..(xi + 1) * cin];
                for dy in 0..k {
                    let yo = yi as isize + half - dy as isize;
                    if yo < 0 || yo >= h as isize {
                        continue;
                    }
                    let yo = yo as usize;
                    for dx in 0..k {
                        let xo = xi as isize + half - dx as isize;
                        if xo < 0 || xo >= w as isize {
                            continue;
                        }
                        let xo = xo as usize;
                        let gpx = &gout[(yo * w + xo) * cout..][..cout];
                        let kbase = (dy * k + dx) * cin * cout;
                        for (ci, d) in dpx.iter_mut().enumerate() {
                            let krow = &kernel[kbase + ci * cout..][..cout];
                            let mut acc = T::zero();
                            for (&g, &kv) in gpx.iter().zip(krow) {
                                acc = acc + g * kv;
                            }
                            *d = *d + acc;
                        }
                    }
                }
            }
        });
    din
}

/// Gradient w.r.t. the kernel: per-row-chunk partial sums folded in fixed
/// chunk order.
pub(super) fn d_kernel<T: Real>(
    input: &[T],
    h: usize,
    w: usize,
    cin: usize,
    gout: &[T],
    cout: usize,
    k: usize,
) -> Vec<T> {
    let half = (k / 2) as isize;
    let klen = k * k * cin * cout;
    let n_chunks = h.div_ceil(REDUCE_ROWS);
    let partials: Vec<Vec<T>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut part = vec![T::zero(); klen];
            let y_end = ((chunk + 1) * REDUCE_ROWS).min(h);
            for y in chunk * REDUCE_ROWS..y_end {
                for x in 0..w {
                    let gpx = &gout[(y * w + x) * cout..][..cout];
                    for dy in 0..k {
                        let yi = y as isize + dy as isize - half;
                        if yi < 0 || yi >= h as isize {
                            continue;
                        }
                        let yi = yi as usize;
                        for dx in 0..k {
                            let xi = x as isize + dx as isize - half;
                            if xi < 0 || xi >= w as isize {
                                continue;
                            }
                            let xi = xi as usize;
                            let inp = &input[(yi * w + xi) * cin..][..cin];
                            let kbase = (dy * k + dx) * cin * cout;
                            for (ci, &v) in inp.iter().enumerate() {
                                let krow = &mut part[kbase + ci * cout..][..cout];
                                for (kd, &g) in krow.iter_mut().zip(gpx) {
                                    *kd = *kd + v * g;
                                }
                            }
                        }
                    }
                }
            }
            part
        })
        .collect();
    let mut dker = vec![T::zero(); klen];
    for part in partials {
        for (d, p) in dker.iter_mut().zip(part) {
            *d = *d + p;
        }
    }
    dker
}

/// Gradient w.r.t. the bias: the output gradient summed over all pixels.
pub(super) fn d_bias<T: Real>(gout: &[T], h: usize, w: usize, cout: usize) -> Vec<T> {
    let n_chunks = h.div_ceil(REDUCE_ROWS);
    let partials: Vec<Vec<T>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut part = vec![T::zero(); cout];
            let y_end = ((chunk + 1) * REDUCE_ROWS).min(h);
            for y in chunk * REDUCE_ROWS..y_end {
                for x in 0..w {
                    let gpx = &gout[(y * w + x) * cout..][..cout];
                    for (p, &g) in part.iter_mut().zip(gpx) {
                        *p = *p + g;
                    }
                }
            }
            part
        })
        .collect();
    let mut db = vec![T::zero(); cout];
    for part in partials {
        for (d, p) in db.iter_mut().zip(part) {
            *d = *d + p;
        }
    }
    db
}
