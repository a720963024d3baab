//! `SimBm3d`: a miniature block-matching, transform-domain denoiser.
//!
//! Pipeline per channel plane: reference blocks on a stride-n1/2 grid are
//! each matched (SSD, ties by scan order) to their 8 most-similar blocks
//! inside a window of radius `neighborhood`; the group is taken through a
//! 2D orthonormal DCT per block and a length-8 orthonormal Haar across
//! the group, hard-thresholded at `t = cff/100` (group DC always kept),
//! inverse-transformed, and aggregated with uniform weights. With
//! `wtransform = 1` a second pass re-groups on the first-pass pilot and
//! applies empirical Wiener shrinkage `c²/(c²+t²)` to the noisy
//! coefficients. With `cspace = 1` the passes run in an opponent color
//! space instead of per RGB channel.
//!
//! Numerical layout: DCT/Haar DC chains defer their irrational
//! normalization (the stored DC is the plain sum; thresholds are scaled
//! to match, and the inverse divides by exact powers of two), and AC
//! basis rows are built as bitwise ± pairs summed pairwise. Constant
//! inputs therefore produce exactly-zero AC coefficients and survive the
//! whole pipeline bit-for-bit, and aggregation ratios are formed in f64.
//! Pixels no group covers fall back to the input value.

use std::sync::OnceLock;

use rayon::prelude::*;

use crate::image::Image;

use super::{validate, BlackBox, BlackBoxError, ConcreteParams, ParamSpace, Result};

const GROUP: usize = 8;
const MAX_N2: usize = 64;

/// Dimension order of the built-in space.
const IDX_CFF: usize = 0;
const IDX_N1: usize = 1;
const IDX_CSPACE: usize = 2;
const IDX_WTRANSFORM: usize = 3;
const IDX_NEIGHBORHOOD: usize = 4;

pub struct SimBm3d {
    space: ParamSpace,
}

impl SimBm3d {
    pub fn new() -> SimBm3d {
        SimBm3d {
            space: ParamSpace::bm3d(),
        }
    }
}

impl Default for SimBm3d {
    fn default() -> Self {
        SimBm3d::new()
    }
}

struct Settings {
    t: f32,
    n1: usize,
    cspace: bool,
    wiener: bool,
    radius: usize,
}

impl BlackBox for SimBm3d {
    fn space(&self) -> &ParamSpace {
        &self.space
    }

    fn evaluate(&self, image: &Image, params: &ConcreteParams) -> Result<Image> {
        validate(params, &self.space)?;
        let s = Settings {
            t: (params.value(IDX_CFF) / 100.0) as f32,
            n1: params.value(IDX_N1) as usize,
            cspace: params.value(IDX_CSPACE) != 0.0,
            wiener: params.value(IDX_WTRANSFORM) != 0.0,
            radius: params.value(IDX_NEIGHBORHOOD) as usize,
        };
        let (h, w, c) = image.dims();
        if c != 3 {
            return Err(BlackBoxError::WrongChannelCount {
                expected: 3,
                got: c,
            });
        }
        let min = s.n1 + 2 * s.radius;
        if h < min || w < min {
            return Err(BlackBoxError::ImageTooSmall { h, w, min });
        }

        let planes: Vec<Vec<f32>> = if s.cspace {
            opponent_forward(image)
        } else {
            (0..3).map(|ch| image.channel_plane(ch)).collect()
        };

        let basis = dct_basis(s.n1);
        let denoised: Vec<Vec<f32>> = planes
            .iter()
            .map(|plane| {
                let pass1 = run_pass(plane, None, h, w, &s, basis);
                if s.wiener {
                    run_pass(plane, Some(&pass1), h, w, &s, basis)
                } else {
                    pass1
                }
            })
            .collect();

        let mut out = if s.cspace {
            opponent_inverse(&denoised, h, w)
        } else {
            Image::from_fn(h, w, 3, |y, x, ch| denoised[ch][y * w + x])
        };
        out.clamp_unit();
        Ok(out)
    }
}

// ── Color space ─────────────────────────────────────────────────────

/// Opponent transform: Y=(R+G+B)/3, U=(R−B)/2, V=(R−2G+B)/4.
pub(crate) fn opponent_forward(image: &Image) -> Vec<Vec<f32>> {
    let (h, w, _) = image.dims();
    let mut y = vec![0f32; h * w];
    let mut u = vec![0f32; h * w];
    let mut v = vec![0f32; h * w];
    for py in 0..h {
        for px in 0..w {
            let r = image.get(py, px, 0);
            let g = image.get(py, px, 1);
            let b = image.get(py, px, 2);
            y[py * w + px] = (r + g + b) / 3.0;
            u[py * w + px] = (r - b) / 2.0;
            v[py * w + px] = (r - 2.0 * g + b) / 4.0;
        }
    }
    vec![y, u, v]
}

/// Exact rational inverse: R=Y+(2/3)V+U, G=Y−(4/3)V, B=Y+(2/3)V−U.
pub(crate) fn opponent_inverse(planes: &[Vec<f32>], h: usize, w: usize) -> Image {
    const TWO_THIRDS: f32 = 2.0 / 3.0;
    const FOUR_THIRDS: f32 = 4.0 / 3.0;
    Image::from_fn(h, w, 3, |py, px, ch| {
        let i = py * w + px;
        let (y, u, v) = (planes[0][i], planes[1][i], planes[2][i]);
        match ch {
            0 => y + TWO_THIRDS * v + u,
            1 => y - FOUR_THIRDS * v,
            _ => y + TWO_THIRDS * v - u,
        }
    })
}

// ── DCT basis with bitwise ± pair structure ─────────────────────────

struct DctBasis {
    n: usize,
    /// Rows k = 0..n, row-major; row 0 is unused (DC is kept as a sum).
    rows: Vec<f32>,
    /// Per AC row k ≥ 1: index pairs (p, q) with rows[k][p] = −rows[k][q]
    /// bit-for-bit, so constant inputs cancel exactly.
    pairs: Vec<Vec<(usize, usize)>>,
    /// 1/n; exact because n is a power of two.
    inv_n: f32,
    /// Stored-coefficient scale per (ky,kx): n^(z/2) with z the number of
    /// DC indices among (ky,kx).
    dct_factor: Vec<f32>,
}

fn build_basis(n: usize) -> DctBasis {
    assert!(n == 4 || n == 8);
    let scale = (2.0f64 / n as f64).sqrt();
    // cos(a·π/(2n)) for a in 0..=n, computed once per reduced angle.
    let table: Vec<f32> = (0..=n)
        .map(|a| (scale * (std::f64::consts::PI * a as f64 / (2.0 * n as f64)).cos()) as f32)
        .collect();

    let mut rows = vec![0f32; n * n];
    let mut pairs = Vec::with_capacity(n);
    pairs.push(Vec::new()); // row 0 placeholder
    for k in 1..n {
        // Entry (k,i) = ±table[a] by exact angle reduction of (2i+1)k.
        let mut signs = vec![0i8; n];
        let mut mags = vec![0usize; n];
        for i in 0..n {
            let mut a = ((2 * i + 1) * k) % (4 * n);
            let mut sign = 1i8;
            if a > 2 * n {
                a = 4 * n - a;
            }
            if a > n {
                a = 2 * n - a;
                sign = -1;
            }
            signs[i] = sign;
            mags[i] = a;
            rows[k * n + i] = if sign > 0 { table[a] } else { -table[a] };
        }
        // Pair each +entry with a −entry of the same magnitude.
        let mut row_pairs = Vec::with_capacity(n / 2);
        let mut used = vec![false; n];
        for p in 0..n {
            if used[p] || signs[p] < 0 {
                continue;
            }
            let q = (0..n)
                .find(|&q| !used[q] && signs[q] < 0 && mags[q] == mags[p])
                .expect("DCT AC rows are sign-balanced per magnitude");
            used[p] = true;
            used[q] = true;
            row_pairs.push((p, q));
        }
        assert_eq!(row_pairs.len(), n / 2, "all entries pair up");
        pairs.push(row_pairs);
    }

    let sqrt_n = (n as f64).sqrt() as f32;
    let mut dct_factor = vec![1f32; n * n];
    for ky in 0..n {
        for kx in 0..n {
            let z = usize::from(ky == 0) + usize::from(kx == 0);
            dct_factor[ky * n + kx] = match z {
                0 => 1.0,
                1 => sqrt_n,
                _ => n as f32,
            };
        }
    }

    DctBasis {
        n,
        rows,
        pairs,
        inv_n: 1.0 / n as f32,
        dct_factor,
    }
}

fn dct_basis(n: usize) -> &'static DctBasis {
    static B4: OnceLock<DctBasis> = OnceLock::new();
    static B8: OnceLock<DctBasis> = OnceLock::new();
    match n {
        4 => B4.get_or_init(|| build_basis(4)),
        8 => B8.get_or_init(|| build_basis(8)),
        _ => unreachable!("n1 is 4 or 8"),
    }
}

/// Pairwise tree sum (exact doublings on constant input).
fn tree_sum(x: &[f32]) -> f32 {
    match x.len() {
        4 => (x[0] + x[1]) + (x[2] + x[3]),
        8 => ((x[0] + x[1]) + (x[2] + x[3])) + ((x[4] + x[5]) + (x[6] + x[7])),
        _ => unreachable!(),
    }
}

fn dct_fwd_1d(basis: &DctBasis, x: &[f32], y: &mut [f32]) {
    let n = basis.n;
    y[0] = tree_sum(x);
    for k in 1..n {
        let row = &basis.rows[k * n..(k + 1) * n];
        let mut acc = 0f32;
        for &(p, q) in &basis.pairs[k] {
            acc += x[p] * row[p] + x[q] * row[q];
        }
        y[k] = acc;
    }
}

fn dct_inv_1d(basis: &DctBasis, y: &[f32], x: &mut [f32]) {
    let n = basis.n;
    for (i, xi) in x.iter_mut().enumerate().take(n) {
        let mut acc = 0f32;
        for k in 1..n {
            acc += y[k] * basis.rows[k * n + i];
        }
        *xi = y[0] * basis.inv_n + acc;
    }
}

fn dct_fwd_2d(basis: &DctBasis, block: &mut [f32; MAX_N2]) {
    let n = basis.n;
    let mut tmp = [0f32; MAX_N2];
    let mut line = [0f32; 8];
    let mut out = [0f32; 8];
    for r in 0..n {
        line[..n].copy_from_slice(&block[r * n..(r + 1) * n]);
        dct_fwd_1d(basis, &line[..n], &mut out[..n]);
        tmp[r * n..(r + 1) * n].copy_from_slice(&out[..n]);
    }
    for c in 0..n {
        for r in 0..n {
            line[r] = tmp[r * n + c];
        }
        dct_fwd_1d(basis, &line[..n], &mut out[..n]);
        for r in 0..n {
            block[r * n + c] = out[r];
        }
    }
}

fn dct_inv_2d(basis: &DctBasis, block: &mut [f32; MAX_N2]) {
    let n = basis.n;
    let mut tmp = [0f32; MAX_N2];
    let mut line = [0f32; 8];
    let mut out = [0f32; 8];
    for c in 0..n {
        for r in 0..n {
            line[r] = block[r * n + c];
        }
        dct_inv_1d(basis, &line[..n], &mut out[..n]);
        for r in 0..n {
            tmp[r * n + c] = out[r];
        }
    }
    for r in 0..n {
        line[..n].copy_from_slice(&tmp[r * n..(r + 1) * n]);
        dct_inv_1d(basis, &line[..n], &mut out[..n]);
        block[r * n..(r + 1) * n].copy_from_slice(&out[..n]);
    }
}

// ── Haar across the group (scale-deferred butterflies) ──────────────

/// Stored-coefficient scale per Haar slot [s3, d3, d2·2, d1·4].
const HAAR_FACTOR: [f32; GROUP] = [
    2.828_427, 2.828_427, 2.0, 2.0, 1.414_213_6, 1.414_213_6, 1.414_213_6, 1.414_213_6,
];

fn haar_fwd(g: &[f32; GROUP]) -> [f32; GROUP] {
    let s1 = [g[0] + g[1], g[2] + g[3], g[4] + g[5], g[6] + g[7]];
    let d1 = [g[0] - g[1], g[2] - g[3], g[4] - g[5], g[6] - g[7]];
    let s2 = [s1[0] + s1[1], s1[2] + s1[3]];
    let d2 = [s1[0] - s1[1], s1[2] - s1[3]];
    [
        s2[0] + s2[1],
        s2[0] - s2[1],
        d2[0],
        d2[1],
        d1[0],
        d1[1],
        d1[2],
        d1[3],
    ]
}

fn haar_inv(h: &[f32; GROUP]) -> [f32; GROUP] {
    let s2 = [(h[0] + h[1]) * 0.5, (h[0] - h[1]) * 0.5];
    let s1 = [
        (s2[0] + h[2]) * 0.5,
        (s2[0] - h[2]) * 0.5,
        (s2[1] + h[3]) * 0.5,
        (s2[1] - h[3]) * 0.5,
    ];
    [
        (s1[0] + h[4]) * 0.5,
        (s1[0] - h[4]) * 0.5,
        (s1[1] + h[5]) * 0.5,
        (s1[1] - h[5]) * 0.5,
        (s1[2] + h[6]) * 0.5,
        (s1[2] - h[6]) * 0.5,
        (s1[3] + h[7]) * 0.5,
        (s1[3] - h[7]) * 0.5,
    ]
}

// ── Block matching ──────────────────────────────────────────────────

#[inline]
fn ssd_row<const N: usize>(ra: &[f32], rb: &[f32]) -> f32 {
    let mut acc = 0f32;
    for i in 0..N {
        let d = ra[i] - rb[i];
        acc += d * d;
    }
    acc
}

/// SSD between two blocks, aborting once `bound` is exceeded (rows are
/// non-negative, so a partial sum past the bound settles the comparison).
fn ssd_blocks(
    src: &[f32],
    w: usize,
    n1: usize,
    ay: usize,
    ax: usize,
    by: usize,
    bx: usize,
    bound: f32,
) -> f32 {
    let mut acc = 0f32;
    for dy in 0..n1 {
        let ra = &src[(ay + dy) * w + ax..][..n1];
        let rb = &src[(by + dy) * w + bx..][..n1];
        acc += match n1 {
            4 => ssd_row::<4>(ra, rb),
            _ => ssd_row::<8>(ra, rb),
        };
        if acc >= bound {
            return acc;
        }
    }
    acc
}

/// The 8 most-similar block positions (SSD, ties by row-major scan order,
/// earlier wins) inside the clamped search window around the reference.
fn best_group(
    src: &[f32],
    h: usize,
    w: usize,
    n1: usize,
    radius: usize,
    ry: usize,
    rx: usize,
) -> [(u16, u16); GROUP] {
    let y_lo = ry.saturating_sub(radius);
    let y_hi = (ry + radius).min(h - n1);
    let x_lo = rx.saturating_sub(radius);
    let x_hi = (rx + radius).min(w - n1);

    // (ssd, scan rank, y, x), sorted ascending; scan rank breaks ties.
    let mut best = [(f32::INFINITY, u32::MAX, 0u16, 0u16); GROUP];
    let mut filled = 0usize;
    let mut rank = 0u32;
    for cy in y_lo..=y_hi {
        for cx in x_lo..=x_hi {
            let bound = if filled == GROUP {
                best[GROUP - 1].0
            } else {
                f32::INFINITY
            };
            let ssd = ssd_blocks(src, w, n1, ry, rx, cy, cx, bound);
            let cand = (ssd, rank, cy as u16, cx as u16);
            rank += 1;
            let worst = best[GROUP - 1];
            if filled == GROUP && (cand.0, cand.1) >= (worst.0, worst.1) {
                continue;
            }
            // insertion sort step
            let mut i = if filled < GROUP { filled } else { GROUP - 1 };
            while i > 0 && (cand.0, cand.1) < (best[i - 1].0, best[i - 1].1) {
                if i < GROUP {
                    best[i] = best[i - 1];
                }
                i -= 1;
            }
            best[i] = cand;
            filled = (filled + 1).min(GROUP);
        }
    }
    debug_assert_eq!(filled, GROUP, "window always holds at least 8 blocks");
    best.map(|(_, _, y, x)| (y, x))
}

// ── Denoising passes ────────────────────────────────────────────────

fn reference_positions(extent: usize, n1: usize) -> Vec<usize> {
    let stride = n1 / 2;
    let last = extent - n1;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if *out.last().unwrap() != last {
        out.push(last);
    }
    out
}

fn extract_block(plane: &[f32], w: usize, n1: usize, y: usize, x: usize) -> [f32; MAX_N2] {
    let mut b = [0f32; MAX_N2];
    for dy in 0..n1 {
        b[dy * n1..(dy + 1) * n1].copy_from_slice(&plane[(y + dy) * w + x..][..n1]);
    }
    b
}

struct GroupEstimate {
    positions: [(u16, u16); GROUP],
    estimates: [[f32; MAX_N2]; GROUP],
}

/// One denoising pass. Without a pilot: hard thresholding at `t` (group
/// DC kept). With a pilot: groups are matched on the pilot and noisy
/// coefficients shrink by the empirical Wiener factor from the pilot's
/// coefficients (group DC kept).
fn run_pass(
    noisy: &[f32],
    pilot: Option<&Vec<f32>>,
    h: usize,
    w: usize,
    s: &Settings,
    basis: &DctBasis,
) -> Vec<f32> {
    let n1 = s.n1;
    let n2 = n1 * n1;
    let match_src: &[f32] = pilot.map(|p| p.as_slice()).unwrap_or(noisy);

    let ys = reference_positions(h, n1);
    let xs = reference_positions(w, n1);
    let refs: Vec<(usize, usize)> = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (y, x)))
        .collect();

    let groups: Vec<GroupEstimate> = refs
        .par_iter()
        .map(|&(ry, rx)| {
            let positions = best_group(match_src, h, w, n1, s.radius, ry, rx);

            let mut noisy_t = [[0f32; MAX_N2]; GROUP];
            for (m, &(gy, gx)) in positions.iter().enumerate() {
                noisy_t[m] = extract_block(noisy, w, n1, gy as usize, gx as usize);
                dct_fwd_2d(basis, &mut noisy_t[m]);
            }
            let pilot_t = pilot.map(|p| {
                let mut blocks = [[0f32; MAX_N2]; GROUP];
                for (m, &(gy, gx)) in positions.iter().enumerate() {
                    blocks[m] = extract_block(p, w, n1, gy as usize, gx as usize);
                    dct_fwd_2d(basis, &mut blocks[m]);
                }
                blocks
            });

            for coeff in 0..n2 {
                let mut lane = [0f32; GROUP];
                for m in 0..GROUP {
                    lane[m] = noisy_t[m][coeff];
                }
                let mut spec = haar_fwd(&lane);

                match &pilot_t {
                    None => {
                        for (slot, v) in spec.iter_mut().enumerate() {
                            if coeff == 0 && slot == 0 {
                                continue; // group DC kept
                            }
                            let thr = s.t * basis.dct_factor[coeff] * HAAR_FACTOR[slot];
                            if v.abs() < thr {
                                *v = 0.0;
                            }
                        }
                    }
                    Some(pt) => {
                        let mut plane_lane = [0f32; GROUP];
                        for m in 0..GROUP {
                            plane_lane[m] = pt[m][coeff];
                        }
                        let pilot_spec = haar_fwd(&plane_lane);
                        for (slot, v) in spec.iter_mut().enumerate() {
                            if coeff == 0 && slot == 0 {
                                continue;
                            }
                            let scaled_t = s.t * basis.dct_factor[coeff] * HAAR_FACTOR[slot];
                            let c = pilot_spec[slot];
                            let denom = c * c + scaled_t * scaled_t;
                            let factor = if denom > 0.0 { c * c / denom } else { 0.0 };
                            *v *= factor;
                        }
                    }
                }

                let restored = haar_inv(&spec);
                for m in 0..GROUP {
                    noisy_t[m][coeff] = restored[m];
                }
            }

            let mut estimates = [[0f32; MAX_N2]; GROUP];
            for m in 0..GROUP {
                let mut block = noisy_t[m];
                dct_inv_2d(basis, &mut block);
                estimates[m] = block;
            }
            GroupEstimate {
                positions,
                estimates,
            }
        })
        .collect();

    // Uniform-weight aggregation in f64, sequential in reference order.
    let mut num = vec![0f64; h * w];
    let mut den = vec![0f64; h * w];
    for g in &groups {
        for (m, &(gy, gx)) in g.positions.iter().enumerate() {
            let (gy, gx) = (gy as usize, gx as usize);
            for dy in 0..n1 {
                for dx in 0..n1 {
                    let px = (gy + dy) * w + gx + dx;
                    num[px] += g.estimates[m][dy * n1 + dx] as f64;
                    den[px] += 1.0;
                }
            }
        }
    }
    (0..h * w)
        .map(|px| {
            if den[px] > 0.0 {
                (num[px] / den[px]) as f32
            } else {
                noisy[px]
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    use crate::rng::{stream, Stream};

    fn params(cff: f64, n1: f64, cspace: f64, wt: f64, nb: f64) -> ConcreteParams {
        ConcreteParams::new(vec![cff, n1, cspace, wt, nb])
    }

    fn noisy_image(seed: u64, h: usize, w: usize, sigma: f32) -> (Image, Image) {
        let mut rng = stream(seed, Stream::Test);
        // piecewise pattern with edges so matching has structure
        let clean = Image::from_fn(h, w, 3, |y, x, c| {
            let cell = ((y / 8) + (x / 8)) % 2;
            if cell == 0 {
                0.25 + 0.05 * c as f32
            } else {
                0.7 - 0.05 * c as f32
            }
        });
        let gauss = Normal::new(0.0f32, sigma).unwrap();
        let mut noisy = clean.clone();
        for v in noisy.as_mut_slice() {
            *v = (*v + gauss.sample(&mut rng)).clamp(0.0, 1.0);
        }
        (clean, noisy)
    }

    #[test]
    fn constant_image_is_a_bit_exact_fixed_point() {
        let bb = SimBm3d::new();
        for value in [0.0f32, 0.313, 0.5, 1.0] {
            let img = Image::constant(48, 48, 3, value);
            for n1 in [4.0, 8.0] {
                for wt in [0.0, 1.0] {
                    let out = bb
                        .evaluate(&img, &params(7.0, n1, 0.0, wt, 5.0))
                        .unwrap();
                    assert_eq!(
                        out.as_slice(),
                        img.as_slice(),
                        "n1={n1} wt={wt} value={value}"
                    );
                }
            }
        }
    }

    #[test]
    fn constant_image_with_cspace_stays_within_color_roundtrip_error() {
        let bb = SimBm3d::new();
        let img = Image::from_fn(48, 48, 3, |_, _, c| [0.3, 0.55, 0.8][c]);
        let out = bb.evaluate(&img, &params(7.0, 8.0, 1.0, 0.0, 4.0)).unwrap();
        for (a, b) in out.as_slice().iter().zip(img.as_slice()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn opponent_transform_round_trips_within_1e5() {
        let mut rng = stream(3, Stream::Test);
        let img = Image::from_fn(16, 16, 3, |_, _, _| rng.gen_range(0.0..1.0));
        let planes = opponent_forward(&img);
        let back = opponent_inverse(&planes, 16, 16);
        for (a, b) in back.as_slice().iter().zip(img.as_slice()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn deterministic_across_calls() {
        let bb = SimBm3d::new();
        let (_, noisy) = noisy_image(5, 40, 40, 0.1);
        let p = params(12.0, 4.0, 1.0, 1.0, 6.0);
        let a = bb.evaluate(&noisy, &p).unwrap();
        let b = bb.evaluate(&noisy, &p).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn output_shape_and_range() {
        let bb = SimBm3d::new();
        let (_, noisy) = noisy_image(6, 40, 44, 0.2);
        let out = bb.evaluate(&noisy, &params(20.0, 8.0, 1.0, 1.0, 7.0)).unwrap();
        assert_eq!(out.dims(), (40, 44, 3));
        assert!(out.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn max_cff_shrinks_pure_noise_variance() {
        let mut rng = stream(7, Stream::Test);
        let noise = Image::from_fn(48, 48, 3, |_, _, _| rng.gen_range(0.0..1.0));
        let bb = SimBm3d::new();
        let out = bb.evaluate(&noise, &params(20.0, 8.0, 0.0, 0.0, 5.0)).unwrap();
        let var = |img: &Image| {
            let n = img.len() as f64;
            let mean: f64 = img.as_slice().iter().map(|&v| v as f64).sum::<f64>() / n;
            img.as_slice()
                .iter()
                .map(|&v| (v as f64 - mean).powi(2))
                .sum::<f64>()
                / n
        };
        assert!(
            var(&out) < var(&noise),
            "thresholding must shrink noise energy"
        );
    }

    #[test]
    fn denoising_actually_improves_psnr() {
        let (clean, noisy) = noisy_image(8, 48, 48, 0.1);
        let bb = SimBm3d::new();
        let out = bb.evaluate(&noisy, &params(15.0, 8.0, 0.0, 1.0, 8.0)).unwrap();
        let before = crate::metrics::psnr(&noisy, &clean).unwrap();
        let after = crate::metrics::psnr(&out, &clean).unwrap();
        assert!(
            after > before + 1.0,
            "expected >1 dB gain, got {before:.2} -> {after:.2}"
        );
    }

    #[test]
    fn every_parameter_dimension_is_live() {
        let (_, noisy) = noisy_image(9, 44, 44, 0.15);
        let bb = SimBm3d::new();
        let base = params(10.0, 8.0, 0.0, 0.0, 5.0);
        let variants = [
            params(2.0, 8.0, 0.0, 0.0, 5.0),
            params(10.0, 4.0, 0.0, 0.0, 5.0),
            params(10.0, 8.0, 1.0, 0.0, 5.0),
            params(10.0, 8.0, 0.0, 1.0, 5.0),
            params(10.0, 8.0, 0.0, 0.0, 14.0),
        ];
        let base_out = bb.evaluate(&noisy, &base).unwrap();
        for (i, var) in variants.iter().enumerate() {
            let out = bb.evaluate(&noisy, var).unwrap();
            assert_ne!(
                out.as_slice(),
                base_out.as_slice(),
                "dimension {i} appears dead"
            );
        }
    }

    #[test]
    fn too_small_image_is_rejected() {
        let bb = SimBm3d::new();
        let img = Image::zeros(20, 20, 3);
        assert!(matches!(
            bb.evaluate(&img, &params(10.0, 8.0, 0.0, 0.0, 15.0)),
            Err(BlackBoxError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn reference_positions_cover_edges() {
        let pos = reference_positions(64, 8);
        assert_eq!(pos.first(), Some(&0));
        assert_eq!(pos.last(), Some(&56));
        let pos = reference_positions(65, 8);
        assert_eq!(pos.last(), Some(&57));
    }

    #[test]
    fn dct_round_trip_is_accurate() {
        let mut rng = stream(10, Stream::Test);
        for n in [4usize, 8] {
            let basis = dct_basis(n);
            let mut block = [0f32; MAX_N2];
            for v in block.iter_mut().take(n * n) {
                *v = rng.gen_range(-1.0..1.0);
            }
            let orig = block;
            dct_fwd_2d(basis, &mut block);
            dct_inv_2d(basis, &mut block);
            for i in 0..n * n {
                assert!((block[i] - orig[i]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn haar_round_trip_is_exact_on_doubles() {
        let g = [1.0f32, 0.5, 0.25, 0.75, 0.125, 0.375, 0.625, 0.875];
        let back = haar_inv(&haar_fwd(&g));
        assert_eq!(back, g);
    }
}
