//! Scratch study: per-noise-group optimal SimBm3d settings vs the best
//! single global setting on the heterogeneous benchmark.

use rayon::prelude::*;
use std::time::Instant;
use surrotune::blackbox::{quantize, BlackBox, NormalizedParams, ParamSpace, SimBm3d};
use surrotune::data::{gen_synthetic, split, Split, SplitRatios};
use surrotune::metrics::psnr;

fn main() {
    let t0 = Instant::now();
    let mut ds = gen_synthetic(260, 64, 64, &[0.05, 0.15], 42).unwrap();
    split(&mut ds, &SplitRatios::default(), 42).unwrap();
    let bb = SimBm3d::new();
    let space = ParamSpace::bm3d();

    let train: Vec<_> = ds.split_pairs(Split::Train);
    let lo: Vec<_> = train.iter().filter(|p| p.sigma < 0.1).take(8).collect();
    let hi: Vec<_> = train.iter().filter(|p| p.sigma > 0.1).take(8).collect();
    println!("lo {} hi {}", lo.len(), hi.len());

    // grid: cff 8 samples x n1 x cspace x wt x neighborhood subset
    let mut settings = Vec::new();
    for cff_j in 0..8 {
        for n1 in 0..2 {
            for cs in 0..2 {
                for wt in 0..2 {
                    for nb in [0usize, 3, 6, 9, 12] {
                        let u = NormalizedParams::new(vec![
                            cff_j as f64 / 7.0,
                            (n1 as f64 + 0.5) / 2.0,
                            (cs as f64 + 0.5) / 2.0,
                            (wt as f64 + 0.5) / 2.0,
                            (nb as f64 + 0.5) / 13.0,
                        ]);
                        settings.push(quantize(&u, &space).unwrap());
                    }
                }
            }
        }
    }
    println!("settings: {}", settings.len());

    let score = |imgs: &[&&surrotune::data::Pair], p: &surrotune::blackbox::ConcreteParams| -> f64 {
        let sum: f64 = imgs
            .par_iter()
            .map(|pair| {
                let out = bb.evaluate(&pair.noisy, p).unwrap();
                psnr(&out, &pair.clean).unwrap()
            })
            .sum();
        sum / imgs.len() as f64
    };

    let mut results: Vec<(f64, f64, f64, String)> = Vec::new();
    for p in &settings {
        let s_lo = score(&lo, p);
        let s_hi = score(&hi, p);
        let s_all = (s_lo + s_hi) / 2.0;
        results.push((s_all, s_lo, s_hi, format!("{:?}", p.as_slice())));
    }

    let best_global = results
        .iter()
        .max_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
        .unwrap();
    let best_lo = results
        .iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap();
    let best_hi = results
        .iter()
        .max_by(|a, b| a.2.partial_cmp(&b.2).unwrap())
        .unwrap();

    println!("best GLOBAL: mean {:.3} (lo {:.3} hi {:.3}) at {}", best_global.0, best_global.1, best_global.2, best_global.3);
    println!("best LO:     lo {:.3} at {}", best_lo.1, best_lo.3);
    println!("best HI:     hi {:.3} at {}", best_hi.2, best_hi.3);
    let headroom = (best_lo.1 + best_hi.2) / 2.0 - best_global.0;
    println!("instance-specific headroom: {:.3} dB", headroom);

    // noisy-input baselines
    let base_lo: f64 = lo.iter().map(|p| psnr(&p.noisy, &p.clean).unwrap()).sum::<f64>() / lo.len() as f64;
    let base_hi: f64 = hi.iter().map(|p| psnr(&p.noisy, &p.clean).unwrap()).sum::<f64>() / hi.len() as f64;
    println!("noisy baseline: lo {:.3} hi {:.3}", base_lo, base_hi);
    println!("elapsed {:.1}s", t0.elapsed().as_secs_f64());
}
