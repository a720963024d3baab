//! Scratch study: scores of plausible algo2 endpoints (discrete dims at
//! their 0.5-init bins) and the distribution of random-search bests.

use rand::Rng;
use rayon::prelude::*;
use surrotune::blackbox::{quantize, BlackBox, ConcreteParams, NormalizedParams, ParamSpace, SimBm3d};
use surrotune::data::{gen_synthetic, split, Split, SplitRatios};
use surrotune::metrics::psnr;
use surrotune::rng::{stream, Stream};

fn main() {
    let mut ds = gen_synthetic(260, 64, 64, &[0.05, 0.15], 42).unwrap();
    split(&mut ds, &SplitRatios::default(), 42).unwrap();
    let bb = SimBm3d::new();
    let space = ParamSpace::bm3d();

    let train: Vec<_> = ds.split_pairs(Split::Train);
    let sample: Vec<_> = train.iter().take(16).collect();

    let score = |p: &ConcreteParams| -> f64 {
        let sum: f64 = sample
            .par_iter()
            .map(|pair| {
                let out = bb.evaluate(&pair.noisy, p).unwrap();
                psnr(&out, &pair.clean).unwrap()
            })
            .sum();
        sum / sample.len() as f64
    };

    println!("— candidate algo2 endpoints (init bins n1=8,cs=1,wt=1,nb=9) —");
    for cff in [10.5, 15.0, 17.0, 18.5, 20.0] {
        let p = ConcreteParams::new(vec![cff, 8.0, 1.0, 1.0, 9.0]);
        println!("[{cff},8,1,1,9] -> {:.3}", score(&p));
    }
    for (desc, p) in [
        ("[20,8,1,1,15]", ConcreteParams::new(vec![20.0, 8.0, 1.0, 1.0, 15.0])),
        ("[20,8,1,1,3]", ConcreteParams::new(vec![20.0, 8.0, 1.0, 1.0, 3.0])),
        ("[20,4,1,1,9]", ConcreteParams::new(vec![20.0, 4.0, 1.0, 1.0, 9.0])),
        ("[20,4,1,1,15]", ConcreteParams::new(vec![20.0, 4.0, 1.0, 1.0, 15.0])),
        ("[20,8,0,1,9]", ConcreteParams::new(vec![20.0, 8.0, 0.0, 1.0, 9.0])),
        ("[20,8,1,0,9]", ConcreteParams::new(vec![20.0, 8.0, 1.0, 0.0, 9.0])),
        ("[17,8,1,1,12]", ConcreteParams::new(vec![17.0, 8.0, 1.0, 1.0, 12.0])),
    ] {
        println!("{desc} -> {:.3}", score(&p));
    }

    println!("— random search best-of-N distribution —");
    for seed in [1u64, 2, 3] {
        let mut rng = stream(seed, Stream::RandomSearch);
        let mut best = f64::NEG_INFINITY;
        let mut trail = Vec::new();
        for i in 0..32 {
            let u = NormalizedParams::new((0..5).map(|_| rng.gen_range(0.0..=1.0)).collect());
            let p = quantize(&u, &space).unwrap();
            let s = score(&p);
            if s > best {
                best = s;
            }
            if [7usize, 11, 15, 23, 31].contains(&i) {
                trail.push((i + 1, best));
            }
        }
        println!("seed {seed}: {trail:?}");
    }
}
