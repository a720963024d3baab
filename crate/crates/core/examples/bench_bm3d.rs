use std::time::Instant;
use surrotune::blackbox::{BlackBox, ConcreteParams, SimBm3d};
use surrotune::image::Image;

fn main() {
    let bb = SimBm3d::new();
    let img = Image::from_fn(64, 64, 3, |y, x, c| {
        let v = ((y * 7 + x * 13 + c * 29) % 97) as f32 / 97.0;
        v
    });
    for (cff, n1, cs, wt, nb) in [
        (10.0, 8.0, 0.0, 0.0, 5.0),
        (10.0, 8.0, 1.0, 1.0, 9.0),
        (10.0, 4.0, 0.0, 0.0, 15.0),
        (10.0, 4.0, 1.0, 1.0, 15.0),
        (10.0, 8.0, 1.0, 1.0, 15.0),
    ] {
        let p = ConcreteParams::new(vec![cff, n1, cs, wt, nb]);
        let t0 = Instant::now();
        let n = 10;
        for _ in 0..n {
            bb.evaluate(&img, &p).unwrap();
        }
        println!(
            "n1={n1} cspace={cs} wt={wt} nb={nb}: {:.1} ms/call",
            t0.elapsed().as_secs_f64() * 1000.0 / n as f64
        );
    }
}
