#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use yieldfill::tps::{AnchorSet, TpsFit};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `m` points uniform in `[lo, hi]^2` with values from `f`.
pub fn anchors_in(rng: &mut ChaCha8Rng, m: usize, lo: f64, hi: f64, f: impl Fn(f64, f64) -> f64) -> AnchorSet {
    let points: Vec<[f64; 2]> = (0..m).map(|_| [rng.gen_range(lo..hi), rng.gen_range(lo..hi)]).collect();
    let values = points.iter().map(|p| f(p[0], p[1])).collect();
    AnchorSet::new(points, values).unwrap()
}

/// `m` points in the unit square with random values in `[-1, 1]`.
pub fn random_anchors(rng: &mut ChaCha8Rng, m: usize) -> AnchorSet {
    let points: Vec<[f64; 2]> = (0..m).map(|_| [rng.gen(), rng.gen()]).collect();
    let values = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    AnchorSet::new(points, values).unwrap()
}

/// Midpoint-rule integral of `f_xx^2 + 2 f_xy^2 + f_yy^2` over `[lo, hi]^2`
/// on an `n x n` grid, second derivatives by central differences with a
/// half-cell step.
pub fn bending_quadrature(fit: &TpsFit, lo: f64, hi: f64, n: usize) -> f64 {
    let f = |x: f64, y: f64| fit.evaluate([x, y]);
    let h = (hi - lo) / n as f64;
    let d = h / 2.0;
    let mut total = 0.0;
    for i in 0..n {
        let x = lo + (i as f64 + 0.5) * h;
        for j in 0..n {
            let y = lo + (j as f64 + 0.5) * h;
            let c = f(x, y);
            let fxx = (f(x + d, y) - 2.0 * c + f(x - d, y)) / (d * d);
            let fyy = (f(x, y + d) - 2.0 * c + f(x, y - d)) / (d * d);
            let fxy = (f(x + d, y + d) - f(x + d, y - d) - f(x - d, y + d) + f(x - d, y - d)) / (4.0 * d * d);
            total += (fxx * fxx + 2.0 * fxy * fxy + fyy * fyy) * h * h;
        }
    }
    total
}

/// Exact oracle-free sanity value for a constant error shift.
pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
