//! Seeded random test functions that vanish on the grid boundary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{Grid, ScalarField};

/// Sum of a few Gaussian bumps with random centres, widths and signs,
/// multiplied by a product of half-sines so it vanishes on the box boundary.
pub fn random_test_function(grid: &Grid, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.n();
    let bumps: Vec<(Vec<f64>, f64, f64)> = (0..4)
        .map(|_| {
            let centre: Vec<f64> = (0..n).map(|k| rng.random_range(grid.lo(k)..grid.hi(k))).collect();
            let span = (0..n).map(|k| grid.hi(k) - grid.lo(k)).fold(f64::INFINITY, f64::min);
            let width = span * rng.random_range(0.15..0.5);
            let amp = rng.random_range(-1.0..1.0);
            (centre, width, amp)
        })
        .collect();
    ScalarField::from_fn(grid, |x| {
        let mut env = 1.0;
        for k in 0..n {
            let t = (x[k] - grid.lo(k)) / (grid.hi(k) - grid.lo(k));
            env *= (std::f64::consts::PI * t).sin();
        }
        let mut v = 0.3;
        for (c, w, a) in &bumps {
            let d2: f64 = x.iter().zip(c).map(|(xi, ci)| (xi - ci) * (xi - ci)).sum();
            v += a * (-d2 / (w * w)).exp();
        }
        env * v
    })
    .with_zero_boundary()
}

/// Random test function supported in the ball of radius `radius` about the
/// origin: `(1 - |X|^2 / radius^2)^2_+` times a random smooth modulation.
pub fn random_ball_function(grid: &Grid, radius: f64, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.n();
    let freq: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5) / radius).collect();
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let offset = rng.random_range(0.5..1.5);
    ScalarField::from_fn(grid, |x| {
        let r2: f64 = x.iter().map(|v| v * v).sum::<f64>() / (radius * radius);
        if r2 >= 1.0 {
            return 0.0;
        }
        let arg: f64 = x.iter().zip(&freq).map(|(a, b)| a * b).sum::<f64>() + phase;
        (1.0 - r2).powi(2) * (offset + arg.sin())
    })
    .with_zero_boundary()
}
