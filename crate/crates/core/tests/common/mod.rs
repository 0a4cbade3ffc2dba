#![allow(dead_code)]

use markov_circle::{CircleMap, GridMeasure, MapFamily};
use rand::Rng;

pub fn random_hyperbolic<R: Rng>(rng: &mut R, stretch: std::ops::Range<f64>) -> CircleMap {
    CircleMap::hyperbolic(rng.random_range(stretch), rng.random()).unwrap()
}

/// Rotation, projective or piecewise-linear, chosen at random.
pub fn random_map<R: Rng>(rng: &mut R) -> CircleMap {
    match rng.random_range(0..4) {
        0 => CircleMap::rotation(rng.random()),
        1 => random_hyperbolic(rng, 1.1..4.0),
        2 => {
            let mut m = [[0.0; 2]; 2];
            loop {
                for row in m.iter_mut() {
                    for v in row.iter_mut() {
                        *v = rng.random_range(-2.0..2.0);
                    }
                }
                if m[0][0] * m[1][1] - m[0][1] * m[1][0] > 0.1 {
                    break;
                }
            }
            CircleMap::projective(m).unwrap()
        }
        _ => {
            let r = rng.random_range(2..6);
            let mut xs: Vec<f64> = (0..r).map(|_| rng.random()).collect();
            let mut gaps: Vec<f64> = (0..r).map(|_| rng.random_range(0.05..1.0)).collect();
            xs.sort_by(f64::total_cmp);
            xs.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
            gaps.truncate(xs.len());
            let total: f64 = gaps.iter().sum();
            let start: f64 = rng.random();
            let mut y = start;
            let ys = gaps
                .iter()
                .map(|g| {
                    let v = y;
                    y += g / total * 0.999;
                    v
                })
                .collect();
            CircleMap::piecewise_linear(xs, ys).unwrap()
        }
    }
}

pub fn random_family<R: Rng>(k: usize, rng: &mut R) -> MapFamily {
    MapFamily::new((0..k).map(|_| random_map(rng)).collect()).unwrap()
}

pub fn contracting_family<R: Rng>(k: usize, rng: &mut R) -> MapFamily {
    MapFamily::new((0..k).map(|_| random_hyperbolic(rng, 2.0..4.0)).collect()).unwrap()
}

pub fn random_grid_measure<R: Rng>(n: usize, rng: &mut R) -> GridMeasure {
    GridMeasure::from_weights((0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
}

pub fn random_fibres<R: Rng>(k: usize, n: usize, rng: &mut R) -> Vec<GridMeasure> {
    (0..k).map(|_| random_grid_measure(n, rng)).collect()
}

/// Bin averages (midpoint rule) of `1 + Σ_{j<=3} a_j cos(2πj x + φ_j)`,
/// `Σ|a_j| < 1`: a measure the grid resolves.
pub fn smooth_grid_measure<R: Rng>(n: usize, rng: &mut R) -> GridMeasure {
    use std::f64::consts::TAU;
    let terms: Vec<(f64, f64)> = (1..=3)
        .map(|_| (rng.random_range(0.0..0.3), rng.random_range(0.0..TAU)))
        .collect();
    GridMeasure::from_weights(
        (0..n)
            .map(|b| {
                let x = GridMeasure::bin_center(n, b);
                1.0 + terms
                    .iter()
                    .enumerate()
                    .map(|(j, (a, ph))| a * (TAU * (j + 1) as f64 * x + ph).cos())
                    .sum::<f64>()
            })
            .collect(),
    )
    .unwrap()
}
