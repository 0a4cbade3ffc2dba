//! Probability measures on the circle discretized into `N` equal bins, and
//! the grid pushforward of a circle map.
//!
//! The pushforward sends each bin's mass onto the image arc of that bin,
//! split across the target bins in proportion to overlap length.

use serde::{Deserialize, Serialize};

use crate::circle::CircleMap;
use crate::error::{Error, Result};
use crate::kernel::STOCHASTIC_TOL;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GridMeasure {
    bins: Vec<f64>,
}

impl GridMeasure {
    pub fn new(bins: Vec<f64>) -> Result<Self> {
        if bins.is_empty() {
            return Err(Error::InvalidDistribution("grid measure without bins".into()));
        }
        if bins.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution(
                "negative or non-finite bin weight".into(),
            ));
        }
        let sum: f64 = bins.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidDistribution(format!("bins sum to {sum}")));
        }
        Ok(Self { bins })
    }

    /// Normalizes nonnegative weights with positive total.
    pub fn from_weights(mut bins: Vec<f64>) -> Result<Self> {
        let sum = compensated_sum(&bins);
        if !(sum > 0.0) || !sum.is_finite() || bins.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "cannot normalize weights with total {sum}"
            )));
        }
        bins.iter_mut().for_each(|w| *w /= sum);
        Ok(Self { bins })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            bins: vec![1.0 / n as f64; n],
        }
    }

    pub fn point_mass(n: usize, bin: usize) -> Self {
        let mut bins = vec![0.0; n];
        bins[bin] = 1.0;
        Self { bins }
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.bins
    }

    /// Bin containing circle coordinate `x ∈ [0, 1)`.
    pub fn bin_of(n: usize, x: f64) -> usize {
        ((x * n as f64) as usize).min(n - 1)
    }

    pub fn bin_center(n: usize, bin: usize) -> f64 {
        (bin as f64 + 0.5) / n as f64
    }

    /// Total variation distance `½ Σ |a_b - b_b|`.
    pub fn tv(&self, other: &GridMeasure) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        0.5 * self
            .bins
            .iter()
            .zip(&other.bins)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }

    /// `Σ_b weights_b g(center_b)`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, g: F) -> f64 {
        let n = self.len();
        self.bins
            .iter()
            .enumerate()
            .map(|(b, w)| w * g(Self::bin_center(n, b)))
            .sum()
    }

    /// Convex combination `Σ c_i μ_i`; coefficients must sum to one.
    pub fn mixture<'a, I>(terms: I, n: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, &'a GridMeasure)>,
    {
        let mut acc = vec![0.0; n];
        for (c, mu) in terms {
            if mu.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "mixing grids of size {} and {n}",
                    mu.len()
                )));
            }
            for (a, w) in acc.iter_mut().zip(&mu.bins) {
                *a += c * w;
            }
        }
        Self::from_weights(acc)
    }
}

/// Neumaier-compensated sum; keeps normalized totals within an ulp of one.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Sparse transition matrix of one map's grid pushforward (CSR layout).
#[derive(Debug, Clone)]
pub struct GridTransfer {
    n: usize,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    fractions: Vec<f64>,
}

impl GridTransfer {
    pub fn new(map: &CircleMap, n: usize) -> Self {
        assert!(n > 0 && n <= u32::MAX as usize);
        let width = 1.0 / n as f64;
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::with_capacity(3 * n);
        let mut fractions = Vec::with_capacity(3 * n);
        offsets.push(0);
        for b in 0..n {
            let left = b as f64 * width;
            let start = map.apply_raw(left) * n as f64;
            let length = map.image_length(left, width) * n as f64;
            let first = fractions.len();
            if length <= f64::MIN_POSITIVE {
                targets.push((start as usize).min(n - 1) as u32);
                fractions.push(1.0);
            } else {
                let mut pos = start;
                let mut remaining = length;
                // at most n + 1 bins can intersect an arc of length <= 1
                for _ in 0..=n + 1 {
                    if remaining <= 0.0 {
                        break;
                    }
                    let cell = pos.floor();
                    let take = (cell + 1.0 - pos).min(remaining);
                    if take > 0.0 {
                        targets.push((cell as usize % n) as u32);
                        fractions.push(take);
                    }
                    remaining -= take;
                    pos = cell + 1.0;
                }
                let total: f64 = fractions[first..].iter().sum();
                fractions[first..].iter_mut().for_each(|f| *f /= total);
            }
            offsets.push(fractions.len());
        }
        Self {
            n,
            offsets,
            targets,
            fractions,
        }
    }

    pub fn grid(&self) -> usize {
        self.n
    }

    /// Adds `scale · (f_* w)` into `out` without normalizing.
    #[inline]
    pub fn accumulate(&self, weights: &[f64], scale: f64, out: &mut [f64]) {
        for (b, w) in weights.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            let mass = scale * w;
            for e in self.offsets[b]..self.offsets[b + 1] {
                out[self.targets[e] as usize] += mass * self.fractions[e];
            }
        }
    }

    pub fn apply(&self, mu: &GridMeasure) -> GridMeasure {
        assert_eq!(mu.len(), self.n, "grid size mismatch");
        let mut out = vec![0.0; self.n];
        self.accumulate(&mu.bins, 1.0, &mut out);
        GridMeasure::from_weights(out).expect("pushforward keeps positive mass")
    }

    /// Bins touched by the image of `bin`.
    pub fn image_bins(&self, bin: usize) -> impl Iterator<Item = usize> + '_ {
        self.targets[self.offsets[bin]..self.offsets[bin + 1]]
            .iter()
            .map(|t| *t as usize)
    }
}

/// One-off grid pushforward; build a [`GridTransfer`] for repeated use.
pub fn pushforward(map: &CircleMap, mu: &GridMeasure) -> GridMeasure {
    GridTransfer::new(map, mu.len()).apply(mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Density `1 + Σ_{j<=3} a_j cos(2πj x + φ_j)` with `Σ|a_j| < 1`, averaged
    /// over each bin by the midpoint rule.
    fn smooth_measure(n: usize, seed: u64) -> GridMeasure {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let terms: Vec<(f64, f64)> = (1..=3)
            .map(|_| (rng.random_range(0.0..0.3), rng.random_range(0.0..std::f64::consts::TAU)))
            .collect();
        GridMeasure::from_weights(
            (0..n)
                .map(|b| {
                    let x = GridMeasure::bin_center(n, b);
                    1.0 + terms
                        .iter()
                        .enumerate()
                        .map(|(j, (a, ph))| {
                            a * (std::f64::consts::TAU * (j + 1) as f64 * x + ph).cos()
                        })
                        .sum::<f64>()
                })
                .collect(),
        )
        .unwrap()
    }

    fn random_measure(n: usize, seed: u64) -> GridMeasure {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GridMeasure::from_weights((0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn identity_pushforward_is_identity() {
        let mu = random_measure(200, 1);
        for f in [
            CircleMap::identity(),
            CircleMap::projective([[1.0, 0.0], [0.0, 1.0]]).unwrap(),
        ] {
            assert!(pushforward(&f, &mu).tv(&mu) < 1e-12);
        }
    }

    #[test]
    fn one_bin_rotation_shifts_cyclically() {
        let n = 256;
        let mu = random_measure(n, 2);
        let out = pushforward(&CircleMap::rotation(1.0 / n as f64), &mu);
        for b in 0..n {
            assert!((out.weights()[(b + 1) % n] - mu.weights()[b]).abs() < 1e-15);
        }
    }

    #[test]
    fn contraction_matches_monte_carlo() {
        // Oracle: push 10⁶ uniform samples through the map and histogram them.
        let n = 64;
        let f = CircleMap::projective([[2.0, 0.0], [0.0, 0.5]]).unwrap();
        let grid = pushforward(&f, &GridMeasure::uniform(n));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples = 1_000_000;
        let mut counts = vec![0.0; n];
        for _ in 0..samples {
            let y = f.apply_raw(rng.random::<f64>());
            counts[GridMeasure::bin_of(n, y)] += 1.0;
        }
        let empirical = GridMeasure::from_weights(counts).unwrap();
        let tv = grid.tv(&empirical);
        assert!(tv <= 0.01, "{tv}");
        // mass piles up next to the attractor at 0
        // the two bins at 0 receive the preimage of [-1/64, 1/64], of length 1/8
        assert!(grid.weights()[0] + grid.weights()[n - 1] > 0.12);
    }

    #[test]
    fn composition_commutes_within_grid_error() {
        let n = 128;
        let f = CircleMap::hyperbolic(1.7, 0.2).unwrap();
        let g = CircleMap::projective([[1.0, 0.8], [-0.3, 0.9]]).unwrap();
        let gf = f.then(&g).unwrap();
        // grid error is only meaningful for measures the grid resolves
        for seed in 0..5 {
            let mu = smooth_measure(n, seed);
            let once = pushforward(&gf, &mu);
            let twice = pushforward(&g, &pushforward(&f, &mu));
            assert!(once.tv(&twice) <= 4.0 / n as f64, "{}", once.tv(&twice));
        }
    }

    #[test]
    fn tv_and_mixture() {
        let a = GridMeasure::point_mass(4, 0);
        let b = GridMeasure::point_mass(4, 3);
        assert_eq!(a.tv(&b), 1.0);
        let mid = GridMeasure::mixture([(0.25, &a), (0.75, &b)], 4).unwrap();
        assert_eq!(mid.weights(), &[0.25, 0.0, 0.0, 0.75]);
        assert!(GridMeasure::new(vec![0.5, 0.6]).is_err());
    }

    proptest! {
        #[test]
        fn pushforward_preserves_mass(
            stretch in 1.0f64..5.0,
            attractor in 0.0f64..1.0,
            n in 8usize..300,
            seed in 0u64..1000,
        ) {
            let f = CircleMap::hyperbolic(stretch, attractor).unwrap();
            let t = GridTransfer::new(&f, n);
            let mu = random_measure(n, seed);
            let mut raw = vec![0.0; n];
            t.accumulate(mu.weights(), 1.0, &mut raw);
            let total: f64 = raw.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-13);
            let out = t.apply(&mu);
            prop_assert!((compensated_sum(out.weights()) - 1.0).abs() <= 1e-15);
        }

        #[test]
        fn piecewise_linear_transfer_rows_are_stochastic(
            a in 0.05f64..0.45, b in 0.55f64..0.95, ya in 0.0f64..0.4, n in 4usize..200,
        ) {
            let f = CircleMap::piecewise_linear(vec![a, b], vec![ya, ya + 0.5]).unwrap();
            let t = GridTransfer::new(&f, n);
            for bin in 0..n {
                let s: f64 = t.fractions[t.offsets[bin]..t.offsets[bin + 1]].iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-14);
            }
        }
    }
}
