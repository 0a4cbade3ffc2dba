//! Sampling the driving chain and the skew chain `Z_n = (ω_{n-1}, f^n_ω x)`,
//! Birkhoff averages, and exact enumeration of two Markov-property identities
//! over finite cylinders.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circle::{CircleMap, MapFamily};
use crate::error::{Error, Result};
use crate::grid::GridMeasure;
use crate::kernel::{BoundedPair, FiniteKernel, StationaryVector};
use crate::measure::{DiscreteFamily, ProductMeasure};

/// Largest number of words the exact checks will enumerate.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// Independent stream `trial` of the generator seeded by `master`.
pub fn trial_rng(master: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(trial);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChainStart {
    Stationary(StationaryVector),
    State(usize),
}

/// Inverse-CDF sampler for a kernel's rows and an initial law.
#[derive(Debug, Clone)]
pub struct ChainSampler {
    cumulative: Vec<Vec<f64>>,
    initial: Vec<f64>,
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect();
    // the last state with positive weight absorbs rounding
    if let Some(last) = weights.iter().rposition(|w| *w > 0.0) {
        out[last..].iter_mut().for_each(|c| *c = f64::INFINITY);
    }
    out
}

fn draw(cumulative: &[f64], u: f64) -> usize {
    cumulative.iter().position(|c| u < *c).unwrap_or(cumulative.len() - 1)
}

impl ChainSampler {
    pub fn new(kernel: &FiniteKernel, start: &ChainStart) -> Result<Self> {
        let k = kernel.size();
        let initial = match start {
            ChainStart::Stationary(m) if m.len() == k => cumulative(m.as_slice()),
            ChainStart::State(s) if *s < k => {
                let mut point = vec![0.0; k];
                point[*s] = 1.0;
                cumulative(&point)
            }
            _ => {
                return Err(Error::ShapeMismatch(format!(
                    "start law does not fit a kernel on {k} states"
                )))
            }
        };
        Ok(Self {
            cumulative: kernel.rows().map(cumulative).collect(),
            initial,
        })
    }

    pub fn first<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        draw(&self.initial, rng.random())
    }

    #[inline]
    pub fn next<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        draw(&self.cumulative[state], rng.random())
    }
}

/// `ω₀, …, ω_{n-1}` with `ω₀ ~ start` and `ω_{i+1} ~ p(ω_i, ·)`.
pub fn sample_chain_with<R: Rng + ?Sized>(
    kernel: &FiniteKernel,
    start: &ChainStart,
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidArgument("chain length must be at least 1".into()));
    }
    let sampler = ChainSampler::new(kernel, start)?;
    let mut states = Vec::with_capacity(n);
    let mut s = sampler.first(rng);
    states.push(s);
    for _ in 1..n {
        s = sampler.next(s, rng);
        states.push(s);
    }
    Ok(states)
}

pub fn sample_chain(
    kernel: &FiniteKernel,
    start: &ChainStart,
    n: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    sample_chain_with(kernel, start, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// A driving word and the orbit of one point along it:
/// `points[i + 1] = f_{states[i]}(points[i])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitSample {
    pub seed: u64,
    pub states: Vec<usize>,
    pub points: Vec<f64>,
}

impl OrbitSample {
    /// Number of skew-chain steps `n`.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// `Z_i = (ω_{i-1}, x_i)` for `1 <= i <= n`.
    pub fn pair(&self, i: usize) -> (usize, f64) {
        (self.states[i - 1], self.points[i])
    }

    /// Rows `step,state,point`; `state` is empty on the final point.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# seed={}", self.seed)?;
        writeln!(out, "step,state,point")?;
        for (i, x) in self.points.iter().enumerate() {
            match self.states.get(i) {
                Some(s) => writeln!(out, "{i},{s},{x:e}")?,
                None => writeln!(out, "{i},,{x:e}")?,
            }
        }
        Ok(())
    }
}

pub fn iterate(family: &MapFamily, states: &[usize], x0: f64, seed: u64) -> Result<OrbitSample> {
    if let Some(bad) = states.iter().find(|s| **s >= family.len()) {
        return Err(Error::ShapeMismatch(format!(
            "state {bad} has no map in a family of {}",
            family.len()
        )));
    }
    let mut points = Vec::with_capacity(states.len() + 1);
    let mut x = crate::circle::wrap(x0);
    points.push(x);
    for s in states {
        x = family.get(*s).apply_raw(x);
        points.push(x);
    }
    Ok(OrbitSample {
        seed,
        states: states.to_vec(),
        points,
    })
}

/// `(1/n) Σ_{i=1}^{n} φ(Z_i)`.
pub fn birkhoff_average<F: Fn(usize, f64) -> f64>(orbit: &OrbitSample, phi: F) -> Result<f64> {
    let n = orbit.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty orbit".into()));
    }
    let sum: f64 = (1..=n)
        .map(|i| {
            let (s, x) = orbit.pair(i);
            phi(s, x)
        })
        .sum();
    Ok(sum / n as f64)
}

/// Streams one skew-chain path without storing it.
pub struct SkewWalk<'a> {
    maps: &'a [CircleMap],
    sampler: &'a ChainSampler,
    state: Option<usize>,
    x: f64,
}

impl<'a> SkewWalk<'a> {
    pub fn new(maps: &'a [CircleMap], sampler: &'a ChainSampler, x0: f64) -> Self {
        Self {
            maps,
            sampler,
            state: None,
            x: crate::circle::wrap(x0),
        }
    }

    /// Advances to the next `Z_i`.
    #[inline]
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> (usize, f64) {
        let s = match self.state {
            None => self.sampler.first(rng),
            Some(prev) => self.sampler.next(prev, rng),
        };
        self.state = Some(s);
        self.x = self.maps[s].apply_raw(self.x);
        (s, self.x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalSettings {
    pub trials: usize,
    /// Skew-chain steps per trial, burn-in included.
    pub steps: usize,
    pub burn_in: usize,
    pub grid: usize,
    /// Fixed start point, or uniform per trial when absent.
    pub x0: Option<f64>,
    pub seed: u64,
}

/// Histogram of `Z_i` for `burn_in < i <= steps`, pooled over independent
/// trials, normalized per state and weighted by state frequency.
pub fn empirical_product_measure(
    kernel: &FiniteKernel,
    start: &ChainStart,
    family: &MapFamily,
    settings: &EmpiricalSettings,
) -> Result<ProductMeasure> {
    let k = kernel.size();
    if family.len() != k {
        return Err(Error::ShapeMismatch(format!(
            "{} maps for {k} states",
            family.len()
        )));
    }
    if settings.burn_in >= settings.steps || settings.trials == 0 || settings.grid == 0 {
        return Err(Error::InvalidArgument(
            "need trials >= 1, grid >= 1 and burn_in < steps".into(),
        ));
    }
    let sampler = ChainSampler::new(kernel, start)?;
    let maps: Vec<CircleMap> = family.iter().cloned().collect();
    let n = settings.grid;
    let counts: Vec<Vec<u64>> = (0..settings.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(settings.seed, trial as u64);
            let x0 = settings.x0.unwrap_or_else(|| rng.random());
            let mut walk = SkewWalk::new(&maps, &sampler, x0);
            let mut counts = vec![0u64; k * n];
            for i in 1..=settings.steps {
                let (s, x) = walk.step(&mut rng);
                if i > settings.burn_in {
                    counts[s * n + GridMeasure::bin_of(n, x)] += 1;
                }
            }
            counts
        })
        .collect();
    let mut total = vec![0u64; k * n];
    for c in &counts {
        total.iter_mut().zip(c).for_each(|(t, v)| *t += v);
    }
    let per_state: Vec<u64> = (0..k).map(|s| total[s * n..(s + 1) * n].iter().sum()).collect();
    let all: u64 = per_state.iter().sum();
    let marginal =
        StationaryVector::new(per_state.iter().map(|c| *c as f64 / all as f64).collect())?;
    let fibres = (0..k)
        .map(|s| {
            if per_state[s] == 0 {
                GridMeasure::uniform(n)
            } else {
                GridMeasure::from_weights(
                    total[s * n..(s + 1) * n].iter().map(|c| *c as f64).collect(),
                )
                .expect("state was visited")
            }
        })
        .collect();
    ProductMeasure::new(marginal, fibres)
}

fn check_enumerable(k: usize, length: usize) -> Result<()> {
    let size = (k as u128).checked_pow(length as u32).unwrap_or(u128::MAX);
    if size > ENUMERATION_LIMIT {
        return Err(Error::TooLarge {
            size,
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(())
}

/// Calls `visit(word, weight)` for every word of `length` states, where
/// `weight = start(ω₀) Π p(ω_i, ω_{i+1})`.
fn for_each_word<F: FnMut(&[usize], f64)>(
    kernel: &FiniteKernel,
    start: &[f64],
    length: usize,
    visit: &mut F,
) {
    fn descend<F: FnMut(&[usize], f64)>(
        kernel: &FiniteKernel,
        word: &mut Vec<usize>,
        weight: f64,
        length: usize,
        visit: &mut F,
    ) {
        if word.len() == length {
            visit(word, weight);
            return;
        }
        let last = *word.last().expect("nonempty");
        for next in 0..kernel.size() {
            word.push(next);
            descend(kernel, word, weight * kernel.get(last, next), length, visit);
            word.pop();
        }
    }
    if length == 0 {
        visit(&[], 1.0);
        return;
    }
    let mut word = Vec::with_capacity(length);
    for (first, w) in start.iter().enumerate() {
        word.push(first);
        descend(kernel, &mut word, *w, length, visit);
        word.pop();
    }
}

/// `|E[u(σω) g(ω₀)] - E[u(ω) Σ_β g(β) q(ω₀, β)]|` under the Markov measure of
/// `(p, m)`, with `u` a function of the first `depth + 1` coordinates.
/// Both sides are exact sums over cylinders.
pub fn check_shift_duality<U: Fn(&[usize]) -> f64>(
    kernel: &FiniteKernel,
    dual: &FiniteKernel,
    m: &StationaryVector,
    g: &[f64],
    u: U,
    depth: usize,
) -> Result<f64> {
    let k = kernel.size();
    if dual.size() != k || m.len() != k || g.len() != k {
        return Err(Error::ShapeMismatch("kernel, dual, m and g sizes differ".into()));
    }
    check_enumerable(k, depth + 2)?;
    let mut shifted = 0.0;
    for_each_word(kernel, m.as_slice(), depth + 2, &mut |w, weight| {
        shifted += weight * u(&w[1..]) * g[w[0]];
    });
    let qg = dual.right_apply(g);
    let mut reversed = 0.0;
    for_each_word(kernel, m.as_slice(), depth + 1, &mut |w, weight| {
        reversed += weight * u(w) * qg[w[0]];
    });
    Ok((shifted - reversed).abs())
}

/// A nonnegative function `h(ω, x)` depending on `ω₀ … ω_{L-1}` and the grid
/// bin of `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderFunction {
    states: usize,
    depth: usize,
    grid: usize,
    values: Vec<f64>,
}

fn word_index(states: usize, word: &[usize]) -> usize {
    word.iter().fold(0, |acc, s| acc * states + s)
}

impl CylinderFunction {
    /// `values[word_index * grid + bin]`, words in lexicographic order.
    pub fn new(states: usize, depth: usize, grid: usize, values: Vec<f64>) -> Result<Self> {
        check_enumerable(states, depth)?;
        let words = states.pow(depth as u32);
        if values.len() != words * grid {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {words} words and {grid} bins",
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("cylinder function must be nonnegative".into()));
        }
        Ok(Self {
            states,
            depth,
            grid,
            values,
        })
    }

    pub fn constant(states: usize, depth: usize, grid: usize, value: f64) -> Result<Self> {
        Self::new(states, depth, grid, vec![value; states.pow(depth as u32) * grid])
    }

    /// Random 0/1 seed set closed under `h(ω, x) >= h(F(ω, x))` on the
    /// discretized dynamics: whenever `h(σω, b') = 1` for an image bin `b'`
    /// of `b` under `f_{ω₀}`, also `h(ω, b) = 1`.
    pub fn random_admissible<R: Rng + ?Sized>(
        family: &DiscreteFamily,
        depth: usize,
        density: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let k = family.len();
        let n = family.grid();
        check_enumerable(k, depth + 1)?;
        let words = k.pow(depth as u32);
        let mut values: Vec<f64> = (0..words * n)
            .map(|_| if rng.random::<f64>() < density { 1.0 } else { 0.0 })
            .collect();
        let long = k.pow(depth as u32 + 1);
        loop {
            let mut changed = false;
            for code in 0..long {
                let word = decode(k, depth + 1, code);
                let head = word_index(k, &word[..depth]);
                let tail = word_index(k, &word[1..]);
                let transfer = family.transfer(word[0]);
                for b in 0..n {
                    if values[head * n + b] == 1.0 {
                        continue;
                    }
                    if transfer.image_bins(b).any(|t| values[tail * n + t] == 1.0) {
                        values[head * n + b] = 1.0;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        Self::new(k, depth, n, values)
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn value(&self, word: &[usize], bin: usize) -> f64 {
        self.values[word_index(self.states, word) * self.grid + bin]
    }

    /// Word and bin where `h(ω, b) >= h(σω, b')` fails for some image bin
    /// `b'` of `b` under `f_{ω₀}`, if any.
    pub fn dominance_violation(&self, family: &DiscreteFamily) -> Option<(Vec<usize>, usize)> {
        let k = self.states;
        let n = self.grid;
        for code in 0..k.pow(self.depth as u32 + 1) {
            let word = decode(k, self.depth + 1, code);
            let transfer = family.transfer(word[0]);
            for b in 0..n {
                let here = self.value(&word[..self.depth], b);
                if transfer
                    .image_bins(b)
                    .any(|t| self.value(&word[1..], t) > here)
                {
                    return Some((word, b));
                }
            }
        }
        None
    }
}

fn decode(states: usize, length: usize, mut code: usize) -> Vec<usize> {
    let mut word = vec![0; length];
    for slot in word.iter_mut().rev() {
        *slot = code % states;
        code /= states;
    }
    word
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalBound {
    pub holds: bool,
    /// Smallest `E(h∘F^n | 𝓕_{n-1}) - C h̄(f^n x₀)` over atoms of positive mass.
    pub margin: f64,
    /// The constant actually used: the pair's `C`, lowered by at most a few
    /// ulps so that `C m_β <= p(α, β)` holds in floating point.
    pub constant: f64,
    pub atoms: usize,
}

/// Exact check of `E(h(F^n(·, x₀)) | 𝓕_{n-1}) >= C h̄(f^n_ω x₀)` on every
/// atom `[ω₀ … ω_{n-1}]` of positive mass, where
/// `h̄(x) = ∫ h(ω, x) dℙ(ω)`.
pub fn check_conditional_bound(
    pair: &BoundedPair,
    family: &DiscreteFamily,
    h: &CylinderFunction,
    x0: f64,
    n: usize,
) -> Result<ConditionalBound> {
    let k = pair.size();
    let grid = family.grid();
    if family.len() != k || h.states != k || h.grid != grid {
        return Err(Error::ShapeMismatch(
            "pair, family and cylinder function disagree".into(),
        ));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    check_enumerable(k, n + h.depth)?;
    if let Some((word, bin)) = h.dominance_violation(family) {
        return Err(Error::HypothesisFailed { word, bin });
    }
    let p = &pair.kernel;
    let m = &pair.stationary;
    let mut constant = pair.constant;
    while (0..k).any(|a| (0..k).any(|b| constant * m[b] > p.get(a, b))) {
        constant = constant.next_down();
    }
    // tail[c0][bin] = Σ over continuations c with first letter c0 of
    // Π p(c_i, c_{i+1}) h(c, bin)
    let depth = h.depth;
    let mut tail = vec![vec![0.0; grid]; k];
    if depth > 0 {
        for (c0, row) in tail.iter_mut().enumerate() {
            let mut start = vec![0.0; k];
            start[c0] = 1.0;
            for_each_word(p, &start, depth, &mut |w, weight| {
                if w[0] == c0 && weight > 0.0 {
                    for (b, slot) in row.iter_mut().enumerate() {
                        *slot += weight * h.value(w, b);
                    }
                }
            });
        }
    }
    let maps: Vec<&CircleMap> = family.family().iter().collect();
    let mut margin = f64::INFINITY;
    let mut atoms = 0;
    for_each_word(p, m.as_slice(), n, &mut |w, weight| {
        if weight <= 0.0 {
            return;
        }
        atoms += 1;
        let x = w.iter().fold(crate::circle::wrap(x0), |x, s| maps[*s].apply_raw(x));
        let b = GridMeasure::bin_of(grid, x);
        let slack = if depth == 0 {
            (1.0 - constant) * h.value(&[], b)
        } else {
            let last = w[n - 1];
            (0..k)
                .map(|c0| (p.get(last, c0) - constant * m[c0]) * tail[c0][b])
                .sum()
        };
        margin = margin.min(slack);
    });
    Ok(ConditionalBound {
        holds: margin >= 0.0,
        margin,
        constant,
        atoms,
    })
}

/// Law of `ω_step` for the chain started from `start`, by enumerating all
/// words of length `step + 1`.
pub fn enumerated_marginal(kernel: &FiniteKernel, start: &[f64], step: usize) -> Result<Vec<f64>> {
    check_enumerable(kernel.size(), step + 1)?;
    let mut law = vec![0.0; kernel.size()];
    for_each_word(kernel, start, step + 1, &mut |w, weight| law[w[step]] += weight);
    Ok(law)
}
