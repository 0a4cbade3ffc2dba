//! Contraction exponents of the random iteration and the local
//! synchronization experiment.
//!
//! The exponent at `(ω, x)` is a double limsup, estimated with a finite
//! surrogate: a ladder of nested arcs `[x, x + δ₀ 2^{-j}]`, `j = 0..=J`, is
//! pushed along the random orbit, and the least-squares slope of
//! `log diam` against the step count is read off the finest arc that never
//! reaches diameter `1/4`.

use std::io::{self, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circle::{detect_common_invariant, CircleMap, MapFamily};
use crate::error::{Error, Result};
use crate::grid::GridMeasure;
use crate::kernel::{FiniteKernel, StationaryVector};
use crate::measure::SkewMeasure;
use crate::trajectory::{trial_rng, ChainSampler, ChainStart};

pub const DEFAULT_DELTA0: f64 = 0.125;
/// Finest ladder index `J`; the ladder has `J + 1` arcs.
pub const DEFAULT_FINEST: usize = 6;
pub const DEFAULT_SYNC_THRESHOLD: f64 = 0.9;
/// An arc counts as blown up once its length reaches this value.
pub const ESCAPE_LENGTH: f64 = 0.25;
/// Below this length, steps use the derivative at the arc's start.
const LINEAR_REGIME: f64 = 1e-280;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderSettings {
    pub delta0: f64,
    pub finest: usize,
    pub steps: usize,
}

impl LadderSettings {
    pub fn new(delta0: f64, steps: usize) -> Result<Self> {
        let s = Self {
            delta0,
            finest: DEFAULT_FINEST,
            steps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta0 > 0.0 && self.delta0 <= 0.25) {
            return Err(Error::InvalidArgument(format!(
                "delta0 = {} must lie in (0, 1/4]",
                self.delta0
            )));
        }
        if self.steps < 100 {
            return Err(Error::InvalidArgument(format!(
                "at least 100 steps are needed, got {}",
                self.steps
            )));
        }
        if self.finest > 60 {
            return Err(Error::InvalidArgument("ladder deeper than 60 rungs".into()));
        }
        Ok(())
    }

    fn rungs(&self) -> usize {
        self.finest + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LadderTrace {
    slope: Option<f64>,
    /// Ladder index the slope was read from.
    rung: Option<usize>,
    /// Step at which each rung reached the escape length.
    escape_times: Vec<Option<usize>>,
    /// Whether some rung satisfied `log diam_n <= n · rate` for every `n`.
    synced: bool,
}

/// Pushes the whole ladder along one sampled driving word.
fn trace_ladder<R: Rng + ?Sized>(
    maps: &[CircleMap],
    sampler: &ChainSampler,
    x: f64,
    settings: &LadderSettings,
    sync_rate: Option<f64>,
    rng: &mut R,
) -> LadderTrace {
    let rungs = settings.rungs();
    let mut log_len: Vec<f64> = (0..rungs)
        .map(|j| (settings.delta0 * (-(j as f64)).exp2()).ln())
        .collect();
    let log_start = log_len.clone();
    let mut escape: Vec<Option<usize>> = vec![None; rungs];
    let mut within_rate = vec![true; rungs];
    // least-squares accumulators of (t, log d_t - log d_0)
    let mut sum_ty = vec![0.0; rungs];
    let mut sum_y = vec![0.0; rungs];

    let mut x = crate::circle::wrap(x);
    let mut state = sampler.first(rng);
    for t in 1..=settings.steps {
        if t > 1 {
            state = sampler.next(state, rng);
        }
        let f = &maps[state];
        let slope_here = f.derivative(x);
        for j in 0..rungs {
            if escape[j].is_some() {
                continue;
            }
            let len = log_len[j].exp();
            log_len[j] += if len > LINEAR_REGIME {
                (f.image_length(x, len) / len).ln()
            } else {
                slope_here.ln()
            };
            if log_len[j] >= ESCAPE_LENGTH.ln() {
                escape[j] = Some(t);
                continue;
            }
            let y = log_len[j] - log_start[j];
            sum_ty[j] += t as f64 * y;
            sum_y[j] += y;
            if let Some(rate) = sync_rate {
                if log_len[j] > t as f64 * rate {
                    within_rate[j] = false;
                }
            }
        }
        x = f.apply_raw(x);
    }

    let rung = (0..rungs).rev().find(|j| escape[*j].is_none());
    let slope = rung.map(|j| {
        // t = 0..=n with y_0 = 0
        let n = settings.steps as f64;
        let count = n + 1.0;
        let mean_t = n / 2.0;
        let sxx = count * (count * count - 1.0) / 12.0;
        (sum_ty[j] - mean_t * sum_y[j]) / sxx
    });
    let synced = sync_rate.is_some()
        && (0..rungs).any(|j| escape[j].is_none() && within_rate[j]);
    LadderTrace {
        slope,
        rung,
        escape_times: escape,
        synced,
    }
}

fn prepare(
    family: &MapFamily,
    kernel: &FiniteKernel,
    m: &StationaryVector,
) -> Result<(Vec<CircleMap>, ChainSampler)> {
    if family.len() != kernel.size() || m.len() != kernel.size() {
        return Err(Error::ShapeMismatch(format!(
            "{} maps, kernel on {} states, stationary vector of length {}",
            family.len(),
            kernel.size(),
            m.len()
        )));
    }
    let sampler = ChainSampler::new(kernel, &ChainStart::Stationary(m.clone()))?;
    Ok((family.iter().cloned().collect(), sampler))
}

fn blown_up(trace: &LadderTrace, steps: usize) -> Error {
    Error::AllLaddersBlewUp {
        escape_times: trace
            .escape_times
            .iter()
            .map(|e| e.unwrap_or(steps))
            .collect(),
    }
}

/// Slope of `log diam f^n_ω(I_j)` for one driving word with `ω₀ ~ m`, drawn
/// from stream 0 of `seed`.
pub fn estimate_exponent(
    family: &MapFamily,
    kernel: &FiniteKernel,
    m: &StationaryVector,
    x: f64,
    settings: &LadderSettings,
    seed: u64,
) -> Result<f64> {
    settings.validate()?;
    let (maps, sampler) = prepare(family, kernel, m)?;
    let trace = trace_ladder(&maps, &sampler, x, settings, None, &mut trial_rng(seed, 0));
    trace.slope.ok_or_else(|| blown_up(&trace, settings.steps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncSettings {
    pub ladder: LadderSettings,
    pub trials: usize,
    pub seed: u64,
    pub threshold: f64,
    /// Grid and tolerance of the common-invariant-measure search.
    pub detection_grid: usize,
    pub detection_tol: f64,
    pub detection_max_iter: usize,
}

impl SyncSettings {
    pub fn new(trials: usize, steps: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            ladder: LadderSettings::new(DEFAULT_DELTA0, steps)?,
            trials,
            seed,
            threshold: DEFAULT_SYNC_THRESHOLD,
            detection_grid: 256,
            detection_tol: 1e-10,
            detection_max_iter: 20_000,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub per_trial_slopes: Vec<f64>,
    /// Median trial slope.
    pub lambda_hat: f64,
    pub lambda0_hat: Option<f64>,
    pub rho_hat: f64,
    pub sync_fraction: f64,
    /// `sync_fraction >= threshold` and `lambda_hat < 0`.
    pub synchronizes: bool,
    /// A common invariant measure was found, so the contraction hypothesis
    /// fails for this family.
    pub hypothesis_violated: bool,
    pub common_invariant_residual: f64,
    /// The family has non-smooth members; the ladder is only a surrogate.
    pub surrogate: bool,
    /// Trials in which every rung blew up; excluded from the slopes and
    /// counted as not synchronized.
    pub blown_up_trials: usize,
    pub x: f64,
    pub trials: usize,
    pub steps: usize,
    pub delta0: f64,
    pub finest: usize,
    pub seed: u64,
    pub threshold: f64,
    pub detection_grid: usize,
}

impl ContractionReport {
    pub fn write_slopes_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# seed={} x={} steps={}", self.seed, self.x, self.steps)?;
        writeln!(out, "trial,slope")?;
        for (i, s) in self.per_trial_slopes.iter().enumerate() {
            writeln!(out, "{i},{s:e}")?;
        }
        Ok(())
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Linearly interpolated quantile (`q ∈ [0, 1]`).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Runs `trials` ladders from `x` (stream `t` of `seed` for trial `t`),
/// takes the median slope `λ̂`, then replays every trial to test
/// `diam f^n_ω(I_j) <= exp(n λ̂ / 2)` for all `n` on some rung.
pub fn local_sync_experiment(
    family: &MapFamily,
    kernel: &FiniteKernel,
    m: &StationaryVector,
    x: f64,
    settings: &SyncSettings,
) -> Result<ContractionReport> {
    settings.ladder.validate()?;
    if settings.trials == 0 {
        return Err(Error::InvalidArgument("trials must be positive".into()));
    }
    let (maps, sampler) = prepare(family, kernel, m)?;
    let search = detect_common_invariant(
        family,
        m.as_slice(),
        settings.detection_grid,
        settings.detection_tol,
        settings.detection_max_iter,
    )?;
    let run = |rate: Option<f64>| -> Vec<LadderTrace> {
        (0..settings.trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = trial_rng(settings.seed, t as u64);
                trace_ladder(&maps, &sampler, x, &settings.ladder, rate, &mut rng)
            })
            .collect()
    };
    let first = run(None);
    let slopes: Vec<f64> = first.iter().filter_map(|t| t.slope).collect();
    if slopes.is_empty() {
        return Err(blown_up(&first[0], settings.ladder.steps));
    }
    let lambda_hat = median(&slopes);
    let second = run(Some(lambda_hat / 2.0));
    let synced = second.iter().filter(|t| t.synced).count();
    let sync_fraction = synced as f64 / settings.trials as f64;
    Ok(ContractionReport {
        blown_up_trials: settings.trials - slopes.len(),
        per_trial_slopes: slopes,
        lambda_hat,
        lambda0_hat: None,
        rho_hat: lambda_hat.exp(),
        sync_fraction,
        synchronizes: sync_fraction >= settings.threshold && lambda_hat < 0.0,
        hypothesis_violated: search.found,
        common_invariant_residual: search.residual,
        surrogate: !family.all_smooth(),
        x,
        trials: settings.trials,
        steps: settings.ladder.steps,
        delta0: settings.ladder.delta0,
        finest: settings.ladder.finest,
        seed: settings.seed,
        threshold: settings.threshold,
        detection_grid: settings.detection_grid,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub points: Vec<f64>,
    /// 95th-percentile trial slope at each point.
    pub upper_slopes: Vec<f64>,
    pub lambda0_hat: f64,
    pub hypothesis_violated: bool,
    pub common_invariant_residual: f64,
    pub surrogate: bool,
    pub blown_up_trials: usize,
    pub trials: usize,
    pub steps: usize,
    pub delta0: f64,
    pub finest: usize,
    pub seed: u64,
}

/// Upper estimate of the uniform bound: at `x_g = (g + 0.5) / G` take the
/// 95th percentile of `trials` slopes, then the maximum over `g`. Trial `t`
/// at point `g` uses stream `g · trials + t`.
pub fn uniform_bound_scan(
    family: &MapFamily,
    kernel: &FiniteKernel,
    m: &StationaryVector,
    points: usize,
    settings: &SyncSettings,
) -> Result<ScanReport> {
    settings.ladder.validate()?;
    if points == 0 || settings.trials == 0 {
        return Err(Error::InvalidArgument("points and trials must be positive".into()));
    }
    let (maps, sampler) = prepare(family, kernel, m)?;
    let search = detect_common_invariant(
        family,
        m.as_slice(),
        settings.detection_grid,
        settings.detection_tol,
        settings.detection_max_iter,
    )?;
    let xs: Vec<f64> = (0..points).map(|g| (g as f64 + 0.5) / points as f64).collect();
    let traces: Vec<LadderTrace> = (0..points * settings.trials)
        .into_par_iter()
        .map(|idx| {
            let g = idx / settings.trials;
            let mut rng = trial_rng(settings.seed, idx as u64);
            trace_ladder(&maps, &sampler, xs[g], &settings.ladder, None, &mut rng)
        })
        .collect();
    let mut upper = Vec::with_capacity(points);
    let mut blown = 0;
    for g in 0..points {
        let chunk = &traces[g * settings.trials..(g + 1) * settings.trials];
        let slopes: Vec<f64> = chunk.iter().filter_map(|t| t.slope).collect();
        blown += chunk.len() - slopes.len();
        if slopes.is_empty() {
            return Err(blown_up(&chunk[0], settings.ladder.steps));
        }
        upper.push(quantile(&slopes, 0.95));
    }
    let lambda0_hat = upper.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ScanReport {
        points: xs,
        upper_slopes: upper,
        lambda0_hat,
        hypothesis_violated: search.found,
        common_invariant_residual: search.residual,
        surrogate: !family.all_smooth(),
        blown_up_trials: blown,
        trials: settings.trials,
        steps: settings.ladder.steps,
        delta0: settings.ladder.delta0,
        finest: settings.ladder.finest,
        seed: settings.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub standard_error: f64,
    pub samples: usize,
    pub blown_up: usize,
}

/// Monte Carlo average of the ladder slope over `ω₀ ~ m`,
/// `x ~ μ_{ω₀}` (uniform within the drawn bin) and the chain continuing from
/// `ω₀`.
pub fn exponent_of_invariant_measure(
    mu: &SkewMeasure,
    family: &MapFamily,
    kernel: &FiniteKernel,
    samples: usize,
    ladder: &LadderSettings,
    seed: u64,
) -> Result<MeanEstimate> {
    ladder.validate()?;
    let k = kernel.size();
    if mu.states() != k || family.len() != k {
        return Err(Error::ShapeMismatch("measure, family and kernel sizes differ".into()));
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be positive".into()));
    }
    let maps: Vec<CircleMap> = family.iter().cloned().collect();
    let base = ChainSampler::new(kernel, &ChainStart::Stationary(mu.base.clone()))?;
    let fibre_samplers: Vec<ChainSampler> = (0..k)
        .map(|s| ChainSampler::new(kernel, &ChainStart::State(s)))
        .collect::<Result<_>>()?;
    let n = mu.grid();
    let cumulative: Vec<Vec<f64>> = mu
        .family
        .iter()
        .map(|f| {
            let mut acc = 0.0;
            f.weights()
                .iter()
                .map(|w| {
                    acc += w;
                    acc
                })
                .collect()
        })
        .collect();
    let traces: Vec<LadderTrace> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(seed, i as u64);
            let first = base.first(&mut rng);
            let u: f64 = rng.random::<f64>() * cumulative[first][n - 1];
            let bin = cumulative[first].partition_point(|c| *c <= u).min(n - 1);
            let x = (bin as f64 + rng.random::<f64>()) / n as f64;
            trace_ladder(&maps, &fibre_samplers[first], x, ladder, None, &mut rng)
        })
        .collect();
    let slopes: Vec<f64> = traces.iter().filter_map(|t| t.slope).collect();
    if slopes.is_empty() {
        return Err(blown_up(&traces[0], ladder.steps));
    }
    let count = slopes.len() as f64;
    let mean = slopes.iter().sum::<f64>() / count;
    let var = if slopes.len() > 1 {
        slopes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (count - 1.0)
    } else {
        0.0
    };
    Ok(MeanEstimate {
        mean,
        standard_error: (var / count).sqrt(),
        samples: slopes.len(),
        blown_up: samples - slopes.len(),
    })
}

/// Point masses in every fibre at the bin containing `x`.
pub fn point_mass_family(base: &StationaryVector, grid: usize, x: f64) -> SkewMeasure {
    let bin = GridMeasure::bin_of(grid, crate::circle::wrap(x));
    SkewMeasure {
        base: base.clone(),
        family: vec![GridMeasure::point_mass(grid, bin); base.len()],
    }
}
