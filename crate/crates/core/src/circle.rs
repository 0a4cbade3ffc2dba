//! Orientation-preserving circle homeomorphisms on `S¹ = ℝ/ℤ`.
//!
//! Every map is described through its lift `F: ℝ → ℝ`, strictly increasing
//! with `F(x + 1) = F(x) + 1`. Projective maps act on `ℝP¹` through the
//! double-angle chart: the point `x ∈ [0, 1)` is the line through
//! `(cos πx, sin πx)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridMeasure;

/// Reduce into `[0, 1)`.
#[inline]
pub fn wrap(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CirclePoint(f64);

impl CirclePoint {
    pub fn new(x: f64) -> Self {
        Self(wrap(x))
    }

    pub fn position(self) -> f64 {
        self.0
    }
}

impl From<f64> for CirclePoint {
    fn from(x: f64) -> Self {
        Self::new(x)
    }
}

/// Counter-clockwise arc from `start` of the given length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub start: CirclePoint,
    pub length: f64,
}

impl Arc {
    pub fn new(start: impl Into<CirclePoint>, length: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&length) {
            return Err(Error::InvalidArgument(format!("arc length {length} outside [0, 1]")));
        }
        Ok(Self {
            start: start.into(),
            length,
        })
    }

    pub fn end(&self) -> CirclePoint {
        CirclePoint::new(self.start.0 + self.length)
    }

    /// Length of the shorter of the two arcs between the endpoints.
    pub fn diameter(&self) -> f64 {
        self.length.min(1.0 - self.length)
    }
}

/// `SL(2, ℝ)` matrix acting projectively. Stored with determinant 1 and
/// nonnegative trace; `A` and `-A` induce the same circle map, and the sign
/// choice keeps `Av` from ever pointing opposite to `v`, which makes the
/// angle-difference lift continuous.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projective {
    m: [[f64; 2]; 2],
}

impl Projective {
    pub fn new(m: [[f64; 2]; 2]) -> Result<Self> {
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if !(det > 0.0) || !det.is_finite() {
            return Err(Error::InvalidMap(format!(
                "projective matrix needs positive determinant, got {det}"
            )));
        }
        let s = det.sqrt();
        let mut n = [[m[0][0] / s, m[0][1] / s], [m[1][0] / s, m[1][1] / s]];
        if n[0][0] + n[1][1] < 0.0 {
            for row in &mut n {
                for v in row.iter_mut() {
                    *v = -*v;
                }
            }
        }
        Ok(Self { m: n })
    }

    pub fn matrix(&self) -> [[f64; 2]; 2] {
        self.m
    }

    /// `diag(stretch, 1/stretch)` conjugated so that the attracting direction
    /// sits at chart point `attractor` and the repelling one at
    /// `attractor + 1/2`.
    pub fn hyperbolic(stretch: f64, attractor: f64) -> Result<Self> {
        if !(stretch > 0.0) {
            return Err(Error::InvalidMap(format!("stretch {stretch} must be positive")));
        }
        let r = rotation_matrix(PI * attractor);
        let rt = rotation_matrix(-PI * attractor);
        let d = [[stretch, 0.0], [0.0, 1.0 / stretch]];
        Self::new(mat_mul(&mat_mul(&r, &d), &rt))
    }

    pub fn rotation(angle: f64) -> Self {
        Self::new(rotation_matrix(PI * angle)).expect("rotation has unit determinant")
    }

    #[inline]
    fn image(&self, theta: f64) -> (f64, f64, f64, f64) {
        let (s, c) = theta.sin_cos();
        let x = self.m[0][0] * c + self.m[0][1] * s;
        let y = self.m[1][0] * c + self.m[1][1] * s;
        (c, s, x, y)
    }

    #[inline]
    fn lift(&self, x: f64) -> f64 {
        let (c, s, ax, ay) = self.image(PI * x);
        let turn = (c * ay - s * ax).atan2(c * ax + s * ay);
        x + turn / PI
    }

    #[inline]
    fn derivative(&self, x: f64) -> f64 {
        let (_, _, ax, ay) = self.image(PI * x);
        1.0 / (ax * ax + ay * ay)
    }

    /// The image of the arc `[θ₁, θ₂]` spans the angle
    /// `atan2(det · sin(θ₂ - θ₁), Av₁ · Av₂)`; computing the sine from the
    /// arc length keeps full relative precision for tiny arcs.
    #[inline]
    fn image_length(&self, start: f64, length: f64) -> f64 {
        let (_, _, x1, y1) = self.image(PI * start);
        let (_, _, x2, y2) = self.image(PI * (start + length));
        let span = (PI * length).sin().atan2(x1 * x2 + y1 * y2);
        (span / PI).clamp(0.0, 1.0)
    }
}

fn rotation_matrix(angle: f64) -> [[f64; 2]; 2] {
    let (s, c) = angle.sin_cos();
    [[c, -s], [s, c]]
}

fn mat_mul(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

/// Piecewise-linear homeomorphism given by breakpoints `b_0 < .. < b_{r-1}`
/// in `[0, 1)` and strictly increasing lift values `y_i` with
/// `y_{r-1} < y_0 + 1`; extended periodically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    knots: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(breakpoints: Vec<f64>, images: Vec<f64>) -> Result<Self> {
        let r = breakpoints.len();
        if r == 0 || images.len() != r {
            return Err(Error::InvalidMap(format!(
                "need matching nonempty breakpoints/images, got {} and {}",
                r,
                images.len()
            )));
        }
        if breakpoints.iter().chain(&images).any(|v| !v.is_finite()) {
            return Err(Error::InvalidMap("non-finite breakpoint or image".into()));
        }
        if breakpoints[0] < 0.0 || breakpoints[r - 1] >= 1.0 {
            return Err(Error::InvalidMap("breakpoints must lie in [0, 1)".into()));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidMap("breakpoints must be strictly increasing".into()));
        }
        if images.windows(2).any(|w| w[0] >= w[1]) || images[r - 1] >= images[0] + 1.0 {
            return Err(Error::InvalidMap(
                "images must be strictly increasing within one turn".into(),
            ));
        }
        // Extended knot list covering [b_{r-1} - 1, b_0 + 1].
        let mut knots = Vec::with_capacity(r + 2);
        let mut values = Vec::with_capacity(r + 2);
        knots.push(breakpoints[r - 1] - 1.0);
        values.push(images[r - 1] - 1.0);
        knots.extend_from_slice(&breakpoints);
        values.extend_from_slice(&images);
        knots.push(breakpoints[0] + 1.0);
        values.push(images[0] + 1.0);
        let slopes = knots
            .windows(2)
            .zip(values.windows(2))
            .map(|(k, v)| (v[1] - v[0]) / (k[1] - k[0]))
            .collect();
        Ok(Self {
            knots,
            values,
            slopes,
        })
    }

    /// Segment index `i` with `knots[i] <= u < knots[i + 1]`, for `u ∈ [0, 1)`.
    #[inline]
    fn segment(&self, u: f64) -> usize {
        let i = self.knots.partition_point(|k| *k <= u);
        i.saturating_sub(1).min(self.slopes.len() - 1)
    }

    fn lift(&self, x: f64) -> f64 {
        let turns = x.floor();
        let u = x - turns;
        let i = self.segment(u);
        turns + self.values[i] + self.slopes[i] * (u - self.knots[i])
    }

    fn derivative(&self, x: f64) -> f64 {
        self.slopes[self.segment(wrap(x))]
    }

    fn image_length(&self, start: f64, length: f64) -> f64 {
        let mut pos = wrap(start);
        let mut remaining = length;
        let mut acc = 0.0;
        for _ in 0..2 * self.knots.len() + 4 {
            if remaining <= 0.0 {
                break;
            }
            let i = self.segment(pos);
            let take = (self.knots[i + 1] - pos).min(remaining);
            acc += self.slopes[i] * take;
            remaining -= take;
            pos = wrap(pos + take);
        }
        acc.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CircleMap {
    Rotation { angle: f64 },
    Projective(Projective),
    PiecewiseLinear(PiecewiseLinear),
}

impl CircleMap {
    pub fn identity() -> Self {
        Self::Rotation { angle: 0.0 }
    }

    pub fn rotation(angle: f64) -> Self {
        Self::Rotation { angle }
    }

    pub fn projective(m: [[f64; 2]; 2]) -> Result<Self> {
        Projective::new(m).map(Self::Projective)
    }

    pub fn hyperbolic(stretch: f64, attractor: f64) -> Result<Self> {
        Projective::hyperbolic(stretch, attractor).map(Self::Projective)
    }

    pub fn piecewise_linear(breakpoints: Vec<f64>, images: Vec<f64>) -> Result<Self> {
        PiecewiseLinear::new(breakpoints, images).map(Self::PiecewiseLinear)
    }

    /// Smooth maps have a classical derivative everywhere.
    pub fn is_smooth(&self) -> bool {
        !matches!(self, Self::PiecewiseLinear(_))
    }

    pub fn is_rotation(&self) -> bool {
        matches!(self, Self::Rotation { .. })
    }

    /// Lift evaluated at any real `x`.
    #[inline]
    pub fn lift(&self, x: f64) -> f64 {
        match self {
            Self::Rotation { angle } => x + angle,
            Self::Projective(p) => p.lift(x),
            Self::PiecewiseLinear(pl) => pl.lift(x),
        }
    }

    #[inline]
    pub fn apply_raw(&self, x: f64) -> f64 {
        wrap(self.lift(x))
    }

    pub fn apply(&self, x: CirclePoint) -> CirclePoint {
        CirclePoint(self.apply_raw(x.0))
    }

    /// Derivative of the lift; right-hand slope at piecewise-linear
    /// breakpoints.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Self::Rotation { .. } => 1.0,
            Self::Projective(p) => p.derivative(x),
            Self::PiecewiseLinear(pl) => pl.derivative(x),
        }
    }

    /// `F(start + length) - F(start)` for `length ∈ [0, 1]`, evaluated so
    /// that tiny arcs keep full relative precision. Exact for rotations.
    #[inline]
    pub fn image_length(&self, start: f64, length: f64) -> f64 {
        match self {
            Self::Rotation { .. } => length,
            Self::Projective(p) => p.image_length(start, length),
            Self::PiecewiseLinear(pl) => pl.image_length(start, length),
        }
    }

    pub fn apply_arc(&self, arc: &Arc) -> Arc {
        Arc {
            start: self.apply(arc.start),
            length: self.image_length(arc.start.0, arc.length),
        }
    }

    /// `g ∘ f` for rotations and projective maps; `None` when either side is
    /// piecewise linear.
    pub fn then(&self, g: &CircleMap) -> Option<CircleMap> {
        match (self, g) {
            (Self::Rotation { angle: a }, Self::Rotation { angle: b }) => {
                Some(Self::rotation(a + b))
            }
            (Self::PiecewiseLinear(_), _) | (_, Self::PiecewiseLinear(_)) => None,
            _ => {
                let f = self.as_projective()?;
                let g = g.as_projective()?;
                Projective::new(mat_mul(&g.m, &f.m)).ok().map(Self::Projective)
            }
        }
    }

    fn as_projective(&self) -> Option<Projective> {
        match self {
            Self::Rotation { angle } => Some(Projective::rotation(*angle)),
            Self::Projective(p) => Some(*p),
            Self::PiecewiseLinear(_) => None,
        }
    }
}

/// The family `{f_α}` indexed by the driving states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MapFamily {
    maps: Vec<CircleMap>,
}

impl MapFamily {
    pub fn new(maps: Vec<CircleMap>) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::InvalidMap("empty family".into()));
        }
        Ok(Self { maps })
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn get(&self, state: usize) -> &CircleMap {
        &self.maps[state]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, CircleMap> {
        self.maps.iter()
    }

    pub fn all_rotations(&self) -> bool {
        self.maps.iter().all(CircleMap::is_rotation)
    }

    pub fn all_smooth(&self) -> bool {
        self.maps.iter().all(CircleMap::is_smooth)
    }
}

/// `max_{α: w_α > 0} TV(f_α* μ, μ)`.
pub fn common_invariant_residual(family: &MapFamily, weights: &[f64], mu: &GridMeasure) -> f64 {
    family
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(f, _)| crate::grid::pushforward(f, mu).tv(mu))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonInvariantSearch {
    /// A witness was found: a certificate up to grid error. `false` is
    /// evidence only, never a proof of non-existence.
    pub found: bool,
    pub residual: f64,
    pub witness: GridMeasure,
    pub iterations: usize,
    pub grid: usize,
}

/// Averages `μ ← Σ w_α f_α* μ` from the uniform measure until the TV step
/// drops below `tol` (or `max_iter`), then tests the result against every
/// map with positive weight.
pub fn detect_common_invariant(
    family: &MapFamily,
    weights: &[f64],
    grid: usize,
    tol: f64,
    max_iter: usize,
) -> Result<CommonInvariantSearch> {
    if weights.len() != family.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {} maps",
            weights.len(),
            family.len()
        )));
    }
    let transfers: Vec<_> = family
        .iter()
        .map(|f| crate::grid::GridTransfer::new(f, grid))
        .collect();
    let mut mu = GridMeasure::uniform(grid);
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut acc = vec![0.0; grid];
        for (t, w) in transfers.iter().zip(weights) {
            if *w > 0.0 {
                t.accumulate(mu.weights(), *w, &mut acc);
            }
        }
        let next = GridMeasure::from_weights(acc)?;
        let step = next.tv(&mu);
        mu = next;
        if step < tol {
            break;
        }
    }
    let residual = transfers
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(t, _)| t.apply(&mu).tv(&mu))
        .fold(0.0, f64::max);
    Ok(CommonInvariantSearch {
        found: residual < 10.0 * tol,
        residual,
        witness: mu,
        iterations,
        grid,
    })
}
