//! Measures on `E × S¹` through their disintegration over the driving space,
//! the Markov operator of the skew chain `Z_n = (X_{n-1}, f^n_X(x))`, and the
//! fixed-point solver for its stationary measures.
//!
//! The Markov operator has two equivalent forms:
//!
//! * direct: `(Pν)_β = Σ_α m_α p(α, β) f_β* ν_α / m_β`
//! * dual:   `(Pν)_α = Σ_β q(α, β) f_α* ν_β`
//!
//! where `q` is the dual kernel. [`markov_operator_dual`] and
//! [`markov_operator_direct`] implement them independently.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circle::MapFamily;
use crate::error::{Error, Result};
use crate::grid::{GridMeasure, GridTransfer};
use crate::kernel::{FiniteKernel, StationaryVector};

pub const DEFAULT_GRID: usize = 256;
/// Additive slack allowed by [`sandwich_check`].
pub const SANDWICH_SLACK: f64 = 1e-12;

/// Measure `ν` on `E × S¹` with first marginal `marginal` and disintegration
/// `{ν_α}`: `ν(A × B) = Σ_{α ∈ A} m_α ν_α(B)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductMeasure {
    pub marginal: StationaryVector,
    pub disintegration: Vec<GridMeasure>,
}

/// Disintegration `ω ↦ μ_{ω₀}` of a skew-product measure whose fibres depend
/// only on the zeroth coordinate, over the Markov measure with base `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewMeasure {
    pub base: StationaryVector,
    pub family: Vec<GridMeasure>,
}

fn check_shapes(marginal: &StationaryVector, parts: &[GridMeasure]) -> Result<usize> {
    if parts.len() != marginal.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} fibre measures for {} states",
            parts.len(),
            marginal.len()
        )));
    }
    let n = parts[0].len();
    if parts.iter().any(|p| p.len() != n) {
        return Err(Error::ShapeMismatch("fibre measures on different grids".into()));
    }
    Ok(n)
}

impl ProductMeasure {
    pub fn new(marginal: StationaryVector, disintegration: Vec<GridMeasure>) -> Result<Self> {
        check_shapes(&marginal, &disintegration)?;
        Ok(Self {
            marginal,
            disintegration,
        })
    }

    /// `m ⊗ μ`: every fibre equal to `mu`.
    pub fn product(marginal: &StationaryVector, mu: &GridMeasure) -> Self {
        Self {
            marginal: marginal.clone(),
            disintegration: vec![mu.clone(); marginal.len()],
        }
    }

    pub fn uniform(marginal: &StationaryVector, grid: usize) -> Self {
        Self::product(marginal, &GridMeasure::uniform(grid))
    }

    pub fn states(&self) -> usize {
        self.disintegration.len()
    }

    pub fn grid(&self) -> usize {
        self.disintegration[0].len()
    }

    pub fn fibre(&self, state: usize) -> &GridMeasure {
        &self.disintegration[state]
    }

    /// `max_α TV(self_α, other_α)`.
    pub fn max_tv(&self, other: &ProductMeasure) -> f64 {
        max_fibre_tv(&self.disintegration, &other.disintegration)
    }

    /// `Σ_α m_α Σ_b ν_α(b) φ(α, center_b)`.
    pub fn integrate<F: Fn(usize, f64) -> f64>(&self, phi: F) -> f64 {
        self.disintegration
            .iter()
            .enumerate()
            .map(|(a, mu)| self.marginal[a] * mu.integrate(|x| phi(a, x)))
            .sum()
    }

    pub fn write_csv<W: Write>(&self, out: W, header: &[(&str, String)]) -> io::Result<()> {
        write_fibres_csv(out, &self.disintegration, header)
    }
}

impl SkewMeasure {
    pub fn new(base: StationaryVector, family: Vec<GridMeasure>) -> Result<Self> {
        check_shapes(&base, &family)?;
        Ok(Self { base, family })
    }

    pub fn states(&self) -> usize {
        self.family.len()
    }

    pub fn grid(&self) -> usize {
        self.family[0].len()
    }

    pub fn fibre(&self, state: usize) -> &GridMeasure {
        &self.family[state]
    }

    pub fn max_tv(&self, other: &SkewMeasure) -> f64 {
        max_fibre_tv(&self.family, &other.family)
    }

    pub fn write_csv<W: Write>(&self, out: W, header: &[(&str, String)]) -> io::Result<()> {
        write_fibres_csv(out, &self.family, header)
    }
}

fn max_fibre_tv(a: &[GridMeasure], b: &[GridMeasure]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.tv(y)).fold(0.0, f64::max)
}

/// `# key=value` comment lines, then `state,bin,weight` rows.
fn write_fibres_csv<W: Write>(
    mut out: W,
    fibres: &[GridMeasure],
    header: &[(&str, String)],
) -> io::Result<()> {
    for (key, value) in header {
        writeln!(out, "# {key}={value}")?;
    }
    writeln!(out, "state,bin,weight")?;
    for (state, mu) in fibres.iter().enumerate() {
        for (bin, w) in mu.weights().iter().enumerate() {
            writeln!(out, "{state},{bin},{w:e}")?;
        }
    }
    Ok(())
}

/// A map family with each map's grid pushforward precomputed for one grid
/// size.
#[derive(Debug, Clone)]
pub struct DiscreteFamily {
    family: MapFamily,
    transfers: Vec<GridTransfer>,
    grid: usize,
}

impl DiscreteFamily {
    pub fn new(family: &MapFamily, grid: usize) -> Self {
        let transfers = family
            .iter()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|f| GridTransfer::new(f, grid))
            .collect();
        Self {
            family: family.clone(),
            transfers,
            grid,
        }
    }

    pub fn family(&self) -> &MapFamily {
        &self.family
    }

    pub fn transfer(&self, state: usize) -> &GridTransfer {
        &self.transfers[state]
    }

    pub fn len(&self) -> usize {
        self.transfers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transfers.is_empty()
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    fn check(&self, states: usize, grid: usize, kernel: &FiniteKernel) -> Result<()> {
        if self.len() != states || kernel.size() != states {
            return Err(Error::ShapeMismatch(format!(
                "{} maps, kernel of size {}, measure over {states} states",
                self.len(),
                kernel.size()
            )));
        }
        if self.grid != grid {
            return Err(Error::ShapeMismatch(format!(
                "family discretized on {} bins, measure on {grid}",
                self.grid
            )));
        }
        Ok(())
    }
}

/// `(Pν)_α = Σ_β q(α, β) f_α* ν_β`.
pub fn markov_operator_dual(
    dual: &FiniteKernel,
    family: &DiscreteFamily,
    nu: &ProductMeasure,
) -> Result<ProductMeasure> {
    family.check(nu.states(), nu.grid(), dual)?;
    let n = nu.grid();
    let fibres = (0..nu.states())
        .into_par_iter()
        .map(|a| {
            let mut acc = vec![0.0; n];
            let transfer = family.transfer(a);
            for (b, nu_b) in nu.disintegration.iter().enumerate() {
                let w = dual.get(a, b);
                if w > 0.0 {
                    transfer.accumulate(nu_b.weights(), w, &mut acc);
                }
            }
            GridMeasure::from_weights(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProductMeasure {
        marginal: nu.marginal.clone(),
        disintegration: fibres,
    })
}

/// `(Pν)_β = Σ_α m_α p(α, β) f_β* ν_α / m_β`, read off the skew-chain
/// transition `p̂((α, x), ·) = Σ_β p(α, β) δ_{(β, f_β x)}`.
pub fn markov_operator_direct(
    kernel: &FiniteKernel,
    stationary: &StationaryVector,
    family: &DiscreteFamily,
    nu: &ProductMeasure,
) -> Result<ProductMeasure> {
    family.check(nu.states(), nu.grid(), kernel)?;
    if stationary.len() != kernel.size() {
        return Err(Error::ShapeMismatch("stationary vector size".into()));
    }
    let n = nu.grid();
    let fibres = (0..nu.states())
        .into_par_iter()
        .map(|b| {
            let mass = stationary[b];
            if mass <= 0.0 {
                return Err(Error::ZeroMassState { state: b });
            }
            let mut acc = vec![0.0; n];
            let transfer = family.transfer(b);
            for (a, nu_a) in nu.disintegration.iter().enumerate() {
                let w = stationary[a] * kernel.get(a, b);
                if w > 0.0 {
                    transfer.accumulate(nu_a.weights(), w, &mut acc);
                }
            }
            acc.iter_mut().for_each(|v| *v /= mass);
            GridMeasure::from_weights(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProductMeasure {
        marginal: stationary.clone(),
        disintegration: fibres,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedPoint {
    pub measure: ProductMeasure,
    /// `max_α TV` between the last two iterates.
    pub residual: f64,
    pub iterations: usize,
    pub grid: usize,
}

/// Iterates the direct Markov operator from `init` until the per-state TV
/// step drops below `tol`.
///
/// Failure to converge is reported as [`Error::NoConvergence`] carrying the
/// last iterate and the Cesàro average of all iterates (the meaningful
/// object when iterates circulate, e.g. for rotations).
pub fn fixed_point_stationary(
    kernel: &FiniteKernel,
    stationary: &StationaryVector,
    family: &DiscreteFamily,
    init: &ProductMeasure,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPoint> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be positive")));
    }
    let n = init.grid();
    let k = init.states();
    let mut current = init.clone();
    let mut cesaro = vec![vec![0.0; n]; k];
    let mut residual = f64::INFINITY;
    for iteration in 1..=max_iter {
        let next = markov_operator_direct(kernel, stationary, family, &current)?;
        residual = next.max_tv(&current);
        current = next;
        for (acc, mu) in cesaro.iter_mut().zip(&current.disintegration) {
            acc.iter_mut().zip(mu.weights()).for_each(|(a, w)| *a += w);
        }
        if residual < tol {
            return Ok(FixedPoint {
                measure: current,
                residual,
                iterations: iteration,
                grid: n,
            });
        }
    }
    let cesaro = ProductMeasure {
        marginal: stationary.clone(),
        disintegration: cesaro
            .into_iter()
            .map(GridMeasure::from_weights)
            .collect::<Result<Vec<_>>>()?,
    };
    Err(Error::NoConvergence {
        max_iter,
        residual,
        last: Box::new(current),
        cesaro: Box::new(cesaro),
    })
}

/// `max_α TV(ν_α, Σ_β q(α, β) f_α* ν_β)`; zero exactly on stationary measures.
pub fn stationarity_residual(
    dual: &FiniteKernel,
    family: &DiscreteFamily,
    nu: &ProductMeasure,
) -> Result<f64> {
    Ok(markov_operator_dual(dual, family, nu)?.max_tv(nu))
}

/// `Σ_β q(α, β) f_β* μ_β` for every `α` (the pushforward index is `β`).
pub fn skew_operator(
    dual: &FiniteKernel,
    family: &DiscreteFamily,
    mu: &SkewMeasure,
) -> Result<SkewMeasure> {
    family.check(mu.states(), mu.grid(), dual)?;
    let n = mu.grid();
    let pushed: Vec<GridMeasure> = mu
        .family
        .par_iter()
        .enumerate()
        .map(|(b, mu_b)| family.transfer(b).apply(mu_b))
        .collect();
    let fibres = (0..mu.states())
        .map(|a| GridMeasure::mixture((0..mu.states()).map(|b| (dual.get(a, b), &pushed[b])), n))
        .collect::<Result<Vec<_>>>()?;
    Ok(SkewMeasure {
        base: mu.base.clone(),
        family: fibres,
    })
}

/// `max_α TV(μ_α, Σ_β q(α, β) f_β* μ_β)`; zero exactly on `φ`-invariant
/// measures whose fibres depend only on `ω₀`.
pub fn skew_invariance_residual(
    dual: &FiniteKernel,
    family: &DiscreteFamily,
    mu: &SkewMeasure,
) -> Result<f64> {
    Ok(skew_operator(dual, family, mu)?.max_tv(mu))
}

/// `Π₂* ν = Σ_α m_α ν_α`.
pub fn second_marginal(nu: &ProductMeasure) -> GridMeasure {
    GridMeasure::mixture(
        nu.disintegration
            .iter()
            .enumerate()
            .map(|(a, mu)| (nu.marginal[a], mu)),
        nu.grid(),
    )
    .expect("marginal weights sum to one")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub holds: bool,
    /// Smallest of `Π₂*ν(b) - C μ_α(b)` and `μ_α(b)/C - Π₂*ν(b)` over all
    /// states and bins; negative means violated.
    pub worst_slack: f64,
}

/// Checks `C μ_α(b) <= Π₂*ν(b) <= μ_α(b) / C` for every state and bin, up to
/// [`SANDWICH_SLACK`].
pub fn sandwich_check(nu: &ProductMeasure, mu: &SkewMeasure, constant: f64) -> SandwichReport {
    let marginal = second_marginal(nu);
    let mut worst = f64::INFINITY;
    for fibre in &mu.family {
        for (pi, m) in marginal.weights().iter().zip(fibre.weights()) {
            worst = worst.min(pi - constant * m).min(m / constant - pi);
        }
    }
    SandwichReport {
        holds: worst >= -SANDWICH_SLACK,
        worst_slack: worst,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circle::CircleMap;
    use crate::kernel::{dual_kernel, stationary_distribution};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_product(m: &StationaryVector, n: usize, rng: &mut ChaCha8Rng) -> ProductMeasure {
        let fibres = (0..m.len())
            .map(|_| GridMeasure::from_weights((0..n).map(|_| rng.random::<f64>()).collect()).unwrap())
            .collect();
        ProductMeasure::new(m.clone(), fibres).unwrap()
    }

    fn identity_family(k: usize, n: usize) -> DiscreteFamily {
        DiscreteFamily::new(&MapFamily::new(vec![CircleMap::identity(); k]).unwrap(), n)
    }

    #[test]
    fn identity_family_dual_operator_mixes_fibres() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = FiniteKernel::random_positive(3, &mut rng);
        let m = stationary_distribution(&p).unwrap();
        let q = dual_kernel(&p, &m).unwrap();
        let nu = random_product(&m, 32, &mut rng);
        let out = markov_operator_dual(&q, &identity_family(3, 32), &nu).unwrap();
        for a in 0..3 {
            let expect =
                GridMeasure::mixture((0..3).map(|b| (q.get(a, b), nu.fibre(b))), 32).unwrap();
            assert!(out.fibre(a).tv(&expect) < 1e-15);
        }
    }

    #[test]
    fn single_state_is_plain_pushforward() {
        let m = StationaryVector::uniform(1);
        let q = FiniteKernel::identity(1);
        let f = CircleMap::hyperbolic(2.0, 0.3).unwrap();
        let family = DiscreteFamily::new(&MapFamily::new(vec![f.clone()]).unwrap(), 64);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let nu = random_product(&m, 64, &mut rng);
        let out = markov_operator_dual(&q, &family, &nu).unwrap();
        assert!(out.fibre(0).tv(&crate::grid::pushforward(&f, nu.fibre(0))) < 1e-15);
    }

    #[test]
    fn direct_and_dual_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = FiniteKernel::random_positive(3, &mut rng);
        let m = stationary_distribution(&p).unwrap();
        let q = dual_kernel(&p, &m).unwrap();
        let maps = (0..3)
            .map(|_| CircleMap::hyperbolic(rng.random_range(1.2..3.0), rng.random()).unwrap())
            .collect();
        let family = DiscreteFamily::new(&MapFamily::new(maps).unwrap(), 64);
        let nu = random_product(&m, 64, &mut rng);
        let a = markov_operator_dual(&q, &family, &nu).unwrap();
        let b = markov_operator_direct(&p, &m, &family, &nu).unwrap();
        assert!(a.max_tv(&b) <= 1e-12);
        assert_eq!(b.marginal, m);
    }

    #[test]
    fn common_fixed_point_product_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = FiniteKernel::random_positive(2, &mut rng);
        let m = stationary_distribution(&p).unwrap();
        let n = 64;
        // both maps contract bin 16 into itself around its center
        let center = 16.5 / 64.0;
        let family = DiscreteFamily::new(
            &MapFamily::new(vec![
                CircleMap::hyperbolic(2.0, center).unwrap(),
                CircleMap::hyperbolic(3.0, center).unwrap(),
            ])
            .unwrap(),
            n,
        );
        let nu = ProductMeasure::product(&m, &GridMeasure::point_mass(n, 16));
        let out = markov_operator_direct(&p, &m, &family, &nu).unwrap();
        assert!(out.max_tv(&nu) < 1e-15);
    }

    #[test]
    fn iid_drive_gives_state_independent_fibres() {
        let m = StationaryVector::new(vec![0.3, 0.7]).unwrap();
        let p = FiniteKernel::iid(&m);
        let family = DiscreteFamily::new(
            &MapFamily::new(vec![CircleMap::hyperbolic(2.0, 0.1).unwrap(); 2]).unwrap(),
            32,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let nu = random_product(&m, 32, &mut rng);
        let out = markov_operator_direct(&p, &m, &family, &nu).unwrap();
        assert!(out.fibre(0).tv(out.fibre(1)) < 1e-15);
    }

    #[test]
    fn solver_converges_to_common_attractor() {
        let p = FiniteKernel::new(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let m = stationary_distribution(&p).unwrap();
        let n = 64;
        let family = DiscreteFamily::new(
            &MapFamily::new(vec![
                CircleMap::hyperbolic(2.0, 0.25).unwrap(),
                CircleMap::hyperbolic(1.5, 0.25).unwrap(),
            ])
            .unwrap(),
            n,
        );
        let fp = fixed_point_stationary(&p, &m, &family, &ProductMeasure::uniform(&m, n), 1e-12, 10_000)
            .unwrap();
        assert!(fp.residual < 1e-12);
        // all mass in the two bins adjacent to 0.25
        for a in 0..2 {
            let w = fp.measure.fibre(a).weights();
            assert!(w[15] + w[16] > 1.0 - 1e-10);
        }
        let q = dual_kernel(&p, &m).unwrap();
        assert!(stationarity_residual(&q, &family, &fp.measure).unwrap() < 1e-11);
    }

    #[test]
    fn rotation_cesaro_average_is_near_uniform() {
        let m = StationaryVector::new(vec![0.5, 0.5]).unwrap();
        let p = FiniteKernel::iid(&m);
        let n = 128;
        let family = DiscreteFamily::new(
            &MapFamily::new(vec![
                CircleMap::rotation(0.381_966_011_250_105),
                CircleMap::rotation(0.381_966_011_250_105),
            ])
            .unwrap(),
            n,
        );
        let init = ProductMeasure::product(&m, &GridMeasure::point_mass(n, 0));
        let err = fixed_point_stationary(&p, &m, &family, &init, 1e-14, 2000).unwrap_err();
        let Error::NoConvergence { cesaro, .. } = err else {
            panic!("rotation iterates should not settle");
        };
        let uniform = GridMeasure::uniform(n);
        for a in 0..2 {
            let tv = cesaro.fibre(a).tv(&uniform);
            assert!(tv <= 4.0 / n as f64, "{tv}");
        }
    }

    #[test]
    fn contracting_family_converges_quickly() {
        let p = FiniteKernel::new(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let m = stationary_distribution(&p).unwrap();
        let n = 256;
        let family = DiscreteFamily::new(
            &MapFamily::new(vec![
                CircleMap::hyperbolic(2.0, 0.0).unwrap(),
                CircleMap::hyperbolic(2.0, 0.25).unwrap(),
            ])
            .unwrap(),
            n,
        );
        let fp = fixed_point_stationary(&p, &m, &family, &ProductMeasure::uniform(&m, n), 1e-10, 10_000)
            .unwrap();
        assert!(fp.residual < 1e-10 && fp.iterations < 10_000);
    }

    #[test]
    fn arbitrary_measure_is_not_stationary() {
        let p = FiniteKernel::new(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let m = stationary_distribution(&p).unwrap();
        let q = dual_kernel(&p, &m).unwrap();
        let family = DiscreteFamily::new(
            &MapFamily::new(vec![
                CircleMap::hyperbolic(2.0, 0.0).unwrap(),
                CircleMap::hyperbolic(2.0, 0.25).unwrap(),
            ])
            .unwrap(),
            64,
        );
        let nu = ProductMeasure::uniform(&m, 64);
        assert!(stationarity_residual(&q, &family, &nu).unwrap() > 0.1);
        let mu = SkewMeasure::new(m.clone(), nu.disintegration.clone()).unwrap();
        assert!(skew_invariance_residual(&q, &family, &mu).unwrap() > 0.1);
    }

    #[test]
    fn identity_family_skew_condition_is_mixing() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = FiniteKernel::random_positive(3, &mut rng);
        let m = stationary_distribution(&p).unwrap();
        let q = dual_kernel(&p, &m).unwrap();
        let common = GridMeasure::from_weights((0..16).map(|_| rng.random::<f64>()).collect()).unwrap();
        let mu = SkewMeasure::new(m.clone(), vec![common; 3]).unwrap();
        assert!(skew_invariance_residual(&q, &identity_family(3, 16), &mu).unwrap() < 1e-15);
    }

    #[test]
    fn second_marginal_examples() {
        let m = StationaryVector::new(vec![0.25, 0.75]).unwrap();
        let a = GridMeasure::point_mass(4, 0);
        let b = GridMeasure::point_mass(4, 2);
        let nu = ProductMeasure::new(m.clone(), vec![a.clone(), b]).unwrap();
        assert_eq!(second_marginal(&nu).weights(), &[0.25, 0.0, 0.75, 0.0]);
        let same = ProductMeasure::product(&m, &a);
        assert_eq!(second_marginal(&same), a);
    }

    #[test]
    fn sandwich_for_product_case_is_equality() {
        let m = StationaryVector::new(vec![0.4, 0.6]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let nu = random_product(&m, 16, &mut rng);
        let pi = second_marginal(&nu);
        let mu = SkewMeasure::new(m.clone(), vec![pi.clone(), pi]).unwrap();
        let report = sandwich_check(&nu, &mu, 1.0);
        assert!(report.holds && report.worst_slack.abs() <= 1e-12);

        let mut corrupted = mu.clone();
        corrupted.family[0] = GridMeasure::point_mass(16, 3);
        assert!(!sandwich_check(&nu, &corrupted, 1.0).holds);
    }

    #[test]
    fn shape_mismatches_are_errors() {
        let m = StationaryVector::uniform(2);
        assert!(ProductMeasure::new(m.clone(), vec![GridMeasure::uniform(4)]).is_err());
        assert!(
            ProductMeasure::new(m.clone(), vec![GridMeasure::uniform(4), GridMeasure::uniform(8)])
                .is_err()
        );
        let q = FiniteKernel::identity(2);
        let nu = ProductMeasure::uniform(&m, 8);
        assert!(matches!(
            markov_operator_dual(&q, &identity_family(2, 16), &nu),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn csv_layout() {
        let m = StationaryVector::uniform(2);
        let nu = ProductMeasure::uniform(&m, 2);
        let mut buf = Vec::new();
        nu.write_csv(&mut buf, &[("grid", "2".into())]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "# grid=2\nstate,bin,weight\n0,0,5e-1\n0,1,5e-1\n1,0,5e-1\n1,1,5e-1\n");
    }
}
