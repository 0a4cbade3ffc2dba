//! The bijection between stationary measures of the skew chain and
//! skew-product invariant measures whose fibres depend only on `ω₀`:
//!
//! * `theta`: `ν_α = f_α* μ_α`
//! * `xi`:    `μ_α = Σ_β q(α, β) ν_β`
//!
//! Round trips are the identity only on those two sets.

use crate::error::{Error, Result};
use crate::grid::GridMeasure;
use crate::kernel::FiniteKernel;
use crate::measure::{DiscreteFamily, ProductMeasure, SkewMeasure};

pub fn theta(mu: &SkewMeasure, family: &DiscreteFamily) -> Result<ProductMeasure> {
    if family.len() != mu.states() || family.grid() != mu.grid() {
        return Err(Error::ShapeMismatch(format!(
            "{} maps on {} bins against {} fibres on {} bins",
            family.len(),
            family.grid(),
            mu.states(),
            mu.grid()
        )));
    }
    let fibres = mu
        .family
        .iter()
        .enumerate()
        .map(|(a, m)| family.transfer(a).apply(m))
        .collect();
    ProductMeasure::new(mu.base.clone(), fibres)
}

pub fn xi(nu: &ProductMeasure, dual: &FiniteKernel) -> Result<SkewMeasure> {
    if dual.size() != nu.states() {
        return Err(Error::ShapeMismatch(format!(
            "kernel of size {} against {} fibres",
            dual.size(),
            nu.states()
        )));
    }
    let n = nu.grid();
    let fibres = (0..nu.states())
        .map(|a| {
            GridMeasure::mixture(
                dual.row(a).iter().copied().zip(&nu.disintegration),
                n,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    SkewMeasure::new(nu.marginal.clone(), fibres)
}

/// `(max_α TV(Θ Ξ ν, ν), max_α TV(Ξ Θ μ̂, μ̂))`.
pub fn roundtrip_residuals(
    nu: &ProductMeasure,
    mu: &SkewMeasure,
    family: &DiscreteFamily,
    dual: &FiniteKernel,
) -> Result<(f64, f64)> {
    let r1 = theta(&xi(nu, dual)?, family)?.max_tv(nu);
    let r2 = xi(&theta(mu, family)?, dual)?.max_tv(mu);
    Ok((r1, r2))
}
