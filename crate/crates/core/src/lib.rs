//! Random dynamical systems on the circle driven by a finite Markov chain:
//! stationary measures of the skew chain, invariant measures of the skew
//! product over the driving shift, and the correspondence between them.

pub mod circle;
pub mod correspondence;
pub mod error;
pub mod grid;
pub mod kernel;
pub mod measure;
pub mod sync;
pub mod trajectory;

pub use circle::{Arc, CircleMap, CirclePoint, MapFamily, PiecewiseLinear, Projective};
pub use error::{Error, Result};
pub use grid::{pushforward, GridMeasure, GridTransfer};
pub use kernel::{
    boundedness_constant, dual_kernel, stationary_distribution, BoundedPair, FiniteKernel,
    StationaryVector,
};
pub use measure::{DiscreteFamily, ProductMeasure, SkewMeasure};
