//! Adaptive transport maps.
//!
//! Joint and conditional densities are estimated from samples by fitting a
//! monotone lower-triangular map `S` that pushes the data onto a standard
//! normal reference. Each component is parameterized as the rectification of
//! a sparse linear expansion `f` in tensorized Hermite functions,
//!
//! ```text
//! S^k(x) = f(x_<k, 0) + ∫_0^{x_k} g(∂_k f(x_<k, t)) dt,   g(ξ) = log2(1 + 2^ξ),
//! ```
//!
//! which makes every component strictly increasing in its last variable for
//! any choice of coefficients. Features are selected greedily from the reduced
//! margin of a downward-closed multi-index set and the number of features is
//! chosen by K-fold cross-validation.
//!
//! The crate is organized bottom-up:
//!
//! - [`multiindex`]: multi-indices, downward-closed sets, margins.
//! - [`basis`]: univariate feature families and tensorized expansions.
//! - [`quadrature`]: adaptive Gauss–Kronrod integration.
//! - [`rectifier`]: the soft-plus rectifier and monotone map components.
//! - [`objective`]: the empirical KL objective and its coefficient gradient.
//! - [`optimizer`]: BFGS with a Wolfe line search.
//! - [`atm`]: greedy feature selection, cross-validation and map assembly.
//! - [`density`]: pullback densities, likelihood scoring, inversion, sampling.
//! - [`data`]: CSV ingestion, standardization, folds and synthetic targets.

pub mod atm;
pub mod basis;
pub mod data;
pub mod density;
mod error;
pub mod multiindex;
pub mod objective;
pub mod optimizer;
pub mod quadrature;
pub mod rectifier;

pub use atm::{AtmConfig, ComposedMap, FitTrace, TransportModel, TriangularMap};
pub use basis::{FeatureExpansion, UnivariateFamily};
pub use data::{Dataset, SampleBatch, Standardization};
pub use error::{Error, Result};
pub use multiindex::{DownwardClosedSet, MultiIndex};
pub use objective::ObjectiveConfig;
pub use optimizer::{OptimOptions, OptimResult};
pub use rectifier::{MapComponent, Rectifier};
