//! Exact and approximate inverses of covariance matrices for two-way crossed
//! random-effects models with unequal cell sizes.
//!
//! The workhorse is [`CellBlockMatrix`], a compressed representation of
//! `n × n` matrices built from per-cell identity and all-ones blocks. Sums,
//! products and inverses of such matrices cost a polynomial in the number of
//! cells `gh`, independent of the cell sizes.

pub mod covariance;
pub mod dense;
pub mod design;
pub mod error;
pub mod inverse;
pub mod kr;
pub mod sim;
pub mod spectral;
pub mod verify;

pub use covariance::VarianceComponents;
pub use dense::{khatri_rao, DenseMatrix};
pub use design::Design;
pub use error::{Error, Result};
pub use inverse::{InverseEstimate, Method};
pub use kr::{CellBlockMatrix, Norm, Side};
pub use sim::{SimConfig, SimReport};
pub use spectral::{eigenvalue_spectrum, Spectrum};
